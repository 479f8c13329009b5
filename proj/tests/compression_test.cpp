#include "retf/compression.hpp"

#include "reference_model.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace retf;

namespace {

ModelConfig baseline_layers(std::size_t layers) {
  ModelConfig cfg = *preset("paper-baseline");
  cfg.n_layers = layers;
  return cfg;
}

double max_logit_diff(const ParamSet& a, const ParamSet& b, const Batch& batch) {
  const auto ta = model_forward(a, batch);
  const auto tb = model_forward(b, batch);
  double worst = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    worst = std::max(worst, (ta[i].logits - tb[i].logits).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace

TEST_CASE("reduce_config") {
  const ModelConfig reduced = reduce_config(*preset("paper-baseline"));
  CHECK(reduced == *preset("paper-reduced"));
  CHECK(reduce_config(*preset("paper-baseline"), 1) == *preset("paper-baseline"));

  ModelConfig odd = *preset("paper-baseline");
  odd.d_model = 30;
  odd.n_heads = 2;
  CHECK_THROWS_AS(reduce_config(odd, 4), std::invalid_argument);
  CHECK_THROWS_AS(reduce_config(*preset("paper-baseline"), 16), std::invalid_argument);
  CHECK_THROWS_AS(reduce_config(*preset("paper-baseline"), 0), std::invalid_argument);
}

TEST_CASE("prune_magnitude on a forced example") {
  ModelConfig cfg;
  cfg.vocab_size = 1;
  cfg.max_seq_len = 1;
  cfg.d_model = 2;
  ParamSet p = zero_params(cfg);
  p.tok_emb << 0.1, -0.5;
  p.pos_emb << 0.2, 0.9;
  auto [pruned, report] = prune_magnitude(p, 0.3);
  Matrix tok(1, 2);
  tok << 0.0, -0.5;
  Matrix pos(1, 2);
  pos << 0.0, 0.9;
  CHECK(pruned.tok_emb == tok);
  CHECK(pruned.pos_emb == pos);
  CHECK(report.sparsity == 0.5);
  CHECK(report.params_before == report.params_after);
  CHECK(report.max_error == 0.2);
}

TEST_CASE("prune_magnitude thresholds") {
  ParamSet p = init_params(*preset("tiny"), 5);
  p.layers[0].w1(0, 0) = 0.0;
  p.layers[0].w1(1, 1) = 0.0;
  auto [same, zero_report] = prune_magnitude(p, 0.0);
  CHECK(same == p);
  CHECK(zero_report.sparsity == doctest::Approx(2.0 / 188.0));

  auto [gone, all_report] = prune_magnitude(p, std::numeric_limits<double>::infinity());
  CHECK(all_report.sparsity == 1.0);
  gone.for_each_tensor([](const std::string&, const Matrix& m) { CHECK(m.isZero(0.0)); });
  CHECK(prune_magnitude(p, 0.06).second.sparsity == 1.0);

  double previous = 0.0;
  for (double t = 0.0; t <= 0.06; t += 0.005) {
    const double s = prune_magnitude(p, t).second.sparsity;
    CHECK(s >= previous);
    previous = s;
  }
  CHECK_THROWS_AS(prune_magnitude(p, -0.1), std::invalid_argument);
}

TEST_CASE("head_importance") {
  ModelConfig cfg = *preset("tiny");
  cfg.d_model = 8;
  cfg.n_heads = 4;
  ParamSet p = init_params(cfg, 3);
  Matrix& wo = p.layers[0].wo;

  wo.middleRows(4, 2).setZero();
  CHECK(head_importance(p, 0)[2] == 0.0);

  for (Eigen::Index h = 0; h < 4; ++h) wo.middleRows(2 * h, 2) = wo.topRows(2);
  const std::vector<double> same = head_importance(p, 0);
  for (double s : same) CHECK(s == same[0]);

  // Block norms 1..4 via a 3-4-5 style construction: sqrt(a^2 + b^2) with
  // the values written in two distinct rows.
  wo.setZero();
  const double entries[4][2] = {{0.6, 0.8}, {1.2, 1.6}, {1.8, 2.4}, {2.4, 3.2}};
  for (Eigen::Index h = 0; h < 4; ++h) {
    wo(2 * h, 0) = entries[h][0];
    wo(2 * h + 1, 5) = entries[h][1];
  }
  const std::vector<double> scores = head_importance(p, 0);
  for (std::size_t h = 0; h < 4; ++h) {
    const double oracle = std::sqrt(entries[h][0] * entries[h][0] + entries[h][1] * entries[h][1]);
    CHECK(scores[h] == doctest::Approx(oracle).epsilon(1e-15));
    CHECK(scores[h] == doctest::Approx(static_cast<double>(h + 1)).epsilon(1e-15));
  }
  CHECK_THROWS_AS(head_importance(p, 1), std::out_of_range);
}

TEST_CASE("prune_heads keeping every head is an identity") {
  const ParamSet p = init_params(*preset("paper-baseline"), 1);
  const PrunedModel all = prune_heads(p, 0, {0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(all.params == p);
  CHECK(all.config == p.config);
  const Batch batch = synth_copy_batch(4, 2, 10, 3990).inputs;
  CHECK(max_logit_diff(all.params, p, batch) == 0.0);
}

TEST_CASE("prune_heads accounting and forward behaviour") {
  const ParamSet p = init_params(*preset("paper-baseline"), 2);
  const PrunedModel half = prune_heads(p, 0, {0, 1, 2, 3});
  CHECK(param_count_enumerated(p) - param_count_enumerated(half.params) == 2048);
  CHECK(half.report.params_before - half.report.params_after == 2048);
  CHECK(half.config.n_heads == 4);
  CHECK(half.config.head_dim() == 4);
  CHECK(half.config.attention_width(0) == 16);
  CHECK(param_count(half.config) == param_count_enumerated(half.params));

  // The pruned layout still agrees with the straight-loop reference.
  const Sequence tokens = {1, 2, 3, 4, 5};
  const Matrix logits = model_forward(half.params, {tokens}).front().logits;
  const double scale = logits.cwiseAbs().maxCoeff();
  CHECK(reference::max_abs_diff(reference::logits(half.params, tokens), logits) <= 1e-12 * scale);

  CHECK_THROWS_AS(prune_heads(p, 0, {}), std::invalid_argument);
  CHECK_THROWS_AS(prune_heads(p, 0, {8}), std::out_of_range);
  CHECK_THROWS_AS(prune_heads(p, 1, {0}), std::out_of_range);
}

TEST_CASE("dropping a head with a zero output block changes nothing") {
  ParamSet p = init_params(*preset("paper-baseline"), 3, 1.0);
  p.layers[0].wo.middleRows(5 * 4, 4).setZero();
  const PrunedModel pruned = prune_heads(p, 0, {0, 1, 2, 3, 4, 6, 7});
  const Batch batch = synth_copy_batch(8, 3, 10, 3990).inputs;
  CHECK(max_logit_diff(pruned.params, p, batch) <= 1e-12);
}

TEST_CASE("prune_heads drops k * 4 * d * dh for any k") {
  const ParamSet p = init_params(*preset("paper-baseline"), 4);
  for (std::size_t keep = 1; keep <= 8; ++keep) {
    std::vector<std::size_t> heads;
    for (std::size_t h = 0; h < keep; ++h) heads.push_back(7 - h);
    const PrunedModel r = prune_heads(p, 0, heads);
    CHECK(param_count_enumerated(p) - param_count_enumerated(r.params) == (8 - keep) * 4 * 32 * 4);
  }
}

TEST_CASE("prune_layers") {
  const ParamSet p = init_params(baseline_layers(2), 5);
  const PrunedModel same = prune_layers(p, {0, 1});
  CHECK(same.params == p);

  const PrunedModel one = prune_layers(p, {1});
  CHECK(param_count_enumerated(p) - param_count_enumerated(one.params) == 12288);
  CHECK(one.config.n_layers == 1);
  CHECK(one.params.layers[0].wq == p.layers[1].wq);

  const ParamSet single = init_params(baseline_layers(1), 6);
  const PrunedModel none = prune_layers(single, {});
  CHECK(none.config.n_layers == 0);
  const Sequence tokens = {9, 8, 7};
  CHECK(model_forward(none.params, {tokens}).front().logits ==
        matmul(embed(single, tokens), single.tok_emb.transpose()));

  CHECK_THROWS_AS(prune_layers(p, {2}), std::out_of_range);
  CHECK_THROWS_AS(prune_layers(p, {1, 0}), std::invalid_argument);
}

TEST_CASE("prune_layers keeps per-layer head counts") {
  const ParamSet p = init_params(baseline_layers(3), 7);
  const PrunedModel a = prune_heads(p, 1, {0, 1});
  CHECK(a.config.layer_heads == std::vector<std::size_t>{8, 2, 8});
  const PrunedModel b = prune_layers(a.params, {1, 2});
  CHECK(b.config.layer_heads == std::vector<std::size_t>{2, 8});
  CHECK(param_count(b.config) == param_count_enumerated(b.params));
  const PrunedModel c = prune_layers(a.params, {1});
  CHECK(c.config.n_heads == 2);
  CHECK(c.config.d_head == 4);
  CHECK(c.config.layer_heads.empty());
}

TEST_CASE("quantize_tensor examples") {
  Matrix one(1, 1);
  one << 1.0;
  const QuantizedTensor q1 = quantize_tensor(one);
  CHECK(q1.scale == 1.0 / 127.0);
  CHECK(q1.values(0, 0) == 127);
  CHECK(dequantize(q1)(0, 0) == 1.0);

  const QuantizedTensor z = quantize_tensor(Matrix::Zero(2, 3));
  CHECK(z.scale == 1.0);
  CHECK((z.values.array() == 0).all());
  CHECK(dequantize(z).isZero(0.0));

  Matrix two(1, 2);
  two << -2.0, 1.0;
  const QuantizedTensor q2 = quantize_tensor(two);
  // m / scale = 1.0 / (2/127) = 63.5 rounds away from zero to 64.
  CHECK(q2.scale == 2.0 / 127.0);
  CHECK(q2.values(0, 0) == -127);
  CHECK(q2.values(0, 1) == 64);
  const Matrix back = dequantize(q2);
  CHECK(back(0, 0) == -2.0);
  CHECK(back(0, 1) == doctest::Approx(128.0 / 127.0).epsilon(1e-15));
  CHECK(back(0, 1) == doctest::Approx(1.007874).epsilon(1e-6));

  CHECK_THROWS_AS(quantize_tensor(one, 4), std::invalid_argument);
}

TEST_CASE("quantization error bound and idempotence") {
  RngState rng{123};
  for (int trial = 0; trial < 50; ++trial) {
    const auto rows = static_cast<Eigen::Index>(1 + rng.below(20));
    const auto cols = static_cast<Eigen::Index>(1 + rng.below(20));
    const double spread = std::pow(10.0, rng.uniform(-4.0, 3.0));
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-spread, spread);
    const QuantizedTensor q = quantize_tensor(m);
    CHECK(q.values.minCoeff() >= -127);
    CHECK(q.scale > 0.0);
    const Matrix back = dequantize(q);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      CHECK(std::abs(back.data()[i] - m.data()[i]) <= q.scale / 2.0);
    }
    CHECK(quantize_tensor(back) == q);
  }
}

TEST_CASE("quantized model storage") {
  const ParamSet base = init_params(*preset("paper-baseline"), 0);
  CHECK(base.tensor_count() == 8);
  CHECK(quantized_memory_bytes(base) == 140352);

  ModelConfig smallest;
  CHECK(quantized_memory_bytes(zero_params(smallest)) == 18);

  const QuantizedModel q = quantize_model(base);
  const CompressionReport r = quantization_report(base, q);
  CHECK(r.bytes_before == 1122304);
  CHECK(r.bytes_after == 140352);
  CHECK(r.bytes_after < r.bytes_before);
  CHECK(r.max_error <= 0.05 / 127.0 / 2.0 * 1.0000001);

  const ParamSet restored = dequantize_model(q);
  CHECK(restored.config == base.config);
  CHECK((restored.tok_emb - base.tok_emb).cwiseAbs().maxCoeff() <= q.tensors[0].scale / 2.0);
}
