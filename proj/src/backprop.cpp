#include "retf/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace retf {

namespace {

void accumulate_bias(Matrix& grad, const Matrix& upstream) {
  if (grad.size() == 0) return;
  grad.row(0) += upstream.colwise().sum();
}

// dLoss/dlogits of the mean cross-entropy, already divided by the number of
// positions and by `batch_scale`.
Matrix cross_entropy_grad(const Matrix& logits, const Sequence& targets, double batch_scale) {
  Matrix g = softmax_rows(logits);
  for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, targets[static_cast<std::size_t>(i)]) -= 1.0;
  g /= static_cast<double>(logits.rows()) * batch_scale;
  return g;
}

// Backward pass through one layer; returns dLoss/dx for the layer input.
Matrix layer_backward(const ParamSet& p, std::size_t l, const Matrix& x, const LayerTrace& t,
                      const Matrix& d_out, LayerParams& g) {
  const ModelConfig& cfg = p.config;
  const LayerParams& w = p.layers[l];

  // FFN: out = relu(a W1 + b1) W2 + b2, a = attention output.
  g.w2 += matmul(t.ffn_hidden.transpose(), d_out);
  accumulate_bias(g.b2, d_out);
  Matrix d_hidden = matmul_transposed(d_out, w.w2);
  d_hidden = d_hidden.cwiseProduct((t.ffn_hidden.array() > 0.0).cast<double>().matrix());
  g.w1 += matmul(t.attn_out.transpose(), d_hidden);
  accumulate_bias(g.b1, d_hidden);
  const Matrix d_attn = matmul_transposed(d_hidden, w.w1);

  // Output projection: attn = concat Wo + bo.
  const std::size_t heads = cfg.heads(l);
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const double root_dh = std::sqrt(static_cast<double>(dh));
  const Eigen::Index n = x.rows();
  Matrix concat(n, t.v.cols());
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
    concat.middleCols(c0, dh) = matmul(t.weights[h], t.v.middleCols(c0, dh));
  }
  g.wo += matmul(concat.transpose(), d_attn);
  accumulate_bias(g.bo, d_attn);
  const Matrix d_concat = matmul_transposed(d_attn, w.wo);

  Matrix dq(n, t.q.cols());
  Matrix dk(n, t.k.cols());
  Matrix dv(n, t.v.cols());
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
    const Matrix& a = t.weights[h];
    const Matrix dc = d_concat.middleCols(c0, dh);
    const Matrix vh = t.v.middleCols(c0, dh);
    const Matrix d_weights = matmul_transposed(dc, vh);
    dv.middleCols(c0, dh) = matmul(a.transpose(), dc);
    // Softmax Jacobian, row by row.
    Matrix d_scores = a.cwiseProduct(d_weights);
    const Eigen::VectorXd row_dot = d_scores.rowwise().sum();
    d_scores -= a.cwiseProduct(row_dot.replicate(1, a.cols()));
    d_scores /= root_dh;
    dq.middleCols(c0, dh) = matmul(d_scores, t.k.middleCols(c0, dh));
    dk.middleCols(c0, dh) = matmul(d_scores.transpose(), t.q.middleCols(c0, dh));
  }
  g.wq += matmul(x.transpose(), dq);
  g.wk += matmul(x.transpose(), dk);
  g.wv += matmul(x.transpose(), dv);
  accumulate_bias(g.bq, dq);
  accumulate_bias(g.bk, dk);
  accumulate_bias(g.bv, dv);

  Matrix dx = matmul_transposed(dq, w.wq);
  dx += matmul_transposed(dk, w.wk);
  dx += matmul_transposed(dv, w.wv);
  return dx;
}

}  // namespace

LossAndGradient loss_and_gradient(const ParamSet& p, const Batch& inputs, const Batch& targets) {
  if (inputs.empty()) throw std::invalid_argument("loss_and_gradient: empty batch");
  if (inputs.size() != targets.size()) {
    throw std::invalid_argument("loss_and_gradient: inputs and targets differ in batch size");
  }
  LossAndGradient out;
  out.grad = zero_params(p.config);
  const auto batch = static_cast<double>(inputs.size());

  for (std::size_t b = 0; b < inputs.size(); ++b) {
    if (inputs[b].size() != targets[b].size()) {
      throw std::invalid_argument("loss_and_gradient: sequence " + std::to_string(b) +
                                  " has mismatched target length");
    }
    const ForwardTrace trace = sequence_forward(p, inputs[b]);
    out.loss += cross_entropy(trace.logits, targets[b]);

    // Tied output: logits = x_final tok_emb^T.
    const Matrix& x_final =
        trace.layers.empty() ? trace.embedded : trace.layers.back().ffn_out;
    const Matrix d_logits = cross_entropy_grad(trace.logits, targets[b], batch);
    out.grad.tok_emb += matmul(d_logits.transpose(), x_final);
    Matrix dx = matmul(d_logits, p.tok_emb);

    for (std::size_t l = p.layers.size(); l-- > 0;) {
      const Matrix& x_in = l == 0 ? trace.embedded : trace.layers[l - 1].ffn_out;
      dx = layer_backward(p, l, x_in, trace.layers[l], dx, out.grad.layers[l]);
    }

    for (std::size_t i = 0; i < inputs[b].size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      out.grad.tok_emb.row(static_cast<Eigen::Index>(inputs[b][i])) += dx.row(row);
      out.grad.pos_emb.row(row) += dx.row(row);
    }
  }
  out.loss /= batch;
  return out;
}

TrainStepResult train_step(ParamSet p, const Batch& inputs, const Batch& targets, double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("train_step: learning rate must be >= 0");
  LossAndGradient lg = loss_and_gradient(p, inputs, targets);
  if (lr > 0.0) {
    std::vector<Matrix*> grads;
    lg.grad.for_each_tensor([&](const std::string&, Matrix& g) { grads.push_back(&g); });
    std::size_t i = 0;
    p.for_each_tensor([&](const std::string&, Matrix& w) { w -= lr * *grads[i++]; });
  }
  return {std::move(p), lg.loss};
}

double grad_check(const ModelConfig& cfg, std::uint64_t seed, double eps, std::size_t max_params) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be > 0");
  const std::size_t count = param_count(cfg);
  if (count > max_params) {
    throw std::invalid_argument("grad_check: " + std::to_string(count) +
                                " parameters is too many to finite-difference (limit " +
                                std::to_string(max_params) + "); use a smaller config");
  }
  ParamSet p = init_params(cfg, seed, kGradCheckScale);
  const std::size_t vocab = std::max<std::size_t>(cfg.vocab_size, 2);
  const CopyBatch data = synth_copy_batch(seed + 1, 2, cfg.max_seq_len, vocab);
  Batch inputs = data.inputs;
  Batch targets = data.targets;
  // A vocabulary of one token leaves a single valid id.
  if (cfg.vocab_size == 1) {
    for (Sequence& s : inputs) std::fill(s.begin(), s.end(), 0);
    targets = inputs;
  }

  const LossAndGradient analytic = loss_and_gradient(p, inputs, targets);
  std::vector<const Matrix*> grads;
  analytic.grad.for_each_tensor([&](const std::string&, const Matrix& g) { grads.push_back(&g); });

  std::vector<Matrix*> weights;
  p.for_each_tensor([&](const std::string&, Matrix& w) { weights.push_back(&w); });

  double worst = 0.0;
  for (std::size_t t = 0; t < weights.size(); ++t) {
    Matrix& w = *weights[t];
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + eps;
      const double up = batch_loss(p, inputs, targets);
      w.data()[i] = saved - eps;
      const double down = batch_loss(p, inputs, targets);
      w.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double exact = grads[t]->data()[i];
      const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(exact - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace retf
