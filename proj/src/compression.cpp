#include "retf/compression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace retf {

namespace {

constexpr double kQuantMax = 127.0;

std::size_t float_bytes(std::size_t params) { return params * sizeof(double); }

// Collapses per-layer head counts back to the plain form whenever possible.
void normalize_heads(ModelConfig& cfg, std::size_t head_dim) {
  if (cfg.layer_heads.empty()) {
    cfg.layer_heads.assign(cfg.n_layers, cfg.n_heads);
  }
  cfg.d_head = head_dim;
  if (cfg.layer_heads.empty()) {
    // L = 0: nothing to describe.
  } else if (std::all_of(cfg.layer_heads.begin(), cfg.layer_heads.end(),
                         [&](std::size_t h) { return h == cfg.layer_heads.front(); })) {
    cfg.n_heads = cfg.layer_heads.front();
    cfg.layer_heads.clear();
  } else {
    cfg.n_heads = *std::max_element(cfg.layer_heads.begin(), cfg.layer_heads.end());
  }
  if (cfg.layer_heads.empty() && cfg.n_heads * head_dim == cfg.d_model) cfg.d_head = 0;
}

Matrix gather_cols(const Matrix& m, const std::vector<std::size_t>& heads, Eigen::Index dh) {
  if (m.size() == 0) return m;
  Matrix out(m.rows(), static_cast<Eigen::Index>(heads.size()) * dh);
  for (std::size_t i = 0; i < heads.size(); ++i) {
    out.middleCols(static_cast<Eigen::Index>(i) * dh, dh) =
        m.middleCols(static_cast<Eigen::Index>(heads[i]) * dh, dh);
  }
  return out;
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& heads, Eigen::Index dh) {
  Matrix out(static_cast<Eigen::Index>(heads.size()) * dh, m.cols());
  for (std::size_t i = 0; i < heads.size(); ++i) {
    out.middleRows(static_cast<Eigen::Index>(i) * dh, dh) =
        m.middleRows(static_cast<Eigen::Index>(heads[i]) * dh, dh);
  }
  return out;
}

CompressionReport structural_report(std::string pass, const ParamSet& before,
                                    const ParamSet& after) {
  CompressionReport r;
  r.pass = std::move(pass);
  r.params_before = param_count_enumerated(before);
  r.params_after = param_count_enumerated(after);
  r.bytes_before = float_bytes(r.params_before);
  r.bytes_after = float_bytes(r.params_after);
  return r;
}

}  // namespace

ModelConfig reduce_config(const ModelConfig& cfg, std::size_t factor) {
  cfg.validate();
  if (factor == 0) throw std::invalid_argument("reduce_config: factor must be >= 1");
  if (cfg.is_pruned()) {
    throw std::invalid_argument("reduce_config: config has pruned heads; reduce the original");
  }
  for (auto [value, key] : {std::pair{cfg.d_model, "d_model"}, std::pair{cfg.n_heads, "n_heads"},
                            std::pair{cfg.d_ff, "d_ff"}}) {
    if (value % factor != 0) {
      throw std::invalid_argument(std::string("reduce_config: ") + key + "=" +
                                  std::to_string(value) + " is not divisible by " +
                                  std::to_string(factor));
    }
  }
  ModelConfig out = cfg;
  out.d_model /= factor;
  out.n_heads /= factor;
  out.d_ff /= factor;
  out.validate();
  return out;
}

std::pair<ParamSet, CompressionReport> prune_magnitude(const ParamSet& p, double threshold) {
  if (!(threshold >= 0.0)) {
    throw std::invalid_argument("prune_magnitude: threshold must be non-negative");
  }
  ParamSet out = p;
  std::size_t zeros = 0;
  std::size_t total = 0;
  double max_error = 0.0;
  out.for_each_tensor([&](const std::string&, Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double& w = m.data()[i];
      if (std::abs(w) < threshold) {
        max_error = std::max(max_error, std::abs(w));
        w = 0.0;
      }
      if (w == 0.0) ++zeros;
    }
    total += static_cast<std::size_t>(m.size());
  });
  CompressionReport r = structural_report("prune-magnitude", p, out);
  r.sparsity = total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
  r.max_error = max_error;
  return {std::move(out), r};
}

std::vector<double> head_importance(const ParamSet& p, std::size_t layer) {
  if (layer >= p.layers.size()) {
    throw std::out_of_range("head_importance: layer " + std::to_string(layer) +
                            " out of range (model has " + std::to_string(p.layers.size()) +
                            " layers)");
  }
  const auto dh = static_cast<Eigen::Index>(p.config.head_dim());
  const Matrix& wo = p.layers[layer].wo;
  std::vector<double> scores(p.config.heads(layer));
  for (std::size_t h = 0; h < scores.size(); ++h) {
    scores[h] = wo.middleRows(static_cast<Eigen::Index>(h) * dh, dh).norm();
  }
  return scores;
}

PrunedModel prune_heads(const ParamSet& p, std::size_t layer,
                        const std::vector<std::size_t>& keep) {
  if (layer >= p.layers.size()) {
    throw std::out_of_range("prune_heads: layer " + std::to_string(layer) + " out of range");
  }
  if (keep.empty()) throw std::invalid_argument("prune_heads: keep set is empty");
  const std::size_t heads = p.config.heads(layer);
  std::vector<std::size_t> sorted = keep;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw std::invalid_argument("prune_heads: duplicate head index");
  }
  if (sorted.back() >= heads) {
    throw std::out_of_range("prune_heads: head " + std::to_string(sorted.back()) +
                            " out of range (layer has " + std::to_string(heads) + " heads)");
  }

  const std::size_t head_dim = p.config.head_dim();
  const auto dh = static_cast<Eigen::Index>(head_dim);
  PrunedModel out;
  out.params = p;
  LayerParams& w = out.params.layers[layer];
  w.wq = gather_cols(w.wq, sorted, dh);
  w.wk = gather_cols(w.wk, sorted, dh);
  w.wv = gather_cols(w.wv, sorted, dh);
  w.bq = gather_cols(w.bq, sorted, dh);
  w.bk = gather_cols(w.bk, sorted, dh);
  w.bv = gather_cols(w.bv, sorted, dh);
  w.wo = gather_rows(w.wo, sorted, dh);

  ModelConfig& cfg = out.params.config;
  if (cfg.layer_heads.empty()) cfg.layer_heads.assign(cfg.n_layers, cfg.n_heads);
  cfg.layer_heads[layer] = sorted.size();
  normalize_heads(cfg, head_dim);
  cfg.validate();
  out.config = cfg;
  out.report = structural_report("prune-heads", p, out.params);
  return out;
}

PrunedModel prune_layers(const ParamSet& p, const std::vector<std::size_t>& keep_layers) {
  for (std::size_t i = 0; i < keep_layers.size(); ++i) {
    if (keep_layers[i] >= p.layers.size()) {
      throw std::out_of_range("prune_layers: layer " + std::to_string(keep_layers[i]) +
                              " out of range (model has " + std::to_string(p.layers.size()) +
                              " layers)");
    }
    if (i > 0 && keep_layers[i] <= keep_layers[i - 1]) {
      throw std::invalid_argument("prune_layers: kept layers must be strictly increasing");
    }
  }
  const std::size_t head_dim = p.config.head_dim();
  PrunedModel out;
  out.params.tok_emb = p.tok_emb;
  out.params.pos_emb = p.pos_emb;
  ModelConfig cfg = p.config;
  std::vector<std::size_t> heads;
  for (std::size_t l : keep_layers) {
    out.params.layers.push_back(p.layers[l]);
    heads.push_back(p.config.heads(l));
  }
  cfg.n_layers = keep_layers.size();
  cfg.layer_heads = heads;
  if (cfg.layer_heads.empty()) {
    cfg.d_head = p.config.d_head;
  } else {
    normalize_heads(cfg, head_dim);
  }
  cfg.validate();
  out.params.config = cfg;
  out.config = cfg;
  out.report = structural_report("prune-layers", p, out.params);
  return out;
}

QuantizedTensor quantize_tensor(const Matrix& m, int bits) {
  if (bits != 8) {
    throw std::invalid_argument("quantize_tensor: only 8-bit quantization is supported (got " +
                                std::to_string(bits) + ")");
  }
  QuantizedTensor q;
  const double max_abs = m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
  q.scale = max_abs > 0.0 ? max_abs / kQuantMax : 1.0;
  q.values.resize(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double r = std::clamp(std::round(m.data()[i] / q.scale), -kQuantMax, kQuantMax);
    q.values.data()[i] = static_cast<std::int8_t>(r);
  }
  return q;
}

Matrix dequantize(const QuantizedTensor& q) { return q.values.cast<double>() * q.scale; }

QuantizedModel quantize_model(const ParamSet& p) {
  QuantizedModel q;
  q.config = p.config;
  p.for_each_tensor(
      [&](const std::string&, const Matrix& m) { q.tensors.push_back(quantize_tensor(m)); });
  return q;
}

ParamSet dequantize_model(const QuantizedModel& q) {
  ParamSet p = zero_params(q.config);
  if (p.tensor_count() != q.tensors.size()) {
    throw std::invalid_argument("dequantize_model: tensor count does not match config");
  }
  std::size_t i = 0;
  p.for_each_tensor([&](const std::string& name, Matrix& m) {
    const QuantizedTensor& t = q.tensors[i++];
    if (t.values.rows() != m.rows() || t.values.cols() != m.cols()) {
      throw std::invalid_argument("dequantize_model: tensor " + name + " is " +
                                  shape_string(t.values) + ", config requires " +
                                  shape_string(m));
    }
    m = dequantize(t);
  });
  return p;
}

std::size_t quantized_memory_bytes(const ParamSet& p) {
  return param_count_enumerated(p) + sizeof(double) * p.tensor_count();
}

CompressionReport quantization_report(const ParamSet& original, const QuantizedModel& q) {
  CompressionReport r;
  r.pass = "quantize";
  r.params_before = param_count_enumerated(original);
  r.params_after = r.params_before;
  r.bytes_before = float_bytes(r.params_before);
  r.bytes_after = quantized_memory_bytes(original);
  std::size_t zeros = 0;
  std::size_t i = 0;
  original.for_each_tensor([&](const std::string&, const Matrix& m) {
    const QuantizedTensor& t = q.tensors.at(i++);
    if (m.size() == 0) return;
    r.max_error = std::max(r.max_error, (dequantize(t) - m).cwiseAbs().maxCoeff());
    zeros += static_cast<std::size_t>((t.values.array() == 0).count());
  });
  r.sparsity = r.params_after == 0
                   ? 0.0
                   : static_cast<double>(zeros) / static_cast<double>(r.params_after);
  return r;
}

}  // namespace retf
