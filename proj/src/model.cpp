#include "retf/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace retf {

namespace {

void require_positive(std::size_t value, const char* key) {
  if (value == 0) throw std::invalid_argument(std::string(key) + " must be >= 1");
}

Matrix bias_or_empty(bool use_bias, std::size_t width) {
  return use_bias ? Matrix::Zero(1, static_cast<Eigen::Index>(width)) : Matrix();
}

Matrix zeros(std::size_t rows, std::size_t cols) {
  return Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Adds a 1xN bias row to every row of m when the bias is stored.
void add_bias(Matrix& m, const Matrix& bias) {
  if (bias.size() == 0) return;
  m.rowwise() += bias.row(0);
}

}  // namespace

void ModelConfig::validate() const {
  require_positive(vocab_size, "vocab_size");
  require_positive(max_seq_len, "max_seq_len");
  require_positive(d_model, "d_model");
  require_positive(n_heads, "n_heads");
  require_positive(d_ff, "d_ff");
  if (d_head == 0 && d_model % n_heads != 0) {
    throw std::invalid_argument("n_heads must divide d_model (d_model=" +
                                std::to_string(d_model) +
                                ", n_heads=" + std::to_string(n_heads) + ")");
  }
  if (!layer_heads.empty()) {
    if (layer_heads.size() != n_layers) {
      throw std::invalid_argument("layer_heads must have one entry per layer");
    }
    for (std::size_t h : layer_heads) require_positive(h, "layer_heads");
  }
}

std::optional<ModelConfig> preset(std::string_view name) {
  ModelConfig cfg;
  if (name == "paper-baseline") {
    cfg.vocab_size = 3990;
    cfg.max_seq_len = 10;
    cfg.d_model = 32;
    cfg.n_heads = 8;
    cfg.d_ff = 128;
    cfg.n_layers = 1;
  } else if (name == "paper-reduced") {
    cfg.vocab_size = 3990;
    cfg.max_seq_len = 10;
    cfg.d_model = 16;
    cfg.n_heads = 4;
    cfg.d_ff = 64;
    cfg.n_layers = 1;
  } else if (name == "tiny") {
    cfg.vocab_size = 11;
    cfg.max_seq_len = 4;
    cfg.d_model = 4;
    cfg.n_heads = 2;
    cfg.d_ff = 8;
    cfg.n_layers = 1;
  } else if (name == "copy-small") {
    cfg.vocab_size = 16;
    cfg.max_seq_len = 10;
    cfg.d_model = 16;
    cfg.n_heads = 4;
    cfg.d_ff = 64;
    cfg.n_layers = 1;
  } else {
    return std::nullopt;
  }
  return cfg;
}

std::vector<std::string> preset_names() {
  return {"paper-baseline", "paper-reduced", "tiny", "copy-small"};
}

std::size_t ParamSet::tensor_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const std::string&, const Matrix&) { ++n; });
  return n;
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (!(config == other.config)) return false;
  if (layers.size() != other.layers.size()) return false;
  std::vector<const Matrix*> mine;
  std::vector<const Matrix*> theirs;
  for_each_tensor([&](const std::string&, const Matrix& m) { mine.push_back(&m); });
  other.for_each_tensor([&](const std::string&, const Matrix& m) { theirs.push_back(&m); });
  if (mine.size() != theirs.size()) return false;
  for (std::size_t i = 0; i < mine.size(); ++i) {
    const Matrix& a = *mine[i];
    const Matrix& b = *theirs[i];
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    // Bitwise comparison so that -0.0 and NaN payloads are distinguished.
    if (std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) != 0)
      return false;
  }
  return true;
}

ParamSet zero_params(const ModelConfig& cfg) {
  cfg.validate();
  ParamSet p;
  p.config = cfg;
  const std::size_t d = cfg.d_model;
  const std::size_t f = cfg.d_ff;
  p.tok_emb = zeros(cfg.vocab_size, d);
  p.pos_emb = zeros(cfg.max_seq_len, d);
  p.layers.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::size_t w = cfg.attention_width(l);
    LayerParams& layer = p.layers[l];
    layer.wq = zeros(d, w);
    layer.wk = zeros(d, w);
    layer.wv = zeros(d, w);
    layer.wo = zeros(w, d);
    layer.w1 = zeros(d, f);
    layer.w2 = zeros(f, d);
    layer.bq = bias_or_empty(cfg.use_bias, w);
    layer.bk = bias_or_empty(cfg.use_bias, w);
    layer.bv = bias_or_empty(cfg.use_bias, w);
    layer.bo = bias_or_empty(cfg.use_bias, d);
    layer.b1 = bias_or_empty(cfg.use_bias, f);
    layer.b2 = bias_or_empty(cfg.use_bias, d);
  }
  return p;
}

ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("init_params: scale must be > 0");
  ParamSet p = zero_params(cfg);
  RngState rng{seed};
  p.for_each_tensor([&](const std::string& name, Matrix& m) {
    const bool is_bias = name.size() >= 2 && name[name.size() - 2] == 'b';
    if (is_bias) return;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  });
  return p;
}

std::size_t ForwardTrace::element_count() const {
  std::size_t n = static_cast<std::size_t>(embedded.size() + logits.size());
  for (const LayerTrace& t : layers) {
    n += static_cast<std::size_t>(t.q.size() + t.k.size() + t.v.size());
    for (const Matrix& w : t.weights) n += static_cast<std::size_t>(w.size());
    n += static_cast<std::size_t>(t.attn_out.size() + t.ffn_hidden.size() + t.ffn_out.size());
  }
  return n;
}

Matrix embed(const ParamSet& p, const Sequence& tokens) {
  const ModelConfig& cfg = p.config;
  if (tokens.empty()) throw std::invalid_argument("embed: empty token sequence");
  if (tokens.size() > cfg.max_seq_len) {
    throw std::out_of_range("embed: sequence length " + std::to_string(tokens.size()) +
                            " exceeds max_seq_len " + std::to_string(cfg.max_seq_len) +
                            " (first offending index " + std::to_string(cfg.max_seq_len) + ")");
  }
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  Matrix x(static_cast<Eigen::Index>(tokens.size()), d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Token t = tokens[i];
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
      throw std::out_of_range("embed: token id " + std::to_string(t) + " at index " +
                              std::to_string(i) + " outside [0, " +
                              std::to_string(cfg.vocab_size) + ")");
    }
    const auto row = static_cast<Eigen::Index>(i);
    x.row(row) = p.tok_emb.row(static_cast<Eigen::Index>(t)) + p.pos_emb.row(row);
  }
  return x;
}

AttentionResult attention_forward(const ParamSet& p, std::size_t layer, const Matrix& x) {
  const ModelConfig& cfg = p.config;
  if (layer >= p.layers.size()) {
    throw std::out_of_range("attention_forward: layer " + std::to_string(layer) +
                            " out of range");
  }
  if (static_cast<std::size_t>(x.cols()) != cfg.d_model) {
    throw std::invalid_argument("attention_forward: input is " + shape_string(x) +
                                ", expected d_model=" + std::to_string(cfg.d_model) +
                                " columns");
  }
  const LayerParams& w = p.layers[layer];
  AttentionResult r;
  r.q = matmul(x, w.wq);
  r.k = matmul(x, w.wk);
  r.v = matmul(x, w.wv);
  add_bias(r.q, w.bq);
  add_bias(r.k, w.bk);
  add_bias(r.v, w.bv);

  const std::size_t heads = cfg.heads(layer);
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const double root_dh = std::sqrt(static_cast<double>(dh));
  const Eigen::Index n = x.rows();
  Matrix concat(n, r.v.cols());
  r.weights.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
    const Matrix qh = r.q.middleCols(c0, dh);
    const Matrix kh = r.k.middleCols(c0, dh);
    const Matrix vh = r.v.middleCols(c0, dh);
    Matrix scores = matmul_transposed(qh, kh) / root_dh;
    r.weights.push_back(softmax_rows(scores));
    concat.middleCols(c0, dh) = matmul(r.weights.back(), vh);
  }
  r.output = matmul(concat, w.wo);
  add_bias(r.output, w.bo);
  return r;
}

Matrix ffn_forward(const ParamSet& p, std::size_t layer, const Matrix& x, Matrix* hidden) {
  if (layer >= p.layers.size()) {
    throw std::out_of_range("ffn_forward: layer " + std::to_string(layer) + " out of range");
  }
  if (static_cast<std::size_t>(x.cols()) != p.config.d_model) {
    throw std::invalid_argument("ffn_forward: input is " + shape_string(x) +
                                ", expected d_model=" + std::to_string(p.config.d_model) +
                                " columns");
  }
  const LayerParams& w = p.layers[layer];
  Matrix pre = matmul(x, w.w1);
  add_bias(pre, w.b1);
  Matrix h = relu(pre);
  Matrix out = matmul(h, w.w2);
  add_bias(out, w.b2);
  if (hidden != nullptr) *hidden = std::move(h);
  return out;
}

ForwardTrace sequence_forward(const ParamSet& p, const Sequence& tokens) {
  ForwardTrace trace;
  trace.embedded = embed(p, tokens);
  const Matrix* x = &trace.embedded;
  trace.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    LayerTrace& t = trace.layers[l];
    AttentionResult a = attention_forward(p, l, *x);
    t.q = std::move(a.q);
    t.k = std::move(a.k);
    t.v = std::move(a.v);
    t.weights = std::move(a.weights);
    t.attn_out = std::move(a.output);
    t.ffn_out = ffn_forward(p, l, t.attn_out, &t.ffn_hidden);
    x = &t.ffn_out;
  }
  trace.logits = matmul_transposed(*x, p.tok_emb);
  return trace;
}

std::vector<ForwardTrace> model_forward(const ParamSet& p, const Batch& batch) {
  if (batch.empty()) throw std::invalid_argument("model_forward: empty batch");
  std::vector<ForwardTrace> traces;
  traces.reserve(batch.size());
  for (const Sequence& seq : batch) traces.push_back(sequence_forward(p, seq));
  return traces;
}

std::size_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  const std::size_t f = cfg.d_ff;
  std::size_t n = (cfg.vocab_size + cfg.max_seq_len) * d;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::size_t w = cfg.attention_width(l);
    n += 4 * d * w + 2 * d * f;
    if (cfg.use_bias) n += 3 * w + d + f + d;
  }
  return n;
}

std::size_t param_count_enumerated(const ParamSet& p) {
  std::size_t n = 0;
  p.for_each_tensor(
      [&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

double cross_entropy(const Matrix& logits, const Sequence& targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size() || targets.empty()) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for logits " + shape_string(logits));
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Token t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= logits.cols()) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " at index " +
                              std::to_string(i) + " outside [0, " +
                              std::to_string(logits.cols()) + ")");
    }
    const double hi = logits.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) sum += std::exp(logits(i, j) - hi);
    total += std::log(sum) - (logits(i, t) - hi);
  }
  return total / static_cast<double>(logits.rows());
}

double batch_loss(const ParamSet& p, const Batch& inputs, const Batch& targets) {
  if (inputs.size() != targets.size()) {
    throw std::invalid_argument("batch_loss: inputs and targets differ in batch size");
  }
  const std::vector<ForwardTrace> traces = model_forward(p, inputs);
  double total = 0.0;
  for (std::size_t b = 0; b < traces.size(); ++b) {
    total += cross_entropy(traces[b].logits, targets[b]);
  }
  return total / static_cast<double>(traces.size());
}

CopyBatch synth_copy_batch(std::uint64_t seed, std::size_t batch_size, std::size_t seq_len,
                           std::size_t vocab_size) {
  if (batch_size == 0 || seq_len == 0) {
    throw std::invalid_argument("synth_copy_batch: batch size and length must be >= 1");
  }
  if (vocab_size < 2) throw std::invalid_argument("synth_copy_batch: vocab_size must be >= 2");
  RngState rng{seed};
  CopyBatch out;
  out.inputs.assign(batch_size, Sequence(seq_len));
  for (Sequence& seq : out.inputs) {
    for (Token& t : seq) t = static_cast<Token>(rng.below(vocab_size));
  }
  out.targets = out.inputs;
  return out;
}

}  // namespace retf
