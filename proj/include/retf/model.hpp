#ifndef RETF_MODEL_HPP
#define RETF_MODEL_HPP

#include "retf/numerics.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace retf {

using Token = std::int64_t;
using Sequence = std::vector<Token>;
using Batch = std::vector<Sequence>;

/// Hyperparameters of the encoder stack.
///
/// Head pruning makes the attention width of a layer differ from d_model; such
/// configurations carry an explicit `d_head` and, when layers differ, a
/// per-layer head count in `layer_heads`. Unpruned configurations leave both
/// at their defaults.
struct ModelConfig {
  std::size_t vocab_size = 1;
  std::size_t max_seq_len = 1;
  std::size_t d_model = 1;
  std::size_t n_heads = 1;
  std::size_t d_ff = 1;
  std::size_t n_layers = 0;
  bool use_bias = false;
  std::size_t d_head = 0;                // 0: d_model / n_heads
  std::vector<std::size_t> layer_heads;  // empty: n_heads in every layer

  std::size_t head_dim() const { return d_head != 0 ? d_head : d_model / n_heads; }
  std::size_t heads(std::size_t layer) const {
    return layer_heads.empty() ? n_heads : layer_heads.at(layer);
  }
  /// Width of Q/K/V projections in `layer`.
  std::size_t attention_width(std::size_t layer) const { return heads(layer) * head_dim(); }
  bool is_pruned() const { return d_head != 0 || !layer_heads.empty(); }

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Named presets: "paper-baseline", "paper-reduced", "tiny", "copy-small".
std::optional<ModelConfig> preset(std::string_view name);
std::vector<std::string> preset_names();

/// Weights of one encoder layer. Bias vectors are 1xN and empty (0x0) when
/// the config disables biases.
struct LayerParams {
  Matrix wq, wk, wv, wo, w1, w2;
  Matrix bq, bk, bv, bo, b1, b2;
};

/// All weights of one model instance, together with the config they realize.
/// The output projection is tok_emb^T, so no separate matrix is stored.
struct ParamSet {
  ModelConfig config;
  Matrix tok_emb;  // V x d
  Matrix pos_emb;  // S x d
  std::vector<LayerParams> layers;

  /// Visits every stored tensor in canonical order: tok_emb, pos_emb, then per
  /// layer wq, bq, wk, bk, wv, bv, wo, bo, w1, b1, w2, b2 (biases only when
  /// enabled). fn(name, matrix).
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    visit_tensors(*this, fn);
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    visit_tensors(*this, fn);
  }

  std::size_t tensor_count() const;

  bool operator==(const ParamSet& other) const;

 private:
  template <typename Self, typename Fn>
  static void visit_tensors(Self& self, Fn& fn) {
    fn(std::string("tok_emb"), self.tok_emb);
    fn(std::string("pos_emb"), self.pos_emb);
    const bool bias = self.config.use_bias;
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& layer = self.layers[l];
      const std::string prefix = "layers." + std::to_string(l) + ".";
      fn(prefix + "wq", layer.wq);
      if (bias) fn(prefix + "bq", layer.bq);
      fn(prefix + "wk", layer.wk);
      if (bias) fn(prefix + "bk", layer.bk);
      fn(prefix + "wv", layer.wv);
      if (bias) fn(prefix + "bv", layer.bv);
      fn(prefix + "wo", layer.wo);
      if (bias) fn(prefix + "bo", layer.bo);
      fn(prefix + "w1", layer.w1);
      if (bias) fn(prefix + "b1", layer.b1);
      fn(prefix + "w2", layer.w2);
      if (bias) fn(prefix + "b2", layer.b2);
    }
  }
};

/// Zero-filled ParamSet with every shape dictated by `cfg`.
ParamSet zero_params(const ModelConfig& cfg);

inline constexpr double kInitScale = 0.05;

/// Uniform [-scale, scale) weights drawn in canonical order from one SplitMix64
/// stream seeded with `seed`; biases are zero and draw nothing.
ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed, double scale = kInitScale);

/// Activations of one encoder layer for one sequence.
struct LayerTrace {
  Matrix q, k, v;                // n x w
  std::vector<Matrix> weights;   // per head, n x n
  Matrix attn_out;               // n x d, after Wo
  Matrix ffn_hidden;             // n x f, after relu
  Matrix ffn_out;                // n x d
};

struct ForwardTrace {
  Matrix embedded;  // n x d
  std::vector<LayerTrace> layers;
  Matrix logits;    // n x V

  std::size_t element_count() const;
};

struct AttentionResult {
  Matrix output;  // n x d
  Matrix q, k, v;
  std::vector<Matrix> weights;
};

Matrix embed(const ParamSet& p, const Sequence& tokens);

AttentionResult attention_forward(const ParamSet& p, std::size_t layer, const Matrix& x);

/// relu(x W1 + b1) W2 + b2. `hidden` receives the post-relu activations when given.
Matrix ffn_forward(const ParamSet& p, std::size_t layer, const Matrix& x,
                   Matrix* hidden = nullptr);

ForwardTrace sequence_forward(const ParamSet& p, const Sequence& tokens);

/// One trace per sequence of the batch; logits are trace.logits.
std::vector<ForwardTrace> model_forward(const ParamSet& p, const Batch& batch);

/// Closed-form parameter count.
std::size_t param_count(const ModelConfig& cfg);

/// Element count of every stored tensor.
std::size_t param_count_enumerated(const ParamSet& p);

/// Mean over positions of -log softmax(logits row)[target].
double cross_entropy(const Matrix& logits, const Sequence& targets);

/// Batch loss: mean over sequences of cross_entropy.
double batch_loss(const ParamSet& p, const Batch& inputs, const Batch& targets);

struct LossAndGradient {
  double loss = 0.0;
  ParamSet grad;  // same layout as the parameters
};

/// Loss and its exact gradient by backpropagation through the tied output,
/// FFN, attention and both embeddings.
LossAndGradient loss_and_gradient(const ParamSet& p, const Batch& inputs, const Batch& targets);

struct TrainStepResult {
  ParamSet params;
  double loss = 0.0;  // before the update
};

/// Plain gradient descent: w <- w - lr * grad.
TrainStepResult train_step(ParamSet p, const Batch& inputs, const Batch& targets, double lr);

/// Largest relative error between the analytic gradient and central finite
/// differences over every parameter, on a fixed copy-task batch.
///
/// The check point is init_params(cfg, seed, kGradCheckScale). At the training
/// scale of 0.05 the bare stack attenuates activations so strongly that every
/// gradient is ~1e-8, below the round-off floor of a central difference.
inline constexpr double kGradCheckScale = 1.0;

double grad_check(const ModelConfig& cfg, std::uint64_t seed, double eps,
                  std::size_t max_params = 2000);

struct CopyBatch {
  Batch inputs;
  Batch targets;
};

/// Uniform random token sequences whose targets are the inputs themselves.
CopyBatch synth_copy_batch(std::uint64_t seed, std::size_t batch_size, std::size_t seq_len,
                           std::size_t vocab_size);

}  // namespace retf

#endif  // RETF_MODEL_HPP
