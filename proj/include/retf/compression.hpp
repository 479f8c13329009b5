#ifndef RETF_COMPRESSION_HPP
#define RETF_COMPRESSION_HPP

#include "retf/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace retf {

/// Symmetric per-tensor int8 quantization: original ~= values * scale.
struct QuantizedTensor {
  Mat<std::int8_t> values;  // in [-127, 127]
  double scale = 1.0;

  bool operator==(const QuantizedTensor& other) const {
    return scale == other.scale && values.rows() == other.values.rows() &&
           values.cols() == other.values.cols() && values == other.values;
  }
};

/// A fully quantized ParamSet: one QuantizedTensor per stored tensor, in
/// canonical order.
struct QuantizedModel {
  ModelConfig config;
  std::vector<QuantizedTensor> tensors;

  bool operator==(const QuantizedModel&) const = default;
};

struct CompressionReport {
  std::string pass;
  std::size_t params_before = 0;
  std::size_t params_after = 0;
  std::size_t bytes_before = 0;
  std::size_t bytes_after = 0;
  double sparsity = 0.0;
  double max_error = 0.0;  // max elementwise |compressed - original|
};

struct PrunedModel {
  ParamSet params;
  ModelConfig config;
  CompressionReport report;
};

/// Divides d_model, n_heads and d_ff by `factor`; vocabulary, sequence length
/// and depth are kept.
ModelConfig reduce_config(const ModelConfig& cfg, std::size_t factor = 2);

/// Zeroes every weight with |w| < threshold.
std::pair<ParamSet, CompressionReport> prune_magnitude(const ParamSet& p, double threshold);

/// Frobenius norm of each head's row block of Wo.
std::vector<double> head_importance(const ParamSet& p, std::size_t layer);

/// Structurally removes the heads of `layer` not listed in `keep`.
PrunedModel prune_heads(const ParamSet& p, std::size_t layer, const std::vector<std::size_t>& keep);

/// Keeps the listed layers, in order.
PrunedModel prune_layers(const ParamSet& p, const std::vector<std::size_t>& keep_layers);

QuantizedTensor quantize_tensor(const Matrix& m, int bits = 8);
Matrix dequantize(const QuantizedTensor& q);

QuantizedModel quantize_model(const ParamSet& p);
ParamSet dequantize_model(const QuantizedModel& q);

/// One byte per parameter plus an 8-byte scale per tensor.
std::size_t quantized_memory_bytes(const ParamSet& p);

/// Report for quantize_model: bytes before/after and the worst dequantization error.
CompressionReport quantization_report(const ParamSet& original, const QuantizedModel& q);

}  // namespace retf

#endif  // RETF_COMPRESSION_HPP
