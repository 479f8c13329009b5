#ifndef RETF_PROFILER_HPP
#define RETF_PROFILER_HPP

#include "retf/model.hpp"

#include <json.hpp>

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace retf {

/// Monotonic time source returning seconds. Injected so the statistics can be
/// tested with scripted timestamps.
using Clock = std::function<double()>;

/// std::chrono::steady_clock in seconds.
Clock steady_clock();

struct TimingStats {
  std::vector<double> samples;  // seconds, one per recorded rep
  double median = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t reps = 0;
  std::size_t warmup = 0;
};

/// Order statistics of `samples` (median of an even count is the mean of the
/// two middle values).
TimingStats summarize(std::vector<double> samples, std::size_t warmup);

struct ResourceReport {
  std::string label;
  std::size_t param_count = 0;
  std::size_t param_bytes = 0;       // always 8 * param_count
  std::size_t activation_bytes = 0;
  TimingStats timing;
};

/// Variant relative to baseline. An empty optional marks an undefined ratio
/// (zero baseline metric).
struct MetricComparison {
  std::optional<double> ratio;
  std::optional<double> reduction_pct;
};

struct ComparisonReport {
  ResourceReport baseline;
  ResourceReport variant;
  MetricComparison param_count;
  MetricComparison param_bytes;
  MetricComparison activation_bytes;
  MetricComparison median_time;

  /// Three-row table: memory, execution time, parameter count.
  std::string render_table() const;
  nlohmann::json to_json() const;
};

/// 8 bytes per parameter.
std::size_t memory_bytes(const ModelConfig& cfg);

/// Bytes of every intermediate tensor of one forward pass over `batch`
/// sequences of length `seq_len`.
std::size_t activation_bytes(const ModelConfig& cfg, std::size_t batch, std::size_t seq_len);

struct BatchShape {
  std::size_t batch = 32;
  std::size_t seq_len = 10;
};

/// Times model_forward on a fixed seeded batch. Warmup runs are not recorded.
TimingStats time_forward(const ParamSet& p, BatchShape shape, std::size_t reps,
                         std::size_t warmup, const Clock& clock = steady_clock(),
                         std::uint64_t batch_seed = 0);

ResourceReport profile(const std::string& label, const ParamSet& p, BatchShape shape,
                       std::size_t reps, std::size_t warmup,
                       const Clock& clock = steady_clock());

MetricComparison compare_metric(double baseline, double variant);
ComparisonReport compare(const ResourceReport& baseline, const ResourceReport& variant);

nlohmann::json to_json(const ResourceReport& r);

struct SearchBounds {
  std::size_t rows_min = 2;      // V + S
  std::size_t rows_max = 20000;
  std::size_t max_seq_len = 10;  // S; V = rows - S
  std::size_t d_min = 1;         // powers of two in [d_min, d_max]
  std::size_t d_max = 512;
  std::size_t layers_max = 4;
  std::vector<std::size_t> ff_multipliers = {1, 2, 4};
  std::vector<bool> bias_options = {false, true};
  std::vector<std::size_t> heads = {8};
};

struct ConfigPair {
  ModelConfig baseline;
  ModelConfig reduced;
};

/// Every config within `bounds` whose count is `target_base` and whose
/// halved counterpart has `target_variant` parameters.
std::vector<ConfigPair> config_search(std::size_t target_base, std::size_t target_variant,
                                      const SearchBounds& bounds = {});

}  // namespace retf

#endif  // RETF_PROFILER_HPP
