#include "retf/profiler.hpp"

#include "retf/compression.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace retf {

Clock steady_clock() {
  return [] {
    const auto now = std::chrono::steady_clock::now().time_since_epoch();
    return std::chrono::duration<double>(now).count();
  };
}

TimingStats summarize(std::vector<double> samples, std::size_t warmup) {
  if (samples.empty()) throw std::invalid_argument("summarize: no samples");
  TimingStats s;
  s.reps = samples.size();
  s.warmup = warmup;
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) /
           static_cast<double>(samples.size());
  s.min = sorted.front();
  s.max = sorted.back();
  s.samples = std::move(samples);
  return s;
}

std::size_t memory_bytes(const ModelConfig& cfg) { return sizeof(double) * param_count(cfg); }

std::size_t activation_bytes(const ModelConfig& cfg, std::size_t batch, std::size_t seq_len) {
  cfg.validate();
  if (seq_len > cfg.max_seq_len) {
    throw std::invalid_argument("activation_bytes: seq " + std::to_string(seq_len) +
                                " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  const std::size_t n = seq_len;
  const std::size_t d = cfg.d_model;
  std::size_t per_sequence = n * d + n * cfg.vocab_size;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::size_t w = cfg.attention_width(l);
    // Q, K, V; attention weights; attention output; FFN hidden; FFN output.
    per_sequence += 3 * n * w + cfg.heads(l) * n * n + n * d + n * cfg.d_ff + n * d;
  }
  return sizeof(double) * batch * per_sequence;
}

TimingStats time_forward(const ParamSet& p, BatchShape shape, std::size_t reps,
                         std::size_t warmup, const Clock& clock, std::uint64_t batch_seed) {
  if (reps == 0) throw std::invalid_argument("time_forward: reps must be >= 1");
  if (shape.batch == 0 || shape.seq_len == 0 || shape.seq_len > p.config.max_seq_len) {
    throw std::invalid_argument("time_forward: invalid batch shape");
  }
  Batch batch;
  if (p.config.vocab_size >= 2) {
    batch = synth_copy_batch(batch_seed, shape.batch, shape.seq_len, p.config.vocab_size).inputs;
  } else {
    batch.assign(shape.batch, Sequence(shape.seq_len, 0));
  }

  // Keeps the optimizer from discarding the forward pass.
  double sink = 0.0;
  for (std::size_t i = 0; i < warmup; ++i) sink += model_forward(p, batch).front().logits(0, 0);
  std::vector<double> samples;
  samples.reserve(reps);
  for (std::size_t i = 0; i < reps; ++i) {
    const double start = clock();
    sink += model_forward(p, batch).front().logits(0, 0);
    samples.push_back(clock() - start);
  }
  volatile double keep = sink;
  (void)keep;
  return summarize(std::move(samples), warmup);
}

ResourceReport profile(const std::string& label, const ParamSet& p, BatchShape shape,
                       std::size_t reps, std::size_t warmup, const Clock& clock) {
  ResourceReport r;
  r.label = label;
  r.param_count = param_count_enumerated(p);
  r.param_bytes = sizeof(double) * r.param_count;
  r.activation_bytes = activation_bytes(p.config, shape.batch, shape.seq_len);
  r.timing = time_forward(p, shape, reps, warmup, clock);
  return r;
}

MetricComparison compare_metric(double baseline, double variant) {
  MetricComparison m;
  if (baseline == 0.0) return m;
  m.ratio = variant / baseline;
  m.reduction_pct = (1.0 - *m.ratio) * 100.0;
  return m;
}

ComparisonReport compare(const ResourceReport& baseline, const ResourceReport& variant) {
  ComparisonReport c;
  c.baseline = baseline;
  c.variant = variant;
  c.param_count = compare_metric(static_cast<double>(baseline.param_count),
                                 static_cast<double>(variant.param_count));
  c.param_bytes = compare_metric(static_cast<double>(baseline.param_bytes),
                                 static_cast<double>(variant.param_bytes));
  c.activation_bytes = compare_metric(static_cast<double>(baseline.activation_bytes),
                                      static_cast<double>(variant.activation_bytes));
  c.median_time = compare_metric(baseline.timing.median, variant.timing.median);
  return c;
}

namespace {

std::string with_commas(std::size_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return out;
}

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

std::string reduction_cell(const MetricComparison& m) {
  return m.reduction_pct ? format("%.2f%%", *m.reduction_pct) : std::string("undefined");
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::string ComparisonReport::render_table() const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-26s %20s %20s %11s\n", "Metric", baseline.label.c_str(),
                variant.label.c_str(), "Reduction");
  os << line;
  std::snprintf(line, sizeof(line), "%-26s %20s %20s %11s\n", "Memory Usage (Bytes)",
                with_commas(baseline.param_bytes).c_str(),
                with_commas(variant.param_bytes).c_str(), reduction_cell(param_bytes).c_str());
  os << line;
  std::snprintf(line, sizeof(line), "%-26s %20s %20s %11s\n", "Execution Time (Seconds)",
                format("%.6f", baseline.timing.median).c_str(),
                format("%.6f", variant.timing.median).c_str(),
                reduction_cell(median_time).c_str());
  os << line;
  std::snprintf(line, sizeof(line), "%-26s %20s %20s %11s\n", "Parameter Count",
                with_commas(baseline.param_count).c_str(),
                with_commas(variant.param_count).c_str(), reduction_cell(param_count).c_str());
  os << line;
  os << "Execution time is the median wall-clock time of one full model_forward over the batch "
        "(embedding through tied output logits).\n";
  return os.str();
}

nlohmann::json to_json(const ResourceReport& r) {
  return {
      {"label", r.label},
      {"param_count", r.param_count},
      {"param_bytes", r.param_bytes},
      {"activation_bytes", r.activation_bytes},
      {"timing",
       {{"median_s", r.timing.median},
        {"mean_s", r.timing.mean},
        {"min_s", r.timing.min},
        {"reps", r.timing.reps},
        {"warmup", r.timing.warmup}}},
  };
}

nlohmann::json ComparisonReport::to_json() const {
  auto section = [&](auto pick) {
    return nlohmann::json{{"param_count", optional_json(pick(param_count))},
                          {"param_bytes", optional_json(pick(param_bytes))},
                          {"activation_bytes", optional_json(pick(activation_bytes))},
                          {"median_s", optional_json(pick(median_time))}};
  };
  return {
      {"baseline", retf::to_json(baseline)},
      {"variant", retf::to_json(variant)},
      {"ratios", section([](const MetricComparison& m) { return m.ratio; })},
      {"reductions_pct", section([](const MetricComparison& m) { return m.reduction_pct; })},
  };
}

std::vector<ConfigPair> config_search(std::size_t target_base, std::size_t target_variant,
                                      const SearchBounds& bounds) {
  std::vector<std::size_t> dims;
  for (std::size_t d = 1; d <= bounds.d_max && d <= 512; d *= 2) {
    if (d >= bounds.d_min) dims.push_back(d);
  }
  const std::size_t rows_min = std::max(bounds.rows_min, bounds.max_seq_len + 1);
  if (dims.empty() || bounds.rows_max < rows_min || bounds.max_seq_len == 0 ||
      bounds.ff_multipliers.empty() || bounds.bias_options.empty() || bounds.heads.empty() ||
      bounds.layers_max > 4) {
    throw std::invalid_argument("config_search: empty or invalid search bounds");
  }

  std::vector<ConfigPair> found;
  for (std::size_t d : dims) {
    for (std::size_t heads : bounds.heads) {
      if (heads == 0 || d % heads != 0) continue;
      for (std::size_t layers = 0; layers <= bounds.layers_max; ++layers) {
        for (std::size_t mult : bounds.ff_multipliers) {
          for (bool bias : bounds.bias_options) {
            ModelConfig cfg;
            cfg.max_seq_len = bounds.max_seq_len;
            cfg.d_model = d;
            cfg.n_heads = heads;
            cfg.d_ff = mult * d;
            cfg.n_layers = layers;
            cfg.use_bias = bias;
            for (std::size_t rows = rows_min; rows <= bounds.rows_max; ++rows) {
              cfg.vocab_size = rows - bounds.max_seq_len;
              if (param_count(cfg) != target_base) continue;
              if (d % 2 != 0 || heads % 2 != 0 || cfg.d_ff % 2 != 0) continue;
              const ModelConfig reduced = reduce_config(cfg, 2);
              if (param_count(reduced) != target_variant) continue;
              found.push_back({cfg, reduced});
            }
          }
        }
      }
    }
  }
  return found;
}

}  // namespace retf
