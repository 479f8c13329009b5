#include "retf/cli.hpp"

#include "retf/compression.hpp"
#include "retf/model_io.hpp"
#include "retf/profiler.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace retf {

namespace {

std::vector<std::size_t> parse_index_list(const std::string& text) {
  std::vector<std::size_t> out;
  if (text.empty() || text == "none") return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || item.front() == '-') {
      throw std::invalid_argument("invalid index '" + item + "' in list '" + text + "'");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

void write_json(const std::string& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << doc.dump(2) << "\n";
}

ParamSet require_float_model(const LoadedModel& m, const std::string& pass) {
  if (const auto* p = std::get_if<ParamSet>(&m)) return *p;
  throw FormatError(pass + " needs a float64 (version 1) model; input is an int8 (version 2) "
                           "file. Apply pruning before quantization.");
}

void print_report(std::ostream& out, const CompressionReport& r) {
  out << "pass: " << r.pass << "\n"
      << "params: " << r.params_before << " -> " << r.params_after << "\n"
      << "bytes: " << r.bytes_before << " -> " << r.bytes_after << "\n"
      << std::setprecision(6) << "sparsity: " << r.sparsity << "\n"
      << std::setprecision(9) << "max_error: " << r.max_error << "\n";
}

struct Options {
  // init / count / bench / train / gradcheck
  std::string config;
  std::uint64_t seed = 0;
  std::string out_path;
  // bench / compare
  std::string baseline;
  std::string variant;
  std::size_t batch = 32;
  std::size_t seq = 10;
  std::size_t reps = 100;
  std::size_t warmup = 10;
  std::string json_path;
  // train
  std::size_t iters = 10;
  double lr = 0.05;
  std::size_t train_batch = 32;
  std::size_t train_seq = 0;
  // compress
  std::string model_path;
  double threshold = 0.0;
  std::size_t layer = 0;
  std::string keep;
  // search
  std::size_t target_base = 0;
  std::size_t target_variant = 0;
  SearchBounds bounds;
  // gradcheck
  double eps = 1e-5;
  std::uint64_t gc_seed = 7;
};

int cmd_init(const Options& o, std::ostream& out) {
  const ModelConfig cfg = load_config(o.config);
  const ParamSet p = init_params(cfg, o.seed);
  save_model(o.out_path, p);
  const std::size_t n = param_count_enumerated(p);
  out << "parameters: " << n << "\n"
      << "parameter_bytes: " << n * sizeof(double) << "\n"
      << "wrote: " << o.out_path << "\n";
  return kExitOk;
}

int cmd_count(const Options& o, std::ostream& out) {
  const ModelConfig cfg = load_config(o.config);
  const std::size_t seq = std::min(o.seq, cfg.max_seq_len);
  out << config_to_json(cfg).dump() << "\n"
      << "parameters: " << param_count(cfg) << "\n"
      << "parameter_bytes: " << memory_bytes(cfg) << "\n"
      << "int8_bytes: " << quantized_memory_bytes(zero_params(cfg)) << "\n"
      << "activation_bytes(batch=" << o.batch << ", seq=" << seq
      << "): " << activation_bytes(cfg, o.batch, seq) << "\n";
  return kExitOk;
}

int cmd_bench(const Options& o, std::ostream& out) {
  const ModelConfig cfg = load_config(o.config);
  if (o.reps == 0) throw std::invalid_argument("--reps must be >= 1");
  const ParamSet p = init_params(cfg, o.seed);
  const ResourceReport r = profile(o.config, p, {o.batch, o.seq}, o.reps, o.warmup);
  const nlohmann::json doc = to_json(r);
  out << doc.dump(2) << "\n";
  if (!o.json_path.empty()) write_json(o.json_path, doc);
  return kExitOk;
}

int cmd_compare(const Options& o, std::ostream& out) {
  const ModelConfig base_cfg = load_config(o.baseline);
  const ModelConfig var_cfg = load_config(o.variant);
  if (o.reps == 0) throw std::invalid_argument("--reps must be >= 1");
  const ParamSet base = init_params(base_cfg, o.seed);
  const ParamSet var = init_params(var_cfg, o.seed);
  const BatchShape shape{o.batch, o.seq};
  const ResourceReport rb = profile(o.baseline, base, shape, o.reps, o.warmup);
  const ResourceReport rv = profile(o.variant, var, shape, o.reps, o.warmup);
  const ComparisonReport c = compare(rb, rv);
  out << c.render_table();
  if (!o.json_path.empty()) write_json(o.json_path, c.to_json());
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  const ModelConfig cfg = load_config(o.config);
  if (o.iters == 0) throw std::invalid_argument("--iters must be >= 1");
  if (!(o.lr >= 0.0)) throw std::invalid_argument("--lr must be >= 0");
  if (cfg.vocab_size < 2) throw std::invalid_argument("copy task needs vocab_size >= 2");
  const std::size_t seq = o.train_seq == 0 ? cfg.max_seq_len : o.train_seq;
  if (seq > cfg.max_seq_len) throw std::invalid_argument("--seq exceeds max_seq_len");
  const CopyBatch data = synth_copy_batch(o.seed + 1, o.train_batch, seq, cfg.vocab_size);
  ParamSet p = init_params(cfg, o.seed);
  std::vector<double> losses;
  for (std::size_t it = 1; it <= o.iters; ++it) {
    TrainStepResult step = train_step(std::move(p), data.inputs, data.targets, o.lr);
    p = std::move(step.params);
    losses.push_back(step.loss);
    out << "iter " << it << " loss " << std::setprecision(17) << step.loss << "\n";
  }
  return losses.back() < losses.front() ? kExitOk : kExitCheckFailed;
}

int cmd_compress(const std::string& pass, const Options& o, std::ostream& out) {
  const LoadedModel in = load_model(o.model_path);
  if (pass == "quantize") {
    const ParamSet p = require_float_model(in, "quantize");
    const QuantizedModel q = quantize_model(p);
    save_model(o.out_path, q);
    print_report(out, quantization_report(p, q));
    return kExitOk;
  }
  const ParamSet p = require_float_model(in, pass);
  if (pass == "prune-magnitude") {
    auto [pruned, report] = prune_magnitude(p, o.threshold);
    save_model(o.out_path, pruned);
    print_report(out, report);
  } else if (pass == "prune-heads") {
    const std::vector<std::size_t> keep = parse_index_list(o.keep);
    const std::vector<double> scores = head_importance(p, o.layer);
    out << "head_importance:";
    for (double s : scores) out << " " << std::setprecision(6) << s;
    out << "\n";
    const PrunedModel pruned = prune_heads(p, o.layer, keep);
    save_model(o.out_path, pruned.params);
    print_report(out, pruned.report);
  } else if (pass == "prune-layers") {
    const PrunedModel pruned = prune_layers(p, parse_index_list(o.keep));
    save_model(o.out_path, pruned.params);
    print_report(out, pruned.report);
  }
  return kExitOk;
}

int cmd_search(const Options& o, std::ostream& out) {
  if (o.target_base == 0 || o.target_variant == 0) {
    throw std::invalid_argument("targets must be positive");
  }
  const std::vector<ConfigPair> found = config_search(o.target_base, o.target_variant, o.bounds);
  for (const ConfigPair& pair : found) {
    // Self-check: every printed pair must reproduce the targets.
    if (param_count(pair.baseline) != o.target_base ||
        param_count(pair.reduced) != o.target_variant) {
      throw std::logic_error("config_search returned a pair that fails re-verification");
    }
    nlohmann::json line = {{"baseline", config_to_json(pair.baseline)},
                           {"reduced", config_to_json(pair.reduced)},
                           {"baseline_params", param_count(pair.baseline)},
                           {"reduced_params", param_count(pair.reduced)}};
    out << line.dump() << "\n";
  }
  return found.empty() ? kExitCheckFailed : kExitOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const ModelConfig cfg = load_config(o.config);
  if (!(o.eps > 0.0)) throw std::invalid_argument("--eps must be > 0");
  const double err = grad_check(cfg, o.gc_seed, o.eps);
  out << "max_relative_error " << std::setprecision(6) << err << "\n";
  return err < 1e-4 ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Resource-efficient transformer encoder toolkit"};
  app.require_subcommand(1);
  Options o;

  auto* init = app.add_subcommand("init", "Initialize a model and write a RETF file");
  init->add_option("--config", o.config, "Config JSON path or preset name")->required();
  init->add_option("--seed", o.seed, "Initialization seed");
  init->add_option("--out", o.out_path, "Output model path")->required();

  auto* count = app.add_subcommand("count", "Print parameter and memory accounting");
  count->add_option("--config", o.config, "Config JSON path or preset name")->required();
  count->add_option("--batch", o.batch, "Batch size for activation memory");
  count->add_option("--seq", o.seq, "Sequence length for activation memory");

  auto* bench = app.add_subcommand("bench", "Time the forward pass of one config");
  bench->add_option("--config", o.config, "Config JSON path or preset name")->required();
  bench->add_option("--batch", o.batch);
  bench->add_option("--seq", o.seq);
  bench->add_option("--reps", o.reps);
  bench->add_option("--warmup", o.warmup);
  bench->add_option("--seed", o.seed);
  bench->add_option("--json", o.json_path, "Write the report here");

  auto* cmp = app.add_subcommand("compare", "Table-style comparison of two configs");
  cmp->add_option("--baseline", o.baseline)->required();
  cmp->add_option("--variant", o.variant)->required();
  cmp->add_option("--batch", o.batch);
  cmp->add_option("--seq", o.seq);
  cmp->add_option("--reps", o.reps);
  cmp->add_option("--warmup", o.warmup);
  cmp->add_option("--seed", o.seed);
  cmp->add_option("--json", o.json_path, "Write the comparison here");

  auto* train = app.add_subcommand("train", "Copy-task training with plain gradient descent");
  train->add_option("--config", o.config)->required();
  train->add_option("--iters", o.iters);
  train->add_option("--batch", o.train_batch);
  train->add_option("--seq", o.train_seq, "Sequence length (default: max_seq_len)");
  train->add_option("--lr", o.lr);
  train->add_option("--seed", o.seed);

  auto* compress = app.add_subcommand("compress", "Apply a compression pass to a model file");
  compress->require_subcommand(1);
  std::string pass;
  auto add_io = [&](CLI::App* sub) {
    sub->add_option("--model", o.model_path, "Input model")->required();
    sub->add_option("--out", o.out_path, "Output model")->required();
    sub->final_callback([&pass, sub] { pass = sub->get_name(); });
  };
  auto* quant = compress->add_subcommand("quantize", "Symmetric per-tensor int8");
  add_io(quant);
  auto* pmag = compress->add_subcommand("prune-magnitude", "Zero weights below a threshold");
  add_io(pmag);
  pmag->add_option("--threshold", o.threshold)->required();
  auto* pheads = compress->add_subcommand("prune-heads", "Remove attention heads");
  add_io(pheads);
  pheads->add_option("--layer", o.layer)->required();
  pheads->add_option("--keep", o.keep, "Comma-separated head indices to keep")->required();
  auto* players = compress->add_subcommand("prune-layers", "Remove encoder layers");
  add_io(players);
  players->add_option("--keep", o.keep, "Comma-separated layer indices to keep, or 'none'")
      ->required();

  auto* search = app.add_subcommand("search", "Find configs matching parameter-count targets");
  search->add_option("--target-base", o.target_base)->required();
  search->add_option("--target-variant", o.target_variant)->required();
  search->add_option("--rows-min", o.bounds.rows_min, "Lower bound on vocab_size + max_seq_len");
  search->add_option("--rows-max", o.bounds.rows_max, "Upper bound on vocab_size + max_seq_len");
  search->add_option("--seq-len", o.bounds.max_seq_len, "max_seq_len of every candidate");
  search->add_option("--d-min", o.bounds.d_min);
  search->add_option("--d-max", o.bounds.d_max);
  search->add_option("--layers-max", o.bounds.layers_max);
  search->add_option("--heads", o.bounds.heads, "Candidate head counts")->delimiter(',');

  auto* gradcheck = app.add_subcommand("gradcheck", "Compare backprop to finite differences");
  gradcheck->add_option("--config", o.config)->required();
  gradcheck->add_option("--eps", o.eps);
  gradcheck->add_option("--seed", o.gc_seed);

  std::vector<const char*> argv;
  argv.push_back("retf");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*init) return cmd_init(o, out);
    if (*count) return cmd_count(o, out);
    if (*bench) return cmd_bench(o, out);
    if (*cmp) return cmd_compare(o, out);
    if (*train) return cmd_train(o, out);
    if (*compress) return cmd_compress(pass, o, out);
    if (*search) return cmd_search(o, out);
    if (*gradcheck) return cmd_gradcheck(o, out);
  } catch (const std::logic_error& e) {
    // invalid_argument / out_of_range / domain errors from validation.
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::runtime_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace retf
