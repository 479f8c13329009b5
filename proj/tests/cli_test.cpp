#include "retf/cli.hpp"

#include "retf/model_io.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

using namespace retf;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string temp(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("retf_cli_test_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::size_t count_lines(const std::string& s, const std::string& prefix) {
  std::istringstream in(s);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += line.rfind(prefix, 0) == 0;
  return n;
}

}  // namespace

TEST_CASE("usage errors") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"init", "--config", "tiny"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("init is deterministic") {
  const std::string a = temp("a.retf");
  const std::string b = temp("b.retf");
  const std::string c = temp("c.retf");
  const Run first = run({"init", "--config", "tiny", "--seed", "4", "--out", a});
  CHECK(first.code == kExitOk);
  CHECK(first.out.find("parameters: 188") != std::string::npos);
  CHECK(run({"init", "--config", "tiny", "--seed", "4", "--out", b}).code == kExitOk);
  CHECK(run({"init", "--config", "tiny", "--seed", "5", "--out", c}).code == kExitOk);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a) != slurp(c));

  const Run missing = run({"init", "--config", "/no/such/config.json", "--out", a});
  CHECK(missing.code == kExitUsage);
  CHECK_FALSE(missing.err.empty());
  for (const auto& p : {a, b, c}) std::filesystem::remove(p);
}

TEST_CASE("init reads a config file") {
  const std::string cfg = temp("cfg.json");
  const std::string model = temp("cfg.retf");
  {
    std::ofstream f(cfg);
    f << R"({"vocab_size":5,"max_seq_len":3,"d_model":4,"n_heads":2,"d_ff":6,"n_layers":1})";
  }
  CHECK(run({"init", "--config", cfg, "--out", model}).code == kExitOk);
  CHECK(std::get<ParamSet>(load_model(model)).config.vocab_size == 5);
  {
    std::ofstream f(cfg);
    f << R"({"vocab_size":5,"max_seq_len":3,"d_model":4,"n_heads":3,"d_ff":6,"n_layers":1})";
  }
  CHECK(run({"init", "--config", cfg, "--out", model}).code == kExitUsage);
  std::filesystem::remove(cfg);
  std::filesystem::remove(model);
}

TEST_CASE("count") {
  const Run r = run({"count", "--config", "paper-baseline"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("parameters: 140288") != std::string::npos);
  CHECK(r.out.find("parameter_bytes: 1122304") != std::string::npos);
}

TEST_CASE("compare prints the table") {
  const Run r = run({"compare", "--baseline", "paper-baseline", "--variant", "paper-reduced",
                     "--reps", "3", "--warmup", "1"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("1,122,304") != std::string::npos);
  CHECK(r.out.find("536,576") != std::string::npos);
  CHECK(r.out.find("52.19%") != std::string::npos);

  const std::string json = temp("cmp.json");
  const Run same = run({"compare", "--baseline", "tiny", "--variant", "tiny", "--seq", "4", "--reps", "2",
                        "--json", json});
  CHECK(same.code == kExitOk);
  const nlohmann::json doc = nlohmann::json::parse(slurp(json));
  CHECK(doc["reductions_pct"]["param_count"] == 0.0);
  CHECK(doc["reductions_pct"]["param_bytes"] == 0.0);
  std::filesystem::remove(json);

  CHECK(run({"compare", "--baseline", "tiny", "--variant", "tiny", "--reps", "0"}).code ==
        kExitUsage);
}

TEST_CASE("bench") {
  const Run r = run({"bench", "--config", "tiny", "--batch", "2", "--seq", "3", "--reps", "2"});
  CHECK(r.code == kExitOk);
  const nlohmann::json doc = nlohmann::json::parse(r.out);
  CHECK(doc["param_count"] == 188);
  CHECK(doc["timing"]["reps"] == 2);
}

TEST_CASE("train") {
  const Run ok = run({"train", "--config", "copy-small"});
  CHECK(ok.code == kExitOk);
  CHECK(count_lines(ok.out, "iter ") == 10);

  CHECK(run({"train", "--config", "copy-small", "--lr", "0", "--iters", "3"}).code ==
        kExitCheckFailed);
  const Run one = run({"train", "--config", "tiny", "--iters", "1"});
  CHECK(count_lines(one.out, "iter ") == 1);
  CHECK(one.code == kExitCheckFailed);
  CHECK(run({"train", "--config", "tiny", "--iters", "0"}).code == kExitUsage);
  CHECK(run({"train", "--config", "tiny", "--seq", "9"}).code == kExitUsage);
}

TEST_CASE("gradcheck") {
  const Run r = run({"gradcheck", "--config", "tiny"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("max_relative_error") != std::string::npos);
  CHECK(run({"gradcheck", "--config", "tiny", "--eps", "0"}).code == kExitUsage);
  CHECK(run({"gradcheck", "--config", "paper-baseline"}).code == kExitUsage);
}

TEST_CASE("search") {
  const Run r = run({"search", "--target-base", "140288", "--target-variant", "67072"});
  CHECK(r.code == kExitOk);
  CHECK(count_lines(r.out, "{") >= 1);
  std::istringstream lines(r.out);
  for (std::string line; std::getline(lines, line);) {
    const nlohmann::json doc = nlohmann::json::parse(line);
    CHECK(doc["baseline_params"] == 140288);
    CHECK(doc["reduced_params"] == 67072);
  }
  CHECK(run({"search", "--target-base", "1", "--target-variant", "1"}).code == kExitCheckFailed);
  CHECK(run({"search", "--target-base", "abc", "--target-variant", "1"}).code == kExitUsage);
}

TEST_CASE("compress passes") {
  const std::string model = temp("base.retf");
  const std::string out = temp("out.retf");
  const std::string q = temp("q.retf");
  REQUIRE(run({"init", "--config", "paper-baseline", "--out", model}).code == kExitOk);
  const ParamSet original = std::get<ParamSet>(load_model(model));

  const Run quant = run({"compress", "quantize", "--model", model, "--out", q});
  CHECK(quant.code == kExitOk);
  CHECK(std::holds_alternative<QuantizedModel>(load_model(q)));
  CHECK(std::filesystem::file_size(q) < std::filesystem::file_size(model));

  CHECK(run({"compress", "prune-magnitude", "--model", model, "--out", out, "--threshold", "0"})
            .code == kExitOk);
  CHECK(std::get<ParamSet>(load_model(out)) == original);

  const Run heads = run({"compress", "prune-heads", "--model", model, "--out", out, "--layer", "0",
                         "--keep", "0,1,2,3"});
  CHECK(heads.code == kExitOk);
  CHECK(heads.out.find("head_importance:") != std::string::npos);
  CHECK(param_count_enumerated(std::get<ParamSet>(load_model(out))) == 140288 - 2048);

  CHECK(run({"compress", "prune-layers", "--model", model, "--out", out, "--keep", "none"}).code ==
        kExitOk);
  CHECK(std::get<ParamSet>(load_model(out)).config.n_layers == 0);

  const Run twice = run({"compress", "prune-heads", "--model", q, "--out", out, "--layer", "0",
                         "--keep", "0"});
  CHECK(twice.code == kExitUsage);
  CHECK_FALSE(twice.err.empty());
  CHECK(run({"compress", "prune-layers", "--model", model, "--out", out, "--keep", "3"}).code ==
        kExitUsage);
  for (const auto& p : {model, out, q}) std::filesystem::remove(p);
}
