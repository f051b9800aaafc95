#include <doctest.h>

#include <cstdlib>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "biaslens/commands.hpp"
#include "biaslens/report.hpp"
#include "biaslens/semantic.hpp"
#include "support.hpp"

using namespace biaslens;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "biaslens");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

/// Generates a scenario with the CLI and returns its directory.
fs::path synth_dir(const std::string& name, const std::string& spec) {
  const auto dir = support::scratch(name);
  support::spit(dir / "spec.json", spec);
  const auto r = run({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "scenario").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  return dir;
}

Outcome audit(const fs::path& dir, const std::string& out, bool trusted = true) {
  const auto s = dir / "scenario";
  std::vector<std::string> args = {"audit",        "--data",       (s / "source.jsonl").string(),
                                   "--config",     (s / "config.json").string(),
                                   "--target-ref", (s / "reference.json").string(),
                                   "--out",        (dir / out).string()};
  if (trusted) {
    args.push_back("--trusted-ref");
    args.push_back((s / "reference.json").string());
  }
  return run(args);
}

std::set<std::string> flagged_checks(const fs::path& report) {
  std::set<std::string> out;
  const auto doc = nlohmann::json::parse(support::slurp(report));
  for (const auto& f : doc.at("flags")) out.insert(f.at("check").get<std::string>());
  return out;
}

struct EnvGuard {
  std::string name;
  std::optional<std::string> old;
  explicit EnvGuard(std::string n) : name(std::move(n)) {
    if (const char* v = std::getenv(name.c_str())) old = v;
  }
  ~EnvGuard() {
    if (old)
      setenv(name.c_str(), old->c_str(), 1);
    else
      unsetenv(name.c_str());
  }
};

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(run({}).code == cli::kExitError);
  CHECK(run({"frobnicate"}).code == cli::kExitError);
  CHECK(run({"audit", "--data", "x.jsonl"}).code == cli::kExitError);
  CHECK(run({"--help"}).code == cli::kExitClean);
}

TEST_CASE("synth writes a scenario and rejects an empty one") {
  const auto dir = synth_dir("cli_synth", R"({"origin": "label", "n": 2000, "strength": 0.2, "seed": 1})");
  for (const auto* f : {"source.jsonl", "target.jsonl", "reference.json", "config.json"})
    CHECK(fs::exists(dir / "scenario" / f));
  const auto ref = nlohmann::json::parse(support::slurp(dir / "scenario" / "reference.json"));
  CHECK(ref.at("attribute") == "g");
  CHECK(ref.contains("trusted"));

  const auto empty = support::scratch("cli_synth_empty");
  support::spit(empty / "spec.json", R"({"origin": "none", "n": 0})");
  const auto r = run({"synth", "--spec", (empty / "spec.json").string(), "--out", (empty / "scenario").string()});
  CHECK(r.code == cli::kExitError);
  CHECK_FALSE(fs::exists(empty / "scenario" / "source.jsonl"));
  CHECK(r.err.find("error") != std::string::npos);
}

TEST_CASE("audit exit codes follow the flags") {
  SUBCASE("clean scenario exits 0") {
    const auto dir = synth_dir("cli_none", R"({"origin": "none", "n": 4000, "seed": 2})");
    const auto r = audit(dir, "out");
    CHECK_MESSAGE(r.code == cli::kExitClean, r.err);
    CHECK(flagged_checks(dir / "out" / "report.json").empty());
    CHECK(fs::exists(dir / "out" / "report.md"));
  }
  SUBCASE("selection scenario exits 2") {
    const auto dir = synth_dir("cli_sel", R"({"origin": "selection", "n": 4000, "strength": 0.3, "seed": 2})");
    const auto r = audit(dir, "out");
    CHECK(r.code == cli::kExitFlagged);
    CHECK(flagged_checks(dir / "out" / "report.json").count("selection_bias") == 1);
  }
  SUBCASE("hate speech preset flags label bias") {
    const auto dir = synth_dir("cli_hate", R"({"preset": "hate_speech", "seed": 3})");
    CHECK(audit(dir, "out").code == cli::kExitFlagged);
    CHECK(flagged_checks(dir / "out" / "report.json").count("label_bias") == 1);
  }
  SUBCASE("without a trusted reference the label check is skipped") {
    const auto dir = synth_dir("cli_notrust", R"({"origin": "label", "n": 4000, "strength": 0.3, "seed": 2})");
    audit(dir, "out", false);
    const auto doc = nlohmann::json::parse(support::slurp(dir / "out" / "report.json"));
    CHECK(doc.at("origins").at(0).at("label").is_null());
    CHECK(flagged_checks(dir / "out" / "report.json").count("label_bias") == 0);
  }
}

TEST_CASE("audit failures write nothing") {
  const auto dir = synth_dir("cli_fail", R"({"origin": "none", "n": 500, "seed": 2})");
  const auto s = dir / "scenario";
  auto r = run({"audit", "--data", (s / "source.jsonl").string(), "--config", (dir / "missing.json").string(),
                "--out", (dir / "out").string()});
  CHECK(r.code == cli::kExitError);
  CHECK_FALSE(fs::exists(dir / "out" / "report.json"));
  CHECK_FALSE(fs::exists(dir / "out" / "report.md"));

  support::spit(dir / "bad.json", R"({"attributes": ["nope"]})");
  r = run({"audit", "--data", (s / "source.jsonl").string(), "--config", (dir / "bad.json").string(), "--out",
           (dir / "out").string()});
  CHECK(r.code == cli::kExitError);
  CHECK(r.err.find("nope") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out" / "report.json"));
}

TEST_CASE("reruns are byte-identical") {
  EnvGuard guard("SOURCE_DATE_EPOCH");
  unsetenv("SOURCE_DATE_EPOCH");
  const auto dir = synth_dir("cli_wsj", R"({"preset": "wsj_effect", "seed": 9})");
  CHECK(audit(dir, "one", false).code == cli::kExitFlagged);
  CHECK(audit(dir, "two", false).code == cli::kExitFlagged);
  const auto a = support::slurp(dir / "one" / "report.json");
  CHECK(!a.empty());
  CHECK(a == support::slurp(dir / "two" / "report.json"));
  CHECK(support::slurp(dir / "one" / "report.md") == support::slurp(dir / "two" / "report.md"));
  const auto flags = flagged_checks(dir / "one" / "report.json");
  CHECK(flags.count("error_disparity") == 1);
  CHECK(flags.count("selection_bias") == 1);

  const auto doc = nlohmann::json::parse(a);
  CHECK(report::validate_schema(doc, report::report_schema()).empty());
}

TEST_CASE("seed precedence") {
  EnvGuard guard("BIASLENS_SEED");
  unsetenv("BIASLENS_SEED");
  CHECK(cli::resolve_seed(std::nullopt, 5) == std::pair<std::uint64_t, std::string>{5, "config"});
  setenv("BIASLENS_SEED", "11", 1);
  CHECK(cli::resolve_seed(std::nullopt, 5) == std::pair<std::uint64_t, std::string>{11, "environment"});
  CHECK(cli::resolve_seed(7, 5) == std::pair<std::uint64_t, std::string>{7, "flag"});

  const auto dir = synth_dir("cli_seed", R"({"origin": "none", "n": 500, "seed": 2})");
  audit(dir, "env");
  const auto doc = nlohmann::json::parse(support::slurp(dir / "env" / "report.json"));
  CHECK(doc.at("metadata").at("seed") == 11);
  CHECK(doc.at("metadata").at("seed_source") == "environment");
}

TEST_CASE("mitigate") {
  const auto dir = support::scratch("cli_mitigate");
  const auto d = support::blocks("g", {{"a", "1", "1", 800}, {"b", "0", "0", 200}});
  std::ostringstream text;
  serialize_records(text, d, RecordFormat::jsonl);
  support::spit(dir / "data.jsonl", text.str());
  const auto data = (dir / "data.jsonl").string();
  const std::string target = R"({"attribute": "g", "target": {"a": 0.5, "b": 0.5}})";

  SUBCASE("unknown method lists the valid ones") {
    const auto r = run({"mitigate", "--data", data, "--method", "magic", "--out", (dir / "x.jsonl").string()});
    CHECK(r.code == cli::kExitError);
    CHECK(r.err.find("poststratify") != std::string::npos);
    CHECK(r.err.find("match_controls") != std::string::npos);
  }
  SUBCASE("post-stratification weight table") {
    const auto r = run({"mitigate", "--data", data, "--method", "poststratify", "--params", target, "--out",
                        (dir / "weights.json").string()});
    REQUIRE_MESSAGE(r.code == cli::kExitClean, r.err);
    const auto w = nlohmann::json::parse(support::slurp(dir / "weights.json"));
    CHECK(w.at("weights").at("a").get<double>() == doctest::Approx(0.625));
    CHECK(w.at("weights").at("b").get<double>() == doctest::Approx(2.5));
    const auto summary = nlohmann::json::parse(r.out);
    CHECK(summary.at("after").get<double>() < 1e-9);
  }
  SUBCASE("downsampling") {
    auto r = run({"mitigate", "--data", data, "--method", "downsample", "--params", target, "--seed", "4", "--out",
                  (dir / "down.jsonl").string()});
    REQUIRE(r.code == cli::kExitClean);
    std::istringstream in(support::slurp(dir / "down.jsonl"));
    CHECK(parse_records(in, RecordFormat::jsonl).size() == 400);

    r = run({"mitigate", "--data", data, "--method", "downsample", "--params",
             R"({"attribute": "g", "target": {"a": 0.5, "b": 0.5}, "n": 1000})", "--out",
             (dir / "toobig.jsonl").string()});
    CHECK(r.code == cli::kExitError);
    CHECK(r.err.find("'b'") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "toobig.jsonl"));
  }
}

TEST_CASE("weat and debias commands") {
  const auto dir = support::scratch("cli_weat");
  std::string vectors;
  for (int i = 0; i < 8; ++i) {
    vectors += fmt::format("x{} {} 0\n", i, 1.0 + i);
    vectors += fmt::format("y{} 0 {}\n", i, 2.0 + i);
    vectors += fmt::format("a{} {} 0\n", i, 0.5 + i);
    vectors += fmt::format("b{} 0 {}\n", i, 0.25 + i);
  }
  support::spit(dir / "vec.txt", vectors);
  nlohmann::json spec = {{"X", {}}, {"Y", {}}, {"A", {}}, {"B", {}}};
  for (int i = 0; i < 8; ++i)
    for (const auto* k : {"X", "Y", "A", "B"})
      spec[k].push_back(std::string(1, static_cast<char>(std::tolower(k[0]))) + std::to_string(i));
  support::spit(dir / "probe.json", spec.dump());

  auto r = run({"weat", "--embeddings", (dir / "vec.txt").string(), "--spec", (dir / "probe.json").string(),
                "--seed", "1"});
  CHECK(r.code == cli::kExitFlagged);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(std::abs(j.at("effect_size").get<double>() - 2.0) < 1e-9);
  CHECK(j.at("flagged") == true);

  spec["X"].push_back("unicorn");
  spec["Y"].push_back("y0_missing");
  support::spit(dir / "oov.json", spec.dump());
  r = run({"weat", "--embeddings", (dir / "vec.txt").string(), "--spec", (dir / "oov.json").string()});
  CHECK(r.code == cli::kExitError);
  CHECK(r.err.find("unicorn") != std::string::npos);

  support::spit(dir / "debias.json", R"({"definitional": [["a0", "b0"]], "neutral": ["x1"]})");
  r = run({"debias", "--embeddings", (dir / "vec.txt").string(), "--spec", (dir / "debias.json").string(), "--out",
           (dir / "out.txt").string()});
  CHECK_MESSAGE(r.code == cli::kExitClean, r.err);
  std::istringstream in(support::slurp(dir / "out.txt"));
  CHECK(semantic::load_embeddings(in).size() == 32);
}
