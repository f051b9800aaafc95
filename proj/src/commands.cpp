#include "biaslens/commands.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "biaslens/disparity.hpp"
#include "biaslens/error.hpp"
#include "biaslens/mitigate.hpp"
#include "biaslens/origins.hpp"
#include "biaslens/rng.hpp"
#include "biaslens/semantic.hpp"
#include "biaslens/stats.hpp"
#include "biaslens/synth.hpp"

namespace biaslens::cli {

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, fmt::format("cannot read '{}'", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json parse_json(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::parse, fmt::format("{}: {}", what, e.what()));
  }
}

bool has_extension(const std::string& path, std::string_view ext) {
  return fs::path(path).extension() == ext;
}

RecordFormat format_for(const std::string& path, const std::optional<std::string>& flag) {
  if (flag) return parse_format(*flag);
  return has_extension(path, ".csv") ? RecordFormat::csv : RecordFormat::jsonl;
}

Dataset load_dataset(const std::string& path, const std::optional<std::string>& format,
                     const std::optional<ColumnMap>& columns) {
  std::istringstream in(read_file(path));
  try {
    return parse_records(in, format_for(path, format), columns);
  } catch (const Error& e) {
    throw Error(e.code(), fmt::format("{}: {}", path, e.what()), e.line());
  }
}

void write_dataset(const std::string& path, const Dataset& d, RecordFormat format,
                   const std::optional<ColumnMap>& columns) {
  std::ostringstream out;
  serialize_records(out, d, format, columns);
  report::write_file_atomic(path, out.str());
}

int fail(std::ostream& err, const std::exception& e) {
  if (const auto* be = dynamic_cast<const Error*>(&e))
    err << fmt::format("error [{}]: {}\n", to_string(be->code()), be->what());
  else
    err << "error: " << e.what() << "\n";
  return kExitError;
}

/// Trusted reference as given on the command line.
struct Trusted {
  std::optional<Dataset> dataset;
  std::map<std::string, IdealSpec> specs;  // "*" applies to every attribute
  bool declared_absent = false;
};

Trusted load_trusted(const std::string& path, const std::optional<std::string>& format,
                     const std::optional<ColumnMap>& columns) {
  Trusted t;
  if (!has_extension(path, ".json")) {
    t.dataset = load_dataset(path, format, columns);
    return t;
  }
  const auto j = parse_json(read_file(path), path);
  if (!j.is_object()) throw Error(ErrorCode::parse, fmt::format("{}: expected a JSON object", path));
  if (j.contains("type")) {
    t.specs["*"] = ideal_spec_from_json(j);
  } else if (j.contains("trusted")) {
    // Reference document written by `biaslens synth`.
    if (j["trusted"].is_null()) t.declared_absent = true;
    else t.specs["*"] = ideal_spec_from_json(j["trusted"]);
  } else {
    for (const auto& [attr, spec] : j.items()) t.specs[attr] = ideal_spec_from_json(spec);
  }
  return t;
}

struct Target {
  std::optional<Dataset> dataset;
  std::map<std::string, stats::Table> marginals;
};

Target load_target(const std::string& path, const std::optional<std::string>& format,
                   const std::optional<ColumnMap>& columns) {
  Target t;
  if (!has_extension(path, ".json")) {
    t.dataset = load_dataset(path, format, columns);
    return t;
  }
  const auto j = parse_json(read_file(path), path);
  try {
    if (j.contains("target_marginal") && j.contains("attribute"))
      t.marginals[j["attribute"].get<std::string>()] = j["target_marginal"].get<stats::Table>();
    else
      t.marginals = j.get<std::map<std::string, stats::Table>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, fmt::format("{}: target marginals must map attribute -> cell -> share ({})",
                                              path, e.what()));
  }
  return t;
}

std::optional<stats::IdealDistribution> trusted_for(const Trusted& t, const std::string& attribute,
                                                    const stats::CellMapper& mapper, const Dataset& source) {
  if (t.dataset) return stats::IdealDistribution::empirical_from(*t.dataset, mapper, stats::Field::y_true);
  auto it = t.specs.find(attribute);
  if (it == t.specs.end()) it = t.specs.find("*");
  if (it == t.specs.end()) return std::nullopt;
  return stats::resolve_ideal(it->second, mapper, source, nullptr, nullptr);
}

}  // namespace

std::pair<std::uint64_t, std::string> resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t fallback) {
  if (flag) return {*flag, "flag"};
  if (const char* env = std::getenv("BIASLENS_SEED"); env && *env) {
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (errno != 0 || !end || *end != '\0' || env[0] == '-')
      throw Error(ErrorCode::usage, fmt::format("BIASLENS_SEED='{}' is not a non-negative integer", env));
    return {static_cast<std::uint64_t>(v), "environment"};
  }
  return {fallback, "config"};
}

report::AuditReport build_audit_report(const AuditArgs& args) {
  report::AuditReport rep;
  const auto config_text = read_file(args.config);
  std::istringstream config_stream(config_text);
  AuditConfig config = parse_config(config_stream);
  const auto [seed, seed_source] = resolve_seed(args.seed, config.seed);
  config.seed = seed;

  const Dataset data = load_dataset(args.data, args.format, config.columns);
  rep.metadata.inputs["data"] = report::content_hash(read_file(args.data));
  rep.metadata.inputs["config"] = report::content_hash(config_text);

  if (const auto findings = validate_config(config, data); !findings.empty()) {
    std::vector<std::string> lines;
    for (const auto& f : findings)
      lines.push_back(fmt::format("{} ({}): {}", to_string(f.kind), f.attribute, f.message));
    throw Error(ErrorCode::validation, fmt::format("config does not fit the data: {}", fmt::join(lines, "; ")));
  }

  Target target;
  if (args.target_ref) {
    target = load_target(*args.target_ref, args.format, config.columns);
    rep.metadata.inputs["target_ref"] = report::content_hash(read_file(*args.target_ref));
  }
  for (const auto& [attr, m] : config.target_marginals)
    if (!target.marginals.count(attr)) target.marginals[attr] = m;

  Trusted trusted;
  if (args.trusted_ref) {
    trusted = load_trusted(*args.trusted_ref, args.format, config.columns);
    rep.metadata.inputs["trusted_ref"] = report::content_hash(read_file(*args.trusted_ref));
  }

  std::vector<origins::OriginFinding> semantic;
  if (args.embeddings) {
    std::istringstream in(read_file(*args.embeddings));
    rep.metadata.inputs["embeddings"] = report::content_hash(in.str());
    const auto emb = semantic::load_embeddings(in);
    std::vector<semantic::WeatSpec> specs;
    for (const auto& j : config.weat_specs) {
      specs.push_back(semantic::weat_spec_from_json(j));
      semantic::validate(specs.back(), emb);
    }
    if (specs.empty())
      rep.skipped.push_back({"semantic_bias", std::nullopt, "embeddings supplied but no WEAT probes configured"});
    else
      semantic.push_back(semantic::semantic_bias_finding(emb, specs, config));
  } else if (!config.weat_specs.empty()) {
    rep.skipped.push_back({"semantic_bias", std::nullopt, "WEAT probes configured but no embeddings supplied"});
  }

  const bool categorical = data.outcome_kind() == OutcomeKind::categorical;
  const Dataset* target_ds = target.dataset ? &*target.dataset : nullptr;
  const Dataset* trusted_ds = trusted.dataset ? &*trusted.dataset : nullptr;
  for (const auto& name : config.attributes) {
    const auto attribute = stats::resolve_attribute(data, config, name);
    const auto mapper = stats::CellMapper::build(data, attribute);

    if (categorical) {
      const auto ideal = stats::resolve_ideal(config.ideal_for(name), mapper, data, target_ds, trusted_ds);
      rep.disparities.push_back(disparity::outcome_disparity(data, attribute, ideal, config));
    } else {
      rep.skipped.push_back({"outcome_disparity", name, "outcomes are continuous; no ideal label distribution"});
    }
    rep.disparities.push_back(disparity::error_disparity(data, attribute, config));

    origins::TargetReference tref;
    if (target_ds) tref.dataset = target_ds;
    else if (auto it = target.marginals.find(name); it != target.marginals.end()) tref.marginal = it->second;

    std::optional<stats::IdealDistribution> trusted_ideal;
    if (categorical) trusted_ideal = trusted_for(trusted, name, mapper, data);
    else if (args.trusted_ref)
      rep.skipped.push_back({"label_bias", name, "outcomes are continuous; the label check needs categories"});
    if (trusted.declared_absent)
      rep.skipped.push_back({"label_bias", name, "the trusted reference file holds no label distribution"});

    rep.origins.push_back(origins::diagnose(data, tref, trusted_ideal ? &*trusted_ideal : nullptr, attribute,
                                            config));
  }
  rep.semantic = std::move(semantic);

  rep.config = to_json(config);
  rep.metadata.config_hash = report::content_hash(rep.config.dump());
  rep.metadata.seed = seed;
  rep.metadata.seed_source = seed_source;
  std::tie(rep.metadata.timestamp, rep.metadata.timestamp_source) = report::report_timestamp();
  return rep;
}

int cmd_audit(const AuditArgs& args, std::ostream& out, std::ostream& err) {
  try {
    const auto rep = build_audit_report(args);
    const auto doc = report::to_json(rep);
    const auto problems = report::validate_schema(nlohmann::json::parse(doc.dump()), report::report_schema());
    if (!problems.empty())
      throw Error(ErrorCode::validation, fmt::format("report failed its schema: {}", fmt::join(problems, "; ")));
    report::write_report_files(args.out, doc.dump(2) + "\n", report::render_markdown(doc), args.fault_hook);
    const auto n_flags = doc["flags"].size();
    out << fmt::format("wrote {}/report.json and report.md: {} flag(s)\n", args.out, n_flags);
    return n_flags > 0 ? kExitFlagged : kExitClean;
  } catch (const std::exception& e) {
    return fail(err, e);
  }
}

// ---------------------------------------------------------------------------
// mitigate

namespace {

const std::vector<std::string> kMethods = {"augment",      "downsample",      "match_controls",
                                           "poststratify", "threshold_match", "upsample"};

nlohmann::json load_params(const std::string& text) {
  if (!text.empty() && text.front() != '{' && fs::exists(text)) return parse_json(read_file(text), text);
  return parse_json(text.empty() ? "{}" : text, "--params");
}

std::string require_string(const nlohmann::json& p, const char* key) {
  if (!p.contains(key) || !p[key].is_string())
    throw Error(ErrorCode::usage, fmt::format("parameter '{}' (string) is required", key));
  return p[key].get<std::string>();
}

stats::Table target_marginal_for(const nlohmann::json& params, const MitigateArgs& args, const Dataset& data,
                                 const stats::CellMapper& mapper, const std::optional<ColumnMap>& columns) {
  if (params.contains("target")) return params["target"].get<stats::Table>();
  if (!args.target_ref)
    throw Error(ErrorCode::usage, "a target marginal is required: pass params.target or --target-ref");
  const auto t = load_target(*args.target_ref, args.format, columns);
  if (t.dataset) return stats::attribute_marginal(*t.dataset, mapper, stats::SplitFilter::both).probabilities();
  auto it = t.marginals.find(mapper.attribute());
  if (it == t.marginals.end())
    throw Error(ErrorCode::missing_reference,
                fmt::format("target reference has no marginal for '{}'", mapper.attribute()));
  (void)data;
  return it->second;
}

double max_share_gap(const stats::Table& observed, const stats::Table& target) {
  double gap = 0.0;
  for (const auto& [cell, p] : target) {
    const auto it = observed.find(cell);
    gap = std::max(gap, std::abs((it == observed.end() ? 0.0 : it->second) - p));
  }
  return gap;
}

stats::SplitFilter source_or_both(const Dataset& d) {
  return d.has_split(Split::source) ? stats::SplitFilter::source : stats::SplitFilter::both;
}

}  // namespace

int cmd_mitigate(const MitigateArgs& args, std::ostream& out, std::ostream& err) {
  try {
    if (std::find(kMethods.begin(), kMethods.end(), args.method) == kMethods.end())
      throw Error(ErrorCode::usage, fmt::format("unknown countermeasure '{}' (valid: {})", args.method,
                                                fmt::join(kMethods, ", ")));
    if (args.out.empty()) throw Error(ErrorCode::usage, "--out is required");
    std::optional<ColumnMap> columns;
    AuditConfig config;
    if (args.config) {
      std::istringstream in(read_file(*args.config));
      config = parse_config(in);
      columns = config.columns;
    }
    const auto [seed, seed_source] = resolve_seed(args.seed, config.seed);
    const auto params = load_params(args.params);
    const Dataset data = load_dataset(args.data, args.format, columns);
    const auto out_format = format_for(args.out, args.format);
    nlohmann::ordered_json summary = {{"method", args.method}, {"seed", seed}};

    if (args.method == "poststratify") {
      const auto attribute = stats::resolve_attribute(data, config, require_string(params, "attribute"));
      const auto mapper = stats::CellMapper::build(data, attribute);
      const auto target = target_marginal_for(params, args, data, mapper, columns);
      const auto source = stats::attribute_marginal(data, mapper, source_or_both(data)).probabilities();
      const auto weights = mitigate::poststratify_weights(source, target, attribute.name);
      origins::TargetReference tref;
      tref.marginal = target;
      config.seed = seed;
      const auto before = origins::selection_bias_check(data, tref, attribute, config);
      const auto after = origins::selection_bias_check(data, tref, attribute, config, &weights);
      if (has_extension(args.out, ".json")) {
        nlohmann::ordered_json table = {{"attribute", attribute.name}, {"weights", weights.weights}};
        report::write_file_atomic(args.out, table.dump(2) + "\n");
      } else {
        write_dataset(args.out, mitigate::apply_weights(data, mapper, weights), out_format, columns);
      }
      summary["check"] = "selection_bias";
      summary["before"] = before.divergence.statistic;
      summary["after"] = after.divergence.statistic;
      summary["weights"] = weights.weights;
    } else if (args.method == "downsample" || args.method == "upsample") {
      const auto attribute = stats::resolve_attribute(data, config, require_string(params, "attribute"));
      const auto mapper = stats::CellMapper::build(data, attribute);
      const auto target = target_marginal_for(params, args, data, mapper, columns);
      std::optional<std::size_t> n_out;
      if (params.contains("n")) n_out = params["n"].get<std::size_t>();
      const auto mode = args.method == "downsample" ? mitigate::ResampleMode::down
                                                    : mitigate::ResampleMode::up_with_replacement;
      const auto result = mitigate::stratified_resample(data, attribute, target, mode, seed, n_out);
      const auto before = stats::attribute_marginal(data, mapper, stats::SplitFilter::both).probabilities();
      const auto after = stats::attribute_marginal(result, mapper, stats::SplitFilter::both).probabilities();
      write_dataset(args.out, result, out_format, columns);
      summary["check"] = "attribute_marginal";
      summary["before"] = max_share_gap(before, target);
      summary["after"] = max_share_gap(after, target);
      summary["n_out"] = result.size();
      if (const auto w = mitigate::label_shift_warning(data, result)) summary["warning"] = *w;
    } else if (args.method == "augment") {
      mitigate::SwapLexicon lexicon;
      if (params.contains("lexicon_path")) {
        std::istringstream in(read_file(params["lexicon_path"].get<std::string>()));
        lexicon = mitigate::SwapLexicon::load(in);
      } else if (params.contains("lexicon")) {
        lexicon = mitigate::SwapLexicon(params["lexicon"].get<std::vector<std::pair<std::string, std::string>>>());
      } else {
        lexicon = mitigate::SwapLexicon({{"he", "she"}, {"him", "her"}, {"man", "woman"}});
      }
      std::optional<mitigate::AttributeFlip> flip;
      if (params.contains("flip"))
        flip = mitigate::AttributeFlip{params["flip"].at("attribute").get<std::string>(),
                                       params["flip"].at("mapping").get<std::map<std::string, std::string>>()};
      const auto result = mitigate::counterfactual_augment(data, lexicon, flip);
      auto counts = [&](const Dataset& d) {
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        for (const auto& [a, b] : lexicon.pairs()) {
          std::size_t ca = 0, cb = 0;
          for (const auto& r : d.records())
            if (r.text) {
              ca += mitigate::count_token(*r.text, a);
              cb += mitigate::count_token(*r.text, b);
            }
          j[fmt::format("{}/{}", a, b)] = {ca, cb};
        }
        return j;
      };
      write_dataset(args.out, result, out_format, columns);
      summary["check"] = "swap_pair_token_counts";
      summary["before"] = counts(data);
      summary["after"] = counts(result);
      summary["n_out"] = result.size();
    } else if (args.method == "threshold_match") {
      if (data.outcome_kind() != OutcomeKind::continuous)
        throw Error(ErrorCode::validation, "threshold_match reads scores from y_pred; outcomes must be numeric");
      const auto attribute = stats::resolve_attribute(data, config, require_string(params, "attribute"));
      const auto mapper = stats::CellMapper::build(data, attribute);
      if (!params.contains("rates")) throw Error(ErrorCode::usage, "parameter 'rates' (cell -> rate) is required");
      std::vector<mitigate::ScoredRecord> scores;
      for (const auto& r : data.records())
        if (const auto cell = mapper.cell_of(r)) scores.push_back({std::get<double>(r.y_pred), *cell});
      const auto result = mitigate::threshold_match(scores, params["rates"].get<std::map<std::string, double>>());
      nlohmann::ordered_json table = {{"attribute", attribute.name},
                                      {"thresholds", result.thresholds},
                                      {"achieved", result.achieved},
                                      {"n", result.n}};
      report::write_file_atomic(args.out, table.dump(2) + "\n");
      summary["check"] = "positive_rate";
      summary["after"] = result.achieved;
    } else if (args.method == "match_controls") {
      const auto case_label = require_string(params, "case_label");
      std::vector<AttributeSpec> attributes;
      if (!params.contains("attributes")) throw Error(ErrorCode::usage, "parameter 'attributes' is required");
      for (const auto& name : params["attributes"].get<std::vector<std::string>>())
        attributes.push_back(stats::resolve_attribute(data, config, name));
      std::vector<PredictionRecord> cases, controls;
      for (const auto& r : data.records())
        (value_text(r.y_true) == case_label ? cases : controls).push_back(r);
      const auto result = mitigate::matched_controls(cases, controls, attributes, seed);
      auto records = cases;
      records.insert(records.end(), result.controls.begin(), result.controls.end());
      write_dataset(args.out, Dataset(std::move(records), data.attribute_specs()), out_format, columns);
      summary["check"] = "matched_controls";
      summary["cases"] = cases.size();
      summary["matched"] = result.controls.size();
      summary["shortfall"] = result.shortfall;
      if (!result.warnings.empty()) summary["warnings"] = result.warnings;
    }
    out << summary.dump() << "\n";
    return kExitClean;
  } catch (const std::exception& e) {
    return fail(err, e);
  }
}

// ---------------------------------------------------------------------------
// synth, weat, debias

int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err) {
  try {
    const auto spec = synth::scenario_from_json(parse_json(read_file(args.spec), args.spec));
    const auto scenario = synth::generate(spec);
    std::error_code ec;
    fs::create_directories(args.out, ec);
    if (ec) throw Error(ErrorCode::io, fmt::format("cannot create '{}': {}", args.out, ec.message()));
    const fs::path dir(args.out);

    const auto attribute = scenario.recommended_config.attributes.front();
    nlohmann::ordered_json reference = {
        {"attribute", attribute},
        {"trusted", nullptr},
        {"target_marginal", scenario.target_marginal},
        {"calibration", nlohmann::ordered_json::parse(scenario.calibration.dump())},
        {"scenario", nlohmann::ordered_json::parse(synth::to_json(spec).dump())}};
    if (scenario.has_trusted()) {
      IdealSpec trusted;
      trusted.type = IdealSpec::Type::explicit_table;
      trusted.table = scenario.trusted_table;
      reference["trusted"] = nlohmann::ordered_json::parse(to_json(trusted).dump());
    }
    write_dataset((dir / "source.jsonl").string(), scenario.source, RecordFormat::jsonl, std::nullopt);
    write_dataset((dir / "target.jsonl").string(), scenario.target_reference, RecordFormat::jsonl, std::nullopt);
    report::write_file_atomic(dir / "reference.json", reference.dump(2) + "\n");
    report::write_file_atomic(dir / "config.json", to_json(scenario.recommended_config).dump(2) + "\n");
    out << fmt::format("wrote {} source and {} target records to {}\n", scenario.source.size(),
                       scenario.target_reference.size(), args.out);
    return kExitClean;
  } catch (const std::exception& e) {
    return fail(err, e);
  }
}

int cmd_weat(const WeatArgs& args, std::ostream& out, std::ostream& err) {
  try {
    std::istringstream in(read_file(args.embeddings));
    const auto emb = semantic::load_embeddings(in);
    const auto spec = semantic::weat_spec_from_json(parse_json(read_file(args.spec), args.spec));
    semantic::validate(spec, emb);
    const auto [seed, seed_source] = resolve_seed(args.seed, 0);
    const auto r = semantic::weat(emb, spec, args.n_permutations, derive_seed(seed, "weat"));
    const bool flagged = r.p_value < args.alpha && std::abs(r.effect_size) >= semantic::kWeatEffectFloor;
    nlohmann::ordered_json j = {{"effect_size", r.effect_size},
                                {"p_value", r.p_value},
                                {"statistic", r.statistic},
                                {"n_permutations", args.n_permutations},
                                {"seed", seed},
                                {"flagged", flagged}};
    out << j.dump() << "\n";
    return flagged ? kExitFlagged : kExitClean;
  } catch (const std::exception& e) {
    return fail(err, e);
  }
}

int cmd_debias(const DebiasArgs& args, std::ostream& out, std::ostream& err) {
  try {
    std::istringstream in(read_file(args.embeddings));
    const auto emb = semantic::load_embeddings(in);
    const auto j = parse_json(read_file(args.spec), args.spec);
    using Pairs = std::vector<std::pair<std::string, std::string>>;
    Pairs definitional, equalize;
    std::vector<std::string> neutral;
    try {
      definitional = j.at("definitional").get<Pairs>();
      if (j.contains("equalize")) equalize = j["equalize"].get<Pairs>();
      if (j.contains("neutral")) neutral = j["neutral"].get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse, fmt::format("{}: {}", args.spec, e.what()));
    }
    const auto result = semantic::hard_debias(emb, definitional, neutral, equalize);
    std::ostringstream text;
    semantic::write_embeddings(text, result);
    report::write_file_atomic(args.out, text.str());
    out << fmt::format("wrote {} vectors to {}\n", result.size(), args.out);
    return kExitClean;
  } catch (const std::exception& e) {
    return fail(err, e);
  }
}

// ---------------------------------------------------------------------------
// command line

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"biaslens: audit datasets and models for predictive bias"};
  app.require_subcommand(1);

  AuditArgs audit;
  auto* a = app.add_subcommand("audit", "run disparity and origin checks and write report.json/report.md");
  a->add_option("--data", audit.data, "prediction records (JSONL or CSV)")->required();
  a->add_option("--config", audit.config, "audit config (JSON)")->required();
  a->add_option("--target-ref", audit.target_ref, "target population: dataset, or JSON marginals");
  a->add_option("--trusted-ref", audit.trusted_ref, "trusted labels: dataset, or JSON ideal spec");
  a->add_option("--embeddings", audit.embeddings, "word vectors in word2vec text format");
  a->add_option("--out", audit.out, "output directory")->required();
  a->add_option("--seed", audit.seed, "root seed (overrides BIASLENS_SEED and the config)");
  a->add_option("--format", audit.format, "record format")->check(CLI::IsMember({"jsonl", "csv"}));

  MitigateArgs mit;
  auto* m = app.add_subcommand("mitigate", "apply a countermeasure and report before/after divergence");
  m->add_option("--data", mit.data, "prediction records")->required();
  m->add_option("--method", mit.method, fmt::format("countermeasure: {}", fmt::join(kMethods, ", ")))->required();
  m->add_option("--params", mit.params, "parameters as inline JSON or a JSON file");
  m->add_option("--seed", mit.seed, "root seed");
  m->add_option("--out", mit.out, "output file")->required();
  m->add_option("--target-ref", mit.target_ref, "target population: dataset, or JSON marginals");
  m->add_option("--config", mit.config, "audit config (for CSV column maps and binning)");
  m->add_option("--format", mit.format, "record format")->check(CLI::IsMember({"jsonl", "csv"}));

  SynthArgs syn;
  auto* s = app.add_subcommand("synth", "generate a synthetic scenario");
  s->add_option("--spec", syn.spec, "scenario spec (JSON)")->required();
  s->add_option("--out", syn.out, "output directory")->required();

  WeatArgs weat;
  auto* w = app.add_subcommand("weat", "run one WEAT probe");
  w->add_option("--embeddings", weat.embeddings, "word vectors")->required();
  w->add_option("--spec", weat.spec, "probe with X, Y, A, B word lists (JSON)")->required();
  w->add_option("--n-permutations", weat.n_permutations, "re-partitions for the p-value")
      ->check(CLI::Range(std::size_t{100}, std::size_t{100000000}));
  w->add_option("--seed", weat.seed, "root seed");
  w->add_option("--alpha", weat.alpha, "significance level")->check(CLI::Range(0.0, 1.0));

  DebiasArgs deb;
  auto* d = app.add_subcommand("debias", "hard-debias word vectors");
  d->add_option("--embeddings", deb.embeddings, "word vectors")->required();
  d->add_option("--spec", deb.spec, "definitional, neutral and equalize lists (JSON)")->required();
  d->add_option("--out", deb.out, "output vectors")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? kExitClean : kExitError;
  }
  if (a->parsed()) return cmd_audit(audit, out, err);
  if (m->parsed()) return cmd_mitigate(mit, out, err);
  if (s->parsed()) return cmd_synth(syn, out, err);
  if (w->parsed()) return cmd_weat(weat, out, err);
  if (d->parsed()) return cmd_debias(deb, out, err);
  return kExitError;
}

}  // namespace biaslens::cli
