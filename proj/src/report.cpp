#include "biaslens/report.hpp"

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "biaslens/error.hpp"
#include "biaslens/rng.hpp"
#include "report_schema.inc"

namespace biaslens::report {

namespace fs = std::filesystem;

std::set<origins::Origin> AuditReport::flagged_origins() const {
  std::set<origins::Origin> out;
  for (const auto& m : origins)
    for (auto o : m.flagged_origins()) out.insert(o);
  for (const auto& s : semantic)
    if (s.flagged) out.insert(origins::Origin::semantic_bias);
  return out;
}

bool AuditReport::any_flag() const {
  if (!flagged_origins().empty()) return true;
  for (const auto& d : disparities)
    if (d.flagged) return true;
  return false;
}

std::vector<Recommendation> recommendations(const std::set<origins::Origin>& flagged) {
  using origins::Origin;
  std::vector<Recommendation> out;
  for (auto o : flagged) {
    switch (o) {
      case Origin::label_bias:
        out.push_back({o, "post-stratification",
                       "Reweight the training data so its label distribution per group matches the trusted "
                       "reference.",
                       true});
        out.push_back({o, "retrain annotators",
                       "Review the annotation guidelines and annotator pool for the groups where labels "
                       "diverge.",
                       true});
        break;
      case Origin::selection_bias:
        out.push_back({o, "stratified sampling",
                       "Resample the training data so the attribute marginal matches the target population.",
                       true});
        out.push_back({o, "post-stratification/reweighting",
                       "Weight each record by target share over source share of its attribute cell.", true});
        break;
      case Origin::overamplification:
        out.push_back({o, "synthetically match distributions",
                       "Augment or match the data so the attribute carries less spurious evidence about the "
                       "outcome.",
                       true});
        out.push_back({o, "cost-function note",
                       "Changing the training objective to penalize amplification is outside what this tool "
                       "does.",
                       false});
        break;
      case Origin::semantic_bias:
        out.push_back({o, "retrain or retrofit embeddings",
                       "Retrain the embeddings on balanced text or retrofit them, for example with hard "
                       "debiasing.",
                       true});
        break;
    }
  }
  return out;
}

std::string content_hash(std::string_view bytes) { return fmt::format("fnv1a64:{:016x}", fnv1a64(bytes)); }

std::pair<std::string, std::string> report_timestamp() {
  std::time_t t = 0;
  std::string source = "unset";
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH"); env && *env) {
    char* end = nullptr;
    const long long v = std::strtoll(env, &end, 10);
    if (end && *end == '\0' && v >= 0) {
      t = static_cast<std::time_t>(v);
      source = "SOURCE_DATE_EPOCH";
    }
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return {buf, source};
}

namespace {

nlohmann::ordered_json table_json(const stats::Table& t) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : t) j[k] = v;
  return j;
}

nlohmann::ordered_json strings_json(const std::vector<std::string>& v) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& s : v) j.push_back(s);
  return j;
}

std::string flag_check_name(origins::Origin o) { return std::string(origins::to_string(o)); }

}  // namespace

nlohmann::ordered_json to_json(const disparity::DisparityReport& d) {
  nlohmann::ordered_json cells = nlohmann::ordered_json::object();
  for (const auto& [cell, c] : d.per_cell_detail)
    cells[cell] = {{"observed", table_json(c.observed)},
                   {"smoothed", table_json(c.smoothed)},
                   {"ideal", table_json(c.ideal)},
                   {"n", c.n},
                   {"records", c.records}};
  return {{"kind", disparity::to_string(d.kind)},
          {"attribute", d.attribute},
          {"statistic_kind", stats::to_string(d.divergence.kind)},
          {"divergence", d.divergence.statistic},
          {"per_cell_divergence", table_json(d.divergence.per_cell)},
          {"p_value", d.p_value},
          {"effect_size_nats", d.effect_size_nats},
          {"flagged", d.flagged},
          {"split_used", d.split_used},
          {"test", d.test},
          {"missing", d.missing},
          {"cells", cells},
          {"warnings", strings_json(d.warnings)}};
}

nlohmann::ordered_json to_json(const origins::OriginFinding& f) {
  nlohmann::ordered_json j = {{"origin", origins::to_string(f.origin)},
                              {"statistic_kind", stats::to_string(f.divergence.kind)},
                              {"divergence", f.divergence.statistic},
                              {"per_cell_divergence", table_json(f.divergence.per_cell)},
                              {"p_value", f.p_value},
                              {"effect_size_nats", f.effect_size_nats},
                              {"flagged", f.flagged},
                              {"evidence", f.evidence},
                              {"caveat", f.caveat},
                              {"test", f.test},
                              {"direction", nullptr},
                              {"detail", nlohmann::ordered_json::parse(f.detail.dump())},
                              {"warnings", strings_json(f.warnings)}};
  if (f.direction) j["direction"] = *f.direction;
  return j;
}

nlohmann::ordered_json to_json(const origins::DiagnosisMatrix& m) {
  auto optional_bool = [](const std::optional<bool>& b) {
    return b ? nlohmann::ordered_json(*b) : nlohmann::ordered_json(nullptr);
  };
  auto optional_finding = [](const std::optional<origins::OriginFinding>& f) {
    return f ? to_json(*f) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json cell = nlohmann::ordered_json::array();
  for (auto o : m.table_cell) cell.push_back(origins::to_string(o));
  return {{"attribute", m.attribute},
          {"representative", optional_bool(m.representative)},
          {"correct_annotation", optional_bool(m.correct_annotation)},
          {"table_cell", cell},
          {"cell_label", m.cell_label},
          {"selection", optional_finding(m.selection)},
          {"label", optional_finding(m.label)},
          {"overamplification", optional_finding(m.overamplification)},
          {"caveat", m.caveat},
          {"notes", strings_json(m.notes)}};
}

nlohmann::ordered_json to_json(const AuditReport& r) {
  nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
  for (const auto& [role, hash] : r.metadata.inputs) inputs[role] = hash;

  nlohmann::ordered_json flags = nlohmann::ordered_json::array();
  for (const auto& d : r.disparities)
    if (d.flagged) flags.push_back({{"check", fmt::format("{}_disparity", disparity::to_string(d.kind))},
                                    {"attribute", d.attribute}});
  for (const auto& m : r.origins)
    for (const auto* f : {m.selection ? &*m.selection : nullptr, m.label ? &*m.label : nullptr,
                          m.overamplification ? &*m.overamplification : nullptr})
      if (f && f->flagged) flags.push_back({{"check", flag_check_name(f->origin)}, {"attribute", m.attribute}});
  for (const auto& s : r.semantic)
    if (s.flagged) flags.push_back({{"check", "semantic_bias"}, {"attribute", nullptr}});

  const auto flagged = r.flagged_origins();
  nlohmann::ordered_json flagged_json = nlohmann::ordered_json::array();
  for (auto o : flagged) flagged_json.push_back(origins::to_string(o));
  nlohmann::ordered_json recs = nlohmann::ordered_json::array();
  for (const auto& rec : recommendations(flagged))
    recs.push_back({{"origin", origins::to_string(rec.origin)},
                    {"action", rec.action},
                    {"detail", rec.detail},
                    {"in_scope", rec.in_scope}});

  nlohmann::ordered_json disparities = nlohmann::ordered_json::array();
  for (const auto& d : r.disparities) disparities.push_back(to_json(d));
  nlohmann::ordered_json matrices = nlohmann::ordered_json::array();
  for (const auto& m : r.origins) matrices.push_back(to_json(m));
  nlohmann::ordered_json semantic = nlohmann::ordered_json::array();
  for (const auto& s : r.semantic) semantic.push_back(to_json(s));
  nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
  for (const auto& s : r.skipped)
    skipped.push_back({{"check", s.check},
                       {"attribute", s.attribute ? nlohmann::ordered_json(*s.attribute) : nullptr},
                       {"reason", s.reason}});

  auto prompt = [](const char* text) { return nlohmann::ordered_json{{"prompt", text}, {"value", nullptr}}; };
  nlohmann::ordered_json statement = {
      {"curation_rationale", prompt("Why were these texts or records chosen, and by whom?")},
      {"language_variety", prompt("Which languages and dialects are represented?")},
      {"author_demographics", prompt("Who produced the data (age, gender, region, other relevant traits)?")},
      {"annotator_demographics", prompt("Who labeled the data, and with what training and guidelines?")},
      {"collection_setting", prompt("When, where and in what setting was the data produced?")},
      {"data_characteristics", prompt("What genre, topic and structure does the data have?")},
  };

  std::vector<std::string> notes = {
      "Aggregate divergences sum per-cell G statistics; per-cell values are listed alongside.",
      "p-values are per check and are not adjusted for the number of checks in this report.",
      "A flag needs both p < alpha and an effect of at least effect_floor nats.",
      "Attributes are audited one at a time; intersections of attributes are not formed.",
  };
  for (const auto& n : r.notes) notes.push_back(n);

  return {{"schema_version", kSchemaVersion},
          {"metadata",
           {{"tool", "biaslens"},
            {"tool_version", kToolVersion},
            {"config_hash", r.metadata.config_hash},
            {"seed", r.metadata.seed},
            {"seed_source", r.metadata.seed_source},
            {"timestamp", r.metadata.timestamp},
            {"timestamp_source", r.metadata.timestamp_source},
            {"inputs", inputs}}},
          {"config", nlohmann::ordered_json::parse(r.config.dump())},
          {"disparities", disparities},
          {"origins", matrices},
          {"semantic", semantic},
          {"flags", flags},
          {"flagged_origins", flagged_json},
          {"recommendations", recs},
          {"data_statement", statement},
          {"known_unknowns",
           "Only the configured attributes and the supplied references were examined. Attributes that were "
           "not recorded, combinations of attributes, and groups missing from the references can still "
           "carry bias that this report does not show."},
          {"notes", strings_json(notes)},
          {"skipped", skipped}};
}

// ---------------------------------------------------------------------------
// Markdown

namespace {

std::string num(const nlohmann::ordered_json& v) {
  if (v.is_null()) return "n/a";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  return fmt::format("{:.6g}", v.get<double>());
}

std::string yes_no(const nlohmann::ordered_json& v) {
  if (v.is_null()) return "not checked";
  return v.get<bool>() ? "yes" : "no";
}

std::string compact(const nlohmann::ordered_json& table) {
  std::string out;
  for (const auto& [k, v] : table.items()) {
    if (!out.empty()) out += ", ";
    out += fmt::format("{}={}", k, num(v));
  }
  return out.empty() ? "-" : out;
}

std::string escape(std::string s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += "\\|";
    else if (c == '\n') out += ' ';
    else out += c;
  }
  return out;
}

void finding_row(std::ostringstream& md, const std::string& name, const nlohmann::ordered_json& f) {
  if (f.is_null()) {
    md << fmt::format("| {} | not run | | | | |\n", name);
    return;
  }
  md << fmt::format("| {} | {} | {} | {} | {} | {} |\n", name, num(f["divergence"]), num(f["p_value"]),
                    num(f["effect_size_nats"]), f["flagged"].get<bool>() ? "**yes**" : "no",
                    f["direction"].is_null() ? "" : f["direction"].get<std::string>());
}

}  // namespace

std::string render_markdown(const nlohmann::ordered_json& r) {
  std::ostringstream md;
  const auto& meta = r.at("metadata");
  md << "# Bias audit report\n\n";
  md << "| field | value |\n|---|---|\n";
  md << fmt::format("| tool | {} {} |\n", meta["tool"].get<std::string>(), meta["tool_version"].get<std::string>());
  md << fmt::format("| schema version | {} |\n", r["schema_version"].get<std::string>());
  md << fmt::format("| config hash | `{}` |\n", meta["config_hash"].get<std::string>());
  md << fmt::format("| seed | {} ({}) |\n", num(meta["seed"]), meta["seed_source"].get<std::string>());
  md << fmt::format("| timestamp | {} |\n", meta["timestamp"].get<std::string>());
  for (const auto& [role, hash] : meta["inputs"].items())
    md << fmt::format("| input {} | `{}` |\n", role, hash.get<std::string>());

  md << "\n## Flags\n\n";
  if (r["flags"].empty()) md << "No check flagged.\n";
  for (const auto& f : r["flags"])
    md << fmt::format("- {}{}\n", f["check"].get<std::string>(),
                      f["attribute"].is_null() ? "" : fmt::format(" on `{}`", f["attribute"].get<std::string>()));

  md << "\n## Disparities\n\n";
  if (r["disparities"].empty()) {
    md << "No disparity checks ran.\n";
  } else {
    md << "| attribute | kind | statistic | divergence | p-value | effect (nats) | flagged | split |\n";
    md << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& d : r["disparities"])
      md << fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} |\n", d["attribute"].get<std::string>(),
                        d["kind"].get<std::string>(), d["statistic_kind"].get<std::string>(), num(d["divergence"]),
                        num(d["p_value"]), num(d["effect_size_nats"]), d["flagged"].get<bool>() ? "**yes**" : "no",
                        d["split_used"].get<std::string>());
    for (const auto& d : r["disparities"]) {
      md << fmt::format("\n### {} disparity: {}\n\n", d["kind"].get<std::string>(), d["attribute"].get<std::string>());
      md << fmt::format("Test: {}.\n\n", escape(d["test"].get<std::string>()));
      md << "| cell | n | observed | ideal | cell divergence |\n|---|---|---|---|---|\n";
      for (const auto& [cell, c] : d["cells"].items()) {
        const auto& per = d["per_cell_divergence"];
        md << fmt::format("| {} | {} | {} | {} | {} |\n", escape(cell), num(c["n"]), compact(c["observed"]),
                          compact(c["ideal"]), per.contains(cell) ? num(per[cell]) : "n/a");
      }
      for (const auto& w : d["warnings"]) md << fmt::format("\n> {}\n", escape(w.get<std::string>()));
    }
  }

  md << "\n## Origins\n";
  if (r["origins"].empty()) md << "\nNo origin checks ran.\n";
  for (const auto& m : r["origins"]) {
    md << fmt::format("\n### {}\n\n", m["attribute"].get<std::string>());
    md << fmt::format("Representative sample: {}. Correct annotation: {}. Interaction cell: {}.\n\n",
                      yes_no(m["representative"]), yes_no(m["correct_annotation"]),
                      m["cell_label"].get<std::string>());
    md << "| check | divergence | p-value | effect (nats) | flagged | direction |\n|---|---|---|---|---|---|\n";
    finding_row(md, "selection", m["selection"]);
    finding_row(md, "label", m["label"]);
    finding_row(md, "overamplification", m["overamplification"]);
    for (const auto& n : m["notes"]) md << fmt::format("\n- {}", escape(n.get<std::string>()));
    if (!m["notes"].empty()) md << "\n";
    md << fmt::format("\n_{}_\n", m["caveat"].get<std::string>());
  }

  md << "\n## Semantic\n\n";
  if (r["semantic"].empty()) md << "No embedding probes ran.\n";
  for (const auto& s : r["semantic"])
    md << fmt::format("- {} (p = {}, flagged: {})\n", escape(s["evidence"].get<std::string>()), num(s["p_value"]),
                      s["flagged"].get<bool>() ? "yes" : "no");

  md << "\n## Recommendations\n\n";
  if (r["recommendations"].empty()) md << "Nothing flagged, so no countermeasure is suggested.\n";
  for (const auto& rec : r["recommendations"])
    md << fmt::format("- **{}** ({}{}): {}\n", rec["action"].get<std::string>(), rec["origin"].get<std::string>(),
                      rec["in_scope"].get<bool>() ? "" : ", out of scope", rec["detail"].get<std::string>());

  md << "\n## Data statement\n\nFill these in for the dataset that was audited.\n\n";
  for (const auto& [field, entry] : r["data_statement"].items())
    md << fmt::format("- **{}**: {} {}\n", field, entry["prompt"].get<std::string>(),
                      entry["value"].is_null() ? "_(not provided)_" : entry["value"].get<std::string>());

  md << "\n## Known unknowns\n\n" << r["known_unknowns"].get<std::string>() << "\n";

  md << "\n## Notes\n\n";
  for (const auto& n : r["notes"]) md << "- " << n.get<std::string>() << "\n";
  if (!r["skipped"].empty()) {
    md << "\n## Skipped checks\n\n";
    for (const auto& s : r["skipped"])
      md << fmt::format("- {}{}: {}\n", s["check"].get<std::string>(),
                        s["attribute"].is_null() ? "" : fmt::format(" on `{}`", s["attribute"].get<std::string>()),
                        s["reason"].get<std::string>());
  }
  return md.str();
}

// ---------------------------------------------------------------------------
// Schema

const nlohmann::json& report_schema() {
  static const nlohmann::json schema = nlohmann::json::parse(kReportSchemaText);
  return schema;
}

namespace {

bool type_matches(const nlohmann::json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "null") return v.is_null();
  if (type == "number") return v.is_number();
  if (type == "integer")
    return v.is_number_integer() || (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>());
  return false;
}

class Validator {
 public:
  explicit Validator(const nlohmann::json& root) : root_(root) {}

  void check(const nlohmann::json& v, const nlohmann::json& s, const std::string& path,
             std::vector<std::string>& out) const {
    if (s.is_boolean()) {
      if (!s.get<bool>()) out.push_back(fmt::format("{}: not allowed", path));
      return;
    }
    if (s.contains("$ref")) {
      check(v, resolve(s["$ref"].get<std::string>()), path, out);
      return;
    }
    if (s.contains("type")) {
      bool ok = false;
      if (s["type"].is_string()) ok = type_matches(v, s["type"]);
      else
        for (const auto& t : s["type"]) ok = ok || type_matches(v, t);
      if (!ok) {
        out.push_back(fmt::format("{}: expected type {}, got {}", path, s["type"].dump(), v.type_name()));
        return;
      }
    }
    if (s.contains("const") && v != s["const"])
      out.push_back(fmt::format("{}: expected {}", path, s["const"].dump()));
    if (s.contains("enum")) {
      bool ok = false;
      for (const auto& e : s["enum"]) ok = ok || v == e;
      if (!ok) out.push_back(fmt::format("{}: {} not in {}", path, v.dump(), s["enum"].dump()));
    }
    if (v.is_number()) {
      if (s.contains("minimum") && v.get<double>() < s["minimum"].get<double>())
        out.push_back(fmt::format("{}: below minimum {}", path, s["minimum"].dump()));
      if (s.contains("maximum") && v.get<double>() > s["maximum"].get<double>())
        out.push_back(fmt::format("{}: above maximum {}", path, s["maximum"].dump()));
    }
    if (s.contains("anyOf")) {
      bool ok = false;
      for (const auto& sub : s["anyOf"]) {
        std::vector<std::string> errs;
        check(v, sub, path, errs);
        if (errs.empty()) {
          ok = true;
          break;
        }
      }
      if (!ok) out.push_back(fmt::format("{}: matches no alternative", path));
    }
    if (v.is_object()) {
      if (s.contains("required"))
        for (const auto& key : s["required"])
          if (!v.contains(key.get<std::string>()))
            out.push_back(fmt::format("{}: missing required '{}'", path, key.get<std::string>()));
      for (const auto& [key, value] : v.items()) {
        const std::string sub = path + "/" + key;
        if (s.contains("properties") && s["properties"].contains(key)) check(value, s["properties"][key], sub, out);
        else if (s.contains("additionalProperties")) check(value, s["additionalProperties"], sub, out);
      }
    }
    if (v.is_array() && s.contains("items"))
      for (std::size_t i = 0; i < v.size(); ++i) check(v[i], s["items"], fmt::format("{}/{}", path, i), out);
  }

 private:
  const nlohmann::json& resolve(const std::string& ref) const {
    if (ref.rfind("#/", 0) != 0) throw Error(ErrorCode::validation, fmt::format("unsupported $ref '{}'", ref));
    return root_.at(nlohmann::json::json_pointer(ref.substr(1)));
  }

  const nlohmann::json& root_;
};

}  // namespace

std::vector<std::string> validate_schema(const nlohmann::json& doc, const nlohmann::json& schema) {
  std::vector<std::string> out;
  Validator(schema).check(doc, schema, "", out);
  return out;
}

// ---------------------------------------------------------------------------
// Atomic writes

namespace {

void write_whole(const fs::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, fmt::format("cannot open '{}' for writing", path.string()));
  out << contents;
  out.flush();
  if (!out) throw Error(ErrorCode::io, fmt::format("failed writing '{}'", path.string()));
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& contents) {
  const fs::path tmp = path.string() + ".tmp";
  try {
    write_whole(tmp, contents);
    fs::rename(tmp, path);
  } catch (const fs::filesystem_error& e) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw Error(ErrorCode::io, e.what());
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

void write_report_files(const fs::path& dir, const std::string& json_text, const std::string& markdown,
                        const FaultHook& hook) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io, fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  const fs::path md = dir / "report.md", js = dir / "report.json";
  const fs::path md_tmp = dir / "report.md.tmp", js_tmp = dir / "report.json.tmp";
  auto step = [&](std::string_view name) {
    if (hook) hook(name);
  };
  bool md_renamed = false;
  auto cleanup = [&] {
    std::error_code ignored;
    fs::remove(md_tmp, ignored);
    fs::remove(js_tmp, ignored);
    // Without report.json the run did not finish; do not leave its markdown.
    if (md_renamed) fs::remove(md, ignored);
  };
  try {
    write_whole(md_tmp, markdown);
    step("write report.md.tmp");
    write_whole(js_tmp, json_text);
    step("write report.json.tmp");
    fs::remove(js);
    step("remove stale report.json");
    fs::rename(md_tmp, md);
    md_renamed = true;
    step("rename report.md");
    fs::rename(js_tmp, js);
  } catch (const fs::filesystem_error& e) {
    cleanup();
    throw Error(ErrorCode::io, e.what());
  } catch (...) {
    cleanup();
    throw;
  }
  step("rename report.json");
}

}  // namespace biaslens::report
