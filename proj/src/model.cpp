#include "biaslens/model.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <unordered_set>

#include <fmt/format.h>

#include "biaslens/error.hpp"

namespace biaslens {

using nlohmann::json;

OutcomeKind kind_of(const OutcomeValue& value) {
  return std::holds_alternative<std::string>(value) ? OutcomeKind::categorical
                                                    : OutcomeKind::continuous;
}

std::string value_text(const std::variant<std::string, double>& value) {
  if (const auto* s = std::get_if<std::string>(&value)) return *s;
  return fmt::format("{}", std::get<double>(value));
}

std::string_view to_string(Split split) { return split == Split::source ? "source" : "target"; }

Split parse_split(std::string_view text) {
  if (text == "source") return Split::source;
  if (text == "target") return Split::target;
  throw Error(ErrorCode::parse, fmt::format("split must be 'source' or 'target', got '{}'", text));
}

std::string_view to_string(OutcomeKind kind) {
  return kind == OutcomeKind::categorical ? "categorical" : "continuous";
}

std::string_view to_string(AttributeKind kind) {
  return kind == AttributeKind::categorical ? "categorical" : "continuous";
}

namespace {

AttributeKind attribute_kind(const AttributeValue& v) {
  return std::holds_alternative<std::string>(v) ? AttributeKind::categorical
                                                : AttributeKind::continuous;
}

void check_binning(const AttributeSpec& spec) {
  if (!spec.binning) return;
  const auto& b = *spec.binning;
  if (b.strategy == Binning::Strategy::quantile) {
    if (b.n_bins < 1)
      throw Error(ErrorCode::validation,
                  fmt::format("attribute '{}': quantile binning needs n_bins >= 1", spec.name));
  } else {
    if (b.edges.size() < 2)
      throw Error(ErrorCode::validation,
                  fmt::format("attribute '{}': fixed-edge binning needs >= 2 edges", spec.name));
    for (std::size_t i = 1; i < b.edges.size(); ++i) {
      if (!(b.edges[i] > b.edges[i - 1]) || !std::isfinite(b.edges[i]) ||
          !std::isfinite(b.edges[i - 1]))
        throw Error(ErrorCode::validation,
                    fmt::format("attribute '{}': edges must be finite and strictly increasing",
                                spec.name));
    }
  }
}

}  // namespace

Dataset::Dataset(std::vector<PredictionRecord> records, std::vector<AttributeSpec> specs,
                 std::optional<OutcomeKind> declared_kind)
    : records_(std::move(records)) {
  std::unordered_set<std::string> ids;
  ids.reserve(records_.size());
  std::optional<OutcomeKind> kind = declared_kind;
  std::map<std::string, AttributeKind> seen;

  for (const auto& r : records_) {
    if (!ids.insert(r.id).second)
      throw Error(ErrorCode::validation, fmt::format("duplicate record id '{}'", r.id));
    const auto k_true = kind_of(r.y_true);
    if (kind_of(r.y_pred) != k_true)
      throw Error(ErrorCode::validation,
                  fmt::format("record '{}': y_true and y_pred have different kinds", r.id));
    if (!kind) kind = k_true;
    if (*kind != k_true)
      throw Error(ErrorCode::validation,
                  fmt::format("record '{}': mixed outcome kinds in dataset", r.id));
    if (k_true == OutcomeKind::continuous &&
        (!std::isfinite(std::get<double>(r.y_true)) || !std::isfinite(std::get<double>(r.y_pred))))
      throw Error(ErrorCode::validation, fmt::format("record '{}': non-finite outcome", r.id));
    if (!(r.weight >= 0.0) || !std::isfinite(r.weight))
      throw Error(ErrorCode::validation,
                  fmt::format("record '{}': weight must be finite and >= 0", r.id));
    for (const auto& [name, value] : r.attrs) {
      const auto ak = attribute_kind(value);
      if (ak == AttributeKind::continuous && !std::isfinite(std::get<double>(value)))
        throw Error(ErrorCode::validation,
                    fmt::format("record '{}': attribute '{}' is not finite", r.id, name));
      auto [it, inserted] = seen.emplace(name, ak);
      if (!inserted && it->second != ak)
        throw Error(ErrorCode::validation,
                    fmt::format("attribute '{}' mixes categorical and continuous values", name));
    }
  }
  outcome_kind_ = kind.value_or(OutcomeKind::categorical);

  for (auto& spec : specs) {
    auto it = seen.find(spec.name);
    if (it != seen.end() && it->second != spec.kind)
      throw Error(ErrorCode::validation,
                  fmt::format("attribute '{}' declared {} but values are {}", spec.name,
                              to_string(spec.kind), to_string(it->second)));
    check_binning(spec);
    seen.erase(spec.name);
    specs_.push_back(std::move(spec));
  }
  for (const auto& [name, kind_seen] : seen) specs_.push_back({name, kind_seen, std::nullopt});
  std::sort(specs_.begin(), specs_.end(),
            [](const AttributeSpec& a, const AttributeSpec& b) { return a.name < b.name; });
}

const AttributeSpec* Dataset::find_attribute(std::string_view name) const {
  for (const auto& s : specs_)
    if (s.name == name) return &s;
  return nullptr;
}

bool Dataset::has_split(Split split) const {
  return std::any_of(records_.begin(), records_.end(),
                     [split](const PredictionRecord& r) { return r.split == split; });
}

Dataset Dataset::with_binning(const std::map<std::string, Binning>& binning) const {
  Dataset copy = *this;
  for (auto& spec : copy.specs_) {
    auto it = binning.find(spec.name);
    if (it == binning.end()) continue;
    spec.binning = it->second;
    check_binning(spec);
  }
  return copy;
}

// ---------------------------------------------------------------------------
// Formats

RecordFormat parse_format(std::string_view text) {
  if (text == "jsonl") return RecordFormat::jsonl;
  if (text == "csv") return RecordFormat::csv;
  throw Error(ErrorCode::usage, fmt::format("unknown record format '{}' (jsonl, csv)", text));
}

ColumnMap column_map_from_json(const json& j) {
  ColumnMap m;
  m.id = j.value("id", m.id);
  m.y_true = j.value("y_true", m.y_true);
  m.y_pred = j.value("y_pred", m.y_pred);
  m.split = j.value("split", m.split);
  if (j.contains("weight")) m.weight = j.at("weight").get<std::string>();
  if (j.contains("text")) m.text = j.at("text").get<std::string>();
  const auto kind = j.value("outcome_kind", std::string("categorical"));
  if (kind == "categorical")
    m.outcome_kind = OutcomeKind::categorical;
  else if (kind == "continuous")
    m.outcome_kind = OutcomeKind::continuous;
  else
    throw Error(ErrorCode::validation, "columns.outcome_kind must be categorical or continuous");
  for (const auto& a : j.value("attributes", json::array())) {
    ColumnMap::Attribute attr;
    attr.column = a.at("column").get<std::string>();
    attr.name = a.value("name", attr.column);
    const auto ak = a.value("kind", std::string("categorical"));
    if (ak == "categorical")
      attr.kind = AttributeKind::categorical;
    else if (ak == "continuous")
      attr.kind = AttributeKind::continuous;
    else
      throw Error(ErrorCode::validation, "attribute kind must be categorical or continuous");
    m.attributes.push_back(std::move(attr));
  }
  return m;
}

json to_json(const ColumnMap& m) {
  json j = {{"id", m.id},
            {"y_true", m.y_true},
            {"y_pred", m.y_pred},
            {"split", m.split},
            {"outcome_kind", std::string(to_string(m.outcome_kind))}};
  if (m.weight) j["weight"] = *m.weight;
  if (m.text) j["text"] = *m.text;
  json attrs = json::array();
  for (const auto& a : m.attributes)
    attrs.push_back({{"column", a.column}, {"name", a.name}, {"kind", std::string(to_string(a.kind))}});
  j["attributes"] = attrs;
  return j;
}

namespace {

OutcomeValue outcome_from_json(const json& v, const char* field, std::size_t line) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return v.get<double>();
  throw Error(ErrorCode::parse, fmt::format("'{}' must be a string or number", field), line);
}

PredictionRecord record_from_json(const json& j, std::size_t line) {
  if (!j.is_object()) throw Error(ErrorCode::parse, "record must be a JSON object", line);
  PredictionRecord r;
  for (const char* key : {"id", "y_true", "y_pred"})
    if (!j.contains(key)) throw Error(ErrorCode::parse, fmt::format("missing '{}'", key), line);
  if (!j["id"].is_string()) throw Error(ErrorCode::parse, "'id' must be a string", line);
  r.id = j["id"].get<std::string>();
  r.y_true = outcome_from_json(j["y_true"], "y_true", line);
  r.y_pred = outcome_from_json(j["y_pred"], "y_pred", line);
  if (j.contains("attrs")) {
    const auto& a = j["attrs"];
    if (!a.is_object()) throw Error(ErrorCode::parse, "'attrs' must be an object", line);
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (it.value().is_null()) continue;  // explicit missing value
      if (it.value().is_string())
        r.attrs.emplace(it.key(), it.value().get<std::string>());
      else if (it.value().is_number())
        r.attrs.emplace(it.key(), it.value().get<double>());
      else
        throw Error(ErrorCode::parse,
                    fmt::format("attribute '{}' must be a string or number", it.key()), line);
    }
  }
  if (j.contains("split")) {
    if (!j["split"].is_string()) throw Error(ErrorCode::parse, "'split' must be a string", line);
    try {
      r.split = parse_split(j["split"].get<std::string>());
    } catch (const Error& e) {
      throw Error(ErrorCode::parse, e.what(), line);
    }
  }
  if (j.contains("text") && !j["text"].is_null()) {
    if (!j["text"].is_string()) throw Error(ErrorCode::parse, "'text' must be a string", line);
    r.text = j["text"].get<std::string>();
  }
  if (j.contains("weight")) {
    if (!j["weight"].is_number()) throw Error(ErrorCode::parse, "'weight' must be a number", line);
    r.weight = j["weight"].get<double>();
  }
  return r;
}

// Minimal RFC 4180 reader: quoted fields, doubled quotes, CRLF, and newlines
// inside quotes. Returns false at end of input.
bool read_csv_row(std::istream& in, std::vector<std::string>& fields, std::size_t& line) {
  fields.clear();
  int c = in.peek();
  if (c == std::char_traits<char>::eof()) return false;
  ++line;
  const std::size_t start_line = line;
  std::string field;
  bool quoted = false;
  bool field_was_quoted = false;
  while (true) {
    c = in.get();
    if (c == std::char_traits<char>::eof()) {
      if (quoted) throw Error(ErrorCode::parse, "unterminated quoted field", start_line);
      fields.push_back(std::move(field));
      return true;
    }
    const char ch = static_cast<char>(c);
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get();
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line;
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"') {
      if (!field.empty() || field_was_quoted)
        throw Error(ErrorCode::parse, "quote inside unquoted field", start_line);
      quoted = true;
      field_was_quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
      field_was_quoted = false;
    } else if (ch == '\r') {
      if (in.peek() == '\n') in.get();
      fields.push_back(std::move(field));
      return true;
    } else if (ch == '\n') {
      fields.push_back(std::move(field));
      return true;
    } else {
      if (field_was_quoted)
        throw Error(ErrorCode::parse, "characters after closing quote", start_line);
      field.push_back(ch);
    }
  }
}

double parse_real(const std::string& text, std::string_view what, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw Error(ErrorCode::parse, fmt::format("{}: '{}' is not a number", what, text), line);
  }
  if (used != text.size())
    throw Error(ErrorCode::parse, fmt::format("{}: '{}' is not a number", what, text), line);
  return v;
}

Dataset parse_csv(std::istream& in, const ColumnMap& cols) {
  std::size_t line = 0;
  std::vector<std::string> header;
  if (!read_csv_row(in, header, line)) return Dataset({}, {}, cols.outcome_kind);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) index[header[i]] = i;
  auto column = [&](const std::string& name) -> std::size_t {
    auto it = index.find(name);
    if (it == index.end())
      throw Error(ErrorCode::parse, fmt::format("CSV header lacks column '{}'", name), 1);
    return it->second;
  };
  const auto c_id = column(cols.id), c_true = column(cols.y_true), c_pred = column(cols.y_pred),
             c_split = column(cols.split);
  const std::optional<std::size_t> c_weight =
      cols.weight ? std::optional(column(*cols.weight)) : std::nullopt;
  const std::optional<std::size_t> c_text =
      cols.text ? std::optional(column(*cols.text)) : std::nullopt;
  std::vector<std::size_t> c_attr;
  std::vector<AttributeSpec> specs;
  for (const auto& a : cols.attributes) {
    c_attr.push_back(column(a.column));
    specs.push_back({a.name, a.kind, std::nullopt});
  }

  std::vector<PredictionRecord> records;
  std::unordered_set<std::string> ids;
  std::vector<std::string> row;
  while (true) {
    const std::size_t row_line = line + 1;
    if (!read_csv_row(in, row, line)) break;
    if (row.size() == 1 && row[0].empty()) continue;  // blank line
    if (row.size() != header.size())
      throw Error(ErrorCode::parse,
                  fmt::format("expected {} fields, found {}", header.size(), row.size()), row_line);
    PredictionRecord r;
    r.id = row[c_id];
    if (r.id.empty()) throw Error(ErrorCode::parse, "empty id", row_line);
    if (!ids.insert(r.id).second)
      throw Error(ErrorCode::validation, fmt::format("duplicate record id '{}'", r.id), row_line);
    if (cols.outcome_kind == OutcomeKind::categorical) {
      r.y_true = row[c_true];
      r.y_pred = row[c_pred];
    } else {
      r.y_true = parse_real(row[c_true], "y_true", row_line);
      r.y_pred = parse_real(row[c_pred], "y_pred", row_line);
    }
    try {
      r.split = parse_split(row[c_split]);
    } catch (const Error& e) {
      throw Error(ErrorCode::parse, e.what(), row_line);
    }
    if (c_weight && !row[*c_weight].empty()) r.weight = parse_real(row[*c_weight], "weight", row_line);
    if (c_text && !row[*c_text].empty()) r.text = row[*c_text];
    for (std::size_t k = 0; k < c_attr.size(); ++k) {
      const auto& cell = row[c_attr[k]];
      if (cell.empty()) continue;
      if (cols.attributes[k].kind == AttributeKind::categorical)
        r.attrs.emplace(cols.attributes[k].name, cell);
      else
        r.attrs.emplace(cols.attributes[k].name,
                        parse_real(cell, cols.attributes[k].name, row_line));
    }
    records.push_back(std::move(r));
  }
  return Dataset(std::move(records), std::move(specs), cols.outcome_kind);
}

Dataset parse_jsonl(std::istream& in) {
  std::vector<PredictionRecord> records;
  std::unordered_set<std::string> ids;
  std::optional<OutcomeKind> kind;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); }))
      continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::parse, fmt::format("invalid JSON ({})", e.what()), line);
    }
    auto r = record_from_json(j, line);
    if (!ids.insert(r.id).second)
      throw Error(ErrorCode::validation, fmt::format("duplicate record id '{}'", r.id), line);
    const auto k = kind_of(r.y_true);
    if (kind_of(r.y_pred) != k)
      throw Error(ErrorCode::validation, "y_true and y_pred have different kinds", line);
    if (kind && *kind != k) throw Error(ErrorCode::validation, "mixed outcome kinds", line);
    kind = k;
    records.push_back(std::move(r));
  }
  return Dataset(std::move(records));
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

ColumnMap default_column_map(const Dataset& d) {
  ColumnMap m;
  m.outcome_kind = d.outcome_kind();
  m.weight = "weight";
  const bool any_text = std::any_of(d.records().begin(), d.records().end(),
                                    [](const PredictionRecord& r) { return r.text.has_value(); });
  if (any_text) m.text = "text";
  for (const auto& s : d.attribute_specs()) m.attributes.push_back({s.name, s.name, s.kind});
  return m;
}

}  // namespace

Dataset parse_records(std::istream& in, RecordFormat format, const std::optional<ColumnMap>& columns) {
  if (format == RecordFormat::jsonl) return parse_jsonl(in);
  if (!columns) throw Error(ErrorCode::usage, "CSV input requires a column map");
  return parse_csv(in, *columns);
}

nlohmann::ordered_json record_to_json(const PredictionRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  auto put = [](const OutcomeValue& v) -> nlohmann::ordered_json {
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    return std::get<double>(v);
  };
  j["y_true"] = put(r.y_true);
  j["y_pred"] = put(r.y_pred);
  nlohmann::ordered_json attrs = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.attrs) attrs[k] = put(v);
  j["attrs"] = attrs;
  j["split"] = std::string(to_string(r.split));
  if (r.text) j["text"] = *r.text;
  j["weight"] = r.weight;
  return j;
}

void serialize_records(std::ostream& out, const Dataset& d, RecordFormat format,
                       const std::optional<ColumnMap>& columns) {
  if (format == RecordFormat::jsonl) {
    for (const auto& r : d.records()) out << record_to_json(r).dump() << '\n';
    return;
  }
  const ColumnMap m = columns ? *columns : default_column_map(d);
  std::vector<std::string> header = {m.id, m.y_true, m.y_pred, m.split};
  if (m.weight) header.push_back(*m.weight);
  if (m.text) header.push_back(*m.text);
  for (const auto& a : m.attributes) header.push_back(a.column);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << csv_escape(header[i]);
  out << '\n';
  for (const auto& r : d.records()) {
    std::vector<std::string> row = {r.id, value_text(r.y_true), value_text(r.y_pred),
                                    std::string(to_string(r.split))};
    if (m.weight) row.push_back(fmt::format("{}", r.weight));
    if (m.text) row.push_back(r.text.value_or(""));
    for (const auto& a : m.attributes) {
      auto it = r.attrs.find(a.name);
      row.push_back(it == r.attrs.end() ? std::string() : value_text(it->second));
    }
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_escape(row[i]);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Config

namespace {

std::map<std::string, std::map<std::string, double>> table_from_json(const json& j) {
  std::map<std::string, std::map<std::string, double>> t;
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto& row = t[it.key()];
    for (auto jt = it.value().begin(); jt != it.value().end(); ++jt) row[jt.key()] = jt.value().get<double>();
  }
  return t;
}

}  // namespace

IdealSpec ideal_spec_from_json(const json& j) {
  IdealSpec s;
  const auto type = j.at("type").get<std::string>();
  if (type == "explicit") {
    s.type = IdealSpec::Type::explicit_table;
    s.table = table_from_json(j.at("table"));
  } else if (type == "uniform") {
    s.type = IdealSpec::Type::uniform;
  } else if (type == "empirical") {
    s.type = IdealSpec::Type::empirical;
    s.from = j.value("from", s.from);
    s.field = j.value("field", s.field);
    s.smoothing = j.value("smoothing", 0.0);
    if (s.from != "source" && s.from != "target_ref" && s.from != "trusted_ref")
      throw Error(ErrorCode::validation, "empirical ideal 'from' must be source, target_ref or trusted_ref");
    if (s.field != "y_true" && s.field != "y_pred")
      throw Error(ErrorCode::validation, "empirical ideal 'field' must be y_true or y_pred");
    if (s.smoothing < 0) throw Error(ErrorCode::validation, "empirical ideal smoothing must be >= 0");
  } else if (type == "toward_uniform") {
    s.type = IdealSpec::Type::toward_uniform;
    s.lambda = j.at("lambda").get<double>();
    if (!(s.lambda >= 0.0 && s.lambda <= 1.0))
      throw Error(ErrorCode::validation, "toward_uniform lambda must lie in [0, 1]");
    s.base = std::make_shared<IdealSpec>(ideal_spec_from_json(j.at("base")));
  } else {
    throw Error(ErrorCode::validation, fmt::format("unknown ideal type '{}'", type));
  }
  return s;
}

json to_json(const IdealSpec& s) {
  switch (s.type) {
    case IdealSpec::Type::explicit_table: return {{"type", "explicit"}, {"table", s.table}};
    case IdealSpec::Type::uniform: return {{"type", "uniform"}};
    case IdealSpec::Type::empirical:
      return {{"type", "empirical"}, {"from", s.from}, {"field", s.field}, {"smoothing", s.smoothing}};
    case IdealSpec::Type::toward_uniform:
      return {{"type", "toward_uniform"}, {"lambda", s.lambda}, {"base", to_json(*s.base)}};
  }
  return {};
}

Binning binning_from_json(const json& j) {
  Binning b;
  const auto strategy = j.value("strategy", std::string("quantile"));
  if (strategy == "quantile") {
    b.strategy = Binning::Strategy::quantile;
    b.n_bins = j.at("n_bins").get<int>();
  } else if (strategy == "fixed_edges" || strategy == "fixed-edges") {
    b.strategy = Binning::Strategy::fixed_edges;
    b.edges = j.at("edges").get<std::vector<double>>();
  } else {
    throw Error(ErrorCode::validation, fmt::format("unknown binning strategy '{}'", strategy));
  }
  return b;
}

json to_json(const Binning& b) {
  if (b.strategy == Binning::Strategy::quantile) return {{"strategy", "quantile"}, {"n_bins", b.n_bins}};
  return {{"strategy", "fixed_edges"}, {"edges", b.edges}};
}

IdealSpec AuditConfig::ideal_for(const std::string& attribute) const {
  if (auto it = ideal.find(attribute); it != ideal.end()) return it->second;
  if (auto it = ideal.find("*"); it != ideal.end()) return it->second;
  return IdealSpec{};
}

AuditConfig config_from_json(const json& j) {
  static const std::set<std::string> known = {
      "attributes", "ideal",   "alpha",   "effect_floor",     "n_permutations", "seed",
      "smoothing_alpha", "binning", "columns", "target_marginals", "weat"};
  if (!j.is_object()) throw Error(ErrorCode::validation, "config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw Error(ErrorCode::validation, fmt::format("unknown config key '{}'", it.key()));

  AuditConfig c;
  try {
    c.attributes = j.value("attributes", std::vector<std::string>{});
    if (j.contains("ideal")) {
      const auto& ideal = j["ideal"];
      if (ideal.contains("type")) {
        c.ideal["*"] = ideal_spec_from_json(ideal);
      } else {
        for (auto it = ideal.begin(); it != ideal.end(); ++it)
          c.ideal[it.key()] = ideal_spec_from_json(it.value());
      }
    }
    c.alpha = j.value("alpha", c.alpha);
    c.effect_floor = j.value("effect_floor", c.effect_floor);
    if (j.contains("n_permutations")) {
      const auto n = j["n_permutations"].get<long long>();
      if (n < 100) throw Error(ErrorCode::validation, "n_permutations must be >= 100");
      c.n_permutations = static_cast<std::size_t>(n);
    }
    c.seed = j.value("seed", c.seed);
    c.smoothing_alpha = j.value("smoothing_alpha", c.smoothing_alpha);
    if (j.contains("binning"))
      for (auto it = j["binning"].begin(); it != j["binning"].end(); ++it)
        c.binning[it.key()] = binning_from_json(it.value());
    if (j.contains("target_marginals"))
      for (auto it = j["target_marginals"].begin(); it != j["target_marginals"].end(); ++it)
        c.target_marginals[it.key()] = it.value().get<std::map<std::string, double>>();
    if (j.contains("columns")) c.columns = column_map_from_json(j["columns"]);
    if (j.contains("weat"))
      for (const auto& w : j["weat"]) c.weat_specs.push_back(w);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, fmt::format("config: {}", e.what()));
  }
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw Error(ErrorCode::validation, "alpha must lie in (0, 1)");
  if (!(c.effect_floor >= 0.0)) throw Error(ErrorCode::validation, "effect_floor must be >= 0");
  if (!(c.smoothing_alpha >= 0.0)) throw Error(ErrorCode::validation, "smoothing_alpha must be >= 0");
  return c;
}

AuditConfig parse_config(std::istream& in) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse, fmt::format("config is not valid JSON ({})", e.what()));
  }
  return config_from_json(j);
}

json to_json(const AuditConfig& c) {
  json j;
  j["attributes"] = c.attributes;
  json ideal = json::object();
  for (const auto& [k, v] : c.ideal) ideal[k] = to_json(v);
  j["ideal"] = ideal;
  j["alpha"] = c.alpha;
  j["effect_floor"] = c.effect_floor;
  j["n_permutations"] = c.n_permutations;
  j["seed"] = c.seed;
  j["smoothing_alpha"] = c.smoothing_alpha;
  json binning = json::object();
  for (const auto& [k, v] : c.binning) binning[k] = to_json(v);
  j["binning"] = binning;
  j["target_marginals"] = c.target_marginals;
  if (c.columns) j["columns"] = to_json(*c.columns);
  if (!c.weat_specs.empty()) j["weat"] = c.weat_specs;
  return j;
}

std::string_view to_string(ValidationFinding::Kind kind) {
  switch (kind) {
    case ValidationFinding::Kind::missing_attribute: return "missing_attribute";
    case ValidationFinding::Kind::incompatible_spec: return "incompatible_spec";
    case ValidationFinding::Kind::support_mismatch: return "support_mismatch";
    case ValidationFinding::Kind::invalid_ideal: return "invalid_ideal";
  }
  return "unknown";
}

namespace {

void check_ideal(const IdealSpec& spec, const std::string& attribute,
                 const std::set<std::string>& observed, std::vector<ValidationFinding>& out) {
  if (spec.type == IdealSpec::Type::toward_uniform) {
    if (spec.base) check_ideal(*spec.base, attribute, observed, out);
    return;
  }
  if (spec.type != IdealSpec::Type::explicit_table) return;
  std::set<std::string> support;
  for (const auto& [cell, row] : spec.table) {
    double total = 0.0;
    bool in_range = true;
    for (const auto& [outcome, p] : row) {
      support.insert(outcome);
      total += p;
      if (!(p >= 0.0 && p <= 1.0)) in_range = false;
    }
    if (!in_range || std::abs(total - 1.0) > 1e-9)
      out.push_back({ValidationFinding::Kind::invalid_ideal, attribute,
                     fmt::format("ideal row for cell '{}' is not a probability table (sum {})", cell, total)});
  }
  std::vector<std::string> missing;
  std::set_difference(observed.begin(), observed.end(), support.begin(), support.end(),
                      std::back_inserter(missing));
  if (!missing.empty())
    out.push_back({ValidationFinding::Kind::support_mismatch, attribute,
                   fmt::format("ideal table lacks observed outcome(s): {}", fmt::join(missing, ", "))});
}

}  // namespace

std::vector<ValidationFinding> validate_config(const AuditConfig& config, const Dataset& dataset) {
  std::vector<ValidationFinding> findings;
  std::set<std::string> observed;
  if (dataset.outcome_kind() == OutcomeKind::categorical)
    for (const auto& r : dataset.records()) {
      observed.insert(std::get<std::string>(r.y_true));
      observed.insert(std::get<std::string>(r.y_pred));
    }

  for (const auto& name : config.attributes) {
    const AttributeSpec* spec = dataset.find_attribute(name);
    if (!spec) {
      findings.push_back({ValidationFinding::Kind::missing_attribute, name,
                          fmt::format("attribute '{}' does not occur in the dataset", name)});
      continue;
    }
    const bool has_binning = spec->binning.has_value() || config.binning.count(name) > 0;
    if (spec->kind == AttributeKind::continuous && !has_binning)
      findings.push_back({ValidationFinding::Kind::incompatible_spec, name,
                          fmt::format("continuous attribute '{}' needs a binning spec", name)});
    if (spec->kind == AttributeKind::categorical && config.binning.count(name))
      findings.push_back({ValidationFinding::Kind::incompatible_spec, name,
                          fmt::format("categorical attribute '{}' must not be binned", name)});
    if (dataset.outcome_kind() == OutcomeKind::categorical)
      check_ideal(config.ideal_for(name), name, observed, findings);
  }
  return findings;
}

}  // namespace biaslens
