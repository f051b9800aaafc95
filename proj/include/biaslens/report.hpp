#pragma once

#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "biaslens/disparity.hpp"
#include "biaslens/model.hpp"
#include "biaslens/origins.hpp"

namespace biaslens::report {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kSchemaVersion = "1";

struct Metadata {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string seed_source = "config";  // "flag", "environment" or "config"
  std::string timestamp;
  std::string timestamp_source = "unset";
  std::map<std::string, std::string> inputs;  // role -> content hash
};

struct Skipped {
  std::string check;
  std::optional<std::string> attribute;
  std::string reason;
};

struct AuditReport {
  Metadata metadata;
  nlohmann::json config = nlohmann::json::object();
  std::vector<disparity::DisparityReport> disparities;
  std::vector<origins::DiagnosisMatrix> origins;
  std::vector<origins::OriginFinding> semantic;
  std::vector<Skipped> skipped;
  std::vector<std::string> notes;

  std::set<origins::Origin> flagged_origins() const;
  bool any_flag() const;
};

struct Recommendation {
  origins::Origin origin;
  std::string action;
  std::string detail;
  bool in_scope = true;
};

/// Pure function of the flagged origin set, in origin enum order.
std::vector<Recommendation> recommendations(const std::set<origins::Origin>& flagged);

/// "sha-like" content digest used for config and input fingerprints.
std::string content_hash(std::string_view bytes);

/// SOURCE_DATE_EPOCH when set (ISO-8601 UTC), otherwise the Unix epoch with
/// source "unset", so that reruns stay byte-identical.
std::pair<std::string, std::string> report_timestamp();

nlohmann::ordered_json to_json(const AuditReport& report);
nlohmann::ordered_json to_json(const disparity::DisparityReport& report);
nlohmann::ordered_json to_json(const origins::OriginFinding& finding);
nlohmann::ordered_json to_json(const origins::DiagnosisMatrix& matrix);

/// Deterministic rendering of a report document.
std::string render_markdown(const nlohmann::ordered_json& report);

/// The report schema shipped with the tool.
const nlohmann::json& report_schema();

/// Validates `doc` against a JSON Schema subset (type, const, enum, minimum,
/// maximum, required, properties, additionalProperties, items, anyOf and
/// local $ref). Returns one message per violation; empty means valid.
std::vector<std::string> validate_schema(const nlohmann::json& doc, const nlohmann::json& schema);

/// Called after each write step; a hook that throws simulates interruption.
using FaultHook = std::function<void(std::string_view step)>;

/// Writes report.md and report.json into `dir` via temp files and renames.
/// report.json is renamed last and marks a complete report; a stale
/// report.json is removed before the new report.md appears. On failure the
/// temp files are removed.
void write_report_files(const std::filesystem::path& dir, const std::string& json_text,
                        const std::string& markdown, const FaultHook& hook = {});

/// Single-file variant of the same temp-then-rename write.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace biaslens::report
