#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "marker_track/marker_volume.hpp"
#include "marker_track/projection_ingest.hpp"
#include "marker_track/residual_motion.hpp"

namespace mtrack {

/// Library version stamped into every output file.
std::string_view tool_version();

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
/// "sha256:<hex>" of a file's contents. Throws InputError if unreadable.
std::string file_digest(const std::filesystem::path& path);

/// Where an output came from. Holds no paths or timestamps so identical
/// inputs and settings give identical bytes.
struct Provenance {
  std::string command;
  nlohmann::json config = nlohmann::json::object();  ///< effective parameters
  std::map<std::string, std::string> inputs;          ///< role -> digest

  [[nodiscard]] std::string config_digest() const;
  [[nodiscard]] nlohmann::json to_json() const;
  /// Same content as to_json, as '#'-prefixed lines for CSV outputs.
  void write_comment(std::ostream& out) const;
};

using RefinedSet = std::map<BreathHold, RefinedMarkers>;

nlohmann::json refined_to_json(const std::string& scan_id, const MarkerPlan& plan, const RefinedSet& refined,
                               const Provenance& prov);
/// Positions are matched to `plan` by marker id. Throws InputError on
/// malformed content or ids the plan does not know.
RefinedSet refined_from_json(const nlohmann::json& j, const MarkerPlan& plan);

nlohmann::json report_to_json(const ScanReport& report, const Provenance& prov);

/// One row per marker plus a "pooled" row. Statistics in mm with one
/// decimal; absent values are written as NA.
void write_table1_csv(std::ostream& out, const ScanReport& report, const Provenance& prov);

/// Per-frame SI positions with the cubic fit value and the outlier flag,
/// ready for plotting.
void write_si_series_csv(std::ostream& out, const std::string& scan_id, std::span<const BreathHoldTrace> traces,
                         const Provenance& prov);

/// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace mtrack
