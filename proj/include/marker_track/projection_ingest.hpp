#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "marker_track/geometry.hpp"
#include "marker_track/image.hpp"

namespace mtrack {

enum class BreathHold { BH1, BH2 };

std::string_view to_string(BreathHold bh);
/// Parses "BH1"/"BH2"; throws InputError otherwise.
BreathHold parse_breath_hold(std::string_view text);

struct ProjectionFrame {
  int index = 0;
  GantryAngle phi;
  BreathHold breath_hold = BreathHold::BH1;
  std::optional<double> t_sec;
  Image<std::uint16_t> pixels;
};

/// Inclusive frame-index range of one breath-hold.
struct FrameWindow {
  int first = 0;
  int last = 0;
};

struct ScanSet {
  std::string scan_id;
  AcquisitionGeometry geometry;
  std::vector<ProjectionFrame> frames;
  std::map<BreathHold, FrameWindow> breath_hold_windows;
  /// Non-fatal findings from loading, e.g. non-monotone angles.
  std::vector<std::string> warnings;

  [[nodiscard]] std::vector<const ProjectionFrame*> frames_in(BreathHold bh) const;
};

struct MarkerPlan {
  std::vector<std::string> marker_ids;
  std::vector<Point3> markers;

  [[nodiscard]] std::size_t size() const { return markers.size(); }
};

/// Derives breath-hold windows from the frame labels and checks that the
/// windows are disjoint and ordered (BH1 before BH2). Throws InputError.
std::map<BreathHold, FrameWindow> breath_hold_windows(const std::vector<ProjectionFrame>& frames);

/// Per-frame manifest entry.
struct FrameInfo {
  int index = 0;
  double angle_deg = 0.0;
  BreathHold breath_hold = BreathHold::BH1;
  std::optional<double> t_sec;
};

/// Manifest fields that can be read without touching the pixel file.
struct ManifestInfo {
  std::string scan_id;
  AcquisitionGeometry geometry;
  std::filesystem::path pixel_path;
  std::vector<FrameInfo> frames;
};

ManifestInfo read_manifest_info(const std::filesystem::path& manifest_path);
ScanSet load_scan(const std::filesystem::path& manifest_path);
MarkerPlan load_marker_plan(const std::filesystem::path& path);

/// Writes `manifest_path` and the raw u16le pixel file next to it
/// (named by `pixel_file`, relative to the manifest directory).
void save_scan(const ScanSet& scan, const std::filesystem::path& manifest_path,
               const std::string& pixel_file = "projections.u16");
void save_marker_plan(const MarkerPlan& plan, const std::filesystem::path& path);

}  // namespace mtrack
