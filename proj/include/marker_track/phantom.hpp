#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "marker_track/geometry.hpp"
#include "marker_track/projection_ingest.hpp"

namespace mtrack {

/// Motion of a marker within one breath-hold: the average displacement and
/// the total linear change from the first to the last frame.
struct MotionSegment {
  Point3 mean_offset;
  Point3 drift;
};

struct PhantomMarker {
  std::string id;
  Point3 position;  ///< true resting position (may differ from the plan)
  std::map<BreathHold, MotionSegment> motion;
};

/// Static high-density object, e.g. a stent.
struct Distractor {
  Point3 position;
  double amplitude = 15000.0;
  double sigma_px = 2.5;
};

/// level + amplitude * cos(2 pi col / period) * cos(2 pi row / period).
struct BackgroundField {
  double level = 20000.0;
  double amplitude = 2000.0;
  double period_px = 512.0;
};

struct ArcFrame {
  int index = 0;
  double angle_deg = 0.0;
  BreathHold breath_hold = BreathHold::BH1;
  std::optional<double> t_sec;
};

/// Saturated square patch centered on a marker's projection in one frame.
struct Occlusion {
  int frame_index = 0;
  std::string marker_id;
  int half_size_px = 20;
};

struct PhantomScene {
  std::string name;
  AcquisitionGeometry geometry;
  std::vector<PhantomMarker> markers;
  MarkerPlan plan;
  BackgroundField background;
  double noise_sigma = 0.0;  ///< counts
  std::vector<Distractor> distractors;
  std::vector<ArcFrame> arc;
  std::vector<Occlusion> occlusions;
  double marker_amplitude = 3000.0;
  double sigma_col_px = 1.2;
  double sigma_row_px = 1.2;
  bool capsule = false;              ///< render markers as oriented segments
  double capsule_length_mm = 5.0;
  Point3 capsule_axis{0.0, 1.0, 0.0};
  std::uint64_t seed = 1;

  void validate() const;
  /// True marker position at one arc entry.
  [[nodiscard]] Point3 marker_position(std::size_t marker, std::size_t arc_entry) const;
};

struct GroundTruthSample {
  Point3 position;
  DetectorPoint detector;
  bool on_detector = true;
};

struct GroundTruth {
  std::vector<std::string> marker_ids;
  std::vector<int> frame_indices;
  /// samples[frame][marker]
  std::vector<std::vector<GroundTruthSample>> samples;
  /// per marker, per breath-hold: population mean and std of true y
  std::vector<std::map<BreathHold, std::pair<double, double>>> si_stats;
  /// per marker, per breath-hold: mean true position
  std::vector<std::map<BreathHold, Point3>> mean_position;
};

struct RenderedScan {
  ScanSet scan;
  GroundTruth truth;
};

/// Evenly spaced arc: BH1 over [98, 165] deg then BH2 over [32, 101] deg,
/// with 0.2 s between frames and a 10 s pause between breath-holds.
std::vector<ArcFrame> default_arc(int frames_per_breath_hold = 100);

RenderedScan render(const PhantomScene& scene);

std::vector<std::string> preset_names();
/// Throws InputError for an unknown name.
PhantomScene preset_scene(const std::string& name);

nlohmann::json scene_to_json(const PhantomScene& scene);
PhantomScene scene_from_json(const nlohmann::json& j);

nlohmann::json ground_truth_to_json(const GroundTruth& truth);

/// Writes manifest.json, projections.u16, plan.json, ground_truth.json and
/// scene.json into `out_dir`.
void emit_scene(const PhantomScene& scene, const RenderedScan& rendered, const std::filesystem::path& out_dir);

}  // namespace mtrack
