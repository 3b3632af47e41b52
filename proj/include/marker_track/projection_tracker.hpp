#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "marker_track/geometry.hpp"
#include "marker_track/gradient_map.hpp"
#include "marker_track/marker_volume.hpp"
#include "marker_track/projection_ingest.hpp"

namespace mtrack {

struct PointPrompt {
  std::string marker_id;
  int frame_index = 0;
  PixelCoord pixel;
};

struct PixelIndex {
  int col = 0;
  int row = 0;
  friend auto operator<=>(const PixelIndex&, const PixelIndex&) = default;
};

/// Segmentation of one marker on one frame. An empty pixel list is a miss.
struct MarkerMask {
  std::string marker_id;
  int frame_index = 0;
  std::vector<PixelIndex> pixels;

  [[nodiscard]] bool empty() const { return pixels.empty(); }
};

enum class DetectionStatus { Detected, Missing };

struct Detection2D {
  std::string marker_id;
  int frame_index = 0;
  double angle_deg = 0.0;
  BreathHold breath_hold = BreathHold::BH1;
  std::optional<double> t_sec;
  double u_mm = 0.0;
  double v_mm = 0.0;
  DetectionStatus status = DetectionStatus::Missing;
};

struct PromptSet {
  std::vector<PointPrompt> prompts;
  std::vector<std::string> skipped;  ///< markers projecting off the detector
};

/// Projects each refined marker onto the frame. `marker_ids` follows the
/// order of `refined.positions`.
PromptSet make_prompts(const RefinedMarkers& refined, std::span<const std::string> marker_ids,
                       const ProjectionFrame& frame, const AcquisitionGeometry& geom);

struct BaselineParams {
  int window = 31;            ///< search window side in pixels (odd)
  double growth_ratio = 0.3;  ///< region grows over pixels >= ratio * seed
  int max_area = 200;         ///< masks larger than this are rejected

  void validate() const;
};

/// Prompt-seeded region growing on the unsuppressed gradient image. Returns
/// one mask per prompt, in prompt order; misses come back empty.
std::vector<MarkerMask> baseline_segment(const GradientImage& gbar, std::span<const PointPrompt> prompts,
                                         const BaselineParams& params = {});

/// Arithmetic mean of the mask's pixel coordinates.
PixelCoord mask_center(const MarkerMask& mask);

/// Anything that turns prompted gradient frames into marker masks.
///
/// track_scan calls begin_scan once, then segment once per frame in
/// increasing index order, then end_scan. segment must return exactly one
/// mask per prompt, tagged with the prompt's marker id.
class Segmenter {
 public:
  virtual ~Segmenter() = default;

  virtual void begin_scan(const ScanSet& /*scan*/) {}
  virtual std::vector<MarkerMask> segment(const ProjectionFrame& frame, const GradientImage& gbar,
                                          std::span<const PointPrompt> prompts) = 0;
  virtual void end_scan() {}
  [[nodiscard]] virtual std::string name() const = 0;
};

class BaselineSegmenter final : public Segmenter {
 public:
  explicit BaselineSegmenter(BaselineParams params = {}) : params_(params) { params_.validate(); }

  std::vector<MarkerMask> segment(const ProjectionFrame& frame, const GradientImage& gbar,
                                  std::span<const PointPrompt> prompts) override;
  [[nodiscard]] std::string name() const override { return "baseline"; }

 private:
  BaselineParams params_;
};

struct TrackResult {
  std::vector<Detection2D> detections;  ///< frame-major, plan order within a frame
  std::size_t detected = 0;
  std::size_t slots = 0;

  [[nodiscard]] double detection_rate() const { return slots ? static_cast<double>(detected) / slots : 0.0; }
};

/// Tracks every plan marker through every frame. Frames of a breath-hold
/// without a refined position entry are reported as missing.
TrackResult track_scan(const ScanSet& scan, const MarkerPlan& plan, const std::map<BreathHold, RefinedMarkers>& refined,
                       Segmenter& segmenter);

void write_detections_csv(std::ostream& out, const std::string& scan_id, std::span<const Detection2D> detections);
/// Reads rows written by write_detections_csv; lines starting with '#' are
/// skipped. Returns the scan id of the first row via `scan_id` when given.
std::vector<Detection2D> read_detections_csv(std::istream& in, std::string* scan_id = nullptr);

}  // namespace mtrack
