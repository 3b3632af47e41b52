#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "marker_track/geometry.hpp"
#include "marker_track/projection_ingest.hpp"
#include "marker_track/projection_tracker.hpp"

namespace mtrack {

/// One detected lateral projection position.
struct LateralSample {
  int frame_index = 0;
  GantryAngle phi;
  double u_mm = 0.0;
};

/// Static (x, z) of a marker recovered from its lateral projections.
struct LateralFit {
  double x = 0.0;
  double z = 0.0;
  double residual_rms = 0.0;  ///< detector mm
  int frames_used = 0;
};

/// Minimum angular coverage accepted by fit_lateral (degrees).
inline constexpr double kMinLateralSpanDeg = 5.0;

/// Least squares over x (SID cos phi + u sin phi) + z (u cos phi - SID sin phi) = u SAD.
/// Needs >= 2 samples spanning >= kMinLateralSpanDeg; throws PipelineError otherwise.
LateralFit fit_lateral(std::span<const LateralSample> samples, const AcquisitionGeometry& geom);

/// |u_detected - u_expected| expressed at the isocenter (divided by SID/SAD).
double lateral_deviation(const LateralSample& s, const LateralFit& fit, const AcquisitionGeometry& geom);

/// true where the isocenter-scale deviation strictly exceeds `tol` (mm).
std::vector<bool> screen_lateral(std::span<const LateralSample> samples, const LateralFit& fit,
                                 const AcquisitionGeometry& geom, double tol = 5.0);

/// Superior-inferior coordinate from a longitudinal detector position and
/// the fitted lateral/vertical coordinates: y = v (SAD - x sin phi - z cos phi) / SID.
double compute_si(double v_mm, GantryAngle phi, const LateralFit& fit, const AcquisitionGeometry& geom);

/// Third-order polynomial a0 + a1 t + a2 t^2 + a3 t^3.
struct Cubic {
  std::array<double, 4> coeffs{};
  [[nodiscard]] double operator()(double t) const {
    return coeffs[0] + t * (coeffs[1] + t * (coeffs[2] + t * coeffs[3]));
  }
};

/// Least-squares cubic; needs >= 4 points with >= 4 distinct abscissae.
Cubic fit_cubic(std::span<const double> t, std::span<const double> y);

struct SiSample {
  int frame_index = 0;
  double t = 0.0;  ///< fit abscissa: timestamp when known, else frame index
  double y_mm = 0.0;
  bool outlier = false;
};

struct SiTrace {
  std::vector<SiSample> samples;
  Cubic fit;  ///< cubic through the retained samples
};

/// Fits a cubic to the non-flagged samples, flags those whose residual
/// strictly exceeds `tol`, then refits on the retained ones. One pass.
void screen_si(SiTrace& trace, double tol = 3.0);

/// Population statistics of one SI series.
struct TraceStats {
  double mean = 0.0;
  double max_dev = 0.0;  ///< max |y - mean|
  double std_dev = 0.0;  ///< divisor N
  std::size_t count = 0;
};

TraceStats trace_stats(std::span<const double> y);

struct MotionParams {
  double lateral_tol = 5.0;  ///< mm at isocenter
  double si_tol = 3.0;       ///< mm

  void validate() const;
};

/// Per-frame analysis of one marker in one breath-hold.
struct BreathHoldTrace {
  std::string marker_id;
  BreathHold breath_hold = BreathHold::BH1;
  std::vector<LateralSample> lateral;
  std::vector<bool> lateral_outlier;
  LateralFit lateral_fit;
  SiTrace si;
  TraceStats stats;
  [[nodiscard]] std::vector<double> retained_y() const;
};

struct MarkerSummary {
  std::string marker_id;
  std::map<BreathHold, TraceStats> per_bh;
  std::optional<TraceStats> both;
  std::optional<double> avg_diff;  ///< |mean BH1 - mean BH2|
  std::optional<double> gap;       ///< |cubic BH1 at last retained - cubic BH2 at first retained|
  std::map<BreathHold, Point3> position;
  std::optional<Point3> position_both;
  std::size_t detected = 0;
  std::size_t frames = 0;
  std::size_t lateral_outliers = 0;
  std::size_t si_outliers = 0;
  std::vector<std::string> notes;  ///< why a breath-hold could not be analysed
};

/// Relative position of marker b with respect to marker a (b - a).
struct MarkerDistance {
  std::string marker_a;
  std::string marker_b;
  std::string window;  ///< "BH1", "BH2" or "both"
  double dx = 0.0, dy = 0.0, dz = 0.0, distance = 0.0;
};

/// Cross-marker view of the summary statistics: each field is the mean of
/// that field over markers that have it.
struct PooledSummary {
  std::map<BreathHold, TraceStats> per_bh;
  std::optional<TraceStats> both;
  std::optional<double> avg_diff;
  std::optional<double> gap;
};

struct ScanReport {
  std::string scan_id;
  std::vector<MarkerSummary> markers;
  PooledSummary pooled;
  std::vector<MarkerDistance> distances;
  std::size_t detected = 0;
  std::size_t slots = 0;
};

struct MotionAnalysis {
  ScanReport report;
  std::vector<BreathHoldTrace> traces;
};

/// Screens detections, recovers per-frame SI positions and computes all
/// report statistics. `marker_ids` fixes the marker order of the report.
MotionAnalysis analyze_motion(const std::string& scan_id, std::span<const std::string> marker_ids,
                              std::span<const Detection2D> detections, const AcquisitionGeometry& geom,
                              const MotionParams& params = {});

}  // namespace mtrack
