#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <vector>

#include "marker_track/geometry.hpp"
#include "marker_track/gradient_map.hpp"
#include "marker_track/projection_ingest.hpp"

namespace mtrack {

/// Cubic voxel grid holding the accumulated marker probability f(v).
///
/// Voxel (i, j, k) covers x, y, z respectively; its center is
/// `center + ((i, j, k) + 0.5 - n/2) * spacing`. Values are stored with i
/// varying fastest.
class VoxelCube {
 public:
  VoxelCube(const Point3& center, double side, int n);

  [[nodiscard]] const Point3& center() const { return center_; }
  [[nodiscard]] double side() const { return side_; }
  [[nodiscard]] int n() const { return n_; }
  [[nodiscard]] double spacing() const { return side_ / n_; }

  [[nodiscard]] std::size_t linear_index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * n_ + j) * n_ + i;
  }
  [[nodiscard]] std::array<int, 3> voxel_index(std::size_t linear) const;
  [[nodiscard]] Point3 voxel_center(int i, int j, int k) const;
  [[nodiscard]] bool contains(const Point3& p) const;

  [[nodiscard]] double& at(int i, int j, int k) { return values_[linear_index(i, j, k)]; }
  [[nodiscard]] double at(int i, int j, int k) const { return values_[linear_index(i, j, k)]; }
  [[nodiscard]] std::vector<double>& values() { return values_; }
  [[nodiscard]] const std::vector<double>& values() const { return values_; }
  [[nodiscard]] double max_value() const;

 private:
  Point3 center_;
  double side_;
  int n_;
  std::vector<double> values_;
};

struct Cluster {
  std::vector<std::array<int, 3>> voxels;
  Point3 centroid;
  double total_probability = 0.0;
};

struct RefinedMarkers {
  BreathHold breath_hold = BreathHold::BH1;
  std::vector<Point3> positions;  ///< aligned with MarkerPlan order
  double match_cost = 0.0;        ///< summed plan-to-centroid distance (mm)
};

struct VolumeParams {
  int n_voxels = 50;
  double min_side = 20.0;  ///< mm
  /// Rim around the plan cube, rounded up to whole voxels of the same
  /// spacing. Markers spanning the plan bounding box sit on the cube faces;
  /// without a rim their clusters are cut in half.
  double margin_mm = 3.0;
  double mu = kDefaultMu;
  double lambda_frac = 0.70;

  void validate() const;
};

/// Largest marker count matched by exhaustive permutation search.
inline constexpr std::size_t kMaxExhaustiveMarkers = 8;

/// Cube centered at the plan centroid whose side is the longest extent of
/// the plan's bounding box, clamped below by `min_side`, split into n voxels
/// per axis. A positive `margin_mm` grows the grid by ceil(margin / spacing)
/// voxels on every face without changing the spacing.
VoxelCube build_cube(const MarkerPlan& plan, int n = 50, double min_side = 20.0, double margin_mm = 0.0);

/// Adds p sampled (bilinearly) at each voxel center's projection. Voxels
/// projecting outside the detector receive nothing.
void accumulate(VoxelCube& cube, const ProbabilityImage& p, GantryAngle phi, const AcquisitionGeometry& geom);

/// Zeroes voxels below lambda_frac * max. Throws PipelineError
/// ("no marker evidence") on an all-zero volume.
void threshold_volume(VoxelCube& cube, double lambda_frac = 0.70);

/// 6-connected components of nonzero voxels, found by iterative depth-first
/// flood fill and ordered by descending total probability.
std::vector<Cluster> find_clusters(const VoxelCube& cube);

/// Keeps the plan.size() most probable clusters and assigns them to plan
/// markers with the minimum summed Euclidean distance over all permutations.
RefinedMarkers match_clusters(std::vector<Cluster> clusters, const MarkerPlan& plan);

/// Full refinement for one breath-hold: cube, gradient + normalize per
/// frame, accumulate, threshold, cluster, match.
RefinedMarkers refine_markers(const ScanSet& scan, const MarkerPlan& plan, BreathHold bh,
                              const VolumeParams& params = {});

/// Same as refine_markers but also hands back the raw (unthresholded) volume.
RefinedMarkers refine_markers(const ScanSet& scan, const MarkerPlan& plan, BreathHold bh, const VolumeParams& params,
                              VoxelCube* raw_volume);

/// Writes `<stem>.f32` (little-endian float32, i fastest) and `<stem>.json`
/// describing center, side and n.
void save_volume(const VoxelCube& cube, const std::filesystem::path& stem);

}  // namespace mtrack
