#include "marker_track/marker_volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>

#include "json.hpp"

#include "marker_track/errors.hpp"

namespace mtrack {

VoxelCube::VoxelCube(const Point3& center, double side, int n)
    : center_(center), side_(side), n_(n), values_(static_cast<std::size_t>(n) * n * n, 0.0) {
  if (!(side > 0.0)) throw PipelineError("voxel cube side must be positive");
  if (n < 2) throw PipelineError("voxel cube needs at least 2 voxels per axis");
}

std::array<int, 3> VoxelCube::voxel_index(std::size_t linear) const {
  const auto n = static_cast<std::size_t>(n_);
  return {static_cast<int>(linear % n), static_cast<int>((linear / n) % n), static_cast<int>(linear / (n * n))};
}

Point3 VoxelCube::voxel_center(int i, int j, int k) const {
  const double h = spacing();
  const double half = n_ / 2.0;
  return {center_.x + (i + 0.5 - half) * h, center_.y + (j + 0.5 - half) * h, center_.z + (k + 0.5 - half) * h};
}

bool VoxelCube::contains(const Point3& p) const {
  const double half = side_ / 2.0;
  return std::abs(p.x - center_.x) <= half && std::abs(p.y - center_.y) <= half && std::abs(p.z - center_.z) <= half;
}

double VoxelCube::max_value() const { return *std::max_element(values_.begin(), values_.end()); }

void VolumeParams::validate() const {
  if (n_voxels < 2) throw InputError("n_voxels must be at least 2");
  if (!(min_side > 0.0)) throw InputError("min_side must be positive");
  if (!(margin_mm >= 0.0)) throw InputError("margin must be non-negative");
  if (!(mu > 0.0)) throw InputError("mu must be positive");
  if (!(lambda_frac > 0.0 && lambda_frac <= 1.0)) throw InputError("lambda_frac must lie in (0, 1]");
}

VoxelCube build_cube(const MarkerPlan& plan, int n, double min_side, double margin_mm) {
  if (plan.size() == 0) throw InputError("marker plan is empty");
  Point3 lo = plan.markers.front();
  Point3 hi = lo;
  Point3 sum;
  for (const auto& m : plan.markers) {
    lo = {std::min(lo.x, m.x), std::min(lo.y, m.y), std::min(lo.z, m.z)};
    hi = {std::max(hi.x, m.x), std::max(hi.y, m.y), std::max(hi.z, m.z)};
    sum = sum + m;
  }
  const Point3 extent = hi - lo;
  const double side = std::max({extent.x, extent.y, extent.z, min_side});
  const double spacing = side / n;
  const int pad = margin_mm > 0.0 ? static_cast<int>(std::ceil(margin_mm / spacing - 1e-9)) : 0;
  return VoxelCube(sum * (1.0 / static_cast<double>(plan.size())), spacing * (n + 2 * pad), n + 2 * pad);
}

namespace {

double sample_bilinear(const Image<double>& img, const PixelCoord& px) {
  const int cols = img.cols();
  const int rows = img.rows();
  if (!(px.col >= 0.0 && px.row >= 0.0 && px.col <= cols - 1.0 && px.row <= rows - 1.0)) return 0.0;
  const int c0 = static_cast<int>(px.col);
  const int r0 = static_cast<int>(px.row);
  const int c1 = std::min(c0 + 1, cols - 1);
  const int r1 = std::min(r0 + 1, rows - 1);
  const double fc = px.col - c0;
  const double fr = px.row - r0;
  const double top = img.at(r0, c0) * (1.0 - fc) + img.at(r0, c1) * fc;
  const double bottom = img.at(r1, c0) * (1.0 - fc) + img.at(r1, c1) * fc;
  return top * (1.0 - fr) + bottom * fr;
}

}  // namespace

void accumulate(VoxelCube& cube, const ProbabilityImage& p, GantryAngle phi, const AcquisitionGeometry& geom) {
  if (p.values.rows() != geom.detector_rows || p.values.cols() != geom.detector_cols)
    throw PipelineError("probability image does not match detector dimensions");
  const FrameProjector project(phi, geom);
  const int n = cube.n();
  auto& values = cube.values();
  std::size_t idx = 0;
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i, ++idx) {
        const auto d = project(cube.voxel_center(i, j, k));
        values[idx] += sample_bilinear(p.values, detector_mm_to_pixel(d, geom));
      }
    }
  }
}

void threshold_volume(VoxelCube& cube, double lambda_frac) {
  const double peak = cube.max_value();
  if (!(peak > 0.0)) throw PipelineError("no marker evidence: probability volume is empty");
  const double cut = lambda_frac * peak;
  for (auto& v : cube.values())
    if (v < cut) v = 0.0;
}

std::vector<Cluster> find_clusters(const VoxelCube& cube) {
  const int n = cube.n();
  const auto& values = cube.values();
  std::vector<std::uint8_t> visited(values.size(), 0);
  std::vector<std::size_t> stack;
  std::vector<Cluster> clusters;

  constexpr std::array<std::array<int, 3>, 6> kFaces{{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};

  for (std::size_t seed = 0; seed < values.size(); ++seed) {
    if (visited[seed] || values[seed] <= 0.0) continue;
    Cluster cluster;
    Point3 sum;
    visited[seed] = 1;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      const auto ijk = cube.voxel_index(cur);
      cluster.voxels.push_back(ijk);
      cluster.total_probability += values[cur];
      sum = sum + cube.voxel_center(ijk[0], ijk[1], ijk[2]);
      for (const auto& f : kFaces) {
        const int a = ijk[0] + f[0], b = ijk[1] + f[1], c = ijk[2] + f[2];
        if (a < 0 || b < 0 || c < 0 || a >= n || b >= n || c >= n) continue;
        const std::size_t next = cube.linear_index(a, b, c);
        if (visited[next] || values[next] <= 0.0) continue;
        visited[next] = 1;
        stack.push_back(next);
      }
    }
    cluster.centroid = sum * (1.0 / static_cast<double>(cluster.voxels.size()));
    clusters.push_back(std::move(cluster));
  }

  // Clusters were discovered in scan order, so the stable sort breaks ties by first voxel.
  std::vector<std::size_t> order(clusters.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return clusters[a].total_probability > clusters[b].total_probability;
  });
  std::vector<Cluster> sorted;
  sorted.reserve(clusters.size());
  for (auto i : order) sorted.push_back(std::move(clusters[i]));
  return sorted;
}

RefinedMarkers match_clusters(std::vector<Cluster> clusters, const MarkerPlan& plan) {
  const std::size_t m = plan.size();
  if (m == 0) throw InputError("marker plan is empty");
  if (m > kMaxExhaustiveMarkers) throw PipelineError("too many markers for exhaustive matching");
  if (clusters.size() < m) {
    throw PipelineError("marker not found in volume: " + std::to_string(clusters.size()) + " cluster(s) for " +
                        std::to_string(m) + " marker(s)");
  }
  std::stable_sort(clusters.begin(), clusters.end(),
                   [](const Cluster& a, const Cluster& b) { return a.total_probability > b.total_probability; });
  clusters.resize(m);

  // perm[k] is the cluster assigned to plan marker k
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (std::size_t k = 0; k < m; ++k) cost += distance(plan.markers[k], clusters[perm[k]].centroid);
    if (cost < best_cost) {
      best_cost = cost;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  RefinedMarkers out;
  out.match_cost = best_cost;
  for (std::size_t k = 0; k < m; ++k) out.positions.push_back(clusters[best[k]].centroid);
  return out;
}

RefinedMarkers refine_markers(const ScanSet& scan, const MarkerPlan& plan, BreathHold bh, const VolumeParams& params) {
  return refine_markers(scan, plan, bh, params, nullptr);
}

RefinedMarkers refine_markers(const ScanSet& scan, const MarkerPlan& plan, BreathHold bh, const VolumeParams& params,
                              VoxelCube* raw_volume) {
  params.validate();
  const auto frames = scan.frames_in(bh);
  if (frames.empty()) throw PipelineError("breath-hold " + std::string(to_string(bh)) + " has no frames");

  VoxelCube cube = build_cube(plan, params.n_voxels, params.min_side, params.margin_mm);
  for (const auto* frame : frames) {
    const auto p = normalize(gradient(frame->pixels, params.mu));
    accumulate(cube, p, frame->phi, scan.geometry);
  }
  if (raw_volume) *raw_volume = cube;

  threshold_volume(cube, params.lambda_frac);
  auto refined = match_clusters(find_clusters(cube), plan);
  refined.breath_hold = bh;
  return refined;
}

void save_volume(const VoxelCube& cube, const std::filesystem::path& stem) {
  auto raw_path = stem;
  raw_path += ".f32";
  std::ofstream out(raw_path, std::ios::binary);
  if (!out) throw InputError("cannot write " + raw_path.string());
  for (double v : cube.values()) {
    const auto f = static_cast<float>(v);
    std::uint32_t bits;
    static_assert(sizeof(bits) == sizeof(f));
    std::memcpy(&bits, &f, sizeof(f));
    const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                           static_cast<char>((bits >> 16) & 0xff), static_cast<char>(bits >> 24)};
    out.write(bytes, 4);
  }

  auto meta_path = stem;
  meta_path += ".json";
  std::ofstream meta(meta_path);
  if (!meta) throw InputError("cannot write " + meta_path.string());
  const nlohmann::json doc = {
      {"data_file", raw_path.filename().string()},
      {"dtype", "f32le"},
      {"n", cube.n()},
      {"side_mm", cube.side()},
      {"center_mm", {cube.center().x, cube.center().y, cube.center().z}},
      {"axis_order", "x fastest, then y, then z"},
  };
  meta << doc.dump(2) << '\n';
}

}  // namespace mtrack
