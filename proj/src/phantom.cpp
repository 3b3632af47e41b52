#include "marker_track/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "marker_track/errors.hpp"

namespace mtrack {

using nlohmann::json;
namespace fs = std::filesystem;

void PhantomScene::validate() const {
  geometry.validate();
  if (markers.empty()) throw InputError("scene '" + name + "' has no markers");
  if (arc.empty()) throw InputError("scene '" + name + "' has an empty arc");
  for (const auto& m : markers) {
    if (!m.position.finite()) throw InputError("scene '" + name + "': marker " + m.id + " is not finite");
    for (const auto& [bh, seg] : m.motion)
      if (!seg.mean_offset.finite() || !seg.drift.finite())
        throw InputError("scene '" + name + "': marker " + m.id + " motion is not finite");
  }
  for (const auto& a : arc)
    if (!(a.angle_deg >= 0.0 && a.angle_deg < 360.0))
      throw InputError("scene '" + name + "': arc angles must lie in [0, 360)");
  std::vector<ProjectionFrame> frames;
  for (const auto& a : arc) {
    if (!frames.empty() && a.index <= frames.back().index)
      throw InputError("scene '" + name + "': arc indices must increase");
    frames.push_back({a.index, GantryAngle::from_degrees(a.angle_deg), a.breath_hold, a.t_sec, {}});
  }
  breath_hold_windows(frames);
  if (!(noise_sigma >= 0.0) || !(sigma_col_px > 0.0) || !(sigma_row_px > 0.0))
    throw InputError("scene '" + name + "': noise and blob widths must be non-negative / positive");
}

Point3 PhantomScene::marker_position(std::size_t marker, std::size_t arc_entry) const {
  const auto& m = markers.at(marker);
  const BreathHold bh = arc.at(arc_entry).breath_hold;
  const auto seg = m.motion.find(bh);
  if (seg == m.motion.end()) return m.position;

  // Fraction of the way through this breath-hold, 0 at the first frame.
  std::size_t rank = 0, count = 0;
  for (std::size_t k = 0; k < arc.size(); ++k) {
    if (arc[k].breath_hold != bh) continue;
    if (k < arc_entry) ++rank;
    ++count;
  }
  const double s = count > 1 ? static_cast<double>(rank) / static_cast<double>(count - 1) : 0.5;
  return m.position + seg->second.mean_offset + seg->second.drift * (s - 0.5);
}

std::vector<ArcFrame> default_arc(int frames_per_breath_hold) {
  constexpr double kFrameInterval = 0.2;
  constexpr double kPause = 10.0;
  std::vector<ArcFrame> arc;
  const int n = frames_per_breath_hold;
  auto lerp = [n](double a, double b, int k) { return n > 1 ? a + (b - a) * k / (n - 1) : a; };
  for (int k = 0; k < n; ++k) arc.push_back({k, lerp(98.0, 165.0, k), BreathHold::BH1, k * kFrameInterval});
  const double t2 = (n - 1) * kFrameInterval + kPause;
  for (int k = 0; k < n; ++k) arc.push_back({n + k, lerp(32.0, 101.0, k), BreathHold::BH2, t2 + k * kFrameInterval});
  return arc;
}

namespace {

/// Adds amplitude * exp(-d^2/2) for the nearest of `centers` to every pixel
/// within reach of the blob.
void splat(Image<double>& img, const std::vector<PixelCoord>& centers, double amplitude, double sigma_col,
           double sigma_row) {
  if (centers.empty()) return;
  const double reach_c = 5.0 * sigma_col;
  const double reach_r = 5.0 * sigma_row;
  double c_min = centers.front().col, c_max = c_min, r_min = centers.front().row, r_max = r_min;
  for (const auto& p : centers) {
    c_min = std::min(c_min, p.col);
    c_max = std::max(c_max, p.col);
    r_min = std::min(r_min, p.row);
    r_max = std::max(r_max, p.row);
  }
  const int c0 = std::max(0, static_cast<int>(std::floor(c_min - reach_c)));
  const int c1 = std::min(img.cols() - 1, static_cast<int>(std::ceil(c_max + reach_c)));
  const int r0 = std::max(0, static_cast<int>(std::floor(r_min - reach_r)));
  const int r1 = std::min(img.rows() - 1, static_cast<int>(std::ceil(r_max + reach_r)));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      double best = 0.0;
      for (const auto& p : centers) {
        const double dc = (c - p.col) / sigma_col;
        const double dr = (r - p.row) / sigma_row;
        best = std::max(best, std::exp(-0.5 * (dc * dc + dr * dr)));
      }
      img.at(r, c) += amplitude * best;
    }
  }
}

}  // namespace

RenderedScan render(const PhantomScene& scene) {
  scene.validate();
  const auto& geom = scene.geometry;
  const int rows = geom.detector_rows;
  const int cols = geom.detector_cols;

  Image<double> background(rows, cols);
  const double w = 2.0 * std::numbers::pi / scene.background.period_px;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      background.at(r, c) =
          scene.background.level + scene.background.amplitude * std::cos(w * c) * std::cos(w * r);

  RenderedScan out;
  out.scan.scan_id = scene.name;
  out.scan.geometry = geom;
  GroundTruth& truth = out.truth;
  for (const auto& m : scene.markers) truth.marker_ids.push_back(m.id);

  for (std::size_t a = 0; a < scene.arc.size(); ++a) {
    const ArcFrame& entry = scene.arc[a];
    const GantryAngle phi = GantryAngle::from_degrees(entry.angle_deg);
    const FrameProjector project(phi, geom);
    Image<double> img = background;

    std::vector<GroundTruthSample> samples;
    for (std::size_t k = 0; k < scene.markers.size(); ++k) {
      const Point3 p = scene.marker_position(k, a);
      const DetectorPoint d = project(p);
      const PixelCoord px = detector_mm_to_pixel(d, geom);
      samples.push_back({p, d, geom.contains(px)});

      std::vector<PixelCoord> centers{px};
      if (scene.capsule) {
        constexpr int kSegments = 20;
        const double len = scene.capsule_axis.norm();
        const Point3 axis = scene.capsule_axis * (scene.capsule_length_mm / (len > 0.0 ? len : 1.0));
        centers.clear();
        for (int s = 0; s <= kSegments; ++s)
          centers.push_back(detector_mm_to_pixel(project(p + axis * (static_cast<double>(s) / kSegments - 0.5)), geom));
      }
      splat(img, centers, scene.marker_amplitude, scene.sigma_col_px, scene.sigma_row_px);
    }
    for (const auto& dist : scene.distractors) {
      splat(img, {detector_mm_to_pixel(project(dist.position), geom)}, dist.amplitude, dist.sigma_px, dist.sigma_px);
    }

    if (scene.noise_sigma > 0.0) {
      std::mt19937_64 rng(scene.seed ^ static_cast<std::uint64_t>(entry.index));
      std::normal_distribution<double> noise(0.0, scene.noise_sigma);
      for (double& v : img.data()) v += noise(rng);
    }

    for (const auto& occ : scene.occlusions) {
      if (occ.frame_index != entry.index) continue;
      const auto it = std::find(truth.marker_ids.begin(), truth.marker_ids.end(), occ.marker_id);
      if (it == truth.marker_ids.end()) throw InputError("occlusion names unknown marker " + occ.marker_id);
      const PixelCoord px = detector_mm_to_pixel(samples[static_cast<std::size_t>(it - truth.marker_ids.begin())].detector, geom);
      const int cc = static_cast<int>(std::lround(px.col));
      const int rc = static_cast<int>(std::lround(px.row));
      for (int r = std::max(0, rc - occ.half_size_px); r <= std::min(rows - 1, rc + occ.half_size_px); ++r)
        for (int c = std::max(0, cc - occ.half_size_px); c <= std::min(cols - 1, cc + occ.half_size_px); ++c)
          img.at(r, c) = 65535.0;
    }

    ProjectionFrame frame{entry.index, phi, entry.breath_hold, entry.t_sec, Image<std::uint16_t>(rows, cols)};
    auto dst = frame.pixels.data();
    const auto src = img.data();
    for (std::size_t i = 0; i < src.size(); ++i)
      dst[i] = static_cast<std::uint16_t>(std::lround(std::clamp(src[i], 0.0, 65535.0)));
    out.scan.frames.push_back(std::move(frame));

    truth.frame_indices.push_back(entry.index);
    truth.samples.push_back(std::move(samples));
  }
  out.scan.breath_hold_windows = breath_hold_windows(out.scan.frames);

  truth.si_stats.resize(scene.markers.size());
  truth.mean_position.resize(scene.markers.size());
  for (std::size_t k = 0; k < scene.markers.size(); ++k) {
    for (const auto& [bh, window] : out.scan.breath_hold_windows) {
      Point3 sum;
      std::vector<double> ys;
      for (std::size_t a = 0; a < scene.arc.size(); ++a) {
        if (scene.arc[a].breath_hold != bh) continue;
        sum = sum + truth.samples[a][k].position;
        ys.push_back(truth.samples[a][k].position.y);
      }
      const double n = static_cast<double>(ys.size());
      double mean = 0.0;
      for (double y : ys) mean += y;
      mean /= n;
      double var = 0.0;
      for (double y : ys) var += (y - mean) * (y - mean);
      truth.si_stats[k][bh] = {mean, std::sqrt(var / n)};
      truth.mean_position[k][bh] = sum * (1.0 / n);
    }
  }
  return out;
}

namespace {

PhantomScene base_scene(const std::string& name) {
  PhantomScene s;
  s.name = name;
  s.arc = default_arc(100);
  s.noise_sigma = 0.02 * s.marker_amplitude;
  s.seed = 20240418;
  s.plan.marker_ids = {"m1", "m2"};
  s.plan.markers = {{2.0, -15.0, -1.0}, {2.0, 15.0, -1.0}};
  for (std::size_t k = 0; k < s.plan.size(); ++k) s.markers.push_back({s.plan.marker_ids[k], s.plan.markers[k], {}});
  return s;
}

/// Markers whose long plan extent is lateral, leaving room inside the cube
/// for superior-inferior motion.
PhantomScene lateral_pair_scene(const std::string& name) {
  PhantomScene s = base_scene(name);
  s.plan.markers = {{-13.0, -6.0, 4.0}, {17.0, 6.0, -6.0}};
  for (std::size_t k = 0; k < s.plan.size(); ++k) s.markers[k].position = s.plan.markers[k];
  return s;
}

void set_rigid_motion(PhantomScene& s, BreathHold bh, const MotionSegment& seg) {
  for (auto& m : s.markers) m.motion[bh] = seg;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"static_2markers", "static_noiseless", "static_1marker", "migrated_5mm", "stent_distractor",
          "table1_3_18",     "drift_2mm",        "noisy",          "hard_background", "occluded",
          "capsule_2markers"};
}

PhantomScene preset_scene(const std::string& name) {
  if (name == "static_2markers") return base_scene(name);
  if (name == "static_noiseless") {
    auto s = base_scene(name);
    s.noise_sigma = 0.0;
    return s;
  }
  if (name == "static_1marker") {
    auto s = base_scene(name);
    s.plan.marker_ids = {"m1"};
    s.plan.markers = {{2.0, 0.0, -1.0}};
    s.markers = {{"m1", {2.0, 0.0, -1.0}, {}}};
    return s;
  }
  if (name == "migrated_5mm") {
    auto s = base_scene(name);
    s.markers[0].position = s.plan.markers[0] + Point3{4.0, 0.0, 3.0};
    s.markers[1].position = s.plan.markers[1] + Point3{0.0, -4.0, 3.0};
    return s;
  }
  if (name == "stent_distractor") {
    auto s = base_scene(name);
    // 40 mm lateral of the plan bounding box, five times the marker contrast
    s.distractors.push_back({{2.0 + 40.0, 0.0, -1.0}, 5.0 * s.marker_amplitude, 2.5});
    return s;
  }
  if (name == "table1_3_18") {
    // BH1 mean -2.6 mm drifting down 3.8 mm, BH2 mean +2.6 mm drifting down
    // 0.4 mm: means 5.2 mm apart and a 7.3 mm jump from BH1 end to BH2 start.
    auto s = lateral_pair_scene(name);
    set_rigid_motion(s, BreathHold::BH1, {{0.0, -2.6, 0.0}, {0.0, -3.8, 0.0}});
    set_rigid_motion(s, BreathHold::BH2, {{0.0, 2.6, 0.0}, {0.0, -0.4, 0.0}});
    return s;
  }
  if (name == "drift_2mm") {
    auto s = lateral_pair_scene(name);
    set_rigid_motion(s, BreathHold::BH1, {{}, {0.0, 2.0, 0.0}});
    set_rigid_motion(s, BreathHold::BH2, {{}, {0.0, 2.0, 0.0}});
    return s;
  }
  if (name == "noisy") {
    auto s = base_scene(name);
    s.noise_sigma = 0.05 * s.marker_amplitude;
    return s;
  }
  if (name == "hard_background") {
    auto s = base_scene(name);
    s.background.amplitude = 8000.0;
    s.background.period_px = 256.0;
    return s;
  }
  if (name == "occluded") {
    auto s = base_scene(name);
    s.occlusions.push_back({50, "m1", 20});
    return s;
  }
  if (name == "capsule_2markers") {
    auto s = base_scene(name);
    s.capsule = true;
    s.sigma_col_px = 0.8;
    s.sigma_row_px = 0.8;
    return s;
  }
  throw InputError("unknown scene '" + name + "'");
}

namespace {

json point_json(const Point3& p) { return json::array({p.x, p.y, p.z}); }

Point3 point_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw InputError("scene: points are [x, y, z] arrays");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

json scene_to_json(const PhantomScene& scene) {
  json markers = json::array();
  for (const auto& m : scene.markers) {
    json motion = json::object();
    for (const auto& [bh, seg] : m.motion)
      motion[std::string(to_string(bh))] = {{"mean_offset", point_json(seg.mean_offset)},
                                            {"drift", point_json(seg.drift)}};
    markers.push_back({{"id", m.id}, {"position", point_json(m.position)}, {"motion", motion}});
  }
  json plan = json::array();
  for (std::size_t k = 0; k < scene.plan.size(); ++k)
    plan.push_back({{"id", scene.plan.marker_ids[k]}, {"position", point_json(scene.plan.markers[k])}});
  json distractors = json::array();
  for (const auto& d : scene.distractors)
    distractors.push_back({{"position", point_json(d.position)}, {"amplitude", d.amplitude}, {"sigma_px", d.sigma_px}});
  json arc = json::array();
  for (const auto& a : scene.arc) {
    json e = {{"index", a.index}, {"angle_deg", a.angle_deg}, {"breath_hold", to_string(a.breath_hold)}};
    if (a.t_sec) e["t_sec"] = *a.t_sec;
    arc.push_back(std::move(e));
  }
  json occlusions = json::array();
  for (const auto& o : scene.occlusions)
    occlusions.push_back({{"frame_index", o.frame_index}, {"marker_id", o.marker_id}, {"half_size_px", o.half_size_px}});

  const auto& g = scene.geometry;
  return {
      {"name", scene.name},
      {"geometry",
       {{"sad_mm", g.sad}, {"sid_mm", g.sid}, {"cols", g.detector_cols}, {"rows", g.detector_rows},
        {"pixel_pitch_mm", g.pixel_pitch}}},
      {"markers", markers},
      {"plan", plan},
      {"background",
       {{"level", scene.background.level},
        {"amplitude", scene.background.amplitude},
        {"period_px", scene.background.period_px}}},
      {"noise_sigma", scene.noise_sigma},
      {"distractors", distractors},
      {"arc", arc},
      {"occlusions", occlusions},
      {"marker_amplitude", scene.marker_amplitude},
      {"sigma_col_px", scene.sigma_col_px},
      {"sigma_row_px", scene.sigma_row_px},
      {"capsule", scene.capsule},
      {"capsule_length_mm", scene.capsule_length_mm},
      {"capsule_axis", point_json(scene.capsule_axis)},
      {"seed", scene.seed},
  };
}

PhantomScene scene_from_json(const json& j) {
  try {
    PhantomScene s;
    s.name = j.at("name").get<std::string>();
    if (j.contains("geometry")) {
      const auto& g = j.at("geometry");
      s.geometry = {g.at("sad_mm").get<double>(), g.at("sid_mm").get<double>(), g.at("cols").get<int>(),
                    g.at("rows").get<int>(), g.at("pixel_pitch_mm").get<double>()};
    }
    for (const auto& m : j.at("markers")) {
      PhantomMarker pm{m.at("id").get<std::string>(), point_from(m.at("position")), {}};
      if (m.contains("motion")) {
        for (const auto& [label, seg] : m.at("motion").items())
          pm.motion[parse_breath_hold(label)] = {point_from(seg.at("mean_offset")), point_from(seg.at("drift"))};
      }
      s.markers.push_back(std::move(pm));
    }
    if (j.contains("plan")) {
      for (const auto& p : j.at("plan")) {
        s.plan.marker_ids.push_back(p.at("id").get<std::string>());
        s.plan.markers.push_back(point_from(p.at("position")));
      }
    } else {
      for (const auto& m : s.markers) {
        s.plan.marker_ids.push_back(m.id);
        s.plan.markers.push_back(m.position);
      }
    }
    if (j.contains("background")) {
      const auto& b = j.at("background");
      s.background = {b.value("level", s.background.level), b.value("amplitude", s.background.amplitude),
                      b.value("period_px", s.background.period_px)};
    }
    s.noise_sigma = j.value("noise_sigma", 0.0);
    for (const auto& d : j.value("distractors", json::array()))
      s.distractors.push_back({point_from(d.at("position")), d.value("amplitude", 15000.0), d.value("sigma_px", 2.5)});
    if (j.contains("arc")) {
      for (const auto& a : j.at("arc")) {
        ArcFrame e{a.at("index").get<int>(), a.at("angle_deg").get<double>(),
                   parse_breath_hold(a.at("breath_hold").get<std::string>()), std::nullopt};
        if (a.contains("t_sec")) e.t_sec = a.at("t_sec").get<double>();
        s.arc.push_back(e);
      }
    } else {
      s.arc = default_arc(j.value("frames_per_breath_hold", 100));
    }
    for (const auto& o : j.value("occlusions", json::array()))
      s.occlusions.push_back({o.at("frame_index").get<int>(), o.at("marker_id").get<std::string>(),
                              o.value("half_size_px", 20)});
    s.marker_amplitude = j.value("marker_amplitude", s.marker_amplitude);
    s.sigma_col_px = j.value("sigma_col_px", s.sigma_col_px);
    s.sigma_row_px = j.value("sigma_row_px", s.sigma_row_px);
    s.capsule = j.value("capsule", false);
    s.capsule_length_mm = j.value("capsule_length_mm", s.capsule_length_mm);
    if (j.contains("capsule_axis")) s.capsule_axis = point_from(j.at("capsule_axis"));
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw InputError(std::string("scene: ") + e.what());
  }
}

json ground_truth_to_json(const GroundTruth& truth) {
  json frames = json::array();
  for (std::size_t f = 0; f < truth.samples.size(); ++f) {
    json markers = json::array();
    for (std::size_t k = 0; k < truth.marker_ids.size(); ++k) {
      const auto& s = truth.samples[f][k];
      markers.push_back({{"id", truth.marker_ids[k]},
                         {"position_mm", point_json(s.position)},
                         {"u_mm", s.detector.u},
                         {"v_mm", s.detector.v},
                         {"on_detector", s.on_detector}});
    }
    frames.push_back({{"index", truth.frame_indices[f]}, {"markers", markers}});
  }
  json per_bh = json::array();
  for (std::size_t k = 0; k < truth.marker_ids.size(); ++k) {
    json entry = {{"id", truth.marker_ids[k]}};
    for (const auto& [bh, stats] : truth.si_stats[k]) {
      entry[std::string(to_string(bh))] = {{"mean_si_mm", stats.first},
                                           {"std_si_mm", stats.second},
                                           {"mean_position_mm", point_json(truth.mean_position[k].at(bh))}};
    }
    per_bh.push_back(std::move(entry));
  }
  return {{"frames", frames}, {"breath_holds", per_bh}};
}

void emit_scene(const PhantomScene& scene, const RenderedScan& rendered, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  save_scan(rendered.scan, out_dir / "manifest.json");
  save_marker_plan(scene.plan, out_dir / "plan.json");
  auto write = [](const fs::path& p, const json& j) {
    std::ofstream out(p);
    if (!out) throw InputError("cannot write " + p.string());
    out << j.dump(2) << '\n';
  };
  write(out_dir / "ground_truth.json", ground_truth_to_json(rendered.truth));
  write(out_dir / "scene.json", scene_to_json(scene));
}

}  // namespace mtrack
