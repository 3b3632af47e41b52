#include "marker_track/cli.hpp"

#include <algorithm>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#include "marker_track/errors.hpp"
#include "marker_track/phantom.hpp"
#include "marker_track/segmenter_bridge.hpp"

namespace mtrack {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
  volume.validate();
  baseline.validate();
  motion.validate();
}

json RunConfig::volume_json() const {
  return {{"n_voxels", volume.n_voxels},
          {"min_side_mm", volume.min_side},
          {"margin_mm", volume.margin_mm},
          {"mu", volume.mu},
          {"lambda_frac", volume.lambda_frac}};
}

json RunConfig::segmenter_json() const {
  if (!adapter_cmd.empty()) return {{"kind", "external"}, {"command", adapter_cmd}};
  return {{"kind", "baseline"},
          {"window_px", baseline.window},
          {"growth_ratio", baseline.growth_ratio},
          {"max_area_px", baseline.max_area}};
}

json RunConfig::motion_json() const {
  return {{"lateral_tol_mm", motion.lateral_tol}, {"si_tol_mm", motion.si_tol}};
}

namespace {

void say(const RunConfig& config, int level, const std::string& message) {
  if (config.log && config.verbosity >= level) *config.log << message << '\n';
}

fs::path stage_input(const fs::path& given, const fs::path& out_dir, const char* name) {
  return given.empty() ? out_dir / name : given;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("cannot parse " + path.string() + ": " + e.what());
  }
}

std::string dump(const json& j) { return j.dump(2) + '\n'; }

void add_scan_inputs(Provenance& prov, const RunConfig& config, bool with_pixels) {
  prov.inputs["manifest"] = file_digest(config.manifest);
  if (with_pixels) prov.inputs["pixels"] = file_digest(read_manifest_info(config.manifest).pixel_path);
}

std::unique_ptr<Segmenter> make_segmenter(const RunConfig& config) {
  if (config.adapter_cmd.empty()) return std::make_unique<BaselineSegmenter>(config.baseline);
  return std::make_unique<ExternalSegmenter>(config.adapter_cmd);
}

RefinedSet refine_all(const ScanSet& scan, const MarkerPlan& plan, const RunConfig& config) {
  RefinedSet refined;
  for (const auto& [bh, window] : scan.breath_hold_windows) {
    VoxelCube raw({}, 1.0, 2);
    RefinedMarkers r = refine_markers(scan, plan, bh, config.volume, config.save_volumes ? &raw : nullptr);
    if (config.save_volumes) save_volume(raw, config.out_dir / ("volume_" + std::string(to_string(bh))));
    std::ostringstream msg;
    msg << "refine " << to_string(bh) << ": frames " << window.first << ".." << window.last << ", match cost "
        << r.match_cost << " mm";
    say(config, 1, msg.str());
    refined.emplace(bh, std::move(r));
  }
  return refined;
}

TrackResult track_all(const ScanSet& scan, const MarkerPlan& plan, const RefinedSet& refined,
                      const RunConfig& config) {
  auto segmenter = make_segmenter(config);
  TrackResult result = track_scan(scan, plan, refined, *segmenter);
  std::ostringstream msg;
  msg << "track: " << result.detected << " of " << result.slots << " marker-frames detected (" << segmenter->name()
      << ")";
  say(config, 1, msg.str());
  return result;
}

void write_detections(const fs::path& path, const std::string& scan_id, const TrackResult& result,
                      const Provenance& prov) {
  std::ostringstream out;
  prov.write_comment(out);
  write_detections_csv(out, scan_id, result.detections);
  write_text_file(path, out.str());
}

void write_analysis(const fs::path& out_dir, const MotionAnalysis& analysis, const Provenance& prov) {
  write_text_file(out_dir / kReportFile, dump(report_to_json(analysis.report, prov)));
  std::ostringstream table;
  write_table1_csv(table, analysis.report, prov);
  write_text_file(out_dir / kTable1File, table.str());
  std::ostringstream series;
  write_si_series_csv(series, analysis.report.scan_id, analysis.traces, prov);
  write_text_file(out_dir / kSiSeriesFile, series.str());
}

void log_analysis(const RunConfig& config, const MotionAnalysis& analysis) {
  for (const auto& m : analysis.report.markers) {
    std::ostringstream msg;
    msg << "analyze " << m.marker_id << ":";
    for (const auto& [bh, s] : m.per_bh) msg << ' ' << to_string(bh) << " mean " << s.mean << " mm";
    if (m.avg_diff) msg << ", avg diff " << *m.avg_diff << " mm";
    if (m.gap) msg << ", gap " << *m.gap << " mm";
    for (const auto& note : m.notes) msg << " [" << note << ']';
    say(config, 1, msg.str());
  }
}

}  // namespace

void cmd_simulate(const SimulateConfig& config) {
  if (config.out_dir.empty()) throw InputError("simulate needs an output directory");
  PhantomScene scene;
  if (!config.scene_name.empty()) {
    scene = preset_scene(config.scene_name);
  } else if (!config.scene_file.empty()) {
    scene = scene_from_json(read_json_file(config.scene_file));
  } else {
    throw InputError("simulate needs a scene name or a scene file");
  }
  const RenderedScan rendered = render(scene);
  emit_scene(scene, rendered, config.out_dir);
  if (config.log) *config.log << "simulate: " << rendered.scan.frames.size() << " frames written to " << config.out_dir.string() << '\n';
}

RefinedSet cmd_refine(const RunConfig& config) {
  config.validate();
  const ScanSet scan = load_scan(config.manifest);
  const MarkerPlan plan = load_marker_plan(config.plan);
  for (const auto& w : scan.warnings) say(config, 0, "warning: " + w);

  const RefinedSet refined = refine_all(scan, plan, config);

  Provenance prov{"refine", {{"volume", config.volume_json()}}, {}};
  add_scan_inputs(prov, config, true);
  prov.inputs["plan"] = file_digest(config.plan);
  write_text_file(config.out_dir / kRefinedFile, dump(refined_to_json(scan.scan_id, plan, refined, prov)));
  return refined;
}

TrackResult cmd_track(const RunConfig& config) {
  config.validate();
  const ScanSet scan = load_scan(config.manifest);
  const MarkerPlan plan = load_marker_plan(config.plan);
  const fs::path refined_path = stage_input(config.refined, config.out_dir, kRefinedFile);
  const RefinedSet refined = refined_from_json(read_json_file(refined_path), plan);

  const TrackResult result = track_all(scan, plan, refined, config);

  Provenance prov{"track", {{"segmenter", config.segmenter_json()}}, {}};
  add_scan_inputs(prov, config, true);
  prov.inputs["plan"] = file_digest(config.plan);
  prov.inputs["refined"] = file_digest(refined_path);
  write_detections(config.out_dir / kDetectionsFile, scan.scan_id, result, prov);
  return result;
}

MotionAnalysis cmd_analyze(const RunConfig& config) {
  config.validate();
  const ManifestInfo info = read_manifest_info(config.manifest);
  const fs::path det_path = stage_input(config.detections, config.out_dir, kDetectionsFile);
  std::ifstream in(det_path);
  if (!in) throw InputError("cannot open " + det_path.string());
  std::string scan_id;
  std::vector<Detection2D> detections = read_detections_csv(in, &scan_id);
  if (scan_id.empty()) scan_id = info.scan_id;

  // Timestamps live in the manifest, not in the detections file.
  std::map<int, std::optional<double>> times;
  for (const auto& f : info.frames) times[f.index] = f.t_sec;
  for (auto& d : detections) {
    auto it = times.find(d.frame_index);
    if (it == times.end())
      throw InputError(det_path.string() + ": frame " + std::to_string(d.frame_index) + " is not in the manifest");
    d.t_sec = it->second;
  }

  std::vector<std::string> ids;
  if (!config.plan.empty()) {
    ids = load_marker_plan(config.plan).marker_ids;
  } else {
    for (const auto& d : detections)
      if (std::find(ids.begin(), ids.end(), d.marker_id) == ids.end()) ids.push_back(d.marker_id);
  }

  MotionAnalysis analysis = analyze_motion(scan_id, ids, detections, info.geometry, config.motion);
  log_analysis(config, analysis);

  Provenance prov{"analyze", {{"motion", config.motion_json()}}, {}};
  add_scan_inputs(prov, config, false);
  if (!config.plan.empty()) prov.inputs["plan"] = file_digest(config.plan);
  prov.inputs["detections"] = file_digest(det_path);
  write_analysis(config.out_dir, analysis, prov);
  return analysis;
}

MotionAnalysis cmd_pipeline(const RunConfig& config) {
  config.validate();
  const ScanSet scan = load_scan(config.manifest);
  const MarkerPlan plan = load_marker_plan(config.plan);
  for (const auto& w : scan.warnings) say(config, 0, "warning: " + w);

  Provenance prov{"pipeline",
                  {{"volume", config.volume_json()},
                   {"segmenter", config.segmenter_json()},
                   {"motion", config.motion_json()}},
                  {}};
  add_scan_inputs(prov, config, true);
  prov.inputs["plan"] = file_digest(config.plan);

  const RefinedSet refined = refine_all(scan, plan, config);
  write_text_file(config.out_dir / kRefinedFile, dump(refined_to_json(scan.scan_id, plan, refined, prov)));

  const TrackResult result = track_all(scan, plan, refined, config);
  write_detections(config.out_dir / kDetectionsFile, scan.scan_id, result, prov);

  MotionAnalysis analysis = analyze_motion(scan.scan_id, plan.marker_ids, result.detections, scan.geometry, config.motion);
  log_analysis(config, analysis);
  write_analysis(config.out_dir, analysis, prov);
  return analysis;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const AdapterError*>(&e)) return kExitAdapterFailure;
  if (dynamic_cast<const InputError*>(&e)) return kExitInputError;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kExitInputError;
  return kExitPipelineFailure;
}

int run_guarded(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return kExitOk;
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    const char* kind = code == kExitInputError ? "input error" : code == kExitAdapterFailure ? "adapter failure"
                                                                                              : "pipeline failure";
    err << "error (" << kind << "): " << e.what() << '\n';
    return code;
  }
}

}  // namespace mtrack
