// Command-line front end: simulate, refine, track, analyze, pipeline.

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "marker_track/cli.hpp"
#include "marker_track/phantom.hpp"

namespace {

using mtrack::RunConfig;

enum class Stage { Refine, Track, Analyze, Pipeline };

void add_common(CLI::App& cmd, RunConfig& cfg, Stage stage) {
  cmd.add_option("--manifest", cfg.manifest, "Scan manifest (JSON)")->required()->check(CLI::ExistingFile);
  auto* plan = cmd.add_option("--plan", cfg.plan, "Marker plan (JSON)")->check(CLI::ExistingFile);
  if (stage != Stage::Analyze) plan->required();
  cmd.add_option("--out", cfg.out_dir, "Output directory")->capture_default_str();
  cmd.add_flag("-v,--verbose", cfg.verbosity, "More progress output (repeatable)");

  if (stage == Stage::Refine || stage == Stage::Pipeline) {
    cmd.add_option("--mu", cfg.volume.mu, "Gradient suppression threshold")->capture_default_str();
    cmd.add_option("--lambda", cfg.volume.lambda_frac, "Volume threshold as a fraction of the maximum")
        ->capture_default_str();
    cmd.add_option("--n-voxels", cfg.volume.n_voxels, "Voxels per cube axis")->capture_default_str();
    cmd.add_option("--min-side", cfg.volume.min_side, "Smallest cube side (mm)")->capture_default_str();
    cmd.add_option("--margin", cfg.volume.margin_mm, "Rim added around the plan cube (mm)")->capture_default_str();
    cmd.add_flag("--save-volumes", cfg.save_volumes, "Write the raw probability volumes");
  }
  if (stage == Stage::Track || stage == Stage::Pipeline) {
    cmd.add_option("--window", cfg.baseline.window, "Baseline search window (px, odd)")->capture_default_str();
    cmd.add_option("--rho", cfg.baseline.growth_ratio, "Baseline region growth ratio")->capture_default_str();
    cmd.add_option("--max-area", cfg.baseline.max_area, "Baseline mask area cap (px)")->capture_default_str();
    cmd.add_option("--adapter-cmd", cfg.adapter_cmd, "External segmenter command (replaces the baseline)");
  }
  if (stage == Stage::Analyze || stage == Stage::Pipeline) {
    cmd.add_option("--lateral-tol", cfg.motion.lateral_tol, "Lateral outlier tolerance (mm)")->capture_default_str();
    cmd.add_option("--si-tol", cfg.motion.si_tol, "SI outlier tolerance (mm)")->capture_default_str();
  }
  if (stage == Stage::Track)
    cmd.add_option("--refined", cfg.refined, "Refined positions (default: <out>/refined.json)");
  if (stage == Stage::Analyze)
    cmd.add_option("--detections", cfg.detections, "Detections CSV (default: <out>/detections.csv)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fiducial marker refinement, tracking and residual-motion analysis for CBCT projections"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mtrack::tool_version()));

  mtrack::SimulateConfig sim;
  auto* simulate = app.add_subcommand("simulate", "Render a phantom scan with ground truth");
  auto* scene_opt = simulate->add_option("--scene", sim.scene_name, "Preset scene name");
  simulate->add_option("--scene-file", sim.scene_file, "Scene description (JSON)")
      ->check(CLI::ExistingFile)
      ->excludes(scene_opt);
  simulate->add_option("--out", sim.out_dir, "Output directory");
  bool list_scenes = false;
  simulate->add_flag("--list", list_scenes, "List preset scenes and exit");

  RunConfig cfg;
  auto* refine = app.add_subcommand("refine", "Refine 3D marker positions per breath-hold");
  add_common(*refine, cfg, Stage::Refine);
  auto* track = app.add_subcommand("track", "Track markers in every projection");
  add_common(*track, cfg, Stage::Track);
  auto* analyze = app.add_subcommand("analyze", "Screen detections and compute residual-motion statistics");
  add_common(*analyze, cfg, Stage::Analyze);
  auto* pipeline = app.add_subcommand("pipeline", "refine + track + analyze");
  add_common(*pipeline, cfg, Stage::Pipeline);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? mtrack::kExitOk : mtrack::kExitInputError;
  }

  cfg.log = &std::cerr;
  sim.log = &std::cerr;
  return mtrack::run_guarded(
      [&] {
        if (simulate->parsed()) {
          if (list_scenes) {
            for (const auto& name : mtrack::preset_names()) std::cout << name << '\n';
            return;
          }
          mtrack::cmd_simulate(sim);
        } else if (refine->parsed()) {
          mtrack::cmd_refine(cfg);
        } else if (track->parsed()) {
          mtrack::cmd_track(cfg);
        } else if (analyze->parsed()) {
          mtrack::cmd_analyze(cfg);
        } else if (pipeline->parsed()) {
          mtrack::cmd_pipeline(cfg);
        }
      },
      std::cerr);
}
