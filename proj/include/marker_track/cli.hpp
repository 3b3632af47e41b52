#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>

#include "json.hpp"

#include "marker_track/marker_volume.hpp"
#include "marker_track/projection_tracker.hpp"
#include "marker_track/reporting.hpp"
#include "marker_track/residual_motion.hpp"

namespace mtrack {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitInputError = 2,
  kExitPipelineFailure = 3,
  kExitAdapterFailure = 4,
};

/// Settings shared by refine, track, analyze and pipeline.
struct RunConfig {
  std::filesystem::path manifest;
  std::filesystem::path plan;
  std::filesystem::path out_dir = ".";
  /// Inputs from an earlier stage; default to the file in out_dir.
  std::filesystem::path refined;
  std::filesystem::path detections;

  VolumeParams volume;
  BaselineParams baseline;
  MotionParams motion;
  std::string adapter_cmd;  ///< empty: built-in baseline segmenter
  bool save_volumes = false;

  int verbosity = 0;
  std::ostream* log = nullptr;  ///< progress messages; null is silent

  /// Throws InputError on out-of-range parameters.
  void validate() const;
  /// Effective parameters as recorded in provenance blocks.
  [[nodiscard]] nlohmann::json volume_json() const;
  [[nodiscard]] nlohmann::json segmenter_json() const;
  [[nodiscard]] nlohmann::json motion_json() const;
};

struct SimulateConfig {
  std::string scene_name;
  std::filesystem::path scene_file;  ///< used when scene_name is empty
  std::filesystem::path out_dir;
  std::ostream* log = nullptr;
};

/// Output file names inside out_dir.
inline constexpr const char* kRefinedFile = "refined.json";
inline constexpr const char* kDetectionsFile = "detections.csv";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kTable1File = "table1.csv";
inline constexpr const char* kSiSeriesFile = "si_series.csv";

void cmd_simulate(const SimulateConfig& config);
RefinedSet cmd_refine(const RunConfig& config);
TrackResult cmd_track(const RunConfig& config);
MotionAnalysis cmd_analyze(const RunConfig& config);
MotionAnalysis cmd_pipeline(const RunConfig& config);

/// Maps an exception to the tool's exit code.
int exit_code_for(const std::exception& e);

/// Runs `body`, reporting any exception on `err`, and returns the exit code.
int run_guarded(const std::function<void()>& body, std::ostream& err);

}  // namespace mtrack
