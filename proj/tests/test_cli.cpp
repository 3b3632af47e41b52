#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "marker_track/cli.hpp"
#include "marker_track/errors.hpp"
#include "marker_track/phantom.hpp"
#include "test_support.hpp"

namespace mtrack {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::TempDir;

const std::string kCli = MTRACK_CLI;
const std::string kStub = MTRACK_STUB_SEGMENTER;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = kCli + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_scene(const PhantomScene& scene, const fs::path& p) { std::ofstream(p) << scene_to_json(scene).dump(2); }

/// A shortened two-breath-hold scene simulated once for the whole suite.
class CliFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    auto scene = preset_scene("static_2markers");
    scene.arc = default_arc(40);
    write_scene(scene, *dir_ / "scene.json");
    ASSERT_EQ(run("simulate --scene-file " + (*dir_ / "scene.json").string() + " --out " + (*dir_ / "scan").string(),
                  *dir_ / "sim.log"),
              0)
        << slurp(*dir_ / "sim.log");
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path scan(const char* f) { return *dir_ / "scan" / f; }
  static std::string inputs() {
    return "--manifest " + scan("manifest.json").string() + " --plan " + scan("plan.json").string();
  }
  static TempDir* dir_;
};
TempDir* CliFixture::dir_ = nullptr;

TEST(RunGuarded, MapsErrorsToExitCodes) {
  std::ostringstream err;
  EXPECT_EQ(run_guarded([] {}, err), kExitOk);
  EXPECT_EQ(run_guarded([] { throw InputError("bad manifest"); }, err), kExitInputError);
  EXPECT_EQ(run_guarded([] { throw PipelineError("no marker evidence"); }, err), kExitPipelineFailure);
  EXPECT_EQ(run_guarded([] { throw AdapterError("child died"); }, err), kExitAdapterFailure);
  EXPECT_EQ(run_guarded([] { throw fs::filesystem_error("x", std::error_code()); }, err), kExitInputError);
  EXPECT_NE(err.str().find("error (input error): bad manifest"), std::string::npos) << err.str();
  EXPECT_NE(err.str().find("error (adapter failure): child died"), std::string::npos);
}

TEST(SimulateCommand, NeedsASceneAndAnOutput) {
  EXPECT_THROW(cmd_simulate({"static_2markers", {}, {}, nullptr}), InputError);
  EXPECT_THROW(cmd_simulate({{}, {}, "somewhere", nullptr}), InputError);
  EXPECT_THROW(cmd_simulate({"not_a_scene", {}, "somewhere", nullptr}), InputError);
}

TEST(CliBinary, UsageErrorsExitWithTwo) {
  TempDir dir("cli_usage");
  EXPECT_EQ(run("", dir / "log"), 2);
  EXPECT_EQ(run("refine --plan p.json", dir / "log"), 2);
  EXPECT_EQ(run("simulate --scene nope --out " + (dir / "o").string(), dir / "log"), 2);
  EXPECT_EQ(run("refine --manifest /nonexistent/m.json --plan /nonexistent/p.json --out " + dir.path().string(),
                dir / "log"),
            2);
  EXPECT_NE(slurp(dir / "log").find("does not exist"), std::string::npos);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_EQ(run("refine --manifest " + (dir / "bad.json").string() + " --plan " + (dir / "bad.json").string() +
                    " --out " + dir.path().string(),
                dir / "log"),
            2);
  EXPECT_NE(slurp(dir / "log").find("error (input error)"), std::string::npos) << slurp(dir / "log");
  EXPECT_EQ(run("simulate --list", dir / "log"), 0);
  EXPECT_NE(slurp(dir / "log").find("table1_3_18"), std::string::npos);
  EXPECT_EQ(run("--version", dir / "log"), 0);
}

TEST_F(CliFixture, SimulateIsBitIdenticalOnRerun) {
  TempDir dir("cli_sim");
  ASSERT_EQ(run("simulate --scene-file " + (*dir_ / "scene.json").string() + " --out " + dir.path().string(),
                dir / "log"),
            0);
  for (const char* f : {"manifest.json", "projections.u16", "plan.json", "ground_truth.json", "scene.json"})
    EXPECT_EQ(slurp(dir / f), slurp(scan(f))) << f;
}

TEST_F(CliFixture, PipelineOutputsAndProvenanceAreReproducible) {
  TempDir a("cli_a"), b("cli_b");
  ASSERT_EQ(run("pipeline " + inputs() + " --out " + a.path().string(), a / "log"), 0) << slurp(a / "log");
  ASSERT_EQ(run("pipeline " + inputs() + " --out " + b.path().string(), b / "log"), 0) << slurp(b / "log");
  for (const char* f : {kRefinedFile, kDetectionsFile, kReportFile, kTable1File, kSiSeriesFile})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;

  const json report = read_json(a / kReportFile);
  const json& prov = report.at("provenance");
  EXPECT_EQ(prov.at("command"), "pipeline");
  EXPECT_EQ(prov.at("inputs").at("manifest"), file_digest(scan("manifest.json")));
  EXPECT_EQ(prov.at("inputs").at("pixels"), file_digest(scan("projections.u16")));
  EXPECT_EQ(prov.at("config_digest"), "sha256:" + sha256_hex(prov.at("config").dump()));
  EXPECT_EQ(report.at("detection").at("slots"), 160);

  const std::string table = slurp(a / kTable1File);
  EXPECT_NE(table.find("# config_digest: " + prov.at("config_digest").get<std::string>()), std::string::npos);
  EXPECT_NE(table.find(",pooled,"), std::string::npos);
}

TEST_F(CliFixture, StagedRunMatchesPipeline) {
  TempDir whole("cli_whole"), staged("cli_staged");
  ASSERT_EQ(run("pipeline " + inputs() + " --out " + whole.path().string(), whole / "log"), 0);
  ASSERT_EQ(run("refine " + inputs() + " --out " + staged.path().string(), staged / "log"), 0);
  ASSERT_EQ(run("track " + inputs() + " --out " + staged.path().string(), staged / "log"), 0);
  ASSERT_EQ(run("analyze " + inputs() + " --out " + staged.path().string(), staged / "log"), 0);
  const json a = read_json(whole / kReportFile);
  const json b = read_json(staged / kReportFile);
  EXPECT_EQ(a.at("markers"), b.at("markers"));
  EXPECT_EQ(a.at("pooled"), b.at("pooled"));
  EXPECT_EQ(b.at("provenance").at("command"), "analyze");
  EXPECT_TRUE(b.at("provenance").at("inputs").contains("detections"));
}

TEST_F(CliFixture, ParametersAreRecordedInProvenance) {
  TempDir dir("cli_mu");
  ASSERT_EQ(run("pipeline " + inputs() + " --mu 16 --out " + dir.path().string(), dir / "log"), 0);
  const json prov = read_json(dir / kReportFile).at("provenance");
  EXPECT_EQ(prov.at("config").at("volume").at("mu"), 16.0);
  TempDir other("cli_mu32");
  ASSERT_EQ(run("pipeline " + inputs() + " --out " + other.path().string(), other / "log"), 0);
  EXPECT_NE(read_json(other / kReportFile).at("provenance").at("config_digest"), prov.at("config_digest"));
}

TEST_F(CliFixture, AdapterCommandIsUsedAndFailuresExitWithFour) {
  TempDir dir("cli_adapter");
  ASSERT_EQ(run("pipeline " + inputs() + " --out " + dir.path().string(), dir / "log"), 0);
  const std::string baseline = slurp(dir / kReportFile);
  ASSERT_EQ(run("track " + inputs() + " --adapter-cmd '" + kStub + "' --out " + dir.path().string(), dir / "log"), 0);
  ASSERT_EQ(run("analyze " + inputs() + " --out " + dir.path().string(), dir / "log"), 0);
  EXPECT_EQ(read_json(dir / kReportFile).at("markers"), json::parse(baseline).at("markers"));

  EXPECT_EQ(run("track " + inputs() + " --adapter-cmd '" + kStub + " --fail-init' --out " + dir.path().string(),
                dir / "log"),
            4);
  EXPECT_NE(slurp(dir / "log").find("model could not be loaded"), std::string::npos);
}

TEST_F(CliFixture, BadParametersAreInputErrors) {
  TempDir dir("cli_params");
  EXPECT_EQ(run("refine " + inputs() + " --lambda 1.5 --out " + dir.path().string(), dir / "log"), 2);
  EXPECT_EQ(run("analyze " + inputs() + " --si-tol 0 --out " + dir.path().string(), dir / "log"), 2);
  EXPECT_EQ(run("track " + inputs() + " --out " + dir.path().string(), dir / "log"), 2);  // no refined.json yet
}

TEST(CliBinaryScenes, MissingSecondBreathHoldGivesPartialReport) {
  TempDir dir("cli_bh1");
  auto scene = preset_scene("static_2markers");
  scene.arc = default_arc(40);
  scene.arc.resize(40);
  write_scene(scene, dir / "scene.json");
  ASSERT_EQ(run("simulate --scene-file " + (dir / "scene.json").string() + " --out " + (dir / "scan").string(),
                dir / "log"),
            0);
  const std::string in = "--manifest " + (dir / "scan" / "manifest.json").string() + " --plan " +
                         (dir / "scan" / "plan.json").string() + " --out " + dir.path().string();
  ASSERT_EQ(run("pipeline " + in, dir / "log"), 0) << slurp(dir / "log");
  std::istringstream table(slurp(dir / kTable1File));
  std::string line;
  int rows = 0;
  while (std::getline(table, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("scan_id", 0) == 0) continue;
    ++rows;
    EXPECT_NE(line.find(",NA,NA,NA,NA,NA,NA"), std::string::npos) << line;
  }
  EXPECT_EQ(rows, 3);
}

TEST(CliBinaryScenes, NoMarkerEvidenceExitsWithThree) {
  TempDir dir("cli_blank");
  auto scene = preset_scene("static_noiseless");
  scene.arc = default_arc(10);
  scene.marker_amplitude = 1.0;
  write_scene(scene, dir / "scene.json");
  ASSERT_EQ(run("simulate --scene-file " + (dir / "scene.json").string() + " --out " + (dir / "scan").string(),
                dir / "log"),
            0);
  const std::string in = "--manifest " + (dir / "scan" / "manifest.json").string() + " --plan " +
                         (dir / "scan" / "plan.json").string() + " --out " + dir.path().string();
  EXPECT_EQ(run("refine " + in, dir / "log"), 3);
  EXPECT_NE(slurp(dir / "log").find("no marker evidence"), std::string::npos) << slurp(dir / "log");
}

}  // namespace
}  // namespace mtrack
