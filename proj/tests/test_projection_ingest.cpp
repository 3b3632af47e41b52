#include <gtest/gtest.h>

#include <fstream>

#include "json.hpp"

#include "marker_track/errors.hpp"
#include "marker_track/projection_ingest.hpp"
#include "test_support.hpp"

namespace mtrack {
namespace {

using nlohmann::json;
using testing::TempDir;

AcquisitionGeometry small_geometry() {
  AcquisitionGeometry g;
  g.detector_cols = 6;
  g.detector_rows = 4;
  return g;
}

ScanSet small_scan(int frames_per_bh = 3) {
  ScanSet scan;
  scan.scan_id = "unit";
  scan.geometry = small_geometry();
  int index = 0;
  for (BreathHold bh : {BreathHold::BH1, BreathHold::BH2}) {
    for (int k = 0; k < frames_per_bh; ++k, ++index) {
      ProjectionFrame f;
      f.index = index;
      f.phi = GantryAngle::from_degrees(10.0 + 1.5 * index);
      f.breath_hold = bh;
      f.t_sec = 0.25 * index;
      f.pixels = Image<std::uint16_t>(4, 6);
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 6; ++c) f.pixels.at(r, c) = static_cast<std::uint16_t>(1000 * index + 10 * r + c + 60000 * (r == 3 && c == 5));
      scan.frames.push_back(std::move(f));
    }
  }
  scan.breath_hold_windows = breath_hold_windows(scan.frames);
  return scan;
}

json read(const std::filesystem::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

void write(const std::filesystem::path& p, const json& j) {
  std::ofstream out(p);
  out << j.dump(2);
}

TEST(LoadScan, RoundTripIsLossless) {
  TempDir dir("ingest");
  const ScanSet scan = small_scan();
  save_scan(scan, dir / "manifest.json");
  const ScanSet back = load_scan(dir / "manifest.json");
  ASSERT_EQ(back.frames.size(), scan.frames.size());
  EXPECT_EQ(back.scan_id, "unit");
  EXPECT_EQ(back.geometry.detector_cols, 6);
  ASSERT_EQ(back.breath_hold_windows.size(), 2u);
  EXPECT_EQ(back.breath_hold_windows.at(BreathHold::BH1).last, 2);
  EXPECT_EQ(back.breath_hold_windows.at(BreathHold::BH2).first, 3);
  for (std::size_t i = 0; i < scan.frames.size(); ++i) {
    EXPECT_EQ(back.frames[i].index, scan.frames[i].index);
    EXPECT_NEAR(back.frames[i].phi.radians(), scan.frames[i].phi.radians(), 1e-12);
    EXPECT_EQ(back.frames[i].breath_hold, scan.frames[i].breath_hold);
    EXPECT_EQ(back.frames[i].t_sec, scan.frames[i].t_sec);
    EXPECT_TRUE(back.frames[i].pixels == scan.frames[i].pixels);
  }
  EXPECT_TRUE(back.warnings.empty());
}

TEST(LoadScan, ManifestInfoSkipsPixels) {
  TempDir dir("ingest");
  save_scan(small_scan(), dir / "manifest.json");
  std::filesystem::remove(dir / "projections.u16");
  const ManifestInfo info = read_manifest_info(dir / "manifest.json");
  EXPECT_EQ(info.frames.size(), 6u);
  EXPECT_EQ(info.pixel_path.filename(), "projections.u16");
  EXPECT_THROW(load_scan(dir / "manifest.json"), InputError);
}

TEST(LoadScan, EmptyScanIsRejected) {
  TempDir dir("ingest");
  save_scan(small_scan(), dir / "manifest.json");
  json m = read(dir / "manifest.json");
  m["frames"] = json::array();
  write(dir / "manifest.json", m);
  try {
    load_scan(dir / "manifest.json");
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("empty scan"), std::string::npos);
  }
}

TEST(LoadScan, OverlappingWindowsAreRejected) {
  TempDir dir("ingest");
  save_scan(small_scan(), dir / "manifest.json");
  json m = read(dir / "manifest.json");
  m["frames"][4]["breath_hold"] = "BH1";  // BH1 now reaches past the start of BH2
  write(dir / "manifest.json", m);
  EXPECT_THROW(load_scan(dir / "manifest.json"), InputError);
}

TEST(LoadScan, SizeMismatchIsRejected) {
  TempDir dir("ingest");
  save_scan(small_scan(), dir / "manifest.json");
  json m = read(dir / "manifest.json");
  m["geometry"]["cols"] = 7;
  write(dir / "manifest.json", m);
  EXPECT_THROW(load_scan(dir / "manifest.json"), InputError);
}

TEST(LoadScan, NonIncreasingIndicesAreRejected) {
  TempDir dir("ingest");
  save_scan(small_scan(), dir / "manifest.json");
  json m = read(dir / "manifest.json");
  m["frames"][2]["index"] = 1;
  write(dir / "manifest.json", m);
  EXPECT_THROW(load_scan(dir / "manifest.json"), InputError);
}

TEST(LoadScan, BadFieldsAreInputErrors) {
  TempDir dir("ingest");
  save_scan(small_scan(), dir / "manifest.json");
  const json good = read(dir / "manifest.json");

  json m = good;
  m["pixel_dtype"] = "f32le";
  write(dir / "manifest.json", m);
  EXPECT_THROW(load_scan(dir / "manifest.json"), InputError);

  m = good;
  m["frames"][0]["breath_hold"] = "BH3";
  write(dir / "manifest.json", m);
  EXPECT_THROW(load_scan(dir / "manifest.json"), InputError);

  m = good;
  m["frames"][0]["angle_deg"] = "ten";
  write(dir / "manifest.json", m);
  EXPECT_THROW(load_scan(dir / "manifest.json"), InputError);

  m = good;
  m.erase("geometry");
  write(dir / "manifest.json", m);
  EXPECT_THROW(load_scan(dir / "manifest.json"), InputError);

  std::ofstream(dir / "manifest.json") << "{ not json";
  EXPECT_THROW(load_scan(dir / "manifest.json"), InputError);
  EXPECT_THROW(load_scan(dir / "missing.json"), InputError);
}

TEST(LoadScan, NonMonotoneAnglesWarn) {
  TempDir dir("ingest");
  ScanSet scan = small_scan();
  scan.frames[1].phi = GantryAngle::from_degrees(5.0);  // 10 -> 5 -> 13
  save_scan(scan, dir / "manifest.json");
  const ScanSet back = load_scan(dir / "manifest.json");
  ASSERT_EQ(back.warnings.size(), 1u);
  EXPECT_NE(back.warnings[0].find("BH1"), std::string::npos);
}

TEST(BreathHoldWindows, SingleWindowIsFine) {
  ScanSet scan = small_scan();
  for (auto& f : scan.frames) f.breath_hold = BreathHold::BH1;
  const auto w = breath_hold_windows(scan.frames);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w.at(BreathHold::BH1).first, 0);
  EXPECT_EQ(w.at(BreathHold::BH1).last, 5);
}

TEST(BreathHoldWindows, Bh2BeforeBh1IsRejected) {
  ScanSet scan = small_scan();
  for (auto& f : scan.frames) f.breath_hold = f.index < 3 ? BreathHold::BH2 : BreathHold::BH1;
  EXPECT_THROW(breath_hold_windows(scan.frames), InputError);
}

TEST(LoadMarkerPlan, TwoMarkersThirtyMillimetresApart) {
  TempDir dir("plan");
  MarkerPlan plan{{"m1", "m2"}, {{0, -15, 0}, {0, 15, 0}}};
  save_marker_plan(plan, dir / "plan.json");
  const MarkerPlan back = load_marker_plan(dir / "plan.json");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.marker_ids, plan.marker_ids);
  EXPECT_NEAR(distance(back.markers[0], back.markers[1]), 30.0, 1e-12);
}

TEST(LoadMarkerPlan, SingleMarkerIsAccepted) {
  TempDir dir("plan");
  save_marker_plan({{"only"}, {{1, 2, 3}}}, dir / "plan.json");
  EXPECT_EQ(load_marker_plan(dir / "plan.json").size(), 1u);
}

TEST(LoadMarkerPlan, EmptyAndDuplicatePlansAreRejected) {
  TempDir dir("plan");
  write(dir / "plan.json", {{"markers", json::array()}});
  EXPECT_THROW(load_marker_plan(dir / "plan.json"), InputError);
  write(dir / "plan.json", {{"markers",
                             {{{"id", "a"}, {"x_mm", 0}, {"y_mm", 0}, {"z_mm", 0}},
                              {{"id", "a"}, {"x_mm", 1}, {"y_mm", 0}, {"z_mm", 0}}}}});
  EXPECT_THROW(load_marker_plan(dir / "plan.json"), InputError);
}

TEST(ParseBreathHold, AcceptsOnlyKnownLabels) {
  EXPECT_EQ(parse_breath_hold("BH1"), BreathHold::BH1);
  EXPECT_EQ(parse_breath_hold("BH2"), BreathHold::BH2);
  EXPECT_EQ(to_string(BreathHold::BH2), "BH2");
  EXPECT_THROW(parse_breath_hold("bh1"), InputError);
}

}  // namespace
}  // namespace mtrack
