#include "marker_track/projection_ingest.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "json.hpp"

#include "marker_track/errors.hpp"

namespace mtrack {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(BreathHold bh) { return bh == BreathHold::BH1 ? "BH1" : "BH2"; }

BreathHold parse_breath_hold(std::string_view text) {
  if (text == "BH1") return BreathHold::BH1;
  if (text == "BH2") return BreathHold::BH2;
  throw InputError("unknown breath-hold label '" + std::string(text) + "'");
}

std::vector<const ProjectionFrame*> ScanSet::frames_in(BreathHold bh) const {
  std::vector<const ProjectionFrame*> out;
  for (const auto& f : frames)
    if (f.breath_hold == bh) out.push_back(&f);
  return out;
}

std::map<BreathHold, FrameWindow> breath_hold_windows(const std::vector<ProjectionFrame>& frames) {
  std::map<BreathHold, FrameWindow> windows;
  for (const auto& f : frames) {
    auto [it, inserted] = windows.try_emplace(f.breath_hold, FrameWindow{f.index, f.index});
    if (!inserted) {
      it->second.first = std::min(it->second.first, f.index);
      it->second.last = std::max(it->second.last, f.index);
    }
  }
  if (windows.size() == 2) {
    const auto& bh1 = windows.at(BreathHold::BH1);
    const auto& bh2 = windows.at(BreathHold::BH2);
    if (bh1.last >= bh2.first) {
      std::ostringstream msg;
      msg << "breath-hold windows overlap or are out of order: BH1 [" << bh1.first << ", " << bh1.last << "], BH2 ["
          << bh2.first << ", " << bh2.last << "]";
      throw InputError(msg.str());
    }
  }
  return windows;
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("cannot parse " + path.string() + ": " + e.what());
  }
}

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw InputError(where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError(where + ": field '" + key + "' has the wrong type");
  }
}

double require_finite(const json& obj, const char* key, const std::string& where) {
  if (obj.is_object() && obj.contains(key) && !obj.at(key).is_number())
    throw InputError(where + ": field '" + key + "' must be a number");
  const double v = require<double>(obj, key, where);
  if (!std::isfinite(v)) throw InputError(where + ": field '" + key + "' is not finite");
  return v;
}

}  // namespace

namespace {

ManifestInfo parse_manifest_info(const json& manifest, const fs::path& manifest_path) {
  const std::string where = manifest_path.string();
  ManifestInfo info;
  info.scan_id = require<std::string>(manifest, "scan_id", where);

  const json& g = manifest.contains("geometry") ? manifest.at("geometry") : json();
  info.geometry.sad = require_finite(g, "sad_mm", where + " geometry");
  info.geometry.sid = require_finite(g, "sid_mm", where + " geometry");
  info.geometry.detector_cols = require<int>(g, "cols", where + " geometry");
  info.geometry.detector_rows = require<int>(g, "rows", where + " geometry");
  info.geometry.pixel_pitch = require_finite(g, "pixel_pitch_mm", where + " geometry");
  info.geometry.validate();

  info.pixel_path = manifest_path.parent_path() / require<std::string>(manifest, "pixel_file", where);

  const auto dtype = require<std::string>(manifest, "pixel_dtype", where);
  if (dtype != "u16le") throw InputError(where + ": unsupported pixel_dtype '" + dtype + "'");

  const auto frames = require<json>(manifest, "frames", where);
  if (!frames.is_array()) throw InputError(where + ": 'frames' must be an array");
  if (frames.empty()) throw InputError(where + ": empty scan");
  info.frames.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const json& fj = frames[i];
    const std::string fwhere = where + " frame " + std::to_string(i);
    FrameInfo f;
    f.index = require<int>(fj, "index", fwhere);
    f.angle_deg = require_finite(fj, "angle_deg", fwhere);
    f.breath_hold = parse_breath_hold(require<std::string>(fj, "breath_hold", fwhere));
    if (fj.contains("t_sec") && !fj.at("t_sec").is_null()) f.t_sec = require_finite(fj, "t_sec", fwhere);
    if (!info.frames.empty() && f.index <= info.frames.back().index)
      throw InputError(fwhere + ": frame indices must be strictly increasing");
    info.frames.push_back(f);
  }
  return info;
}

}  // namespace

ManifestInfo read_manifest_info(const fs::path& manifest_path) {
  return parse_manifest_info(read_json(manifest_path), manifest_path);
}

ScanSet load_scan(const fs::path& manifest_path) {
  const ManifestInfo info = read_manifest_info(manifest_path);

  ScanSet scan;
  scan.scan_id = info.scan_id;
  scan.geometry = info.geometry;

  const int rows = scan.geometry.detector_rows;
  const int cols = scan.geometry.detector_cols;
  const std::size_t frame_pixels = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);

  const fs::path& pixel_path = info.pixel_path;
  std::ifstream pin(pixel_path, std::ios::binary);
  if (!pin) throw InputError("cannot open pixel file " + pixel_path.string());
  const std::vector<unsigned char> raw((std::istreambuf_iterator<char>(pin)), std::istreambuf_iterator<char>());
  const std::size_t expected = info.frames.size() * frame_pixels * 2;
  if (raw.size() != expected) {
    throw InputError("dimension mismatch: " + pixel_path.string() + " holds " + std::to_string(raw.size()) +
                     " bytes, manifest implies " + std::to_string(expected));
  }

  scan.frames.reserve(info.frames.size());
  std::size_t offset = 0;
  for (const FrameInfo& f : info.frames) {
    ProjectionFrame frame;
    frame.index = f.index;
    frame.phi = GantryAngle::from_degrees(f.angle_deg);
    frame.breath_hold = f.breath_hold;
    frame.t_sec = f.t_sec;

    frame.pixels = Image<std::uint16_t>(rows, cols);
    auto px = frame.pixels.data();
    for (std::size_t k = 0; k < frame_pixels; ++k, offset += 2)
      px[k] = static_cast<std::uint16_t>(raw[offset] | (raw[offset + 1] << 8));
    scan.frames.push_back(std::move(frame));
  }

  scan.breath_hold_windows = breath_hold_windows(scan.frames);

  // Angles are expected to move monotonically within a breath-hold; report
  // reversals without rejecting the scan.
  for (const auto& [bh, window] : scan.breath_hold_windows) {
    const auto members = scan.frames_in(bh);
    int direction = 0;
    for (std::size_t k = 1; k < members.size(); ++k) {
      const double step = members[k]->phi.degrees() - members[k - 1]->phi.degrees();
      const int d = (step > 0.0) - (step < 0.0);
      if (d == 0) continue;
      if (direction == 0) {
        direction = d;
      } else if (d != direction) {
        scan.warnings.push_back("non-monotone gantry angles in " + std::string(to_string(bh)) + " at frame " +
                                std::to_string(members[k]->index));
        break;
      }
    }
  }
  return scan;
}

MarkerPlan load_marker_plan(const fs::path& path) {
  const json doc = read_json(path);
  const std::string where = path.string();
  const auto markers = require<json>(doc, "markers", where);
  if (!markers.is_array()) throw InputError(where + ": 'markers' must be an array");
  if (markers.empty()) throw InputError(where + ": marker plan is empty");

  MarkerPlan plan;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < markers.size(); ++i) {
    const json& m = markers[i];
    const std::string mwhere = where + " marker " + std::to_string(i);
    auto id = require<std::string>(m, "id", mwhere);
    if (!seen.insert(id).second) throw InputError(mwhere + ": duplicate id '" + id + "'");
    plan.marker_ids.push_back(std::move(id));
    plan.markers.push_back(
        {require_finite(m, "x_mm", mwhere), require_finite(m, "y_mm", mwhere), require_finite(m, "z_mm", mwhere)});
  }
  return plan;
}

void save_scan(const ScanSet& scan, const fs::path& manifest_path, const std::string& pixel_file) {
  json frames = json::array();
  for (const auto& f : scan.frames) {
    json fj = {{"index", f.index}, {"angle_deg", f.phi.degrees()}, {"breath_hold", to_string(f.breath_hold)}};
    if (f.t_sec) fj["t_sec"] = *f.t_sec;
    frames.push_back(std::move(fj));
  }
  const json manifest = {
      {"scan_id", scan.scan_id},
      {"geometry",
       {{"sad_mm", scan.geometry.sad},
        {"sid_mm", scan.geometry.sid},
        {"cols", scan.geometry.detector_cols},
        {"rows", scan.geometry.detector_rows},
        {"pixel_pitch_mm", scan.geometry.pixel_pitch}}},
      {"pixel_file", pixel_file},
      {"pixel_dtype", "u16le"},
      {"frames", frames},
  };

  std::ofstream mout(manifest_path);
  if (!mout) throw InputError("cannot write " + manifest_path.string());
  mout << manifest.dump(2) << '\n';

  const fs::path pixel_path = manifest_path.parent_path() / pixel_file;
  std::ofstream pout(pixel_path, std::ios::binary);
  if (!pout) throw InputError("cannot write " + pixel_path.string());
  std::vector<char> buf;
  for (const auto& f : scan.frames) {
    const auto px = f.pixels.data();
    buf.resize(px.size() * 2);
    for (std::size_t k = 0; k < px.size(); ++k) {
      buf[2 * k] = static_cast<char>(px[k] & 0xff);
      buf[2 * k + 1] = static_cast<char>(px[k] >> 8);
    }
    pout.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

void save_marker_plan(const MarkerPlan& plan, const fs::path& path) {
  json markers = json::array();
  for (std::size_t k = 0; k < plan.size(); ++k) {
    markers.push_back({{"id", plan.marker_ids[k]},
                       {"x_mm", plan.markers[k].x},
                       {"y_mm", plan.markers[k].y},
                       {"z_mm", plan.markers[k].z}});
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << json{{"markers", markers}}.dump(2) << '\n';
}

}  // namespace mtrack
