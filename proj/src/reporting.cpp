#include "marker_track/reporting.hpp"

#include <openssl/evp.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include "marker_track/errors.hpp"

#ifndef MARKER_TRACK_VERSION
#define MARKER_TRACK_VERSION "0.0.0"
#endif

namespace mtrack {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view tool_version() { return MARKER_TRACK_VERSION; }

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return "sha256:" + sha256_hex(bytes);
}

std::string Provenance::config_digest() const { return "sha256:" + sha256_hex(config.dump()); }

json Provenance::to_json() const {
  return {{"tool", "marker_track"},
          {"version", tool_version()},
          {"command", command},
          {"config", config},
          {"config_digest", config_digest()},
          {"inputs", inputs}};
}

void Provenance::write_comment(std::ostream& out) const {
  out << "# tool: marker_track " << tool_version() << '\n';
  out << "# command: " << command << '\n';
  out << "# config_digest: " << config_digest() << '\n';
  out << "# config: " << config.dump() << '\n';
  for (const auto& [role, digest] : inputs) out << "# input " << role << ": " << digest << '\n';
}

namespace {

json point_json(const Point3& p) { return json::array({p.x, p.y, p.z}); }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json stats_json(const TraceStats& s) {
  return {{"mean_si_mm", s.mean}, {"max_dev_mm", s.max_dev}, {"std_dev_mm", s.std_dev}, {"count", s.count}};
}

std::string fixed1(const std::optional<double>& v) {
  if (!v) return "NA";
  std::array<char, 64> buf{};
  std::snprintf(buf.data(), buf.size(), "%.1f", *v);
  std::string s(buf.data());
  return s == "-0.0" ? "0.0" : s;
}

}  // namespace

json refined_to_json(const std::string& scan_id, const MarkerPlan& plan, const RefinedSet& refined,
                     const Provenance& prov) {
  json holds = json::array();
  for (const auto& [bh, r] : refined) {
    if (r.positions.size() != plan.size()) throw PipelineError("refined position count does not match the plan");
    json markers = json::array();
    for (std::size_t k = 0; k < plan.size(); ++k) {
      markers.push_back({{"id", plan.marker_ids[k]},
                         {"position_mm", point_json(r.positions[k])},
                         {"plan_mm", point_json(plan.markers[k])},
                         {"plan_residual_mm", distance(r.positions[k], plan.markers[k])}});
    }
    holds.push_back({{"breath_hold", to_string(bh)}, {"match_cost_mm", r.match_cost}, {"markers", markers}});
  }
  return {{"provenance", prov.to_json()}, {"scan_id", scan_id}, {"breath_holds", holds}};
}

RefinedSet refined_from_json(const json& j, const MarkerPlan& plan) {
  RefinedSet out;
  try {
    for (const auto& h : j.at("breath_holds")) {
      RefinedMarkers r;
      r.breath_hold = parse_breath_hold(h.at("breath_hold").get<std::string>());
      r.match_cost = h.value("match_cost_mm", 0.0);
      std::map<std::string, Point3> by_id;
      for (const auto& m : h.at("markers")) {
        const auto& p = m.at("position_mm");
        if (!p.is_array() || p.size() != 3) throw InputError("refined positions: position_mm must be [x, y, z]");
        by_id[m.at("id").get<std::string>()] = {p[0].get<double>(), p[1].get<double>(), p[2].get<double>()};
      }
      for (const auto& id : plan.marker_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end())
          throw InputError("refined positions: marker '" + id + "' missing for " + std::string(to_string(r.breath_hold)));
        r.positions.push_back(it->second);
      }
      out[r.breath_hold] = std::move(r);
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("refined positions: ") + e.what());
  }
  if (out.empty()) throw InputError("refined positions: no breath-holds");
  return out;
}

json report_to_json(const ScanReport& report, const Provenance& prov) {
  json markers = json::array();
  for (const auto& m : report.markers) {
    json holds = json::object();
    for (const auto& [bh, s] : m.per_bh) {
      json e = stats_json(s);
      if (auto it = m.position.find(bh); it != m.position.end()) e["position_mm"] = point_json(it->second);
      holds[std::string(to_string(bh))] = std::move(e);
    }
    markers.push_back({{"marker_id", m.marker_id},
                       {"detected", m.detected},
                       {"frames", m.frames},
                       {"lateral_outliers", m.lateral_outliers},
                       {"si_outliers", m.si_outliers},
                       {"breath_holds", holds},
                       {"both", m.both ? stats_json(*m.both) : json(nullptr)},
                       {"avg_diff_mm", optional_json(m.avg_diff)},
                       {"gap_mm", optional_json(m.gap)},
                       {"position_both_mm", m.position_both ? point_json(*m.position_both) : json(nullptr)},
                       {"notes", m.notes}});
  }

  json pooled_holds = json::object();
  for (const auto& [bh, s] : report.pooled.per_bh) pooled_holds[std::string(to_string(bh))] = stats_json(s);
  json pooled = {{"breath_holds", pooled_holds},
                 {"both", report.pooled.both ? stats_json(*report.pooled.both) : json(nullptr)},
                 {"avg_diff_mm", optional_json(report.pooled.avg_diff)},
                 {"gap_mm", optional_json(report.pooled.gap)}};

  json distances = json::array();
  for (const auto& d : report.distances) {
    distances.push_back({{"marker_a", d.marker_a},
                         {"marker_b", d.marker_b},
                         {"window", d.window},
                         {"dx_mm", d.dx},
                         {"dy_mm", d.dy},
                         {"dz_mm", d.dz},
                         {"distance_mm", d.distance}});
  }

  const double rate = report.slots ? static_cast<double>(report.detected) / static_cast<double>(report.slots) : 0.0;
  return {{"provenance", prov.to_json()},
          {"scan_id", report.scan_id},
          {"detection", {{"detected", report.detected}, {"slots", report.slots}, {"rate", rate}}},
          {"markers", markers},
          {"pooled", pooled},
          {"distances", distances}};
}

void write_table1_csv(std::ostream& out, const ScanReport& report, const Provenance& prov) {
  prov.write_comment(out);
  out << "scan_id,marker_id,bh1_max_dev_mm,bh1_std_dev_mm,bh2_max_dev_mm,bh2_std_dev_mm,"
         "both_max_dev_mm,both_std_dev_mm,avg_diff_mm,gap_mm\n";

  auto row = [&](const std::string& label, const std::map<BreathHold, TraceStats>& per_bh,
                 const std::optional<TraceStats>& both, const std::optional<double>& avg_diff,
                 const std::optional<double>& gap) {
    out << report.scan_id << ',' << label;
    for (BreathHold bh : {BreathHold::BH1, BreathHold::BH2}) {
      auto it = per_bh.find(bh);
      const bool has = it != per_bh.end();
      out << ',' << fixed1(has ? std::optional(it->second.max_dev) : std::nullopt) << ','
          << fixed1(has ? std::optional(it->second.std_dev) : std::nullopt);
    }
    out << ',' << fixed1(both ? std::optional(both->max_dev) : std::nullopt) << ','
        << fixed1(both ? std::optional(both->std_dev) : std::nullopt) << ',' << fixed1(avg_diff) << ','
        << fixed1(gap) << '\n';
  };

  for (const auto& m : report.markers) row(m.marker_id, m.per_bh, m.both, m.avg_diff, m.gap);
  row("pooled", report.pooled.per_bh, report.pooled.both, report.pooled.avg_diff, report.pooled.gap);
}

void write_si_series_csv(std::ostream& out, const std::string& scan_id, std::span<const BreathHoldTrace> traces,
                         const Provenance& prov) {
  prov.write_comment(out);
  out << "scan_id,marker_id,breath_hold,frame_index,t,y_mm,fit_mm,outlier\n";
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& tr : traces) {
    for (const auto& s : tr.si.samples) {
      out << scan_id << ',' << tr.marker_id << ',' << to_string(tr.breath_hold) << ',' << s.frame_index << ','
          << s.t << ',' << s.y_mm << ',' << tr.si.fit(s.t) << ',' << (s.outlier ? 1 : 0) << '\n';
    }
  }
  out.precision(old_precision);
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("write failed for " + path.string());
}

}  // namespace mtrack
