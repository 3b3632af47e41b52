#include "marker_track/projection_tracker.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "marker_track/errors.hpp"

namespace mtrack {

PromptSet make_prompts(const RefinedMarkers& refined, std::span<const std::string> marker_ids,
                       const ProjectionFrame& frame, const AcquisitionGeometry& geom) {
  if (marker_ids.size() != refined.positions.size())
    throw PipelineError("marker id count does not match refined positions");
  const FrameProjector project(frame.phi, geom);
  PromptSet out;
  for (std::size_t k = 0; k < refined.positions.size(); ++k) {
    const PixelCoord px = detector_mm_to_pixel(project(refined.positions[k]), geom);
    if (geom.contains(px)) {
      out.prompts.push_back({marker_ids[k], frame.index, px});
    } else {
      out.skipped.push_back(marker_ids[k]);
    }
  }
  return out;
}

void BaselineParams::validate() const {
  if (window < 1 || window % 2 == 0) throw InputError("segmenter window must be a positive odd pixel count");
  if (!(growth_ratio > 0.0 && growth_ratio <= 1.0)) throw InputError("growth ratio must lie in (0, 1]");
  if (max_area < 1) throw InputError("area cap must be at least one pixel");
}

std::vector<MarkerMask> baseline_segment(const GradientImage& gbar, std::span<const PointPrompt> prompts,
                                         const BaselineParams& params) {
  const auto& img = gbar.values;
  const int half = params.window / 2;
  std::vector<MarkerMask> masks;
  masks.reserve(prompts.size());

  std::vector<PixelIndex> stack;
  std::vector<std::uint8_t> seen;

  for (const auto& prompt : prompts) {
    MarkerMask mask{prompt.marker_id, prompt.frame_index, {}};
    const int cc = static_cast<int>(std::lround(prompt.pixel.col));
    const int rc = static_cast<int>(std::lround(prompt.pixel.row));
    const int c_lo = std::max(0, cc - half), c_hi = std::min(img.cols() - 1, cc + half);
    const int r_lo = std::max(0, rc - half), r_hi = std::min(img.rows() - 1, rc + half);
    if (c_lo > c_hi || r_lo > r_hi) {
      masks.push_back(std::move(mask));
      continue;
    }

    PixelIndex seed{c_lo, r_lo};
    double seed_value = -1.0;
    for (int r = r_lo; r <= r_hi; ++r) {
      for (int c = c_lo; c <= c_hi; ++c) {
        if (img.at(r, c) > seed_value) {
          seed_value = img.at(r, c);
          seed = {c, r};
        }
      }
    }
    if (!(seed_value > 0.0)) {
      masks.push_back(std::move(mask));
      continue;
    }

    const double floor = params.growth_ratio * seed_value;
    const int wc = c_hi - c_lo + 1;
    seen.assign(static_cast<std::size_t>(wc) * (r_hi - r_lo + 1), 0);
    auto mark = [&](const PixelIndex& p) -> std::uint8_t& {
      return seen[static_cast<std::size_t>(p.row - r_lo) * wc + (p.col - c_lo)];
    };

    bool oversized = false;
    stack.assign(1, seed);
    mark(seed) = 1;
    while (!stack.empty() && !oversized) {
      const PixelIndex cur = stack.back();
      stack.pop_back();
      mask.pixels.push_back(cur);
      if (static_cast<int>(mask.pixels.size()) > params.max_area) oversized = true;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const PixelIndex nb{cur.col + dc, cur.row + dr};
          if ((dr == 0 && dc == 0) || nb.col < c_lo || nb.col > c_hi || nb.row < r_lo || nb.row > r_hi) continue;
          if (mark(nb) || img.at(nb.row, nb.col) < floor) continue;
          mark(nb) = 1;
          stack.push_back(nb);
        }
      }
    }
    if (oversized) {
      mask.pixels.clear();
    } else {
      std::sort(mask.pixels.begin(), mask.pixels.end(),
                [](const PixelIndex& a, const PixelIndex& b) { return std::tie(a.row, a.col) < std::tie(b.row, b.col); });
    }
    masks.push_back(std::move(mask));
  }
  return masks;
}

PixelCoord mask_center(const MarkerMask& mask) {
  if (mask.empty()) throw PipelineError("cannot take the center of an empty mask");
  double sc = 0.0, sr = 0.0;
  for (const auto& p : mask.pixels) {
    sc += p.col;
    sr += p.row;
  }
  const auto n = static_cast<double>(mask.pixels.size());
  return {sc / n, sr / n};
}

std::vector<MarkerMask> BaselineSegmenter::segment(const ProjectionFrame& /*frame*/, const GradientImage& gbar,
                                                   std::span<const PointPrompt> prompts) {
  return baseline_segment(gbar, prompts, params_);
}

TrackResult track_scan(const ScanSet& scan, const MarkerPlan& plan, const std::map<BreathHold, RefinedMarkers>& refined,
                       Segmenter& segmenter) {
  TrackResult result;
  segmenter.begin_scan(scan);
  for (const auto& frame : scan.frames) {
    PromptSet prompts;
    if (auto it = refined.find(frame.breath_hold); it != refined.end())
      prompts = make_prompts(it->second, plan.marker_ids, frame, scan.geometry);

    const GradientImage gbar = gradient(frame.pixels, std::nullopt);
    const auto masks = segmenter.segment(frame, gbar, prompts.prompts);
    if (masks.size() != prompts.prompts.size()) {
      throw PipelineError("segmenter '" + segmenter.name() + "' returned " + std::to_string(masks.size()) +
                          " masks for " + std::to_string(prompts.prompts.size()) + " prompts on frame " +
                          std::to_string(frame.index));
    }

    for (const auto& id : plan.marker_ids) {
      Detection2D det{id, frame.index, frame.phi.degrees(), frame.breath_hold, frame.t_sec};
      const auto mask = std::find_if(masks.begin(), masks.end(), [&](const MarkerMask& m) { return m.marker_id == id; });
      if (mask != masks.end() && !mask->empty()) {
        const auto d = pixel_to_detector_mm(mask_center(*mask), scan.geometry);
        det.u_mm = d.u;
        det.v_mm = d.v;
        det.status = DetectionStatus::Detected;
        ++result.detected;
      }
      ++result.slots;
      result.detections.push_back(std::move(det));
    }
  }
  segmenter.end_scan();
  return result;
}

void write_detections_csv(std::ostream& out, const std::string& scan_id, std::span<const Detection2D> detections) {
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  out << "scan_id,frame_index,angle_deg,breath_hold,marker_id,u_mm,v_mm,status\n";
  for (const auto& d : detections) {
    out << scan_id << ',' << d.frame_index << ',' << d.angle_deg << ',' << to_string(d.breath_hold) << ','
        << d.marker_id << ',';
    if (d.status == DetectionStatus::Detected) {
      out << d.u_mm << ',' << d.v_mm << ",detected\n";
    } else {
      out << ",,missing\n";
    }
  }
  out.precision(old_precision);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw InputError("detections csv: bad " + what + " '" + text + "'");
  }
}

}  // namespace

std::vector<Detection2D> read_detections_csv(std::istream& in, std::string* scan_id) {
  std::vector<Detection2D> out;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != "scan_id,frame_index,angle_deg,breath_hold,marker_id,u_mm,v_mm,status")
        throw InputError("detections csv: unexpected header '" + line + "'");
      header_seen = true;
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 8) throw InputError("detections csv: expected 8 fields in '" + line + "'");
    if (scan_id && out.empty()) *scan_id = f[0];
    Detection2D d;
    d.frame_index = static_cast<int>(parse_double(f[1], "frame_index"));
    d.angle_deg = parse_double(f[2], "angle_deg");
    d.breath_hold = parse_breath_hold(f[3]);
    d.marker_id = f[4];
    if (f[7] == "detected") {
      d.status = DetectionStatus::Detected;
      d.u_mm = parse_double(f[5], "u_mm");
      d.v_mm = parse_double(f[6], "v_mm");
    } else if (f[7] == "missing") {
      d.status = DetectionStatus::Missing;
    } else {
      throw InputError("detections csv: bad status '" + f[7] + "'");
    }
    out.push_back(std::move(d));
  }
  if (!header_seen) throw InputError("detections csv: missing header");
  return out;
}

}  // namespace mtrack
