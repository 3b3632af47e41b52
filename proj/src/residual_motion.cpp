#include "marker_track/residual_motion.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include <Eigen/Dense>

#include "marker_track/errors.hpp"

namespace mtrack {

namespace {

/// Smallest arc (degrees) containing every angle.
double angular_span_deg(std::span<const LateralSample> samples) {
  std::vector<double> deg;
  deg.reserve(samples.size());
  for (const auto& s : samples) deg.push_back(s.phi.degrees());
  std::sort(deg.begin(), deg.end());
  double largest_gap = 360.0 - (deg.back() - deg.front());
  for (std::size_t i = 1; i < deg.size(); ++i) largest_gap = std::max(largest_gap, deg[i] - deg[i - 1]);
  return 360.0 - largest_gap;
}

}  // namespace

LateralFit fit_lateral(std::span<const LateralSample> samples, const AcquisitionGeometry& geom) {
  if (samples.size() < 2) throw PipelineError("lateral fit needs at least two detections");
  if (angular_span_deg(samples) < kMinLateralSpanDeg)
    throw PipelineError("lateral fit is rank deficient: detections span less than 5 degrees");

  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixX2d a(n, 2);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    const double sn = std::sin(s.phi.radians());
    const double cs = std::cos(s.phi.radians());
    a(i, 0) = geom.sid * cs + s.u_mm * sn;
    a(i, 1) = s.u_mm * cs - geom.sid * sn;
    b(i) = s.u_mm * geom.sad;
  }
  const auto qr = a.colPivHouseholderQr();
  if (qr.rank() < 2) throw PipelineError("lateral fit is rank deficient");
  const Eigen::Vector2d xz = qr.solve(b);

  LateralFit fit{xz(0), xz(1), 0.0, static_cast<int>(samples.size())};
  double sq = 0.0;
  for (const auto& s : samples) {
    const double r = project_point({fit.x, 0.0, fit.z}, s.phi, geom).u - s.u_mm;
    sq += r * r;
  }
  fit.residual_rms = std::sqrt(sq / static_cast<double>(samples.size()));
  return fit;
}

double lateral_deviation(const LateralSample& s, const LateralFit& fit, const AcquisitionGeometry& geom) {
  const double expected = project_point({fit.x, 0.0, fit.z}, s.phi, geom).u;
  return std::abs(s.u_mm - expected) / geom.magnification();
}

std::vector<bool> screen_lateral(std::span<const LateralSample> samples, const LateralFit& fit,
                                 const AcquisitionGeometry& geom, double tol) {
  std::vector<bool> flags;
  flags.reserve(samples.size());
  for (const auto& s : samples) flags.push_back(lateral_deviation(s, fit, geom) > tol);
  return flags;
}

double compute_si(double v_mm, GantryAngle phi, const LateralFit& fit, const AcquisitionGeometry& geom) {
  return v_mm * source_distance({fit.x, 0.0, fit.z}, phi, geom) / geom.sid;
}

Cubic fit_cubic(std::span<const double> t, std::span<const double> y) {
  if (t.size() != y.size()) throw PipelineError("cubic fit: abscissa and ordinate sizes differ");
  if (std::set<double>(t.begin(), t.end()).size() < 4)
    throw PipelineError("cubic fit needs at least four distinct points");

  // Fit in a centered, scaled variable s = (t - m) / h for conditioning.
  const auto n = static_cast<Eigen::Index>(t.size());
  double m = 0.0;
  for (double v : t) m += v;
  m /= static_cast<double>(t.size());
  double h = 0.0;
  for (double v : t) h = std::max(h, std::abs(v - m));

  Eigen::MatrixX4d a(n, 4);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = (t[static_cast<std::size_t>(i)] - m) / h;
    a(i, 0) = 1.0;
    a(i, 1) = s;
    a(i, 2) = s * s;
    a(i, 3) = s * s * s;
    b(i) = y[static_cast<std::size_t>(i)];
  }
  const Eigen::Vector4d c = a.colPivHouseholderQr().solve(b);

  // Expand sum_k c_k ((t - m)/h)^k into the power basis of t.
  constexpr int binom[4][4] = {{1, 0, 0, 0}, {1, 1, 0, 0}, {1, 2, 1, 0}, {1, 3, 3, 1}};
  Cubic out;
  for (int k = 0; k < 4; ++k) {
    const double scaled = c(k) / std::pow(h, k);
    for (int j = 0; j <= k; ++j) out.coeffs[j] += scaled * binom[k][j] * std::pow(-m, k - j);
  }
  return out;
}

void screen_si(SiTrace& trace, double tol) {
  auto fit_retained = [&trace]() {
    std::vector<double> t, y;
    for (const auto& s : trace.samples) {
      if (s.outlier) continue;
      t.push_back(s.t);
      y.push_back(s.y_mm);
    }
    if (t.size() < 4) throw PipelineError("SI screening needs at least four retained points");
    return fit_cubic(t, y);
  };

  const Cubic first = fit_retained();
  for (auto& s : trace.samples)
    if (!s.outlier && std::abs(s.y_mm - first(s.t)) > tol) s.outlier = true;
  trace.fit = fit_retained();
}

TraceStats trace_stats(std::span<const double> y) {
  TraceStats st;
  if (y.empty()) return st;
  // Welford running mean and sum of squared deviations.
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (double v : y) {
    ++n;
    const double delta = v - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (v - mean);
  }
  st.count = n;
  st.mean = mean;
  st.std_dev = std::sqrt(std::max(0.0, m2 / static_cast<double>(n)));
  for (double v : y) st.max_dev = std::max(st.max_dev, std::abs(v - mean));
  return st;
}

void MotionParams::validate() const {
  if (!(lateral_tol > 0.0)) throw InputError("lateral tolerance must be positive");
  if (!(si_tol > 0.0)) throw InputError("SI tolerance must be positive");
}

std::vector<double> BreathHoldTrace::retained_y() const {
  std::vector<double> y;
  for (const auto& s : si.samples)
    if (!s.outlier) y.push_back(s.y_mm);
  return y;
}

namespace {

constexpr std::array<BreathHold, 2> kBreathHolds{BreathHold::BH1, BreathHold::BH2};

std::optional<BreathHoldTrace> analyze_breath_hold(const std::string& id, BreathHold bh,
                                                   std::vector<const Detection2D*> rows, const AcquisitionGeometry& geom,
                                                   const MotionParams& params, MarkerSummary& summary) {
  std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->frame_index < b->frame_index; });
  const bool timed = std::all_of(rows.begin(), rows.end(), [](auto* d) { return d->t_sec.has_value(); });

  BreathHoldTrace trace;
  trace.marker_id = id;
  trace.breath_hold = bh;
  std::vector<const Detection2D*> detected;
  for (const auto* d : rows) {
    if (d->status != DetectionStatus::Detected) continue;
    detected.push_back(d);
    trace.lateral.push_back({d->frame_index, GantryAngle::from_degrees(d->angle_deg), d->u_mm});
  }
  summary.detected += detected.size();
  summary.frames += rows.size();

  const std::string label(to_string(bh));
  try {
    trace.lateral_fit = fit_lateral(trace.lateral, geom);
    trace.lateral_outlier = screen_lateral(trace.lateral, trace.lateral_fit, geom, params.lateral_tol);

    std::vector<LateralSample> kept;
    for (std::size_t i = 0; i < trace.lateral.size(); ++i)
      if (!trace.lateral_outlier[i]) kept.push_back(trace.lateral[i]);
    summary.lateral_outliers += trace.lateral.size() - kept.size();
    trace.lateral_fit = fit_lateral(kept, geom);

    for (std::size_t i = 0; i < detected.size(); ++i) {
      if (trace.lateral_outlier[i]) continue;
      const auto* d = detected[i];
      const double t = timed ? *d->t_sec : static_cast<double>(d->frame_index);
      trace.si.samples.push_back(
          {d->frame_index, t, compute_si(d->v_mm, trace.lateral[i].phi, trace.lateral_fit, geom), false});
    }
    screen_si(trace.si, params.si_tol);
  } catch (const PipelineError& e) {
    summary.notes.push_back(label + ": " + e.what());
    return std::nullopt;
  }

  for (const auto& s : trace.si.samples) summary.si_outliers += s.outlier ? 1 : 0;
  trace.stats = trace_stats(trace.retained_y());
  summary.per_bh[bh] = trace.stats;
  summary.position[bh] = {trace.lateral_fit.x, trace.stats.mean, trace.lateral_fit.z};
  return trace;
}

template <typename Get>
std::optional<double> mean_over(const std::vector<MarkerSummary>& markers, Get get) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& m : markers) {
    if (auto v = get(m)) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::optional<TraceStats> pool_stats(const std::vector<MarkerSummary>& markers,
                                     const std::function<const TraceStats*(const MarkerSummary&)>& pick) {
  TraceStats out;
  std::size_t n = 0;
  for (const auto& m : markers) {
    if (const auto* s = pick(m)) {
      out.mean += s->mean;
      out.max_dev += s->max_dev;
      out.std_dev += s->std_dev;
      out.count += s->count;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  out.mean /= static_cast<double>(n);
  out.max_dev /= static_cast<double>(n);
  out.std_dev /= static_cast<double>(n);
  return out;
}

}  // namespace

MotionAnalysis analyze_motion(const std::string& scan_id, std::span<const std::string> marker_ids,
                              std::span<const Detection2D> detections, const AcquisitionGeometry& geom,
                              const MotionParams& params) {
  params.validate();
  MotionAnalysis out;
  ScanReport& report = out.report;
  report.scan_id = scan_id;

  for (const auto& id : marker_ids) {
    MarkerSummary summary;
    summary.marker_id = id;
    std::map<BreathHold, BreathHoldTrace> traces;

    for (BreathHold bh : kBreathHolds) {
      std::vector<const Detection2D*> rows;
      for (const auto& d : detections)
        if (d.marker_id == id && d.breath_hold == bh) rows.push_back(&d);
      if (rows.empty()) continue;
      if (auto trace = analyze_breath_hold(id, bh, std::move(rows), geom, params, summary)) {
        traces.emplace(bh, *trace);
        out.traces.push_back(std::move(*trace));
      }
    }

    if (traces.size() == 2) {
      const auto& bh1 = traces.at(BreathHold::BH1);
      const auto& bh2 = traces.at(BreathHold::BH2);
      auto pooled_y = bh1.retained_y();
      const auto y2 = bh2.retained_y();
      pooled_y.insert(pooled_y.end(), y2.begin(), y2.end());
      summary.both = trace_stats(pooled_y);
      summary.avg_diff = std::abs(bh1.stats.mean - bh2.stats.mean);

      auto last_retained = [](const SiTrace& tr) {
        for (auto it = tr.samples.rbegin(); it != tr.samples.rend(); ++it)
          if (!it->outlier) return it->t;
        return tr.samples.back().t;
      };
      auto first_retained = [](const SiTrace& tr) {
        for (const auto& s : tr.samples)
          if (!s.outlier) return s.t;
        return tr.samples.front().t;
      };
      summary.gap = std::abs(bh1.si.fit(last_retained(bh1.si)) - bh2.si.fit(first_retained(bh2.si)));

      std::vector<LateralSample> kept;
      for (const auto* tr : {&bh1, &bh2})
        for (std::size_t i = 0; i < tr->lateral.size(); ++i)
          if (!tr->lateral_outlier[i]) kept.push_back(tr->lateral[i]);
      const LateralFit both_fit = fit_lateral(kept, geom);
      summary.position_both = Point3{both_fit.x, summary.both->mean, both_fit.z};
    }
    report.detected += summary.detected;
    report.slots += summary.frames;
    report.markers.push_back(std::move(summary));
  }

  for (BreathHold bh : kBreathHolds) {
    if (auto pooled = pool_stats(report.markers, [bh](const MarkerSummary& m) -> const TraceStats* {
          auto it = m.per_bh.find(bh);
          return it == m.per_bh.end() ? nullptr : &it->second;
        }))
      report.pooled.per_bh[bh] = *pooled;
  }
  report.pooled.both =
      pool_stats(report.markers, [](const MarkerSummary& m) { return m.both ? &*m.both : nullptr; });
  report.pooled.avg_diff = mean_over(report.markers, [](const MarkerSummary& m) { return m.avg_diff; });
  report.pooled.gap = mean_over(report.markers, [](const MarkerSummary& m) { return m.gap; });

  for (std::size_t a = 0; a < report.markers.size(); ++a) {
    for (std::size_t b = a + 1; b < report.markers.size(); ++b) {
      const auto& ma = report.markers[a];
      const auto& mb = report.markers[b];
      auto add = [&](const std::string& window, const Point3& pa, const Point3& pb) {
        const Point3 d = pb - pa;
        report.distances.push_back({ma.marker_id, mb.marker_id, window, d.x, d.y, d.z, d.norm()});
      };
      for (BreathHold bh : kBreathHolds) {
        auto ia = ma.position.find(bh);
        auto ib = mb.position.find(bh);
        if (ia != ma.position.end() && ib != mb.position.end()) add(std::string(to_string(bh)), ia->second, ib->second);
      }
      if (ma.position_both && mb.position_both) add("both", *ma.position_both, *mb.position_both);
    }
  }
  return out;
}

}  // namespace mtrack
