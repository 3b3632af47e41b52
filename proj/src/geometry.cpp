#include "marker_track/geometry.hpp"

#include <string>

#include "marker_track/errors.hpp"

namespace mtrack {

GantryAngle GantryAngle::from_radians(double rad) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(rad, two_pi);
  if (r < 0.0) r += two_pi;
  // fmod of a tiny negative value can round up to exactly 2pi
  if (r >= two_pi) r = 0.0;
  return GantryAngle(r);
}

void AcquisitionGeometry::validate() const {
  if (!(sad > 0.0)) throw InputError("geometry: sad must be positive");
  if (!(sid > sad)) throw InputError("geometry: sid must exceed sad");
  if (detector_cols <= 0 || detector_rows <= 0) throw InputError("geometry: detector dimensions must be positive");
  if (!(pixel_pitch > 0.0)) throw InputError("geometry: pixel pitch must be positive");
}

FrameProjector::FrameProjector(GantryAngle phi, const AcquisitionGeometry& geom)
    : sin_(std::sin(phi.radians())), cos_(std::cos(phi.radians())), sad_(geom.sad), sid_(geom.sid) {}

double FrameProjector::source_distance(const Point3& p) const {
  const double denom = sad_ - p.x * sin_ - p.z * cos_;
  if (!(denom > kDenominatorFloor)) {
    throw DegenerateGeometryError("point lies at or behind the source plane (denominator " + std::to_string(denom) +
                                  " mm)");
  }
  return denom;
}

DetectorPoint FrameProjector::operator()(const Point3& p) const {
  const double denom = source_distance(p);
  return {sid_ * (p.x * cos_ - p.z * sin_) / denom, sid_ * p.y / denom};
}

double source_distance(const Point3& p, GantryAngle phi, const AcquisitionGeometry& geom) {
  return FrameProjector(phi, geom).source_distance(p);
}

DetectorPoint project_point(const Point3& p, GantryAngle phi, const AcquisitionGeometry& geom) {
  return FrameProjector(phi, geom)(p);
}

PixelCoord detector_mm_to_pixel(const DetectorPoint& d, const AcquisitionGeometry& geom) {
  return {(geom.detector_cols - 1) / 2.0 + d.u / geom.pixel_pitch,
          (geom.detector_rows - 1) / 2.0 - d.v / geom.pixel_pitch};
}

DetectorPoint pixel_to_detector_mm(const PixelCoord& px, const AcquisitionGeometry& geom) {
  return {(px.col - (geom.detector_cols - 1) / 2.0) * geom.pixel_pitch,
          ((geom.detector_rows - 1) / 2.0 - px.row) * geom.pixel_pitch};
}

}  // namespace mtrack
