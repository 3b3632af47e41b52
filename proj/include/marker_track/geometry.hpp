#pragma once

#include <cmath>
#include <numbers>

namespace mtrack {

/// Patient coordinates in mm, centered at the isocenter.
/// x is lateral, y superior-inferior, z vertical (anterior-posterior).
struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Point3 operator+(const Point3& a, const Point3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Point3 operator-(const Point3& a, const Point3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Point3 operator*(const Point3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }
  friend bool operator==(const Point3&, const Point3&) = default;

  [[nodiscard]] double norm() const { return std::sqrt(x * x + y * y + z * z); }
  [[nodiscard]] bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double distance(const Point3& a, const Point3& b) { return (a - b).norm(); }

/// Detector plane coordinates in mm with the origin at the detector center.
/// u runs with increasing column, v points superior (decreasing row).
struct DetectorPoint {
  double u = 0.0;
  double v = 0.0;
};

/// Fractional pixel position; integer values are pixel centers.
struct PixelCoord {
  double col = 0.0;
  double row = 0.0;
};

/// Gantry angle, stored in radians normalized to [0, 2pi).
class GantryAngle {
 public:
  GantryAngle() = default;

  static GantryAngle from_radians(double rad);
  static GantryAngle from_degrees(double deg) { return from_radians(deg * std::numbers::pi / 180.0); }

  [[nodiscard]] double radians() const { return rad_; }
  [[nodiscard]] double degrees() const { return rad_ * 180.0 / std::numbers::pi; }

 private:
  explicit GantryAngle(double rad) : rad_(rad) {}
  double rad_ = 0.0;
};

/// Ideal centered cone-beam geometry. Defaults match a kV imager with
/// SAD 1000 mm, SID 1536 mm and a 512x512 panel of 0.8 mm pixels.
struct AcquisitionGeometry {
  double sad = 1000.0;
  double sid = 1536.0;
  int detector_cols = 512;
  int detector_rows = 512;
  double pixel_pitch = 0.8;

  /// Throws InputError when an invariant is broken.
  void validate() const;

  [[nodiscard]] double magnification() const { return sid / sad; }
  [[nodiscard]] bool contains(const PixelCoord& px) const {
    return px.col >= 0.0 && px.row >= 0.0 && px.col <= detector_cols - 1.0 && px.row <= detector_rows - 1.0;
  }
};

/// Smallest admissible source-side distance (mm) along the central ray.
inline constexpr double kDenominatorFloor = 1.0;

/// SAD - x sin(phi) - z cos(phi): distance of the point from the source
/// plane measured along the central ray. Throws DegenerateGeometryError when
/// it falls below kDenominatorFloor.
double source_distance(const Point3& p, GantryAngle phi, const AcquisitionGeometry& geom);

/// Cone-beam forward projection of an isocenter-frame point onto the detector.
DetectorPoint project_point(const Point3& p, GantryAngle phi, const AcquisitionGeometry& geom);

/// project_point for one fixed gantry angle, with the trigonometry hoisted
/// out of per-point loops.
class FrameProjector {
 public:
  FrameProjector(GantryAngle phi, const AcquisitionGeometry& geom);

  [[nodiscard]] double source_distance(const Point3& p) const;
  [[nodiscard]] DetectorPoint operator()(const Point3& p) const;

 private:
  double sin_;
  double cos_;
  double sad_;
  double sid_;
};

PixelCoord detector_mm_to_pixel(const DetectorPoint& d, const AcquisitionGeometry& geom);
DetectorPoint pixel_to_detector_mm(const PixelCoord& px, const AcquisitionGeometry& geom);

}  // namespace mtrack
