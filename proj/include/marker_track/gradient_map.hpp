#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "marker_track/image.hpp"

namespace mtrack {

/// Default partial-derivative threshold in raw detector counts.
inline constexpr double kDefaultMu = 32.0;

struct GradientImage {
  Image<double> values;
  bool suppressed = false;
  double mu = 0.0;  ///< threshold used; 0 when unsuppressed
};

/// Values in [0, 1]; the maximum is 1 unless the image is all zero.
struct ProbabilityImage {
  Image<double> values;
};

/// Gradient magnitude from forward differences. The last column (row) has a
/// zero horizontal (vertical) derivative. With `mu`, each partial derivative
/// whose magnitude is below mu is zeroed before the magnitude is formed;
/// without it the result is the plain gradient used for tracking.
GradientImage gradient(const Image<std::uint16_t>& pixels, std::optional<double> mu);

ProbabilityImage normalize(const GradientImage& g);

/// Debug dump as binary 16-bit PGM, scaled so the image maximum maps to 65535.
void write_pgm(const Image<double>& image, const std::filesystem::path& path);

}  // namespace mtrack
