#include "marker_track/gradient_map.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "marker_track/errors.hpp"

namespace mtrack {

GradientImage gradient(const Image<std::uint16_t>& pixels, std::optional<double> mu) {
  const int rows = pixels.rows();
  const int cols = pixels.cols();
  GradientImage g{Image<double>(rows, cols), mu.has_value(), mu.value_or(0.0)};
  const double floor = mu.value_or(0.0);

  auto screen = [&](double d) { return (mu && std::abs(d) < floor) ? 0.0 : d; };

  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double here = pixels.at(r, c);
      const double du = c + 1 < cols ? screen(pixels.at(r, c + 1) - here) : 0.0;
      const double dv = r + 1 < rows ? screen(pixels.at(r + 1, c) - here) : 0.0;
      g.values.at(r, c) = std::sqrt(du * du + dv * dv);
    }
  }
  return g;
}

ProbabilityImage normalize(const GradientImage& g) {
  ProbabilityImage p{g.values};
  auto data = p.values.data();
  const double peak = data.empty() ? 0.0 : *std::max_element(data.begin(), data.end());
  if (peak > 0.0) {
    for (auto& v : data) v /= peak;
  }
  return p;
}

void write_pgm(const Image<double>& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "P5\n" << image.cols() << ' ' << image.rows() << "\n65535\n";
  const auto data = image.data();
  const double peak = data.empty() ? 0.0 : *std::max_element(data.begin(), data.end());
  const double scale = peak > 0.0 ? 65535.0 / peak : 0.0;
  for (double v : data) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v * scale, 0.0, 65535.0)));
    // PGM stores 16-bit samples most significant byte first
    const char bytes[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
    out.write(bytes, 2);
  }
}

}  // namespace mtrack
