#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "xscene/common/binary_io.hpp"
#include "xscene/mapgen/scene_map.hpp"

namespace xscene::mapgen {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, top row first

  std::array<std::uint8_t, 3> pixel(int x, int y) const {
    const auto i = 3 * (static_cast<std::size_t>(y) * width + x);
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> value;  // row-major, top row first

  std::uint8_t pixel(int x, int y) const { return value[static_cast<std::size_t>(y) * width + x]; }
};

/// Display colors: west red, east blue, south purple, north green.
inline constexpr std::array<std::array<double, 3>, kChannels> kChannelColor = {{
    {0.0, 0.0, 255.0},    // east
    {255.0, 0.0, 0.0},    // west
    {160.0, 32.0, 240.0}, // south
    {0.0, 255.0, 0.0},    // north
}};

/// Nearest-rank percentile of a non-empty sample.
inline double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

/// Colors each pixel by its dominant channel; brightness is the dominant
/// count over the 99th percentile of nonzero dominant counts, capped at 1.
/// North is up.
inline RgbImage render(const SceneMap& m) {
  RgbImage img{m.width, m.height, std::vector<std::uint8_t>(3 * static_cast<std::size_t>(m.width) * m.height, 0)};
  std::vector<double> dominant;
  for (int row = 0; row < m.height; ++row)
    for (int col = 0; col < m.width; ++col) {
      double best = 0.0;
      for (int ch = 0; ch < kChannels; ++ch) best = std::max(best, m.at(row, col, ch));
      if (best > 0.0) dominant.push_back(best);
    }
  if (dominant.empty()) return img;
  const double scale = percentile(dominant, 0.99);

  for (int row = 0; row < m.height; ++row)
    for (int col = 0; col < m.width; ++col) {
      int best_ch = 0;
      for (int ch = 1; ch < kChannels; ++ch)
        if (m.at(row, col, ch) > m.at(row, col, best_ch)) best_ch = ch;
      const double v = m.at(row, col, best_ch);
      if (v <= 0.0) continue;
      const double b = std::min(1.0, v / scale);
      const auto i = 3 * (static_cast<std::size_t>(m.height - 1 - row) * m.width + col);
      for (int k = 0; k < 3; ++k) img.rgb[i + k] = static_cast<std::uint8_t>(std::lround(kChannelColor[best_ch][k] * b));
    }
  return img;
}

/// Channel-summed absolute difference, white for 0 and black for the largest
/// difference in the pair.
inline GrayImage render_error(const SceneMap& a, const SceneMap& b) {
  require_same_shape(a, b, "render_error");
  GrayImage img{a.width, a.height, std::vector<std::uint8_t>(static_cast<std::size_t>(a.width) * a.height, 255)};
  std::vector<double> diff(static_cast<std::size_t>(a.width) * a.height, 0.0);
  double worst = 0.0;
  for (int row = 0; row < a.height; ++row)
    for (int col = 0; col < a.width; ++col) {
      double s = 0.0;
      for (int ch = 0; ch < kChannels; ++ch) s += std::abs(a.at(row, col, ch) - b.at(row, col, ch));
      diff[static_cast<std::size_t>(row) * a.width + col] = s;
      worst = std::max(worst, s);
    }
  if (worst == 0.0) return img;
  for (int row = 0; row < a.height; ++row)
    for (int col = 0; col < a.width; ++col) {
      const double s = diff[static_cast<std::size_t>(row) * a.width + col];
      img.value[static_cast<std::size_t>(a.height - 1 - row) * a.width + col] =
          static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - s / worst)));
    }
  return img;
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  auto out = io::open_out(path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
}

inline void write_ppm(const std::string& path, const GrayImage& img) {
  RgbImage rgb{img.width, img.height, {}};
  rgb.rgb.reserve(img.value.size() * 3);
  for (auto v : img.value) rgb.rgb.insert(rgb.rgb.end(), {v, v, v});
  write_ppm(path, rgb);
}

}  // namespace xscene::mapgen
