#include "msds/pyramid.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <string>

#include "msds/error.hpp"

namespace msds {
namespace {

constexpr std::array<double, 5> kBinomial = {1.0 / 16, 4.0 / 16, 6.0 / 16,
                                             4.0 / 16, 1.0 / 16};

// Whole-sample mirror (-1 -> 1, n -> n - 2), periodic in 2 (n - 1).
int mirror(int i, int n) {
  const int period = 2 * (n - 1);
  i = std::abs(i) % period;
  return i < n ? i : period - i;
}

int half_up(int n) { return (n + 1) / 2; }

}  // namespace

RasterImage gaussian_downsample(const RasterImage& image) {
  if (image.width < 2 || image.height < 2) {
    fail(ErrorKind::validation, "cannot downsample a " +
                                    std::to_string(image.width) + "x" +
                                    std::to_string(image.height) + " image");
  }
  const int w = image.width;
  const int h = image.height;
  const int c = image.channels;
  const int out_w = half_up(w);
  const int out_h = half_up(h);

  // Horizontal pass only at the even columns that survive decimation.
  RasterImage rows(out_w, h, c);
  for (int y = 0; y < h; ++y) {
    for (int ox = 0; ox < out_w; ++ox) {
      const int x = 2 * ox;
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int t = -2; t <= 2; ++t) {
          acc += kBinomial[t + 2] * image.at(mirror(x + t, w), y, ch);
        }
        rows.at(ox, y, ch) = acc;
      }
    }
  }

  RasterImage out(out_w, out_h, c);
  for (int oy = 0; oy < out_h; ++oy) {
    const int y = 2 * oy;
    for (int ox = 0; ox < out_w; ++ox) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int t = -2; t <= 2; ++t) {
          acc += kBinomial[t + 2] * rows.at(ox, mirror(y + t, h), ch);
        }
        out.at(ox, oy, ch) = std::clamp(acc, 0.0, 1.0);
      }
    }
  }
  return out;
}

int pyramid_depth(int width, int height, int min_resolution) {
  if (min_resolution < 1) {
    fail(ErrorKind::validation, "min_resolution must be at least 1");
  }
  int depth = 0;
  while (std::min(width, height) >= min_resolution) {
    ++depth;
    if (std::min(width, height) < 2) break;
    width = half_up(width);
    height = half_up(height);
  }
  return depth;
}

Pyramid build_pyramid(const RasterImage& image, int min_resolution) {
  if (min_resolution < 1) {
    fail(ErrorKind::validation, "min_resolution must be at least 1");
  }
  if (std::min(image.width, image.height) < min_resolution) {
    fail(ErrorKind::validation,
         "image below minimum scale: " + std::to_string(image.width) + "x" +
             std::to_string(image.height) + " < " +
             std::to_string(min_resolution));
  }
  const int depth = pyramid_depth(image.width, image.height, min_resolution);

  Pyramid pyramid;
  pyramid.min_resolution = min_resolution;
  pyramid.levels.reserve(static_cast<std::size_t>(depth));
  pyramid.levels.push_back(image);
  for (int k = 1; k < depth; ++k) {
    pyramid.levels.push_back(gaussian_downsample(pyramid.levels.back()));
  }
  return pyramid;
}

}  // namespace msds
