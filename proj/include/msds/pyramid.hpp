#pragma once

#include <cstddef>
#include <vector>

#include "msds/image.hpp"

namespace msds {

inline constexpr int kDefaultMinResolution = 64;

/// Gaussian multiscale representation. levels[0] is the input image,
/// each following level is half the size (rounded up) of the previous one.
struct Pyramid {
  std::vector<RasterImage> levels;
  int min_resolution = kDefaultMinResolution;

  std::size_t depth() const { return levels.size(); }
};

/// One blur + decimate step: separable [1 4 6 4 1]/16 kernel with
/// whole-sample mirror borders, keeping samples at even indices.
RasterImage gaussian_downsample(const RasterImage& image);

/// Number of levels a width x height image yields. A level is kept while
/// min(w, h) >= min_resolution.
int pyramid_depth(int width, int height, int min_resolution);

Pyramid build_pyramid(const RasterImage& image,
                      int min_resolution = kDefaultMinResolution);

}  // namespace msds
