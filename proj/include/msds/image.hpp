#pragma once

#include <cstddef>
#include <vector>

namespace msds {

/// Interleaved row-major raster with samples in [0, 1].
/// Sample (x, y, c) lives at data[(y * width + x) * channels + c].
struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  RasterImage() = default;
  RasterImage(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int x, int y, int c) { return data[index(x, y, c)]; }
  double at(int x, int y, int c) const { return data[index(x, y, c)]; }

  bool same_geometry(const RasterImage& other) const {
    return width == other.width && height == other.height &&
           channels == other.channels;
  }
};

/// Throws a validation error if the layout or sample range is broken.
void validate(const RasterImage& image);

}  // namespace msds
