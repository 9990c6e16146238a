#include "msds/image.hpp"

#include <cmath>
#include <string>

#include "msds/error.hpp"

namespace msds {

void validate(const RasterImage& image) {
  if (image.width <= 0 || image.height <= 0) {
    fail(ErrorKind::validation, "image has empty geometry");
  }
  if (image.channels != 1 && image.channels != 3) {
    fail(ErrorKind::validation,
         "unsupported channel count " + std::to_string(image.channels));
  }
  const auto expected = static_cast<std::size_t>(image.width) * image.height *
                        image.channels;
  if (image.data.size() != expected) {
    fail(ErrorKind::validation, "image data length does not match geometry");
  }
  for (double v : image.data) {
    if (!(v >= 0.0 && v <= 1.0)) {
      fail(ErrorKind::validation, "image sample outside [0, 1]");
    }
  }
}

}  // namespace msds
