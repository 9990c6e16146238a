#include "msds/similarity.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <future>

#include "msds/error.hpp"

namespace msds {
namespace {

void check_shapes(const FeatureMap& a, const FeatureMap& b) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::validation, "feature geometry mismatch");
  }
  if (a.plane_size() == 0 || a.channels == 0) {
    fail(ErrorKind::validation, "empty feature map");
  }
}

double ssim_from_moments(double mu_r, double mu_d, double var_r, double var_d,
                         double cov, const SsimConstants& k) {
  return ((2.0 * mu_r * mu_d + k.c1) * (2.0 * cov + k.c2)) /
         ((mu_r * mu_r + mu_d * mu_d + k.c1) * (var_r + var_d + k.c2));
}

std::vector<double> gaussian_window_1d() {
  constexpr int kRadius = 5;
  constexpr double kSigma = 1.5;
  std::vector<double> w(2 * kRadius + 1);
  for (int i = -kRadius; i <= kRadius; ++i) {
    w[i + kRadius] = std::exp(-(i * i) / (2.0 * kSigma * kSigma));
  }
  return w;
}

}  // namespace

double scale_similarity(const FeatureMap& ref, const FeatureMap& dist,
                        const SsimConstants& k) {
  check_shapes(ref, dist);
  const std::size_t n = ref.plane_size();
  const double inv_n = 1.0 / static_cast<double>(n);

  double total = 0.0;
  for (int c = 0; c < ref.channels; ++c) {
    const double* r = &ref.data[c * n];
    const double* d = &dist.data[c * n];
    double sum_r = 0.0;
    double sum_d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_r += r[i];
      sum_d += d[i];
    }
    const double mu_r = sum_r * inv_n;
    const double mu_d = sum_d * inv_n;
    double srr = 0.0;
    double sdd = 0.0;
    double srd = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dr = r[i] - mu_r;
      const double dd = d[i] - mu_d;
      srr += dr * dr;
      sdd += dd * dd;
      srd += dr * dd;
    }
    total += ssim_from_moments(mu_r, mu_d, srr * inv_n, sdd * inv_n,
                               srd * inv_n, k);
  }
  return total / ref.channels;
}

ScaleScores score_pair(const RasterImage& ref, const RasterImage& dist,
                       const FeatureBackend& backend, int min_resolution,
                       std::string pair_id) {
  if (!ref.same_geometry(dist)) {
    fail(ErrorKind::validation, "pair geometry mismatch: " +
                                    std::to_string(ref.width) + "x" +
                                    std::to_string(ref.height) + " vs " +
                                    std::to_string(dist.width) + "x" +
                                    std::to_string(dist.height));
  }
  validate(ref);
  validate(dist);
  const Pyramid ref_pyr = build_pyramid(ref, min_resolution);
  const Pyramid dist_pyr = build_pyramid(dist, min_resolution);

  std::vector<std::future<double>> pending;
  pending.reserve(ref_pyr.depth());
  for (std::size_t k = 0; k < ref_pyr.depth(); ++k) {
    pending.push_back(std::async(std::launch::async, [&, k] {
      return scale_similarity(extract(backend, ref_pyr.levels[k]),
                              extract(backend, dist_pyr.levels[k]));
    }));
  }

  ScaleScores out;
  out.pair_id = std::move(pair_id);
  for (auto& f : pending) out.scores.push_back(f.get());
  return out;
}

ResponseMap response_map(const FeatureMap& ref, const FeatureMap& dist,
                         int level, const SsimConstants& k) {
  check_shapes(ref, dist);
  const int h = ref.height;
  const int w = ref.width;
  const auto win = gaussian_window_1d();
  const int radius = static_cast<int>(win.size() / 2);

  ResponseMap map;
  map.level = level;
  map.height = h;
  map.width = w;
  map.values.assign(static_cast<std::size_t>(h) * w, 0.0);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int y0 = std::max(0, y - radius);
      const int y1 = std::min(h - 1, y + radius);
      const int x0 = std::max(0, x - radius);
      const int x1 = std::min(w - 1, x + radius);
      double wsum = 0.0;
      for (int yy = y0; yy <= y1; ++yy) {
        for (int xx = x0; xx <= x1; ++xx) {
          wsum += win[yy - y + radius] * win[xx - x + radius];
        }
      }

      double ssim_sum = 0.0;
      for (int c = 0; c < ref.channels; ++c) {
        double mu_r = 0.0;
        double mu_d = 0.0;
        for (int yy = y0; yy <= y1; ++yy) {
          for (int xx = x0; xx <= x1; ++xx) {
            const double wt = win[yy - y + radius] * win[xx - x + radius] / wsum;
            mu_r += wt * ref.at(c, yy, xx);
            mu_d += wt * dist.at(c, yy, xx);
          }
        }
        double var_r = 0.0;
        double var_d = 0.0;
        double cov = 0.0;
        for (int yy = y0; yy <= y1; ++yy) {
          for (int xx = x0; xx <= x1; ++xx) {
            const double wt = win[yy - y + radius] * win[xx - x + radius] / wsum;
            const double dr = ref.at(c, yy, xx) - mu_r;
            const double dd = dist.at(c, yy, xx) - mu_d;
            var_r += wt * dr * dr;
            var_d += wt * dd * dd;
            cov += wt * dr * dd;
          }
        }
        ssim_sum += ssim_from_moments(mu_r, mu_d, var_r, var_d, cov, k);
      }
      // Rounding can push 1 - SSIM a hair below zero.
      map.values[static_cast<std::size_t>(y) * w + x] =
          std::max(0.0, 1.0 - ssim_sum / ref.channels);
    }
  }
  return map;
}

unsigned char display_level(double v) {
  const double t = std::clamp(v, 0.0, kResponseDisplayMax) / kResponseDisplayMax;
  return static_cast<unsigned char>(std::lround(t * 255.0));
}

void write_response_png(const ResponseMap& map,
                        const std::filesystem::path& path, bool viridis) {
  cv::Mat gray(map.height, map.width, CV_8UC1);
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      gray.at<unsigned char>(y, x) = display_level(map.at(y, x));
    }
  }
  cv::Mat out = gray;
  if (viridis) cv::applyColorMap(gray, out, cv::COLORMAP_VIRIDIS);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), out);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) fail(ErrorKind::pipeline, "cannot write " + path.string());
}

}  // namespace msds
