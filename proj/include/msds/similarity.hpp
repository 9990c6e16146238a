#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "msds/features.hpp"
#include "msds/image.hpp"
#include "msds/pyramid.hpp"

namespace msds {

/// Stabilizers for SSIM on unbounded deep features.
struct SsimConstants {
  double c1 = 1e-6;
  double c2 = 1e-6;
};

inline constexpr const char* kScorerId = "global-ssim-channel-mean";

/// Per-scale similarities s_1..s_K, fine to coarse.
struct ScaleScores {
  std::string pair_id;
  std::vector<double> scores;

  std::size_t depth() const { return scores.size(); }
};

/// Channel-averaged SSIM using whole-map statistics for each channel:
///
///   SSIM_c = (2 mu_r mu_d + C1)(2 cov + C2) /
///            ((mu_r^2 + mu_d^2 + C1)(var_r + var_d + C2))
///
/// with population (1/N) moments. Returns exactly 1 for identical maps.
double scale_similarity(const FeatureMap& ref, const FeatureMap& dist,
                        const SsimConstants& k = {});

/// Pyramids for both images, features per level, one similarity per level.
/// Levels are scored in parallel; the result does not depend on scheduling.
ScaleScores score_pair(const RasterImage& ref, const RasterImage& dist,
                       const FeatureBackend& backend, int min_resolution,
                       std::string pair_id = {});

/// Spatial structural discrepancy 1 - local SSIM (channel mean).
struct ResponseMap {
  int level = 1;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major, >= 0, not clamped above

  double at(int y, int x) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }
};

inline constexpr double kResponseDisplayMax = 1.2;

/// Local statistics use an 11x11 Gaussian window (sigma 1.5). Near the map
/// border the window is cropped to valid cells and renormalized.
ResponseMap response_map(const FeatureMap& ref, const FeatureMap& dist,
                         int level = 1, const SsimConstants& k = {});

/// 8-bit display value for a discrepancy: clamp(v, 0, 1.2) / 1.2 * 255.
unsigned char display_level(double v);

/// Writes the map as a PNG, grayscale or viridis.
void write_response_png(const ResponseMap& map,
                        const std::filesystem::path& path, bool viridis = false);

}  // namespace msds
