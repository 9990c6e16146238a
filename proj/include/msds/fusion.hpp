#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "msds/similarity.hpp"

namespace msds {

struct WeightsMetadata {
  std::string trained_on;
  int min_resolution = kDefaultMinResolution;
  std::string backend_id;
  std::string scorer_id = kScorerId;
  std::uint64_t seed = 0;
  std::string timestamp;
};

/// K_max global logits; the fusion weights are their softmax.
struct FusionWeights {
  std::vector<double> logits;
  WeightsMetadata meta;

  int k_max() const { return static_cast<int>(logits.size()); }
  std::vector<double> weights() const;
};

struct QualityScore {
  std::string pair_id;
  double q = 0.0;
  int k_used = 0;
};

/// Max-shifted softmax.
std::vector<double> softmax(std::span<const double> logits);

/// Keeps the first `count` weights and rescales them to sum to 1.
std::vector<double> truncate_renormalize(std::span<const double> weights,
                                         std::size_t count);

/// Q = sum_k w_k s_k over the first scores.depth() weights, renormalized.
/// Scales an image does not have contribute zero.
QualityScore fuse_linear(const ScaleScores& scores,
                         std::span<const double> weights);

QualityScore fuse(const ScaleScores& scores, const FusionWeights& weights);

/// dQ/dr_j = w_j (s_j - Q) on the truncated, renormalized weights;
/// zero for logits beyond the image's depth.
std::vector<double> fuse_gradient(const ScaleScores& scores,
                                  const FusionWeights& weights);

/// Five-scale MS-SSIM exponents, used here as linear weights.
inline constexpr double kMsSsimWeights[] = {0.0448, 0.2856, 0.3001, 0.2363,
                                            0.1333};

FusionWeights uniform_weights(int k_max);

inline constexpr int kWeightsFileVersion = 1;

void write_weights(const FusionWeights& weights,
                   const std::filesystem::path& path);
FusionWeights read_weights(const std::filesystem::path& path);

}  // namespace msds
