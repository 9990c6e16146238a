#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "msds/adam.hpp"
#include "msds/dataset.hpp"
#include "msds/fusion.hpp"

namespace msds {

struct TrainingConfig {
  AdamParameters adam{};
  int max_epochs = 500;
  double margin = 0.05;
  double lambda_rank = 1.0;
  int patience = 50;
  std::uint64_t seed = 0;
  // 0: infer from the deepest record in the cache.
  int k_max = 0;
};

void validate(const TrainingConfig& config);

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;  // dL/dQ
};

/// mean (Q_i - mos_i)^2
///   + lambda * mean over pairs with mos_i > mos_j of max(0, margin - (Q_i - Q_j))
/// The hinge sums are accumulated with Fenwick trees, O(n log n).
LossResult ranking_mse_loss(std::span<const double> predictions,
                            std::span<const double> mos,
                            const TrainingConfig& config);

/// Min-max to [0, 1], flipped for DMOS so that 1 is always best quality.
std::vector<double> normalize_mos(std::span<const double> raw,
                                  MosOrientation orientation);

/// Loss and dL/dr for a batch of cached scores under the given logits.
LossResult batch_loss(const std::vector<CacheRecord>& records,
                      std::span<const std::size_t> indices,
                      const FusionWeights& weights,
                      const TrainingConfig& config);

std::vector<double> predict(const std::vector<CacheRecord>& records,
                            std::span<const std::size_t> indices,
                            const FusionWeights& weights);

struct TrainState {
  std::vector<double> logits;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::size_t step = 0;
};

struct TrainResult {
  FusionWeights weights;     // best-validation snapshot
  TrainState final_state;    // where the optimizer stopped
  int best_epoch = 0;
  int epochs_run = 0;
  double best_val_srcc = 0.0;
  double best_val_loss = 0.0;
};

/// Full-batch Adam from uniform logits. The returned weights are the epoch
/// with the highest validation SRCC, ties going to lower validation loss;
/// epoch 0 (the initial logits) takes part. Stops after `patience` epochs
/// without improvement.
TrainResult train(const std::vector<CacheRecord>& records,
                  std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx,
                  const TrainingConfig& config);

}  // namespace msds
