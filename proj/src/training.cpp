#include "msds/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "msds/error.hpp"
#include "msds/stats.hpp"

namespace msds {
namespace {

// Prefix sums over positions 0..n-1.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0.0) {}

  void add(std::size_t pos, double value) {
    for (std::size_t i = pos + 1; i < tree_.size(); i += i & (~i + 1)) {
      tree_[i] += value;
    }
  }
  // Sum over [0, end).
  double prefix(std::size_t end) const {
    double total = 0.0;
    for (std::size_t i = end; i > 0; i -= i & (~i + 1)) total += tree_[i];
    return total;
  }
  double total() const { return prefix(tree_.size() - 1); }

 private:
  std::vector<double> tree_;
};

// Runs of equal MOS in `order` (sorted by MOS), as [begin, end) offsets.
std::vector<std::pair<std::size_t, std::size_t>> mos_groups(
    const std::vector<std::size_t>& order, std::span<const double> mos) {
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && mos[order[j]] == mos[order[i]]) ++j;
    groups.emplace_back(i, j);
    i = j;
  }
  return groups;
}

}  // namespace

void validate(const TrainingConfig& config) {
  const auto& a = config.adam;
  if (!(a.learning_rate > 0.0)) fail(ErrorKind::validation, "learning_rate must be > 0");
  if (!(a.beta1 >= 0.0 && a.beta1 < 1.0 && a.beta2 >= 0.0 && a.beta2 < 1.0)) {
    fail(ErrorKind::validation, "Adam betas must lie in [0, 1)");
  }
  if (!(a.epsilon > 0.0)) fail(ErrorKind::validation, "epsilon must be > 0");
  if (config.patience < 1) fail(ErrorKind::validation, "patience must be >= 1");
  if (config.max_epochs < 0) fail(ErrorKind::validation, "max_epochs must be >= 0");
  if (!(config.margin >= 0.0)) fail(ErrorKind::validation, "margin must be >= 0");
  if (!(config.lambda_rank >= 0.0)) fail(ErrorKind::validation, "lambda_rank must be >= 0");
}

LossResult ranking_mse_loss(std::span<const double> predictions,
                            std::span<const double> mos,
                            const TrainingConfig& config) {
  if (predictions.size() != mos.size()) {
    fail(ErrorKind::validation, "length mismatch between predictions and MOS");
  }
  if (predictions.size() < 2) fail(ErrorKind::validation, "insufficient batch");
  const std::size_t n = predictions.size();
  const double m = config.margin;

  LossResult out;
  out.grad.assign(n, 0.0);
  double mse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = predictions[i] - mos[i];
    mse += r * r;
    out.grad[i] = 2.0 * r / static_cast<double>(n);
  }
  out.value = mse / static_cast<double>(n);
  if (config.lambda_rank == 0.0) return out;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mos[a] < mos[b]; });
  const auto groups = mos_groups(order, mos);

  double tied = 0.0;
  for (const auto& [b, e] : groups) tied += static_cast<double>(e - b) * (e - b);
  const double pairs = (static_cast<double>(n) * n - tied) / 2.0;
  if (pairs == 0.0) return out;
  const double scale = config.lambda_rank / pairs;

  // Each prediction sits at the first slot of its value in sorted order.
  // The hinge condition m - (q_i - q_j) > 0 is monotone in either q, so the
  // active partners are a contiguous run found by partition_point on the
  // same floating-point expression.
  std::vector<double> sorted_q(predictions.begin(), predictions.end());
  std::sort(sorted_q.begin(), sorted_q.end());
  auto slot = [&](double q) {
    return static_cast<std::size_t>(
        std::lower_bound(sorted_q.begin(), sorted_q.end(), q) - sorted_q.begin());
  };

  // Pass 1: i as the better-rated element. Active partners j have
  // mos_j < mos_i and a positive hinge; each adds m - q_i + q_j.
  double hinge = 0.0;
  {
    Fenwick count(n);
    Fenwick sum(n);
    for (const auto& [b, e] : groups) {
      for (std::size_t k = b; k < e; ++k) {
        const std::size_t i = order[k];
        const double qi = predictions[i];
        const auto from = static_cast<std::size_t>(
            std::partition_point(sorted_q.begin(), sorted_q.end(),
                                 [&](double qj) { return !(m - (qi - qj) > 0.0); }) -
            sorted_q.begin());
        const double c = count.total() - count.prefix(from);
        const double s = sum.total() - sum.prefix(from);
        hinge += c * (m - predictions[i]) + s;
        out.grad[i] -= scale * c;
      }
      for (std::size_t k = b; k < e; ++k) {
        count.add(slot(predictions[order[k]]), 1.0);
        sum.add(slot(predictions[order[k]]), predictions[order[k]]);
      }
    }
  }

  // Pass 2: j as the worse-rated element. Active partners i have
  // mos_i > mos_j and a positive hinge.
  {
    Fenwick count(n);
    for (auto g = groups.rbegin(); g != groups.rend(); ++g) {
      for (std::size_t k = g->first; k < g->second; ++k) {
        const std::size_t j = order[k];
        const double qj = predictions[j];
        const auto end = static_cast<std::size_t>(
            std::partition_point(sorted_q.begin(), sorted_q.end(),
                                 [&](double qi) { return m - (qi - qj) > 0.0; }) -
            sorted_q.begin());
        out.grad[j] += scale * count.prefix(end);
      }
      for (std::size_t k = g->first; k < g->second; ++k) {
        count.add(slot(predictions[order[k]]), 1.0);
      }
    }
  }

  out.value += scale * hinge;
  return out;
}

std::vector<double> normalize_mos(std::span<const double> raw,
                                  MosOrientation orientation) {
  if (raw.empty()) fail(ErrorKind::validation, "no scores to normalize");
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  if (!(*hi > *lo)) fail(ErrorKind::degenerate, "degenerate MOS range");
  const double span = *hi - *lo;
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double t = (raw[i] - *lo) / span;
    out[i] = orientation == MosOrientation::lower_better ? 1.0 - t : t;
  }
  return out;
}

std::vector<double> predict(const std::vector<CacheRecord>& records,
                            std::span<const std::size_t> indices,
                            const FusionWeights& weights) {
  const auto w = weights.weights();
  std::vector<double> q;
  q.reserve(indices.size());
  for (std::size_t idx : indices) {
    const auto& rec = records.at(idx);
    q.push_back(fuse_linear(ScaleScores{rec.pair_id, rec.scores}, w).q);
  }
  return q;
}

LossResult batch_loss(const std::vector<CacheRecord>& records,
                      std::span<const std::size_t> indices,
                      const FusionWeights& weights,
                      const TrainingConfig& config) {
  const auto q = predict(records, indices, weights);
  std::vector<double> mos;
  mos.reserve(indices.size());
  for (std::size_t idx : indices) mos.push_back(records[idx].mos_norm);
  const LossResult per_sample = ranking_mse_loss(q, mos, config);

  LossResult out;
  out.value = per_sample.value;
  out.grad.assign(weights.logits.size(), 0.0);
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const auto& rec = records[indices[n]];
    const auto dq = fuse_gradient(ScaleScores{rec.pair_id, rec.scores}, weights);
    for (std::size_t k = 0; k < dq.size(); ++k) {
      out.grad[k] += per_sample.grad[n] * dq[k];
    }
  }
  return out;
}

namespace {

struct Checkpoint {
  double srcc = -std::numeric_limits<double>::infinity();
  double loss = std::numeric_limits<double>::infinity();

  bool better_than(const Checkpoint& other) const {
    if (srcc != other.srcc) return srcc > other.srcc;
    return loss < other.loss;
  }
};

Checkpoint evaluate(const std::vector<CacheRecord>& records,
                    std::span<const std::size_t> val_idx,
                    const FusionWeights& weights, const TrainingConfig& config) {
  Checkpoint cp;
  const auto q = predict(records, val_idx, weights);
  std::vector<double> mos;
  for (std::size_t idx : val_idx) mos.push_back(records[idx].mos_norm);
  if (q.size() >= 3) {
    try {
      cp.srcc = srcc(q, mos);
    } catch (const Error&) {
      // constant predictions or MOS: rank by loss alone
    }
  }
  if (q.size() >= 2) cp.loss = ranking_mse_loss(q, mos, config).value;
  return cp;
}

}  // namespace

TrainResult train(const std::vector<CacheRecord>& records,
                  std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx,
                  const TrainingConfig& config) {
  validate(config);
  if (train_idx.empty()) fail(ErrorKind::validation, "empty training split");
  if (val_idx.empty()) fail(ErrorKind::validation, "empty validation split");

  int deepest = 0;
  for (auto span : {train_idx, val_idx}) {
    for (std::size_t idx : span) {
      if (idx >= records.size()) fail(ErrorKind::validation, "split index out of range");
      deepest = std::max(deepest, records[idx].depth());
    }
  }
  const int k_max = config.k_max > 0 ? config.k_max : deepest;
  if (deepest > k_max) {
    fail(ErrorKind::validation, "K_max mismatch between cache and config: cache has " +
                                    std::to_string(deepest) + " scales, config " +
                                    std::to_string(k_max));
  }

  FusionWeights current = uniform_weights(k_max);
  current.meta.seed = config.seed;
  Adam adam(current.logits.size(), config.adam);

  TrainResult result;
  result.weights = current;
  Checkpoint best = evaluate(records, val_idx, current, config);
  int since_best = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const LossResult loss = batch_loss(records, train_idx, current, config);
    adam.step(current.logits, loss.grad);
    result.epochs_run = epoch;

    const Checkpoint cp = evaluate(records, val_idx, current, config);
    if (cp.better_than(best)) {
      best = cp;
      result.weights = current;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }

  result.best_val_srcc = best.srcc;
  result.best_val_loss = best.loss;
  result.final_state = {current.logits, adam.first_moment(),
                        adam.second_moment(), adam.steps()};
  return result;
}

}  // namespace msds
