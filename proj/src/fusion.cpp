#include "msds/fusion.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "msds/error.hpp"

namespace msds {
namespace {

void check_logits(std::span<const double> logits) {
  if (logits.empty()) fail(ErrorKind::validation, "no scales");
  for (double r : logits) {
    if (!std::isfinite(r)) fail(ErrorKind::validation, "non-finite logit");
  }
}

void check_depth(const ScaleScores& scores, std::size_t k_max) {
  if (scores.depth() == 0) fail(ErrorKind::validation, "no scales");
  if (scores.depth() > k_max) {
    fail(ErrorKind::validation,
         "scale count exceeds weight vector: " +
             std::to_string(scores.depth()) + " > " + std::to_string(k_max));
  }
}

}  // namespace

std::vector<double> FusionWeights::weights() const { return softmax(logits); }

std::vector<double> softmax(std::span<const double> logits) {
  check_logits(logits);
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(logits[i] - top);
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

std::vector<double> truncate_renormalize(std::span<const double> weights,
                                         std::size_t count) {
  if (count == 0) fail(ErrorKind::validation, "no scales");
  if (count > weights.size()) {
    fail(ErrorKind::validation, "scale count exceeds weight vector");
  }
  std::vector<double> out(weights.begin(), weights.begin() + count);
  double total = 0.0;
  for (double v : out) total += v;
  if (!(total > 0.0)) fail(ErrorKind::validation, "weights sum to zero");
  for (double& v : out) v /= total;
  return out;
}

QualityScore fuse_linear(const ScaleScores& scores,
                         std::span<const double> weights) {
  check_depth(scores, weights.size());
  const auto w = truncate_renormalize(weights, scores.depth());
  double q = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) q += w[k] * scores.scores[k];
  return {scores.pair_id, q, static_cast<int>(w.size())};
}

QualityScore fuse(const ScaleScores& scores, const FusionWeights& weights) {
  check_depth(scores, weights.logits.size());
  const auto w = weights.weights();
  if (scores.depth() < w.size()) return fuse_linear(scores, w);
  // full depth: the softmax output is used as is, no second normalization
  double q = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) q += w[k] * scores.scores[k];
  return {scores.pair_id, q, static_cast<int>(w.size())};
}

std::vector<double> fuse_gradient(const ScaleScores& scores,
                                  const FusionWeights& weights) {
  check_depth(scores, weights.logits.size());
  const auto w = truncate_renormalize(weights.weights(), scores.depth());
  double q = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) q += w[k] * scores.scores[k];
  std::vector<double> grad(weights.logits.size(), 0.0);
  for (std::size_t k = 0; k < w.size(); ++k) {
    grad[k] = w[k] * (scores.scores[k] - q);
  }
  return grad;
}

FusionWeights uniform_weights(int k_max) {
  if (k_max < 1) fail(ErrorKind::validation, "no scales");
  FusionWeights fw;
  fw.logits.assign(static_cast<std::size_t>(k_max), 0.0);
  return fw;
}

void write_weights(const FusionWeights& weights,
                   const std::filesystem::path& path) {
  check_logits(weights.logits);
  nlohmann::json j = {
      {"version", kWeightsFileVersion},
      {"K_max", weights.k_max()},
      {"logits", weights.logits},
      {"weights", weights.weights()},
      {"min_resolution", weights.meta.min_resolution},
      {"backend_id", weights.meta.backend_id},
      {"scorer_id", weights.meta.scorer_id},
      {"trained_on", weights.meta.trained_on},
      {"seed", weights.meta.seed},
      {"timestamp", weights.meta.timestamp},
  };
  std::ofstream out(path);
  if (!out) fail(ErrorKind::pipeline, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

FusionWeights read_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::validation, "cannot open weights file " + path.string());
  FusionWeights fw;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("version").get<int>() != kWeightsFileVersion) {
      fail(ErrorKind::validation, "unsupported weights file version");
    }
    fw.logits = j.at("logits").get<std::vector<double>>();
    if (j.at("K_max").get<int>() != fw.k_max()) {
      fail(ErrorKind::validation, "K_max does not match logits length");
    }
    fw.meta.min_resolution = j.at("min_resolution").get<int>();
    fw.meta.backend_id = j.at("backend_id").get<std::string>();
    fw.meta.scorer_id = j.at("scorer_id").get<std::string>();
    fw.meta.trained_on = j.at("trained_on").get<std::string>();
    fw.meta.seed = j.at("seed").get<std::uint64_t>();
    fw.meta.timestamp = j.value("timestamp", "");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::validation,
         "malformed weights file " + path.string() + ": " + e.what());
  }
  check_logits(fw.logits);
  return fw;
}

}  // namespace msds
