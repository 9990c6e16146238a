#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace msds {

struct AdamParameters {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam on a flat parameter vector (descent direction).
class Adam {
 public:
  Adam(std::size_t size, AdamParameters params)
      : params_(params), mom1_(size, 0.0), mom2_(size, 0.0) {}

  void step(std::span<double> x, std::span<const double> grad) {
    ++t_;
    const double corr1 = 1.0 - std::pow(params_.beta1, static_cast<double>(t_));
    const double corr2 = 1.0 - std::pow(params_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < x.size(); ++i) {
      mom1_[i] = params_.beta1 * mom1_[i] + (1.0 - params_.beta1) * grad[i];
      mom2_[i] = params_.beta2 * mom2_[i] + (1.0 - params_.beta2) * grad[i] * grad[i];
      x[i] -= params_.learning_rate * (mom1_[i] / corr1) /
              (std::sqrt(mom2_[i] / corr2) + params_.epsilon);
    }
  }

  std::size_t steps() const { return t_; }
  const std::vector<double>& first_moment() const { return mom1_; }
  const std::vector<double>& second_moment() const { return mom2_; }

 private:
  AdamParameters params_;
  std::vector<double> mom1_;
  std::vector<double> mom2_;
  std::size_t t_ = 0;
};

}  // namespace msds
