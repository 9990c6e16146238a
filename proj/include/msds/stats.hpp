#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace msds {

/// Average (mid) ranks, 1-based.
std::vector<double> midranks(std::span<const double> values);

double pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of midranks.
double srcc(std::span<const double> x, std::span<const double> y);

/// f(q) = (a - b) / (1 + exp(-(q - c) / d)) + b
struct LogisticParams {
  double a = 1.0;
  double b = 0.0;
  double c = 0.0;
  double d = 1.0;

  double operator()(double q) const;
};

struct PlccResult {
  double value = 0.0;
  bool logistic = false;       // the logistic mapping was requested
  bool fallback = false;       // fitting failed; value is the raw PLCC
  bool linear_limit = false;   // the fit ended below raw PLCC, which the
                               // family attains as d -> infinity
  LogisticParams params{};
};

/// Least-squares logistic fit by Gauss-Newton with step halving.
/// Returns false if the iteration produces non-finite values.
bool fit_logistic(std::span<const double> q, std::span<const double> mos,
                  LogisticParams& out);

PlccResult plcc(std::span<const double> predictions,
                std::span<const double> mos, bool fit);

struct WilcoxonResult {
  std::size_t n = 0;          // nonzero differences used
  std::size_t zeros_dropped = 0;
  double w_plus = 0.0;        // sum of ranks of positive differences
  double w_minus = 0.0;
  double p_value = 1.0;       // two-sided
  bool exact = true;
  std::string note;
};

inline constexpr std::size_t kWilcoxonExactLimit = 25;

/// Two-sided signed-rank test on a - b. Zero differences are dropped, tied
/// magnitudes share average ranks. For n <= 25 the p-value is the exact
/// permutation probability over all 2^n sign assignments (counted by
/// dynamic programming over doubled ranks); above that a normal
/// approximation with tie and continuity corrections is used.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a,
                                    std::span<const double> b);

/// Lower median: element (n - 1) / 2 of the sorted values.
double lower_median(std::vector<double> values);

struct EvalReport {
  std::vector<double> srcc;
  std::vector<double> plcc;
  double median_srcc = 0.0;
  double median_plcc = 0.0;
  std::size_t splits = 0;
  bool logistic_fit = true;
  // distortion type -> per-split SRCC
  std::map<std::string, std::vector<double>> srcc_by_type;
  std::map<std::string, std::vector<double>> plcc_by_type;
  std::string fingerprint;
};

struct SplitMetrics {
  double srcc = 0.0;
  double plcc = 0.0;
  std::map<std::string, double> srcc_by_type;
  std::map<std::string, double> plcc_by_type;
};

EvalReport median_report(const std::vector<SplitMetrics>& splits,
                         bool logistic_fit = true,
                         const std::string& fingerprint = {});

}  // namespace msds
