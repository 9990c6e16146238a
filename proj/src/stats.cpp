#include "msds/stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "msds/error.hpp"

namespace msds {
namespace {

void check_pair(std::span<const double> x, std::span<const double> y,
                std::size_t min_len) {
  if (x.size() != y.size()) {
    fail(ErrorKind::validation, "length mismatch: " + std::to_string(x.size()) +
                                    " vs " + std::to_string(y.size()));
  }
  if (x.size() < min_len) {
    fail(ErrorKind::validation, "need at least " + std::to_string(min_len) +
                                    " samples, got " + std::to_string(x.size()));
  }
}

double sse(std::span<const double> q, std::span<const double> mos,
           const LogisticParams& p) {
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double r = mos[i] - p(q[i]);
    total += r * r;
  }
  return total;
}

bool gauss_newton(std::span<const double> q, std::span<const double> mos,
                  LogisticParams& p) {
  constexpr int kMaxIterations = 200;
  constexpr int kMaxHalvings = 40;
  double current = sse(q, mos, p);
  if (!std::isfinite(current)) return false;

  for (int iter = 0; iter < kMaxIterations; ++iter) {
    Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
    Eigen::Vector4d jtr = Eigen::Vector4d::Zero();
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double z = (q[i] - p.c) / p.d;
      const double g = 1.0 / (1.0 + std::exp(-z));
      const double slope = (p.a - p.b) * g * (1.0 - g);
      Eigen::Vector4d j;
      j << g, 1.0 - g, -slope / p.d, -slope * z / p.d;
      const double r = mos[i] - ((p.a - p.b) * g + p.b);
      jtj += j * j.transpose();
      jtr += j * r;
    }
    // Small ridge keeps the solve defined when the curve saturates.
    jtj.diagonal().array() += 1e-12 * (jtj.trace() + 1e-300);
    const Eigen::Vector4d step = jtj.ldlt().solve(jtr);
    if (!step.allFinite()) return false;

    double scale = 1.0;
    bool improved = false;
    for (int h = 0; h < kMaxHalvings; ++h, scale *= 0.5) {
      LogisticParams trial{p.a + scale * step[0], p.b + scale * step[1],
                           p.c + scale * step[2], p.d + scale * step[3]};
      if (trial.d == 0.0 || !std::isfinite(trial.d)) continue;
      const double value = sse(q, mos, trial);
      if (std::isfinite(value) && value < current) {
        const double gain = current - value;
        p = trial;
        current = value;
        improved = gain > 1e-14 * (1.0 + current);
        break;
      }
    }
    if (!improved) break;
  }
  return std::isfinite(current);
}

double stddev(std::span<const double> v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / v.size());
}

}  // namespace

std::vector<double> midranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return values[i] < values[j];
  });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, 2);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0;
  double syy = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    fail(ErrorKind::degenerate, "zero variance");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double srcc(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, 3);
  const auto rx = midranks(x);
  const auto ry = midranks(y);
  try {
    return pearson(rx, ry);
  } catch (const Error&) {
    fail(ErrorKind::degenerate, "zero rank variance");
  }
}

double LogisticParams::operator()(double q) const {
  return (a - b) / (1.0 + std::exp(-(q - c) / d)) + b;
}

bool fit_logistic(std::span<const double> q, std::span<const double> mos,
                  LogisticParams& out) {
  check_pair(q, mos, 5);
  const double spread = stddev(q);
  if (!(spread > 0.0)) return false;
  const auto [mos_lo, mos_hi] = std::minmax_element(mos.begin(), mos.end());
  std::vector<double> sorted(q.begin(), q.end());
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[(sorted.size() - 1) / 2];

  // The first start is the conventional one; the wider ones reach the
  // near-linear part of the family when the data asks for it.
  bool any = false;
  double best = 0.0;
  for (double d0 : {spread / 4.0, spread, 4.0 * spread}) {
    LogisticParams p{*mos_hi, *mos_lo, median, d0};
    if (!gauss_newton(q, mos, p)) continue;
    const double value = sse(q, mos, p);
    if (!any || value < best) {
      best = value;
      out = p;
      any = true;
    }
  }
  return any;
}

PlccResult plcc(std::span<const double> predictions,
                std::span<const double> mos, bool fit) {
  PlccResult result;
  result.logistic = fit;
  if (!fit) {
    check_pair(predictions, mos, 2);
    result.value = pearson(predictions, mos);
    return result;
  }
  check_pair(predictions, mos, 5);
  const double raw = pearson(predictions, mos);

  LogisticParams params;
  if (!fit_logistic(predictions, mos, params)) {
    result.value = raw;
    result.fallback = true;
    return result;
  }
  std::vector<double> mapped(predictions.size());
  std::transform(predictions.begin(), predictions.end(), mapped.begin(),
                 [&](double q) { return params(q); });
  result.params = params;
  double fitted = 0.0;
  try {
    fitted = pearson(mapped, mos);
  } catch (const Error&) {
    result.value = raw;
    result.fallback = true;
    return result;
  }
  if (!std::isfinite(fitted)) {
    result.value = raw;
    result.fallback = true;
  } else if (fitted < raw) {
    result.value = raw;
    result.linear_limit = true;
  } else {
    result.value = fitted;
  }
  return result;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a,
                                    std::span<const double> b) {
  if (a.size() != b.size()) {
    fail(ErrorKind::validation, "unpaired samples: " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
  }
  WilcoxonResult result;
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d == 0.0) {
      ++result.zeros_dropped;
    } else {
      diffs.push_back(d);
    }
  }
  if (diffs.empty()) {
    fail(ErrorKind::degenerate, "degenerate: no nonzero differences");
  }
  result.n = diffs.size();
  result.note = "zero differences dropped (" +
                std::to_string(result.zeros_dropped) +
                "); tied magnitudes share average ranks";

  std::vector<double> magnitudes(diffs.size());
  std::transform(diffs.begin(), diffs.end(), magnitudes.begin(),
                 [](double d) { return std::abs(d); });
  const auto ranks = midranks(magnitudes);
  for (std::size_t i = 0; i < diffs.size(); ++i) {
    (diffs[i] > 0 ? result.w_plus : result.w_minus) += ranks[i];
  }

  const std::size_t n = result.n;
  if (n <= kWilcoxonExactLimit) {
    // Midranks are multiples of 1/2, so doubled ranks are integers and the
    // null distribution of 2 W+ can be counted exactly.
    std::vector<int> doubled(n);
    int total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      doubled[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
      total += doubled[i];
    }
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(total) + 1, 0);
    counts[0] = 1;
    int reach = 0;
    for (int r : doubled) {
      for (int s = reach; s >= 0; --s) counts[s + r] += counts[s];
      reach += r;
    }
    const int observed = static_cast<int>(std::lround(2.0 * result.w_plus));
    std::uint64_t lower = 0;
    std::uint64_t upper = 0;
    for (int s = 0; s <= total; ++s) {
      if (s <= observed) lower += counts[s];
      if (s >= observed) upper += counts[s];
    }
    const double patterns = std::ldexp(1.0, static_cast<int>(n));
    result.p_value =
        std::min(1.0, 2.0 * static_cast<double>(std::min(lower, upper)) / patterns);
    result.exact = true;
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    double variance = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
    std::vector<double> sorted = magnitudes;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i);
      variance -= (t * t * t - t) / 48.0;
      i = j;
    }
    const double z =
        std::max(0.0, std::abs(result.w_plus - mean) - 0.5) / std::sqrt(variance);
    result.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    result.exact = false;
  }
  return result;
}

double lower_median(std::vector<double> values) {
  if (values.empty()) fail(ErrorKind::validation, "median of an empty list");
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

EvalReport median_report(const std::vector<SplitMetrics>& splits,
                         bool logistic_fit, const std::string& fingerprint) {
  if (splits.empty()) fail(ErrorKind::validation, "no splits to report");
  EvalReport report;
  report.splits = splits.size();
  report.logistic_fit = logistic_fit;
  report.fingerprint = fingerprint;
  for (const auto& s : splits) {
    report.srcc.push_back(s.srcc);
    report.plcc.push_back(s.plcc);
    for (const auto& [type, v] : s.srcc_by_type) report.srcc_by_type[type].push_back(v);
    for (const auto& [type, v] : s.plcc_by_type) report.plcc_by_type[type].push_back(v);
  }
  report.median_srcc = lower_median(report.srcc);
  report.median_plcc = lower_median(report.plcc);
  return report;
}

}  // namespace msds
