// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "msds/commands.hpp"
#include "msds/error.hpp"
#include "msds/fusion.hpp"
#include "msds/pyramid.hpp"
#include "msds/stats.hpp"
#include "msds/training.hpp"
#include "synthetic.hpp"

using namespace msds;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  bool skipped = false;
};

int failures = 0;

void run(const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (o.skipped) {
    std::printf("SKIP  %-28s %s\n", name.c_str(), o.detail.c_str());
    return;
  }
  if (limit_s > 0 && secs >= limit_s) {
    o.pass = false;
    o.detail += " [over time limit]";
  }
  std::printf("%s  %-28s %s (%.3f s", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
              secs);
  if (limit_s > 0) std::printf(", limit %.0f s", limit_s);
  std::printf(")\n");
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// --- independent oracles ----------------------------------------------------

std::vector<double> brute_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    int less = 0, equal = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      less += v[j] < v[i];
      equal += j != i && v[j] == v[i];
    }
    r[i] = 1.0 + less + equal / 2.0;
  }
  return r;
}

double brute_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = x.size(); i-- > 0;) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

double enumerate_p(const std::vector<double>& diffs) {
  std::vector<double> mags;
  for (double d : diffs) mags.push_back(std::abs(d));
  const auto ranks = brute_ranks(mags);
  double observed = 0.0;
  for (std::size_t i = 0; i < diffs.size(); ++i)
    if (diffs[i] > 0) observed += ranks[i];
  const std::size_t n = diffs.size();
  std::uint64_t lower = 0, upper = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) w += ranks[i];
    lower += w <= observed;
    upper += w >= observed;
  }
  return std::min(1.0, 2.0 * std::min(lower, upper) / std::ldexp(1.0, static_cast<int>(n)));
}

// Level sizes by repeated ceil-halving while both sides reach min_res.
std::vector<std::pair<int, int>> halving_oracle(int w, int h, int min_res) {
  std::vector<std::pair<int, int>> out;
  while (std::min(w, h) >= min_res) {
    out.emplace_back(w, h);
    if (w == 1 || h == 1) break;
    w = w / 2 + w % 2;
    h = h / 2 + h % 2;
  }
  return out;
}

// --- criteria ---------------------------------------------------------------

Outcome wilcoxon_criterion() {
  const std::vector<double> zeros(10, 0.0);
  struct Case {
    std::vector<double> d;
    double expected;
  };
  const std::vector<Case> cases = {
      {{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 2.0 / 1024},
      {{1, 2, -3, 4, 5, 6, 7, 8, 9, 10}, 10.0 / 1024},
      {{-1, 1, 2, -3, 4, 5, 6, 7, 8, 9}, 22.0 / 1024},
  };
  Outcome o;
  for (const auto& c : cases) {
    const double p = wilcoxon_signed_rank(c.d, zeros).p_value;
    const double oracle = enumerate_p(c.d);
    o.pass = o.pass && p == c.expected && p == oracle;
    o.detail += "p=" + fmt(p) + " (" + fmt(p * 1024, 4) + "/1024) ";
  }
  o.detail += "vs 2^10 enumeration";
  return o;
}

Outcome correlation_criterion() {
  std::mt19937 rng(101);
  std::uniform_int_distribution<int> coarse(0, 7);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  int checked = 0;
  while (checked < 1000) {
    const std::size_t len = 3 + rng() % 48;
    std::vector<double> x(len), y(len);
    for (std::size_t i = 0; i < len; ++i) {
      x[i] = checked % 2 ? coarse(rng) : std::round(n(rng) * 3) / 3;
      y[i] = checked % 3 ? std::round((0.4 * x[i] + n(rng)) * 4) / 4 : coarse(rng);
    }
    const auto rx = brute_ranks(x), ry = brute_ranks(y);
    const double ox = brute_pearson(rx, ry);
    const double op = brute_pearson(x, y);
    if (!std::isfinite(ox) || !std::isfinite(op)) continue;  // constant draw
    worst = std::max(worst, std::abs(srcc(x, y) - ox));
    worst = std::max(worst, std::abs(plcc(x, y, false).value - op));
    ++checked;
  }
  return {worst <= 1e-12, "1000 tied vectors, max |diff| = " + fmt(worst, 3)};
}

Outcome pyramid_criterion() {
  std::mt19937 rng(103);
  std::uniform_int_distribution<int> side(1, 700);
  const int thresholds[] = {16, 32, 64, 128};
  int mismatches = 0;
  for (int t = 0; t < 500; ++t) {
    const int w = side(rng), h = side(rng), min_res = thresholds[t % 4];
    const auto oracle = halving_oracle(w, h, min_res);
    if (pyramid_depth(w, h, min_res) != static_cast<int>(oracle.size())) ++mismatches;
    if (oracle.empty()) {
      try {
        build_pyramid(RasterImage(w, h, 1, 0.5), min_res);
        ++mismatches;
      } catch (const Error&) {
      }
      continue;
    }
    const Pyramid p = build_pyramid(RasterImage(w, h, 1, 0.5), min_res);
    if (p.depth() != oracle.size()) {
      ++mismatches;
      continue;
    }
    for (std::size_t k = 0; k < oracle.size(); ++k) {
      if (p.levels[k].width != oracle[k].first || p.levels[k].height != oracle[k].second)
        ++mismatches;
    }
  }
  const int k768 = pyramid_depth(768, 512, 64);
  const int k512 = pyramid_depth(512, 384, 64);
  return {mismatches == 0 && k768 == 4 && k512 == 3,
          "500 sizes, " + std::to_string(mismatches) + " mismatches; 768x512 K=" +
              std::to_string(k768) + ", 512x384 K=" + std::to_string(k512)};
}

Outcome identity_criterion() {
  std::mt19937 rng(107);
  std::uniform_int_distribution<int> side(64, 320);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const SeededConvBackend backend;
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    RasterImage img(side(rng), side(rng), i % 4 ? 3 : 1);
    for (double& v : img.data) v = u(rng);
    const ScaleScores s = score_pair(img, img, backend, kDefaultMinResolution);
    const double q = fuse(s, uniform_weights(s.depth())).q;
    worst = std::max(worst, std::abs(q - 1.0));
  }
  return {worst <= 1e-9, "20 random images, max |Q - 1| = " + fmt(worst, 3)};
}

Outcome fusion_criterion() {
  std::mt19937 rng(109);
  std::uniform_real_distribution<double> logit(-6.0, 6.0), score(-1.0, 1.0), shift(-40, 40);
  double convex_violation = 0.0, sum_err = 0.0, shift_err = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int kmax = 1 + static_cast<int>(rng() % 6);
    const int m = 1 + static_cast<int>(rng() % kmax);
    FusionWeights fw = uniform_weights(kmax);
    for (double& r : fw.logits) r = logit(rng);
    ScaleScores s{"p", std::vector<double>(m)};
    for (double& v : s.scores) v = score(rng);
    const double q = fuse(s, fw).q;
    const auto [lo, hi] = std::minmax_element(s.scores.begin(), s.scores.end());
    convex_violation = std::max({convex_violation, *lo - q, q - *hi});

    const auto w = truncate_renormalize(fw.weights(), m);
    double total = 0.0;
    for (double v : w) total += v;
    sum_err = std::max(sum_err, std::abs(total - 1.0));

    FusionWeights moved = fw;
    const double c = shift(rng);
    for (double& r : moved.logits) r += c;
    shift_err = std::max(shift_err, std::abs(fuse(s, moved).q - q));
  }
  return {convex_violation <= 1e-12 && sum_err <= 1e-12 && shift_err <= 1e-12,
          "3x1000 cases: bound violation " + fmt(std::max(0.0, convex_violation), 3) +
              ", |sum-1| " + fmt(sum_err, 3) + ", shift " + fmt(shift_err, 3)};
}

// Smallest |margin - (q_i - q_j)| over ordered pairs: how close the batch
// sits to a hinge corner, where the loss has no derivative.
double kink_distance(const std::vector<CacheRecord>& recs, const std::vector<std::size_t>& idx,
                     const FusionWeights& fw, double margin) {
  const auto q = predict(recs, idx, fw);
  double d = INFINITY;
  for (std::size_t i = 0; i < q.size(); ++i)
    for (std::size_t j = 0; j < q.size(); ++j)
      if (recs[i].mos_norm > recs[j].mos_norm) d = std::min(d, std::abs(margin - (q[i] - q[j])));
  return d;
}

Outcome gradient_criterion() {
  std::mt19937 rng(113);
  std::uniform_real_distribution<double> u(0.0, 1.0), r(-2.0, 2.0);
  const double h = 1e-5;
  const TrainingConfig cfg;
  double worst = 0.0;
  int redrawn = 0;
  for (int t = 0; t < 1000; ++t) {
    const int kmax = 2 + t % 4;
    std::vector<CacheRecord> recs(4 + rng() % 28);
    for (auto& rec : recs) {
      rec.scores.resize(1 + rng() % kmax);
      for (double& s : rec.scores) s = u(rng);
      rec.mos_norm = u(rng);
    }
    std::vector<std::size_t> idx(recs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    FusionWeights fw = uniform_weights(kmax);
    for (double& l : fw.logits) l = r(rng);
    // a stencil of +-h moves each Q by well under 1e-4; closer than that to
    // a corner the difference quotient mixes two linear pieces
    if (kink_distance(recs, idx, fw, cfg.margin) < 1e-4) {
      ++redrawn;
      --t;
      continue;
    }
    const auto g = batch_loss(recs, idx, fw, cfg).grad;
    double diff2 = 0.0, norm2 = 0.0;
    for (int j = 0; j < kmax; ++j) {
      FusionWeights p = fw, m = fw;
      p.logits[j] += h;
      m.logits[j] -= h;
      const double fd =
          (batch_loss(recs, idx, p, cfg).value - batch_loss(recs, idx, m, cfg).value) / (2 * h);
      diff2 += (g[j] - fd) * (g[j] - fd);
      norm2 += std::max(g[j] * g[j], fd * fd);
    }
    if (norm2 > 0) worst = std::max(worst, std::sqrt(diff2 / norm2));
  }
  return {worst < 1e-6, "1000 cases, max relative error " + fmt(worst, 3) + " (" +
                           std::to_string(redrawn) + " draws within 1e-4 of a hinge corner redrawn)"};
}

Outcome concentration_criterion() {
  const auto records = testing::scale2_records(50, 8, 4, 2025);
  RunConfig cfg;
  const ProtocolOutput msds = run_protocol(records, cfg);

  auto single_view = records;
  for (auto& r : single_view) r.scores.resize(1);
  RunConfig single = cfg;
  single.single_scale = true;
  const ProtocolOutput base = run_protocol(single_view, single);

  double min_w2 = 1.0, min_srcc = 1.0;
  for (const auto& run : msds.runs) {
    min_w2 = std::min(min_w2, run.weights->weights()[1]);
    min_srcc = std::min(min_srcc, run.test.srcc);
  }
  const WilcoxonResult w = wilcoxon_signed_rank(msds.report.srcc, base.report.srcc);
  const bool pass = min_w2 > 0.8 && min_srcc > 0.99 && w.p_value == 2.0 / 1024 && w.n == 10;
  return {pass, "10 seeds: min w_2 " + fmt(min_w2, 4) + ", min test SRCC " +
                    fmt(min_srcc, 5) + ", vs single-scale p=" + fmt(w.p_value) + " (W-=" +
                    fmt(w.w_minus) + ")"};
}

Outcome ablation_criterion() {
  std::mt19937 rng(127);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double equal_err = 0.0, fixed_err = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int k = 1 + t % 5;
    ScaleScores s{"p", std::vector<double>(k)};
    for (double& v : s.scores) v = u(rng);
    double mean = 0.0;
    for (double v : s.scores) mean += v;
    mean /= k;
    equal_err = std::max(equal_err,
                         std::abs(fuse_linear(s, ablation_weights(Ablation::equal, k)).q - mean));

    // truncated MS-SSIM weights written out per depth
    const double w[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    const double totals[5] = {0.0448, 0.3304, 0.6305, 0.8668, 1.0001};
    double hand = 0.0;
    for (int j = 0; j < k; ++j) hand += w[j] * s.scores[j];
    hand /= totals[k - 1];
    fixed_err = std::max(
        fixed_err, std::abs(fuse_linear(s, ablation_weights(Ablation::fixed_msssim, k)).q - hand));
  }

  // min-res 32 / 64 / 128 on a real pair: shared scales identical, only K moves
  const fs::path dir = fs::temp_directory_path() / "msds_acceptance_ablation";
  fs::create_directories(dir);
  cv::Mat ref(200, 300, CV_8UC3), dist;
  cv::randu(ref, 0, 255);
  cv::GaussianBlur(ref, ref, {0, 0}, 3);
  cv::Mat noise(ref.size(), CV_8UC3);
  cv::randn(noise, 0, 20);
  cv::add(ref, noise, dist);
  cv::imwrite((dir / "r.png").string(), ref);
  cv::imwrite((dir / "d.png").string(), dist);
  RunConfig cfg;
  cfg.ablation = Ablation::equal;
  std::vector<ScoreOutput> outs;
  std::string ks;
  bool only_k = true;
  for (int res : {32, 64, 128}) {
    cfg.min_resolution = res;
    outs.push_back(cmd_score(dir / "r.png", dir / "d.png", cfg));
    only_k = only_k && outs.back().scales.depth() == pyramid_depth(300, 200, res);
    ks += std::to_string(outs.back().scales.depth());
  }
  for (const auto& o : outs)
    for (int j = 0; j < o.scales.depth(); ++j)
      only_k = only_k && o.scales.scores[j] == outs[0].scales.scores[j];
  fs::remove_all(dir);

  return {equal_err <= 1e-12 && fixed_err <= 1e-12 && only_k && ks == "321",
          "equal max err " + fmt(equal_err, 3) + ", fixed-msssim max err " + fmt(fixed_err, 3) +
              ", K at min-res 32/64/128 = " + ks[0] + "/" + ks[1] + "/" + ks[2] +
              (only_k ? ", shared scales identical" : ", shared scales differ")};
}

Outcome dataset_smoke() {
  const char* manifest = std::getenv("MSDS_SMOKE_MANIFEST");
  const char* model = std::getenv("MSDS_SMOKE_MODEL");
  if (!manifest || !model) {
    return {true, "set MSDS_SMOKE_MANIFEST (LIVE layout) and MSDS_SMOKE_MODEL to run", true};
  }
  const fs::path work = fs::temp_directory_path() / "msds_smoke";
  fs::create_directories(work);
  RunConfig cfg;
  cfg.model = model;
  cfg.manifest = manifest;
  cfg.schema = "live";
  cfg.cache = work / "cache.jsonl";
  cfg.jobs = std::max(1u, std::thread::hardware_concurrency());
  cfg.out_dir = work / "learned";
  const ExtractSummary ex = cmd_extract(cfg);
  if (!ex.failures.empty()) return {false, std::to_string(ex.failures.size()) + " pairs failed"};
  const ProtocolOutput learned = cmd_train(cfg);
  RunConfig single = cfg;
  single.single_scale = true;
  single.ablation = Ablation::equal;
  single.out_dir = work / "single";
  const ProtocolOutput base = cmd_eval(single);
  return {learned.report.median_srcc > 0.9 &&
              learned.report.median_srcc >= base.report.median_srcc,
          "median SRCC " + fmt(learned.report.median_srcc, 4) + " vs single-scale " +
              fmt(base.report.median_srcc, 4)};
}

}  // namespace

int main() {
  run("exact-wilcoxon", 1, wilcoxon_criterion);
  run("srcc-plcc-oracle", 5, correlation_criterion);
  run("pyramid-shape-law", 5, pyramid_criterion);
  run("identity-metric", 10, identity_criterion);
  run("fusion-invariants", 0, fusion_criterion);
  run("gradient-correctness", 0, gradient_criterion);
  run("training-concentration", 30, concentration_criterion);
  run("ablation-semantics", 0, ablation_criterion);
  run("dataset-smoke (optional)", 0, dataset_smoke);
  std::printf("%d criteria failed\n", failures);
  return failures;
}
