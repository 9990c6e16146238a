#include "msds/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "msds/error.hpp"
#include "msds/features.hpp"
#include "msds/pyramid.hpp"
#include "msds/similarity.hpp"

namespace msds {
namespace {

std::string utc_timestamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string hex_hash(const std::string& s) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << std::hash<std::string>{}(s);
  return os.str();
}

std::vector<ImagePair> content_stubs(const std::vector<CacheRecord>& records) {
  std::vector<ImagePair> stubs;
  stubs.reserve(records.size());
  for (const auto& r : records) {
    ImagePair p;
    p.pair_id = r.pair_id;
    p.content_id = r.content_id;
    stubs.push_back(std::move(p));
  }
  return stubs;
}

nlohmann::json training_json(const TrainingConfig& t) {
  return {{"learning_rate", t.adam.learning_rate},
          {"beta1", t.adam.beta1},
          {"beta2", t.adam.beta2},
          {"epsilon", t.adam.epsilon},
          {"max_epochs", t.max_epochs},
          {"margin", t.margin},
          {"lambda_rank", t.lambda_rank},
          {"patience", t.patience},
          {"batch", "full"}};
}

nlohmann::json wilcoxon_json(const WilcoxonResult& w) {
  return {{"n", w.n},          {"zeros_dropped", w.zeros_dropped},
          {"w_plus", w.w_plus}, {"w_minus", w.w_minus},
          {"p_value", w.p_value}, {"exact", w.exact},
          {"note", w.note}};
}

std::unique_ptr<FeatureBackend> backend_for(const RunConfig& config) {
  return make_backend(config.model);
}

}  // namespace

Ablation parse_ablation(const std::string& name) {
  if (name == "learned") return Ablation::learned;
  if (name == "equal") return Ablation::equal;
  if (name == "fixed-msssim") return Ablation::fixed_msssim;
  fail(ErrorKind::validation, "unknown ablation '" + name + "'");
}

std::string to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::learned: return "learned";
    case Ablation::equal: return "equal";
    case Ablation::fixed_msssim: return "fixed-msssim";
  }
  return "?";
}

void validate(const RunConfig& config) {
  if (config.min_resolution < 16) {
    fail(ErrorKind::validation, "min_resolution must be at least 16");
  }
  if (config.seeds.empty()) fail(ErrorKind::validation, "seed list is empty");
  if (config.jobs < 1) fail(ErrorKind::validation, "--jobs must be at least 1");
  validate(config.training);
}

std::vector<double> ablation_weights(Ablation ablation, int k_max) {
  if (k_max < 1) fail(ErrorKind::validation, "no scales");
  switch (ablation) {
    case Ablation::equal:
      return std::vector<double>(static_cast<std::size_t>(k_max), 1.0 / k_max);
    case Ablation::fixed_msssim: {
      constexpr auto available = std::size(kMsSsimWeights);
      if (static_cast<std::size_t>(k_max) > available) {
        fail(ErrorKind::validation, "scale count exceeds weight vector: fixed MS-SSIM "
                                    "weights cover 5 scales");
      }
      return std::vector<double>(kMsSsimWeights, kMsSsimWeights + k_max);
    }
    case Ablation::learned:
      break;
  }
  fail(ErrorKind::validation, "learned fusion needs a weights file");
}

// ---------------------------------------------------------------------------

nlohmann::json ScoreOutput::to_json() const {
  return {{"Q", quality.q},
          {"K", scales.depth()},
          {"K_used", quality.k_used},
          {"scores", scales.scores},
          {"weights", weights_used}};
}

ScoreOutput cmd_score(const std::filesystem::path& ref,
                      const std::filesystem::path& dist,
                      const RunConfig& config) {
  validate(config);
  const auto backend = backend_for(config);
  ScoreOutput out;
  out.scales = score_pair(decode_image(ref), decode_image(dist), *backend,
                          config.min_resolution, dist.filename().string());
  if (config.single_scale) out.scales.scores.resize(1);

  std::vector<double> linear;
  if (config.ablation == Ablation::learned) {
    if (config.weights.empty()) {
      fail(ErrorKind::validation, "learned fusion needs --weights");
    }
    const FusionWeights fw = read_weights(config.weights);
    if (fw.meta.min_resolution != config.min_resolution) {
      fail(ErrorKind::validation,
           "weights were trained with min_resolution " +
               std::to_string(fw.meta.min_resolution) + ", run uses " +
               std::to_string(config.min_resolution));
    }
    linear = fw.weights();
  } else {
    linear = ablation_weights(config.ablation, static_cast<int>(out.scales.depth()));
  }
  out.quality = fuse_linear(out.scales, linear);
  out.weights_used = truncate_renormalize(linear, out.scales.depth());
  return out;
}

// ---------------------------------------------------------------------------

void verify_cache(const std::vector<CacheRecord>& records,
                  const Manifest& manifest, int min_resolution,
                  bool check_dimensions) {
  std::unordered_map<std::string, const ImagePair*> by_id;
  for (const auto& p : manifest.pairs) by_id[p.pair_id] = &p;
  for (const auto& r : records) {
    const auto it = by_id.find(r.pair_id);
    if (it == by_id.end()) {
      fail(ErrorKind::validation, "cache record '" + r.pair_id + "' is not in the manifest");
    }
    if (check_dimensions) {
      const RasterImage img = decode_image(it->second->ref_path);
      const int k = pyramid_depth(img.width, img.height, min_resolution);
      if (k != r.depth()) {
        fail(ErrorKind::validation, "cache record '" + r.pair_id + "' has K=" +
                                        std::to_string(r.depth()) + ", images give " +
                                        std::to_string(k));
      }
    }
  }
}

ExtractSummary cmd_extract(const RunConfig& config, std::ostream* progress) {
  validate(config);
  if (config.cache.empty()) fail(ErrorKind::validation, "--cache is required");
  const Manifest manifest = load_manifest(config.manifest, config.schema);
  if (manifest.pairs.empty()) fail(ErrorKind::validation, "manifest has no pairs");

  std::vector<double> raw;
  for (const auto& p : manifest.pairs) raw.push_back(p.mos_raw);
  const auto mos_norm = normalize_mos(raw, manifest.orientation);

  const auto existing = read_cache(config.cache);
  verify_cache(existing, manifest, config.min_resolution, false);
  std::unordered_set<std::string> done;
  for (const auto& r : existing) done.insert(r.pair_id);

  std::vector<std::size_t> todo;
  ExtractSummary summary;
  for (std::size_t i = 0; i < manifest.pairs.size(); ++i) {
    if (done.contains(manifest.pairs[i].pair_id)) {
      ++summary.skipped;
    } else {
      todo.push_back(i);
    }
  }

  const auto backend = backend_for(config);
  CacheWriter writer(config.cache);

  // Batches are computed in parallel and appended in manifest order, so the
  // cache layout does not depend on thread timing.
  const std::size_t batch = static_cast<std::size_t>(config.jobs) * 4;
  for (std::size_t start = 0; start < todo.size(); start += batch) {
    const std::size_t end = std::min(todo.size(), start + batch);
    std::vector<std::optional<CacheRecord>> results(end - start);
    std::vector<std::string> errors(end - start);
    std::atomic<std::size_t> next{start};

    auto worker = [&] {
      for (std::size_t t = next++; t < end; t = next++) {
        const std::size_t i = todo[t];
        const ImagePair& pair = manifest.pairs[i];
        try {
          const ScaleScores scores =
              score_pair(decode_image(pair.ref_path), decode_image(pair.dist_path),
                         *backend, config.min_resolution, pair.pair_id);
          CacheRecord rec;
          rec.pair_id = pair.pair_id;
          rec.ref = pair.ref_path.string();
          rec.dist = pair.dist_path.string();
          rec.scores = scores.scores;
          rec.mos_raw = pair.mos_raw;
          rec.mos_norm = mos_norm[i];
          rec.distortion_type = pair.distortion_type;
          rec.content_id = pair.content_id;
          results[t - start] = std::move(rec);
        } catch (const std::exception& e) {
          errors[t - start] = e.what();
        }
      }
    };
    std::vector<std::thread> threads;
    const int n_threads = std::min<int>(config.jobs, static_cast<int>(end - start));
    for (int k = 1; k < n_threads; ++k) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();

    for (std::size_t t = 0; t < results.size(); ++t) {
      if (results[t]) {
        writer.append(*results[t]);
        ++summary.added;
      } else {
        summary.failures.push_back(manifest.pairs[todo[start + t]].pair_id + ": " +
                                   errors[t]);
      }
    }
    if (progress) {
      *progress << "extract: " << end << "/" << todo.size() << " pairs ("
                << summary.failures.size() << " failed)\n";
    }
  }
  return summary;
}

// ---------------------------------------------------------------------------

SplitMetrics evaluate_split(const std::vector<CacheRecord>& records,
                            const std::vector<std::size_t>& indices,
                            const std::vector<double>& linear_weights,
                            bool logistic_fit) {
  std::vector<double> q;
  std::vector<double> mos;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_type;
  for (std::size_t idx : indices) {
    const auto& r = records.at(idx);
    const double value = fuse_linear(ScaleScores{r.pair_id, r.scores}, linear_weights).q;
    q.push_back(value);
    mos.push_back(r.mos_norm);
    by_type[r.distortion_type].first.push_back(value);
    by_type[r.distortion_type].second.push_back(r.mos_norm);
  }
  SplitMetrics m;
  m.srcc = srcc(q, mos);
  m.plcc = plcc(q, mos, logistic_fit).value;
  if (by_type.size() > 1) {
    for (const auto& [type, qm] : by_type) {
      if (qm.first.size() < 5) continue;
      try {
        m.srcc_by_type[type] = srcc(qm.first, qm.second);
        m.plcc_by_type[type] = plcc(qm.first, qm.second, logistic_fit).value;
      } catch (const Error&) {
        // constant scores within a type carry no ranking information
      }
    }
  }
  return m;
}

std::vector<CacheRecord> load_training_view(const RunConfig& config) {
  if (config.cache.empty()) fail(ErrorKind::validation, "--cache is required");
  if (!std::filesystem::exists(config.cache)) {
    fail(ErrorKind::validation, "cache file not found: " + config.cache.string());
  }
  auto records = read_cache(config.cache);
  if (records.empty()) fail(ErrorKind::validation, "cache is empty");
  if (!config.manifest.empty()) {
    const Manifest manifest = load_manifest(config.manifest, config.schema, false);
    if (records.size() != manifest.pairs.size()) {
      fail(ErrorKind::validation, "cache is incomplete: " + std::to_string(records.size()) +
                                      " of " + std::to_string(manifest.pairs.size()) +
                                      " pairs");
    }
    verify_cache(records, manifest, config.min_resolution, false);
  }
  if (config.single_scale) {
    for (auto& r : records) r.scores.resize(1);
  }
  return records;
}

ProtocolOutput run_protocol(const std::vector<CacheRecord>& records,
                            const RunConfig& config,
                            const std::optional<FusionWeights>& fixed) {
  validate(config);
  int k_max = 0;
  for (const auto& r : records) k_max = std::max(k_max, r.depth());

  ProtocolOutput out;
  out.method = config.single_scale ? "single-scale"
               : fixed              ? "transfer"
                                    : to_string(config.ablation);
  const auto stubs = content_stubs(records);

  std::vector<SplitMetrics> metrics;
  for (std::uint64_t seed : config.seeds) {
    const SplitPlan plan = make_splits(stubs, seed);
    const SplitIndices split = assign_split(records, plan);
    SeedRun run;
    run.seed = seed;

    std::vector<double> linear;
    if (fixed) {
      linear = fixed->weights();
      run.weights = *fixed;
    } else if (config.ablation == Ablation::learned) {
      TrainingConfig tc = config.training;
      tc.seed = seed;
      tc.k_max = k_max;
      TrainResult tr = train(records, split.train, split.val, tc);
      tr.weights.meta.trained_on = config.dataset_name.empty() ? config.schema
                                                               : config.dataset_name;
      tr.weights.meta.min_resolution = config.min_resolution;
      tr.weights.meta.backend_id = config.model;
      tr.weights.meta.seed = seed;
      tr.weights.meta.timestamp = utc_timestamp();
      run.best_epoch = tr.best_epoch;
      run.best_val_srcc = tr.best_val_srcc;
      linear = tr.weights.weights();
      run.weights = std::move(tr.weights);
    } else {
      linear = ablation_weights(config.ablation, k_max);
    }
    if (static_cast<int>(linear.size()) < k_max) {
      fail(ErrorKind::validation, "scale count exceeds weight vector: cache has " +
                                      std::to_string(k_max) + " scales, weights " +
                                      std::to_string(linear.size()));
    }
    run.test = evaluate_split(records, split.test, linear, config.logistic_fit);
    metrics.push_back(run.test);
    out.runs.push_back(std::move(run));
  }

  nlohmann::json fp = {{"method", out.method},
                       {"ablation", to_string(config.ablation)},
                       {"min_resolution", config.min_resolution},
                       {"single_scale", config.single_scale},
                       {"logistic_fit", config.logistic_fit},
                       {"seeds", config.seeds},
                       {"training", training_json(config.training)},
                       {"records", records.size()}};
  out.report = median_report(metrics, config.logistic_fit, hex_hash(fp.dump()));
  return out;
}

nlohmann::json ProtocolOutput::to_json(const RunConfig& config) const {
  nlohmann::json runs_json = nlohmann::json::array();
  for (const auto& r : runs) {
    nlohmann::json j = {{"seed", r.seed}, {"srcc", r.test.srcc}, {"plcc", r.test.plcc}};
    if (r.weights) {
      j["logits"] = r.weights->logits;
      j["weights"] = r.weights->weights();
    }
    if (config.ablation == Ablation::learned && !config.single_scale && r.best_epoch >= 0) {
      j["best_epoch"] = r.best_epoch;
      j["best_val_srcc"] = r.best_val_srcc;
    }
    runs_json.push_back(std::move(j));
  }
  std::vector<std::uint64_t> seeds;
  for (const auto& r : runs) seeds.push_back(r.seed);

  nlohmann::json by_type = nlohmann::json::object();
  for (const auto& [type, values] : report.srcc_by_type) {
    by_type[type]["srcc"] = values;
    by_type[type]["median_srcc"] = lower_median(values);
  }
  for (const auto& [type, values] : report.plcc_by_type) {
    by_type[type]["plcc"] = values;
    by_type[type]["median_plcc"] = lower_median(values);
  }

  nlohmann::json j = {
      {"method", method},
      {"seeds", seeds},
      {"splits", report.splits},
      {"srcc", report.srcc},
      {"plcc", report.plcc},
      {"median_srcc", report.median_srcc},
      {"median_plcc", report.median_plcc},
      {"median_convention", "lower"},
      {"plcc_mapping", report.logistic_fit ? "logistic-4" : "raw"},
      {"by_distortion", by_type},
      {"runs", runs_json},
      {"config",
       {{"ablation", to_string(config.ablation)},
        {"min_resolution", config.min_resolution},
        {"single_scale", config.single_scale},
        {"model", config.model},
        {"scorer_id", kScorerId},
        {"ssim_c1", SsimConstants{}.c1},
        {"ssim_c2", SsimConstants{}.c2},
        {"training", training_json(config.training)}}},
      {"fingerprint", report.fingerprint},
  };
  if (config.ablation == Ablation::fixed_msssim) {
    j["config"]["fixed_weights_source"] =
        "MS-SSIM five-scale exponents (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)";
  }
  return j;
}

std::string ProtocolOutput::table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << std::left << std::setw(16) << "Method" << std::right << std::setw(8) << "SRCC"
     << std::setw(8) << "PLCC" << '\n';
  os << std::left << std::setw(16) << method << std::right << std::setw(8)
     << report.median_srcc << std::setw(8) << report.median_plcc << '\n';
  if (!report.srcc_by_type.empty()) {
    os << '\n' << std::left << std::setw(24) << "Distortion type" << std::right
       << std::setw(8) << "SRCC" << std::setw(8) << "PLCC" << '\n';
    for (const auto& [type, values] : report.srcc_by_type) {
      os << std::left << std::setw(24) << type << std::right << std::setw(8)
         << lower_median(values);
      const auto it = report.plcc_by_type.find(type);
      if (it != report.plcc_by_type.end()) os << std::setw(8) << lower_median(it->second);
      os << '\n';
    }
  }
  os << "\nsplits: " << report.splits << " (lower median)\n";
  return os.str();
}

namespace {

void write_outputs(const ProtocolOutput& out, const RunConfig& config,
                   bool write_weights_files) {
  std::filesystem::create_directories(config.out_dir);
  if (write_weights_files) {
    for (const auto& run : out.runs) {
      if (run.weights) {
        write_weights(*run.weights, config.out_dir / ("weights_seed" +
                                                      std::to_string(run.seed) + ".json"));
      }
    }
  }
  std::ofstream json_out(config.out_dir / "report.json");
  json_out << out.to_json(config).dump(2) << '\n';
  std::ofstream text_out(config.out_dir / "report.txt");
  text_out << out.table();
  if (!json_out || !text_out) {
    fail(ErrorKind::pipeline, "cannot write report in " + config.out_dir.string());
  }
}

}  // namespace

ProtocolOutput cmd_train(const RunConfig& config) {
  validate(config);
  const auto records = load_training_view(config);
  ProtocolOutput out = run_protocol(records, config);
  write_outputs(out, config, config.ablation == Ablation::learned);
  return out;
}

ProtocolOutput cmd_eval(const RunConfig& config) {
  validate(config);
  const auto records = load_training_view(config);
  std::optional<FusionWeights> fixed;
  if (config.ablation == Ablation::learned) {
    if (config.weights.empty()) fail(ErrorKind::validation, "eval needs --weights or --ablation");
    fixed = read_weights(config.weights);
    if (fixed->meta.min_resolution != config.min_resolution) {
      fail(ErrorKind::validation,
           "weights were trained with min_resolution " +
               std::to_string(fixed->meta.min_resolution) + ", run uses " +
               std::to_string(config.min_resolution));
    }
  }
  ProtocolOutput out = run_protocol(records, config, fixed);
  write_outputs(out, config, false);
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json SignificanceOutput::to_json() const {
  return {{"test", "wilcoxon-signed-rank, two-sided"},
          {"seeds", seeds},
          {"srcc", wilcoxon_json(srcc)},
          {"plcc", wilcoxon_json(plcc)}};
}

SignificanceOutput significance(const nlohmann::json& report_a,
                                const nlohmann::json& report_b) {
  SignificanceOutput out;
  try {
    const auto seeds_a = report_a.at("seeds").get<std::vector<std::uint64_t>>();
    const auto seeds_b = report_b.at("seeds").get<std::vector<std::uint64_t>>();
    if (seeds_a != seeds_b) fail(ErrorKind::validation, "unpaired splits");
    out.seeds = seeds_a;
    const auto srcc_a = report_a.at("srcc").get<std::vector<double>>();
    const auto srcc_b = report_b.at("srcc").get<std::vector<double>>();
    const auto plcc_a = report_a.at("plcc").get<std::vector<double>>();
    const auto plcc_b = report_b.at("plcc").get<std::vector<double>>();
    if (srcc_a.size() != seeds_a.size() || srcc_b.size() != seeds_b.size() ||
        plcc_a.size() != seeds_a.size() || plcc_b.size() != seeds_b.size()) {
      fail(ErrorKind::validation, "unpaired splits");
    }
    out.srcc = wilcoxon_signed_rank(srcc_a, srcc_b);
    out.plcc = wilcoxon_signed_rank(plcc_a, plcc_b);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::validation, std::string("malformed report: ") + e.what());
  }
  return out;
}

SignificanceOutput cmd_significance(const std::filesystem::path& report_a,
                                    const std::filesystem::path& report_b) {
  auto load = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) fail(ErrorKind::validation, "cannot open report " + p.string());
    try {
      return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::validation, "malformed report " + p.string() + ": " + e.what());
    }
  };
  return significance(load(report_a), load(report_b));
}

// ---------------------------------------------------------------------------

std::vector<std::filesystem::path> cmd_respmap(const std::filesystem::path& ref,
                                               const std::filesystem::path& dist,
                                               int level,
                                               const std::filesystem::path& out,
                                               const RunConfig& config,
                                               bool viridis) {
  validate(config);
  const RasterImage ref_img = decode_image(ref);
  const RasterImage dist_img = decode_image(dist);
  if (!ref_img.same_geometry(dist_img)) fail(ErrorKind::validation, "pair geometry mismatch");
  const Pyramid ref_pyr = build_pyramid(ref_img, config.min_resolution);
  const Pyramid dist_pyr = build_pyramid(dist_img, config.min_resolution);
  const int depth = static_cast<int>(ref_pyr.depth());
  if (level < 0 || level > depth) {
    fail(ErrorKind::validation, "level " + std::to_string(level) + " out of range 1.." +
                                    std::to_string(depth));
  }
  const auto backend = backend_for(config);

  std::vector<int> levels;
  if (level == 0) {
    for (int k = 1; k <= depth; ++k) levels.push_back(k);
  } else {
    levels.push_back(level);
  }

  std::vector<std::filesystem::path> written;
  for (int k : levels) {
    const FeatureMap fr = extract(*backend, ref_pyr.levels[k - 1]);
    const FeatureMap fd = extract(*backend, dist_pyr.levels[k - 1]);
    const ResponseMap map = response_map(fr, fd, k);
    std::filesystem::path target = out;
    if (level == 0 || std::filesystem::is_directory(out)) {
      std::filesystem::create_directories(out);
      target = out / ("respmap_level" + std::to_string(k) + ".png");
    }
    write_response_png(map, target, viridis);
    written.push_back(target);
  }
  return written;
}

}  // namespace msds
