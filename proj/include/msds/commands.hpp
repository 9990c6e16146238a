#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msds/dataset.hpp"
#include "msds/fusion.hpp"
#include "msds/stats.hpp"
#include "msds/training.hpp"

#include "json.hpp"

namespace msds {

enum class Ablation { learned, equal, fixed_msssim };

Ablation parse_ablation(const std::string& name);
std::string to_string(Ablation ablation);

/// Everything a subcommand may need; unused fields are ignored.
struct RunConfig {
  std::string model = "seeded-conv";
  int min_resolution = kDefaultMinResolution;
  std::filesystem::path weights;
  std::filesystem::path manifest;
  std::string schema = "generic";
  std::filesystem::path cache;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  Ablation ablation = Ablation::learned;
  bool single_scale = false;
  bool logistic_fit = true;
  int jobs = 1;
  std::filesystem::path out_dir = ".";
  std::string dataset_name;
  TrainingConfig training{};
};

void validate(const RunConfig& config);

/// Linear fusion weights for a non-learned ablation, k_max long.
std::vector<double> ablation_weights(Ablation ablation, int k_max);

// --- score -----------------------------------------------------------------

struct ScoreOutput {
  QualityScore quality;
  ScaleScores scales;
  std::vector<double> weights_used;  // truncated + renormalized
  nlohmann::json to_json() const;
};

ScoreOutput cmd_score(const std::filesystem::path& ref,
                      const std::filesystem::path& dist,
                      const RunConfig& config);

// --- extract ---------------------------------------------------------------

struct ExtractSummary {
  std::size_t added = 0;
  std::size_t skipped = 0;
  std::vector<std::string> failures;  // "pair_id: message"
};

ExtractSummary cmd_extract(const RunConfig& config,
                           std::ostream* progress = nullptr);

/// pair_id existence and, when requested, K against the image dimensions.
void verify_cache(const std::vector<CacheRecord>& records,
                  const Manifest& manifest, int min_resolution,
                  bool check_dimensions);

// --- train / eval ----------------------------------------------------------

struct SeedRun {
  std::uint64_t seed = 0;
  SplitMetrics test;
  std::optional<FusionWeights> weights;
  int best_epoch = 0;
  double best_val_srcc = 0.0;
};

struct ProtocolOutput {
  std::string method;
  std::vector<SeedRun> runs;
  EvalReport report;
  nlohmann::json to_json(const RunConfig& config) const;
  std::string table() const;
};

/// Test-split metrics for one set of records under fixed linear weights.
SplitMetrics evaluate_split(const std::vector<CacheRecord>& records,
                            const std::vector<std::size_t>& indices,
                            const std::vector<double>& linear_weights,
                            bool logistic_fit);

/// Cache records as training sees them: single-scale keeps s_1 only.
std::vector<CacheRecord> load_training_view(const RunConfig& config);

/// Per seed: split by content, train (learned) or use fixed weights
/// (ablations), evaluate on the test contents.
ProtocolOutput run_protocol(const std::vector<CacheRecord>& records,
                            const RunConfig& config,
                            const std::optional<FusionWeights>& fixed = std::nullopt);

/// Trains per seed and writes weights_seed<N>.json, report.json, report.txt.
ProtocolOutput cmd_train(const RunConfig& config);

/// Evaluates a weights file (or an ablation) over the seeds' test splits.
ProtocolOutput cmd_eval(const RunConfig& config);

// --- significance ----------------------------------------------------------

struct SignificanceOutput {
  WilcoxonResult srcc;
  WilcoxonResult plcc;
  std::vector<std::uint64_t> seeds;
  nlohmann::json to_json() const;
};

SignificanceOutput significance(const nlohmann::json& report_a,
                                const nlohmann::json& report_b);

SignificanceOutput cmd_significance(const std::filesystem::path& report_a,
                                    const std::filesystem::path& report_b);

// --- respmap ---------------------------------------------------------------

/// level 0 means every level. Returns the written paths.
std::vector<std::filesystem::path> cmd_respmap(const std::filesystem::path& ref,
                                               const std::filesystem::path& dist,
                                               int level,
                                               const std::filesystem::path& out,
                                               const RunConfig& config,
                                               bool viridis = false);

}  // namespace msds
