// msds: multiscale deep structural similarity command-line tool.

#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "msds/commands.hpp"
#include "msds/error.hpp"

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  const auto dots = text.find("..");
  try {
    if (dots != std::string::npos) {
      const auto lo = std::stoull(text.substr(0, dots));
      const auto hi = std::stoull(text.substr(dots + 2));
      if (hi < lo) throw std::invalid_argument("range");
      for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
      return seeds;
    }
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto comma = text.find(',', start);
      const auto piece = text.substr(start, comma == std::string::npos ? std::string::npos
                                                                        : comma - start);
      std::size_t used = 0;
      seeds.push_back(std::stoull(piece, &used));
      if (used != piece.size()) throw std::invalid_argument("seed");
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  } catch (const std::logic_error&) {
    msds::fail(msds::ErrorKind::validation, "bad --seeds '" + text + "'");
  }
  return seeds;
}

const char* kind_name(msds::ErrorKind kind) {
  switch (kind) {
    case msds::ErrorKind::validation: return "validation";
    case msds::ErrorKind::pipeline: return "pipeline";
    case msds::ErrorKind::degenerate: return "degenerate";
  }
  return "unknown";
}

int report_error(msds::ErrorKind kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind_name(kind)}, {"message", message}}.dump()
            << '\n';
  return static_cast<int>(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiscale deep structural similarity: scoring, training and evaluation"};
  app.require_subcommand(1);

  msds::RunConfig config;
  if (const char* env = std::getenv("MSDS_MODEL"); env && *env) config.model = env;
  std::string seeds_text = "0..9";
  std::string ablation = "learned";
  std::string ref;
  std::string dist;
  std::string out_path;
  std::string level_text = "all";
  std::string report_a;
  std::string report_b;
  bool viridis = false;

  auto add_model = [&](CLI::App* cmd) {
    cmd->add_option("--model", config.model,
                    "ONNX model path or seeded-conv[:seed] (env MSDS_MODEL)");
    cmd->add_option("--min-res", config.min_resolution, "pyramid minimum resolution")
        ->check(CLI::PositiveNumber);
  };
  auto add_protocol = [&](CLI::App* cmd) {
    cmd->add_option("--cache", config.cache, "score cache (JSON lines)")->required();
    cmd->add_option("--manifest", config.manifest, "manifest CSV, checks cache completeness");
    cmd->add_option("--schema", config.schema, "dataset layout id");
    cmd->add_option("--min-res", config.min_resolution, "pyramid minimum resolution");
    cmd->add_option("--seeds", seeds_text, "split seeds, e.g. 0..9 or 1,4,7");
    cmd->add_option("--ablation", ablation, "learned | equal | fixed-msssim");
    cmd->add_flag("--single-scale", config.single_scale, "use s_1 only (K forced to 1)");
    cmd->add_flag("--logistic-fit,!--no-logistic-fit", config.logistic_fit,
                  "map predictions through a 4-parameter logistic before PLCC");
    cmd->add_option("--out", config.out_dir, "output directory");
    cmd->add_option("--dataset", config.dataset_name, "dataset name for weights metadata");
  };

  auto* score = app.add_subcommand("score", "score one reference/distorted pair");
  score->add_option("ref", ref)->required()->check(CLI::ExistingFile);
  score->add_option("dist", dist)->required()->check(CLI::ExistingFile);
  add_model(score);
  score->add_option("--weights", config.weights, "fusion weights JSON");
  score->add_option("--ablation", ablation, "learned | equal | fixed-msssim");
  score->add_flag("--single-scale", config.single_scale, "use s_1 only");

  auto* extract = app.add_subcommand("extract", "compute the per-scale score cache");
  add_model(extract);
  extract->add_option("--manifest", config.manifest)->required();
  extract->add_option("--schema", config.schema, "live|csiq|tid2013|kadid10k|pipal|generic");
  extract->add_option("--cache", config.cache)->required();
  extract->add_option("--jobs", config.jobs, "parallel pairs")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "train fusion weights per split seed");
  add_protocol(train);
  train->add_option("--model", config.model, "backend id recorded in weights metadata");
  train->add_option("--lr", config.training.adam.learning_rate);
  train->add_option("--epochs", config.training.max_epochs);
  train->add_option("--margin", config.training.margin);
  train->add_option("--lambda-rank", config.training.lambda_rank);
  train->add_option("--patience", config.training.patience);

  auto* eval = app.add_subcommand("eval", "evaluate a weights file or an ablation");
  add_protocol(eval);
  eval->add_option("--weights", config.weights, "fusion weights JSON");

  auto* signif = app.add_subcommand("significance", "paired Wilcoxon test on two reports");
  signif->add_option("report_a", report_a)->required()->check(CLI::ExistingFile);
  signif->add_option("report_b", report_b)->required()->check(CLI::ExistingFile);

  auto* respmap = app.add_subcommand("respmap", "render per-scale response maps");
  respmap->add_option("ref", ref)->required()->check(CLI::ExistingFile);
  respmap->add_option("dist", dist)->required()->check(CLI::ExistingFile);
  add_model(respmap);
  respmap->add_option("--level", level_text, "level number or 'all'");
  respmap->add_option("--out", out_path, "PNG path, or directory for --level all")->required();
  respmap->add_flag("--viridis", viridis, "viridis palette instead of grayscale");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    config.seeds = parse_seeds(seeds_text);
    config.ablation = msds::parse_ablation(ablation);

    if (*score) {
      const auto out = msds::cmd_score(ref, dist, config);
      auto j = out.to_json();
      j["ablation"] = msds::to_string(config.ablation);
      j["min_resolution"] = config.min_resolution;
      std::cout << j.dump(2) << '\n';
    } else if (*extract) {
      const auto summary = msds::cmd_extract(config, &std::cerr);
      std::cout << nlohmann::json{{"added", summary.added},
                                  {"skipped", summary.skipped},
                                  {"failed", summary.failures.size()},
                                  {"failures", summary.failures}}
                       .dump(2)
                << '\n';
      if (!summary.failures.empty()) return static_cast<int>(msds::ErrorKind::pipeline);
    } else if (*train) {
      const auto out = msds::cmd_train(config);
      std::cout << out.table();
    } else if (*eval) {
      const auto out = msds::cmd_eval(config);
      std::cout << out.table();
    } else if (*signif) {
      std::cout << msds::cmd_significance(report_a, report_b).to_json().dump(2) << '\n';
    } else if (*respmap) {
      int level = 0;
      if (level_text != "all") {
        try {
          level = std::stoi(level_text);
        } catch (const std::logic_error&) {
          msds::fail(msds::ErrorKind::validation, "bad --level '" + level_text + "'");
        }
        if (level < 1) msds::fail(msds::ErrorKind::validation, "level out of range");
      }
      nlohmann::json files = nlohmann::json::array();
      for (const auto& p : msds::cmd_respmap(ref, dist, level, out_path, config, viridis)) {
        files.push_back(p.string());
      }
      std::cout << nlohmann::json{{"files", files}, {"color_range", {0.0, 1.2}}}.dump(2)
                << '\n';
    }
  } catch (const msds::Error& e) {
    return report_error(e.kind(), e.what());
  } catch (const std::exception& e) {
    return report_error(msds::ErrorKind::pipeline, e.what());
  }
  return 0;
}
