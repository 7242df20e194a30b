#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rlab/data/dataset.hpp"
#include "rlab/fewshot/fewshot.hpp"
#include "rlab/reap/reap.hpp"
#include "rlab/train/trainer.hpp"
#include "rlab/vit/config.hpp"

namespace rlab::cli {

inline constexpr int kConfigSchemaVersion = 1;

struct DataSection {
  std::uint64_t seed = 7;
  // Empty means the default suite for `seed`. The first domain is the source.
  std::vector<data::DomainSpec> domains;

  std::vector<data::DomainSpec> resolved() const;
};

struct EvalSection {
  std::size_t n_way = 5;
  std::size_t k_shot = 5;
  std::size_t q_queries = 15;
  std::size_t episodes = 200;
  bool plain = true;
  bool finetune = false;
  fewshot::FinetuneConfig finetune_cfg;
};

struct AnalysisSection {
  std::vector<double> sigmas;  // empty means geometric 1e-3 .. 1, 7 points
  std::size_t draws = 32;
  bool per_block = false;
  std::size_t cka_samples = 100;
  std::size_t heatmap_images = 2;

  std::vector<double> resolved_sigmas() const;
};

/// Everything one experiment needs. Sections that do not apply to the
/// method are rejected when present.
struct ExperimentConfig {
  std::string method_name = "baseline";
  train::Method method = train::Method::baseline;
  vit::ViTConfig model;
  reap::ReapConfig reap;
  std::optional<double> reap_tau;  // initial tau of the REAP bank
  train::TrainConfig train;
  DataSection data;
  EvalSection eval;
  AnalysisSection analysis;
  std::vector<std::uint64_t> seeds{0};
  std::string data_dir = "data";
  std::string runs_dir = "runs";

  /// Model geometry actually trained (registers follow the method).
  vit::ViTConfig model_for_training() const;
  /// 8 hex digits over the sections that determine a checkpoint.
  std::string train_hash() const;
  std::string run_name() const;
};

/// Parses and validates; every problem is a ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Effective config with defaults filled in; parse_config(to_json(c))
/// reproduces c.
nlohmann::json to_json(const ExperimentConfig& c);

nlohmann::json domain_to_json(const data::DomainSpec& d);

}  // namespace rlab::cli
