#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "config.hpp"

namespace rlab::cli {

struct RunContext {
  ExperimentConfig config;
  std::filesystem::path out;
  // gen-data: replaces data.seed. Other commands: replaces the seed list.
  std::optional<std::uint64_t> seed_override;
};

std::filesystem::path data_dir(const RunContext& ctx);
std::filesystem::path run_root(const RunContext& ctx);
std::filesystem::path seed_dir(const RunContext& ctx, std::uint64_t seed);

/// One dataset file per domain plus data/manifest.json.
void cmd_gen_data(RunContext ctx);
/// Per seed: model.ckpt, model.json, train_log.csv, config.json.
void cmd_train(RunContext ctx);
/// Per seed: eval_episodes.csv, eval_summary.json; across seeds:
/// eval_aggregate.json and eval_aggregate.csv in the run root.
void cmd_eval(RunContext ctx);
/// Per seed, under analysis/: sharpness and CKA reports, heatmaps, long CSVs
/// and manifest.json listing exactly the files written.
void cmd_analyze(RunContext ctx);

/// Parses argv and runs the chosen command. Returns the process exit code:
/// 0 success, 1 validation error, 2 runtime error.
int run_cli(int argc, char** argv);

}  // namespace rlab::cli
