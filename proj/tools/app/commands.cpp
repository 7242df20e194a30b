#include "commands.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "rlab/analysis/analysis.hpp"
#include "rlab/errors.hpp"
#include "rlab/fewshot/fewshot.hpp"
#include "rlab/train/trainer.hpp"

namespace rlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num_str(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

// Console plus a timestamped run.log in `dir`.
std::shared_ptr<spdlog::logger> make_logger(const fs::path& dir) {
  auto console = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
  console->set_pattern("[%^%l%$] %v");
  auto file = std::make_shared<spdlog::sinks::basic_file_sink_mt>((dir / "run.log").string());
  file->set_pattern("%Y-%m-%d %H:%M:%S.%e [%l] %v");
  auto logger = std::make_shared<spdlog::logger>("rlab", spdlog::sinks_init_list{console, file});
  logger->set_level(spdlog::level::info);
  logger->flush_on(spdlog::level::info);
  return logger;
}

std::vector<std::uint64_t> seeds_of(const RunContext& ctx) {
  return ctx.seed_override ? std::vector<std::uint64_t>{*ctx.seed_override} : ctx.config.seeds;
}

fs::path dataset_path(const RunContext& ctx, const std::string& name) {
  return data_dir(ctx) / (name + ".rlds");
}

// The data on disk must come from the same domain list as the config.
void check_data_manifest(const RunContext& ctx) {
  const fs::path path = data_dir(ctx) / "manifest.json";
  const json manifest = read_json(path);
  json expected = json::array();
  for (const auto& d : ctx.config.data.resolved()) expected.push_back(domain_to_json(d));
  if (!manifest.contains("domains") || manifest.at("domains") != expected) {
    throw IntegrityError(path.string() +
                         " was generated from different domain settings; rerun gen-data");
  }
}

data::Dataset load_domain(const RunContext& ctx, const std::string& name) {
  const fs::path path = dataset_path(ctx, name);
  if (!fs::exists(path)) throw IoError("missing dataset " + path.string());
  const json manifest = read_json(data_dir(ctx) / "manifest.json");
  std::string expected;
  for (const auto& f : manifest.value("files", json::array())) {
    if (f.value("name", "") == name) expected = f.value("fnv1a64", "");
  }
  if (expected != file_checksum(path)) {
    throw IntegrityError(path.string() + " does not match its manifest checksum");
  }
  return data::load_dataset(path);
}

vit::ViT load_model(const RunContext& ctx, std::uint64_t seed) {
  const fs::path ckpt = seed_dir(ctx, seed) / "model.ckpt";
  if (!fs::exists(ckpt)) throw IoError("missing checkpoint " + ckpt.string() + "; run train first");
  return vit::ViT::load(ckpt);
}

std::vector<std::size_t> sample_indices(std::size_t size, std::size_t count,
                                        num::RngStream rng) {
  auto idx = rng.sample_without_replacement(size, std::min(size, count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

fs::path data_dir(const RunContext& ctx) { return ctx.out / ctx.config.data_dir; }

fs::path run_root(const RunContext& ctx) {
  return ctx.out / ctx.config.runs_dir / ctx.config.run_name();
}

fs::path seed_dir(const RunContext& ctx, std::uint64_t seed) {
  return run_root(ctx) / ("seed-" + std::to_string(seed));
}

void cmd_gen_data(RunContext ctx) {
  if (ctx.seed_override) {
    ctx.config.data.seed = *ctx.seed_override;
    for (auto& d : ctx.config.data.domains) d.seed = *ctx.seed_override;
  }
  const fs::path dir = data_dir(ctx);
  ensure_dir(dir);
  auto log = make_logger(dir);
  json domains = json::array(), files = json::array();
  for (const auto& spec : ctx.config.data.resolved()) {
    const auto ds = data::generate_domain(spec);
    const fs::path path = dataset_path(ctx, spec.name);
    data::write_dataset(ds, path);
    log->info("wrote {} ({} images, {} classes)", path.string(), ds.size(), ds.class_count);
    domains.push_back(domain_to_json(spec));
    files.push_back({{"name", spec.name},
                     {"file", path.filename().string()},
                     {"images", ds.size()},
                     {"fnv1a64", file_checksum(path)}});
  }
  write_json(dir / "manifest.json",
             {{"schema_version", kConfigSchemaVersion}, {"domains", domains}, {"files", files}});
}

void cmd_train(RunContext ctx) {
  check_data_manifest(ctx);
  const auto domains = ctx.config.data.resolved();
  const data::Dataset source = load_domain(ctx, domains.front().name);
  const ExperimentConfig& c = ctx.config;
  for (std::uint64_t seed : seeds_of(ctx)) {
    const fs::path dir = seed_dir(ctx, seed);
    ensure_dir(dir);
    auto log = make_logger(dir);
    log->info("train {} seed {} -> {}", c.method_name, seed, dir.string());
    json effective = to_json(c);
    effective["seeds"] = {seed};
    write_json(dir / "config.json", effective);

    std::string csv = "epoch,loss,accuracy,tau\n";
    auto result = train::train_source(
        source, c.method, c.model_for_training(), c.train, seed, [&](const train::EpochLog& e) {
          csv += std::to_string(e.epoch) + "," + num_str(e.loss) + "," + num_str(e.accuracy) +
                 "," + num_str(e.tau) + "\n";
          log->info("epoch {} loss {:.4f} acc {:.4f} tau {:.4f}", e.epoch, e.loss, e.accuracy,
                    e.tau);
        });
    write_text(dir / "train_log.csv", csv);
    result.model.save(dir / "model.ckpt");
  }
}

void cmd_eval(RunContext ctx) {
  check_data_manifest(ctx);
  const ExperimentConfig& c = ctx.config;
  const auto domains = c.data.resolved();
  std::vector<data::Dataset> targets;
  for (std::size_t i = 1; i < domains.size(); ++i) targets.push_back(load_domain(ctx, domains[i].name));
  std::vector<fewshot::EvalMode> modes;
  if (c.eval.plain) modes.push_back(fewshot::EvalMode::plain);
  if (c.eval.finetune) modes.push_back(fewshot::EvalMode::finetune);

  // domain -> mode -> per-seed means
  std::map<std::string, std::map<std::string, std::vector<double>>> per_seed;
  const auto seeds = seeds_of(ctx);
  for (std::uint64_t seed : seeds) {
    const fs::path dir = seed_dir(ctx, seed);
    const vit::ViT model = load_model(ctx, seed);
    auto log = make_logger(dir);
    std::string csv = "domain,mode,episode,accuracy\n";
    json summary = {{"schema_version", kConfigSchemaVersion},
                    {"seed", seed},
                    {"n_way", c.eval.n_way},
                    {"k_shot", c.eval.k_shot},
                    {"q_queries", c.eval.q_queries},
                    {"episodes", c.eval.episodes},
                    {"results", json::array()}};
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const std::string& name = domains[t + 1].name;
      for (auto mode : modes) {
        const std::string mode_name(fewshot::to_string(mode));
        const num::RngStream rng = num::RngStream(seed, "eval").derive(name);
        const auto s = fewshot::evaluate(model, targets[t], c.eval.n_way, c.eval.k_shot,
                                         c.eval.q_queries, c.eval.episodes, rng, mode,
                                         c.eval.finetune_cfg);
        for (const auto& e : s.episodes) {
          csv += name + "," + mode_name + "," + std::to_string(e.index) + "," +
                 num_str(e.accuracy) + "\n";
        }
        summary["results"].push_back({{"domain", name},
                                      {"mode", mode_name},
                                      {"mean", s.mean},
                                      {"ci95", s.ci95},
                                      {"stddev", s.stddev}});
        per_seed[name][mode_name].push_back(s.mean);
        log->info("seed {} {} {}: {:.4f} +- {:.4f}", seed, name, mode_name, s.mean, s.ci95);
      }
    }
    write_text(dir / "eval_episodes.csv", csv);
    write_json(dir / "eval_summary.json", summary);
  }

  json agg = {{"schema_version", kConfigSchemaVersion},
              {"method", c.method_name},
              {"seeds", seeds},
              {"results", json::array()}};
  std::string csv = "method,domain,mode,seeds,mean,stderr\n";
  for (const auto& [domain, by_mode] : per_seed) {
    for (const auto& [mode, values] : by_mode) {
      const double n = static_cast<double>(values.size());
      const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
      double sq = 0.0;
      for (double v : values) sq += (v - mean) * (v - mean);
      const double se = values.size() > 1 ? std::sqrt(sq / (n - 1.0)) / std::sqrt(n) : 0.0;
      agg["results"].push_back({{"domain", domain},
                                {"mode", mode},
                                {"per_seed", values},
                                {"mean", mean},
                                {"stderr", se}});
      csv += c.method_name + "," + domain + "," + mode + "," + std::to_string(values.size()) +
             "," + num_str(mean) + "," + num_str(se) + "\n";
    }
  }
  write_json(run_root(ctx) / "eval_aggregate.json", agg);
  write_text(run_root(ctx) / "eval_aggregate.csv", csv);
}

void cmd_analyze(RunContext ctx) {
  check_data_manifest(ctx);
  const ExperimentConfig& c = ctx.config;
  const auto domains = c.data.resolved();
  std::vector<data::Dataset> sets;
  for (const auto& d : domains) sets.push_back(load_domain(ctx, d.name));
  const auto sigmas = c.analysis.resolved_sigmas();

  for (std::uint64_t seed : seeds_of(ctx)) {
    const fs::path dir = seed_dir(ctx, seed) / "analysis";
    const vit::ViT model = load_model(ctx, seed);
    ensure_dir(dir);
    auto log = make_logger(seed_dir(ctx, seed));
    const num::RngStream root(seed, "analysis");
    std::vector<std::string> written;
    auto emit_json = [&](const std::string& name, const json& j) {
      write_json(dir / name, j);
      written.push_back(name);
    };
    auto emit_text = [&](const std::string& name, const std::string& text) {
      write_text(dir / name, text);
      written.push_back(name);
    };

    std::string sharp_csv = "method,domain,sigma,sharpness\n";
    std::string cka_csv = "method,domain,cka\n";
    const std::size_t cka_n = std::min(
        c.analysis.cka_samples,
        std::min_element(sets.begin(), sets.end(), [](const auto& a, const auto& b) {
          return a.size() < b.size();
        })->size());
    const auto src_idx = sample_indices(sets[0].size(), cka_n, root.derive("cka", 0));
    const num::Tensor src_images = sets[0].stack(src_idx);

    for (std::size_t d = 0; d < sets.size(); ++d) {
      const std::string& name = domains[d].name;
      analysis::ProbeBatch batch;
      if (d == 0) {
        batch = analysis::source_batch(sets[0], src_idx, name);
      } else {
        auto ep_rng = root.derive("episode", d);
        const auto ep = fewshot::sample_episode(sets[d], c.eval.n_way, c.eval.k_shot,
                                                c.eval.q_queries, ep_rng);
        batch = analysis::episode_batch(sets[d], ep, name);
      }
      const auto report = analysis::attention_sharpness(model, batch, sigmas, c.analysis.draws,
                                                        root.derive("sharpness", d));
      emit_json("sharpness_" + name + ".json", report);
      for (std::size_t i = 0; i < sigmas.size(); ++i) {
        sharp_csv += c.method_name + "," + name + "," + num_str(sigmas[i]) + "," +
                     num_str(report.sharpness[i]) + "\n";
      }
      if (c.analysis.per_block) {
        for (std::size_t k = 0; k < model.config().depth; ++k) {
          const auto rb = analysis::attention_sharpness(model, batch, sigmas, c.analysis.draws,
                                                        root.derive("sharpness", d), {k});
          emit_json("sharpness_" + name + "_block" + std::to_string(k) + ".json", rb);
        }
      }
      log->info("seed {} {} sharpness at sigma {}: {:.6f}", seed, name, sigmas.back(),
                report.sharpness.back());

      analysis::CkaReport cka;
      cka.source_batch = domains[0].name;
      cka.target_batch = name;
      const num::Tensor tgt_images =
          d == 0 ? src_images
                 : sets[d].stack(sample_indices(sets[d].size(), cka_n, root.derive("cka", d)));
      cka.value = analysis::domain_similarity(model, src_images, tgt_images);
      emit_json("cka_" + name + ".json", cka);
      cka_csv += c.method_name + "," + name + "," + num_str(cka.value) + "\n";

      const auto heat_idx =
          sample_indices(sets[d].size(), c.analysis.heatmap_images, root.derive("heatmap", d));
      for (std::size_t i = 0; i < heat_idx.size(); ++i) {
        const auto map = analysis::export_attention_heatmap(model, sets[d].records[heat_idx[i]].image);
        emit_text("heatmap_" + name + "_" + std::to_string(i) + ".csv", analysis::heatmap_csv(map));
      }
    }
    emit_text("sharpness_long.csv", sharp_csv);
    emit_text("cka_long.csv", cka_csv);
    std::sort(written.begin(), written.end());
    write_json(dir / "manifest.json", {{"schema_version", kConfigSchemaVersion},
                                       {"method", c.method_name},
                                       {"seed", seed},
                                       {"files", written}});
  }
}

int run_cli(int argc, char** argv) {
  CLI::App app{"rlab: register experiments on synthetic cross-domain few-shot data"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed_override;
  auto add = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed-override", seed_override,
                    "gen-data: data seed; other commands: run only this seed");
    return sub;
  };
  auto* gen = add("gen-data", "generate the source and target datasets");
  auto* tr = add("train", "train one checkpoint per seed");
  auto* ev = add("eval", "few-shot evaluation on the target domains");
  auto* an = add("analyze", "sharpness, CKA and attention heatmaps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunContext ctx{load_config(config_path), out_dir, seed_override};
    if (gen->parsed()) cmd_gen_data(std::move(ctx));
    if (tr->parsed()) cmd_train(std::move(ctx));
    if (ev->parsed()) cmd_eval(std::move(ctx));
    if (an->parsed()) cmd_analyze(std::move(ctx));
  } catch (const ConfigError& e) {
    spdlog::error("invalid configuration: {}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}

}  // namespace rlab::cli
