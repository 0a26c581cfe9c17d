// Command-line front end: one subcommand per pipeline stage plus eval/sweep.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ragrec/error.h"
#include "ragrec/io.h"
#include "ragrec/pipeline.h"
#include "ragrec/synthetic.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ragrec;

namespace {

struct Overrides {
  std::string variant;
  std::string history_mode;
  int k = 0;
  double alpha = 0.0;
  std::string report;
};

ExperimentConfig load_with(const std::string& path, const Overrides& o) {
  auto cfg = ExperimentConfig::load(path);
  if (!o.variant.empty()) cfg = cfg.with_setting("variant", o.variant);
  if (!o.history_mode.empty()) cfg = cfg.with_setting("history_mode", o.history_mode);
  if (o.k > 0) cfg = cfg.with_setting("k", o.k);
  if (o.alpha > 0.0) cfg = cfg.with_setting("alpha", o.alpha);
  if (!o.report.empty()) cfg = cfg.with_setting("report", fs::absolute(o.report).string());
  return cfg;
}

json summary(const EvalReport& r) {
  return json{{"auc", r.auc}, {"log_loss", r.log_loss}, {"acc", r.acc}, {"n_samples", r.n_samples},
              {"n_failed", r.n_failed}, {"config", r.config}};
}

json synthetic_experiment(std::uint64_t seed) {
  return json{
      {"seed", seed},
      {"work_dir", "work"},
      {"corpus",
       {{"interactions", "interactions.tsv"},
        {"items", "items.jsonl"},
        {"users", "users.jsonl"},
        {"profile_fields", {"age_group", "occupation"}},
        {"k_core", 5}}},
      {"llm", {{"kind", "mock"}, {"embed_dim", 64}}},
      {"textrep", {{"model_tag", "mock"}}},
      {"collarep", {{"epochs", 30}, {"optimizer", "adam"}, {"lr", 0.01}, {"batch_size", 1024}}},
      {"align", {{"epochs", 10}, {"batch_size", 64}}},
      {"retrieval", {{"variant", "concat_ssl"}, {"history_mode", "rerank"}, {"k", 30}}},
      {"eval", {{"scorer", {{"kind", "planted"}, {"planted", "planted.json"}}}}}};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("ragrec"));

  CLI::App app{"Retrieval-augmented LLM recommendation pipeline"};
  app.require_subcommand(1);
  std::string level = "info";
  app.add_option("--log-level", level, "trace, debug, info, warn, error or off");

  std::string config_path;
  Overrides ov;
  std::string split;
  std::string out;
  std::string axis;

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    return sub;
  };
  auto with_overrides = [&](CLI::App* sub) {
    sub->add_option("--variant", ov.variant, "text_only, id_only, concat or concat_ssl");
    sub->add_option("--history-mode", ov.history_mode, "recent, retrieval or rerank");
    sub->add_option("--k", ov.k, "history length K");
    sub->add_option("--alpha", ov.alpha, "relevance channel weight");
  };

  auto* prepare = with_config(app.add_subcommand("prepare", "load, k-core filter and split the corpus"));
  auto* describe = with_config(app.add_subcommand("describe", "generate item descriptions into the cache"));
  auto* embed = with_config(app.add_subcommand("embed-text", "build the title/description/text stores"));
  auto* colla = with_config(app.add_subcommand("train-colla", "train LightGCN item embeddings"));
  auto* align = with_config(app.add_subcommand("train-align", "train the text-to-collaborative projector"));
  auto* index = with_config(app.add_subcommand("build-index", "mix channels into the retrieval index"));
  std::string index_variant;
  index->add_option("--variant", index_variant, "variant to build, or \"all\" (default: configured)");

  auto* retrieve = with_config(app.add_subcommand("retrieve", "write relevance-ranked histories (JSON lines)"));
  auto* rerank_cmd = with_config(app.add_subcommand("rerank", "write reranked histories (JSON lines)"));
  for (auto* sub : {retrieve, rerank_cmd}) {
    with_overrides(sub);
    sub->add_option("--split", split, "train, test or all")->default_val("test");
    sub->add_option("-o,--out", out, "output path (default: under the work dir)");
  }

  auto* export_it = with_config(app.add_subcommand("export-it-data", "write instruction-tuning prompt/answer pairs"));
  with_overrides(export_it);
  export_it->add_option("--split", split, "train, test or all")->default_val("train");
  export_it->add_option("-o,--out", out, "output path (default: <work_dir>/it_data_<split>.jsonl)");

  auto* eval = with_config(app.add_subcommand("eval", "run every needed stage and score the eval split"));
  with_overrides(eval);
  eval->add_option("--report", ov.report, "report path (default: from config)");

  auto* sweep = with_config(app.add_subcommand("sweep", "one report per value of an axis"));
  sweep->add_option("--axis", axis, "variant, k, alpha or history_mode")->required();

  auto* gen = app.add_subcommand("gen-synthetic", "write a planted synthetic corpus and an experiment config");
  SyntheticConfig syn;
  std::string gen_dir;
  gen->add_option("-o,--out", gen_dir, "output directory")->required();
  gen->add_option("--users", syn.n_users);
  gen->add_option("--items", syn.n_items);
  gen->add_option("--text-groups", syn.text_groups);
  gen->add_option("--colla-groups", syn.colla_groups);
  gen->add_option("--per-user", syn.interactions_per_user, "mean interactions per user");
  gen->add_option("--in-group", syn.in_group_prob);
  gen->add_option("--skew", syn.popularity_skew);
  gen->add_option("--seed", syn.seed);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(level));

  try {
    if (gen->parsed()) {
      auto data = generate_synthetic(syn);
      write_synthetic(data, gen_dir);
      write_file_atomic(fs::path(gen_dir) / "experiment.json", synthetic_experiment(syn.seed).dump(2) + "\n");
      std::cout << json{{"dir", gen_dir}, {"interactions", data.interactions.size()}, {"items", data.items.size()}}
                << "\n";
      return 0;
    }

    if (eval->parsed()) {
      const auto report = run_experiment(load_with(config_path, ov));
      std::cout << summary(report).dump(2) << "\n";
      return 0;
    }
    if (sweep->parsed()) {
      json rows = json::array();
      for (const auto& p : run_sweep(ExperimentConfig::load(config_path), axis)) {
        auto s = summary(p.report);
        s["value"] = p.value;
        s["report"] = p.report_path.string();
        rows.push_back(std::move(s));
      }
      std::cout << rows.dump(2) << "\n";
      return 0;
    }

    if (retrieve->parsed() || rerank_cmd->parsed()) {
      if (ov.history_mode.empty()) ov.history_mode = retrieve->parsed() ? "retrieval" : "rerank";
    }
    Pipeline p(load_with(config_path, ov));
    if (prepare->parsed()) p.prepare();
    if (describe->parsed()) p.describe();
    if (embed->parsed()) p.embed_text();
    if (colla->parsed()) p.train_colla();
    if (align->parsed()) p.train_align();
    if (index->parsed()) {
      if (index_variant == "all") {
        for (auto v : all_variants()) p.build_index(v);
      } else {
        p.build_index(index_variant.empty() ? p.config().variant : variant_from_string(index_variant));
      }
    }
    if (retrieve->parsed() || rerank_cmd->parsed()) {
      const fs::path dest = out.empty() ? p.path(std::string(retrieve->parsed() ? "retrieval" : "rerank") + "/" +
                                                 split + ".jsonl")
                                        : fs::path(out);
      p.write_retrievals(dest, split);
      std::cout << dest.string() << "\n";
    }
    if (export_it->parsed()) {
      const fs::path dest = out.empty() ? p.path("it_data_" + split + ".jsonl") : fs::path(out);
      const auto n = p.export_instruction_data(dest, split);
      std::cout << json{{"path", dest.string()}, {"examples", n}} << "\n";
    }
    for (const auto& r : p.run_log()) {
      spdlog::info("{}: {}", r.stage, r.executed ? "ran" : "up to date");
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return 1;
  }
  return 0;
}
