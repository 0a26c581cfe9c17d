#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ragrec/align.h"
#include "ragrec/collarep.h"
#include "ragrec/corpus.h"
#include "ragrec/llm_client.h"
#include "ragrec/retrieval.h"
#include "ragrec/scorer.h"

namespace ragrec {

enum class HistoryMode { recent, retrieval, rerank };

std::string to_string(HistoryMode m);
HistoryMode history_mode_from_string(const std::string& name);

// Parsed experiment configuration. Relative paths resolve against the
// directory of the config file. See README for every key and its default.
struct ExperimentConfig {
  nlohmann::json raw;  // as given
  std::filesystem::path base_dir;
  std::filesystem::path work_dir;
  std::uint64_t seed = 0;

  // corpus
  std::filesystem::path interactions;
  std::filesystem::path items;
  std::filesystem::path users;  // optional
  std::vector<std::string> profile_fields;
  ColumnSchema columns;
  int k_core = 5;
  double label_threshold = 3.0;
  int min_history = 1;
  double split_ratio = 0.8;

  // textrep
  std::filesystem::path description_template;  // empty = built-in
  std::string model_tag = "default";
  std::string item_kind = "movie";
  bool use_descriptions = true;
  std::size_t text_workers = 4;

  LightGcnConfig colla;
  AlignConfig align;

  // retrieval
  EmbeddingVariant variant = EmbeddingVariant::concat_ssl;
  HistoryMode history_mode = HistoryMode::rerank;
  RerankConfig rerank;  // rerank.k is also the history length K

  // promptgen
  std::filesystem::path prompt_template;  // empty = built-in
  bool augment = true;

  // eval
  nlohmann::json scorer;  // {"kind": "planted", ...} or {"kind": "llm", ...}
  std::string eval_split = "test";  // "train", "test" or "all"
  double max_failure_ratio = 0.05;
  std::size_t eval_workers = 4;
  std::filesystem::path report;  // default: <work_dir>/report.json

  // sweep
  nlohmann::json sweep;

  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static ExperimentConfig load(const std::filesystem::path& path);

  // Copy with a different report path and one retrieval/promptgen setting
  // changed, e.g. with_setting("k", 10).
  ExperimentConfig with_setting(const std::string& key, const nlohmann::json& value) const;
};

// Per-stage record of inputs, outputs and config, kept in
// <work_dir>/manifest.json. A stage is fresh when its config hash and input
// hashes match the record and every recorded output still has its hash.
class Manifest {
 public:
  explicit Manifest(std::filesystem::path work_dir);

  bool fresh(const std::string& stage, const std::string& config_hash,
             const std::vector<std::filesystem::path>& inputs) const;
  void record(const std::string& stage, const std::string& config_hash,
              const std::vector<std::filesystem::path>& inputs,
              const std::vector<std::filesystem::path>& outputs);

 private:
  void save() const;

  std::filesystem::path work_dir_;
  nlohmann::json entries_;
};

// Hex FNV-1a of a file's bytes.
std::string file_hash(const std::filesystem::path& path);

struct StageRun {
  std::string stage;
  bool executed = false;  // false: reused from the manifest
};

struct SampleRecord {
  std::string user_id;
  std::string target_item_id;
  int label = 0;
  std::optional<double> prob;  // empty when scoring failed
  std::vector<std::string> history;
  std::string error;
};

struct EvalReport {
  double auc = 0.0;
  double log_loss = 0.0;
  double acc = 0.0;
  std::size_t n_samples = 0;  // scored samples
  std::size_t n_failed = 0;
  nlohmann::json config;  // retrieval and prompt settings, seed, scorer
  std::vector<SampleRecord> samples;

  nlohmann::json to_json() const;
};

// History selected for one sample, in prompt order, with the ranked
// channel lists it came from.
struct HistorySelection {
  std::vector<HistoryEntry> entries;
  std::vector<std::string> relevant;  // relevance channel, best first
  std::vector<double> relevant_scores;
  std::vector<std::string> recent;  // recency channel, most recent first
};

// Runs the stages of one experiment inside the config's work directory.
// Stages read their inputs from earlier stages' artifacts; a missing
// artifact raises StageError naming the stage that produces it.
class Pipeline {
 public:
  // With no client/scorer given, they are built from the "llm" and
  // "eval.scorer" sections.
  explicit Pipeline(ExperimentConfig config, std::shared_ptr<LlmClient> client = nullptr,
                    std::shared_ptr<Scorer> scorer = nullptr);

  const ExperimentConfig& config() const { return config_; }
  const std::vector<StageRun>& run_log() const { return log_; }
  std::filesystem::path path(const std::string& relative) const { return config_.work_dir / relative; }

  void prepare();
  void describe();  // fills the description cache only
  void embed_text();
  void train_colla();
  void train_align();
  void build_index(EmbeddingVariant variant);
  void build_index() { build_index(config_.variant); }

  // Every stage the configured variant and history mode need, in order.
  void build_all();

  std::vector<CtrSample> samples(const std::string& split) const;
  std::vector<ItemBasicInfo> items() const;

  // History for one sample under the configured mode. The index for the
  // configured variant must exist unless the mode is "recent".
  HistorySelection select_history(const CtrSample& sample) const;

  // Writes one JSON line per sample: user, target, ranked ids and scores.
  void write_retrievals(const std::filesystem::path& out, const std::string& split) const;

  // Prompt/label pairs of the split as instruction-tuning data.
  std::size_t export_instruction_data(const std::filesystem::path& out, const std::string& split) const;

  // Scores the eval split and writes the report.
  EvalReport evaluate();

 private:
  template <typename Fn>
  void run_stage(const std::string& stage, const nlohmann::json& stage_config,
                 const std::vector<std::filesystem::path>& inputs,
                 const std::vector<std::filesystem::path>& outputs, Fn&& body);
  void require(const std::string& stage, const std::vector<std::filesystem::path>& artifacts) const;
  LlmClient& client();
  Scorer& scorer();
  const EmbeddingStore& index_store() const;
  const ItemIndex& item_index() const;
  std::string prompt_for(const CtrSample& sample, const HistorySelection& h,
                         const std::unordered_map<std::string, std::string>& titles) const;

  ExperimentConfig config_;
  std::shared_ptr<LlmClient> client_;
  std::shared_ptr<Scorer> scorer_;
  Manifest manifest_;
  PromptTemplate prompt_template_;
  std::vector<StageRun> log_;
  mutable std::optional<EmbeddingStore> index_;
  mutable std::optional<ItemIndex> index_ids_;
};

// Builds what the config needs and evaluates it. Returns the report, which
// is also written to config.report.
EvalReport run_experiment(const ExperimentConfig& config, std::vector<StageRun>* run_log = nullptr,
                          std::shared_ptr<LlmClient> client = nullptr,
                          std::shared_ptr<Scorer> scorer = nullptr);

struct SweepPoint {
  std::string axis;
  nlohmann::json value;
  std::filesystem::path report_path;
  EvalReport report;
};

// One experiment per value on the axis ("variant", "k", "alpha" or
// "history_mode"), sharing upstream stages. Values come from the "sweep"
// config section, or the declared defaults. Reports land in
// <work_dir>/sweep/<axis>_<value>.json.
std::vector<SweepPoint> run_sweep(const ExperimentConfig& config, const std::string& axis,
                                  std::shared_ptr<LlmClient> client = nullptr,
                                  std::shared_ptr<Scorer> scorer = nullptr);

// Declared default values of a sweep axis.
nlohmann::json default_sweep_values(const std::string& axis);

// Scorer from the "eval.scorer" section; "llm" uses `client`.
std::shared_ptr<Scorer> make_scorer(const nlohmann::json& section, const std::filesystem::path& base_dir,
                                    const PromptTemplate& tmpl, LlmClient* client);

}  // namespace ragrec
