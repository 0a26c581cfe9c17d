#include "ragrec/pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "ragrec/error.h"
#include "ragrec/io.h"
#include "ragrec/metrics.h"
#include "ragrec/promptgen.h"
#include "ragrec/rng.h"
#include "ragrec/store.h"
#include "ragrec/synthetic.h"
#include "ragrec/textrep.h"

namespace ragrec {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string json_hash(const json& j) { return hex64(fnv1a64(j.dump())); }

std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) { return mix_seed(seed ^ fnv1a64(stage)); }

const json& section(const json& j, const char* name) {
  static const json empty = json::object();
  auto it = j.find(name);
  if (it == j.end()) return empty;
  if (!it->is_object()) throw ContractError(std::string("config section '") + name + "' must be an object");
  return *it;
}

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ContractError(std::string("unknown key '") + it.key() + "' in config section '" + where + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ContractError(std::string("config key '") + key + "': " + e.what());
  }
}

// Rows of `store` rearranged so that row r holds the item order[r].
EmbeddingStore reorder_rows(const EmbeddingStore& store, const std::vector<std::string>& ids,
                            const std::vector<std::string>& order, const std::string& what) {
  if (ids.size() != store.count()) throw ContractError(what + ": id list does not match store rows");
  if (ids == order) return store;
  ItemIndex index(ids);
  EmbeddingStore out(store.dim, store.template_hash);
  out.data.reserve(order.size() * store.dim);
  for (const auto& id : order) {
    auto row = index.find(id);
    if (!row) throw LookupError(what + ": no row for item '" + id + "'");
    out.append(store.row(*row));
  }
  return out;
}

std::string setting_label(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer() || v.is_number_unsigned()) return std::to_string(v.get<long long>());
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v.get<double>());
    return buf;
  }
  return v.dump();
}

}  // namespace

std::string to_string(HistoryMode m) {
  switch (m) {
    case HistoryMode::recent: return "recent";
    case HistoryMode::retrieval: return "retrieval";
    case HistoryMode::rerank: return "rerank";
  }
  return "?";
}

HistoryMode history_mode_from_string(const std::string& name) {
  if (name == "recent") return HistoryMode::recent;
  if (name == "retrieval") return HistoryMode::retrieval;
  if (name == "rerank") return HistoryMode::rerank;
  throw ContractError("unknown history mode '" + name + "' (recent, retrieval, rerank)");
}

std::string file_hash(const fs::path& path) { return hex64(fnv1a64(read_text_file(path))); }

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ContractError("config must be a JSON object");
  check_keys(j, "<top>", {"seed", "work_dir", "corpus", "llm", "textrep", "collarep", "align", "retrieval",
                          "promptgen", "eval", "sweep"});
  ExperimentConfig c;
  c.raw = j;
  c.base_dir = fs::absolute(base_dir).lexically_normal();
  auto resolve = [&](const std::string& p) -> fs::path {
    if (p.empty()) return {};
    fs::path x(p);
    return (x.is_absolute() ? x : c.base_dir / x).lexically_normal();
  };
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  c.work_dir = resolve(get_or<std::string>(j, "work_dir", "work"));

  const auto& corpus = section(j, "corpus");
  check_keys(corpus, "corpus", {"interactions", "items", "users", "profile_fields", "columns", "k_core",
                                "label_threshold", "min_history", "split_ratio"});
  if (!corpus.contains("interactions") || !corpus.contains("items")) {
    throw ContractError("config section 'corpus' needs 'interactions' and 'items'");
  }
  c.interactions = resolve(corpus.at("interactions").get<std::string>());
  c.items = resolve(corpus.at("items").get<std::string>());
  c.users = resolve(get_or<std::string>(corpus, "users", ""));
  c.profile_fields = get_or<std::vector<std::string>>(corpus, "profile_fields", {});
  const auto& cols = section(corpus, "columns");
  check_keys(cols, "corpus.columns", {"user", "item", "rating", "timestamp", "rating_min", "rating_max"});
  c.columns.user = get_or(cols, "user", c.columns.user);
  c.columns.item = get_or(cols, "item", c.columns.item);
  c.columns.rating = get_or(cols, "rating", c.columns.rating);
  c.columns.timestamp = get_or(cols, "timestamp", c.columns.timestamp);
  c.columns.rating_min = get_or(cols, "rating_min", c.columns.rating_min);
  c.columns.rating_max = get_or(cols, "rating_max", c.columns.rating_max);
  c.k_core = get_or(corpus, "k_core", c.k_core);
  c.label_threshold = get_or(corpus, "label_threshold", c.label_threshold);
  c.min_history = get_or(corpus, "min_history", c.min_history);
  c.split_ratio = get_or(corpus, "split_ratio", c.split_ratio);
  if (c.k_core < 0) throw ContractError("corpus.k_core must be >= 0");
  if (!(c.split_ratio >= 0.0 && c.split_ratio <= 1.0)) throw ContractError("corpus.split_ratio outside [0, 1]");

  const auto& llm = section(j, "llm");
  const auto& text = section(j, "textrep");
  check_keys(text, "textrep", {"template", "model_tag", "item_kind", "use_descriptions", "workers"});
  c.description_template = resolve(get_or<std::string>(text, "template", ""));
  c.model_tag = get_or<std::string>(text, "model_tag", get_or<std::string>(llm, "embed_model", "default"));
  c.item_kind = get_or(text, "item_kind", c.item_kind);
  c.use_descriptions = get_or(text, "use_descriptions", c.use_descriptions);
  c.text_workers = get_or(text, "workers", c.text_workers);

  const auto& colla = section(j, "collarep");
  check_keys(colla, "collarep", {"dim", "layers", "lr", "reg", "epochs", "neg_per_pos", "batch_size", "seed",
                                 "init_std", "optimizer"});
  c.colla.dim = get_or(colla, "dim", c.colla.dim);
  c.colla.layers = get_or(colla, "layers", c.colla.layers);
  c.colla.lr = get_or(colla, "lr", c.colla.lr);
  c.colla.reg = get_or(colla, "reg", c.colla.reg);
  c.colla.epochs = get_or(colla, "epochs", c.colla.epochs);
  c.colla.neg_per_pos = get_or(colla, "neg_per_pos", c.colla.neg_per_pos);
  c.colla.batch_size = get_or(colla, "batch_size", c.colla.batch_size);
  c.colla.seed = get_or(colla, "seed", stage_seed(c.seed, "collarep"));
  c.colla.init_std = get_or(colla, "init_std", c.colla.init_std);
  c.colla.optimizer = get_or(colla, "optimizer", c.colla.optimizer);
  c.colla.validate();

  const auto& align = section(j, "align");
  check_keys(align, "align", {"hidden", "tau", "batch_size", "lr", "epochs", "seed", "full_corpus_eval",
                              "activation", "optimizer"});
  c.align.hidden = get_or(align, "hidden", c.align.hidden);
  c.align.tau = get_or(align, "tau", c.align.tau);
  c.align.batch_size = get_or(align, "batch_size", c.align.batch_size);
  c.align.lr = get_or(align, "lr", c.align.lr);
  c.align.epochs = get_or(align, "epochs", c.align.epochs);
  c.align.seed = get_or(align, "seed", stage_seed(c.seed, "align"));
  c.align.full_corpus_eval = get_or(align, "full_corpus_eval", c.align.full_corpus_eval);
  c.align.activation = activation_from_string(get_or<std::string>(align, "activation", "relu"));
  c.align.optimizer = get_or(align, "optimizer", c.align.optimizer);
  c.align.validate();

  const auto& ret = section(j, "retrieval");
  check_keys(ret, "retrieval", {"variant", "history_mode", "k", "alpha", "beta"});
  c.variant = variant_from_string(get_or<std::string>(ret, "variant", "concat_ssl"));
  c.history_mode = history_mode_from_string(get_or<std::string>(ret, "history_mode", "rerank"));
  c.rerank.k = get_or(ret, "k", c.rerank.k);
  c.rerank.alpha = get_or(ret, "alpha", c.rerank.alpha);
  c.rerank.beta = get_or(ret, "beta", c.rerank.beta);
  c.rerank.validate();

  const auto& pg = section(j, "promptgen");
  check_keys(pg, "promptgen", {"template", "augment"});
  c.prompt_template = resolve(get_or<std::string>(pg, "template", ""));
  c.augment = get_or(pg, "augment", c.augment);

  const auto& ev = section(j, "eval");
  check_keys(ev, "eval", {"scorer", "split", "max_failure_ratio", "workers", "report"});
  c.scorer = get_or<json>(ev, "scorer", json{{"kind", "llm"}});
  c.eval_split = get_or(ev, "split", c.eval_split);
  if (c.eval_split != "train" && c.eval_split != "test" && c.eval_split != "all") {
    throw ContractError("eval.split must be train, test or all");
  }
  c.max_failure_ratio = get_or(ev, "max_failure_ratio", c.max_failure_ratio);
  c.eval_workers = get_or(ev, "workers", c.eval_workers);
  c.report = get_or<std::string>(ev, "report", "").empty() ? c.work_dir / "report.json"
                                                          : resolve(ev.at("report").get<std::string>());

  c.sweep = get_or<json>(j, "sweep", json::object());
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
  return from_json(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

ExperimentConfig ExperimentConfig::with_setting(const std::string& key, const json& value) const {
  json j = raw;
  if (key == "variant" || key == "history_mode" || key == "k" || key == "alpha" || key == "beta") {
    j["retrieval"][key] = value;
  } else if (key == "augment") {
    j["promptgen"]["augment"] = value;
  } else if (key == "report") {
    j["eval"]["report"] = value;
  } else {
    throw ContractError("unknown setting '" + key + "'");
  }
  return from_json(j, base_dir);
}

Manifest::Manifest(fs::path work_dir) : work_dir_(std::move(work_dir)), entries_(json::object()) {
  const auto path = work_dir_ / "manifest.json";
  if (fs::exists(path)) {
    try {
      entries_ = json::parse(read_text_file(path));
    } catch (const json::parse_error&) {
      spdlog::warn("ignoring unreadable manifest {}", path.string());
      entries_ = json::object();
    }
  }
}

namespace {

std::string manifest_key(const fs::path& work_dir, const fs::path& p) {
  auto rel = p.lexically_relative(work_dir);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return p.generic_string();
}

}  // namespace

bool Manifest::fresh(const std::string& stage, const std::string& config_hash,
                     const std::vector<fs::path>& inputs) const {
  auto it = entries_.find(stage);
  if (it == entries_.end() || it->value("config_hash", "") != config_hash) return false;
  const auto& in = (*it)["inputs"];
  if (in.size() != inputs.size()) return false;
  for (const auto& p : inputs) {
    const auto key = manifest_key(work_dir_, p);
    if (!in.contains(key) || !fs::exists(p) || in[key] != file_hash(p)) return false;
  }
  for (const auto& [key, hash] : (*it)["outputs"].items()) {
    fs::path p = fs::path(key).is_absolute() ? fs::path(key) : work_dir_ / key;
    if (!fs::exists(p) || hash != file_hash(p)) return false;
  }
  return true;
}

void Manifest::record(const std::string& stage, const std::string& config_hash,
                      const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  json entry{{"config_hash", config_hash}, {"inputs", json::object()}, {"outputs", json::object()}};
  for (const auto& p : inputs) entry["inputs"][manifest_key(work_dir_, p)] = file_hash(p);
  for (const auto& p : outputs) entry["outputs"][manifest_key(work_dir_, p)] = file_hash(p);
  entries_[stage] = std::move(entry);
  save();
}

void Manifest::save() const { write_file_atomic(work_dir_ / "manifest.json", entries_.dump(1) + "\n"); }

json EvalReport::to_json() const {
  json j;
  j["auc"] = auc;
  j["log_loss"] = log_loss;
  j["acc"] = acc;
  j["n_samples"] = n_samples;
  j["n_failed"] = n_failed;
  j["config"] = config;
  j["samples"] = json::array();
  for (const auto& s : samples) {
    json r{{"user_id", s.user_id}, {"target", s.target_item_id}, {"label", s.label}, {"history", s.history}};
    r["prob"] = s.prob ? json(*s.prob) : json(nullptr);
    if (!s.error.empty()) r["error"] = s.error;
    j["samples"].push_back(std::move(r));
  }
  return j;
}

std::shared_ptr<Scorer> make_scorer(const json& section, const fs::path& base_dir, const PromptTemplate& tmpl,
                                    LlmClient* client) {
  const auto kind = get_or<std::string>(section, "kind", "llm");
  if (kind == "planted") {
    if (!section.contains("planted")) throw ContractError("planted scorer needs 'planted' (path to planted.json)");
    fs::path p = section.at("planted").get<std::string>();
    if (!p.is_absolute()) p = base_dir / p;
    return std::make_shared<PlantedScorer>(load_planted_latent(p), tmpl, get_or(section, "gain", 4.0),
                                           get_or(section, "bias", 0.0));
  }
  if (kind == "llm") {
    if (!client) throw ContractError("llm scorer needs a client");
    return std::make_shared<LlmScorer>(*client, get_or<std::string>(section, "system_prompt", ""));
  }
  throw ContractError("eval.scorer.kind must be \"planted\" or \"llm\"");
}

Pipeline::Pipeline(ExperimentConfig config, std::shared_ptr<LlmClient> client, std::shared_ptr<Scorer> scorer)
    : config_(std::move(config)),
      client_(std::move(client)),
      scorer_(std::move(scorer)),
      manifest_(config_.work_dir),
      prompt_template_(config_.prompt_template.empty() ? PromptTemplate::builtin()
                                                       : PromptTemplate::load(config_.prompt_template)) {
  fs::create_directories(config_.work_dir);
}

LlmClient& Pipeline::client() {
  if (!client_) client_ = make_client(section(config_.raw, "llm"), stage_seed(config_.seed, "llm"));
  return *client_;
}

Scorer& Pipeline::scorer() {
  if (!scorer_) {
    const bool needs_client = get_or<std::string>(config_.scorer, "kind", "llm") == "llm";
    scorer_ = make_scorer(config_.scorer, config_.base_dir, prompt_template_, needs_client ? &client() : nullptr);
  }
  return *scorer_;
}

void Pipeline::require(const std::string& stage, const std::vector<fs::path>& artifacts) const {
  for (const auto& p : artifacts) {
    if (!fs::exists(p)) throw StageError(stage, "missing artifact " + p.string() + "; run that stage first");
  }
}

template <typename Fn>
void Pipeline::run_stage(const std::string& stage, const json& stage_config, const std::vector<fs::path>& inputs,
                         const std::vector<fs::path>& outputs, Fn&& body) {
  const auto hash = json_hash(stage_config);
  if (manifest_.fresh(stage, hash, inputs)) {
    spdlog::info("stage {}: up to date", stage);
    log_.push_back({stage, false});
    return;
  }
  spdlog::info("stage {}: running", stage);
  try {
    body();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e.what());
  }
  manifest_.record(stage, hash, inputs, outputs);
  log_.push_back({stage, true});
}

void Pipeline::prepare() {
  std::vector<fs::path> inputs{config_.interactions, config_.items};
  if (!config_.users.empty()) inputs.push_back(config_.users);
  for (const auto& p : inputs) {
    if (!fs::exists(p)) throw StageError("prepare", "missing input " + p.string());
  }
  const auto& c = config_;
  json cfg{{"k_core", c.k_core},
           {"label_threshold", c.label_threshold},
           {"min_history", c.min_history},
           {"split_ratio", c.split_ratio},
           {"profile_fields", c.profile_fields},
           {"columns", {c.columns.user, c.columns.item, c.columns.rating, c.columns.timestamp,
                        c.columns.rating_min, c.columns.rating_max}},
           {"seed", c.seed}};
  const std::vector<fs::path> outputs{path("corpus/interactions.tsv"), path("corpus/items.jsonl"),
                                      path("corpus/samples_train.jsonl"), path("corpus/samples_test.jsonl"),
                                      path("corpus/stats.json")};
  run_stage("prepare", cfg, inputs, outputs, [&] {
    auto raw = load_interactions(c.interactions, c.columns);
    const auto meta = load_item_metadata(c.items);
    std::unordered_map<std::string, const ItemBasicInfo*> by_id;
    for (const auto& m : meta) by_id.emplace(m.item_id, &m);
    std::vector<Interaction> kept;
    kept.reserve(raw.size());
    for (const auto& x : raw.interactions()) {
      if (by_id.count(x.item_id)) kept.push_back(x);
    }
    if (kept.size() < raw.size()) {
      spdlog::warn("dropped {} interactions with items lacking metadata", raw.size() - kept.size());
    }
    auto log = InteractionLog::from_interactions(std::move(kept));
    FilterStats stats;
    if (c.k_core > 0) log = k_core_filter(log, c.k_core, &stats);
    if (log.empty()) throw Error("no interactions survive the " + std::to_string(c.k_core) + "-core filter");

    std::vector<ItemBasicInfo> items;
    items.reserve(log.n_items());
    for (const auto& id : log.item_keys()) items.push_back(*by_id.at(id));

    std::unordered_map<std::string, ProfileFields> profiles;
    if (!c.users.empty()) profiles = load_user_profiles(c.users, c.profile_fields);
    auto samples = build_samples(log, SampleOptions{c.label_threshold, c.min_history, &profiles});
    auto [train, test] = split_samples(samples, SplitPolicy{c.split_ratio, stage_seed(c.seed, "split")});

    write_interactions(path("corpus/interactions.tsv"), log);
    write_item_metadata(path("corpus/items.jsonl"), items);
    write_samples(path("corpus/samples_train.jsonl"), train);
    write_samples(path("corpus/samples_test.jsonl"), test);
    json st{{"users", log.n_users()},
            {"items", log.n_items()},
            {"interactions", log.size()},
            {"dropped_users", stats.dropped_users},
            {"dropped_items", stats.dropped_items},
            {"dropped_interactions", stats.dropped_interactions},
            {"filter_rounds", stats.rounds},
            {"train_samples", train.size()},
            {"test_samples", test.size()}};
    write_file_atomic(path("corpus/stats.json"), st.dump(1) + "\n");
    spdlog::info("corpus: {} users, {} items, {} interactions, {} samples", log.n_users(), log.n_items(),
                 log.size(), samples.size());
  });
}

std::vector<ItemBasicInfo> Pipeline::items() const {
  require("prepare", {path("corpus/items.jsonl")});
  return load_item_metadata(path("corpus/items.jsonl"));
}

std::vector<CtrSample> Pipeline::samples(const std::string& split) const {
  if (split == "all") {
    auto a = samples("train");
    auto b = samples("test");
    a.insert(a.end(), std::make_move_iterator(b.begin()), std::make_move_iterator(b.end()));
    return a;
  }
  if (split != "train" && split != "test") throw ContractError("split must be train, test or all");
  const auto p = path("corpus/samples_" + split + ".jsonl");
  require("prepare", {p});
  return read_samples(p);
}

namespace {

DescriptionTemplate description_template(const ExperimentConfig& c) {
  return c.description_template.empty() ? DescriptionTemplate::builtin()
                                        : DescriptionTemplate::load(c.description_template);
}

}  // namespace

void Pipeline::describe() {
  const auto all = items();
  const auto tmpl = description_template(config_);
  DescriptionCache cache(path("text/descriptions.jsonl"), tmpl.hash());
  auto& llm = client();
  const auto before = llm.calls();
  std::vector<std::string> errors(all.size());
  parallel_for(all.size(), config_.text_workers, [&](std::size_t i) {
    try {
      describe_item(all[i], tmpl, &llm, cache, config_.item_kind);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  std::size_t failed = 0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) {
      if (failed++ == 0) spdlog::warn("describe {}: {}", all[i].item_id, errors[i]);
    }
  }
  spdlog::info("describe: {} items, {} calls, {} failed", all.size(), llm.calls() - before, failed);
  log_.push_back({"describe", true});
  if (failed) throw StageError("describe", std::to_string(failed) + " items could not be described");
}

void Pipeline::embed_text() {
  const auto items_path = path("corpus/items.jsonl");
  require("prepare", {items_path});
  std::vector<fs::path> inputs{items_path};
  if (!config_.description_template.empty()) inputs.push_back(config_.description_template);
  json cfg{{"llm", section(config_.raw, "llm")},
           {"model_tag", config_.model_tag},
           {"item_kind", config_.item_kind},
           {"use_descriptions", config_.use_descriptions},
           {"seed", config_.seed}};
  std::vector<fs::path> outputs;
  for (const char* name : {"title", "desc", "text"}) {
    outputs.push_back(path(std::string("text/") + name + ".rrec"));
    outputs.push_back(path(std::string("text/") + name + ".ids"));
  }
  run_stage("embed-text", cfg, inputs, outputs, [&] {
    const auto all = items();
    const auto tmpl = description_template(config_);
    DescriptionCache cache(path("text/descriptions.jsonl"), tmpl.hash());
    TextStoreOptions o;
    o.dir = path("text");
    o.model_tag = config_.model_tag;
    o.item_kind = config_.item_kind;
    o.use_descriptions = config_.use_descriptions;
    o.workers = config_.text_workers;
    auto stores = build_text_stores(all, client(), tmpl, cache, o);
    spdlog::info("text stores: {} items, dim {}, {} client calls{}", stores.text.count(), stores.text.dim,
                 stores.client_calls, stores.reused ? " (reused)" : "");
  });
}

void Pipeline::train_colla() {
  const auto log_path = path("corpus/interactions.tsv");
  require("prepare", {log_path});
  const auto& k = config_.colla;
  json cfg{{"dim", k.dim},         {"layers", k.layers},   {"lr", k.lr},
           {"reg", k.reg},         {"epochs", k.epochs},   {"neg_per_pos", k.neg_per_pos},
           {"batch", k.batch_size}, {"seed", k.seed},       {"init_std", k.init_std},
           {"optimizer", k.optimizer}};
  const std::vector<fs::path> outputs{path("colla/items.rrec"), path("colla/items.ids"), path("colla/users.rrec"),
                                      path("colla/users.ids"), path("colla/train.json")};
  run_stage("train-colla", cfg, {log_path}, outputs, [&] {
    const auto log = load_interactions(log_path);
    const auto emb = train_lightgcn(log, k);
    write_store(path("colla/items.rrec"), matrix_to_store(emb.items));
    write_row_ids(path("colla/items.ids"), log.item_keys());
    write_store(path("colla/users.rrec"), matrix_to_store(emb.users));
    write_row_ids(path("colla/users.ids"), log.user_keys());
    json meta{{"epoch_loss", emb.epoch_loss}, {"epochs", emb.epochs}, {"layers", emb.layers}};
    write_file_atomic(path("colla/train.json"), meta.dump(1) + "\n");
    if (!emb.epoch_loss.empty()) {
      spdlog::info("lightgcn: loss {:.5f} -> {:.5f}", emb.epoch_loss.front(), emb.epoch_loss.back());
    }
  });
}

void Pipeline::train_align() {
  const auto text_path = path("text/text.rrec");
  const auto colla_path = path("colla/items.rrec");
  require("embed-text", {text_path, path("text/text.ids")});
  require("train-colla", {colla_path, path("colla/items.ids")});
  const std::vector<fs::path> outputs{path("align/projector.bin"), path("align/ssl.rrec"), path("align/ssl.ids"),
                                      path("align/train.json")};
  run_stage("train-align", config_.align.to_json(), {text_path, path("text/text.ids"), colla_path,
                                                     path("colla/items.ids")},
            outputs, [&] {
              const auto ids = read_row_ids(path("colla/items.ids"));
              const auto text = reorder_rows(read_store(text_path), read_row_ids(path("text/text.ids")), ids,
                                             "text store");
              const auto colla = read_store(colla_path);
              auto result = train_projector(store_to_matrix(text), store_to_matrix(colla), config_.align);
              save_projector(path("align/projector.bin"), result.projector, config_.align.to_json());
              write_store(path("align/ssl.rrec"), matrix_to_store(result.aligned));
              write_row_ids(path("align/ssl.ids"), ids);
              json meta{{"initial_loss", result.initial_loss},
                        {"final_loss", result.final_loss},
                        {"epoch_loss", result.epoch_loss},
                        {"full_epoch_loss", result.full_epoch_loss}};
              write_file_atomic(path("align/train.json"), meta.dump(1) + "\n");
              spdlog::info("alignment: full-corpus loss {:.5f} -> {:.5f}", result.initial_loss, result.final_loss);
            });
}

void Pipeline::build_index(EmbeddingVariant variant) {
  const bool use_text = variant != EmbeddingVariant::id_only;
  const bool use_colla = variant != EmbeddingVariant::text_only;
  const bool use_ssl = variant == EmbeddingVariant::concat_ssl;
  const auto items_path = path("corpus/items.jsonl");
  require("prepare", {items_path});
  std::vector<fs::path> inputs{items_path};
  if (use_text) {
    require("embed-text", {path("text/text.rrec"), path("text/text.ids")});
    inputs.push_back(path("text/text.rrec"));
    inputs.push_back(path("text/text.ids"));
  }
  if (use_colla) {
    require("train-colla", {path("colla/items.rrec"), path("colla/items.ids")});
    inputs.push_back(path("colla/items.rrec"));
    inputs.push_back(path("colla/items.ids"));
  }
  if (use_ssl) {
    require("train-align", {path("align/ssl.rrec"), path("align/ssl.ids")});
    inputs.push_back(path("align/ssl.rrec"));
    inputs.push_back(path("align/ssl.ids"));
  }
  const auto name = to_string(variant);
  const auto out = path("index/" + name + ".rrec");
  const auto out_ids = path("index/" + name + ".ids");
  run_stage("build-index:" + name, json{{"variant", name}}, inputs, {out, out_ids}, [&] {
    std::vector<std::string> order;
    for (const auto& it : items()) order.push_back(it.item_id);
    auto load = [&](const std::string& stem, const std::string& what) {
      return reorder_rows(read_store(path(stem + ".rrec")), read_row_ids(path(stem + ".ids")), order, what);
    };
    EmbeddingStore text, colla, ssl;
    if (use_text) text = load("text/text", "text store");
    if (use_colla) colla = load("colla/items", "collaborative store");
    if (use_ssl) ssl = load("align/ssl", "aligned store");
    auto mixed = build_mixed_store(variant, text, colla, use_ssl ? &ssl : nullptr);
    write_store(out, mixed);
    write_row_ids(out_ids, order);
  });
  if (variant == config_.variant) {
    index_.reset();
    index_ids_.reset();
  }
}

void Pipeline::build_all() {
  prepare();
  if (config_.history_mode == HistoryMode::recent) return;
  const auto v = config_.variant;
  if (v != EmbeddingVariant::id_only) embed_text();
  if (v != EmbeddingVariant::text_only) train_colla();
  if (v == EmbeddingVariant::concat_ssl) train_align();
  build_index(v);
}

const EmbeddingStore& Pipeline::index_store() const {
  if (!index_) {
    const auto name = to_string(config_.variant);
    const auto p = path("index/" + name + ".rrec");
    require("build-index", {p, path("index/" + name + ".ids")});
    index_ = read_store(p);
    index_ids_ = ItemIndex(read_row_ids(path("index/" + name + ".ids")));
    if (index_ids_->size() != index_->count()) throw StageError("build-index", "index ids do not match rows");
  }
  return *index_;
}

const ItemIndex& Pipeline::item_index() const {
  index_store();
  return *index_ids_;
}

HistorySelection Pipeline::select_history(const CtrSample& sample) const {
  const std::size_t k = config_.rerank.k;
  // Latest occurrence of each item, most recent first; the target is left out.
  std::vector<const HistoryEntry*> latest;
  std::unordered_map<std::string, const HistoryEntry*> by_id;
  for (auto it = sample.history.rbegin(); it != sample.history.rend(); ++it) {
    if (it->item_id == sample.target_item_id) continue;
    if (by_id.emplace(it->item_id, &*it).second) latest.push_back(&*it);
  }
  HistorySelection out;
  for (std::size_t i = 0; i < latest.size() && i < k; ++i) out.recent.push_back(latest[i]->item_id);

  std::vector<std::string> chosen;
  if (config_.history_mode == HistoryMode::recent) {
    chosen = out.recent;
  } else {
    std::vector<std::string> candidates;
    candidates.reserve(latest.size());
    for (const auto* h : latest) candidates.push_back(h->item_id);
    out.relevant = retrieve_ids(index_store(), item_index(), sample.target_item_id, candidates, k,
                                &out.relevant_scores);
    chosen = config_.history_mode == HistoryMode::retrieval ? out.relevant
                                                            : rerank(out.relevant, out.recent, config_.rerank);
  }
  out.entries.reserve(chosen.size());
  for (const auto& id : chosen) out.entries.push_back(*by_id.at(id));
  if (config_.augment) out.entries = augment_chronological(std::move(out.entries));
  return out;
}

std::string Pipeline::prompt_for(const CtrSample& sample, const HistorySelection& h,
                                 const std::unordered_map<std::string, std::string>& titles) const {
  return build_prompt(
      sample, h.entries,
      [&](const std::string& id) -> std::optional<std::string> {
        auto it = titles.find(id);
        if (it == titles.end()) return std::nullopt;
        return it->second;
      },
      prompt_template_, config_.label_threshold);
}

void Pipeline::write_retrievals(const fs::path& out, const std::string& split) const {
  const auto all = samples(split);
  std::string lines;
  for (const auto& s : all) {
    const auto h = select_history(s);
    json selected = json::array();
    for (const auto& e : h.entries) selected.push_back(e.item_id);
    json j{{"user_id", s.user_id},
           {"target_id", s.target_item_id},
           {"ranked", h.relevant},
           {"scores", h.relevant_scores},
           {"recent", h.recent},
           {"selected", selected}};
    lines += j.dump();
    lines += '\n';
  }
  write_file_atomic(out, lines);
}

std::size_t Pipeline::export_instruction_data(const fs::path& out, const std::string& split) const {
  const auto all = samples(split);
  std::unordered_map<std::string, std::string> titles;
  for (const auto& it : items()) titles.emplace(it.item_id, it.title);
  std::vector<InstructionExample> examples;
  examples.reserve(all.size());
  for (const auto& s : all) {
    examples.push_back({prompt_for(s, select_history(s), titles), s.label ? "Yes" : "No"});
  }
  write_instruction_data(out, examples);
  return examples.size();
}

EvalReport Pipeline::evaluate() {
  const auto all = samples(config_.eval_split);
  if (all.empty()) throw StageError("eval", "no samples in split '" + config_.eval_split + "'");
  std::unordered_map<std::string, std::string> titles;
  for (const auto& it : items()) titles.emplace(it.item_id, it.title);

  EvalReport report;
  report.samples.resize(all.size());
  std::vector<std::string> prompts(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto h = select_history(all[i]);
    prompts[i] = prompt_for(all[i], h, titles);
    auto& rec = report.samples[i];
    rec.user_id = all[i].user_id;
    rec.target_item_id = all[i].target_item_id;
    rec.label = all[i].label;
    for (const auto& e : h.entries) rec.history.push_back(e.item_id);
  }

  auto& sc = scorer();
  parallel_for(all.size(), config_.eval_workers, [&](std::size_t i) {
    auto& rec = report.samples[i];
    try {
      const double p = sc.score(prompts[i]);
      if (!(p >= 0.0 && p <= 1.0)) throw ContentError("scorer returned " + std::to_string(p));
      rec.prob = p;
    } catch (const Error& e) {
      rec.error = e.what();
    }
  });

  std::vector<int> labels;
  std::vector<double> probs;
  for (const auto& rec : report.samples) {
    if (rec.prob) {
      labels.push_back(rec.label);
      probs.push_back(*rec.prob);
    } else {
      ++report.n_failed;
    }
  }
  const double failure_ratio = static_cast<double>(report.n_failed) / static_cast<double>(all.size());
  if (report.n_failed > 0) {
    const auto first = std::find_if(report.samples.begin(), report.samples.end(),
                                    [](const SampleRecord& r) { return !r.prob; });
    spdlog::warn("{} of {} samples failed to score; first: {}", report.n_failed, all.size(), first->error);
  }
  if (failure_ratio > config_.max_failure_ratio) {
    throw StageError("eval", std::to_string(report.n_failed) + " of " + std::to_string(all.size()) +
                                 " samples failed to score, above the allowed ratio " +
                                 std::to_string(config_.max_failure_ratio));
  }
  report.n_samples = labels.size();
  try {
    report.auc = auc(labels, probs);
    report.log_loss = log_loss(labels, probs);
    report.acc = accuracy(labels, probs);
  } catch (const MetricError& e) {
    throw StageError("eval", e.what());
  }
  report.config = {{"variant", to_string(config_.variant)},
                   {"history_mode", to_string(config_.history_mode)},
                   {"k", config_.rerank.k},
                   {"alpha", config_.rerank.alpha},
                   {"beta", config_.rerank.beta},
                   {"augment", config_.augment},
                   {"seed", config_.seed},
                   {"split", config_.eval_split},
                   {"scorer", get_or<std::string>(config_.scorer, "kind", "llm")}};
  write_file_atomic(config_.report, report.to_json().dump(2) + "\n");
  log_.push_back({"eval", true});
  spdlog::info("eval [{} {} K={}]: auc {:.4f} log_loss {:.4f} acc {:.4f} over {} samples",
               to_string(config_.variant), to_string(config_.history_mode), config_.rerank.k, report.auc,
               report.log_loss, report.acc, report.n_samples);
  return report;
}

EvalReport run_experiment(const ExperimentConfig& config, std::vector<StageRun>* run_log,
                          std::shared_ptr<LlmClient> client, std::shared_ptr<Scorer> scorer) {
  Pipeline p(config, std::move(client), std::move(scorer));
  p.build_all();
  auto report = p.evaluate();
  if (run_log) *run_log = p.run_log();
  return report;
}

json default_sweep_values(const std::string& axis) {
  if (axis == "variant") return json{"text_only", "id_only", "concat", "concat_ssl"};
  if (axis == "k") return json{5, 10, 15, 20, 25, 30};
  if (axis == "alpha") return json{0.5, 2.0 / 3.0, 0.8};
  if (axis == "history_mode") return json{"recent", "retrieval", "rerank"};
  throw ContractError("unknown sweep axis '" + axis + "' (variant, k, alpha, history_mode)");
}

std::vector<SweepPoint> run_sweep(const ExperimentConfig& config, const std::string& axis,
                                  std::shared_ptr<LlmClient> client, std::shared_ptr<Scorer> scorer) {
  const auto values = config.sweep.contains(axis) ? config.sweep.at(axis) : default_sweep_values(axis);
  if (!values.is_array() || values.empty()) throw ContractError("sweep." + axis + " must be a non-empty list");
  default_sweep_values(axis);  // validates the axis name
  if (!client) client = make_client(section(config.raw, "llm"), stage_seed(config.seed, "llm"));
  std::vector<SweepPoint> out;
  for (const auto& v : values) {
    auto cfg = config.with_setting(axis, v);
    const auto report_path = config.work_dir / "sweep" / (axis + "_" + setting_label(v) + ".json");
    cfg = cfg.with_setting("report", report_path.string());
    auto report = run_experiment(cfg, nullptr, client, scorer);
    out.push_back({axis, v, report_path, std::move(report)});
  }
  return out;
}

}  // namespace ragrec
