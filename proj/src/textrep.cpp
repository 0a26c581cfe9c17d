#include "ragrec/textrep.h"

#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ragrec/error.h"
#include "ragrec/io.h"
#include "ragrec/placeholder.h"
#include "ragrec/rng.h"

namespace ragrec {

using nlohmann::json;

namespace {

constexpr const char* kBuiltinTemplate =
    "You are a knowledgeable assistant that writes concise, factual catalogue descriptions of "
    "items.\n"
    "---\n"
    "Write a detailed description of the item below. Cover its key attributes, what it is about, "
    "and who would enjoy it. Answer with the description only.\n"
    "Title: {title}\n"
    "{attributes}\n";

std::string trim_newlines(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

}  // namespace

TextEmbedding assemble_text_embedding(std::span<const float> title, std::span<const float> desc) {
  if (title.size() != desc.size()) {
    throw ContractError("title and description embeddings differ in dimension (" +
                        std::to_string(title.size()) + " vs " + std::to_string(desc.size()) + ")");
  }
  for (float v : title) {
    if (!std::isfinite(v)) throw ContractError("non-finite title embedding");
  }
  for (float v : desc) {
    if (!std::isfinite(v)) throw ContractError("non-finite description embedding");
  }
  TextEmbedding e;
  e.title.assign(title.begin(), title.end());
  e.desc.assign(desc.begin(), desc.end());
  e.text.reserve(title.size() * 2);
  e.text.insert(e.text.end(), title.begin(), title.end());
  e.text.insert(e.text.end(), desc.begin(), desc.end());
  return e;
}

DescriptionTemplate DescriptionTemplate::builtin() { return from_text(kBuiltinTemplate); }

DescriptionTemplate DescriptionTemplate::from_text(const std::string& text) {
  DescriptionTemplate t;
  auto sep = text.find("\n---\n");
  if (sep == std::string::npos) {
    t.body = trim_newlines(text);
  } else {
    t.system = trim_newlines(text.substr(0, sep));
    t.body = trim_newlines(text.substr(sep + 5));
  }
  if (t.body.empty()) throw ContractError("description template has an empty body");
  return t;
}

DescriptionTemplate DescriptionTemplate::load(const std::filesystem::path& path) {
  return from_text(read_text_file(path));
}

std::uint64_t DescriptionTemplate::hash() const {
  return fnv1a64(body, fnv1a64(system) ^ 0x5eedULL);
}

std::string DescriptionTemplate::render(const ItemBasicInfo& info) const {
  return fill_placeholders(body, [&](std::string_view name) -> std::optional<std::string> {
    if (name == "title") return info.title;
    if (name == "item_id") return info.item_id;
    if (name == "attributes") {
      std::string lines;
      for (const auto& [k, v] : info.attributes) {
        if (!lines.empty()) lines += '\n';
        lines += k + ": " + v;
      }
      return lines;
    }
    if (name.starts_with("attr:")) {
      auto it = info.attributes.find(std::string(name.substr(5)));
      if (it == info.attributes.end()) {
        throw ContractError("item " + info.item_id + " lacks attribute '" +
                            std::string(name.substr(5)) + "' required by the template");
      }
      return it->second;
    }
    return std::nullopt;
  });
}

std::string fixed_template_text(const ItemBasicInfo& info, const std::string& item_kind) {
  return "Here is a " + item_kind + ": " + info.title;
}

DescriptionCache::DescriptionCache(std::filesystem::path path, std::uint64_t template_hash)
    : path_(std::move(path)), hash_(template_hash) {
  if (path_.empty() || !std::filesystem::exists(path_)) return;
  std::ifstream in(path_);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) {
      throw ParseError(path_.string() + ": invalid cache entry", line_no);
    }
    if (obj.value("template_hash", std::uint64_t{0}) != hash_) continue;
    entries_[obj.at("item_id").get<std::string>()] = obj.at("description").get<std::string>();
  }
}

std::optional<std::string> DescriptionCache::lookup(const std::string& item_id) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(item_id);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void DescriptionCache::insert(const std::string& item_id, const std::string& description) {
  std::lock_guard lock(mu_);
  entries_[item_id] = description;
  if (path_.empty()) return;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app);
  out << json{{"item_id", item_id}, {"description", description}, {"template_hash", hash_}}.dump()
      << '\n';
}

std::size_t DescriptionCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::string describe_item(const ItemBasicInfo& info, const DescriptionTemplate& tmpl,
                          LlmClient* client, DescriptionCache& cache,
                          const std::string& item_kind) {
  if (info.title.empty()) throw ContractError("item " + info.item_id + " has an empty title");
  if (!client) return fixed_template_text(info, item_kind);
  if (auto hit = cache.lookup(info.item_id)) return *hit;
  GenRequest req;
  req.system_prompt = tmpl.system;
  req.user_prompt = tmpl.render(info);
  req.max_tokens = 256;
  auto text = client->generate(req);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw ContentError("empty description for item " + info.item_id);
  }
  cache.insert(info.item_id, text);
  return text;
}

namespace {

std::uint64_t store_hash(const DescriptionTemplate& tmpl, const TextStoreOptions& options) {
  std::uint64_t h = tmpl.hash();
  h = fnv1a64(options.model_tag, h);
  h = fnv1a64(options.item_kind, h);
  return fnv1a64(options.use_descriptions ? "desc" : "fixed", h);
}

bool existing_stores_match(const std::filesystem::path& dir, std::span<const ItemBasicInfo> items,
                           std::uint64_t hash) {
  for (const char* name : {"title", "desc", "text"}) {
    auto path = dir / (std::string(name) + ".rrec");
    auto ids_path = dir / (std::string(name) + ".ids");
    if (!std::filesystem::exists(path) || !std::filesystem::exists(ids_path)) return false;
    std::size_t count = 0;
    auto header = read_store_header(path, count);
    if (count != items.size() || header.template_hash != hash) return false;
    auto ids = read_row_ids(ids_path);
    if (ids.size() != items.size()) return false;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] != items[i].item_id) return false;
    }
  }
  return true;
}

}  // namespace

TextStores build_text_stores(std::span<const ItemBasicInfo> items, LlmClient& client,
                             const DescriptionTemplate& tmpl, DescriptionCache& cache,
                             const TextStoreOptions& options) {
  std::set<std::string> seen;
  for (const auto& it : items) {
    if (!seen.insert(it.item_id).second) throw ContractError("duplicate item id " + it.item_id);
  }
  const auto hash = store_hash(tmpl, options);
  const auto calls_before = client.calls();
  TextStores out;
  if (!options.dir.empty() && existing_stores_match(options.dir, items, hash)) {
    out.title = read_store(options.dir / "title.rrec");
    out.desc = read_store(options.dir / "desc.rrec");
    out.text = read_store(options.dir / "text.rrec");
    out.reused = true;
    return out;
  }

  const auto dim = static_cast<std::uint32_t>(client.embedding_dim(options.model_tag));
  const std::size_t n = items.size();
  std::vector<std::optional<TextEmbedding>> rows(n);
  std::vector<std::string> errors(n);

  auto embed_one = [&](std::size_t i) {
    const auto& info = items[i];
    try {
      auto description = describe_item(info, tmpl, options.use_descriptions ? &client : nullptr,
                                       cache, options.item_kind);
      auto title_vec = client.embed_text({fixed_template_text(info, options.item_kind), options.model_tag});
      auto desc_vec = client.embed_text({description, options.model_tag});
      if (title_vec.size() != dim || desc_vec.size() != dim) {
        throw ContractError("embedding dimension does not match the declared " + std::to_string(dim));
      }
      rows[i] = assemble_text_embedding(title_vec, desc_vec);
      errors[i].clear();
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  };

  std::vector<std::size_t> pending(n);
  for (std::size_t i = 0; i < n; ++i) pending[i] = i;
  for (int pass = 0; pass <= options.item_retries && !pending.empty(); ++pass) {
    if (pass > 0) spdlog::warn("retrying {} items that failed to embed", pending.size());
    parallel_for(pending.size(), options.workers, [&](std::size_t k) { embed_one(pending[k]); });
    std::vector<std::size_t> still;
    for (auto i : pending) {
      if (!rows[i]) still.push_back(i);
    }
    pending = std::move(still);
  }
  if (!pending.empty()) {
    std::string msg = std::to_string(pending.size()) + " items remain unembedded; first: " +
                      items[pending.front()].item_id + ": " + errors[pending.front()];
    throw Error(msg);
  }

  out.title = EmbeddingStore(dim, hash);
  out.desc = EmbeddingStore(dim, hash);
  out.text = EmbeddingStore(2 * dim, hash);
  for (const auto& row : rows) {
    out.title.append(std::span<const float>(row->title));
    out.desc.append(std::span<const float>(row->desc));
    out.text.append(std::span<const float>(row->text));
  }
  if (!options.dir.empty()) {
    std::vector<std::string> ids;
    ids.reserve(n);
    for (const auto& it : items) ids.push_back(it.item_id);
    for (auto [name, store] : {std::pair{"title", &out.title}, std::pair{"desc", &out.desc},
                               std::pair{"text", &out.text}}) {
      write_store(options.dir / (std::string(name) + ".rrec"), *store);
      write_row_ids(options.dir / (std::string(name) + ".ids"), ids);
    }
  }
  out.client_calls = client.calls() - calls_before;
  return out;
}

}  // namespace ragrec
