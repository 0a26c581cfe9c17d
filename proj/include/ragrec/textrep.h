#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ragrec/corpus.h"
#include "ragrec/llm_client.h"
#include "ragrec/store.h"

namespace ragrec {

struct TextEmbedding {
  std::vector<float> title;
  std::vector<float> desc;
  std::vector<float> text;  // [title || desc]
};

// Throws ContractError on dimension mismatch or non-finite input.
TextEmbedding assemble_text_embedding(std::span<const float> title, std::span<const float> desc);

// Prompt used to ask the LLM for an item description.
//
// The body may reference {title}, {item_id}, {attributes} (all attributes as
// "Key: value" lines, sorted by key) and {attr:NAME} for a single attribute.
// Rendering fails when a referenced attribute is missing.
struct DescriptionTemplate {
  std::string system;
  std::string body;

  static DescriptionTemplate builtin();
  // Text asset: the system prompt, a line "---", then the body.
  static DescriptionTemplate from_text(const std::string& text);
  static DescriptionTemplate load(const std::filesystem::path& path);

  std::uint64_t hash() const;
  std::string render(const ItemBasicInfo& info) const;
};

// Baseline textual form of an item: "Here is a {kind}: {title}".
std::string fixed_template_text(const ItemBasicInfo& info, const std::string& item_kind = "movie");

// JSON-lines cache of generated descriptions keyed by (item_id, template hash).
// Entries with another template hash are ignored on load.
class DescriptionCache {
 public:
  DescriptionCache() = default;
  DescriptionCache(std::filesystem::path path, std::uint64_t template_hash);

  std::optional<std::string> lookup(const std::string& item_id) const;
  // Appends to the backing file when one is set.
  void insert(const std::string& item_id, const std::string& description);
  std::size_t size() const;
  std::uint64_t template_hash() const { return hash_; }

 private:
  mutable std::mutex mu_;
  std::filesystem::path path_;
  std::uint64_t hash_ = 0;
  std::map<std::string, std::string> entries_;
};

// Description of one item. With a null client the fixed-template text is
// returned; otherwise the cache is consulted before the client is called.
std::string describe_item(const ItemBasicInfo& info, const DescriptionTemplate& tmpl,
                          LlmClient* client, DescriptionCache& cache,
                          const std::string& item_kind = "movie");

struct TextStoreOptions {
  std::filesystem::path dir;  // title.rrec, desc.rrec, text.rrec (+ .ids) written here
  std::string model_tag;
  std::string item_kind = "movie";
  bool use_descriptions = true;  // false: describe with the fixed template only
  std::size_t workers = 4;
  int item_retries = 1;          // extra passes over items that failed
};

struct TextStores {
  EmbeddingStore title;
  EmbeddingStore desc;
  EmbeddingStore text;
  std::size_t client_calls = 0;
  bool reused = false;
};

// Embeds every item (rows follow `items` order) and writes the three stores.
// Items must have unique ids. When complete stores for the same ids and
// template already exist in `options.dir`, they are returned without calls.
TextStores build_text_stores(std::span<const ItemBasicInfo> items, LlmClient& client,
                             const DescriptionTemplate& tmpl, DescriptionCache& cache,
                             const TextStoreOptions& options);

}  // namespace ragrec
