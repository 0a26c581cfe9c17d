#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ragrec/store.h"

namespace ragrec {

// Unit vector in the direction of e. Throws ContractError for a zero vector.
std::vector<double> normalize(std::span<const double> e);
std::vector<double> normalize(std::span<const float> e);

// [text/|text| || colla/|colla| || ssl/|ssl|], in that order.
std::vector<double> mix(std::span<const float> e_text, std::span<const float> e_colla,
                        std::span<const float> e_ssl);

enum class EmbeddingVariant { text_only, id_only, concat, concat_ssl };

std::string to_string(EmbeddingVariant v);
EmbeddingVariant variant_from_string(const std::string& name);
const std::vector<EmbeddingVariant>& all_variants();

// Item vectors used for retrieval under one variant: every channel it uses is
// unit-normalized and the channels are concatenated in text/colla/ssl order.
// `ssl` may be null unless the variant needs it.
EmbeddingStore build_mixed_store(EmbeddingVariant variant, const EmbeddingStore& text,
                                 const EmbeddingStore& colla, const EmbeddingStore* ssl);

struct Retrieved {
  std::uint32_t index;
  double score;
};

// Exact top-k of candidates by dot product with the target row, descending;
// ties go to the smaller row index. The target itself is never returned.
// Throws LookupError for an out-of-range index.
std::vector<Retrieved> retrieve(const EmbeddingStore& store, std::uint32_t target,
                                std::span<const std::uint32_t> candidates, std::size_t k);

// Item id <-> store row.
class ItemIndex {
 public:
  ItemIndex() = default;
  explicit ItemIndex(std::vector<std::string> ids);

  std::uint32_t at(const std::string& id) const;  // throws LookupError
  std::optional<std::uint32_t> find(const std::string& id) const;
  const std::string& id(std::uint32_t row) const { return ids_[row]; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::uint32_t> rows_;
};

// Id-level wrapper over retrieve(); returns ids in rank order.
std::vector<std::string> retrieve_ids(const EmbeddingStore& store, const ItemIndex& index,
                                      const std::string& target,
                                      std::span<const std::string> candidates, std::size_t k,
                                      std::vector<double>* scores = nullptr);

// {1, 1/2^beta, ..., 1/K^beta}
std::vector<double> position_scores(std::size_t k, double beta);

enum class Channel { relevance, recency };

struct ScoredItem {
  std::string item_id;
  Channel channel = Channel::relevance;
  std::size_t position = 1;  // 1-based rank within its channel list
  double channel_score = 0.0;
  double position_score = 0.0;
  double total = 0.0;  // channel_score * position_score
};

struct RerankConfig {
  double alpha = 2.0 / 3.0;  // weight of the relevance channel; recency gets 1 - alpha
  double beta = 1.0;
  std::size_t k = 30;

  void validate() const;
};

// Scores every entry of both lists. An item present in both lists keeps its
// higher-scoring entry (the relevance entry on an exact tie).
std::vector<ScoredItem> score_channels(std::span<const std::string> relevant,
                                       std::span<const std::string> recent,
                                       const RerankConfig& cfg);

// Orders by total descending, then relevance before recency, then smaller
// position, then item id; keeps the first k.
std::vector<ScoredItem> select_top(std::vector<ScoredItem> scored, std::size_t k);

// `recent` lists the most recent item first. Both lists hold at most k
// distinct items.
std::vector<std::string> rerank(std::span<const std::string> relevant,
                                std::span<const std::string> recent, const RerankConfig& cfg);

}  // namespace ragrec
