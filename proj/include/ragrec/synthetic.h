#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ragrec/corpus.h"
#include "ragrec/store.h"

namespace ragrec {

// Planted corpus generator. Every item belongs to one text group (visible in
// its genre and keywords) and one collaborative group (visible mostly through
// who interacts with it; one keyword hints at it). Users prefer one group of
// each kind: they interact mostly with items of their collaborative group,
// and rate items of either preferred group higher.
struct SyntheticConfig {
  std::size_t n_users = 1000;
  std::size_t n_items = 500;
  int text_groups = 4;
  int colla_groups = 4;
  std::size_t interactions_per_user = 40;  // mean; actual counts vary by +-50%
  double in_group_prob = 0.8;              // chance an interaction stays in the user's colla group
  double popularity_skew = 0.8;            // Zipf exponent of item popularity
  int keywords = 3;                        // text-group keywords per item
  double hint_prob = 1.0;                  // chance an item lists its colla-group keyword
  double rating_noise = 0.7;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PlantedItem {
  std::string item_id;
  int text_group = 0;
  int colla_group = 0;
};

struct PlantedUser {
  std::string user_id;
  int text_pref = 0;
  int colla_pref = 0;
};

struct SyntheticDataset {
  SyntheticConfig config;
  std::vector<Interaction> interactions;
  std::vector<ItemBasicInfo> items;
  std::vector<PlantedItem> planted_items;  // same order as items
  std::vector<PlantedUser> users;

  // Latent preference vector of every item title: one-hot text group followed
  // by one-hot colla group.
  std::unordered_map<std::string, std::vector<double>> latent_by_title() const;
};

SyntheticDataset generate_synthetic(const SyntheticConfig& config);

// interactions.tsv, items.jsonl, users.jsonl and planted.json under `dir`.
void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir);

// Title -> latent vector table from a planted.json file.
std::unordered_map<std::string, std::vector<double>> load_planted_latent(const std::filesystem::path& path);

// Mean over rows of |top-k neighbours sharing the row's cluster| /
// min(k, cluster size - 1), using exact dot-product retrieval over all other
// rows. Rows alone in their cluster are skipped.
double cluster_recall_at_k(const EmbeddingStore& store, std::span<const int> cluster_of_row, std::size_t k);

}  // namespace ragrec
