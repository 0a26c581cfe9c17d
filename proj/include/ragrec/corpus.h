#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ragrec {

struct Interaction {
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
  std::int64_t timestamp = 0;
};

// Column names of the interaction TSV plus the declared rating scale.
struct ColumnSchema {
  std::string user = "user_id";
  std::string item = "item_id";
  std::string rating = "rating";
  std::string timestamp = "timestamp";
  double rating_min = 1.0;
  double rating_max = 5.0;
};

// Interaction set with dense user/item ids. Dense ids follow first appearance
// in the interaction order, so they are contiguous from 0 and reproducible.
class InteractionLog {
 public:
  InteractionLog() = default;

  // Throws ContractError on a duplicate (user, item, timestamp) triple or a
  // negative timestamp.
  static InteractionLog from_interactions(std::vector<Interaction> interactions);

  const std::vector<Interaction>& interactions() const { return interactions_; }
  std::size_t size() const { return interactions_.size(); }
  bool empty() const { return interactions_.empty(); }
  std::size_t n_users() const { return user_keys_.size(); }
  std::size_t n_items() const { return item_keys_.size(); }

  const std::vector<std::string>& user_keys() const { return user_keys_; }
  const std::vector<std::string>& item_keys() const { return item_keys_; }
  std::optional<std::uint32_t> user_index(const std::string& key) const;
  std::optional<std::uint32_t> item_index(const std::string& key) const;

  // Dense ids of the r-th interaction.
  std::uint32_t user_of(std::size_t r) const { return user_of_[r]; }
  std::uint32_t item_of(std::size_t r) const { return item_of_[r]; }

  // Interaction row numbers of one user in nondecreasing timestamp order;
  // equal timestamps keep file order.
  std::span<const std::size_t> user_history(std::uint32_t user) const;

  std::size_t user_degree(std::uint32_t user) const { return user_history(user).size(); }
  std::size_t item_degree(std::uint32_t item) const { return item_degree_[item]; }

 private:
  std::vector<Interaction> interactions_;
  std::vector<std::string> user_keys_;
  std::vector<std::string> item_keys_;
  std::unordered_map<std::string, std::uint32_t> user_lookup_;
  std::unordered_map<std::string, std::uint32_t> item_lookup_;
  std::vector<std::uint32_t> user_of_;
  std::vector<std::uint32_t> item_of_;
  std::vector<std::size_t> history_offsets_;  // CSR over users
  std::vector<std::size_t> history_rows_;
  std::vector<std::size_t> item_degree_;
};

// Reads a tab-separated file with a header row. Columns are located by name
// from `schema`; extra columns are ignored. An empty file yields an empty log.
InteractionLog load_interactions(const std::filesystem::path& path, const ColumnSchema& schema = {});

void write_interactions(const std::filesystem::path& path, const InteractionLog& log,
                        const ColumnSchema& schema = {});

struct FilterStats {
  std::size_t dropped_users = 0;
  std::size_t dropped_items = 0;
  std::size_t dropped_interactions = 0;
  int rounds = 0;
};

// Maximal sub-log in which every user and every item has at least k
// interactions. Pruning is repeated until a fixed point; survivors keep their
// relative order and dense ids are re-compacted.
InteractionLog k_core_filter(const InteractionLog& log, int k, FilterStats* stats = nullptr);

using ProfileFields = std::map<std::string, std::string>;

struct HistoryEntry {
  std::string item_id;
  double rating = 0.0;
  std::int64_t timestamp = 0;
};

struct CtrSample {
  std::string user_id;
  ProfileFields profile_fields;
  std::vector<HistoryEntry> history;  // chronological, all strictly before the target
  std::string target_item_id;
  double target_rating = 0.0;
  std::int64_t target_timestamp = 0;
  int label = 0;
};

struct SampleOptions {
  double label_threshold = 3.0;  // label = rating > threshold
  int min_history = 1;
  const std::unordered_map<std::string, ProfileFields>* profiles = nullptr;
};

// One sample per eligible user, targeting that user's latest interaction.
// Interactions sharing the target's timestamp are left out of the history.
// Samples follow dense user-id order.
std::vector<CtrSample> build_samples(const InteractionLog& log, const SampleOptions& options);

inline std::vector<CtrSample> build_samples(const InteractionLog& log, double label_threshold,
                                            int min_history) {
  return build_samples(log, SampleOptions{label_threshold, min_history, nullptr});
}

struct SplitPolicy {
  double ratio = 0.8;  // train fraction
  std::uint64_t seed = 0;
};

// Deterministic shuffled partition; each side keeps the input order.
std::pair<std::vector<CtrSample>, std::vector<CtrSample>> split_samples(
    const std::vector<CtrSample>& samples, const SplitPolicy& policy);

// Basic information of an item as given in the metadata file.
struct ItemBasicInfo {
  std::string item_id;
  std::string title;
  std::map<std::string, std::string> attributes;
};

// JSON-lines, one object per item with at least "id" and "title". Every other
// field becomes an attribute; arrays are joined with ", ".
std::vector<ItemBasicInfo> load_item_metadata(const std::filesystem::path& path);
void write_item_metadata(const std::filesystem::path& path, std::span<const ItemBasicInfo> items);

// JSON-lines, one object per user with "id"; only `fields` are kept (all
// fields when empty).
std::unordered_map<std::string, ProfileFields> load_user_profiles(
    const std::filesystem::path& path, const std::vector<std::string>& fields = {});

void write_samples(const std::filesystem::path& path, std::span<const CtrSample> samples);
std::vector<CtrSample> read_samples(const std::filesystem::path& path);

}  // namespace ragrec
