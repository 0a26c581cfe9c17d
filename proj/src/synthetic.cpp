#include "ragrec/synthetic.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "ragrec/error.h"
#include "ragrec/io.h"
#include "ragrec/retrieval.h"
#include "ragrec/rng.h"

namespace ragrec {

using nlohmann::json;

namespace {

const std::vector<std::string> kGenres = {"drama",   "comedy",  "thriller", "romance",
                                          "western", "horror",  "fantasy",  "documentary",
                                          "musical", "mystery", "animation", "adventure"};

const std::vector<std::string> kTitleWords = {
    "velvet", "harbor", "silent", "river",  "broken", "crown",  "distant", "summer", "iron",
    "garden", "hollow", "empire", "golden", "shadow", "paper",  "lantern", "winter", "signal",
    "marble", "forest", "copper", "island", "hidden", "bridge", "scarlet", "meadow", "frozen",
    "canyon", "little", "tower",  "secret", "voyage", "amber",  "orchard", "stone",  "echo"};

const std::vector<std::string> kAgeGroups = {"18-24", "25-34", "35-44", "45-54", "55+"};
const std::vector<std::string> kOccupations = {"student", "engineer", "artist", "teacher",
                                               "clerk",   "doctor",   "writer", "retired"};

// Weighted sampler over a fixed index set.
struct Sampler {
  std::vector<std::uint32_t> items;
  std::vector<double> cumulative;

  void add(std::uint32_t item, double weight) {
    items.push_back(item);
    cumulative.push_back((cumulative.empty() ? 0.0 : cumulative.back()) + weight);
  }
  std::uint32_t draw(Rng& rng) const {
    const double x = rng.uniform() * cumulative.back();
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), x);
    if (it == cumulative.end()) --it;
    return items[static_cast<std::size_t>(it - cumulative.begin())];
  }
};

std::string text_keyword(int group, std::uint64_t j) {
  return "t" + std::to_string(group) + "w" + std::to_string(j);
}

}  // namespace

void SyntheticConfig::validate() const {
  if (n_users < 1 || n_items < 2) throw ContractError("synthetic: need at least 1 user and 2 items");
  if (text_groups < 1 || colla_groups < 1) throw ContractError("synthetic: group counts must be >= 1");
  if (static_cast<std::size_t>(text_groups) > kGenres.size()) {
    throw ContractError("synthetic: at most " + std::to_string(kGenres.size()) + " text groups");
  }
  if (interactions_per_user < 1) throw ContractError("synthetic: interactions_per_user must be >= 1");
  if (!(in_group_prob >= 0.0 && in_group_prob <= 1.0)) throw ContractError("synthetic: in_group_prob outside [0, 1]");
  if (!(hint_prob >= 0.0 && hint_prob <= 1.0)) throw ContractError("synthetic: hint_prob outside [0, 1]");
  if (!(popularity_skew >= 0.0)) throw ContractError("synthetic: popularity_skew must be >= 0");
  if (keywords < 0) throw ContractError("synthetic: keywords must be >= 0");
}

std::unordered_map<std::string, std::vector<double>> SyntheticDataset::latent_by_title() const {
  std::unordered_map<std::string, std::vector<double>> out;
  const auto a = static_cast<std::size_t>(config.text_groups);
  const auto b = static_cast<std::size_t>(config.colla_groups);
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::vector<double> q(a + b, 0.0);
    q[static_cast<std::size_t>(planted_items[i].text_group)] = 1.0;
    q[a + static_cast<std::size_t>(planted_items[i].colla_group)] = 1.0;
    out.emplace(items[i].title, std::move(q));
  }
  return out;
}

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  SyntheticDataset data;
  data.config = cfg;
  Rng rng(mix_seed(cfg.seed ^ 0x5717));

  const auto n_items = cfg.n_items;
  std::vector<std::uint32_t> rank(n_items);
  std::iota(rank.begin(), rank.end(), 0u);
  rng.shuffle(std::span<std::uint32_t>(rank));

  std::vector<Sampler> by_group(static_cast<std::size_t>(cfg.colla_groups));
  Sampler all;
  for (std::size_t i = 0; i < n_items; ++i) {
    PlantedItem p;
    p.item_id = "i" + std::to_string(i);
    p.text_group = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.text_groups)));
    p.colla_group = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.colla_groups)));

    ItemBasicInfo info;
    info.item_id = p.item_id;
    std::string w1 = kTitleWords[rng.below(kTitleWords.size())];
    std::string w2 = kTitleWords[rng.below(kTitleWords.size())];
    w1[0] = static_cast<char>(w1[0] - 'a' + 'A');
    w2[0] = static_cast<char>(w2[0] - 'a' + 'A');
    info.title = "The " + w1 + " " + w2 + " " + std::to_string(i);
    info.attributes["genre"] = kGenres[static_cast<std::size_t>(p.text_group)];
    std::vector<std::string> kw;
    std::unordered_set<std::uint64_t> used;
    while (static_cast<int>(kw.size()) < cfg.keywords) {
      const auto j = rng.below(8);
      if (used.insert(j).second) kw.push_back(text_keyword(p.text_group, j));
    }
    if (rng.uniform() < cfg.hint_prob) kw.push_back("c" + std::to_string(p.colla_group) + "hint");
    std::string joined;
    for (const auto& w : kw) joined += (joined.empty() ? "" : ", ") + w;
    info.attributes["keywords"] = joined;

    const double weight = 1.0 / std::pow(static_cast<double>(rank[i]) + 1.0, cfg.popularity_skew);
    by_group[static_cast<std::size_t>(p.colla_group)].add(static_cast<std::uint32_t>(i), weight);
    all.add(static_cast<std::uint32_t>(i), weight);

    data.items.push_back(std::move(info));
    data.planted_items.push_back(std::move(p));
  }

  const std::size_t cap = std::max<std::size_t>(1, n_items / 2);
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    PlantedUser user;
    user.user_id = "u" + std::to_string(u);
    user.text_pref = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.text_groups)));
    user.colla_pref = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.colla_groups)));
    const auto m = cfg.interactions_per_user;
    const std::size_t lo = std::max<std::size_t>(1, m / 2);
    std::size_t count = lo + rng.below(m + 1);  // [m/2, 3m/2] for even m
    count = std::min(count, cap);

    const auto& own = by_group[static_cast<std::size_t>(user.colla_pref)];
    std::unordered_set<std::uint32_t> chosen;
    std::int64_t t = 1'000'000'000 + static_cast<std::int64_t>(rng.below(1'000'000));
    std::size_t tries = 0;
    while (chosen.size() < count && tries < count * 50) {
      ++tries;
      const bool in_group = !own.items.empty() && rng.uniform() < cfg.in_group_prob;
      const auto item = in_group ? own.draw(rng) : all.draw(rng);
      if (!chosen.insert(item).second) continue;
      const auto& p = data.planted_items[item];
      double r = 2.0 + 1.5 * (p.text_group == user.text_pref) + 1.5 * (p.colla_group == user.colla_pref) +
                 cfg.rating_noise * rng.normal();
      r = std::clamp(std::round(r), 1.0, 5.0);
      t += 1 + static_cast<std::int64_t>(rng.below(86'400));
      data.interactions.push_back({user.user_id, p.item_id, r, t});
    }
    data.users.push_back(std::move(user));
  }
  return data;
}

void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir) {
  std::string tsv = "user_id\titem_id\trating\ttimestamp\n";
  for (const auto& x : data.interactions) {
    tsv += x.user_id + "\t" + x.item_id + "\t" + std::to_string(static_cast<int>(x.rating)) + "\t" +
           std::to_string(x.timestamp) + "\n";
  }
  write_file_atomic(dir / "interactions.tsv", tsv);
  write_item_metadata(dir / "items.jsonl", data.items);

  Rng rng(mix_seed(data.config.seed ^ 0x0a5e));
  std::string users;
  for (const auto& u : data.users) {
    users += json{{"id", u.user_id},
                  {"age_group", kAgeGroups[rng.below(kAgeGroups.size())]},
                  {"occupation", kOccupations[rng.below(kOccupations.size())]}}
                 .dump();
    users += '\n';
  }
  write_file_atomic(dir / "users.jsonl", users);

  json planted;
  const auto& c = data.config;
  planted["config"] = {{"n_users", c.n_users},
                       {"n_items", c.n_items},
                       {"text_groups", c.text_groups},
                       {"colla_groups", c.colla_groups},
                       {"interactions_per_user", c.interactions_per_user},
                       {"in_group_prob", c.in_group_prob},
                       {"popularity_skew", c.popularity_skew},
                       {"keywords", c.keywords},
                       {"hint_prob", c.hint_prob},
                       {"rating_noise", c.rating_noise},
                       {"seed", c.seed}};
  planted["items"] = json::array();
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    planted["items"].push_back({{"id", data.items[i].item_id},
                                {"title", data.items[i].title},
                                {"text_group", data.planted_items[i].text_group},
                                {"colla_group", data.planted_items[i].colla_group}});
  }
  planted["users"] = json::array();
  for (const auto& u : data.users) {
    planted["users"].push_back({{"id", u.user_id}, {"text_pref", u.text_pref}, {"colla_pref", u.colla_pref}});
  }
  write_file_atomic(dir / "planted.json", planted.dump(1) + "\n");
}

std::unordered_map<std::string, std::vector<double>> load_planted_latent(const std::filesystem::path& path) {
  json planted;
  try {
    planted = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
  const int a = planted.at("config").at("text_groups").get<int>();
  const int b = planted.at("config").at("colla_groups").get<int>();
  std::unordered_map<std::string, std::vector<double>> out;
  for (const auto& item : planted.at("items")) {
    std::vector<double> q(static_cast<std::size_t>(a + b), 0.0);
    const int ta = item.at("text_group").get<int>();
    const int cb = item.at("colla_group").get<int>();
    if (ta < 0 || ta >= a || cb < 0 || cb >= b) throw ParseError(path.string() + ": group out of range", 0);
    q[static_cast<std::size_t>(ta)] = 1.0;
    q[static_cast<std::size_t>(a + cb)] = 1.0;
    out.emplace(item.at("title").get<std::string>(), std::move(q));
  }
  return out;
}

double cluster_recall_at_k(const EmbeddingStore& store, std::span<const int> cluster_of_row, std::size_t k) {
  const std::size_t n = store.count();
  if (cluster_of_row.size() != n) throw ContractError("cluster labels do not cover every store row");
  std::unordered_map<int, std::size_t> size;
  for (int c : cluster_of_row) ++size[c];
  std::vector<std::uint32_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0u);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::uint32_t r = 0; r < n; ++r) {
    const std::size_t mates = size[cluster_of_row[r]] - 1;
    if (mates == 0) continue;
    const auto hits = retrieve(store, r, rows, k);
    std::size_t found = 0;
    for (const auto& h : hits) found += cluster_of_row[h.index] == cluster_of_row[r];
    total += static_cast<double>(found) / static_cast<double>(std::min(k, mates));
    ++counted;
  }
  if (counted == 0) throw ContractError("no cluster has more than one row");
  return total / static_cast<double>(counted);
}

}  // namespace ragrec
