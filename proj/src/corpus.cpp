#include "ragrec/corpus.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "ragrec/error.h"
#include "ragrec/io.h"
#include "ragrec/rng.h"

namespace ragrec {

using nlohmann::json;

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::string attribute_string(const json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_array()) {
    std::string joined;
    for (const auto& v : value) {
      if (!joined.empty()) joined += ", ";
      joined += attribute_string(v);
    }
    return joined;
  }
  if (value.is_null()) return "";
  return value.dump();
}

std::string id_string(const json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return value.dump();
  throw ContractError("id must be a string or integer");
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ": invalid JSON: " + e.what(), line_no);
    }
    if (!obj.is_object()) throw ParseError(path.string() + ": expected an object", line_no);
    try {
      fn(obj);
    } catch (const ContractError& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    }
  }
}

}  // namespace

InteractionLog InteractionLog::from_interactions(std::vector<Interaction> interactions) {
  InteractionLog log;
  log.interactions_ = std::move(interactions);
  const std::size_t n = log.interactions_.size();
  log.user_of_.resize(n);
  log.item_of_.resize(n);

  std::set<std::tuple<std::uint32_t, std::uint32_t, std::int64_t>> seen;
  for (std::size_t r = 0; r < n; ++r) {
    const auto& x = log.interactions_[r];
    if (x.timestamp < 0) throw ContractError("negative timestamp for user " + x.user_id);
    auto [uit, unew] = log.user_lookup_.try_emplace(x.user_id, log.user_keys_.size());
    if (unew) log.user_keys_.push_back(x.user_id);
    auto [iit, inew] = log.item_lookup_.try_emplace(x.item_id, log.item_keys_.size());
    if (inew) log.item_keys_.push_back(x.item_id);
    log.user_of_[r] = uit->second;
    log.item_of_[r] = iit->second;
    if (!seen.emplace(uit->second, iit->second, x.timestamp).second) {
      throw ContractError("duplicate interaction (" + x.user_id + ", " + x.item_id + ", " +
                          std::to_string(x.timestamp) + ")");
    }
  }

  const std::size_t nu = log.user_keys_.size();
  log.history_offsets_.assign(nu + 1, 0);
  for (std::size_t r = 0; r < n; ++r) ++log.history_offsets_[log.user_of_[r] + 1];
  std::partial_sum(log.history_offsets_.begin(), log.history_offsets_.end(),
                   log.history_offsets_.begin());
  log.history_rows_.resize(n);
  std::vector<std::size_t> cursor(log.history_offsets_.begin(), log.history_offsets_.end() - 1);
  for (std::size_t r = 0; r < n; ++r) log.history_rows_[cursor[log.user_of_[r]]++] = r;
  for (std::size_t u = 0; u < nu; ++u) {
    auto first = log.history_rows_.begin() + static_cast<std::ptrdiff_t>(log.history_offsets_[u]);
    auto last = log.history_rows_.begin() + static_cast<std::ptrdiff_t>(log.history_offsets_[u + 1]);
    // Rows are already in file order, so a stable sort keeps file order on ties.
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) {
      return log.interactions_[a].timestamp < log.interactions_[b].timestamp;
    });
  }

  log.item_degree_.assign(log.item_keys_.size(), 0);
  for (std::size_t r = 0; r < n; ++r) ++log.item_degree_[log.item_of_[r]];
  return log;
}

std::optional<std::uint32_t> InteractionLog::user_index(const std::string& key) const {
  auto it = user_lookup_.find(key);
  if (it == user_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::uint32_t> InteractionLog::item_index(const std::string& key) const {
  auto it = item_lookup_.find(key);
  if (it == item_lookup_.end()) return std::nullopt;
  return it->second;
}

std::span<const std::size_t> InteractionLog::user_history(std::uint32_t user) const {
  return std::span<const std::size_t>(history_rows_)
      .subspan(history_offsets_[user], history_offsets_[user + 1] - history_offsets_[user]);
}

InteractionLog load_interactions(const std::filesystem::path& path, const ColumnSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());

  std::string line;
  std::size_t line_no = 0;
  std::vector<Interaction> rows;
  std::size_t col_user = 0, col_item = 0, col_rating = 0, col_ts = 0, width = 0;
  bool have_header = false;
  std::set<std::tuple<std::string, std::string, std::int64_t>> seen;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_tabs(line);
    if (!have_header) {
      auto find = [&](const std::string& name) {
        auto it = std::find(cells.begin(), cells.end(), name);
        if (it == cells.end()) throw ParseError("missing column '" + name + "' in header", line_no);
        return static_cast<std::size_t>(it - cells.begin());
      };
      col_user = find(schema.user);
      col_item = find(schema.item);
      col_rating = find(schema.rating);
      col_ts = find(schema.timestamp);
      width = std::max({col_user, col_item, col_rating, col_ts}) + 1;
      have_header = true;
      continue;
    }
    if (cells.size() < width) {
      throw ParseError("expected at least " + std::to_string(width) + " columns, got " +
                           std::to_string(cells.size()),
                       line_no);
    }
    Interaction x;
    x.user_id = std::string(cells[col_user]);
    x.item_id = std::string(cells[col_item]);
    if (x.user_id.empty() || x.item_id.empty()) throw ParseError("empty user or item id", line_no);
    if (!parse_number(cells[col_rating], x.rating)) {
      throw ParseError("non-numeric rating '" + std::string(cells[col_rating]) + "'", line_no);
    }
    if (!parse_number(cells[col_ts], x.timestamp)) {
      throw ParseError("non-numeric timestamp '" + std::string(cells[col_ts]) + "'", line_no);
    }
    if (x.timestamp < 0) throw ParseError("negative timestamp", line_no);
    if (x.rating < schema.rating_min || x.rating > schema.rating_max) {
      throw ParseError("rating " + std::string(cells[col_rating]) + " outside declared range",
                       line_no);
    }
    if (!seen.emplace(x.user_id, x.item_id, x.timestamp).second) {
      throw ParseError("duplicate (user, item, timestamp) triple", line_no);
    }
    rows.push_back(std::move(x));
  }
  return InteractionLog::from_interactions(std::move(rows));
}

void write_interactions(const std::filesystem::path& path, const InteractionLog& log,
                        const ColumnSchema& schema) {
  std::ostringstream out;
  out.precision(17);
  out << schema.user << '\t' << schema.item << '\t' << schema.rating << '\t' << schema.timestamp
      << '\n';
  for (const auto& x : log.interactions()) {
    out << x.user_id << '\t' << x.item_id << '\t' << x.rating << '\t' << x.timestamp << '\n';
  }
  write_file_atomic(path, out.str());
}

InteractionLog k_core_filter(const InteractionLog& log, int k, FilterStats* stats) {
  if (k < 1) throw ContractError("k_core_filter: k must be >= 1");
  const std::size_t n = log.size();
  std::vector<std::size_t> user_deg(log.n_users(), 0), item_deg(log.n_items(), 0);
  for (std::size_t r = 0; r < n; ++r) {
    ++user_deg[log.user_of(r)];
    ++item_deg[log.item_of(r)];
  }
  std::vector<char> alive(n, 1);
  const auto threshold = static_cast<std::size_t>(k);
  int rounds = 0;
  bool changed = true;
  while (changed) {
    changed = false;
    ++rounds;
    for (std::size_t r = 0; r < n; ++r) {
      if (!alive[r]) continue;
      if (user_deg[log.user_of(r)] < threshold || item_deg[log.item_of(r)] < threshold) {
        alive[r] = 0;
        changed = true;
      }
    }
    if (!changed) break;
    std::fill(user_deg.begin(), user_deg.end(), 0);
    std::fill(item_deg.begin(), item_deg.end(), 0);
    for (std::size_t r = 0; r < n; ++r) {
      if (!alive[r]) continue;
      ++user_deg[log.user_of(r)];
      ++item_deg[log.item_of(r)];
    }
  }

  std::vector<Interaction> kept;
  for (std::size_t r = 0; r < n; ++r) {
    if (alive[r]) kept.push_back(log.interactions()[r]);
  }
  auto out = InteractionLog::from_interactions(std::move(kept));
  if (stats) {
    stats->dropped_users = log.n_users() - out.n_users();
    stats->dropped_items = log.n_items() - out.n_items();
    stats->dropped_interactions = log.size() - out.size();
    stats->rounds = rounds;
  }
  return out;
}

std::vector<CtrSample> build_samples(const InteractionLog& log, const SampleOptions& options) {
  if (log.empty()) throw ContractError("build_samples: empty log");
  if (options.min_history < 1) throw ContractError("build_samples: min_history must be >= 1");
  std::vector<CtrSample> samples;
  const auto& rows = log.interactions();
  for (std::uint32_t u = 0; u < log.n_users(); ++u) {
    auto hist = log.user_history(u);
    if (hist.size() < static_cast<std::size_t>(options.min_history) + 1) continue;
    const Interaction& target = rows[hist.back()];
    CtrSample s;
    s.user_id = target.user_id;
    s.target_item_id = target.item_id;
    s.target_rating = target.rating;
    s.target_timestamp = target.timestamp;
    s.label = target.rating > options.label_threshold ? 1 : 0;
    for (std::size_t j = 0; j + 1 < hist.size(); ++j) {
      const Interaction& x = rows[hist[j]];
      if (x.timestamp >= target.timestamp) break;
      s.history.push_back({x.item_id, x.rating, x.timestamp});
    }
    if (s.history.size() < static_cast<std::size_t>(options.min_history)) continue;
    if (options.profiles) {
      auto it = options.profiles->find(s.user_id);
      if (it != options.profiles->end()) s.profile_fields = it->second;
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

std::pair<std::vector<CtrSample>, std::vector<CtrSample>> split_samples(
    const std::vector<CtrSample>& samples, const SplitPolicy& policy) {
  if (!(policy.ratio > 0.0 && policy.ratio < 1.0)) {
    throw ContractError("split_samples: ratio must be in (0, 1)");
  }
  const std::size_t n = samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(policy.seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_train = static_cast<std::size_t>(policy.ratio * static_cast<double>(n) + 0.5);
  std::vector<char> in_train(n, 0);
  for (std::size_t i = 0; i < std::min(n_train, n); ++i) in_train[order[i]] = 1;
  std::pair<std::vector<CtrSample>, std::vector<CtrSample>> out;
  for (std::size_t i = 0; i < n; ++i) (in_train[i] ? out.first : out.second).push_back(samples[i]);
  return out;
}

std::vector<ItemBasicInfo> load_item_metadata(const std::filesystem::path& path) {
  std::vector<ItemBasicInfo> items;
  std::set<std::string> ids;
  for_each_json_line(path, [&](const json& obj) {
    ItemBasicInfo info;
    if (!obj.contains("id")) throw ContractError("item without \"id\"");
    info.item_id = id_string(obj.at("id"));
    if (!obj.contains("title") || !obj.at("title").is_string()) {
      throw ContractError("item " + info.item_id + " has no title");
    }
    info.title = obj.at("title").get<std::string>();
    if (info.title.empty()) throw ContractError("item " + info.item_id + " has an empty title");
    for (const auto& [key, value] : obj.items()) {
      if (key == "id" || key == "title") continue;
      info.attributes[key] = attribute_string(value);
    }
    if (!ids.insert(info.item_id).second) throw ContractError("duplicate item " + info.item_id);
    items.push_back(std::move(info));
  });
  return items;
}

void write_item_metadata(const std::filesystem::path& path, std::span<const ItemBasicInfo> items) {
  std::string out;
  for (const auto& item : items) {
    json obj;
    obj["id"] = item.item_id;
    obj["title"] = item.title;
    for (const auto& [k, v] : item.attributes) obj[k] = v;
    out += obj.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::unordered_map<std::string, ProfileFields> load_user_profiles(
    const std::filesystem::path& path, const std::vector<std::string>& fields) {
  std::unordered_map<std::string, ProfileFields> profiles;
  for_each_json_line(path, [&](const json& obj) {
    if (!obj.contains("id")) throw ContractError("user without \"id\"");
    auto id = id_string(obj.at("id"));
    ProfileFields p;
    if (fields.empty()) {
      for (const auto& [key, value] : obj.items()) {
        if (key != "id") p[key] = attribute_string(value);
      }
    } else {
      for (const auto& f : fields) {
        if (obj.contains(f)) p[f] = attribute_string(obj.at(f));
      }
    }
    profiles[id] = std::move(p);
  });
  return profiles;
}

void write_samples(const std::filesystem::path& path, std::span<const CtrSample> samples) {
  std::string out;
  for (const auto& s : samples) {
    json hist = json::array();
    for (const auto& h : s.history) {
      hist.push_back({{"item_id", h.item_id}, {"rating", h.rating}, {"timestamp", h.timestamp}});
    }
    json obj = {{"user_id", s.user_id},
                {"profile", s.profile_fields},
                {"history", std::move(hist)},
                {"target_item_id", s.target_item_id},
                {"target_rating", s.target_rating},
                {"target_timestamp", s.target_timestamp},
                {"label", s.label}};
    out += obj.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::vector<CtrSample> read_samples(const std::filesystem::path& path) {
  std::vector<CtrSample> samples;
  for_each_json_line(path, [&](const json& obj) {
    CtrSample s;
    s.user_id = obj.at("user_id").get<std::string>();
    s.profile_fields = obj.at("profile").get<ProfileFields>();
    for (const auto& h : obj.at("history")) {
      s.history.push_back({h.at("item_id").get<std::string>(), h.at("rating").get<double>(),
                           h.at("timestamp").get<std::int64_t>()});
    }
    s.target_item_id = obj.at("target_item_id").get<std::string>();
    s.target_rating = obj.at("target_rating").get<double>();
    s.target_timestamp = obj.at("target_timestamp").get<std::int64_t>();
    s.label = obj.at("label").get<int>();
    samples.push_back(std::move(s));
  });
  return samples;
}

}  // namespace ragrec
