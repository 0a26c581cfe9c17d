#include "ragrec/retrieval.h"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "ragrec/error.h"

namespace ragrec {

namespace {

template <typename T>
std::vector<double> normalize_impl(std::span<const T> e) {
  double sq = 0.0;
  for (T v : e) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw ContractError("cannot normalize a zero or non-finite vector");
  }
  std::vector<double> out(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) out[i] = static_cast<double>(e[i]) / norm;
  return out;
}

// Channel scores are products of alpha-weights and 1/k^beta, so values that
// are equal in exact arithmetic can differ in the last bits.
bool same_score(double a, double b) {
  return std::abs(a - b) <= 1e-12 * std::max(std::abs(a), std::abs(b));
}

void append_normalized(std::vector<double>& out, std::span<const float> e, const char* channel) {
  try {
    auto n = normalize(e);
    out.insert(out.end(), n.begin(), n.end());
  } catch (const ContractError&) {
    throw ContractError(std::string("zero ") + channel + " channel cannot be normalized");
  }
}

}  // namespace

std::vector<double> normalize(std::span<const double> e) { return normalize_impl(e); }
std::vector<double> normalize(std::span<const float> e) { return normalize_impl(e); }

std::vector<double> mix(std::span<const float> e_text, std::span<const float> e_colla,
                        std::span<const float> e_ssl) {
  std::vector<double> out;
  out.reserve(e_text.size() + e_colla.size() + e_ssl.size());
  append_normalized(out, e_text, "text");
  append_normalized(out, e_colla, "collaborative");
  append_normalized(out, e_ssl, "aligned");
  return out;
}

std::string to_string(EmbeddingVariant v) {
  switch (v) {
    case EmbeddingVariant::text_only: return "text_only";
    case EmbeddingVariant::id_only: return "id_only";
    case EmbeddingVariant::concat: return "concat";
    case EmbeddingVariant::concat_ssl: return "concat_ssl";
  }
  return "?";
}

EmbeddingVariant variant_from_string(const std::string& name) {
  for (auto v : all_variants()) {
    if (to_string(v) == name) return v;
  }
  throw ContractError("unknown embedding variant '" + name + "'");
}

const std::vector<EmbeddingVariant>& all_variants() {
  static const std::vector<EmbeddingVariant> v = {EmbeddingVariant::text_only,
                                                  EmbeddingVariant::id_only,
                                                  EmbeddingVariant::concat,
                                                  EmbeddingVariant::concat_ssl};
  return v;
}

EmbeddingStore build_mixed_store(EmbeddingVariant variant, const EmbeddingStore& text,
                                 const EmbeddingStore& colla, const EmbeddingStore* ssl) {
  const bool use_text = variant != EmbeddingVariant::id_only;
  const bool use_colla = variant != EmbeddingVariant::text_only;
  const bool use_ssl = variant == EmbeddingVariant::concat_ssl;
  if (use_ssl && !ssl) throw ContractError("variant concat_ssl needs the aligned store");
  const std::size_t n = use_text ? text.count() : colla.count();
  if ((use_text && text.count() != n) || (use_colla && colla.count() != n) ||
      (use_ssl && ssl->count() != n)) {
    throw ContractError("channel stores cover different item counts");
  }
  std::uint32_t dim = 0;
  if (use_text) dim += text.dim;
  if (use_colla) dim += colla.dim;
  if (use_ssl) dim += ssl->dim;
  EmbeddingStore out(dim);
  out.data.reserve(static_cast<std::size_t>(dim) * n);
  std::vector<double> row;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    if (use_text) append_normalized(row, text.row(i), "text");
    if (use_colla) append_normalized(row, colla.row(i), "collaborative");
    if (use_ssl) append_normalized(row, ssl->row(i), "aligned");
    out.append(std::span<const double>(row));
  }
  return out;
}

std::vector<Retrieved> retrieve(const EmbeddingStore& store, std::uint32_t target,
                                std::span<const std::uint32_t> candidates, std::size_t k) {
  if (k < 1) throw ContractError("retrieve: k must be >= 1");
  const std::size_t n = store.count();
  if (target >= n) throw LookupError("retrieve: target row " + std::to_string(target) + " not in store");
  const auto t = store.row(target);
  std::vector<Retrieved> scored;
  scored.reserve(candidates.size());
  std::unordered_set<std::uint32_t> seen;
  for (auto c : candidates) {
    if (c >= n) throw LookupError("retrieve: candidate row " + std::to_string(c) + " not in store");
    if (c == target || !seen.insert(c).second) continue;
    const auto r = store.row(c);
    double dot = 0.0;
    for (std::size_t d = 0; d < store.dim; ++d) dot += static_cast<double>(t[d]) * static_cast<double>(r[d]);
    scored.push_back({c, dot});
  }
  auto better = [](const Retrieved& a, const Retrieved& b) {
    return a.score != b.score ? a.score > b.score : a.index < b.index;
  };
  const std::size_t keep = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                    better);
  scored.resize(keep);
  return scored;
}

ItemIndex::ItemIndex(std::vector<std::string> ids) : ids_(std::move(ids)) {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!rows_.emplace(ids_[i], static_cast<std::uint32_t>(i)).second) {
      throw ContractError("duplicate item id " + ids_[i]);
    }
  }
}

std::uint32_t ItemIndex::at(const std::string& id) const {
  auto it = rows_.find(id);
  if (it == rows_.end()) throw LookupError("unknown item id '" + id + "'");
  return it->second;
}

std::optional<std::uint32_t> ItemIndex::find(const std::string& id) const {
  auto it = rows_.find(id);
  if (it == rows_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> retrieve_ids(const EmbeddingStore& store, const ItemIndex& index,
                                      const std::string& target,
                                      std::span<const std::string> candidates, std::size_t k,
                                      std::vector<double>* scores) {
  std::vector<std::uint32_t> rows;
  rows.reserve(candidates.size());
  for (const auto& c : candidates) rows.push_back(index.at(c));
  auto hits = retrieve(store, index.at(target), rows, k);
  std::vector<std::string> out;
  out.reserve(hits.size());
  if (scores) scores->clear();
  for (const auto& h : hits) {
    out.push_back(index.id(h.index));
    if (scores) scores->push_back(h.score);
  }
  return out;
}

std::vector<double> position_scores(std::size_t k, double beta) {
  if (k < 1) throw ContractError("position_scores: k must be >= 1");
  if (!(beta >= 0.0)) throw ContractError("position_scores: beta must be >= 0");
  std::vector<double> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = 1.0 / std::pow(static_cast<double>(i + 1), beta);
  return out;
}

void RerankConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ContractError("rerank: alpha must be in (0, 1)");
  if (!(beta >= 0.0)) throw ContractError("rerank: beta must be >= 0");
  if (k < 1) throw ContractError("rerank: k must be >= 1");
}

std::vector<ScoredItem> score_channels(std::span<const std::string> relevant,
                                       std::span<const std::string> recent,
                                       const RerankConfig& cfg) {
  cfg.validate();
  if (relevant.size() > cfg.k || recent.size() > cfg.k) {
    throw ContractError("rerank: channel list longer than k");
  }
  const auto pos = position_scores(cfg.k, cfg.beta);
  std::vector<ScoredItem> out;
  std::unordered_map<std::string, std::size_t> slot;
  auto add = [&](std::span<const std::string> list, Channel channel, double weight) {
    std::unordered_set<std::string> in_list;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (!in_list.insert(list[i]).second) {
        throw ContractError("rerank: duplicate item '" + list[i] + "' within one channel");
      }
      ScoredItem s{list[i], channel, i + 1, weight, pos[i], weight * pos[i]};
      auto [it, fresh] = slot.try_emplace(list[i], out.size());
      if (fresh) {
        out.push_back(std::move(s));
      } else if (s.total > out[it->second].total && !same_score(s.total, out[it->second].total)) {
        out[it->second] = std::move(s);
      }
    }
  };
  add(relevant, Channel::relevance, cfg.alpha);
  add(recent, Channel::recency, 1.0 - cfg.alpha);
  return out;
}

std::vector<ScoredItem> select_top(std::vector<ScoredItem> scored, std::size_t k) {
  std::sort(scored.begin(), scored.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (!same_score(a.total, b.total)) return a.total > b.total;
    if (a.channel != b.channel) return a.channel == Channel::relevance;
    if (a.position != b.position) return a.position < b.position;
    return a.item_id < b.item_id;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

std::vector<std::string> rerank(std::span<const std::string> relevant,
                                std::span<const std::string> recent, const RerankConfig& cfg) {
  auto top = select_top(score_channels(relevant, recent, cfg), cfg.k);
  std::vector<std::string> out;
  out.reserve(top.size());
  for (auto& s : top) out.push_back(std::move(s.item_id));
  return out;
}

}  // namespace ragrec
