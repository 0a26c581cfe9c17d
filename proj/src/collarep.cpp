#include "ragrec/collarep.h"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "ragrec/error.h"
#include "ragrec/rng.h"

namespace ragrec {

namespace {

// -log sigmoid(x), stable for large |x|.
double neg_log_sigmoid(double x) {
  return x >= 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix stack(const NodeEmbeddings& e) {
  Matrix all(e.users.rows() + e.items.rows(), e.users.cols());
  all.topRows(e.users.rows()) = e.users;
  all.bottomRows(e.items.rows()) = e.items;
  return all;
}

NodeEmbeddings unstack(const Matrix& all, Eigen::Index n_users) {
  return {all.topRows(n_users), all.bottomRows(all.rows() - n_users)};
}

}  // namespace

BipartiteGraph BipartiteGraph::from_edges(
    std::size_t n_users, std::size_t n_items,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> edges) {
  BipartiteGraph g;
  g.n_users = n_users;
  g.n_items = n_items;
  g.user_items.assign(n_users, {});
  for (auto [u, i] : edges) {
    if (u >= n_users || i >= n_items) throw ContractError("graph edge out of range");
    g.user_items[u].push_back(i);
  }
  g.user_degree.assign(n_users, 0);
  g.item_degree.assign(n_items, 0);
  for (std::size_t u = 0; u < n_users; ++u) {
    auto& items = g.user_items[u];
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    g.user_degree[u] = items.size();
    for (auto i : items) ++g.item_degree[i];
  }
  for (std::size_t u = 0; u < n_users; ++u) {
    if (g.user_degree[u] == 0) throw ContractError("user " + std::to_string(u) + " has no edges");
  }
  for (std::size_t i = 0; i < n_items; ++i) {
    if (g.item_degree[i] == 0) throw ContractError("item " + std::to_string(i) + " has no edges");
  }

  const auto n = static_cast<Eigen::Index>(n_users + n_items);
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t u = 0; u < n_users; ++u) {
    for (auto i : g.user_items[u]) {
      const double w =
          1.0 / std::sqrt(static_cast<double>(g.user_degree[u]) * static_cast<double>(g.item_degree[i]));
      const auto a = static_cast<Eigen::Index>(u);
      const auto b = static_cast<Eigen::Index>(n_users + i);
      trips.emplace_back(a, b, w);
      trips.emplace_back(b, a, w);
    }
  }
  g.adjacency.resize(n, n);
  g.adjacency.setFromTriplets(trips.begin(), trips.end());
  g.adjacency.makeCompressed();
  return g;
}

BipartiteGraph BipartiteGraph::from_log(const InteractionLog& log) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  edges.reserve(log.size());
  for (std::size_t r = 0; r < log.size(); ++r) edges.emplace_back(log.user_of(r), log.item_of(r));
  return from_edges(log.n_users(), log.n_items(), edges);
}

bool BipartiteGraph::has_edge(std::uint32_t user, std::uint32_t item) const {
  const auto& items = user_items[user];
  return std::binary_search(items.begin(), items.end(), item);
}

NodeEmbeddings propagate(const NodeEmbeddings& emb0, const BipartiteGraph& graph, int layers) {
  if (layers < 0) throw ContractError("propagate: layers must be >= 0");
  if (emb0.users.rows() != static_cast<Eigen::Index>(graph.n_users) ||
      emb0.items.rows() != static_cast<Eigen::Index>(graph.n_items) ||
      emb0.users.cols() != emb0.items.cols()) {
    throw ContractError("propagate: embedding shapes do not match the graph");
  }
  Matrix cur = stack(emb0);
  Matrix acc = cur;
  for (int l = 0; l < layers; ++l) {
    cur = graph.adjacency * cur;
    acc += cur;
  }
  acc /= static_cast<double>(layers + 1);
  return unstack(acc, emb0.users.rows());
}

BprGradient bpr_loss_grad(std::span<const BprTriple> batch, const NodeEmbeddings& emb, double reg) {
  BprGradient g;
  g.users = Matrix::Zero(emb.users.rows(), emb.users.cols());
  g.items = Matrix::Zero(emb.items.rows(), emb.items.cols());
  if (batch.empty()) return g;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& t : batch) {
    if (t.user >= emb.users.rows() || t.pos >= emb.items.rows() || t.neg >= emb.items.rows()) {
      throw ContractError("bpr: triple index out of range");
    }
    auto u = emb.users.row(t.user);
    auto p = emb.items.row(t.pos);
    auto n = emb.items.row(t.neg);
    const double x = u.dot(p) - u.dot(n);
    loss += neg_log_sigmoid(x) + 0.5 * reg * (u.squaredNorm() + p.squaredNorm() + n.squaredNorm());
    // d/dx of -log sigmoid(x) is -sigmoid(-x).
    const double coef = -sigmoid(-x) * inv_b;
    g.users.row(t.user) += coef * (p - n) + reg * inv_b * u;
    g.items.row(t.pos) += coef * u + reg * inv_b * p;
    g.items.row(t.neg) += -coef * u + reg * inv_b * n;
  }
  g.loss = loss * inv_b;
  return g;
}

double bpr_step(std::span<const BprTriple> batch, NodeEmbeddings& emb, double lr, double reg) {
  if (!(lr > 0.0)) throw ContractError("bpr_step: lr must be > 0");
  auto g = bpr_loss_grad(batch, emb, reg);
  emb.users -= lr * g.users;
  emb.items -= lr * g.items;
  return g.loss;
}

BprGradient lightgcn_loss_grad(std::span<const BprTriple> batch, const NodeEmbeddings& emb0,
                               const BipartiteGraph& graph, int layers, double reg) {
  auto final_emb = propagate(emb0, graph, layers);
  auto g = bpr_loss_grad(batch, final_emb, 0.0);
  // The propagation operator is a polynomial in a symmetric matrix, so its
  // transpose is itself.
  auto back = propagate({g.users, g.items}, graph, layers);
  g.users = std::move(back.users);
  g.items = std::move(back.items);
  if (reg > 0.0 && !batch.empty()) {
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double penalty = 0.0;
    for (const auto& t : batch) {
      auto u = emb0.users.row(t.user);
      auto p = emb0.items.row(t.pos);
      auto n = emb0.items.row(t.neg);
      penalty += u.squaredNorm() + p.squaredNorm() + n.squaredNorm();
      g.users.row(t.user) += reg * inv_b * u;
      g.items.row(t.pos) += reg * inv_b * p;
      g.items.row(t.neg) += reg * inv_b * n;
    }
    g.loss += 0.5 * reg * penalty * inv_b;
  }
  return g;
}

void LightGcnConfig::validate() const {
  if (dim == 0) throw ContractError("lightgcn: dim must be > 0");
  if (layers < 0) throw ContractError("lightgcn: layers must be >= 0");
  if (!(lr > 0.0)) throw ContractError("lightgcn: lr must be > 0");
  if (reg < 0.0) throw ContractError("lightgcn: reg must be >= 0");
  if (epochs < 0) throw ContractError("lightgcn: epochs must be >= 0");
  if (neg_per_pos < 1) throw ContractError("lightgcn: neg_per_pos must be >= 1");
  if (batch_size == 0) throw ContractError("lightgcn: batch_size must be > 0");
  if (optimizer != "sgd" && optimizer != "adam") {
    throw ContractError("lightgcn: optimizer must be \"sgd\" or \"adam\"");
  }
}

NodeEmbeddings init_embeddings(std::size_t n_users, std::size_t n_items, std::size_t dim,
                               double init_std, std::uint64_t seed) {
  Rng rng(mix_seed(seed));
  NodeEmbeddings e{Matrix(n_users, dim), Matrix(n_items, dim)};
  for (Eigen::Index i = 0; i < e.users.size(); ++i) e.users.data()[i] = rng.normal(0.0, init_std);
  for (Eigen::Index i = 0; i < e.items.size(); ++i) e.items.data()[i] = rng.normal(0.0, init_std);
  return e;
}

CollaEmbeddings train_lightgcn(const BipartiteGraph& graph, const LightGcnConfig& config) {
  config.validate();
  for (std::size_t u = 0; u < graph.n_users; ++u) {
    if (graph.user_degree[u] >= graph.n_items) {
      throw ContractError("lightgcn: user " + std::to_string(u) + " has no negative items");
    }
  }
  auto emb = init_embeddings(graph.n_users, graph.n_items, config.dim, config.init_std, config.seed);
  Rng rng(mix_seed(config.seed ^ 0x6e65676174697665ULL));

  std::vector<std::pair<std::uint32_t, std::uint32_t>> positives;
  for (std::size_t u = 0; u < graph.n_users; ++u) {
    for (auto i : graph.user_items[u]) positives.emplace_back(static_cast<std::uint32_t>(u), i);
  }

  CollaEmbeddings out;
  out.layers = config.layers;
  out.seed = config.seed;
  out.epochs = config.epochs;
  AdamState adam_users, adam_items;
  std::vector<BprTriple> triples;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    triples.clear();
    for (auto [u, i] : positives) {
      for (int k = 0; k < config.neg_per_pos; ++k) {
        std::uint32_t neg;
        do {
          neg = static_cast<std::uint32_t>(rng.below(graph.n_items));
        } while (graph.has_edge(u, neg));
        triples.push_back({u, i, neg});
      }
    }
    rng.shuffle(std::span<BprTriple>(triples));

    double weighted = 0.0;
    for (std::size_t start = 0; start < triples.size(); start += config.batch_size) {
      const auto len = std::min(config.batch_size, triples.size() - start);
      std::span<const BprTriple> batch(triples.data() + start, len);
      auto g = lightgcn_loss_grad(batch, emb, graph, config.layers, config.reg);
      if (!std::isfinite(g.loss)) throw TrainingError("lightgcn loss is not finite", epoch);
      weighted += g.loss * static_cast<double>(len);
      if (config.optimizer == "adam") {
        adam_users.update(emb.users, g.users, config.lr);
        adam_items.update(emb.items, g.items, config.lr);
      } else {
        emb.users -= config.lr * g.users;
        emb.items -= config.lr * g.items;
      }
    }
    const double epoch_loss = triples.empty() ? 0.0 : weighted / static_cast<double>(triples.size());
    if (!std::isfinite(epoch_loss) || !emb.users.allFinite() || !emb.items.allFinite()) {
      throw TrainingError("lightgcn diverged", epoch);
    }
    out.epoch_loss.push_back(epoch_loss);
    spdlog::debug("lightgcn epoch {} loss {:.6f}", epoch, epoch_loss);
  }
  auto final_emb = propagate(emb, graph, config.layers);
  out.users = std::move(final_emb.users);
  out.items = std::move(final_emb.items);
  return out;
}

CollaEmbeddings train_lightgcn(const InteractionLog& log, const LightGcnConfig& config) {
  return train_lightgcn(BipartiteGraph::from_log(log), config);
}

double triple_auc(std::span<const BprTriple> triples, const Matrix& users, const Matrix& items) {
  if (triples.empty()) throw MetricError("triple_auc: no triples");
  double hits = 0.0;
  for (const auto& t : triples) {
    const double sp = users.row(t.user).dot(items.row(t.pos));
    const double sn = users.row(t.user).dot(items.row(t.neg));
    hits += sp > sn ? 1.0 : (sp == sn ? 0.5 : 0.0);
  }
  return hits / static_cast<double>(triples.size());
}

}  // namespace ragrec
