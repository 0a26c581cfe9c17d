#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>

#include "ragrec/corpus.h"
#include "ragrec/linalg.h"

namespace ragrec {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// User-item graph with symmetric normalization. Nodes are users 0..U-1
// followed by items U..U+I-1; each distinct (u, i) edge carries weight
// 1/sqrt(deg(u) * deg(i)).
struct BipartiteGraph {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  SparseMatrix adjacency;
  std::vector<std::size_t> user_degree;
  std::vector<std::size_t> item_degree;
  std::vector<std::vector<std::uint32_t>> user_items;  // sorted, distinct

  // Repeated pairs collapse to one edge. Throws ContractError on an
  // out-of-range id or a node without edges.
  static BipartiteGraph from_edges(std::size_t n_users, std::size_t n_items,
                                   std::span<const std::pair<std::uint32_t, std::uint32_t>> edges);
  static BipartiteGraph from_log(const InteractionLog& log);

  bool has_edge(std::uint32_t user, std::uint32_t item) const;
};

struct NodeEmbeddings {
  Matrix users;  // n_users x d
  Matrix items;  // n_items x d
};

// Mean over layers 0..L of A^l E, with A the normalized adjacency.
NodeEmbeddings propagate(const NodeEmbeddings& emb0, const BipartiteGraph& graph, int layers);

struct BprTriple {
  std::uint32_t user;
  std::uint32_t pos;
  std::uint32_t neg;
};

struct BprGradient {
  double loss = 0.0;
  Matrix users;
  Matrix items;
};

// loss = (1/B) * sum_b [ -log sigmoid(<u,p> - <u,n>) + reg/2 * (|u|^2 + |p|^2 + |n|^2) ]
// and its gradient with respect to every user and item row.
BprGradient bpr_loss_grad(std::span<const BprTriple> batch, const NodeEmbeddings& emb, double reg);

// One SGD step on `emb`; returns the loss before the step.
double bpr_step(std::span<const BprTriple> batch, NodeEmbeddings& emb, double lr, double reg);

// Loss of a LightGCN model: BPR on the propagated embeddings plus the L2 term
// on the layer-0 rows in the batch, with the gradient taken w.r.t. layer 0.
BprGradient lightgcn_loss_grad(std::span<const BprTriple> batch, const NodeEmbeddings& emb0,
                               const BipartiteGraph& graph, int layers, double reg);

struct LightGcnConfig {
  std::size_t dim = 64;
  int layers = 2;
  double lr = 1e-3;
  double reg = 1e-4;
  int epochs = 100;
  int neg_per_pos = 1;
  std::size_t batch_size = 2048;
  std::uint64_t seed = 0;
  double init_std = 0.01;
  std::string optimizer = "sgd";  // "sgd" or "adam"

  void validate() const;
};

struct CollaEmbeddings {
  Matrix users;  // propagated
  Matrix items;  // propagated
  int layers = 0;
  std::uint64_t seed = 0;
  int epochs = 0;
  std::vector<double> epoch_loss;
};

// Initial N(0, init_std^2) embeddings, the same draw train_lightgcn starts from.
NodeEmbeddings init_embeddings(std::size_t n_users, std::size_t n_items, std::size_t dim,
                               double init_std, std::uint64_t seed);

// Negatives are drawn uniformly from items the user never interacted with.
// Throws TrainingError when the loss stops being finite.
CollaEmbeddings train_lightgcn(const BipartiteGraph& graph, const LightGcnConfig& config);
CollaEmbeddings train_lightgcn(const InteractionLog& log, const LightGcnConfig& config);

// Fraction of triples ranked correctly (<u,p> > <u,n>); ties count 1/2.
double triple_auc(std::span<const BprTriple> triples, const Matrix& users, const Matrix& items);

}  // namespace ragrec
