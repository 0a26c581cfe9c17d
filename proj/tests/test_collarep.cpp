#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "ragrec/collarep.h"
#include "ragrec/error.h"
#include "ragrec/rng.h"
#include "two_block.h"

namespace ragrec {
namespace {

using Edges = std::vector<std::pair<std::uint32_t, std::uint32_t>>;

BipartiteGraph toy_graph() { return BipartiteGraph::from_edges(1, 2, Edges{{0, 0}, {0, 1}}); }

NodeEmbeddings toy_embeddings() {
  NodeEmbeddings e;
  e.users = Matrix::Zero(1, 2);
  e.items = Matrix(2, 2);
  e.items << 1, 0, 0, 1;
  return e;
}

BipartiteGraph random_graph(std::uint64_t seed, std::size_t users, std::size_t items) {
  Rng rng(seed);
  Edges edges;
  for (std::uint32_t u = 0; u < users; ++u) edges.emplace_back(u, static_cast<std::uint32_t>(u % items));
  for (std::uint32_t i = 0; i < items; ++i) edges.emplace_back(static_cast<std::uint32_t>(i % users), i);
  for (std::size_t k = 0; k < users * 3; ++k) {
    edges.emplace_back(static_cast<std::uint32_t>(rng.below(users)), static_cast<std::uint32_t>(rng.below(items)));
  }
  return BipartiteGraph::from_edges(users, items, edges);
}

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

TEST(BipartiteGraph, SymmetricNormalization) {
  auto g = BipartiteGraph::from_edges(2, 3, Edges{{0, 0}, {0, 1}, {1, 1}, {1, 2}, {0, 0}});
  EXPECT_EQ(g.user_degree, (std::vector<std::size_t>{2, 2}));
  EXPECT_EQ(g.item_degree, (std::vector<std::size_t>{1, 2, 1}));
  Eigen::MatrixXd a = Eigen::MatrixXd(g.adjacency);
  EXPECT_TRUE(a.isApprox(a.transpose()));
  EXPECT_NEAR(a(0, 2 + 0), 1.0 / std::sqrt(2.0 * 1.0), 1e-15);
  EXPECT_NEAR(a(0, 2 + 1), 1.0 / std::sqrt(2.0 * 2.0), 1e-15);
  EXPECT_EQ(a(0, 1), 0.0);
  EXPECT_TRUE(g.has_edge(1, 2));
  EXPECT_FALSE(g.has_edge(0, 2));
}

TEST(BipartiteGraph, RejectsIsolatedAndOutOfRange) {
  EXPECT_THROW(BipartiteGraph::from_edges(2, 2, Edges{{0, 0}, {0, 1}}), ContractError);
  EXPECT_THROW(BipartiteGraph::from_edges(1, 1, Edges{{0, 0}, {0, 1}}), ContractError);
}

TEST(Propagate, ThreeNodeOracle) {
  auto out = propagate(toy_embeddings(), toy_graph(), 1);
  const double h = 0.5 / std::sqrt(2.0);
  EXPECT_NEAR(out.users(0, 0), h, 1e-9);
  EXPECT_NEAR(out.users(0, 1), h, 1e-9);
  EXPECT_NEAR(out.users(0, 0), 0.35355, 1e-5);
  EXPECT_NEAR(out.items(0, 0), 0.5, 1e-9);
  EXPECT_NEAR(out.items(0, 1), 0.0, 1e-9);
  EXPECT_NEAR(out.items(1, 0), 0.0, 1e-9);
  EXPECT_NEAR(out.items(1, 1), 0.5, 1e-9);
}

TEST(Propagate, ZeroLayersIsIdentity) {
  Rng rng(4);
  auto g = random_graph(1, 6, 5);
  NodeEmbeddings e{random_matrix(rng, 6, 3), random_matrix(rng, 5, 3)};
  auto out = propagate(e, g, 0);
  EXPECT_EQ(out.users, e.users);
  EXPECT_EQ(out.items, e.items);
}

TEST(Propagate, IsLinear) {
  Rng rng(9);
  auto g = random_graph(2, 12, 9);
  NodeEmbeddings a{random_matrix(rng, 12, 4), random_matrix(rng, 9, 4)};
  NodeEmbeddings b{random_matrix(rng, 12, 4), random_matrix(rng, 9, 4)};
  const double s = -2.75;
  auto pa = propagate(a, g, 3), pb = propagate(b, g, 3);
  auto ps = propagate({s * a.users, s * a.items}, g, 3);
  EXPECT_LT((ps.users - s * pa.users).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((ps.items - s * pa.items).cwiseAbs().maxCoeff(), 1e-9);
  auto psum = propagate({a.users + b.users, a.items + b.items}, g, 3);
  EXPECT_LT((psum.users - pa.users - pb.users).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Propagate, RejectsShapeMismatch) {
  Rng rng(1);
  NodeEmbeddings e{random_matrix(rng, 2, 2), random_matrix(rng, 2, 2)};
  EXPECT_THROW(propagate(e, toy_graph(), 1), ContractError);
  EXPECT_THROW(propagate(toy_embeddings(), toy_graph(), -1), ContractError);
}

TEST(Bpr, EqualScoresGiveLn2) {
  NodeEmbeddings e;
  e.users = Matrix::Ones(1, 2);
  e.items = Matrix(2, 2);
  e.items << 1, 0, 0, 1;
  std::vector<BprTriple> batch{{0, 0, 1}};
  EXPECT_NEAR(bpr_loss_grad(batch, e, 0.0).loss, std::log(2.0), 1e-15);
  // The regularizer adds reg/2 * (|u|^2 + |p|^2 + |n|^2) = 0.1/2 * 4.
  EXPECT_NEAR(bpr_loss_grad(batch, e, 0.1).loss, std::log(2.0) + 0.2, 1e-15);
}

TEST(Bpr, SeparatedScoresApproachZero) {
  NodeEmbeddings e;
  e.users = Matrix(1, 1);
  e.users << 1;
  e.items = Matrix(2, 1);
  e.items << 40, -40;
  std::vector<BprTriple> batch{{0, 0, 1}};
  const double loss = bpr_loss_grad(batch, e, 0.0).loss;
  EXPECT_GT(loss, 0.0);
  EXPECT_LT(loss, 1e-30);
}

double max_rel_error(const Matrix& analytic, const Matrix& numeric) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i], n = numeric.data()[i];
    const double denom = std::max({std::abs(a), std::abs(n), 1e-6});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

template <typename LossFn>
std::pair<Matrix, Matrix> numeric_grad(NodeEmbeddings e, LossFn loss) {
  const double h = 1e-6;
  Matrix gu(e.users.rows(), e.users.cols()), gi(e.items.rows(), e.items.cols());
  for (Eigen::Index k = 0; k < e.users.size(); ++k) {
    const double x = e.users.data()[k];
    e.users.data()[k] = x + h;
    const double up = loss(e);
    e.users.data()[k] = x - h;
    const double down = loss(e);
    e.users.data()[k] = x;
    gu.data()[k] = (up - down) / (2 * h);
  }
  for (Eigen::Index k = 0; k < e.items.size(); ++k) {
    const double x = e.items.data()[k];
    e.items.data()[k] = x + h;
    const double up = loss(e);
    e.items.data()[k] = x - h;
    const double down = loss(e);
    e.items.data()[k] = x;
    gi.data()[k] = (up - down) / (2 * h);
  }
  return {gu, gi};
}

TEST(Bpr, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    NodeEmbeddings e{random_matrix(rng, 4, 3), random_matrix(rng, 6, 3)};
    std::vector<BprTriple> batch;
    for (int b = 0; b < 5; ++b) {
      batch.push_back({static_cast<std::uint32_t>(rng.below(4)), static_cast<std::uint32_t>(rng.below(6)),
                       static_cast<std::uint32_t>(rng.below(6))});
    }
    auto g = bpr_loss_grad(batch, e, 0.01);
    auto [nu, ni] = numeric_grad(e, [&](const NodeEmbeddings& x) { return bpr_loss_grad(batch, x, 0.01).loss; });
    EXPECT_LT(max_rel_error(g.users, nu), 1e-4);
    EXPECT_LT(max_rel_error(g.items, ni), 1e-4);
  }
}

TEST(Bpr, StepMovesAgainstGradient) {
  Rng rng(3);
  NodeEmbeddings e{random_matrix(rng, 2, 3), random_matrix(rng, 3, 3)};
  std::vector<BprTriple> batch{{0, 1, 2}, {1, 0, 2}};
  auto g = bpr_loss_grad(batch, e, 0.0);
  auto before = e;
  const double loss = bpr_step(batch, e, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(loss, g.loss);
  EXPECT_LT((e.users - (before.users - 0.1 * g.users)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((e.items - (before.items - 0.1 * g.items)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(bpr_loss_grad(batch, e, 0.0).loss, loss);
  EXPECT_THROW(bpr_step(batch, e, 0.0, 0.0), ContractError);
}

TEST(LightGcnLoss, GradientThroughPropagationMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed + 100);
    auto g = random_graph(seed, 5, 4);
    NodeEmbeddings e{random_matrix(rng, 5, 3), random_matrix(rng, 4, 3)};
    std::vector<BprTriple> batch{{0, 1, 2}, {3, 0, 3}, {4, 2, 1}};
    auto grad = lightgcn_loss_grad(batch, e, g, 2, 0.05);
    auto [nu, ni] = numeric_grad(e, [&](const NodeEmbeddings& x) { return lightgcn_loss_grad(batch, x, g, 2, 0.05).loss; });
    EXPECT_LT(max_rel_error(grad.users, nu), 1e-4);
    EXPECT_LT(max_rel_error(grad.items, ni), 1e-4);
  }
}

LightGcnConfig toy_config() {
  LightGcnConfig c;
  c.dim = 8;
  c.batch_size = 16;
  c.lr = 0.5;
  c.init_std = 0.1;
  return c;
}

TEST(TrainLightGcn, LossDecreasesOnToySet) {
  auto g = random_graph(7, 20, 15);
  auto c = toy_config();
  c.epochs = 10;
  auto out = train_lightgcn(g, c);
  ASSERT_EQ(out.epoch_loss.size(), 10u);
  for (double l : out.epoch_loss) EXPECT_TRUE(std::isfinite(l));
  EXPECT_LT(out.epoch_loss[9], out.epoch_loss[0]);
  EXPECT_EQ(out.users.rows(), 20);
  EXPECT_EQ(out.items.rows(), 15);
  EXPECT_EQ(out.items.cols(), 8);
}

TEST(TrainLightGcn, ZeroEpochsReturnsPropagatedInit) {
  auto g = random_graph(1, 10, 8);
  auto c = toy_config();
  c.epochs = 0;
  c.seed = 5;
  auto out = train_lightgcn(g, c);
  auto expect = propagate(init_embeddings(10, 8, c.dim, c.init_std, c.seed), g, c.layers);
  EXPECT_EQ(out.users, expect.users);
  EXPECT_EQ(out.items, expect.items);
  EXPECT_TRUE(out.epoch_loss.empty());
}

TEST(TrainLightGcn, SameSeedIsBitIdentical) {
  auto g = random_graph(2, 15, 12);
  for (const char* opt : {"sgd", "adam"}) {
    auto c = toy_config();
    c.epochs = 5;
    c.optimizer = opt;
    c.lr = 0.01;
    auto a = train_lightgcn(g, c), b = train_lightgcn(g, c);
    EXPECT_EQ(a.users, b.users);
    EXPECT_EQ(a.items, b.items);
    c.seed = 1;
    EXPECT_NE(train_lightgcn(g, c).items, a.items);
  }
}

TEST(TrainLightGcn, DivergenceNamesEpoch) {
  auto g = random_graph(3, 10, 8);
  auto c = toy_config();
  c.lr = 1e300;
  c.init_std = 1e10;
  c.epochs = 3;
  try {
    train_lightgcn(g, c);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_GE(e.epoch(), 1);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(TrainLightGcn, ConfigValidation) {
  auto g = toy_graph();
  auto c = toy_config();
  c.optimizer = "rmsprop";
  EXPECT_THROW(train_lightgcn(random_graph(1, 5, 5), c), ContractError);
  // The lone user has interacted with every item, so no negative exists.
  EXPECT_THROW(train_lightgcn(g, toy_config()), ContractError);
}

TEST(TrainLightGcn, RecoversPlantedBlocks) {
  auto split = testing::two_block_split(0);
  LightGcnConfig c;
  c.epochs = 50;
  c.optimizer = "adam";
  c.lr = 0.01;
  c.batch_size = 1024;
  auto out = train_lightgcn(split.train, c);
  EXPECT_GT(triple_auc(split.held_out, out.users, out.items), 0.8);
}

TEST(TripleAuc, CountsTiesAsHalf) {
  Matrix users(1, 1), items(3, 1);
  users << 1;
  items << 2, 1, 1;
  std::vector<BprTriple> t{{0, 0, 1}, {0, 1, 2}, {0, 1, 0}};
  EXPECT_DOUBLE_EQ(triple_auc(t, users, items), 0.5);
  EXPECT_THROW(triple_auc({}, users, items), MetricError);
}

}  // namespace
}  // namespace ragrec
