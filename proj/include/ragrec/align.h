#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ragrec/linalg.h"

namespace ragrec {

enum class Activation { relu, identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Two-layer MLP mapping text embeddings into the collaborative space:
// z = W2 * act(W1 * x + b1) + b2.
struct Projector {
  Matrix w1;  // hidden x input
  Matrix b1;  // 1 x hidden
  Matrix w2;  // output x hidden
  Matrix b2;  // 1 x output
  Activation activation = Activation::relu;

  std::size_t input_dim() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(w2.rows()); }

  // He-style Gaussian weights, zero biases.
  static Projector init(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim,
                        Activation activation, std::uint64_t seed);
  static Projector zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim,
                         Activation activation);

  bool all_finite() const;
  bool operator==(const Projector&) const = default;
};

Vector project(const Vector& e_text, const Projector& proj);
// Row-wise projection of a batch.
Matrix project_rows(const Matrix& e_text, const Projector& proj);

// Throws ContractError when either vector has zero norm.
double cosine_similarity(const Vector& a, const Vector& b);

struct ProjectorGrad {
  Matrix w1, b1, w2, b2;
};

// Symmetric contrastive loss over a batch whose row i is the same item in
// both matrices:
//   -1/B * sum_i [ log softmax_j(s_ij)[i] + log softmax_v(s_vi)[i] ]
// with s_ij = cos(MLP(text_i), colla_j) / tau. Negatives are the other rows.
// A zero-norm row has cosine 0 with every row and contributes no gradient.
double ssl_loss(const Matrix& batch_text, const Matrix& batch_colla, const Projector& proj,
                double tau = 1.0);
double ssl_loss_grad(const Matrix& batch_text, const Matrix& batch_colla, const Projector& proj,
                     double tau, ProjectorGrad& grad);

// Same value as ssl_loss with the whole corpus as one batch, computed in
// row blocks so memory stays O(block * n).
double ssl_loss_full(const Matrix& text, const Matrix& colla, const Projector& proj,
                     double tau = 1.0, std::size_t block = 256);

struct AlignConfig {
  std::size_t hidden = 0;  // 0 = collaborative dimension
  double tau = 1.0;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  int epochs = 100;
  std::uint64_t seed = 0;
  bool full_corpus_eval = false;  // log full-corpus loss after every epoch
  Activation activation = Activation::relu;
  std::string optimizer = "adam";  // "adam" or "sgd"

  void validate() const;
  nlohmann::json to_json() const;
};

struct AlignResult {
  Projector projector;
  std::vector<double> epoch_loss;       // mean in-batch loss per epoch
  std::vector<double> full_epoch_loss;  // only with full_corpus_eval
  double initial_loss = 0.0;            // full-corpus, before training
  double final_loss = 0.0;              // full-corpus, after training
  Matrix aligned;                       // MLP(text) for every item
};

// Trains only the projector; collaborative embeddings stay fixed.
AlignResult train_projector(const Matrix& text, const Matrix& colla, const AlignConfig& config);

// One JSON header line, then w1, b1, w2, b2 as little-endian f32, row-major.
void save_projector(const std::filesystem::path& path, const Projector& proj,
                    const nlohmann::json& metadata = {});
Projector load_projector(const std::filesystem::path& path, nlohmann::json* header = nullptr);

}  // namespace ragrec
