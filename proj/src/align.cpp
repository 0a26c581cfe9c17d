#include "ragrec/align.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

#include "ragrec/error.h"
#include "ragrec/io.h"
#include "ragrec/rng.h"

namespace ragrec {

using nlohmann::json;

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ContractError("unknown activation '" + name + "'");
}

Projector Projector::init(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim,
                          Activation activation, std::uint64_t seed) {
  auto p = zeros(input_dim, hidden_dim, output_dim, activation);
  Rng rng(mix_seed(seed ^ 0x70726f6aULL));
  const double s1 = std::sqrt(2.0 / static_cast<double>(input_dim));
  const double s2 = std::sqrt(1.0 / static_cast<double>(hidden_dim));
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = rng.normal(0.0, s1);
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2.data()[i] = rng.normal(0.0, s2);
  return p;
}

Projector Projector::zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim,
                           Activation activation) {
  if (input_dim == 0 || hidden_dim == 0 || output_dim == 0) {
    throw ContractError("projector dimensions must be > 0");
  }
  Projector p;
  p.w1 = Matrix::Zero(hidden_dim, input_dim);
  p.b1 = Matrix::Zero(1, hidden_dim);
  p.w2 = Matrix::Zero(output_dim, hidden_dim);
  p.b2 = Matrix::Zero(1, output_dim);
  p.activation = activation;
  return p;
}

bool Projector::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
}

namespace {

struct Forward {
  Matrix hidden_pre;  // B x h
  Matrix hidden;      // B x h
  Matrix out;         // B x d_out
};

Forward forward(const Matrix& x, const Projector& proj) {
  if (static_cast<std::size_t>(x.cols()) != proj.input_dim()) {
    throw ContractError("projector expects input dimension " + std::to_string(proj.input_dim()) +
                        ", got " + std::to_string(x.cols()));
  }
  Forward f;
  f.hidden_pre = x * proj.w1.transpose();
  f.hidden_pre.rowwise() += proj.b1.row(0);
  f.hidden = proj.activation == Activation::relu ? Matrix(f.hidden_pre.cwiseMax(0.0)) : f.hidden_pre;
  f.out = f.hidden * proj.w2.transpose();
  f.out.rowwise() += proj.b2.row(0);
  return f;
}

// Rows with zero norm normalize to zero: their cosine with anything is 0.
Matrix scale_rows(const Matrix& m, const Vector& norms) {
  Vector inv = Vector::Zero(norms.size());
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (norms(i) > 0.0) inv(i) = 1.0 / norms(i);
  }
  return inv.asDiagonal() * m;
}

void check_batch(const Matrix& text, const Matrix& colla, const Projector& proj, double tau) {
  if (text.rows() != colla.rows()) throw ContractError("ssl: text and colla batches differ in size");
  if (text.rows() < 1) throw ContractError("ssl: empty batch");
  if (static_cast<std::size_t>(colla.cols()) != proj.output_dim()) {
    throw ContractError("ssl: collaborative dimension does not match projector output");
  }
  if (!(tau > 0.0)) throw ContractError("ssl: temperature must be > 0");
}

double ssl_core(const Matrix& text, const Matrix& colla, const Projector& proj, double tau,
                ProjectorGrad* grad) {
  check_batch(text, colla, proj, tau);
  const auto b = text.rows();
  auto f = forward(text, proj);
  const Vector z_norm = f.out.rowwise().norm();
  const Vector c_norm = colla.rowwise().norm();
  const Matrix zn = scale_rows(f.out, z_norm);
  const Matrix cn = scale_rows(colla, c_norm);
  const Matrix s = (zn * cn.transpose()) / tau;

  Matrix row_sm(b, b), col_sm(b, b);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double m = s.row(i).maxCoeff();
    const double lse = m + std::log((s.row(i).array() - m).exp().sum());
    row_sm.row(i) = (s.row(i).array() - lse).exp();
    loss -= s(i, i) - lse;
  }
  for (Eigen::Index j = 0; j < b; ++j) {
    const double m = s.col(j).maxCoeff();
    const double lse = m + std::log((s.col(j).array() - m).exp().sum());
    col_sm.col(j) = (s.col(j).array() - lse).exp();
    loss -= s(j, j) - lse;
  }
  loss /= static_cast<double>(b);
  if (!grad) return loss;

  Matrix g_s = row_sm + col_sm;
  g_s.diagonal().array() -= 2.0;
  g_s /= static_cast<double>(b);
  const Matrix g_zn = (g_s * cn) / tau;
  Matrix g_z(b, f.out.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    if (!(z_norm(i) > 0.0)) {
      g_z.row(i).setZero();
      continue;
    }
    const double d = zn.row(i).dot(g_zn.row(i));
    g_z.row(i) = (g_zn.row(i) - d * zn.row(i)) / z_norm(i);
  }
  grad->w2 = g_z.transpose() * f.hidden;
  grad->b2 = g_z.colwise().sum();
  Matrix g_h = g_z * proj.w2;
  if (proj.activation == Activation::relu) {
    g_h = g_h.cwiseProduct((f.hidden_pre.array() > 0.0).cast<double>().matrix());
  }
  grad->w1 = g_h.transpose() * text;
  grad->b1 = g_h.colwise().sum();
  return loss;
}

}  // namespace

Vector project(const Vector& e_text, const Projector& proj) {
  Matrix x = e_text.transpose();
  return forward(x, proj).out.row(0).transpose();
}

Matrix project_rows(const Matrix& e_text, const Projector& proj) {
  return forward(e_text, proj).out;
}

double cosine_similarity(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ContractError("cosine: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw ContractError("cosine similarity undefined for zero vector");
  return a.dot(b) / (na * nb);
}

double ssl_loss(const Matrix& batch_text, const Matrix& batch_colla, const Projector& proj,
                double tau) {
  return ssl_core(batch_text, batch_colla, proj, tau, nullptr);
}

double ssl_loss_grad(const Matrix& batch_text, const Matrix& batch_colla, const Projector& proj,
                     double tau, ProjectorGrad& grad) {
  return ssl_core(batch_text, batch_colla, proj, tau, &grad);
}

double ssl_loss_full(const Matrix& text, const Matrix& colla, const Projector& proj, double tau,
                     std::size_t block) {
  check_batch(text, colla, proj, tau);
  if (block == 0) throw ContractError("ssl_loss_full: block must be > 0");
  const auto n = text.rows();
  const Matrix z = project_rows(text, proj);
  const Matrix zn = scale_rows(z, z.rowwise().norm());
  const Matrix cn = scale_rows(colla, colla.rowwise().norm());

  Vector col_max = Vector::Constant(n, -std::numeric_limits<double>::infinity());
  Vector col_sum = Vector::Zero(n);
  double loss = 0.0;
  const auto blk = static_cast<Eigen::Index>(block);
  for (Eigen::Index start = 0; start < n; start += blk) {
    const auto len = std::min(blk, n - start);
    const Matrix s = (zn.middleRows(start, len) * cn.transpose()) / tau;
    for (Eigen::Index r = 0; r < len; ++r) {
      const double m = s.row(r).maxCoeff();
      const double lse = m + std::log((s.row(r).array() - m).exp().sum());
      loss -= s(r, start + r) - lse;
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const double m_blk = s.col(j).maxCoeff();
      const double m_new = std::max(col_max(j), m_blk);
      col_sum(j) = col_sum(j) * std::exp(col_max(j) - m_new) + (s.col(j).array() - m_new).exp().sum();
      col_max(j) = m_new;
    }
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const double diag = zn.row(j).dot(cn.row(j)) / tau;
    loss -= diag - (col_max(j) + std::log(col_sum(j)));
  }
  return loss / static_cast<double>(n);
}

void AlignConfig::validate() const {
  if (!(tau > 0.0)) throw ContractError("align: tau must be > 0");
  if (batch_size < 2) throw ContractError("align: batch size must be >= 2");
  if (!(lr > 0.0)) throw ContractError("align: lr must be > 0");
  if (epochs < 0) throw ContractError("align: epochs must be >= 0");
  if (optimizer != "adam" && optimizer != "sgd") {
    throw ContractError("align: optimizer must be \"adam\" or \"sgd\"");
  }
}

json AlignConfig::to_json() const {
  return {{"hidden", hidden},         {"tau", tau},   {"batch_size", batch_size},
          {"lr", lr},                 {"epochs", epochs}, {"seed", seed},
          {"full_corpus_eval", full_corpus_eval}, {"activation", ragrec::to_string(activation)},
          {"optimizer", optimizer}};
}

AlignResult train_projector(const Matrix& text, const Matrix& colla, const AlignConfig& config) {
  config.validate();
  if (text.rows() != colla.rows()) {
    throw ContractError("align: text and collaborative stores cover different item counts");
  }
  if (text.rows() < 2) throw ContractError("align: need at least 2 items");
  const auto n = static_cast<std::size_t>(text.rows());
  const std::size_t hidden = config.hidden ? config.hidden : static_cast<std::size_t>(colla.cols());

  AlignResult out;
  out.projector = Projector::init(static_cast<std::size_t>(text.cols()), hidden,
                                  static_cast<std::size_t>(colla.cols()), config.activation,
                                  config.seed);
  out.initial_loss = ssl_loss_full(text, colla, out.projector, config.tau);

  Rng rng(mix_seed(config.seed ^ 0x616c69676eULL));
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  AdamState a_w1, a_b1, a_w2, a_b2;
  ProjectorGrad g;
  auto& p = out.projector;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span<Eigen::Index>(order));
    double weighted = 0.0;
    std::size_t start = 0;
    while (start < n) {
      std::size_t len = std::min(config.batch_size, n - start);
      // A single leftover row has no negatives; fold it into this batch.
      if (n - start - len == 1) ++len;
      std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(start + len));
      const Matrix bt = text(idx, Eigen::all);
      const Matrix bc = colla(idx, Eigen::all);
      const double loss = ssl_loss_grad(bt, bc, p, config.tau, g);
      if (!std::isfinite(loss)) throw TrainingError("alignment loss is not finite", epoch);
      weighted += loss * static_cast<double>(len);
      if (config.optimizer == "adam") {
        a_w1.update(p.w1, g.w1, config.lr);
        a_b1.update(p.b1, g.b1, config.lr);
        a_w2.update(p.w2, g.w2, config.lr);
        a_b2.update(p.b2, g.b2, config.lr);
      } else {
        p.w1 -= config.lr * g.w1;
        p.b1 -= config.lr * g.b1;
        p.w2 -= config.lr * g.w2;
        p.b2 -= config.lr * g.b2;
      }
      start += len;
    }
    if (!p.all_finite()) throw TrainingError("projector parameters are not finite", epoch);
    out.epoch_loss.push_back(weighted / static_cast<double>(n));
    if (config.full_corpus_eval) {
      const double full = ssl_loss_full(text, colla, p, config.tau);
      if (!std::isfinite(full)) throw TrainingError("full-corpus alignment loss is not finite", epoch);
      out.full_epoch_loss.push_back(full);
    }
    spdlog::debug("align epoch {} loss {:.6f}", epoch, out.epoch_loss.back());
  }
  out.final_loss = ssl_loss_full(text, colla, p, config.tau);
  out.aligned = project_rows(text, p);
  return out;
}

namespace {

void put_f32(std::string& out, double v) {
  auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

float get_f32(std::string_view bytes, std::size_t offset) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) {
    u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return std::bit_cast<float>(u);
}

}  // namespace

void save_projector(const std::filesystem::path& path, const Projector& proj, const json& metadata) {
  json header = {{"format", "ragrec-projector"},
                 {"version", 1},
                 {"input_dim", proj.input_dim()},
                 {"hidden_dim", proj.hidden_dim()},
                 {"output_dim", proj.output_dim()},
                 {"activation", to_string(proj.activation)},
                 {"params", {"w1", "b1", "w2", "b2"}},
                 {"metadata", metadata.is_null() ? json::object() : metadata}};
  std::string out = header.dump();
  out += '\n';
  for (const Matrix* m : {&proj.w1, &proj.b1, &proj.w2, &proj.b2}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) put_f32(out, m->data()[i]);
  }
  write_file_atomic(path, out);
}

Projector load_projector(const std::filesystem::path& path, json* header_out) {
  const auto bytes = read_text_file(path);
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw ParseError(path.string() + ": missing projector header", 1);
  json header = json::parse(bytes.substr(0, nl), nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "ragrec-projector") {
    throw ParseError(path.string() + ": not a projector checkpoint", 1);
  }
  auto proj = Projector::zeros(header.at("input_dim").get<std::size_t>(),
                               header.at("hidden_dim").get<std::size_t>(),
                               header.at("output_dim").get<std::size_t>(),
                               activation_from_string(header.at("activation").get<std::string>()));
  std::size_t offset = nl + 1;
  const std::size_t total =
      static_cast<std::size_t>(proj.w1.size() + proj.b1.size() + proj.w2.size() + proj.b2.size());
  if (bytes.size() != offset + 4 * total) {
    throw ParseError(path.string() + ": parameter blob size does not match header", 0);
  }
  for (Matrix* m : {&proj.w1, &proj.b1, &proj.w2, &proj.b2}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      m->data()[i] = get_f32(bytes, offset);
      offset += 4;
    }
  }
  if (header_out) *header_out = std::move(header);
  return proj;
}

}  // namespace ragrec
