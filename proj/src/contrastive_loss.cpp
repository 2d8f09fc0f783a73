#include "selip/contrastive_loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "selip/error.hpp"

namespace selip {

namespace {

std::vector<double> row_norms(const Matrix& m, const char* side) {
  std::vector<double> norms(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double ss = 0.0;
    for (double v : m.row(r)) ss += v * v;
    norms[r] = std::sqrt(ss);
    if (!(norms[r] > 0.0)) {
      throw Error(ErrorCode::ZeroNormRow, std::string(side) + " row " + std::to_string(r) + " has zero norm",
                  std::string(side) + "[" + std::to_string(r) + "]");
    }
  }
  return norms;
}

Matrix row_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto in = logits.row(r);
    auto o = out.row(r);
    const double max = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) total += (o[c] = std::exp(in[c] - max));
    for (double& v : o) v /= total;
  }
  return out;
}

double mean_row_kl(const Matrix& P, const Matrix& Q) {
  double total = 0.0;
  for (std::size_t r = 0; r < P.rows(); ++r) {
    double kl = 0.0;
    for (std::size_t c = 0; c < P.cols(); ++c) {
      const double p = P(r, c);
      if (p > 0.0) kl += p * std::log(p / Q(r, c));
    }
    total += kl;
  }
  return total / static_cast<double>(P.rows());
}

void require_square(const Matrix& m, std::size_t n, const char* what) {
  if (m.rows() != n || m.cols() != n) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " must be " + std::to_string(n) + "x" +
                                              std::to_string(n),
                what);
  }
}

}  // namespace

void validate_loss_config(const LossConfig& cfg) {
  if (!(cfg.tau > 0.0)) throw Error(ErrorCode::InvalidConfig, "tau must be > 0", "tau");
  if (!(cfg.alpha >= 0.0)) throw Error(ErrorCode::InvalidConfig, "alpha must be >= 0", "alpha");
  if (!(cfg.beta >= 0.0)) throw Error(ErrorCode::InvalidConfig, "beta must be >= 0", "beta");
  if (!(cfg.alpha + cfg.beta > 0.0)) throw Error(ErrorCode::InvalidConfig, "alpha + beta must be > 0", "alpha");
  if (!(cfg.epsilon_smooth > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "epsilon_smooth must be > 0", "epsilon_smooth");
  }
}

Matrix cosine_matrix(const EmbeddingBatch& batch) {
  const Matrix& V = batch.image_vectors;
  const Matrix& T = batch.text_vectors;
  if (V.rows() != T.rows() || V.cols() != T.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "image and text batches differ in shape");
  }
  const auto nv = row_norms(V, "image");
  const auto nt = row_norms(T, "text");
  Matrix C = matmul_transposed(V, T);
  for (std::size_t i = 0; i < C.rows(); ++i) {
    for (std::size_t j = 0; j < C.cols(); ++j) C(i, j) /= nv[i] * nt[j];
  }
  return C;
}

ProbMatrices prob_matrices(const Matrix& C, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidConfig, "tau must be > 0", "tau");
  Matrix logits(C.rows(), C.cols());
  std::transform(C.data().begin(), C.data().end(), logits.data().begin(), [tau](double c) { return c / tau; });
  return ProbMatrices{row_softmax(logits), row_softmax(logits.transposed())};
}

ClipLoss clip_loss(const Matrix& P_v2t, const Matrix& P_t2v) {
  const std::size_t n = P_v2t.rows();
  require_square(P_v2t, n, "P_v2t");
  require_square(P_t2v, n, "P_t2v");
  ClipLoss loss;
  for (std::size_t i = 0; i < n; ++i) {
    loss.v2t -= std::log(P_v2t(i, i));
    loss.t2v -= std::log(P_t2v(i, i));
  }
  loss.v2t /= static_cast<double>(n);
  loss.t2v /= static_cast<double>(n);
  loss.clip = 0.5 * (loss.v2t + loss.t2v);
  return loss;
}

Matrix soft_target(const Matrix& S, double epsilon_smooth) {
  if (!(epsilon_smooth > 0.0)) throw Error(ErrorCode::InvalidConfig, "epsilon_smooth must be > 0", "epsilon_smooth");
  Matrix Q(S.rows(), S.cols());
  for (std::size_t r = 0; r < S.rows(); ++r) {
    double total = 0.0;
    for (double v : S.row(r)) total += v + epsilon_smooth;
    auto q = Q.row(r);
    const auto s = S.row(r);
    for (std::size_t c = 0; c < s.size(); ++c) q[c] = (s[c] + epsilon_smooth) / total;
  }
  return Q;
}

SeLoss se_loss(const Matrix& P_v2t, const Matrix& P_t2v, const Matrix& S, double epsilon_smooth) {
  const std::size_t n = P_v2t.rows();
  require_square(P_v2t, n, "P_v2t");
  require_square(P_t2v, n, "P_t2v");
  require_square(S, n, "S");
  SeLoss loss;
  loss.v2t = mean_row_kl(P_v2t, soft_target(S, epsilon_smooth));
  loss.t2v = mean_row_kl(P_t2v, soft_target(S.transposed(), epsilon_smooth));
  loss.se = 0.5 * (loss.v2t + loss.t2v);
  return loss;
}

LossBreakdown total_loss(const EmbeddingBatch& batch, const Matrix* S, const LossConfig& cfg) {
  validate_loss_config(cfg);
  if (S == nullptr && cfg.beta != 0.0) {
    throw Error(ErrorCode::InvalidConfig, "beta > 0 needs a similarity matrix", "beta");
  }
  LossBreakdown out;
  out.C = cosine_matrix(batch);
  auto probs = prob_matrices(out.C, cfg.tau);
  out.P_v2t = std::move(probs.v2t);
  out.P_t2v = std::move(probs.t2v);
  const auto clip = clip_loss(out.P_v2t, out.P_t2v);
  out.L_v2t = clip.v2t;
  out.L_t2v = clip.t2v;
  out.L_clip = clip.clip;
  if (S != nullptr) {
    const auto se = se_loss(out.P_v2t, out.P_t2v, *S, cfg.epsilon_smooth);
    out.L_se_v2t = se.v2t;
    out.L_se_t2v = se.t2v;
    out.L_se = se.se;
  }
  out.L_total = cfg.alpha * out.L_clip + cfg.beta * out.L_se;
  return out;
}

LossNodes build_total_loss(Tape& tape, NodeId image, NodeId text, const Matrix* S, const LossConfig& cfg) {
  validate_loss_config(cfg);
  if (S == nullptr && cfg.beta != 0.0) {
    throw Error(ErrorCode::InvalidConfig, "beta > 0 needs a similarity matrix", "beta");
  }
  const std::size_t n = tape.value(image).rows();
  if (!tape.value(image).same_shape(tape.value(text))) {
    throw Error(ErrorCode::ShapeMismatch, "image and text batches differ in shape");
  }
  const NodeId v = tape.div_rows(image, tape.row_l2_norm(image));
  const NodeId t = tape.div_rows(text, tape.row_l2_norm(text));
  const NodeId logits = tape.div_scalar(tape.matmul(v, tape.transpose(t)), cfg.tau);
  const NodeId log_p_v2t = tape.row_log_softmax(logits);
  const NodeId log_p_t2v = tape.row_log_softmax(tape.transpose(logits));

  const NodeId eye = tape.constant(Matrix::identity(n));
  const double inv_n = 1.0 / static_cast<double>(n);
  const NodeId l_v2t = tape.scale(tape.sum(tape.mul(log_p_v2t, eye)), -inv_n);
  const NodeId l_t2v = tape.scale(tape.sum(tape.mul(log_p_t2v, eye)), -inv_n);

  LossNodes nodes{};
  nodes.clip = tape.scale(tape.add(l_v2t, l_t2v), 0.5);
  NodeId total = tape.scale(nodes.clip, cfg.alpha);
  if (S != nullptr) {
    require_square(*S, n, "S");
    auto log_of = [](Matrix m) {
      for (double& x : m.data()) x = std::log(x);
      return m;
    };
    const NodeId log_q = tape.constant(log_of(soft_target(*S, cfg.epsilon_smooth)));
    const NodeId log_qt = tape.constant(log_of(soft_target(S->transposed(), cfg.epsilon_smooth)));
    auto mean_kl = [&](NodeId log_p, NodeId log_target) {
      return tape.scale(tape.sum(tape.mul(tape.exp(log_p), tape.sub(log_p, log_target))), inv_n);
    };
    nodes.se = tape.scale(tape.add(mean_kl(log_p_v2t, log_q), mean_kl(log_p_t2v, log_qt)), 0.5);
    nodes.has_se = true;
    total = tape.add(total, tape.scale(nodes.se, cfg.beta));
  }
  nodes.total = total;
  return nodes;
}

}  // namespace selip
