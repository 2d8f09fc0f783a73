#pragma once

#include "selip/autodiff.hpp"
#include "selip/matrix.hpp"

namespace selip {

struct LossConfig {
  double tau = 0.07;  // fixed softmax temperature
  double alpha = 1.0;
  double beta = 1.0;
  double epsilon_smooth = 1e-6;  // added to S before normalizing it into a KL target
};

void validate_loss_config(const LossConfig& cfg);

// Row i of each matrix is the embedding of pair i.
struct EmbeddingBatch {
  Matrix image_vectors;
  Matrix text_vectors;
};

struct LossBreakdown {
  Matrix C;
  Matrix P_v2t;
  Matrix P_t2v;
  double L_v2t = 0.0;
  double L_t2v = 0.0;
  double L_clip = 0.0;
  double L_se_v2t = 0.0;
  double L_se_t2v = 0.0;
  double L_se = 0.0;
  double L_total = 0.0;
};

// C(i, j) = cos(v_i, t_j). Throws ZeroNormRow naming the side and row.
Matrix cosine_matrix(const EmbeddingBatch& batch);

struct ProbMatrices {
  Matrix v2t;  // row-softmax of C / tau
  Matrix t2v;  // row-softmax of C^T / tau
};
ProbMatrices prob_matrices(const Matrix& C, double tau);

struct ClipLoss {
  double v2t = 0.0;
  double t2v = 0.0;
  double clip = 0.0;
};
// InfoNCE against the identity target: -mean_i ln P(i, i) per direction.
ClipLoss clip_loss(const Matrix& P_v2t, const Matrix& P_t2v);

// Row-normalized (S + eps).
Matrix soft_target(const Matrix& S, double epsilon_smooth);

struct SeLoss {
  double v2t = 0.0;
  double t2v = 0.0;
  double se = 0.0;
};
// Mean over rows of KL(P row || target row); t2v is paired with the
// normalized transpose of S.
SeLoss se_loss(const Matrix& P_v2t, const Matrix& P_t2v, const Matrix& S, double epsilon_smooth);

// alpha * L_clip + beta * L_se. With S == nullptr the soft term is skipped and
// reported as zero, which requires beta == 0.
LossBreakdown total_loss(const EmbeddingBatch& batch, const Matrix* S, const LossConfig& cfg);

struct LossNodes {
  NodeId clip;
  NodeId se;  // valid only when a similarity matrix was supplied
  NodeId total;
  bool has_se = false;
};

// Same loss recorded on a tape so it can be differentiated with respect to
// whatever produced `image` and `text` (both N x d nodes).
LossNodes build_total_loss(Tape& tape, NodeId image, NodeId text, const Matrix* S, const LossConfig& cfg);

}  // namespace selip
