#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fusionrank::losses {

/// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> v);

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

struct ArcFaceParams {
  double margin = 0.2;  // radians
  double scale = 32.0;
};

struct CircleParams {
  double relaxation_m = 0.25;
  double gamma = 32.0;
};

struct CombinedLossWeights {
  double delta0 = 1.0;
  double delta1 = 1.0;

  /// delta0 = 1, delta1 = 1 / batch size.
  static CombinedLossWeights from_batch_size(std::size_t beta);
};

struct KDParams {
  double temperature = 3.0;
  double kd_weight = 1.0;
  double ce_weight = 1.0;
};

/// A scalar loss with its gradient over some flat parameter vector. An empty
/// gradient stands for "all zeros".
struct ScalarWithGrad {
  double value = 0.0;
  std::vector<double> grad;
};

struct ArcFaceResult {
  double loss = 0.0;
  Matrix grad_embeddings;
  Matrix grad_class_weights;
};

struct CircleResult {
  double loss = 0.0;
  std::vector<double> grad_sp;
  std::vector<double> grad_sn;
};

struct KDResult {
  double loss = 0.0;
  double kd_term = 0.0;
  double ce_term = 0.0;
  Matrix grad_student;
};

void validate(const ArcFaceParams& p);
void validate(const CircleParams& p);
void validate(const KDParams& p);

/// Mean softmax cross-entropy over logits scale*cos(theta_j), with the target
/// logit replaced by scale*cos(theta_y + margin). Both matrices must have unit
/// rows (tolerance 1e-4).
ArcFaceResult arcface_loss(const Matrix& embeddings, const Matrix& class_weights,
                           std::span<const std::size_t> labels, const ArcFaceParams& p = {});

/// Unchecked variant used by gradient checks, where perturbed rows are no
/// longer exactly unit length.
ArcFaceResult arcface_loss_unchecked(const Matrix& embeddings, const Matrix& class_weights,
                                     std::span<const std::size_t> labels,
                                     const ArcFaceParams& p);

/// Pair-similarity circle loss
///   log(1 + sum_j exp(g*an_j*(sn_j - m)) * sum_i exp(-g*ap_i*(sp_i - (1 - m))))
/// with ap = max(0, 1 + m - sp), an = max(0, sn + m). The weighting factors are
/// treated as constants in the gradient.
CircleResult circle_loss(std::span<const double> sp, std::span<const double> sn,
                         const CircleParams& p = {});

/// Circle loss value with the weighting factors supplied explicitly instead
/// of derived from the similarities.
double circle_loss_fixed_weights(std::span<const double> sp, std::span<const double> sn,
                                 std::span<const double> alpha_p,
                                 std::span<const double> alpha_n, const CircleParams& p);

/// Circle loss over all i<j pairs of a batch (positive when labels match),
/// with the gradient pushed back to the embedding rows.
ScalarWithGrad batch_circle_loss(const Matrix& embeddings, std::span<const std::size_t> labels,
                                 const CircleParams& p = {});

/// value = delta0 * la + delta1 * lc; gradients combine with the same weights.
ScalarWithGrad combined_loss(const ScalarWithGrad& la, const ScalarWithGrad& lc,
                             const CombinedLossWeights& w);

/// kd_weight * T^2 * mean KL(softmax(t/T) || softmax(s/T)) + ce_weight * mean CE(s, y),
/// gradient with respect to the student logits.
KDResult kd_distill_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                         std::span<const std::size_t> labels, const KDParams& p = {});

}  // namespace fusionrank::losses
