#include "fusionrank/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "fusionrank/error.hpp"

namespace fusionrank::losses {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return kNegInf;
  const double mx = *std::max_element(x.begin(), x.end());
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  if (x == kNegInf) return 0.0;
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Row-wise log-softmax of `scale * row`.
void log_softmax_row(std::span<const double> row, double inv_temperature,
                     std::vector<double>& out) {
  out.resize(row.size());
  double mx = kNegInf;
  for (double v : row) mx = std::max(mx, v * inv_temperature);
  double acc = 0.0;
  for (double v : row) acc += std::exp(v * inv_temperature - mx);
  const double lse = mx + std::log(acc);
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = row[j] * inv_temperature - lse;
}

void check_unit_rows(const Matrix& m, const char* what) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double sq = 0.0;
    for (double v : m.row(r)) sq += v * v;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-4) {
      throw ContractError(std::string(what) + " row " + std::to_string(r) +
                          " is not unit-normalized");
    }
  }
}

void check_labels(std::span<const std::size_t> labels, std::size_t n, std::size_t classes) {
  if (labels.size() != n) {
    throw ContractError("expected " + std::to_string(n) + " labels, got " +
                        std::to_string(labels.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= classes) {
      throw ContractError("label " + std::to_string(labels[i]) + " at sample " +
                          std::to_string(i) + " is outside [0, " + std::to_string(classes) + ")");
    }
  }
}

void check_similarities(std::span<const double> s, const char* what) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!(s[i] >= -1.0 - 1e-6 && s[i] <= 1.0 + 1e-6)) {
      throw ContractError(std::string(what) + " similarity " + std::to_string(i) +
                          " is outside [-1, 1]");
    }
  }
}

struct CircleTerms {
  std::vector<double> pos_logits;
  std::vector<double> neg_logits;
};

CircleTerms circle_logits(std::span<const double> sp, std::span<const double> sn,
                          std::span<const double> alpha_p, std::span<const double> alpha_n,
                          const CircleParams& p) {
  const double delta_p = 1.0 - p.relaxation_m;
  const double delta_n = p.relaxation_m;
  CircleTerms t;
  t.pos_logits.resize(sp.size());
  t.neg_logits.resize(sn.size());
  for (std::size_t i = 0; i < sp.size(); ++i) {
    t.pos_logits[i] = -p.gamma * alpha_p[i] * (sp[i] - delta_p);
  }
  for (std::size_t j = 0; j < sn.size(); ++j) {
    t.neg_logits[j] = p.gamma * alpha_n[j] * (sn[j] - delta_n);
  }
  return t;
}

void circle_alphas(std::span<const double> sp, std::span<const double> sn, const CircleParams& p,
                   std::vector<double>& alpha_p, std::vector<double>& alpha_n) {
  alpha_p.resize(sp.size());
  alpha_n.resize(sn.size());
  for (std::size_t i = 0; i < sp.size(); ++i) {
    alpha_p[i] = std::max(0.0, 1.0 + p.relaxation_m - sp[i]);
  }
  for (std::size_t j = 0; j < sn.size(); ++j) alpha_n[j] = std::max(0.0, sn[j] + p.relaxation_m);
}

CircleResult circle_core(std::span<const double> sp, std::span<const double> sn,
                         const CircleParams& p) {
  CircleResult out;
  out.grad_sp.assign(sp.size(), 0.0);
  out.grad_sn.assign(sn.size(), 0.0);
  if (sp.empty() || sn.empty()) return out;

  std::vector<double> alpha_p;
  std::vector<double> alpha_n;
  circle_alphas(sp, sn, p, alpha_p, alpha_n);
  const CircleTerms t = circle_logits(sp, sn, alpha_p, alpha_n, p);
  const double lse_p = log_sum_exp(t.pos_logits);
  const double lse_n = log_sum_exp(t.neg_logits);
  const double z = lse_p + lse_n;
  out.loss = softplus(z);

  const double outer = sigmoid(z);
  for (std::size_t i = 0; i < sp.size(); ++i) {
    const double w = std::exp(t.pos_logits[i] - lse_p);
    out.grad_sp[i] = outer * w * (-p.gamma * alpha_p[i]);
  }
  for (std::size_t j = 0; j < sn.size(); ++j) {
    const double w = std::exp(t.neg_logits[j] - lse_n);
    out.grad_sn[j] = outer * w * (p.gamma * alpha_n[j]);
  }
  return out;
}

}  // namespace

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> v)
    : rows(r), cols(c), values(std::move(v)) {
  if (values.size() != rows * cols) throw ContractError("matrix payload does not match shape");
}

CombinedLossWeights CombinedLossWeights::from_batch_size(std::size_t beta) {
  if (beta == 0) throw ContractError("batch size must be at least 1");
  return CombinedLossWeights{1.0, 1.0 / static_cast<double>(beta)};
}

void validate(const ArcFaceParams& p) {
  if (!(p.margin >= 0.0 && p.margin < std::numbers::pi / 2.0)) {
    throw ContractError("arcface margin must lie in [0, pi/2)");
  }
  if (!(p.scale > 0.0)) throw ContractError("arcface scale must be positive");
}

void validate(const CircleParams& p) {
  if (!(p.relaxation_m > 0.0 && p.relaxation_m < 1.0)) {
    throw ContractError("circle relaxation m must lie in (0, 1)");
  }
  if (!(p.gamma > 0.0)) throw ContractError("circle gamma must be positive");
}

void validate(const KDParams& p) {
  if (!(p.temperature > 0.0)) throw ContractError("distillation temperature must be positive");
}

ArcFaceResult arcface_loss(const Matrix& embeddings, const Matrix& class_weights,
                           std::span<const std::size_t> labels, const ArcFaceParams& p) {
  validate(p);
  if (embeddings.cols != class_weights.cols) {
    throw ContractError("embedding and class-weight dimensions differ");
  }
  check_labels(labels, embeddings.rows, class_weights.rows);
  check_unit_rows(embeddings, "embedding");
  check_unit_rows(class_weights, "class weight");
  return arcface_loss_unchecked(embeddings, class_weights, labels, p);
}

ArcFaceResult arcface_loss_unchecked(const Matrix& embeddings, const Matrix& class_weights,
                                     std::span<const std::size_t> labels,
                                     const ArcFaceParams& p) {
  const std::size_t n = embeddings.rows;
  const std::size_t d = embeddings.cols;
  const std::size_t classes = class_weights.rows;
  ArcFaceResult out;
  out.grad_embeddings = Matrix(n, d);
  out.grad_class_weights = Matrix(classes, d);
  if (n == 0) return out;

  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> logits(classes);
  std::vector<double> cosines(classes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = labels[i];
    for (std::size_t c = 0; c < classes; ++c) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += embeddings(i, k) * class_weights(c, k);
      cosines[c] = dot;
      logits[c] = p.scale * dot;
    }
    const double cos_y = std::clamp(cosines[y], -1.0, 1.0);
    const double theta = std::acos(cos_y);
    logits[y] = p.scale * std::cos(theta + p.margin);
    // d cos(theta + m) / d cos(theta)
    const double sin_theta = std::max(std::sqrt(std::max(0.0, 1.0 - cos_y * cos_y)), 1e-12);
    const double target_slope = p.scale * std::sin(theta + p.margin) / sin_theta;

    const double lse = log_sum_exp(logits);
    out.loss += (lse - logits[y]) * inv_n;

    for (std::size_t c = 0; c < classes; ++c) {
      const double prob = std::exp(logits[c] - lse);
      const double dlogit = (prob - (c == y ? 1.0 : 0.0)) * inv_n;
      const double dcos = dlogit * (c == y ? target_slope : p.scale);
      if (dcos == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) {
        out.grad_embeddings(i, k) += dcos * class_weights(c, k);
        out.grad_class_weights(c, k) += dcos * embeddings(i, k);
      }
    }
  }
  return out;
}

CircleResult circle_loss(std::span<const double> sp, std::span<const double> sn,
                         const CircleParams& p) {
  validate(p);
  check_similarities(sp, "positive");
  check_similarities(sn, "negative");
  return circle_core(sp, sn, p);
}

double circle_loss_fixed_weights(std::span<const double> sp, std::span<const double> sn,
                                 std::span<const double> alpha_p,
                                 std::span<const double> alpha_n, const CircleParams& p) {
  if (alpha_p.size() != sp.size() || alpha_n.size() != sn.size()) {
    throw ContractError("weighting factors do not match similarity lists");
  }
  if (sp.empty() || sn.empty()) return 0.0;
  const CircleTerms t = circle_logits(sp, sn, alpha_p, alpha_n, p);
  return softplus(log_sum_exp(t.pos_logits) + log_sum_exp(t.neg_logits));
}

ScalarWithGrad batch_circle_loss(const Matrix& embeddings, std::span<const std::size_t> labels,
                                 const CircleParams& p) {
  validate(p);
  const std::size_t n = embeddings.rows;
  const std::size_t d = embeddings.cols;
  if (labels.size() != n) throw ContractError("label count does not match batch size");

  struct Pair {
    std::size_t a;
    std::size_t b;
  };
  std::vector<double> sp;
  std::vector<double> sn;
  std::vector<Pair> pos_pairs;
  std::vector<Pair> neg_pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += embeddings(i, k) * embeddings(j, k);
      if (labels[i] == labels[j]) {
        sp.push_back(dot);
        pos_pairs.push_back({i, j});
      } else {
        sn.push_back(dot);
        neg_pairs.push_back({i, j});
      }
    }
  }
  check_similarities(sp, "positive");
  check_similarities(sn, "negative");
  const CircleResult r = circle_core(sp, sn, p);

  ScalarWithGrad out;
  out.value = r.loss;
  out.grad.assign(n * d, 0.0);
  auto scatter = [&](const Pair& pr, double g) {
    for (std::size_t k = 0; k < d; ++k) {
      out.grad[pr.a * d + k] += g * embeddings(pr.b, k);
      out.grad[pr.b * d + k] += g * embeddings(pr.a, k);
    }
  };
  for (std::size_t i = 0; i < pos_pairs.size(); ++i) scatter(pos_pairs[i], r.grad_sp[i]);
  for (std::size_t j = 0; j < neg_pairs.size(); ++j) scatter(neg_pairs[j], r.grad_sn[j]);
  return out;
}

ScalarWithGrad combined_loss(const ScalarWithGrad& la, const ScalarWithGrad& lc,
                             const CombinedLossWeights& w) {
  if (!(w.delta0 >= 0.0) || !(w.delta1 >= 0.0)) {
    throw ContractError("loss weights must be non-negative");
  }
  if (!la.grad.empty() && !lc.grad.empty() && la.grad.size() != lc.grad.size()) {
    throw ContractError("combined losses have gradients of different length");
  }
  ScalarWithGrad out;
  out.value = w.delta0 * la.value + w.delta1 * lc.value;
  const std::size_t n = std::max(la.grad.size(), lc.grad.size());
  out.grad.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ga = la.grad.empty() ? 0.0 : la.grad[i];
    const double gc = lc.grad.empty() ? 0.0 : lc.grad[i];
    out.grad[i] = w.delta0 * ga + w.delta1 * gc;
  }
  return out;
}

KDResult kd_distill_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                         std::span<const std::size_t> labels, const KDParams& p) {
  validate(p);
  if (student_logits.rows != teacher_logits.rows || student_logits.cols != teacher_logits.cols) {
    throw ContractError("student and teacher logits have different shapes");
  }
  const std::size_t n = student_logits.rows;
  const std::size_t classes = student_logits.cols;
  check_labels(labels, n, classes);

  KDResult out;
  out.grad_student = Matrix(n, classes);
  if (n == 0) return out;

  const double t = p.temperature;
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> log_pt;
  std::vector<double> log_ps;
  std::vector<double> log_hard;
  for (std::size_t i = 0; i < n; ++i) {
    log_softmax_row(teacher_logits.row(i), 1.0 / t, log_pt);
    log_softmax_row(student_logits.row(i), 1.0 / t, log_ps);
    log_softmax_row(student_logits.row(i), 1.0, log_hard);
    double kl = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double pt = std::exp(log_pt[c]);
      if (pt > 0.0) kl += pt * (log_pt[c] - log_ps[c]);
      const double ps = std::exp(log_ps[c]);
      const double hard = std::exp(log_hard[c]);
      out.grad_student(i, c) = p.kd_weight * t * (ps - pt) * inv_n +
                               p.ce_weight * (hard - (c == labels[i] ? 1.0 : 0.0)) * inv_n;
    }
    out.kd_term += std::max(0.0, kl) * inv_n;
    out.ce_term += -log_hard[labels[i]] * inv_n;
  }
  out.kd_term *= p.kd_weight * t * t;
  out.ce_term *= p.ce_weight;
  out.loss = out.kd_term + out.ce_term;
  return out;
}

}  // namespace fusionrank::losses
