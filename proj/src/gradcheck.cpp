#include "fusionrank/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "fusionrank/losses.hpp"
#include "fusionrank/random.hpp"

namespace fusionrank::losses {

namespace {

Matrix random_unit_rows(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      m(r, c) = rng.normal();
      sq += m(r, c) * m(r, c);
    }
    const double norm = std::sqrt(sq);
    for (std::size_t c = 0; c < cols; ++c) m(r, c) /= norm;
  }
  return m;
}

// Central difference of `f` with respect to x[i].
double central_difference(std::vector<double>& x, std::size_t i, double h,
                          const std::function<double()>& f) {
  const double saved = x[i];
  x[i] = saved + h;
  const double up = f();
  x[i] = saved - h;
  const double down = f();
  x[i] = saved;
  return (up - down) / (2.0 * h);
}

double check_arcface(Rng& rng, const GradcheckOptions& opts) {
  const std::size_t n = 4;
  const std::size_t d = 8;
  const std::size_t classes = 5;
  Matrix emb = random_unit_rows(rng, n, d);
  Matrix weights = random_unit_rows(rng, classes, d);
  std::vector<std::size_t> labels(n);
  for (auto& y : labels) y = rng.below(classes);
  const ArcFaceParams params;

  const ArcFaceResult analytic = arcface_loss(emb, weights, labels, params);
  auto value = [&] { return arcface_loss_unchecked(emb, weights, labels, params).loss; };
  double worst = 0.0;
  for (std::size_t i = 0; i < emb.values.size(); ++i) {
    const double numeric = central_difference(emb.values, i, opts.step, value);
    worst = std::max(worst, gradient_rel_error(analytic.grad_embeddings.values[i], numeric));
  }
  for (std::size_t i = 0; i < weights.values.size(); ++i) {
    const double numeric = central_difference(weights.values, i, opts.step, value);
    worst = std::max(worst, gradient_rel_error(analytic.grad_class_weights.values[i], numeric));
  }
  return worst;
}

double check_circle(Rng& rng, const GradcheckOptions& opts) {
  const CircleParams params;
  std::vector<double> sp(1 + rng.below(6));
  std::vector<double> sn(1 + rng.below(6));
  for (auto& s : sp) s = rng.uniform(-1.0, 1.0);
  for (auto& s : sn) s = rng.uniform(-1.0, 1.0);

  const CircleResult analytic = circle_loss(sp, sn, params);
  // The weighting factors are held at their base-point values.
  std::vector<double> alpha_p(sp.size());
  std::vector<double> alpha_n(sn.size());
  for (std::size_t i = 0; i < sp.size(); ++i) {
    alpha_p[i] = std::max(0.0, 1.0 + params.relaxation_m - sp[i]);
  }
  for (std::size_t j = 0; j < sn.size(); ++j) {
    alpha_n[j] = std::max(0.0, sn[j] + params.relaxation_m);
  }
  auto value = [&] { return circle_loss_fixed_weights(sp, sn, alpha_p, alpha_n, params); };
  double worst = 0.0;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    worst = std::max(worst, gradient_rel_error(analytic.grad_sp[i],
                                               central_difference(sp, i, opts.step, value)));
  }
  for (std::size_t j = 0; j < sn.size(); ++j) {
    worst = std::max(worst, gradient_rel_error(analytic.grad_sn[j],
                                               central_difference(sn, j, opts.step, value)));
  }
  return worst;
}

double check_kd(Rng& rng, const GradcheckOptions& opts) {
  const std::size_t n = 3;
  const std::size_t classes = 10;
  Matrix student(n, classes);
  Matrix teacher(n, classes);
  for (auto& v : student.values) v = 2.0 * rng.normal();
  for (auto& v : teacher.values) v = 2.0 * rng.normal();
  std::vector<std::size_t> labels(n);
  for (auto& y : labels) y = rng.below(classes);
  const KDParams params;

  const KDResult analytic = kd_distill_loss(student, teacher, labels, params);
  auto value = [&] { return kd_distill_loss(student, teacher, labels, params).loss; };
  double worst = 0.0;
  for (std::size_t i = 0; i < student.values.size(); ++i) {
    const double numeric = central_difference(student.values, i, opts.step, value);
    worst = std::max(worst, gradient_rel_error(analytic.grad_student.values[i], numeric));
  }
  return worst;
}

GradcheckReport run_one(const std::string& name, std::uint64_t seed,
                        const GradcheckOptions& opts,
                        double (*check)(Rng&, const GradcheckOptions&)) {
  Rng rng(seed);
  GradcheckReport report{name, opts.instances, 0.0, false};
  for (std::size_t i = 0; i < opts.instances; ++i) {
    report.max_rel_error = std::max(report.max_rel_error, check(rng, opts));
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  return report;
}

}  // namespace

double gradient_rel_error(double analytic, double numeric) {
  const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / scale;
}

std::vector<GradcheckReport> run_gradcheck(const GradcheckOptions& opts) {
  return {
      run_one("arcface", opts.seed, opts, check_arcface),
      run_one("circle", opts.seed + 1, opts, check_circle),
      run_one("kd", opts.seed + 2, opts, check_kd),
  };
}

}  // namespace fusionrank::losses
