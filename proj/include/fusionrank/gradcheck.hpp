#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fusionrank::losses {

struct GradcheckReport {
  std::string loss;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradcheckOptions {
  std::size_t instances = 100;
  std::uint64_t seed = 20211017;
  double step = 1e-4;
  double tolerance = 1e-4;
};

/// Error between an analytic and a numeric derivative, relative to the larger
/// magnitude once that exceeds 1 and absolute below it.
double gradient_rel_error(double analytic, double numeric);

/// Central finite-difference checks of the ArcFace, Circle and distillation
/// gradients on seeded random instances.
std::vector<GradcheckReport> run_gradcheck(const GradcheckOptions& opts = {});

}  // namespace fusionrank::losses
