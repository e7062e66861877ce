#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fusionrank/metricspace.hpp"
#include "fusionrank/sparse.hpp"
#include "fusionrank/tensorio.hpp"

namespace fusionrank {

struct DiffusionParams {
  std::size_t kd = 70;
  std::size_t n_trunc = 10000;
  double alpha = 0.99;
  double gamma_exp = 3.0;
  double cg_tol = 1e-6;
  std::size_t cg_max_iter = 20;
};

/// Gallery affinity graph: symmetric, zero diagonal, strictly positive stored values.
struct AffinityGraph {
  SparseRows<double> adjacency;
  std::vector<double> degree;  // row sums of the unnormalized graph, 1 for isolated nodes
  bool normalized = false;
};

struct CgResult {
  std::vector<double> f;
  std::size_t iterations = 0;
  double relative_residual = 0.0;
};

struct DiffusionOptions {
  std::size_t workers = 1;
  std::size_t block_rows = 1024;
};

void validate(const DiffusionParams& p);

/// Mutual-kNN graph with weights max(0, cos)^gamma_exp, not yet normalized.
AffinityGraph build_affinity_raw(const FeatureMatrix& gallery, const DiffusionParams& p,
                                 const DiffusionOptions& opts = {});

/// Deg^-1/2 * A * Deg^-1/2.
AffinityGraph normalize_affinity(const AffinityGraph& raw);

/// build_affinity_raw followed by normalize_affinity.
AffinityGraph build_affinity(const FeatureMatrix& gallery, const DiffusionParams& p,
                             const DiffusionOptions& opts = {});

/// Matrix-free conjugate gradient for (I - alpha * S) f = y starting from f = y.
/// Stops when ||r|| / ||y|| <= cg_tol or after cg_max_iter iterations.
/// alpha may be 0 here (identity system).
CgResult solve_linear(const SparseRows<double>& s, std::span<const double> y,
                      const DiffusionParams& p);

/// Node-induced subgraph on `nodes` (strictly increasing gallery indices).
SparseRows<double> induced_subgraph(const SparseRows<double>& graph,
                                    std::span<const std::uint32_t> nodes);

/// Query x gallery diffusion scores. Each query seeds its kd nearest gallery
/// items with cos^gamma_exp and diffuses over the subgraph of its n_trunc most
/// similar gallery items; positive scores are kept.
SparseRowMatrix diffuse_queries(const FeatureMatrix& queries, const FeatureMatrix& gallery,
                                const AffinityGraph& graph, const DiffusionParams& p,
                                const DiffusionOptions& opts = {});

}  // namespace fusionrank
