#include "fusionrank/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fusionrank/error.hpp"
#include "fusionrank/parallel.hpp"

namespace fusionrank {

namespace {

using Row = std::vector<std::pair<std::uint32_t, double>>;

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// out = (I - alpha * S) x
void apply_system(const SparseRows<double>& s, double alpha, std::span<const double> x,
                  std::span<double> out) {
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const auto cols = s.row_columns(i);
    const auto vals = s.row_values(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < cols.size(); ++k) acc += vals[k] * x[cols[k]];
    out[i] = x[i] - alpha * acc;
  }
}

}  // namespace

void validate(const DiffusionParams& p) {
  if (!(p.alpha > 0.0 && p.alpha < 1.0)) throw ContractError("diffusion alpha must lie in (0, 1)");
  if (p.kd == 0) throw ContractError("kd must be at least 1");
  if (p.n_trunc < p.kd) throw ContractError("n_trunc must be at least kd");
  if (!(p.cg_tol > 0.0)) throw ContractError("cg_tol must be positive");
  if (!(p.gamma_exp > 0.0)) throw ContractError("gamma_exp must be positive");
}

AffinityGraph build_affinity_raw(const FeatureMatrix& gallery, const DiffusionParams& p,
                                 const DiffusionOptions& opts) {
  validate(p);
  const std::size_t n = gallery.rows();
  if (n < 2) throw ContractError("affinity graph needs at least two gallery items");
  if (p.kd > n - 1) {
    throw ContractError("kd=" + std::to_string(p.kd) + " exceeds the " + std::to_string(n - 1) +
                        " available neighbors");
  }
  const std::size_t workers = resolve_workers(opts.workers);
  const NeighborTable table = knn_self_excluded(gallery, p.kd, {workers, opts.block_rows});

  std::vector<std::vector<std::uint32_t>> sorted(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto idx = table.indices(i);
    sorted[i].assign(idx.begin(), idx.end());
    std::sort(sorted[i].begin(), sorted[i].end());
  }

  std::vector<Row> rows(n);
  parallel_for(n, workers, [&](std::size_t i) {
    for (std::uint32_t j : sorted[i]) {
      if (!std::binary_search(sorted[j].begin(), sorted[j].end(), static_cast<std::uint32_t>(i))) {
        continue;
      }
      const double c = dot64(gallery.row(i), gallery.row(j));
      const double w = std::pow(std::max(0.0, c), p.gamma_exp);
      if (w > 0.0) rows[i].emplace_back(j, w);
    }
  });

  AffinityGraph graph;
  graph.adjacency = assemble_rows(n, rows);
  graph.degree.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto vals = graph.adjacency.row_values(i);
    const double deg = std::accumulate(vals.begin(), vals.end(), 0.0);
    graph.degree[i] = deg > 0.0 ? deg : 1.0;
  }
  graph.normalized = false;
  return graph;
}

AffinityGraph normalize_affinity(const AffinityGraph& raw) {
  if (raw.normalized) throw ContractError("affinity graph is already normalized");
  const auto& a = raw.adjacency;
  std::vector<double> values(a.values().size());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto cols = a.row_columns(i);
    const auto vals = a.row_values(i);
    const std::size_t base = a.offsets()[i];
    for (std::size_t k = 0; k < cols.size(); ++k) {
      values[base + k] = vals[k] / std::sqrt(raw.degree[i] * raw.degree[cols[k]]);
    }
  }
  AffinityGraph out;
  out.adjacency = SparseRows<double>(a.rows(), a.cols(), a.offsets(), a.columns(), values);
  out.degree = raw.degree;
  out.normalized = true;
  return out;
}

AffinityGraph build_affinity(const FeatureMatrix& gallery, const DiffusionParams& p,
                             const DiffusionOptions& opts) {
  return normalize_affinity(build_affinity_raw(gallery, p, opts));
}

CgResult solve_linear(const SparseRows<double>& s, std::span<const double> y,
                      const DiffusionParams& p) {
  const std::size_t n = s.rows();
  if (s.cols() != n) throw ContractError("diffusion operator must be square");
  if (y.size() != n) throw ContractError("source vector length does not match the operator");
  if (!(p.alpha >= 0.0 && p.alpha < 1.0)) throw ContractError("alpha must lie in [0, 1)");
  if (!(p.cg_tol > 0.0)) throw ContractError("cg_tol must be positive");
  double y_norm_sq = 0.0;
  for (double v : y) {
    if (!(v >= 0.0)) throw ContractError("source vector must be non-negative");
    y_norm_sq += v * v;
  }
  if (y_norm_sq == 0.0) throw NumericError("source vector is all zero");
  const double y_norm = std::sqrt(y_norm_sq);

  CgResult out;
  out.f.assign(y.begin(), y.end());
  std::vector<double> r(n);
  std::vector<double> dir(n);
  std::vector<double> a_dir(n);
  apply_system(s, p.alpha, out.f, r);
  for (std::size_t i = 0; i < n; ++i) r[i] = y[i] - r[i];
  double rr = dot(r, r);
  out.relative_residual = std::sqrt(rr) / y_norm;
  dir = r;
  while (out.relative_residual > p.cg_tol && out.iterations < p.cg_max_iter) {
    apply_system(s, p.alpha, dir, a_dir);
    const double curvature = dot(dir, a_dir);
    if (!(curvature > 0.0)) break;
    const double step = rr / curvature;
    for (std::size_t i = 0; i < n; ++i) {
      out.f[i] += step * dir[i];
      r[i] -= step * a_dir[i];
    }
    const double rr_next = dot(r, r);
    ++out.iterations;
    out.relative_residual = std::sqrt(rr_next) / y_norm;
    const double beta = rr_next / rr;
    rr = rr_next;
    for (std::size_t i = 0; i < n; ++i) dir[i] = r[i] + beta * dir[i];
  }
  return out;
}

SparseRows<double> induced_subgraph(const SparseRows<double>& graph,
                                    std::span<const std::uint32_t> nodes) {
  SparseRows<double> sub(nodes.size());
  Row row;
  for (std::uint32_t u : nodes) {
    row.clear();
    const auto cols = graph.row_columns(u);
    const auto vals = graph.row_values(u);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      auto it = std::lower_bound(nodes.begin(), nodes.end(), cols[k]);
      if (it != nodes.end() && *it == cols[k]) {
        row.emplace_back(static_cast<std::uint32_t>(it - nodes.begin()), vals[k]);
      }
    }
    sub.push_row(std::span<const std::pair<std::uint32_t, double>>(row));
  }
  return sub;
}

SparseRowMatrix diffuse_queries(const FeatureMatrix& queries, const FeatureMatrix& gallery,
                                const AffinityGraph& graph, const DiffusionParams& p,
                                const DiffusionOptions& opts) {
  validate(p);
  if (!graph.normalized) throw ContractError("diffusion requires a normalized affinity graph");
  if (graph.adjacency.rows() != gallery.rows()) {
    throw ContractError("affinity graph was not built over this gallery");
  }
  if (queries.dim() != gallery.dim()) throw ContractError("diffusion: dimension mismatch");
  const std::size_t ng = gallery.rows();
  if (p.kd > ng) throw ContractError("kd exceeds the gallery size");
  const std::size_t trunc = std::min(p.n_trunc, ng);
  const bool full = trunc == ng;

  std::vector<std::vector<std::pair<std::uint32_t, float>>> rows(queries.rows());
  parallel_for(queries.rows(), resolve_workers(opts.workers), [&](std::size_t qi) {
    const auto q = queries.row(qi);
    std::vector<double> cosines(ng);
    std::vector<float> sims(ng);
    for (std::size_t j = 0; j < ng; ++j) {
      cosines[j] = dot64(q, gallery.row(j));
      sims[j] = static_cast<float>(cosines[j]);
    }
    std::vector<std::uint32_t> nodes(trunc);
    std::vector<float> node_sims(trunc);
    if (full) {
      std::iota(nodes.begin(), nodes.end(), 0u);
    } else {
      select_topk(sims, trunc, nodes.data(), node_sims.data());
      std::sort(nodes.begin(), nodes.end());
    }
    std::vector<std::uint32_t> seeds(p.kd);
    std::vector<float> seed_sims(p.kd);
    select_topk(sims, p.kd, seeds.data(), seed_sims.data());

    std::vector<double> y(trunc, 0.0);
    for (std::uint32_t s : seeds) {
      const auto it = std::lower_bound(nodes.begin(), nodes.end(), s);
      y[static_cast<std::size_t>(it - nodes.begin())] =
          std::pow(std::max(0.0, cosines[s]), p.gamma_exp);
    }
    if (std::all_of(y.begin(), y.end(), [](double v) { return v == 0.0; })) {
      throw NumericError("diffusion: query " + std::to_string(qi) +
                         " has no seed with positive similarity");
    }

    SparseRows<double> sub;
    if (!full) sub = induced_subgraph(graph.adjacency, nodes);
    const CgResult solved = solve_linear(full ? graph.adjacency : sub, y, p);
    auto& out = rows[qi];
    for (std::size_t i = 0; i < trunc; ++i) {
      if (solved.f[i] > 0.0) out.emplace_back(nodes[i], static_cast<float>(solved.f[i]));
    }
  });
  return assemble_rows(ng, rows);
}

}  // namespace fusionrank
