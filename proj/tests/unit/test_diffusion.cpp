#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include "fusionrank/diffusion.hpp"
#include "fusionrank/error.hpp"
#include "fusionrank/metricspace.hpp"
#include "fusionrank/synthetic.hpp"
#include "oracles.hpp"

using namespace fusionrank;

namespace {

oracle::Dense densify(const SparseRows<double>& s) {
  oracle::Dense d(s.rows());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const auto cols = s.row_columns(i);
    const auto vals = s.row_values(i);
    for (std::size_t k = 0; k < cols.size(); ++k) d(i, cols[k]) = vals[k];
  }
  return d;
}

double rel_error(const std::vector<double>& got, const std::vector<double>& want) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    num += (got[i] - want[i]) * (got[i] - want[i]);
    den += want[i] * want[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("affinity trivial graphs") {
  const FeatureMatrix same(2, 2, {1, 0, 1, 0}, {"a", "b"});
  DiffusionParams p;
  p.kd = 1;
  p.n_trunc = 1;
  const AffinityGraph raw = build_affinity_raw(same, p);
  CHECK(raw.adjacency.nnz() == 2);
  CHECK(raw.adjacency.at_or(0, 1, 0) == 1.0);

  const FeatureMatrix ortho(2, 2, {1, 0, 0, 1}, {"a", "b"});
  const AffinityGraph none = build_affinity(ortho, p);
  CHECK(none.adjacency.nnz() == 0);
  CHECK(none.degree == std::vector<double>{1.0, 1.0});

  CHECK_THROWS_AS(build_affinity(FeatureMatrix(1, 2, {1, 0}, {"a"}), p), ContractError);
}

TEST_CASE("affinity matches a dense double-loop oracle") {
  Rng rng(41);
  const auto g = oracle::random_features(rng, 40, 8, "g");
  DiffusionParams p;
  p.kd = 5;
  p.n_trunc = 40;
  const AffinityGraph graph = build_affinity(g, p, {3, 7});
  CHECK(graph.normalized);
  const oracle::Dense want = oracle::dense_affinity(g, 5, 3.0);
  const oracle::Dense got = densify(graph.adjacency);
  CHECK(oracle::max_abs_diff(got.a, want.a) <= 1e-10);
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(got(i, i) == 0.0);
    for (std::size_t j = 0; j < 40; ++j) CHECK(got(i, j) == got(j, i));
  }
  for (double v : graph.adjacency.values()) CHECK(v > 0.0);

  // Normalized equals Deg^-1/2 A Deg^-1/2 of the raw graph.
  const AffinityGraph raw = build_affinity_raw(g, p);
  const oracle::Dense r = densify(raw.adjacency);
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t j = 0; j < 40; ++j) {
      CHECK(std::abs(got(i, j) - r(i, j) / std::sqrt(raw.degree[i] * raw.degree[j])) <= 1e-15);
    }
  }
}

TEST_CASE("normalized adjacency spectral radius is at most one") {
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    const auto g = oracle::random_features(rng, 30 + rng.below(60), 2 + rng.below(10), "g");
    DiffusionParams p;
    p.kd = 1 + rng.below(10);
    p.n_trunc = p.kd;
    const auto eig = oracle::jacobi_eigen(densify(build_affinity(g, p).adjacency));
    CHECK(std::max(std::abs(eig.values.front()), std::abs(eig.values.back())) <= 1.0 + 1e-8);
  }
}

TEST_CASE("solve_linear against a dense direct solve") {
  Rng rng(43);
  const auto g = oracle::random_features(rng, 40, 6, "g");
  DiffusionParams p;
  p.kd = 6;
  p.n_trunc = 40;
  p.cg_tol = 1e-12;
  p.cg_max_iter = 1000;
  const AffinityGraph graph = build_affinity(g, p);
  std::vector<double> y(40, 0.0);
  for (int i = 0; i < 5; ++i) y[rng.below(40)] = rng.uniform(0.1, 1.0);
  const CgResult r = solve_linear(graph.adjacency, y, p);
  oracle::Dense m = densify(graph.adjacency);
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t j = 0; j < 40; ++j) m(i, j) = (i == j ? 1.0 : 0.0) - p.alpha * m(i, j);
  }
  CHECK(rel_error(r.f, oracle::dense_solve(m, y)) <= 1e-5);
  CHECK(r.relative_residual <= 1e-12);
}

TEST_CASE("solve_linear edge cases") {
  Rng rng(44);
  const auto g = oracle::random_features(rng, 20, 4, "g");
  DiffusionParams p;
  p.kd = 4;
  p.n_trunc = 20;
  const AffinityGraph graph = build_affinity(g, p);
  std::vector<double> y(20);
  for (double& v : y) v = rng.uniform();
  DiffusionParams zero = p;
  zero.alpha = 0.0;
  CHECK(solve_linear(graph.adjacency, y, zero).f == y);

  CHECK_THROWS_AS(solve_linear(graph.adjacency, std::vector<double>(20, 0.0), p), NumericError);
  std::vector<double> neg = y;
  neg[3] = -0.1;
  CHECK_THROWS_AS(solve_linear(graph.adjacency, neg, p), ContractError);
  CHECK_THROWS_AS(validate(DiffusionParams{70, 10000, 1.0, 3, 1e-6, 20}), ContractError);
  CHECK_THROWS_AS(validate(DiffusionParams{70, 10, 0.99, 3, 1e-6, 20}), ContractError);
}

TEST_CASE("diffusion stays on the seeded component") {
  // Two clusters far apart: a graph with no edges between them.
  Rng rng(45);
  std::vector<float> data;
  std::vector<std::string> ids;
  for (int i = 0; i < 12; ++i) {
    const float jitter = static_cast<float>(rng.uniform(-0.05, 0.05));
    if (i < 6) {
      data.insert(data.end(), {1.f, jitter, 0.f});
    } else {
      data.insert(data.end(), {0.f, jitter, 1.f});
    }
    ids.push_back("g" + std::to_string(i));
  }
  const FeatureMatrix g = l2_normalize(FeatureMatrix(12, 3, data, ids));
  DiffusionParams p;
  p.kd = 3;
  p.n_trunc = 12;
  const AffinityGraph graph = build_affinity(g, p);
  std::vector<double> y(12, 0.0);
  y[1] = 1.0;
  y[4] = 0.5;
  const CgResult r = solve_linear(graph.adjacency, y, p);
  for (std::size_t i = 6; i < 12; ++i) CHECK(r.f[i] == 0.0);
  for (std::size_t i = 0; i < 6; ++i) CHECK(r.f[i] > 0.0);
}

TEST_CASE("diffuse_queries closed forms") {
  // Isolated node: S row is the seed itself.
  const FeatureMatrix g(2, 2, {1, 0, 0, 1}, {"a", "b"});
  DiffusionParams p;
  p.kd = 1;
  p.n_trunc = 2;
  const AffinityGraph iso = build_affinity(g, p);
  const FeatureMatrix q(1, 2, {1, 0}, {"q"});
  const SparseRowMatrix s = diffuse_queries(q, g, iso, p);
  CHECK(s.row_size(0) == 1);
  CHECK(s.at_or(0, 0, -1) == 1.f);

  // Two connected points: (I - alpha S)^-1 y in closed form.
  const FeatureMatrix g2 = l2_normalize(FeatureMatrix(2, 2, {1, 0.2f, 1, -0.2f}, {"a", "b"}));
  const FeatureMatrix q2(1, 2, {1, 0}, {"q"});
  DiffusionParams p2;
  p2.kd = 1;
  p2.n_trunc = 2;
  const AffinityGraph two = build_affinity(g2, p2);
  const double w = two.adjacency.at_or(0, 1, 0);  // normalized: exactly 1
  const double y0 = std::pow(oracle::ranked_sim(q2.row(0), g2.row(0)), 3);
  // Query is equidistant; tie goes to node 0.
  const double det = 1.0 - p2.alpha * p2.alpha * w * w;
  const SparseRowMatrix s2 = diffuse_queries(q2, g2, two, p2);
  CHECK(std::abs(s2.at_or(0, 0, -1) - y0 / det) <= 1e-5 * y0 / det);
  CHECK(std::abs(s2.at_or(0, 1, -1) - p2.alpha * w * y0 / det) <= 1e-5 * y0 / det);
}

TEST_CASE("monotone seed on a symmetric two-node graph") {
  SparseRows<double> s(2);
  const std::vector<std::pair<std::uint32_t, double>> r0{{1, 1.0}};
  const std::vector<std::pair<std::uint32_t, double>> r1{{0, 1.0}};
  s.push_row(r0);
  s.push_row(r1);
  const DiffusionParams p;
  double last = -1.0;
  for (double y0 = 0.1; y0 <= 2.0; y0 += 0.1) {
    const std::vector<double> y{y0, 0.3};
    const double f0 = solve_linear(s, y, p).f[0];
    CHECK(f0 >= last);
    last = f0;
  }
}

TEST_CASE("diffuse_queries: truncation, outputs, determinism") {
  Rng rng(46);
  const auto g = oracle::random_features(rng, 80, 6, "g");
  const auto q = oracle::random_features(rng, 9, 6, "q");
  DiffusionParams p;
  p.kd = 5;
  p.n_trunc = 20;
  const AffinityGraph graph = build_affinity(g, p);
  const SparseRowMatrix s = diffuse_queries(q, g, graph, p, {1, 1024});
  const NeighborTable top = knn_search(q, g, 20);
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const auto idx = top.indices(i);
    const std::set<std::uint32_t> allowed(idx.begin(), idx.end());
    for (auto c : s.row_columns(i)) CHECK(allowed.count(c) == 1);
    for (auto v : s.row_values(i)) {
      CHECK(v > 0.f);
      CHECK(std::isfinite(v));
    }
  }
  CHECK(diffuse_queries(q, g, graph, p, {4, 1024}) == s);
  CHECK(diffuse_queries(q, g, graph, p, {8, 1024}) == s);

  const FeatureMatrix opposite(1, 6, {-g.row(0)[0], -g.row(0)[1], -g.row(0)[2], -g.row(0)[3],
                                      -g.row(0)[4], -g.row(0)[5]}, {"o"});
  const FeatureMatrix flat = [&] {
    std::vector<float> d;
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) {
      d.insert(d.end(), g.row(0).begin(), g.row(0).end());
      ids.push_back("d" + std::to_string(i));
    }
    return FeatureMatrix(10, 6, d, ids);
  }();
  DiffusionParams pf;
  pf.kd = 3;
  pf.n_trunc = 10;
  CHECK_THROWS_AS(diffuse_queries(opposite, flat, build_affinity(flat, pf), pf), NumericError);
}

TEST_CASE("diffusion top-10 keeps at least as many same-class items as cosine") {
  // Fixed-seed clustered set; default parameters except the desk-scale kd.
  const SyntheticData data = generate_synthetic({5, 20, 5, 64, 0.35, 42});
  DiffusionParams p;
  p.kd = 8;
  p.n_trunc = data.gallery.rows();
  const AffinityGraph graph = build_affinity(data.gallery, p);
  const SparseRowMatrix s = diffuse_queries(data.queries, data.gallery, graph, p);
  const NeighborTable cos = knn_search(data.queries, data.gallery, 10);
  std::unordered_map<std::string, std::string> label(data.labels.begin(), data.labels.end());
  std::size_t ok = 0;
  for (std::size_t i = 0; i < data.queries.rows(); ++i) {
    const std::string& want = label[data.queries.ids()[i]];
    std::vector<std::uint32_t> order(data.gallery.rows());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
      return s.at_or(i, a, 0) > s.at_or(i, b, 0);
    });
    std::size_t diff_hits = 0;
    std::size_t cos_hits = 0;
    for (std::size_t r = 0; r < 10; ++r) {
      diff_hits += label[data.gallery.ids()[order[r]]] == want;
      cos_hits += label[data.gallery.ids()[cos.indices(i)[r]]] == want;
    }
    ok += diff_hits >= cos_hits;
  }
  MESSAGE("queries where diffusion top-10 >= cosine top-10: " << ok << " / "
                                                            << data.queries.rows());
  CHECK(ok * 10 >= data.queries.rows() * 9);
}
