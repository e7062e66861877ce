#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fusionrank/aggregate.hpp"
#include "fusionrank/error.hpp"
#include "fusionrank/metricspace.hpp"
#include "oracles.hpp"

using namespace fusionrank;

namespace {

// Scalar-loop weighted sum of rows followed by normalization.
std::vector<double> combine(const std::vector<std::span<const float>>& rows,
                            const std::vector<double>& weights) {
  std::vector<double> acc(rows.front().size(), 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += weights[r] * rows[r][c];
  }
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  for (double& v : acc) v /= norm;
  return acc;
}

void check_row(std::span<const float> got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t c = 0; c < want.size(); ++c) CHECK(std::abs(got[c] - want[c]) <= tol);
}

void check_unit_rows(const FeatureMatrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double norm = 0.0;
    for (float v : m.row(i)) norm += double(v) * v;
    CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-6);
  }
}

FeatureMatrix with_ids(const FeatureMatrix& m, const std::vector<std::string>& ids) {
  return FeatureMatrix(m.rows(), m.dim(), {m.data().begin(), m.data().end()}, ids);
}

}  // namespace

TEST_CASE("tta_aggregate") {
  const FeatureMatrix a(1, 2, {1, 0}, {"x"});
  const FeatureMatrix b(1, 2, {0, 1}, {"x"});
  const FeatureMatrix m = tta_aggregate({a, b});
  CHECK(m.row(0)[0] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-7));
  CHECK(m.row(0)[1] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-7));

  Rng rng(21);
  const auto v = oracle::random_features(rng, 12, 9, "r");
  CHECK(tta_aggregate({v, v, v}) == l2_normalize(v));

  std::vector<FeatureMatrix> views;
  for (int i = 0; i < 4; ++i) views.push_back(with_ids(oracle::random_features(rng, 12, 9, "r"), v.ids()));
  const FeatureMatrix out = tta_aggregate(views);
  for (std::size_t r = 0; r < 12; ++r) {
    check_row(out.row(r),
              combine({views[0].row(r), views[1].row(r), views[2].row(r), views[3].row(r)},
                      {0.25, 0.25, 0.25, 0.25}),
              1e-6);
  }
  check_unit_rows(out);
  CHECK(tta_aggregate({views[2], views[0], views[3], views[1]}) == out);

  CHECK_THROWS_AS(tta_aggregate({}), ContractError);
  const FeatureMatrix renamed(1, 2, {0, 1}, {"y"});
  CHECK_THROWS_AS(tta_aggregate({a, renamed}), ContractError);
  const FeatureMatrix wide(1, 3, {0, 1, 0}, {"x"});
  CHECK_THROWS_AS(tta_aggregate({a, wide}), ContractError);
}

TEST_CASE("ensemble_features") {
  Rng rng(22);
  const auto base = oracle::random_features(rng, 15, 6, "e");
  CHECK(ensemble_features({base, base}) == l2_normalize(base));

  std::vector<FeatureMatrix> models;
  for (int i = 0; i < 4; ++i) models.push_back(with_ids(oracle::random_features(rng, 15, 6, "x"), base.ids()));
  const FeatureMatrix out = ensemble_features(models);
  for (std::size_t r = 0; r < 15; ++r) {
    check_row(out.row(r),
              combine({models[0].row(r), models[1].row(r), models[2].row(r), models[3].row(r)},
                      {1, 1, 1, 1}),
              1e-6);
  }
  check_unit_rows(out);
  // Bitwise permutation invariance across every ordering.
  std::vector<std::size_t> order{0, 1, 2, 3};
  do {
    CHECK(ensemble_features({models[order[0]], models[order[1]], models[order[2]],
                             models[order[3]]}) == out);
  } while (std::next_permutation(order.begin(), order.end()));

  const FeatureMatrix raw(1, 2, {3, 4}, {"x"});
  const FeatureMatrix unit(1, 2, {1, 0}, {"x"});
  CHECK_THROWS_AS(ensemble_features({raw, unit}), ContractError);
}

TEST_CASE("pca_fit eigenvalues match a Jacobi eigensolver on the covariance") {
  Rng rng(23);
  const auto g = oracle::random_features(rng, 50, 16, "p", false);
  const PcaModel model = pca_fit(g, 8, false);
  oracle::Dense cov(16);
  std::vector<double> mean(16, 0.0);
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t c = 0; c < 16; ++c) mean[c] += g.row(i)[c] / 50.0;
  }
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t a = 0; a < 16; ++a) {
      for (std::size_t b = 0; b < 16; ++b) {
        cov(a, b) += (g.row(i)[a] - mean[a]) * (g.row(i)[b] - mean[b]) / 49.0;
      }
    }
  }
  const auto eig = oracle::jacobi_eigen(cov);
  REQUIRE(model.eigenvalues.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(std::abs(model.eigenvalues[i] - eig.values[i]) <= 1e-6);
    if (i > 0) CHECK(model.eigenvalues[i] <= model.eigenvalues[i - 1]);
    // Components agree up to sign.
    double dot = 0.0;
    for (std::size_t c = 0; c < 16; ++c) dot += model.components[i * 16 + c] * eig.vectors[i * 16 + c];
    CHECK(std::abs(std::abs(dot) - 1.0) <= 1e-6);
  }
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 16; ++c) dot += model.components[i * 16 + c] * model.components[j * 16 + c];
      CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) <= 1e-5);
    }
  }
}

TEST_CASE("pca geometry and full-rank rotation") {
  std::vector<float> line;
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) {
    const float t = static_cast<float>(i) - 4.5f;
    line.push_back(3 * t);
    line.push_back(4 * t);
    ids.push_back("l" + std::to_string(i));
  }
  const PcaModel m = pca_fit(FeatureMatrix(10, 2, line, ids), 1, false);
  CHECK(std::abs(std::abs(m.components[0]) - 0.6) <= 1e-9);
  CHECK(std::abs(std::abs(m.components[1]) - 0.8) <= 1e-9);
  CHECK_THROWS_AS(pca_fit(FeatureMatrix(10, 2, line, ids), 2, false), ContractError);
  CHECK_THROWS_AS(pca_fit(FeatureMatrix(10, 2, line, ids), 3, false), ContractError);

  Rng rng(24);
  const auto g = oracle::random_features(rng, 40, 6, "g");
  const auto q = oracle::random_features(rng, 8, 6, "q");
  const PcaModel full = pca_fit(g, 6, false);
  const FeatureMatrix gt = pca_transform(g, full);
  const FeatureMatrix qt = pca_transform(q, full);
  check_unit_rows(gt);
  check_unit_rows(qt);
  auto centered_unit = [&](std::span<const float> row) {
    std::vector<double> v(6);
    double norm = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
      v[c] = row[c] - full.mean[c];
      norm += v[c] * v[c];
    }
    for (double& x : v) x /= std::sqrt(norm);
    return v;
  };
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const auto qc = centered_unit(q.row(i));
    std::vector<double> before(g.rows());
    std::vector<double> after(g.rows());
    for (std::size_t j = 0; j < g.rows(); ++j) {
      const auto gc = centered_unit(g.row(j));
      double s = 0.0;
      double t = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        s += qc[c] * gc[c];
        t += double(qt.row(i)[c]) * gt.row(j)[c];
      }
      before[j] = s;
      after[j] = t;
      CHECK(std::abs(s - t) <= 1e-5);
    }
    std::vector<std::size_t> ob(g.rows());
    std::vector<std::size_t> oa(g.rows());
    std::iota(ob.begin(), ob.end(), 0);
    std::iota(oa.begin(), oa.end(), 0);
    std::stable_sort(ob.begin(), ob.end(), [&](auto a, auto b) { return before[a] > before[b]; });
    std::stable_sort(oa.begin(), oa.end(), [&](auto a, auto b) { return after[a] > after[b]; });
    // Ranking is preserved except where two similarities are within float noise.
    for (std::size_t r = 0; r < ob.size(); ++r) {
      if (ob[r] != oa[r]) CHECK(std::abs(before[ob[r]] - before[oa[r]]) <= 1e-5);
    }
  }

  const PcaModel white = pca_fit(g, 4, true);
  const FeatureMatrix w = pca_transform(q, white);
  check_unit_rows(w);
  CHECK(w.dim() == 4);
}

TEST_CASE("PCAM round trip") {
  Rng rng(25);
  const auto dir = oracle::scratch_dir("agg");
  const PcaModel m = pca_fit(oracle::random_features(rng, 30, 7, "g"), 5, true);
  save_pca(m, dir / "m.pcam");
  const std::string bytes = oracle::read_bytes(dir / "m.pcam");
  CHECK(bytes.substr(0, 4) == "PCAM");
  const PcaModel back = load_pca(dir / "m.pcam");
  CHECK(back == m);
  CHECK(encode_pca(back) == bytes);
  CHECK_THROWS_AS(decode_pca(bytes.substr(0, bytes.size() - 1)), TruncationError);
}

TEST_CASE("dba_augment") {
  Rng rng(26);
  const auto g = oracle::random_features(rng, 30, 8, "g");
  const NeighborTable t = knn_self_excluded(g, 3);
  CHECK(dba_augment(g, t, 0) == l2_normalize(g));
  const FeatureMatrix out = dba_augment(g, t, 3);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const auto idx = t.indices(i);
    check_row(out.row(i),
              combine({g.row(i), g.row(idx[0]), g.row(idx[1]), g.row(idx[2])},
                      {1.0, 1.0, 2.0 / 3.0, 1.0 / 3.0}),
              1e-6);
  }
  check_unit_rows(out);
  const FeatureMatrix uni = dba_augment(g, t, 2, DbaWeighting::kUniform);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const auto idx = t.indices(i);
    check_row(uni.row(i), combine({g.row(i), g.row(idx[0]), g.row(idx[1])}, {1, 1, 1}), 1e-6);
  }
  CHECK_THROWS_AS(dba_augment(g, t, 4), ContractError);

  const FeatureMatrix twin(2, 2, {0.6f, 0.8f, 0.6f, 0.8f}, {"a", "b"});
  const FeatureMatrix tw = dba_augment(twin, knn_self_excluded(twin, 1), 1);
  CHECK(tw == l2_normalize(twin));
}

TEST_CASE("aqe_expand") {
  Rng rng(27);
  const auto g = oracle::random_features(rng, 40, 8, "g");
  const auto q = oracle::random_features(rng, 10, 8, "q");
  const NeighborTable t = knn_search(q, g, 5);
  CHECK(aqe_expand(q, g, t, 0) == l2_normalize(q));
  const FeatureMatrix out = aqe_expand(q, g, t, 5);
  for (std::size_t i = 0; i < q.rows(); ++i) {
    std::vector<std::span<const float>> rows{q.row(i)};
    for (auto j : t.indices(i)) rows.push_back(g.row(j));
    check_row(out.row(i), combine(rows, std::vector<double>(6, 1.0 / 6)), 1e-6);
  }
  CHECK_THROWS_AS(aqe_expand(q, g, t, 6), ContractError);

  const FeatureMatrix q1(1, 8, {g.row(4).begin(), g.row(4).end()}, {"q"});
  const FeatureMatrix same = aqe_expand(q1, g, knn_search(q1, g, 1), 1);
  check_row(same.row(0), combine({q1.row(0)}, {1.0}), 1e-7);
}
