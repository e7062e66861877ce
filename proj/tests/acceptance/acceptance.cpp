// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fusionrank/config.hpp"
#include "fusionrank/diffusion.hpp"
#include "fusionrank/fusion_eval.hpp"
#include "fusionrank/gradcheck.hpp"
#include "fusionrank/kreciprocal.hpp"
#include "fusionrank/losses.hpp"
#include "fusionrank/metricspace.hpp"
#include "fusionrank/pipeline.hpp"
#include "fusionrank/synthetic.hpp"
#include "oracles.hpp"

namespace fr = fusionrank;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

oracle::Dense densify(const fr::SparseRows<double>& s) {
  oracle::Dense d(s.rows());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const auto cols = s.row_columns(i);
    const auto vals = s.row_values(i);
    for (std::size_t k = 0; k < cols.size(); ++k) d(i, cols[k]) = vals[k];
  }
  return d;
}

const fr::LogSink quiet = [](const nlohmann::json&) {};

Outcome knn_exactness() {
  fr::Rng rng(9001);
  double knn_seconds = 0.0;
  std::size_t mismatches = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t ng = 20 + rng.below(1981);
    const std::size_t dim = 2 + rng.below(63);
    const std::size_t nq = 1 + rng.below(30);
    const std::size_t k = 1 + rng.below(20);
    const auto g = oracle::random_features(rng, ng, dim, "g");
    const auto q = oracle::random_features(rng, nq, dim, "q");
    const auto start = Clock::now();
    const fr::NeighborTable got = fr::knn_search(q, g, k, {1, 1 + rng.below(64)});
    knn_seconds += seconds_since(start);
    if (!(got == oracle::full_sort_knn(q, g, k, false))) ++mismatches;
  }
  return {mismatches == 0 && knn_seconds < 5.0,
          "50 instances, " + std::to_string(mismatches) + " mismatches, " +
              fmt("%.2f s", knn_seconds)};
}

Outcome loss_gradients() {
  const auto start = Clock::now();
  const auto reports = fr::losses::run_gradcheck();
  bool ok = reports.size() == 3;
  std::string detail;
  for (const auto& r : reports) {
    ok = ok && r.passed && r.instances == 100 && r.max_rel_error <= 1e-4;
    detail += r.loss + "=" + fmt("%.2e", r.max_rel_error) + " ";
  }
#ifdef FUSIONRANK_CLI
  const int status = std::system((std::string(FUSIONRANK_CLI) + " losses gradcheck >/dev/null").c_str());
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  ok = ok && code == 0;
  detail += "cli_exit=" + std::to_string(code) + " ";
#else
  ok = false;
  detail += "cli not built ";
#endif
  const double elapsed = seconds_since(start);
  ok = ok && elapsed < 30.0;
  return {ok, detail + fmt("%.2f s", elapsed)};
}

Outcome combined_loss_arithmetic() {
  using namespace fr::losses;
  const double four = combined_loss({2.0, {}}, {0.5, {}}, CombinedLossWeights::from_batch_size(4)).value;
  const double one = combined_loss({2.0, {}}, {0.5, {}}, CombinedLossWeights::from_batch_size(1)).value;
  return {four == 2.125 && one == 2.0 + 0.5,
          "beta=4 -> " + fmt("%.17g", four) + ", beta=1 -> " + fmt("%.17g", one)};
}

Outcome kreciprocal_oracle() {
  fr::Rng rng(9002);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t total = 12 + rng.below(49);
    const std::size_t nq = 1 + rng.below(total / 3);
    const std::size_t ng = total - nq;
    const std::size_t dim = 3 + rng.below(10);
    const auto all = oracle::clustered_features(rng, 1 + rng.below(4), total, dim, 0.4, "x");
    std::vector<float> qd(all.data().begin(), all.data().begin() + static_cast<std::ptrdiff_t>(nq * dim));
    std::vector<float> gd(all.data().begin() + static_cast<std::ptrdiff_t>(nq * dim),
                          all.data().begin() + static_cast<std::ptrdiff_t>(total * dim));
    std::vector<std::string> qi(all.ids().begin(), all.ids().begin() + static_cast<std::ptrdiff_t>(nq));
    std::vector<std::string> gi(all.ids().begin() + static_cast<std::ptrdiff_t>(nq),
                                all.ids().begin() + static_cast<std::ptrdiff_t>(total));
    const fr::FeatureMatrix q(nq, dim, qd, qi);
    const fr::FeatureMatrix g(ng, dim, gd, gi);
    fr::KReciprocalParams p;
    p.k1 = 2 + rng.below(std::min<std::size_t>(15, total - 2));
    p.k2 = 1 + rng.below(p.k1);
    p.lambda_value = rng.uniform();
    const auto d = fr::kreciprocal_rerank(q, g, p, fr::full_candidates(nq, ng),
                                          {fr::NeighborPool::kPooled, 1 + rng.below(4), 1024});
    const auto ref = oracle::dense_kreciprocal(q, g, p);
    for (std::size_t i = 0; i < nq; ++i) {
      if (d.row_size(i) != ng) worst = INFINITY;
      for (std::size_t j = 0; j < ng; ++j) {
        worst = std::max(worst, std::abs(double(d.at_or(i, static_cast<std::uint32_t>(j), NAN)) - ref[i][j]));
      }
    }
  }
  const std::vector<std::uint32_t> c{0, 4};
  const std::vector<double> v{0.3, 0.8};
  const std::vector<std::uint32_t> c2{1, 2};
  const bool unit = fr::jaccard_distance(c, v, c, v) == 0.0 &&
                    fr::jaccard_distance(c, v, c2, v) == 1.0;
  return {worst <= 1e-6 && unit,
          "20 instances, max |D - D_ref| = " + fmt("%.2e", worst) +
              (unit ? ", jaccard unit cases exact" : ", jaccard unit cases WRONG")};
}

Outcome diffusion_solve() {
  fr::Rng rng(9003);
  double worst = 0.0;
  std::size_t max_iters = 0;
  bool alpha_zero = true;
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t n = 10 + rng.below(41);
    const auto g = oracle::random_features(rng, n, 2 + rng.below(8), "g");
    fr::DiffusionParams p;
    p.kd = 2 + rng.below(std::min<std::size_t>(10, n - 2));
    p.n_trunc = n;
    p.alpha = 0.99;
    p.cg_tol = 1e-12;
    p.cg_max_iter = 10 * n;
    const fr::AffinityGraph graph = fr::build_affinity(g, p);
    std::vector<double> y(n, 0.0);
    for (std::size_t s = 0; s < 1 + rng.below(5); ++s) y[rng.below(n)] = rng.uniform(0.05, 1.0);
    const fr::CgResult r = fr::solve_linear(graph.adjacency, y, p);
    max_iters = std::max(max_iters, r.iterations);
    oracle::Dense m = densify(graph.adjacency);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) m(i, j) = (i == j ? 1.0 : 0.0) - p.alpha * m(i, j);
    }
    const auto want = oracle::dense_solve(m, y);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num += (r.f[i] - want[i]) * (r.f[i] - want[i]);
      den += want[i] * want[i];
    }
    worst = std::max(worst, std::sqrt(num / den));

    fr::DiffusionParams zero = p;
    zero.alpha = 0.0;
    alpha_zero = alpha_zero && fr::solve_linear(graph.adjacency, y, zero).f == y;
  }

  // Two separated clusters, source on the first only.
  std::vector<float> data;
  std::vector<std::string> ids;
  for (int i = 0; i < 16; ++i) {
    const float e = static_cast<float>(rng.uniform(-0.05, 0.05));
    if (i < 8) {
      data.insert(data.end(), {1.f, e, 0.f});
    } else {
      data.insert(data.end(), {0.f, e, 1.f});
    }
    ids.push_back("n" + std::to_string(i));
  }
  const auto two = fr::l2_normalize(fr::FeatureMatrix(16, 3, data, ids));
  fr::DiffusionParams p;
  p.kd = 4;
  p.n_trunc = 16;
  const auto graph = fr::build_affinity(two, p);
  std::vector<double> y(16, 0.0);
  y[2] = 1.0;
  const auto f = fr::solve_linear(graph.adjacency, y, p).f;
  bool block = true;
  for (std::size_t i = 8; i < 16; ++i) block = block && f[i] == 0.0;

  return {worst <= 1e-5 && alpha_zero && block,
          "20 graphs, max rel error " + fmt("%.2e", worst) + " (cg_tol 1e-12, <= " +
              std::to_string(max_iters) + " iterations), alpha=0 bitwise " +
              (alpha_zero ? "yes" : "no") + ", disconnected zeros " + (block ? "yes" : "no")};
}

Outcome spectral_radius() {
  fr::Rng rng(9004);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t n = 10 + rng.below(191);
    const auto g = oracle::random_features(rng, n, 2 + rng.below(30), "g");
    fr::DiffusionParams p;
    p.kd = 1 + rng.below(std::min<std::size_t>(30, n - 1));
    p.n_trunc = n;
    const auto eig = oracle::jacobi_eigen(densify(fr::build_affinity(g, p).adjacency));
    worst = std::max({worst, std::abs(eig.values.front()), std::abs(eig.values.back())});
  }
  return {worst <= 1.0 + 1e-8, "20 graphs, max |eigenvalue| = " + fmt("%.15f", worst)};
}

Outcome map_correctness() {
  const std::vector<std::string> r{"a", "b", "c"};
  const double pattern = fr::ap_at_k(r, {"a", "c"}, 3);
  const double perfect = fr::ap_at_k(r, {"a", "b", "c"}, 3);
  const double empty = fr::ap_at_k(r, {}, 3);
  const std::vector<std::string> two{"a", "b"};
  const std::unordered_set<std::string> four{"a", "b", "c", "d"};
  const double comp = fr::ap_at_k(two, four, 2, fr::ApDenominator::kMinRelevantK);
  const double plain = fr::ap_at_k(two, four, 2, fr::ApDenominator::kRelevant);
  const bool ok = std::abs(pattern - 5.0 / 6.0) <= 1e-12 && std::abs(perfect - 1.0) <= 1e-12 &&
                  std::abs(empty) <= 1e-12 && std::abs(comp - 1.0) <= 1e-12 &&
                  std::abs(plain - 0.5) <= 1e-12;
  return {ok, "[1,0,1]->" + fmt("%.12f", pattern) + " perfect->" + fmt("%.1f", perfect) +
                  " empty->" + fmt("%.1f", empty) + " min(m,K)->" + fmt("%.2f", comp) +
                  " vs m->" + fmt("%.2f", plain)};
}

// Shared fixture: default parameters scaled to desk size.
struct Fixture {
  std::filesystem::path dir = oracle::scratch_dir("acceptance");
  Fixture() { fr::write_synthetic(fr::generate_synthetic({}), dir); }

  fr::PipelineConfig config(const std::string& run) const {
    fr::PipelineConfig cfg;
    cfg.models.push_back({"syn", {dir / "query.feat"}, {dir / "gallery.feat"}});
    cfg.labels = dir / "labels.csv";
    cfg.output_dir = dir / run;
    cfg.diffusion.params.kd = 8;
    cfg.diffusion.params.n_trunc = std::numeric_limits<std::size_t>::max();
    cfg.rerank.params.k1 = 10;
    cfg.rerank.params.k2 = 3;
    cfg.rerank.candidates = std::nullopt;
    cfg.eval.k = 10;
    cfg.workers = 1;
    return cfg;
  }
};

Outcome end_to_end(const Fixture& fx) {
  auto cos_cfg = fx.config("cosine");
  cos_cfg.diffusion.enabled = false;
  cos_cfg.rerank.enabled = false;
  auto dif_cfg = fx.config("diffusion");
  dif_cfg.rerank.enabled = false;
  auto kr_cfg = fx.config("rerank");
  kr_cfg.diffusion.enabled = false;
  const double cosine = fr::run_pipeline(cos_cfg, quiet).map->mean;
  const double diffusion = fr::run_pipeline(dif_cfg, quiet).map->mean;
  const double rerank = fr::run_pipeline(kr_cfg, quiet).map->mean;
  const auto start = Clock::now();
  const double fused = fr::run_pipeline(fx.config("fused"), quiet).map->mean;
  const double elapsed = seconds_since(start);
  const bool ok = fused >= cosine && diffusion >= cosine - 0.01 && rerank >= cosine - 0.01 &&
                  elapsed < 60.0;
  return {ok, "mAP@10 cosine=" + fmt("%.5f", cosine) + " fused=" + fmt("%.5f", fused) +
                  " diffusion=" + fmt("%.5f", diffusion) + " rerank=" + fmt("%.5f", rerank) +
                  " (floor " + fmt("%.5f", cosine - 0.01) + "), fused run " +
                  fmt("%.2f s", elapsed)};
}

std::vector<std::vector<std::string>> rankings(const std::vector<fr::RankedResult>& rs) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rs) {
    out.emplace_back();
    for (const auto& e : r.entries) out.back().push_back(e.first);
  }
  return out;
}

Outcome reductions(const Fixture& fx) {
  const std::size_t ng = 100;
  // Plain cosine: kNN then top-K, no pipeline involved.
  const auto q = fr::l2_normalize(fr::load_features(fx.dir / "query.feat"));
  const auto g = fr::l2_normalize(fr::load_features(fx.dir / "gallery.feat"));
  const fr::NeighborTable t = fr::knn_search(q, g, ng);
  std::vector<std::vector<std::string>> cosine;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    cosine.emplace_back();
    for (auto j : t.indices(i)) cosine.back().push_back(g.ids()[j]);
  }

  auto off = fx.config("all-off");
  off.diffusion.enabled = false;
  off.rerank.enabled = false;
  off.aggregate.tta = false;
  const bool all_off = rankings(fr::run_pipeline(off, quiet).results) == cosine;

  auto l1 = fx.config("lambda-value-1");
  l1.diffusion.enabled = false;
  l1.rerank.params.lambda_value = 1.0;
  const bool rerank_l1 = rankings(fr::run_pipeline(l1, quiet).results) == cosine;

  auto dif = fx.config("diffusion-only");
  dif.rerank.enabled = false;
  auto l0 = fx.config("lambda-0");
  l0.fusion.lambda = 0.0;
  const bool fuse_l0 =
      rankings(fr::run_pipeline(l0, quiet).results) == rankings(fr::run_pipeline(dif, quiet).results);

  return {all_off && rerank_l1 && fuse_l0,
          std::string("lambda_value=1 == cosine: ") + (rerank_l1 ? "yes" : "no") +
              ", lambda=0 == diffusion: " + (fuse_l0 ? "yes" : "no") +
              ", all stages off == knn top-K: " + (all_off ? "yes" : "no")};
}

Outcome determinism(const Fixture& fx) {
  std::vector<std::string> subs;
  for (std::size_t w : {1, 2, 8}) {
    auto cfg = fx.config("workers-" + std::to_string(w));
    cfg.workers = w;
    fr::run_pipeline(cfg, quiet);
    subs.push_back(oracle::read_bytes(cfg.output_dir / "submission.csv"));
  }
  const bool ok = !subs[0].empty() && subs[0] == subs[1] && subs[1] == subs[2];
  return {ok, "workers 1/2/8 submissions " + std::string(ok ? "bitwise identical" : "differ")};
}

Outcome round_trips() {
  fr::Rng rng(9005);
  const auto dir = oracle::scratch_dir("roundtrip");
  std::size_t failures = 0;
  auto twice = [&](const std::filesystem::path& a, const std::filesystem::path& b) {
    if (oracle::read_bytes(a) != oracle::read_bytes(b)) ++failures;
  };
  for (int inst = 0; inst < 10; ++inst) {
    const auto m = oracle::random_features(rng, rng.below(200), 1 + rng.below(64), "f", false);
    fr::save_features(m, dir / "a.feat");
    fr::save_features(fr::load_features(dir / "a.feat"), dir / "b.feat");
    twice(dir / "a.feat", dir / "b.feat");
    twice(dir / "a.feat.ids", dir / "b.feat.ids");

    const auto g = oracle::random_features(rng, 5 + rng.below(100), 8, "g");
    const auto q = oracle::random_features(rng, 1 + rng.below(20), 8, "q");
    fr::save_neighbors(fr::knn_search(q, g, 1 + rng.below(5)), dir / "a.nbrt");
    fr::save_neighbors(fr::load_neighbors(dir / "a.nbrt"), dir / "b.nbrt");
    twice(dir / "a.nbrt", dir / "b.nbrt");

    const std::size_t cols = 1 + rng.below(300);
    std::vector<std::vector<std::pair<std::uint32_t, float>>> rows(rng.below(30));
    for (auto& r : rows) {
      for (std::uint32_t c = 0; c < cols; ++c) {
        if (rng.uniform() < 0.2) r.emplace_back(c, static_cast<float>(rng.normal()));
      }
    }
    fr::save_sparse(fr::assemble_rows<float>(cols, rows), dir / "a.sprw");
    fr::save_sparse(fr::load_sparse(dir / "a.sprw"), dir / "b.sprw");
    twice(dir / "a.sprw", dir / "b.sprw");

    std::vector<fr::RankedResult> results;
    for (std::uint64_t i = 0, n = rng.below(20); i < n; ++i) {
      fr::RankedResult r{"q" + std::to_string(i), {}};
      for (std::uint64_t j = 0, m = rng.below(100); j < m; ++j) {
        r.entries.emplace_back("g" + std::to_string(j * 3 + rng.below(3)), 0.f);
      }
      results.push_back(r);
    }
    fr::write_submission(results, dir / "a.csv");
    fr::write_submission(fr::load_submission(dir / "a.csv"), dir / "b.csv");
    twice(dir / "a.csv", dir / "b.csv");
  }
  return {failures == 0, "FEAT/NBRT/SPRW/CSV x10 random payloads, " +
                             std::to_string(failures) + " byte mismatches"};
}

}  // namespace

int main() {
  const Fixture fixture;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"knn-exactness", knn_exactness},
      {"loss-gradients", loss_gradients},
      {"combined-loss-arithmetic", combined_loss_arithmetic},
      {"kreciprocal-oracle", kreciprocal_oracle},
      {"diffusion-linear-solve", diffusion_solve},
      {"spectral-radius", spectral_radius},
      {"map-correctness", map_correctness},
      {"end-to-end-synthetic", [&] { return end_to_end(fixture); }},
      {"reduction-identities", [&] { return reductions(fixture); }},
      {"determinism", [&] { return determinism(fixture); }},
      {"format-round-trips", round_trips},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %-26s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
