#include "fusionrank/kreciprocal.hpp"

#include <algorithm>
#include <cmath>

#include "fusionrank/error.hpp"
#include "fusionrank/parallel.hpp"

namespace fusionrank {

namespace {

using Row = std::vector<std::pair<std::uint32_t, double>>;

std::vector<std::vector<std::uint32_t>> sorted_prefixes(const NeighborTable& t, std::size_t k) {
  std::vector<std::vector<std::uint32_t>> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    const auto idx = t.indices(i);
    out[i].assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out[i].begin(), out[i].end());
  }
  return out;
}

bool contains(const std::vector<std::uint32_t>& sorted, std::uint32_t v) {
  return std::binary_search(sorted.begin(), sorted.end(), v);
}

std::size_t intersection_size(const std::vector<std::uint32_t>& a,
                              const std::vector<std::uint32_t>& b) {
  std::size_t count = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++count;
      ++ia;
      ++ib;
    }
  }
  return count;
}

// R*(p) from R(p, k1); `self` is removed when it is a valid item index.
std::vector<std::uint32_t> expand_one(const std::vector<std::uint32_t>& full_p,
                                      const IndexSets& half, std::int64_t self) {
  std::vector<std::uint32_t> out = full_p;
  for (std::uint32_t q : full_p) {
    const auto& h = half[q];
    // |R(q) ∩ R(p)| >= 2/3 |R(q)|, compared in integers.
    if (3 * intersection_size(h, full_p) >= 2 * h.size()) {
      out.insert(out.end(), h.begin(), h.end());
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (self >= 0) {
    auto it = std::lower_bound(out.begin(), out.end(), static_cast<std::uint32_t>(self));
    if (it != out.end() && *it == static_cast<std::uint32_t>(self)) out.erase(it);
  }
  return out;
}

// Sum of sparse rows in the given order, scaled; columns ascending.
Row sum_rows(const std::vector<std::size_t>& rows, const EncodedSet& v, double scale) {
  Row gathered;
  for (std::size_t r : rows) {
    const auto cols = v.row_columns(r);
    const auto vals = v.row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) gathered.emplace_back(cols[k], vals[k]);
  }
  // Stable: equal columns keep row order, so the summation order is fixed.
  std::stable_sort(gathered.begin(), gathered.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  Row out;
  for (std::size_t k = 0; k < gathered.size();) {
    const std::uint32_t col = gathered[k].first;
    double acc = 0.0;
    while (k < gathered.size() && gathered[k].first == col) acc += gathered[k++].second;
    out.emplace_back(col, acc * scale);
  }
  return out;
}

FeatureMatrix pooled_items(const FeatureMatrix& queries, const FeatureMatrix& gallery) {
  std::vector<float> data;
  data.reserve((queries.rows() + gallery.rows()) * queries.dim());
  data.insert(data.end(), queries.data().begin(), queries.data().end());
  data.insert(data.end(), gallery.data().begin(), gallery.data().end());
  std::vector<std::string> ids;
  ids.reserve(queries.rows() + gallery.rows());
  for (const auto& id : queries.ids()) ids.push_back("q:" + id);
  for (const auto& id : gallery.ids()) ids.push_back("g:" + id);
  return FeatureMatrix(queries.rows() + gallery.rows(), queries.dim(), std::move(data),
                       std::move(ids));
}

void check_candidates(const IndexSets& candidates, std::size_t nq, std::size_t ng) {
  if (candidates.size() != nq) {
    throw ContractError("candidate list has " + std::to_string(candidates.size()) +
                        " rows, expected " + std::to_string(nq));
  }
  for (std::size_t i = 0; i < nq; ++i) {
    const auto& c = candidates[i];
    for (std::size_t j = 0; j < c.size(); ++j) {
      if (c[j] >= ng) throw ContractError("candidate index outside the gallery");
      if (j > 0 && c[j] <= c[j - 1]) {
        throw ContractError("candidate indices must be strictly increasing");
      }
    }
  }
}

std::vector<std::pair<std::uint32_t, float>> distance_row(
    const EncodedSet& vq, std::size_t q_row, const EncodedSet& vg, std::size_t g_offset,
    std::span<const float> query, const FeatureMatrix& gallery,
    const std::vector<std::uint32_t>& candidates, double lambda_value) {
  std::vector<std::pair<std::uint32_t, float>> row;
  row.reserve(candidates.size());
  for (std::uint32_t g : candidates) {
    const double jac = jaccard_distance(vq.row_columns(q_row), vq.row_values(q_row),
                                        vg.row_columns(g_offset + g), vg.row_values(g_offset + g));
    const double euc = euclidean64(query, gallery.row(g));
    row.emplace_back(g, static_cast<float>((1.0 - lambda_value) * jac + lambda_value * euc));
  }
  return row;
}

}  // namespace

void validate(const KReciprocalParams& p) {
  if (p.k1 == 0) throw ContractError("k1 must be at least 1");
  if (p.k2 == 0) throw ContractError("k2 must be at least 1");
  if (p.k2 > p.k1) throw ContractError("k2 must not exceed k1");
  if (!(p.lambda_value >= 0.0 && p.lambda_value <= 1.0)) {
    throw ContractError("lambda_value must lie in [0, 1]");
  }
}

double rerank_max_distance(const KReciprocalParams& p) {
  return (1.0 - p.lambda_value) + 2.0 * p.lambda_value;
}

IndexSets reciprocal_sets(const NeighborTable& neighbors, std::size_t k) {
  if (k > neighbors.k()) {
    throw ContractError("k=" + std::to_string(k) + " exceeds neighbor table width " +
                        std::to_string(neighbors.k()));
  }
  for (std::uint32_t idx : neighbors.all_indices()) {
    if (idx >= neighbors.rows()) {
      throw ContractError("reciprocal neighbors need a table over the item set itself");
    }
  }
  const auto prefixes = sorted_prefixes(neighbors, k);
  IndexSets out(neighbors.rows());
  for (std::size_t p = 0; p < neighbors.rows(); ++p) {
    for (std::uint32_t g : prefixes[p]) {
      if (g != p && contains(prefixes[g], static_cast<std::uint32_t>(p))) out[p].push_back(g);
    }
  }
  return out;
}

IndexSets expand_sets(const IndexSets& full, const IndexSets& half) {
  IndexSets out(full.size());
  for (std::size_t p = 0; p < full.size(); ++p) {
    out[p] = expand_one(full[p], half, static_cast<std::int64_t>(p));
  }
  return out;
}

IndexSets reciprocal_expand(const NeighborTable& neighbors, std::size_t k1) {
  if (k1 == 0) throw ContractError("k1 must be at least 1");
  return expand_sets(reciprocal_sets(neighbors, k1), reciprocal_sets(neighbors, k1 / 2));
}

EncodedSet encode_weights(const IndexSets& r_star, std::size_t item_count,
                          const std::function<double(std::uint32_t, std::uint32_t)>& distance) {
  EncodedSet out(item_count);
  Row row;
  for (std::size_t p = 0; p < r_star.size(); ++p) {
    row.clear();
    for (std::uint32_t g : r_star[p]) {
      row.emplace_back(g, std::exp(-distance(static_cast<std::uint32_t>(p), g)));
    }
    out.push_row(std::span<const std::pair<std::uint32_t, double>>(row));
  }
  return out;
}

EncodedSet local_query_expansion(const EncodedSet& v, const NeighborTable& neighbors,
                                 std::size_t k2, std::size_t workers) {
  if (k2 == 0) throw ContractError("k2 must be at least 1");
  if (k2 - 1 > neighbors.k()) {
    throw ContractError("k2=" + std::to_string(k2) + " needs " + std::to_string(k2 - 1) +
                        " neighbors beyond self, table has " + std::to_string(neighbors.k()));
  }
  if (neighbors.rows() != v.rows()) {
    throw ContractError("neighbor table rows do not match encoded rows");
  }
  std::vector<Row> rows(v.rows());
  const double scale = 1.0 / static_cast<double>(k2);
  parallel_for(v.rows(), resolve_workers(workers), [&](std::size_t p) {
    std::vector<std::size_t> members{p};
    const auto idx = neighbors.indices(p);
    for (std::size_t j = 0; j + 1 < k2; ++j) members.push_back(idx[j]);
    rows[p] = sum_rows(members, v, scale);
  });
  return assemble_rows(v.cols(), rows);
}

double jaccard_distance(std::span<const std::uint32_t> p_cols, std::span<const double> p_vals,
                        std::span<const std::uint32_t> g_cols, std::span<const double> g_vals) {
  double min_sum = 0.0;
  double max_sum = 0.0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < p_cols.size() || j < g_cols.size()) {
    if (j == g_cols.size() || (i < p_cols.size() && p_cols[i] < g_cols[j])) {
      max_sum += p_vals[i++];
    } else if (i == p_cols.size() || g_cols[j] < p_cols[i]) {
      max_sum += g_vals[j++];
    } else {
      min_sum += std::min(p_vals[i], g_vals[j]);
      max_sum += std::max(p_vals[i], g_vals[j]);
      ++i;
      ++j;
    }
  }
  if (max_sum <= 0.0) return 1.0;
  return 1.0 - min_sum / max_sum;
}

double euclidean64(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

IndexSets full_candidates(std::size_t queries, std::size_t gallery) {
  std::vector<std::uint32_t> all(gallery);
  for (std::size_t j = 0; j < gallery; ++j) all[j] = static_cast<std::uint32_t>(j);
  return IndexSets(queries, all);
}

IndexSets top_candidates(const FeatureMatrix& queries, const FeatureMatrix& gallery,
                         std::size_t n, const SearchOptions& opts) {
  const std::size_t k = std::min(n, gallery.rows());
  if (k == 0) return IndexSets(queries.rows());
  const NeighborTable t = knn_search(queries, gallery, k, opts);
  IndexSets out(queries.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    const auto idx = t.indices(i);
    out[i].assign(idx.begin(), idx.end());
    std::sort(out[i].begin(), out[i].end());
  }
  return out;
}

SparseRowMatrix kreciprocal_rerank(const FeatureMatrix& queries, const FeatureMatrix& gallery,
                                   const KReciprocalParams& params, const IndexSets& candidates,
                                   const KReciprocalOptions& opts) {
  validate(params);
  if (queries.dim() != gallery.dim()) throw ContractError("rerank: dimension mismatch");
  const std::size_t nq = queries.rows();
  const std::size_t ng = gallery.rows();
  check_candidates(candidates, nq, ng);
  const std::size_t width = std::max(params.k1, params.k2 - 1);
  const std::size_t workers = resolve_workers(opts.workers);
  const SearchOptions search{workers, opts.block_rows};
  std::vector<std::vector<std::pair<std::uint32_t, float>>> rows(nq);

  if (opts.pool == NeighborPool::kPooled) {
    const FeatureMatrix items = pooled_items(queries, gallery);
    const NeighborTable table = knn_self_excluded(items, width, search);
    const IndexSets r_star = reciprocal_expand(table, params.k1);
    const EncodedSet v = encode_weights(r_star, items.rows(), [&](std::uint32_t a, std::uint32_t b) {
      return euclidean64(items.row(a), items.row(b));
    });
    const EncodedSet v_exp = local_query_expansion(v, table, params.k2, workers);
    parallel_for(nq, workers, [&](std::size_t p) {
      rows[p] = distance_row(v_exp, p, v_exp, nq, queries.row(p), gallery, candidates[p],
                             params.lambda_value);
    });
    return assemble_rows(ng, rows);
  }

  // Gallery-only: gallery structures ignore the queries; a query is counted
  // in N(g, k1) when it is at least as similar as g's k1-th gallery neighbor.
  const NeighborTable g_table = knn_self_excluded(gallery, width, search);
  const NeighborTable q_table = knn_search(queries, gallery, width, search);
  const IndexSets g_full = reciprocal_sets(g_table, params.k1);
  const IndexSets g_half = reciprocal_sets(g_table, params.k1 / 2);
  const IndexSets g_star = expand_sets(g_full, g_half);
  const EncodedSet vg = encode_weights(g_star, ng, [&](std::uint32_t a, std::uint32_t b) {
    return euclidean64(gallery.row(a), gallery.row(b));
  });
  const EncodedSet vg_exp = local_query_expansion(vg, g_table, params.k2, workers);

  parallel_for(nq, workers, [&](std::size_t p) {
    const auto idx = q_table.indices(p);
    const auto sims = q_table.sims(p);
    std::vector<std::uint32_t> full_p;
    for (std::size_t r = 0; r < params.k1; ++r) {
      const std::uint32_t g = idx[r];
      if (sims[r] >= g_table.sims(g)[params.k1 - 1]) full_p.push_back(g);
    }
    std::sort(full_p.begin(), full_p.end());
    const std::vector<std::uint32_t> star = expand_one(full_p, g_half, -1);

    // Query row first, then the gallery rows of its first k2 - 1 neighbors.
    Row gathered;
    for (std::uint32_t g : star) {
      gathered.emplace_back(g, std::exp(-euclidean64(queries.row(p), gallery.row(g))));
    }
    for (std::size_t j = 0; j + 1 < params.k2; ++j) {
      const auto cols = vg.row_columns(idx[j]);
      const auto vals = vg.row_values(idx[j]);
      for (std::size_t k = 0; k < cols.size(); ++k) gathered.emplace_back(cols[k], vals[k]);
    }
    std::stable_sort(gathered.begin(), gathered.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    Row expanded;
    const double scale = 1.0 / static_cast<double>(params.k2);
    for (std::size_t k = 0; k < gathered.size();) {
      const std::uint32_t col = gathered[k].first;
      double acc = 0.0;
      while (k < gathered.size() && gathered[k].first == col) acc += gathered[k++].second;
      expanded.emplace_back(col, acc * scale);
    }
    EncodedSet vq(ng);
    vq.push_row(std::span<const std::pair<std::uint32_t, double>>(expanded));
    rows[p] = distance_row(vq, 0, vg_exp, 0, queries.row(p), gallery, candidates[p],
                           params.lambda_value);
  });
  return assemble_rows(ng, rows);
}

}  // namespace fusionrank
