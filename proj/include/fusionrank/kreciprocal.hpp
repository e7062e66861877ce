#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fusionrank/metricspace.hpp"
#include "fusionrank/sparse.hpp"
#include "fusionrank/tensorio.hpp"

namespace fusionrank {

struct KReciprocalParams {
  std::size_t k1 = 260;
  std::size_t k2 = 30;
  double lambda_value = 0.3;
};

/// Which items the neighbor structures are built over.
enum class NeighborPool {
  kPooled,       // queries and gallery together
  kGalleryOnly,  // gallery only; each query is tested against gallery tables
};

struct KReciprocalOptions {
  NeighborPool pool = NeighborPool::kPooled;
  std::size_t workers = 1;
  std::size_t block_rows = 1024;
};

/// Per-item sorted index sets.
using IndexSets = std::vector<std::vector<std::uint32_t>>;

/// Per-item sparse weight vectors over the item set.
using EncodedSet = SparseRows<double>;

void validate(const KReciprocalParams& p);

/// Largest distance a rerank entry can take: (1 - lambda_value) + 2 * lambda_value.
double rerank_max_distance(const KReciprocalParams& p);

/// R(p, k) = {g in N(p, k) : p in N(g, k)} for every item, from a
/// self-excluded table over the item set.
IndexSets reciprocal_sets(const NeighborTable& neighbors, std::size_t k);

/// R*(p): R(p, k1) plus R(q, k1/2) for each q in R(p, k1) whose half-size set
/// overlaps R(p, k1) in at least two thirds of its members. Sorted, self excluded.
IndexSets reciprocal_expand(const NeighborTable& neighbors, std::size_t k1);

/// Expansion step from precomputed R(., k1) and R(., k1/2) sets.
IndexSets expand_sets(const IndexSets& full, const IndexSets& half);

/// weight(p -> g) = exp(-distance(p, g)) for g in R*(p).
EncodedSet encode_weights(const IndexSets& r_star, std::size_t item_count,
                          const std::function<double(std::uint32_t, std::uint32_t)>& distance);

/// V'(p) = (1/k2) * sum of V over p itself and its first k2 - 1 neighbors.
EncodedSet local_query_expansion(const EncodedSet& v, const NeighborTable& neighbors,
                                 std::size_t k2, std::size_t workers = 1);

/// 1 - sum(min) / sum(max) over two sparse rows; 1 when both are empty.
double jaccard_distance(std::span<const std::uint32_t> p_cols, std::span<const double> p_vals,
                        std::span<const std::uint32_t> g_cols, std::span<const double> g_vals);

/// Euclidean distance accumulated in 64-bit.
double euclidean64(std::span<const float> a, std::span<const float> b);

/// Every gallery index for every query.
IndexSets full_candidates(std::size_t queries, std::size_t gallery);

/// Top-n gallery indices per query by initial cosine similarity, sorted by index.
IndexSets top_candidates(const FeatureMatrix& queries, const FeatureMatrix& gallery,
                         std::size_t n, const SearchOptions& opts = {});

/// Query x gallery distance matrix
///   D = (1 - lambda_value) * jaccard + lambda_value * euclidean,
/// defined only on each query's candidate set.
SparseRowMatrix kreciprocal_rerank(const FeatureMatrix& queries, const FeatureMatrix& gallery,
                                   const KReciprocalParams& params, const IndexSets& candidates,
                                   const KReciprocalOptions& opts = {});

}  // namespace fusionrank
