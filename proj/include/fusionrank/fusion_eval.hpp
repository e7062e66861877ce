#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "fusionrank/sparse.hpp"
#include "fusionrank/tensorio.hpp"

namespace fusionrank {

struct FusionParams {
  double lambda = 1.0;
  std::size_t top_k = 100;
  double d_max_fill = 1.3;  // (1 - 0.3) + 2 * 0.3 for the default rerank weighting
  double s_min_fill = 0.0;
  bool normalize_before_fuse = false;
};

enum class ApDenominator {
  kMinRelevantK,  // min(|relevant|, K)
  kRelevant,      // |relevant|
};

struct MapReport {
  double mean = 0.0;
  std::vector<std::pair<std::string, double>> per_query;
};

void validate(const FusionParams& p);

/// S_final = S - lambda * D over the union of defined entries per row; absent
/// S entries read as s_min_fill and absent D entries as d_max_fill.
SparseRowMatrix fuse_scores(const SparseRowMatrix& s, const SparseRowMatrix& d,
                            const FusionParams& p);

/// Per query: defined entries by descending score (ties to the lower gallery
/// index), truncated to top_k.
std::vector<RankedResult> rank_topk(const SparseRowMatrix& scores,
                                    const std::vector<std::string>& query_ids,
                                    const std::vector<std::string>& gallery_ids,
                                    std::size_t top_k);

double ap_at_k(std::span<const std::string> ranked,
               const std::unordered_set<std::string>& relevant, std::size_t k,
               ApDenominator denominator = ApDenominator::kMinRelevantK);

/// Mean AP@K where relevance is label equality against `gallery_ids`.
MapReport map_at_k(const std::vector<RankedResult>& results, const LabelMap& labels,
                   const std::vector<std::string>& gallery_ids, std::size_t k,
                   ApDenominator denominator = ApDenominator::kMinRelevantK);

/// Same, taking the gallery to be every labelled id that is not a query.
MapReport map_at_k(const std::vector<RankedResult>& results, const LabelMap& labels,
                   std::size_t k, ApDenominator denominator = ApDenominator::kMinRelevantK);

}  // namespace fusionrank
