#include "fusionrank/fusion_eval.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include "fusionrank/error.hpp"

namespace fusionrank {

namespace {

// Per-row min-max rescaling of the defined entries; a constant row maps to 0.
std::vector<double> minmax_row(std::span<const float> vals) {
  std::vector<double> out(vals.begin(), vals.end());
  if (out.empty()) return out;
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const double low = *lo;
  const double range = *hi - low;
  for (double& v : out) v = range > 0.0 ? (v - low) / range : 0.0;
  return out;
}

}  // namespace

void validate(const FusionParams& p) {
  if (!(p.lambda >= 0.0)) throw ContractError("fusion lambda must be non-negative");
  if (p.top_k == 0) throw ContractError("top_k must be at least 1");
}

SparseRowMatrix fuse_scores(const SparseRowMatrix& s, const SparseRowMatrix& d,
                            const FusionParams& p) {
  validate(p);
  if (s.rows() != d.rows() || s.cols() != d.cols()) {
    throw ContractError("fuse: S is " + std::to_string(s.rows()) + "x" +
                        std::to_string(s.cols()) + " but D is " + std::to_string(d.rows()) +
                        "x" + std::to_string(d.cols()));
  }
  const double s_fill = p.s_min_fill;
  const double d_fill = p.normalize_before_fuse ? 1.0 : p.d_max_fill;
  SparseRowMatrix out(s.cols());
  std::vector<std::pair<std::uint32_t, float>> row;
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const auto sc = s.row_columns(r);
    const auto dc = d.row_columns(r);
    std::vector<double> sv;
    std::vector<double> dv;
    if (p.normalize_before_fuse) {
      sv = minmax_row(s.row_values(r));
      dv = minmax_row(d.row_values(r));
    } else {
      sv.assign(s.row_values(r).begin(), s.row_values(r).end());
      dv.assign(d.row_values(r).begin(), d.row_values(r).end());
    }
    row.clear();
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < sc.size() || j < dc.size()) {
      std::uint32_t col;
      double sval = s_fill;
      double dval = d_fill;
      if (j == dc.size() || (i < sc.size() && sc[i] < dc[j])) {
        col = sc[i];
        sval = sv[i++];
      } else if (i == sc.size() || dc[j] < sc[i]) {
        col = dc[j];
        dval = dv[j++];
      } else {
        col = sc[i];
        sval = sv[i++];
        dval = dv[j++];
      }
      row.emplace_back(col, static_cast<float>(sval - p.lambda * dval));
    }
    out.push_row(std::span<const std::pair<std::uint32_t, float>>(row));
  }
  return out;
}

std::vector<RankedResult> rank_topk(const SparseRowMatrix& scores,
                                    const std::vector<std::string>& query_ids,
                                    const std::vector<std::string>& gallery_ids,
                                    std::size_t top_k) {
  if (top_k == 0) throw ContractError("top_k must be at least 1");
  if (query_ids.size() != scores.rows()) {
    throw ContractError("query id count does not match score rows");
  }
  if (gallery_ids.size() != scores.cols()) {
    throw ContractError("gallery id count does not match score columns");
  }
  std::vector<RankedResult> out(scores.rows());
  std::vector<std::size_t> order;
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    const auto cols = scores.row_columns(r);
    const auto vals = scores.row_values(r);
    order.resize(cols.size());
    std::iota(order.begin(), order.end(), 0);
    auto better = [&](std::size_t a, std::size_t b) {
      if (vals[a] != vals[b]) return vals[a] > vals[b];
      return cols[a] < cols[b];
    };
    const std::size_t keep = std::min(top_k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                      order.end(), better);
    out[r].query_id = query_ids[r];
    out[r].entries.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
      out[r].entries.emplace_back(gallery_ids[cols[order[i]]], vals[order[i]]);
    }
  }
  return out;
}

double ap_at_k(std::span<const std::string> ranked,
               const std::unordered_set<std::string>& relevant, std::size_t k,
               ApDenominator denominator) {
  if (k == 0) throw ContractError("K must be at least 1");
  std::unordered_set<std::string_view> seen;
  for (const auto& id : ranked) {
    if (!seen.insert(id).second) throw ContractError("duplicate id '" + id + "' in ranking");
  }
  if (relevant.empty()) return 0.0;
  double sum = 0.0;
  std::size_t hits = 0;
  const std::size_t depth = std::min(k, ranked.size());
  for (std::size_t i = 0; i < depth; ++i) {
    if (relevant.count(ranked[i]) != 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  const std::size_t denom =
      denominator == ApDenominator::kMinRelevantK ? std::min(relevant.size(), k) : relevant.size();
  return sum / static_cast<double>(denom);
}

MapReport map_at_k(const std::vector<RankedResult>& results, const LabelMap& labels,
                   const std::vector<std::string>& gallery_ids, std::size_t k,
                   ApDenominator denominator) {
  if (k == 0) throw ContractError("K must be at least 1");
  std::unordered_map<std::string, std::unordered_set<std::string>> by_label;
  for (const auto& g : gallery_ids) by_label[labels.at(g)].insert(g);

  MapReport report;
  const std::unordered_set<std::string> none;
  std::vector<std::string> ranked;
  for (const auto& r : results) {
    const std::string& label = labels.at(r.query_id);
    ranked.clear();
    for (const auto& [g, score] : r.entries) {
      labels.at(g);
      ranked.push_back(g);
    }
    const auto it = by_label.find(label);
    const double ap = ap_at_k(ranked, it == by_label.end() ? none : it->second, k, denominator);
    report.per_query.emplace_back(r.query_id, ap);
  }
  if (!report.per_query.empty()) {
    double sum = 0.0;
    for (const auto& [q, ap] : report.per_query) sum += ap;
    report.mean = sum / static_cast<double>(report.per_query.size());
  }
  return report;
}

MapReport map_at_k(const std::vector<RankedResult>& results, const LabelMap& labels,
                   std::size_t k, ApDenominator denominator) {
  std::unordered_set<std::string> queries;
  for (const auto& r : results) queries.insert(r.query_id);
  std::vector<std::string> gallery;
  for (const auto& [id, label] : labels.entries()) {
    if (queries.count(id) == 0) gallery.push_back(id);
  }
  std::sort(gallery.begin(), gallery.end());
  return map_at_k(results, labels, gallery, k, denominator);
}

}  // namespace fusionrank
