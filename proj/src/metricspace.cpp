#include "fusionrank/metricspace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binio.hpp"
#include "fusionrank/error.hpp"
#include "fusionrank/parallel.hpp"

namespace fusionrank {

namespace {

constexpr std::uint32_t kNbrtVersion = 1;

void check_dims(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.dim() != b.dim()) {
    throw ContractError("dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                        std::to_string(b.dim()));
  }
}

NeighborTable search_impl(const FeatureMatrix& queries, const FeatureMatrix& gallery,
                          std::size_t k, const SearchOptions& opts, bool exclude_self) {
  check_dims(queries, gallery);
  const std::size_t available = gallery.rows() - (exclude_self && gallery.rows() > 0 ? 1 : 0);
  if (k > available || (gallery.rows() == 0 && k > 0)) {
    throw ContractError("k=" + std::to_string(k) + " exceeds the " + std::to_string(available) +
                        " available neighbors");
  }
  const std::size_t nq = queries.rows();
  const std::size_t ng = gallery.rows();
  std::vector<std::uint32_t> indices(nq * k);
  std::vector<float> sims(nq * k);
  if (k == 0 || nq == 0) return NeighborTable(nq, k, std::move(indices), std::move(sims));

  const std::size_t workers = resolve_workers(opts.workers);
  const std::size_t block = std::max<std::size_t>(1, opts.block_rows);
  std::vector<float> scratch(std::min(block, nq) * ng);
  for (std::size_t start = 0; start < nq; start += block) {
    const std::size_t count = std::min(block, nq - start);
    parallel_for(count, workers, [&](std::size_t local) {
      const std::size_t qi = start + local;
      float* row = scratch.data() + local * ng;
      const auto q = queries.row(qi);
      for (std::size_t j = 0; j < ng; ++j) row[j] = static_cast<float>(dot64(q, gallery.row(j)));
      select_topk(std::span<const float>(row, ng), k, indices.data() + qi * k,
                  sims.data() + qi * k, exclude_self ? qi : static_cast<std::size_t>(-1));
    });
  }
  return NeighborTable(nq, k, std::move(indices), std::move(sims));
}

}  // namespace

NeighborTable::NeighborTable(std::size_t rows, std::size_t k, std::vector<std::uint32_t> indices,
                             std::vector<float> sims)
    : rows_(rows), k_(k), indices_(std::move(indices)), sims_(std::move(sims)) {
  if (indices_.size() != rows_ * k_ || sims_.size() != rows_ * k_) {
    throw DataError("neighbor table payload does not match rows x k");
  }
  std::vector<std::uint32_t> sorted(k_);
  for (std::size_t r = 0; r < rows_; ++r) {
    const auto s = this->sims(r);
    for (std::size_t j = 1; j < k_; ++j) {
      if (s[j] > s[j - 1]) {
        throw DataError("neighbor similarities increase in row " + std::to_string(r));
      }
    }
    const auto idx = this->indices(r);
    std::copy(idx.begin(), idx.end(), sorted.begin());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw DataError("duplicate neighbor index in row " + std::to_string(r));
    }
  }
}

double dot64(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return acc;
}

DenseBlock similarity_block(const FeatureMatrix& a, const FeatureMatrix& b,
                            std::size_t workers) {
  check_dims(a, b);
  DenseBlock out{a.rows(), b.rows(), std::vector<float>(a.rows() * b.rows())};
  parallel_for(a.rows(), resolve_workers(workers), [&](std::size_t i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      out.values[i * b.rows() + j] = static_cast<float>(dot64(ai, b.row(j)));
    }
  });
  return out;
}

void select_topk(std::span<const float> row, std::size_t k, std::uint32_t* out_indices,
                 float* out_sims, std::size_t excluded) {
  std::vector<std::uint32_t> order;
  order.reserve(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (j != excluded) order.push_back(static_cast<std::uint32_t>(j));
  }
  auto better = [&](std::uint32_t x, std::uint32_t y) {
    if (row[x] != row[y]) return row[x] > row[y];
    return x < y;
  };
  if (k < order.size()) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                     better);
    order.resize(k);
  }
  std::sort(order.begin(), order.end(), better);
  for (std::size_t j = 0; j < k; ++j) {
    out_indices[j] = order[j];
    out_sims[j] = row[order[j]];
  }
}

NeighborTable knn_search(const FeatureMatrix& queries, const FeatureMatrix& gallery,
                         std::size_t k, const SearchOptions& opts) {
  if (k == 0) throw ContractError("k must be at least 1");
  return search_impl(queries, gallery, k, opts, false);
}

NeighborTable knn_self_excluded(const FeatureMatrix& items, std::size_t k,
                                const SearchOptions& opts) {
  if (k == 0) throw ContractError("k must be at least 1");
  return search_impl(items, items, k, opts, true);
}

double cosine_to_euclidean(double s) {
  const double c = std::clamp(s, -1.0, 1.0);
  return std::sqrt(std::max(0.0, 2.0 - 2.0 * c));
}

std::string encode_neighbors(const NeighborTable& t) {
  detail::ByteWriter w;
  w.reserve(20 + t.all_indices().size() * 8);
  w.magic("NBRT");
  w.u32(kNbrtVersion);
  w.u64(t.rows());
  w.u32(static_cast<std::uint32_t>(t.k()));
  for (std::uint32_t i : t.all_indices()) w.u32(i);
  for (float s : t.all_sims()) w.f32(s);
  return w.bytes();
}

NeighborTable decode_neighbors(std::string_view bytes, const std::string& context) {
  detail::ByteReader r(bytes, context);
  r.expect_magic("NBRT");
  const std::uint32_t version = r.u32();
  if (version != kNbrtVersion) {
    throw FormatError(context + ": unsupported version " + std::to_string(version));
  }
  const std::uint64_t rows = r.u64();
  const std::uint32_t k = r.u32();
  if (k != 0 && rows > r.remaining() / (std::uint64_t{k} * 8)) {
    throw TruncationError(context + ": payload truncated");
  }
  r.expect_remaining(rows * k * 8);
  std::vector<std::uint32_t> indices(rows * k);
  std::vector<float> sims(rows * k);
  for (auto& i : indices) i = r.u32();
  for (auto& s : sims) s = r.f32();
  return NeighborTable(rows, k, std::move(indices), std::move(sims));
}

void save_neighbors(const NeighborTable& t, const std::filesystem::path& path) {
  detail::write_file(path, encode_neighbors(t));
}

NeighborTable load_neighbors(const std::filesystem::path& path) {
  return decode_neighbors(detail::read_file(path), path.string());
}

}  // namespace fusionrank
