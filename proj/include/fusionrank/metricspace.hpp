#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fusionrank/tensorio.hpp"

namespace fusionrank {

/// Per-row top-k neighbor positions and cosine similarities (descending).
class NeighborTable {
 public:
  NeighborTable() = default;
  NeighborTable(std::size_t rows, std::size_t k, std::vector<std::uint32_t> indices,
                std::vector<float> sims);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t k() const noexcept { return k_; }
  std::span<const std::uint32_t> indices(std::size_t r) const {
    return {indices_.data() + r * k_, k_};
  }
  std::span<const float> sims(std::size_t r) const { return {sims_.data() + r * k_, k_}; }
  const std::vector<std::uint32_t>& all_indices() const noexcept { return indices_; }
  const std::vector<float>& all_sims() const noexcept { return sims_; }

  friend bool operator==(const NeighborTable&, const NeighborTable&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t k_ = 0;
  std::vector<std::uint32_t> indices_;
  std::vector<float> sims_;
};

/// Row-major dense block of similarities.
struct DenseBlock {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct SearchOptions {
  std::size_t workers = 1;
  std::size_t block_rows = 1024;
};

/// Inner product accumulated in 64-bit.
double dot64(std::span<const float> a, std::span<const float> b);

/// Entry (i, j) = dot(a_i, b_j), accumulated in 64-bit and stored as 32-bit.
DenseBlock similarity_block(const FeatureMatrix& a, const FeatureMatrix& b,
                            std::size_t workers = 1);

/// Exact top-k by cosine similarity; ties go to the lower gallery index.
/// The query's own row is not excluded.
NeighborTable knn_search(const FeatureMatrix& queries, const FeatureMatrix& gallery,
                         std::size_t k, const SearchOptions& opts = {});

/// kNN of a set against itself with each item's own index excluded.
NeighborTable knn_self_excluded(const FeatureMatrix& items, std::size_t k,
                                const SearchOptions& opts = {});

/// Unit-vector Euclidean distance from cosine: sqrt(max(0, 2 - 2s)), s clamped to [-1, 1].
double cosine_to_euclidean(double s);

/// Selects the top-k of one similarity row (desc by value, then asc by index),
/// skipping `excluded` when it is a valid position.
void select_topk(std::span<const float> row, std::size_t k, std::uint32_t* out_indices,
                 float* out_sims, std::size_t excluded = static_cast<std::size_t>(-1));

// NBRT: magic, u32 version, u64 rows, u32 k, rows*k u32 indices, rows*k f32 sims.
std::string encode_neighbors(const NeighborTable& t);
NeighborTable decode_neighbors(std::string_view bytes, const std::string& context = "NBRT");
void save_neighbors(const NeighborTable& t, const std::filesystem::path& path);
NeighborTable load_neighbors(const std::filesystem::path& path);

}  // namespace fusionrank
