#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fusionrank/error.hpp"

namespace fusionrank {

/// Compressed sparse rows. Column indices are strictly increasing within a row.
template <typename T>
class SparseRows {
 public:
  using value_type = T;

  SparseRows() : offsets_{0} {}
  explicit SparseRows(std::size_t cols) : cols_(cols), offsets_{0} {}

  SparseRows(std::size_t rows, std::size_t cols, std::vector<std::uint64_t> offsets,
             std::vector<std::uint32_t> columns, std::vector<T> values)
      : cols_(cols),
        offsets_(std::move(offsets)),
        columns_(std::move(columns)),
        values_(std::move(values)) {
    if (offsets_.size() != rows + 1 || offsets_.front() != 0 ||
        offsets_.back() != columns_.size() || columns_.size() != values_.size()) {
      throw FormatError("inconsistent sparse row offsets");
    }
    for (std::size_t r = 0; r < rows; ++r) {
      if (offsets_[r] > offsets_[r + 1]) throw FormatError("sparse row offsets decrease");
      for (std::uint64_t k = offsets_[r]; k < offsets_[r + 1]; ++k) {
        if (columns_[k] >= cols_) throw FormatError("sparse column index out of range");
        if (k > offsets_[r] && columns_[k] <= columns_[k - 1]) {
          throw FormatError("sparse columns not strictly increasing in row " + std::to_string(r));
        }
      }
    }
  }

  std::size_t rows() const noexcept { return offsets_.size() - 1; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return columns_.size(); }

  std::span<const std::uint32_t> row_columns(std::size_t r) const {
    return {columns_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
  }
  std::span<const T> row_values(std::size_t r) const {
    return {values_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
  }
  std::size_t row_size(std::size_t r) const { return offsets_[r + 1] - offsets_[r]; }

  /// Appends a row; `entries` must have strictly increasing, in-range columns.
  void push_row(std::span<const std::pair<std::uint32_t, T>> entries) {
    for (std::size_t k = 0; k < entries.size(); ++k) {
      if (entries[k].first >= cols_) throw ContractError("sparse column index out of range");
      if (k > 0 && entries[k].first <= entries[k - 1].first) {
        throw ContractError("sparse row columns must be strictly increasing");
      }
      columns_.push_back(entries[k].first);
      values_.push_back(entries[k].second);
    }
    offsets_.push_back(columns_.size());
  }

  /// Value at (r, c) or `fallback` when the entry is absent.
  T at_or(std::size_t r, std::uint32_t c, T fallback) const {
    auto cols = row_columns(r);
    auto it = std::lower_bound(cols.begin(), cols.end(), c);
    if (it == cols.end() || *it != c) return fallback;
    return row_values(r)[static_cast<std::size_t>(it - cols.begin())];
  }

  const std::vector<std::uint64_t>& offsets() const noexcept { return offsets_; }
  const std::vector<std::uint32_t>& columns() const noexcept { return columns_; }
  const std::vector<T>& values() const noexcept { return values_; }

  friend bool operator==(const SparseRows&, const SparseRows&) = default;

 private:
  std::size_t cols_ = 0;
  std::vector<std::uint64_t> offsets_;
  std::vector<std::uint32_t> columns_;
  std::vector<T> values_;
};

/// The on-disk score/distance matrix (f32 values).
using SparseRowMatrix = SparseRows<float>;

/// Builds a matrix from independently computed rows (each already sorted).
template <typename T>
SparseRows<T> assemble_rows(std::size_t cols,
                            const std::vector<std::vector<std::pair<std::uint32_t, T>>>& rows) {
  SparseRows<T> out(cols);
  for (const auto& r : rows) out.push_row(std::span<const std::pair<std::uint32_t, T>>(r));
  return out;
}

// SPRW: magic, u32 version, u64 rows, u32 cols, (rows+1) u64 offsets,
// then nnz interleaved (u32 column, f32 value) pairs.
std::string encode_sparse(const SparseRowMatrix& m);
SparseRowMatrix decode_sparse(std::string_view bytes, const std::string& context = "SPRW");
void save_sparse(const SparseRowMatrix& m, const std::filesystem::path& path);
SparseRowMatrix load_sparse(const std::filesystem::path& path);

}  // namespace fusionrank
