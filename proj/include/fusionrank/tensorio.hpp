#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace fusionrank {

/// Dense row-major embedding matrix with one identifier per row.
///
/// Immutable once constructed; the constructor enforces the invariants
/// (ids.size() == rows, unique ids, data.size() == rows * dim, finite values).
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t dim, std::vector<float> data,
                std::vector<std::string> ids);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return rows_ == 0; }

  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
  std::vector<std::string> ids_;
};

/// Class labels keyed by item identifier. Lookup of an unknown id throws DataError.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(std::unordered_map<std::string, std::string> entries)
      : entries_(std::move(entries)) {}

  const std::string& at(const std::string& id) const;
  bool contains(const std::string& id) const { return entries_.count(id) != 0; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::unordered_map<std::string, std::string>& entries() const noexcept {
    return entries_;
  }

 private:
  std::unordered_map<std::string, std::string> entries_;
};

/// Ranked gallery list for one query.
struct RankedResult {
  std::string query_id;
  std::vector<std::pair<std::string, float>> entries;  // (gallery id, score), descending
};

inline constexpr std::size_t kFeatHeaderBytes = 20;

std::filesystem::path ids_path_for(const std::filesystem::path& feat_path);

// FEAT binary + ".ids" sidecar.
FeatureMatrix load_features(const std::filesystem::path& path);
void save_features(const FeatureMatrix& m, const std::filesystem::path& path);

std::string encode_features(const FeatureMatrix& m);
std::string encode_ids(const std::vector<std::string>& ids);
FeatureMatrix decode_features(std::string_view feat_bytes, std::string_view ids_text,
                              const std::string& context = "FEAT");

// Plain CSV interop: one row per line, `id,v1,...,vd`, no header.
FeatureMatrix load_features_csv(const std::filesystem::path& path);
void save_features_csv(const FeatureMatrix& m, const std::filesystem::path& path);

/// Scales every row to unit L2 norm (64-bit accumulation). Rows already at
/// unit norm to within float rounding are left untouched, which makes the
/// operation idempotent. A row with norm < 1e-12 throws NormalizationError.
FeatureMatrix l2_normalize(const FeatureMatrix& m);

/// Normalizes rows of a 64-bit accumulator into a FeatureMatrix.
FeatureMatrix normalize_accumulated(std::size_t rows, std::size_t dim,
                                    const std::vector<double>& acc,
                                    std::vector<std::string> ids);

void write_submission(const std::vector<RankedResult>& results,
                      const std::filesystem::path& path);
std::string encode_submission(const std::vector<RankedResult>& results);
/// Reads a submission CSV back; scores are not stored in the file and come back as 0.
std::vector<RankedResult> load_submission(const std::filesystem::path& path);

LabelMap load_labels(const std::filesystem::path& path);
void save_labels(const std::vector<std::pair<std::string, std::string>>& rows,
                 const std::filesystem::path& path);

}  // namespace fusionrank
