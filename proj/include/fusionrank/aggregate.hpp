#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "fusionrank/metricspace.hpp"
#include "fusionrank/tensorio.hpp"

namespace fusionrank {

/// Fitted principal-component projection.
struct PcaModel {
  std::size_t dim = 0;
  std::size_t rank = 0;
  bool whiten = false;
  std::vector<double> mean;         // dim
  std::vector<double> components;   // rank x dim, orthonormal rows
  std::vector<double> eigenvalues;  // rank, non-increasing

  friend bool operator==(const PcaModel&, const PcaModel&) = default;
};

enum class DbaWeighting { kLinear, kUniform };

/// Mean of the views, then L2 normalization.
FeatureMatrix tta_aggregate(const std::vector<FeatureMatrix>& views);

/// Sum of per-model features, then L2 normalization.
FeatureMatrix ensemble_features(const std::vector<FeatureMatrix>& models);

/// Fits on `gallery` only. Throws when `rank` exceeds min(rows, dim) or the
/// numerical rank of the centered data.
PcaModel pca_fit(const FeatureMatrix& gallery, std::size_t rank, bool whiten);

/// Centers, projects onto the components (optionally whitening), re-normalizes.
FeatureMatrix pca_transform(const FeatureMatrix& m, const PcaModel& model);

/// Database-side augmentation: row + sum_i w_i * neighbor_i over the first k
/// neighbors (w_i = (k - i) / k for linear weighting), then L2 normalization.
/// `neighbors` must be a self-excluded table over `gallery`.
FeatureMatrix dba_augment(const FeatureMatrix& gallery, const NeighborTable& neighbors,
                          std::size_t k, DbaWeighting weighting = DbaWeighting::kLinear);

/// Average query expansion: mean of the query and its first k gallery
/// neighbors, then L2 normalization.
FeatureMatrix aqe_expand(const FeatureMatrix& queries, const FeatureMatrix& gallery,
                         const NeighborTable& neighbors, std::size_t k);

// PCAM: magic, u32 version, u32 dim, u32 rank, u8 whiten, then f64 mean,
// components and eigenvalues.
std::string encode_pca(const PcaModel& model);
PcaModel decode_pca(std::string_view bytes, const std::string& context = "PCAM");
void save_pca(const PcaModel& model, const std::filesystem::path& path);
PcaModel load_pca(const std::filesystem::path& path);

}  // namespace fusionrank
