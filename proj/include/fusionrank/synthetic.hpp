#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fusionrank/tensorio.hpp"

namespace fusionrank {

struct SyntheticSpec {
  std::size_t classes = 5;
  std::size_t per_class_gallery = 20;
  std::size_t per_class_queries = 5;
  std::size_t dim = 64;
  double noise_sigma = 0.35;
  std::uint64_t seed = 42;
};

struct SyntheticData {
  FeatureMatrix queries;
  FeatureMatrix gallery;
  std::vector<std::pair<std::string, std::string>> labels;  // (id, class) for every item
};

/// Seeded clustered embeddings: unit class centers, members = center plus
/// Gaussian noise, L2-normalized. Gallery ids are g00000.., query ids q00000..,
/// labels cls<c>.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Writes query.feat, gallery.feat (with .ids sidecars) and labels.csv into `dir`.
void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir);

}  // namespace fusionrank
