#include "fusionrank/aggregate.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binio.hpp"
#include "fusionrank/digest.hpp"
#include "fusionrank/error.hpp"

namespace fusionrank {

namespace {

constexpr std::uint32_t kPcamVersion = 1;
constexpr double kWhitenEpsilon = 1e-12;
constexpr double kRankTolerance = 1e-9;

void check_same_layout(const std::vector<FeatureMatrix>& inputs, const char* what) {
  if (inputs.empty()) throw ContractError(std::string(what) + ": at least one input is required");
  const FeatureMatrix& first = inputs.front();
  for (std::size_t i = 1; i < inputs.size(); ++i) {
    if (inputs[i].rows() != first.rows() || inputs[i].dim() != first.dim()) {
      throw ContractError(std::string(what) + ": input " + std::to_string(i) +
                          " has shape " + std::to_string(inputs[i].rows()) + "x" +
                          std::to_string(inputs[i].dim()) + ", expected " +
                          std::to_string(first.rows()) + "x" + std::to_string(first.dim()));
    }
    if (inputs[i].ids() != first.ids()) {
      throw ContractError(std::string(what) + ": input " + std::to_string(i) +
                          " has a different id list or order");
    }
  }
}

// Inputs summed in digest order so the float result does not depend on the
// order in which the caller lists them.
std::vector<double> canonical_sum(const std::vector<FeatureMatrix>& inputs) {
  std::vector<std::pair<std::string, std::size_t>> keyed;
  keyed.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    keyed.emplace_back(sha256_hex(encode_features(inputs[i])), i);
  }
  std::sort(keyed.begin(), keyed.end());
  const FeatureMatrix& first = inputs.front();
  std::vector<double> acc(first.rows() * first.dim(), 0.0);
  for (const auto& [digest, idx] : keyed) {
    const auto data = inputs[idx].data();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += static_cast<double>(data[k]);
  }
  return acc;
}

void check_unit_rows(const FeatureMatrix& m, const char* what) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double norm = std::sqrt(dot64(m.row(i), m.row(i)));
    if (std::abs(norm - 1.0) > 1e-4) {
      throw ContractError(std::string(what) + ": row " + std::to_string(i) +
                          " is not L2-normalized");
    }
  }
}

}  // namespace

FeatureMatrix tta_aggregate(const std::vector<FeatureMatrix>& views) {
  check_same_layout(views, "tta");
  std::vector<double> acc = canonical_sum(views);
  const double inv = 1.0 / static_cast<double>(views.size());
  for (double& v : acc) v *= inv;
  return normalize_accumulated(views.front().rows(), views.front().dim(), acc,
                               views.front().ids());
}

FeatureMatrix ensemble_features(const std::vector<FeatureMatrix>& models) {
  check_same_layout(models, "ensemble");
  for (const auto& m : models) check_unit_rows(m, "ensemble");
  const std::vector<double> acc = canonical_sum(models);
  return normalize_accumulated(models.front().rows(), models.front().dim(), acc,
                               models.front().ids());
}

PcaModel pca_fit(const FeatureMatrix& gallery, std::size_t rank, bool whiten) {
  const std::size_t n = gallery.rows();
  const std::size_t d = gallery.dim();
  if (n < 2) throw ContractError("pca: at least two rows are required");
  if (rank == 0 || rank > std::min(n, d)) {
    throw ContractError("pca: target rank " + std::to_string(rank) + " must lie in [1, " +
                        std::to_string(std::min(n, d)) + "]");
  }

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = gallery.row(i);
    for (std::size_t j = 0; j < d; ++j) mean[static_cast<Eigen::Index>(j)] += row[j];
  }
  mean /= static_cast<double>(n);

  Eigen::MatrixXd centered(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = gallery.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      centered(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          row[j] - mean[static_cast<Eigen::Index>(j)];
    }
  }
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca: eigendecomposition failed");

  // Eigen returns ascending eigenvalues.
  const Eigen::VectorXd& evals = solver.eigenvalues();
  const Eigen::MatrixXd& evecs = solver.eigenvectors();
  const Eigen::Index top = static_cast<Eigen::Index>(d) - 1;
  const double largest = std::max(evals[top], 0.0);
  const double smallest_kept = evals[top - static_cast<Eigen::Index>(rank) + 1];
  if (!(largest > 0.0) || smallest_kept <= kRankTolerance * largest) {
    throw ContractError("pca: target rank " + std::to_string(rank) +
                        " exceeds the numerical rank of the centered data");
  }

  PcaModel model;
  model.dim = d;
  model.rank = rank;
  model.whiten = whiten;
  model.mean.assign(mean.data(), mean.data() + d);
  model.components.resize(rank * d);
  model.eigenvalues.resize(rank);
  for (std::size_t c = 0; c < rank; ++c) {
    const Eigen::Index src = top - static_cast<Eigen::Index>(c);
    model.eigenvalues[c] = evals[src];
    // Sign convention: the largest-magnitude coordinate is positive.
    Eigen::Index arg = 0;
    evecs.col(src).cwiseAbs().maxCoeff(&arg);
    const double sign = evecs(arg, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      model.components[c * d + j] = sign * evecs(static_cast<Eigen::Index>(j), src);
    }
  }
  return model;
}

FeatureMatrix pca_transform(const FeatureMatrix& m, const PcaModel& model) {
  if (m.dim() != model.dim) {
    throw ContractError("pca: input dimension " + std::to_string(m.dim()) +
                        " does not match model dimension " + std::to_string(model.dim));
  }
  const std::size_t d = model.dim;
  const std::size_t r = model.rank;
  std::vector<double> out(m.rows() * r);
  std::vector<double> centered(d);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto row = m.row(i);
    for (std::size_t j = 0; j < d; ++j) centered[j] = row[j] - model.mean[j];
    for (std::size_t c = 0; c < r; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += model.components[c * d + j] * centered[j];
      if (model.whiten) acc /= std::sqrt(model.eigenvalues[c] + kWhitenEpsilon);
      out[i * r + c] = acc;
    }
  }
  return normalize_accumulated(m.rows(), r, out, m.ids());
}

FeatureMatrix dba_augment(const FeatureMatrix& gallery, const NeighborTable& neighbors,
                          std::size_t k, DbaWeighting weighting) {
  if (neighbors.rows() != gallery.rows()) {
    throw ContractError("dba: neighbor table rows do not match gallery rows");
  }
  if (k > neighbors.k()) {
    throw ContractError("dba: k=" + std::to_string(k) + " exceeds neighbor table width " +
                        std::to_string(neighbors.k()));
  }
  const std::size_t d = gallery.dim();
  std::vector<double> acc(gallery.rows() * d);
  for (std::size_t i = 0; i < gallery.rows(); ++i) {
    double* out = acc.data() + i * d;
    const auto self = gallery.row(i);
    for (std::size_t j = 0; j < d; ++j) out[j] = self[j];
    const auto idx = neighbors.indices(i);
    for (std::size_t rank = 0; rank < k; ++rank) {
      const double w = weighting == DbaWeighting::kLinear
                           ? static_cast<double>(k - rank) / static_cast<double>(k)
                           : 1.0;
      const auto nb = gallery.row(idx[rank]);
      for (std::size_t j = 0; j < d; ++j) out[j] += w * nb[j];
    }
  }
  return normalize_accumulated(gallery.rows(), d, acc, gallery.ids());
}

FeatureMatrix aqe_expand(const FeatureMatrix& queries, const FeatureMatrix& gallery,
                         const NeighborTable& neighbors, std::size_t k) {
  if (neighbors.rows() != queries.rows()) {
    throw ContractError("aqe: neighbor table rows do not match query rows");
  }
  if (k > neighbors.k()) {
    throw ContractError("aqe: k=" + std::to_string(k) + " exceeds neighbor table width " +
                        std::to_string(neighbors.k()));
  }
  if (queries.dim() != gallery.dim()) throw ContractError("aqe: dimension mismatch");
  const std::size_t d = queries.dim();
  std::vector<double> acc(queries.rows() * d);
  const double inv = 1.0 / static_cast<double>(k + 1);
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    double* out = acc.data() + i * d;
    const auto q = queries.row(i);
    for (std::size_t j = 0; j < d; ++j) out[j] = q[j];
    const auto idx = neighbors.indices(i);
    for (std::size_t rank = 0; rank < k; ++rank) {
      const auto nb = gallery.row(idx[rank]);
      for (std::size_t j = 0; j < d; ++j) out[j] += nb[j];
    }
    for (std::size_t j = 0; j < d; ++j) out[j] *= inv;
  }
  return normalize_accumulated(queries.rows(), d, acc, queries.ids());
}

std::string encode_pca(const PcaModel& model) {
  detail::ByteWriter w;
  w.magic("PCAM");
  w.u32(kPcamVersion);
  w.u32(static_cast<std::uint32_t>(model.dim));
  w.u32(static_cast<std::uint32_t>(model.rank));
  w.u8(model.whiten ? 1 : 0);
  for (double v : model.mean) w.f64(v);
  for (double v : model.components) w.f64(v);
  for (double v : model.eigenvalues) w.f64(v);
  return w.bytes();
}

PcaModel decode_pca(std::string_view bytes, const std::string& context) {
  detail::ByteReader r(bytes, context);
  r.expect_magic("PCAM");
  const std::uint32_t version = r.u32();
  if (version != kPcamVersion) {
    throw FormatError(context + ": unsupported version " + std::to_string(version));
  }
  PcaModel model;
  model.dim = r.u32();
  model.rank = r.u32();
  const std::uint8_t flag = r.u8();
  if (flag > 1) throw FormatError(context + ": bad whiten flag");
  model.whiten = flag == 1;
  if (model.rank > model.dim) throw FormatError(context + ": rank exceeds dimension");
  r.expect_remaining((std::uint64_t{model.dim} + std::uint64_t{model.rank} * model.dim +
                      model.rank) * 8);
  model.mean.resize(model.dim);
  model.components.resize(model.rank * model.dim);
  model.eigenvalues.resize(model.rank);
  for (auto& v : model.mean) v = r.f64();
  for (auto& v : model.components) v = r.f64();
  for (auto& v : model.eigenvalues) v = r.f64();
  return model;
}

void save_pca(const PcaModel& model, const std::filesystem::path& path) {
  detail::write_file(path, encode_pca(model));
}

PcaModel load_pca(const std::filesystem::path& path) {
  return decode_pca(detail::read_file(path), path.string());
}

}  // namespace fusionrank
