#include "fusionrank/synthetic.hpp"

#include <cmath>
#include <cstdio>

#include "fusionrank/error.hpp"
#include "fusionrank/random.hpp"

namespace fusionrank {

namespace {

std::string make_id(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%05zu", prefix, i);
  return buf;
}

void normalize(std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  for (double& x : v) x /= norm;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes == 0 || spec.per_class_gallery == 0 || spec.per_class_queries == 0) {
    throw ContractError("synthetic: all counts must be at least 1");
  }
  if (spec.dim < 2) throw ContractError("synthetic: dim must be at least 2");
  if (!(spec.noise_sigma >= 0.0)) throw ContractError("synthetic: noise_sigma must be >= 0");

  Rng rng(spec.seed);
  std::vector<std::vector<double>> centers(spec.classes, std::vector<double>(spec.dim));
  for (auto& c : centers) {
    do {
      for (double& x : c) x = rng.normal();
      double sq = 0.0;
      for (double x : c) sq += x * x;
      if (sq > 1e-12) break;
    } while (true);
    normalize(c);
  }

  SyntheticData out;
  auto draw = [&](std::size_t per_class, char prefix, std::vector<float>& data,
                  std::vector<std::string>& ids) {
    std::vector<double> v(spec.dim);
    for (std::size_t c = 0; c < spec.classes; ++c) {
      for (std::size_t i = 0; i < per_class; ++i) {
        for (std::size_t j = 0; j < spec.dim; ++j) {
          v[j] = centers[c][j] + spec.noise_sigma * rng.normal();
        }
        normalize(v);
        for (double x : v) data.push_back(static_cast<float>(x));
        ids.push_back(make_id(prefix, ids.size()));
        out.labels.emplace_back(ids.back(), "cls" + std::to_string(c));
      }
    }
  };

  std::vector<float> gdata;
  std::vector<std::string> gids;
  draw(spec.per_class_gallery, 'g', gdata, gids);
  std::vector<float> qdata;
  std::vector<std::string> qids;
  draw(spec.per_class_queries, 'q', qdata, qids);

  const std::size_t ng = gids.size();
  const std::size_t nq = qids.size();
  out.gallery = FeatureMatrix(ng, spec.dim, std::move(gdata), std::move(gids));
  out.queries = FeatureMatrix(nq, spec.dim, std::move(qdata), std::move(qids));
  return out;
}

void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  save_features(data.queries, dir / "query.feat");
  save_features(data.gallery, dir / "gallery.feat");
  save_labels(data.labels, dir / "labels.csv");
}

}  // namespace fusionrank
