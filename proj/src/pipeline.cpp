#include "fusionrank/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "binio.hpp"
#include "fusionrank/digest.hpp"
#include "fusionrank/error.hpp"
#include "fusionrank/metricspace.hpp"
#include "fusionrank/parallel.hpp"

namespace fusionrank {

namespace {

using nlohmann::json;

json shape(const FeatureMatrix& m) { return json::array({m.rows(), m.dim()}); }
json shape(const SparseRowMatrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"nnz", m.nnz()}};
}

class StageRunner {
 public:
  StageRunner(const LogSink& log, json& timings) : log_(log), timings_(timings) {}

  template <typename Fn>
  void run(const std::string& name, Fn&& fn) {
    json info = json::object();
    const auto start = std::chrono::steady_clock::now();
    try {
      fn(info);
    } catch (const ValidationError& e) {
      throw ValidationError("stage '" + name + "': " + e.what());
    } catch (const RuntimeError& e) {
      throw RuntimeError("stage '" + name + "': " + e.what());
    } catch (const std::exception& e) {
      throw RuntimeError("stage '" + name + "': " + e.what());
    }
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    timings_[name] = ms;
    if (log_) {
      json record{{"stage", name}, {"wall_ms", ms}};
      for (auto it = info.begin(); it != info.end(); ++it) record[it.key()] = it.value();
      log_(record);
    }
  }

 private:
  const LogSink& log_;
  json& timings_;
};

class ArtifactLog {
 public:
  explicit ArtifactLog(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::filesystem::path path(const std::string& file) const { return dir_ / file; }

  void feature(const std::string& file, const FeatureMatrix& m) {
    save_features(m, path(file));
    add(file);
    add(file + ".ids");
  }
  void add(const std::string& file) { files_.push_back(file); }

  json manifest_entries() const {
    json out = json::array();
    for (const auto& f : files_) {
      const std::string bytes = detail::read_file(path(f));
      out.push_back({{"file", f}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
    }
    return out;
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

SparseRowMatrix table_to_sparse(const NeighborTable& t, std::size_t cols) {
  SparseRowMatrix out(cols);
  std::vector<std::pair<std::uint32_t, float>> row;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    row.clear();
    const auto idx = t.indices(r);
    const auto sims = t.sims(r);
    for (std::size_t j = 0; j < t.k(); ++j) row.emplace_back(idx[j], sims[j]);
    std::sort(row.begin(), row.end());
    out.push_row(std::span<const std::pair<std::uint32_t, float>>(row));
  }
  return out;
}

FeatureMatrix load_view(const std::filesystem::path& p, bool normalize) {
  FeatureMatrix m = load_features(p);
  return normalize ? l2_normalize(m) : m;
}

}  // namespace

LogSink stderr_log_sink() {
  return [](const json& record) { std::cerr << record.dump() << '\n'; };
}

void write_ap_csv(const MapReport& report, const std::filesystem::path& path) {
  std::string out = "query_id,ap\n";
  char buf[64];
  for (const auto& [q, ap] : report.per_query) {
    std::snprintf(buf, sizeof(buf), "%.6f", ap);
    out += q;
    out += ',';
    out += buf;
    out += '\n';
  }
  detail::write_file(path, out);
}

PipelineOutput run_pipeline(const PipelineConfig& cfg, const LogSink& log) {
  validate_config(cfg, true);
  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  if (ec) throw IoError("cannot create '" + cfg.output_dir.string() + "': " + ec.message());

  const std::size_t workers = resolve_workers(cfg.workers);
  const SearchOptions search{workers, cfg.block_rows};
  json timings = json::object();
  StageRunner stages(log, timings);
  ArtifactLog artifacts(cfg.output_dir);

  std::vector<std::vector<FeatureMatrix>> query_views(cfg.models.size());
  std::vector<std::vector<FeatureMatrix>> gallery_views(cfg.models.size());
  stages.run("load", [&](json& info) {
    for (std::size_t m = 0; m < cfg.models.size(); ++m) {
      for (const auto& p : cfg.models[m].query_views) {
        query_views[m].push_back(load_view(p, cfg.normalize_on_load));
      }
      for (const auto& p : cfg.models[m].gallery_views) {
        gallery_views[m].push_back(load_view(p, cfg.normalize_on_load));
      }
    }
    info["models"] = cfg.models.size();
    info["query"] = shape(query_views.front().front());
    info["gallery"] = shape(gallery_views.front().front());
  });

  std::vector<FeatureMatrix> query_models;
  std::vector<FeatureMatrix> gallery_models;
  stages.run("tta", [&](json& info) {
    for (std::size_t m = 0; m < cfg.models.size(); ++m) {
      const auto& name = cfg.models[m].name;
      if (cfg.aggregate.tta) {
        query_models.push_back(tta_aggregate(query_views[m]));
        gallery_models.push_back(tta_aggregate(gallery_views[m]));
      } else {
        query_models.push_back(query_views[m].front());
        gallery_models.push_back(gallery_views[m].front());
      }
      artifacts.feature("query.tta." + name + ".feat", query_models.back());
      artifacts.feature("gallery.tta." + name + ".feat", gallery_models.back());
    }
    info["enabled"] = cfg.aggregate.tta;
  });

  FeatureMatrix query;
  FeatureMatrix gallery;
  stages.run("ensemble", [&](json& info) {
    query = ensemble_features(query_models);
    gallery = ensemble_features(gallery_models);
    artifacts.feature("query.ensemble.feat", query);
    artifacts.feature("gallery.ensemble.feat", gallery);
    info["query"] = shape(query);
    info["gallery"] = shape(gallery);
  });
  query_views.clear();
  gallery_views.clear();

  if (cfg.aggregate.pca.enabled) {
    stages.run("pca", [&](json& info) {
      const PcaModel model = pca_fit(gallery, cfg.aggregate.pca.r, cfg.aggregate.pca.whiten);
      save_pca(model, artifacts.path("pca.pcam"));
      artifacts.add("pca.pcam");
      query = pca_transform(query, model);
      gallery = pca_transform(gallery, model);
      artifacts.feature("query.pca.feat", query);
      artifacts.feature("gallery.pca.feat", gallery);
      info["query"] = shape(query);
      info["gallery"] = shape(gallery);
    });
  }
  if (cfg.aggregate.dba.enabled) {
    stages.run("dba", [&](json& info) {
      const NeighborTable nbrs = knn_self_excluded(gallery, cfg.aggregate.dba.k, search);
      gallery = dba_augment(gallery, nbrs, cfg.aggregate.dba.k, cfg.aggregate.dba.weights);
      artifacts.feature("gallery.dba.feat", gallery);
      info["gallery"] = shape(gallery);
    });
  }
  if (cfg.aggregate.aqe.enabled) {
    stages.run("aqe", [&](json& info) {
      const std::size_t k = cfg.aggregate.aqe.k;
      if (k > 0) {
        const NeighborTable nbrs = knn_search(query, gallery, k, search);
        query = aqe_expand(query, gallery, nbrs, k);
      }
      artifacts.feature("query.aqe.feat", query);
      info["query"] = shape(query);
    });
  }

  const std::size_t ng = gallery.rows();
  NeighborTable baseline;
  stages.run("knn", [&](json& info) {
    baseline = knn_search(query, gallery, std::min(cfg.fusion.top_k, ng), search);
    save_neighbors(baseline, artifacts.path("knn.nbrt"));
    artifacts.add("knn.nbrt");
    info["k"] = baseline.k();
  });

  std::optional<SparseRowMatrix> s_matrix;
  if (cfg.diffusion.enabled) {
    stages.run("diffuse", [&](json& info) {
      const DiffusionOptions opts{workers, cfg.block_rows};
      const AffinityGraph graph = build_affinity(gallery, cfg.diffusion.params, opts);
      s_matrix = diffuse_queries(query, gallery, graph, cfg.diffusion.params, opts);
      save_sparse(*s_matrix, artifacts.path("S.sprw"));
      artifacts.add("S.sprw");
      info["graph_edges"] = graph.adjacency.nnz();
      info["S"] = shape(*s_matrix);
    });
  }

  std::optional<SparseRowMatrix> d_matrix;
  if (cfg.rerank.enabled) {
    stages.run("rerank-kr", [&](json& info) {
      const IndexSets candidates =
          cfg.rerank.candidates ? top_candidates(query, gallery, *cfg.rerank.candidates, search)
                                : full_candidates(query.rows(), ng);
      d_matrix = kreciprocal_rerank(query, gallery, cfg.rerank.params, candidates,
                                    {cfg.rerank.pool, workers, cfg.block_rows});
      save_sparse(*d_matrix, artifacts.path("D.sprw"));
      artifacts.add("D.sprw");
      info["D"] = shape(*d_matrix);
    });
  }

  SparseRowMatrix final_scores;
  stages.run("fuse", [&](json& info) {
    FusionParams fp;
    fp.lambda = cfg.fusion.lambda;
    fp.top_k = cfg.fusion.top_k;
    fp.normalize_before_fuse = cfg.fusion.normalize_before_fuse;
    fp.d_max_fill = rerank_max_distance(cfg.rerank.params);
    std::string mode;
    if (s_matrix && d_matrix) {
      final_scores = fuse_scores(*s_matrix, *d_matrix, fp);
      mode = "diffusion-minus-rerank";
    } else if (s_matrix) {
      final_scores = *s_matrix;
      mode = "diffusion";
    } else if (d_matrix) {
      // Ranking by ascending rerank distance.
      fp.lambda = 1.0;
      SparseRowMatrix empty(ng);
      for (std::size_t r = 0; r < d_matrix->rows(); ++r) empty.push_row({});
      final_scores = fuse_scores(empty, *d_matrix, fp);
      mode = "rerank";
    } else {
      final_scores = table_to_sparse(baseline, ng);
      mode = "cosine";
    }
    save_sparse(final_scores, artifacts.path("final.sprw"));
    artifacts.add("final.sprw");
    info["mode"] = mode;
    info["final"] = shape(final_scores);
  });

  PipelineOutput output;
  stages.run("topk", [&](json& info) {
    output.results = rank_topk(final_scores, query.ids(), gallery.ids(), cfg.fusion.top_k);
    write_submission(output.results, artifacts.path("submission.csv"));
    artifacts.add("submission.csv");
    info["queries"] = output.results.size();
    info["top_k"] = cfg.fusion.top_k;
  });

  json metrics = json::object();
  if (cfg.labels) {
    stages.run("eval", [&](json& info) {
      const LabelMap labels = load_labels(*cfg.labels);
      output.map = map_at_k(output.results, labels, gallery.ids(), cfg.eval.k,
                            cfg.eval.denominator);
      write_ap_csv(*output.map, artifacts.path("ap_per_query.csv"));
      artifacts.add("ap_per_query.csv");
      metrics["map_at_k"] = output.map->mean;
      metrics["k"] = cfg.eval.k;
      info["map_at_k"] = output.map->mean;
    });
  }

  output.manifest = json{{"config", config_to_json(cfg)},
                         {"artifacts", artifacts.manifest_entries()},
                         {"metrics", metrics},
                         {"timings_ms", timings}};
  detail::write_file(artifacts.path("manifest.json"), output.manifest.dump(2) + "\n");
  return output;
}

std::vector<std::string> verify_manifest(const std::filesystem::path& output_dir) {
  std::ifstream in(output_dir / "manifest.json");
  if (!in) throw IoError("cannot open manifest in '" + output_dir.string() + "'");
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  std::vector<std::string> bad;
  for (const auto& entry : manifest.at("artifacts")) {
    const std::string file = entry.at("file").get<std::string>();
    const auto path = output_dir / file;
    if (!std::filesystem::exists(path) ||
        sha256_file(path) != entry.at("sha256").get<std::string>()) {
      bad.push_back(file);
    }
  }
  return bad;
}

}  // namespace fusionrank
