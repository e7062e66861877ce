// fusionrank: stage-by-stage retrieval post-processing from the command line.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fusionrank/aggregate.hpp"
#include "fusionrank/config.hpp"
#include "fusionrank/diffusion.hpp"
#include "fusionrank/error.hpp"
#include "fusionrank/fusion_eval.hpp"
#include "fusionrank/gradcheck.hpp"
#include "fusionrank/kreciprocal.hpp"
#include "fusionrank/metricspace.hpp"
#include "fusionrank/pipeline.hpp"
#include "fusionrank/synthetic.hpp"
#include "fusionrank/tensorio.hpp"

namespace fr = fusionrank;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

std::vector<std::string> read_id_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fr::IoError("cannot open '" + path + "'");
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ids.push_back(line);
  }
  return ids;
}

// A .feat path contributes its .ids sidecar; anything else is read as an id list.
std::vector<std::string> ids_from(const std::string& path) {
  if (path.size() > 5 && path.ends_with(".feat")) {
    return read_id_file(fr::ids_path_for(path).string());
  }
  return read_id_file(path);
}

fr::FeatureMatrix load_any(const std::string& path) {
  if (path.ends_with(".csv")) return fr::load_features_csv(path);
  return fr::load_features(path);
}

std::size_t parse_count_or_full(const std::string& text, const char* what) {
  if (text == "full") return std::numeric_limits<std::size_t>::max();
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw fr::ConfigError(std::string(what) + ": expected a count or 'full', got '" + text + "'");
  }
}

void log_stage(const std::string& stage, std::chrono::steady_clock::time_point start,
               json extra = json::object()) {
  const double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - start).count();
  json record{{"stage", stage}, {"wall_ms", ms}};
  for (auto it = extra.begin(); it != extra.end(); ++it) record[it.key()] = it.value();
  std::cerr << record.dump() << '\n';
}

json shape(const fr::FeatureMatrix& m) { return json::array({m.rows(), m.dim()}); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval post-processing: aggregation, k-reciprocal reranking, diffusion, fusion"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "fusionrank 0.1.0");

  std::size_t workers = 0;
  auto add_workers = [&](CLI::App* sub) {
    sub->add_option("--workers", workers, "Worker threads (0: $RERANK_WORKERS or all cores)");
  };
  std::function<void()> action;
  const auto start = std::chrono::steady_clock::now();

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "Write a seeded clustered dataset");
  fr::SyntheticSpec spec;
  std::string gen_out;
  std::string gen_config;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--classes", spec.classes)->capture_default_str();
  gen->add_option("--per-class-gallery", spec.per_class_gallery)->capture_default_str();
  gen->add_option("--per-class-queries", spec.per_class_queries)->capture_default_str();
  gen->add_option("--dim", spec.dim)->capture_default_str();
  gen->add_option("--sigma", spec.noise_sigma, "Gaussian noise level")->capture_default_str();
  gen->add_option("--seed", spec.seed)->capture_default_str();
  gen->add_option("--write-config", gen_config,
                  "Also write a desk-scale pipeline config to this path");
  gen->callback([&] {
    action = [&] {
      const fr::SyntheticData data = fr::generate_synthetic(spec);
      fr::write_synthetic(data, gen_out);
      if (!gen_config.empty()) {
        fr::PipelineConfig cfg;
        const auto dir = std::filesystem::absolute(gen_out);
        cfg.models.push_back({"synthetic", {dir / "query.feat"}, {dir / "gallery.feat"}});
        cfg.labels = dir / "labels.csv";
        cfg.output_dir = dir / "run";
        cfg.diffusion.params.kd = 8;
        cfg.diffusion.params.n_trunc = std::numeric_limits<std::size_t>::max();
        cfg.rerank.params.k1 = 10;
        cfg.rerank.params.k2 = 3;
        cfg.rerank.candidates = std::nullopt;
        cfg.fusion.top_k = std::min<std::size_t>(100, data.gallery.rows());
        cfg.eval.k = 10;
        std::ofstream out(gen_config);
        if (!out) throw fr::IoError("cannot write '" + gen_config + "'");
        out << fr::config_to_json(cfg).dump(2) << '\n';
      }
      log_stage("gen-synthetic", start,
                {{"query", shape(data.queries)}, {"gallery", shape(data.gallery)}});
    };
  });

  // normalize
  auto* norm = app.add_subcommand("normalize", "L2-normalize every row");
  std::string norm_in, norm_out;
  norm->add_option("--in", norm_in)->required();
  norm->add_option("--out", norm_out)->required();
  norm->callback([&] {
    action = [&] {
      const auto m = fr::l2_normalize(load_any(norm_in));
      fr::save_features(m, norm_out);
      log_stage("normalize", start, {{"shape", shape(m)}});
    };
  });

  // convert
  auto* conv = app.add_subcommand("convert", "Convert between FEAT and plain CSV (by extension)");
  std::string conv_in, conv_out;
  conv->add_option("--in", conv_in)->required();
  conv->add_option("--out", conv_out)->required();
  conv->callback([&] {
    action = [&] {
      const auto m = load_any(conv_in);
      if (conv_out.ends_with(".csv")) {
        fr::save_features_csv(m, conv_out);
      } else {
        fr::save_features(m, conv_out);
      }
      log_stage("convert", start, {{"shape", shape(m)}});
    };
  });

  // tta / ensemble
  auto* tta = app.add_subcommand("tta", "Average augmented views, then normalize");
  std::vector<std::string> tta_views;
  std::string tta_out;
  tta->add_option("--views", tta_views)->required();
  tta->add_option("--out", tta_out)->required();
  tta->callback([&] {
    action = [&] {
      std::vector<fr::FeatureMatrix> views;
      for (const auto& v : tta_views) views.push_back(fr::l2_normalize(load_any(v)));
      const auto m = fr::tta_aggregate(views);
      fr::save_features(m, tta_out);
      log_stage("tta", start, {{"views", views.size()}, {"shape", shape(m)}});
    };
  });

  auto* ens = app.add_subcommand("ensemble", "Sum per-model features, then normalize");
  std::vector<std::string> ens_models;
  std::string ens_out;
  ens->add_option("--models", ens_models)->required();
  ens->add_option("--out", ens_out)->required();
  ens->callback([&] {
    action = [&] {
      std::vector<fr::FeatureMatrix> models;
      for (const auto& v : ens_models) models.push_back(fr::l2_normalize(load_any(v)));
      const auto m = fr::ensemble_features(models);
      fr::save_features(m, ens_out);
      log_stage("ensemble", start, {{"models", models.size()}, {"shape", shape(m)}});
    };
  });

  // pca
  auto* pca = app.add_subcommand("pca", "Fit PCA on a gallery and/or apply a model");
  std::string pca_gallery, pca_model, pca_model_out;
  std::size_t pca_r = 0;
  bool pca_whiten = false;
  std::vector<std::string> pca_in, pca_out;
  pca->add_option("--gallery", pca_gallery, "Fit on this gallery");
  pca->add_option("--model", pca_model, "Use an existing PCAM model instead of fitting");
  pca->add_option("--r", pca_r, "Target dimension when fitting");
  pca->add_flag("--whiten", pca_whiten);
  pca->add_option("--model-out", pca_model_out);
  pca->add_option("--in", pca_in, "Feature files to transform");
  pca->add_option("--out", pca_out, "Outputs, paired with --in");
  pca->callback([&] {
    action = [&] {
      if (pca_gallery.empty() == pca_model.empty()) {
        throw fr::ConfigError("pca: give exactly one of --gallery or --model");
      }
      if (pca_in.size() != pca_out.size()) throw fr::ConfigError("pca: --in and --out must pair up");
      const fr::PcaModel model = pca_model.empty()
                                     ? fr::pca_fit(load_any(pca_gallery), pca_r, pca_whiten)
                                     : fr::load_pca(pca_model);
      if (!pca_model_out.empty()) fr::save_pca(model, pca_model_out);
      for (std::size_t i = 0; i < pca_in.size(); ++i) {
        fr::save_features(fr::pca_transform(load_any(pca_in[i]), model), pca_out[i]);
      }
      log_stage("pca", start, {{"dim", model.dim}, {"rank", model.rank}});
    };
  });

  // dba / aqe
  auto* dba = app.add_subcommand("dba", "Database-side feature augmentation");
  std::string dba_gallery, dba_out, dba_weights = "linear";
  std::size_t dba_k = 10;
  dba->add_option("--gallery", dba_gallery)->required();
  dba->add_option("--k", dba_k)->capture_default_str();
  dba->add_option("--weights", dba_weights)->check(CLI::IsMember({"linear", "uniform"}));
  dba->add_option("--out", dba_out)->required();
  add_workers(dba);
  dba->callback([&] {
    action = [&] {
      const auto g = load_any(dba_gallery);
      const auto nbrs = fr::knn_self_excluded(g, dba_k, {workers, 1024});
      const auto m = fr::dba_augment(g, nbrs, dba_k,
                                     dba_weights == "linear" ? fr::DbaWeighting::kLinear
                                                             : fr::DbaWeighting::kUniform);
      fr::save_features(m, dba_out);
      log_stage("dba", start, {{"shape", shape(m)}});
    };
  });

  auto* aqe = app.add_subcommand("aqe", "Average query expansion");
  std::string aqe_query, aqe_gallery, aqe_out;
  std::size_t aqe_k = 5;
  aqe->add_option("--query", aqe_query)->required();
  aqe->add_option("--gallery", aqe_gallery)->required();
  aqe->add_option("--k", aqe_k)->capture_default_str();
  aqe->add_option("--out", aqe_out)->required();
  add_workers(aqe);
  aqe->callback([&] {
    action = [&] {
      const auto q = load_any(aqe_query);
      const auto g = load_any(aqe_gallery);
      fr::FeatureMatrix m = fr::l2_normalize(q);
      if (aqe_k > 0) {
        const auto nbrs = fr::knn_search(q, g, aqe_k, {workers, 1024});
        m = fr::aqe_expand(q, g, nbrs, aqe_k);
      }
      fr::save_features(m, aqe_out);
      log_stage("aqe", start, {{"shape", shape(m)}});
    };
  });

  // knn
  auto* knn = app.add_subcommand("knn", "Exact cosine k-nearest-neighbor search");
  std::string knn_query, knn_gallery, knn_out;
  std::size_t knn_k = 100, knn_block = 1024;
  bool knn_self = false;
  knn->add_option("--query", knn_query, "Omit with --exclude-self to search the gallery itself");
  knn->add_option("--gallery", knn_gallery)->required();
  knn->add_option("--k", knn_k)->capture_default_str();
  knn->add_option("--block-rows", knn_block)->capture_default_str();
  knn->add_flag("--exclude-self", knn_self, "Gallery against itself, excluding each item");
  knn->add_option("--out", knn_out)->required();
  add_workers(knn);
  knn->callback([&] {
    action = [&] {
      const auto g = load_any(knn_gallery);
      const fr::SearchOptions opts{workers, knn_block};
      fr::NeighborTable t;
      if (knn_self) {
        if (!knn_query.empty()) throw fr::ConfigError("knn: --exclude-self searches the gallery itself");
        t = fr::knn_self_excluded(g, knn_k, opts);
      } else {
        if (knn_query.empty()) throw fr::ConfigError("knn: --query is required");
        t = fr::knn_search(load_any(knn_query), g, knn_k, opts);
      }
      fr::save_neighbors(t, knn_out);
      log_stage("knn", start, {{"rows", t.rows()}, {"k", t.k()}});
    };
  });

  // rerank-kr
  auto* kr = app.add_subcommand("rerank-kr", "k-reciprocal rerank distance matrix D");
  std::string kr_query, kr_gallery, kr_out, kr_candidates = "1000", kr_pool = "pooled";
  fr::KReciprocalParams kr_params;
  kr->add_option("--query", kr_query)->required();
  kr->add_option("--gallery", kr_gallery)->required();
  kr->add_option("--k1", kr_params.k1)->capture_default_str();
  kr->add_option("--k2", kr_params.k2)->capture_default_str();
  kr->add_option("--lambda-value", kr_params.lambda_value)->capture_default_str();
  kr->add_option("--candidates", kr_candidates, "Per-query candidate count or 'full'")
      ->capture_default_str();
  kr->add_option("--pool", kr_pool)->check(CLI::IsMember({"pooled", "gallery_only"}));
  kr->add_option("--out", kr_out)->required();
  add_workers(kr);
  kr->callback([&] {
    action = [&] {
      const auto q = fr::l2_normalize(load_any(kr_query));
      const auto g = fr::l2_normalize(load_any(kr_gallery));
      const std::size_t n = parse_count_or_full(kr_candidates, "--candidates");
      const fr::IndexSets cands = n == std::numeric_limits<std::size_t>::max()
                                      ? fr::full_candidates(q.rows(), g.rows())
                                      : fr::top_candidates(q, g, n, {workers, 1024});
      const auto d = fr::kreciprocal_rerank(
          q, g, kr_params, cands,
          {kr_pool == "pooled" ? fr::NeighborPool::kPooled : fr::NeighborPool::kGalleryOnly,
           workers, 1024});
      fr::save_sparse(d, kr_out);
      log_stage("rerank-kr", start, {{"rows", d.rows()}, {"nnz", d.nnz()}});
    };
  });

  // diffuse
  auto* dif = app.add_subcommand("diffuse", "Truncated graph diffusion similarity matrix S");
  std::string dif_query, dif_gallery, dif_out, dif_trunc = "10000";
  fr::DiffusionParams dif_params;
  dif->add_option("--query", dif_query)->required();
  dif->add_option("--gallery", dif_gallery)->required();
  dif->add_option("--kd", dif_params.kd)->capture_default_str();
  dif->add_option("--n-trunc", dif_trunc, "Subgraph size or 'full'")->capture_default_str();
  dif->add_option("--alpha", dif_params.alpha)->capture_default_str();
  dif->add_option("--gamma-exp", dif_params.gamma_exp)->capture_default_str();
  dif->add_option("--cg-tol", dif_params.cg_tol)->capture_default_str();
  dif->add_option("--cg-max-iter", dif_params.cg_max_iter)->capture_default_str();
  dif->add_option("--out", dif_out)->required();
  add_workers(dif);
  dif->callback([&] {
    action = [&] {
      dif_params.n_trunc = parse_count_or_full(dif_trunc, "--n-trunc");
      const auto q = fr::l2_normalize(load_any(dif_query));
      const auto g = fr::l2_normalize(load_any(dif_gallery));
      const fr::DiffusionOptions opts{workers, 1024};
      const auto graph = fr::build_affinity(g, dif_params, opts);
      const auto s = fr::diffuse_queries(q, g, graph, dif_params, opts);
      fr::save_sparse(s, dif_out);
      log_stage("diffuse", start, {{"rows", s.rows()}, {"nnz", s.nnz()},
                                   {"graph_edges", graph.adjacency.nnz()}});
    };
  });

  // fuse
  auto* fuse = app.add_subcommand("fuse", "S_final = S - lambda * D");
  std::string fuse_s, fuse_d, fuse_out;
  fr::FusionParams fuse_params;
  double fuse_lambda_value = 0.3;
  std::optional<double> fuse_dmax;
  fuse->add_option("--s", fuse_s)->required();
  fuse->add_option("--d", fuse_d)->required();
  fuse->add_option("--lambda", fuse_params.lambda)->capture_default_str();
  fuse->add_option("--lambda-value", fuse_lambda_value,
                   "Rerank weighting used for D; sets the absent-entry fill")
      ->capture_default_str();
  fuse->add_option("--d-max-fill", fuse_dmax, "Explicit fill for absent D entries");
  fuse->add_flag("--normalize-before-fuse", fuse_params.normalize_before_fuse);
  fuse->add_option("--out", fuse_out)->required();
  fuse->callback([&] {
    action = [&] {
      fuse_params.d_max_fill =
          fuse_dmax.value_or(fr::rerank_max_distance({1, 1, fuse_lambda_value}));
      const auto out = fr::fuse_scores(fr::load_sparse(fuse_s), fr::load_sparse(fuse_d),
                                       fuse_params);
      fr::save_sparse(out, fuse_out);
      log_stage("fuse", start, {{"rows", out.rows()}, {"nnz", out.nnz()}});
    };
  });

  // topk
  auto* topk = app.add_subcommand("topk", "Rank a score matrix and write a submission CSV");
  std::string topk_scores, topk_query, topk_gallery, topk_out;
  std::size_t topk_k = 100;
  topk->add_option("--scores", topk_scores)->required();
  topk->add_option("--query-ids", topk_query, "Query .feat (uses its .ids) or id list")->required();
  topk->add_option("--gallery-ids", topk_gallery, "Gallery .feat (uses its .ids) or id list")
      ->required();
  topk->add_option("--k", topk_k)->capture_default_str();
  topk->add_option("--out", topk_out)->required();
  topk->callback([&] {
    action = [&] {
      const auto results = fr::rank_topk(fr::load_sparse(topk_scores), ids_from(topk_query),
                                         ids_from(topk_gallery), topk_k);
      fr::write_submission(results, topk_out);
      log_stage("topk", start, {{"queries", results.size()}});
    };
  });

  // eval
  auto* ev = app.add_subcommand("eval", "mAP@K of a submission against labels");
  std::string ev_sub, ev_labels, ev_gallery, ev_per_query, ev_denom = "min";
  std::size_t ev_k = 100;
  ev->add_option("--submission", ev_sub)->required();
  ev->add_option("--labels", ev_labels)->required();
  ev->add_option("--k", ev_k)->capture_default_str();
  ev->add_option("--denominator", ev_denom, "min: min(|relevant|, K); relevant: |relevant|")
      ->check(CLI::IsMember({"min", "relevant"}));
  ev->add_option("--gallery-ids", ev_gallery,
                 "Gallery universe (.feat or id list); default: labelled ids that are not queries");
  ev->add_option("--per-query", ev_per_query, "Write per-query AP CSV here");
  ev->callback([&] {
    action = [&] {
      const auto results = fr::load_submission(ev_sub);
      const auto labels = fr::load_labels(ev_labels);
      const auto denom = ev_denom == "min" ? fr::ApDenominator::kMinRelevantK
                                           : fr::ApDenominator::kRelevant;
      const fr::MapReport report = ev_gallery.empty()
                                       ? fr::map_at_k(results, labels, ev_k, denom)
                                       : fr::map_at_k(results, labels, ids_from(ev_gallery),
                                                      ev_k, denom);
      if (!ev_per_query.empty()) fr::write_ap_csv(report, ev_per_query);
      std::printf("mAP@%zu = %.5f\n", ev_k, report.mean);
    };
  });

  // run
  auto* run = app.add_subcommand("run", "Run the full pipeline from a JSON config");
  std::string run_config, run_output;
  std::vector<std::string> run_set;
  bool run_print = false;
  bool run_quiet = false;
  std::optional<std::size_t> run_workers;
  run->add_option("--config", run_config)->required();
  run->add_option("--set", run_set, "Override a config field: dotted.key=json-value");
  run->add_option("--output-dir", run_output);
  run->add_option("--workers", run_workers);
  run->add_flag("--print-config", run_print, "Print the resolved config and exit");
  run->add_flag("--quiet", run_quiet, "Suppress stage logging");
  run->callback([&] {
    action = [&] {
      std::ifstream in(run_config);
      if (!in) throw fr::IoError("cannot open config '" + run_config + "'");
      json doc;
      try {
        doc = json::parse(in);
      } catch (const json::parse_error& e) {
        throw fr::ConfigError(run_config + ": " + e.what());
      }
      for (const auto& s : run_set) fr::apply_override(doc, s);
      const auto base = std::filesystem::path(run_config).parent_path();
      fr::PipelineConfig cfg = fr::config_from_json(doc, base);
      if (!run_output.empty()) cfg.output_dir = run_output;
      if (run_workers) cfg.workers = *run_workers;
      if (run_print) {
        std::cout << fr::config_to_json(cfg).dump(2) << '\n';
        return;
      }
      const auto out = fr::run_pipeline(cfg, run_quiet ? fr::LogSink{} : fr::stderr_log_sink());
      if (out.map) std::printf("mAP@%zu = %.5f\n", cfg.eval.k, out.map->mean);
    };
  });

  // losses gradcheck
  auto* losses = app.add_subcommand("losses", "Training-loss utilities");
  losses->require_subcommand(1);
  auto* gc = losses->add_subcommand("gradcheck", "Finite-difference check of loss gradients");
  fr::losses::GradcheckOptions gc_opts;
  gc->add_option("--instances", gc_opts.instances)->capture_default_str();
  gc->add_option("--seed", gc_opts.seed)->capture_default_str();
  bool gc_failed = false;
  gc->callback([&] {
    action = [&] {
      for (const auto& r : fr::losses::run_gradcheck(gc_opts)) {
        std::printf("%-8s instances=%zu max_rel_error=%.3e %s\n", r.loss.c_str(), r.instances,
                    r.max_rel_error, r.passed ? "PASS" : "FAIL");
        gc_failed = gc_failed || !r.passed;
      }
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitValidation;
  }

  try {
    if (action) action();
  } catch (const fr::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return gc_failed ? kExitRuntime : 0;
}
