#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include "fusionrank/aggregate.hpp"
#include "fusionrank/config.hpp"
#include "fusionrank/diffusion.hpp"
#include "fusionrank/error.hpp"
#include "fusionrank/fusion_eval.hpp"
#include "fusionrank/gradcheck.hpp"
#include "fusionrank/kreciprocal.hpp"
#include "fusionrank/losses.hpp"
#include "fusionrank/metricspace.hpp"
#include "fusionrank/pipeline.hpp"
#include "fusionrank/synthetic.hpp"
#include "fusionrank/tensorio.hpp"

namespace py = pybind11;
namespace fr = fusionrank;
namespace fl = fusionrank::losses;

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IndexArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

namespace {

std::vector<std::string> default_ids(std::size_t n, const char* prefix) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
  return ids;
}

fr::FeatureMatrix to_matrix(const F32Array& a, std::optional<std::vector<std::string>> ids,
                            const char* prefix = "r") {
  if (a.ndim() != 2) throw fr::ContractError("expected a 2-D float array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto dim = static_cast<std::size_t>(a.shape(1));
  std::vector<float> data(a.data(), a.data() + rows * dim);
  return fr::FeatureMatrix(rows, dim, std::move(data), ids ? *ids : default_ids(rows, prefix));
}

py::array_t<float> to_array(const fr::FeatureMatrix& m) {
  py::array_t<float> out({m.rows(), m.dim()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

fl::Matrix to_loss_matrix(const F64Array& a) {
  if (a.ndim() != 2) throw fr::ContractError("expected a 2-D array");
  const auto r = static_cast<std::size_t>(a.shape(0));
  const auto c = static_cast<std::size_t>(a.shape(1));
  return fl::Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

py::array_t<double> from_loss_matrix(const fl::Matrix& m) {
  py::array_t<double> out({m.rows, m.cols});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

std::vector<std::size_t> to_labels(const IndexArray& a) {
  std::vector<std::size_t> out;
  for (py::ssize_t i = 0; i < a.size(); ++i) {
    if (a.data()[i] < 0) throw fr::ContractError("labels must be non-negative");
    out.push_back(static_cast<std::size_t>(a.data()[i]));
  }
  return out;
}

template <typename T>
py::array_t<T> copy_out(const std::vector<T>& v) {
  py::array_t<T> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::list results_to_py(const std::vector<fr::RankedResult>& results) {
  py::list out;
  for (const auto& r : results) out.append(py::make_tuple(r.query_id, r.entries));
  return out;
}

std::vector<fr::RankedResult> results_from_py(const py::iterable& items) {
  std::vector<fr::RankedResult> out;
  for (const auto& item : items) {
    const auto t = item.cast<py::tuple>();
    fr::RankedResult r;
    r.query_id = t[0].cast<std::string>();
    for (const auto& e : t[1]) {
      if (py::isinstance<py::str>(e)) {
        r.entries.emplace_back(e.cast<std::string>(), 0.0f);
      } else {
        const auto pair = e.cast<py::tuple>();
        r.entries.emplace_back(pair[0].cast<std::string>(), pair[1].cast<float>());
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

fr::ApDenominator parse_denominator(const std::string& s) {
  if (s == "min") return fr::ApDenominator::kMinRelevantK;
  if (s == "relevant") return fr::ApDenominator::kRelevant;
  throw fr::ConfigError("denominator must be 'min' or 'relevant'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Retrieval post-processing: aggregation, reranking, diffusion, fusion and evaluation.";

  auto validation = py::register_exception<fr::ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<fr::RuntimeError>(m, "FusionRuntimeError", PyExc_RuntimeError);
  (void)validation;

  py::class_<fr::SparseRowMatrix>(m, "SparseRowMatrix")
      .def(py::init([](std::size_t cols, const std::vector<std::uint64_t>& offsets,
                       const std::vector<std::uint32_t>& columns, const std::vector<float>& values) {
             return fr::SparseRowMatrix(offsets.empty() ? 0 : offsets.size() - 1, cols, offsets,
                                        columns, values);
           }),
           py::arg("cols"), py::arg("offsets"), py::arg("columns"), py::arg("values"))
      .def_property_readonly("rows", &fr::SparseRowMatrix::rows)
      .def_property_readonly("cols", &fr::SparseRowMatrix::cols)
      .def_property_readonly("nnz", &fr::SparseRowMatrix::nnz)
      .def_property_readonly("offsets", [](const fr::SparseRowMatrix& s) { return copy_out(s.offsets()); })
      .def_property_readonly("columns", [](const fr::SparseRowMatrix& s) { return copy_out(s.columns()); })
      .def_property_readonly("values", [](const fr::SparseRowMatrix& s) { return copy_out(s.values()); })
      .def("to_dense",
           [](const fr::SparseRowMatrix& s, float fill) {
             py::array_t<float> out({s.rows(), s.cols()});
             float* p = out.mutable_data();
             std::fill(p, p + s.rows() * s.cols(), fill);
             for (std::size_t r = 0; r < s.rows(); ++r) {
               const auto cols = s.row_columns(r);
               const auto vals = s.row_values(r);
               for (std::size_t k = 0; k < cols.size(); ++k) p[r * s.cols() + cols[k]] = vals[k];
             }
             return out;
           },
           py::arg("fill") = 0.0f)
      .def("__eq__", [](const fr::SparseRowMatrix& a, const fr::SparseRowMatrix& b) { return a == b; });

  // tensorio
  m.def("load_features",
        [](const std::filesystem::path& path) {
          const auto f = fr::load_features(path);
          return py::make_tuple(to_array(f), f.ids());
        },
        py::arg("path"), "Read a FEAT file and its id sidecar; returns (array, ids).");
  m.def("save_features",
        [](const std::filesystem::path& path, const F32Array& a, std::vector<std::string> ids) {
          fr::save_features(to_matrix(a, std::move(ids)), path);
        },
        py::arg("path"), py::arg("features"), py::arg("ids"));
  m.def("l2_normalize", [](const F32Array& a) { return to_array(fr::l2_normalize(to_matrix(a, {}))); },
        py::arg("features"));
  m.def("load_labels",
        [](const std::filesystem::path& path) { return fr::load_labels(path).entries(); },
        py::arg("path"));
  m.def("write_submission",
        [](const py::iterable& results, const std::filesystem::path& path) {
          fr::write_submission(results_from_py(results), path);
        },
        py::arg("results"), py::arg("path"));
  m.def("load_submission",
        [](const std::filesystem::path& path) { return results_to_py(fr::load_submission(path)); },
        py::arg("path"));
  m.def("load_sparse", &fr::load_sparse, py::arg("path"));
  m.def("save_sparse", &fr::save_sparse, py::arg("matrix"), py::arg("path"));

  // metricspace
  m.def("knn_search",
        [](const F32Array& q, const F32Array& g, std::size_t k, std::size_t workers) {
          const auto t = fr::knn_search(to_matrix(q, {}, "q"), to_matrix(g, {}, "g"), k,
                                        {workers, 1024});
          py::array_t<std::uint32_t> idx({t.rows(), t.k()});
          py::array_t<float> sims({t.rows(), t.k()});
          std::copy(t.all_indices().begin(), t.all_indices().end(), idx.mutable_data());
          std::copy(t.all_sims().begin(), t.all_sims().end(), sims.mutable_data());
          return py::make_tuple(idx, sims);
        },
        py::arg("queries"), py::arg("gallery"), py::arg("k"), py::arg("workers") = 1,
        "Exact cosine top-k; returns (indices, similarities).");

  // aggregate
  m.def("tta_aggregate",
        [](const std::vector<F32Array>& views) {
          std::vector<fr::FeatureMatrix> ms;
          for (const auto& v : views) ms.push_back(to_matrix(v, {}));
          return to_array(fr::tta_aggregate(ms));
        },
        py::arg("views"));
  m.def("ensemble_features",
        [](const std::vector<F32Array>& models) {
          std::vector<fr::FeatureMatrix> ms;
          for (const auto& v : models) ms.push_back(to_matrix(v, {}));
          return to_array(fr::ensemble_features(ms));
        },
        py::arg("models"));
  m.def("pca",
        [](const F32Array& gallery, std::size_t r, bool whiten, const std::vector<F32Array>& apply) {
          const auto model = fr::pca_fit(to_matrix(gallery, {}), r, whiten);
          py::list out;
          for (const auto& a : apply) out.append(to_array(fr::pca_transform(to_matrix(a, {}), model)));
          return py::make_tuple(copy_out(model.eigenvalues), out);
        },
        py::arg("gallery"), py::arg("r"), py::arg("whiten") = false,
        py::arg("apply") = std::vector<F32Array>{},
        "Fit PCA on the gallery; returns (eigenvalues, transformed inputs).");
  m.def("dba_augment",
        [](const F32Array& gallery, std::size_t k, const std::string& weights, std::size_t workers) {
          const auto g = to_matrix(gallery, {});
          if (k == 0) return to_array(fr::l2_normalize(g));
          const auto t = fr::knn_self_excluded(g, k, {workers, 1024});
          return to_array(fr::dba_augment(g, t, k,
                                          weights == "uniform" ? fr::DbaWeighting::kUniform
                                                               : fr::DbaWeighting::kLinear));
        },
        py::arg("gallery"), py::arg("k") = 10, py::arg("weights") = "linear", py::arg("workers") = 1);
  m.def("aqe_expand",
        [](const F32Array& queries, const F32Array& gallery, std::size_t k, std::size_t workers) {
          const auto q = to_matrix(queries, {}, "q");
          const auto g = to_matrix(gallery, {}, "g");
          if (k == 0) return to_array(fr::l2_normalize(q));
          return to_array(fr::aqe_expand(q, g, fr::knn_search(q, g, k, {workers, 1024}), k));
        },
        py::arg("queries"), py::arg("gallery"), py::arg("k") = 5, py::arg("workers") = 1);

  // kreciprocal
  m.def("kreciprocal_rerank",
        [](const F32Array& queries, const F32Array& gallery, std::size_t k1, std::size_t k2,
           double lambda_value, std::optional<std::size_t> candidates, const std::string& pool,
           std::size_t workers) {
          const auto q = to_matrix(queries, {}, "q");
          const auto g = to_matrix(gallery, {}, "g");
          const auto cands = candidates ? fr::top_candidates(q, g, *candidates, {workers, 1024})
                                        : fr::full_candidates(q.rows(), g.rows());
          if (pool != "pooled" && pool != "gallery_only") {
            throw fr::ConfigError("pool must be 'pooled' or 'gallery_only'");
          }
          return fr::kreciprocal_rerank(
              q, g, {k1, k2, lambda_value}, cands,
              {pool == "pooled" ? fr::NeighborPool::kPooled : fr::NeighborPool::kGalleryOnly,
               workers, 1024});
        },
        py::arg("queries"), py::arg("gallery"), py::arg("k1") = 260, py::arg("k2") = 30,
        py::arg("lambda_value") = 0.3, py::arg("candidates") = py::none(),
        py::arg("pool") = "pooled", py::arg("workers") = 1,
        "Distance matrix D; candidates=None scores every gallery item.");
  m.def("jaccard_distance",
        [](const std::vector<std::uint32_t>& pc, const std::vector<double>& pv,
           const std::vector<std::uint32_t>& gc, const std::vector<double>& gv) {
          return fr::jaccard_distance(pc, pv, gc, gv);
        });

  // diffusion
  m.def("diffuse",
        [](const F32Array& queries, const F32Array& gallery, std::size_t kd,
           std::optional<std::size_t> n_trunc, double alpha, double gamma_exp, double cg_tol,
           std::size_t cg_max_iter, std::size_t workers) {
          const auto q = to_matrix(queries, {}, "q");
          const auto g = to_matrix(gallery, {}, "g");
          const fr::DiffusionParams p{kd, n_trunc.value_or(std::numeric_limits<std::size_t>::max()),
                                      alpha, gamma_exp, cg_tol, cg_max_iter};
          const fr::DiffusionOptions opts{workers, 1024};
          return fr::diffuse_queries(q, g, fr::build_affinity(g, p, opts), p, opts);
        },
        py::arg("queries"), py::arg("gallery"), py::arg("kd") = 70, py::arg("n_trunc") = py::none(),
        py::arg("alpha") = 0.99, py::arg("gamma_exp") = 3.0, py::arg("cg_tol") = 1e-6,
        py::arg("cg_max_iter") = 20, py::arg("workers") = 1,
        "Similarity matrix S; n_trunc=None uses the whole gallery graph.");

  // fusion_eval
  m.def("fuse_scores",
        [](const fr::SparseRowMatrix& s, const fr::SparseRowMatrix& d, double lambda,
           double d_max_fill, bool normalize) {
          return fr::fuse_scores(s, d, {lambda, 1, d_max_fill, 0.0, normalize});
        },
        py::arg("s"), py::arg("d"), py::arg("lam") = 1.0, py::arg("d_max_fill") = 1.3,
        py::arg("normalize_before_fuse") = false);
  m.def("rank_topk",
        [](const fr::SparseRowMatrix& scores, const std::vector<std::string>& query_ids,
           const std::vector<std::string>& gallery_ids, std::size_t top_k) {
          return results_to_py(fr::rank_topk(scores, query_ids, gallery_ids, top_k));
        },
        py::arg("scores"), py::arg("query_ids"), py::arg("gallery_ids"), py::arg("top_k") = 100);
  m.def("ap_at_k",
        [](const std::vector<std::string>& ranked, const std::unordered_set<std::string>& relevant,
           std::size_t k, const std::string& denominator) {
          return fr::ap_at_k(ranked, relevant, k, parse_denominator(denominator));
        },
        py::arg("ranked"), py::arg("relevant"), py::arg("k"), py::arg("denominator") = "min");
  m.def("map_at_k",
        [](const py::iterable& results, std::unordered_map<std::string, std::string> labels,
           std::optional<std::vector<std::string>> gallery_ids, std::size_t k,
           const std::string& denominator) {
          const auto rs = results_from_py(results);
          const fr::LabelMap lm(std::move(labels));
          const auto report = gallery_ids
                                  ? fr::map_at_k(rs, lm, *gallery_ids, k, parse_denominator(denominator))
                                  : fr::map_at_k(rs, lm, k, parse_denominator(denominator));
          return py::make_tuple(report.mean, report.per_query);
        },
        py::arg("results"), py::arg("labels"), py::arg("gallery_ids") = py::none(),
        py::arg("k") = 100, py::arg("denominator") = "min");

  // losses
  m.def("arcface_loss",
        [](const F64Array& emb, const F64Array& w, const IndexArray& labels, double margin, double scale) {
          const auto r = fl::arcface_loss(to_loss_matrix(emb), to_loss_matrix(w), to_labels(labels),
                                          {margin, scale});
          return py::make_tuple(r.loss, from_loss_matrix(r.grad_embeddings),
                                from_loss_matrix(r.grad_class_weights));
        },
        py::arg("embeddings"), py::arg("class_weights"), py::arg("labels"), py::arg("margin") = 0.2,
        py::arg("scale") = 32.0);
  m.def("circle_loss",
        [](const std::vector<double>& sp, const std::vector<double>& sn, double m_, double gamma) {
          const auto r = fl::circle_loss(sp, sn, {m_, gamma});
          return py::make_tuple(r.loss, r.grad_sp, r.grad_sn);
        },
        py::arg("sp"), py::arg("sn"), py::arg("m") = 0.25, py::arg("gamma") = 32.0);
  m.def("combined_loss",
        [](double la, double lc, std::size_t beta) {
          return fl::combined_loss({la, {}}, {lc, {}}, fl::CombinedLossWeights::from_batch_size(beta)).value;
        },
        py::arg("la"), py::arg("lc"), py::arg("beta"));
  m.def("kd_distill_loss",
        [](const F64Array& s, const F64Array& t, const IndexArray& labels, double temperature,
           double kd_weight, double ce_weight) {
          const auto r = fl::kd_distill_loss(to_loss_matrix(s), to_loss_matrix(t), to_labels(labels),
                                             {temperature, kd_weight, ce_weight});
          return py::make_tuple(r.loss, from_loss_matrix(r.grad_student));
        },
        py::arg("student_logits"), py::arg("teacher_logits"), py::arg("labels"),
        py::arg("temperature") = 3.0, py::arg("kd_weight") = 1.0, py::arg("ce_weight") = 1.0);
  m.def("gradcheck",
        [](std::size_t instances, std::uint64_t seed) {
          py::dict out;
          for (const auto& r : fl::run_gradcheck({instances, seed, 1e-4, 1e-4})) {
            out[py::str(r.loss)] = py::make_tuple(r.max_rel_error, r.passed);
          }
          return out;
        },
        py::arg("instances") = 100, py::arg("seed") = 20211017);

  // pipeline
  m.def("generate_synthetic",
        [](const std::filesystem::path& out, std::size_t classes, std::size_t per_class_gallery,
           std::size_t per_class_queries, std::size_t dim, double sigma, std::uint64_t seed) {
          fr::write_synthetic(
              fr::generate_synthetic({classes, per_class_gallery, per_class_queries, dim, sigma, seed}),
              out);
        },
        py::arg("out"), py::arg("classes") = 5, py::arg("per_class_gallery") = 20,
        py::arg("per_class_queries") = 5, py::arg("dim") = 64, py::arg("sigma") = 0.35,
        py::arg("seed") = 42);
  m.def("run_pipeline",
        [](const std::string& config_json, const std::filesystem::path& base_dir, bool log) {
          nlohmann::json doc;
          try {
            doc = nlohmann::json::parse(config_json);
          } catch (const nlohmann::json::parse_error& e) {
            throw fr::ConfigError(e.what());
          }
          const auto cfg = fr::config_from_json(doc, base_dir);
          const auto out = fr::run_pipeline(cfg, log ? fr::stderr_log_sink() : fr::LogSink{});
          py::object map = py::none();
          if (out.map) map = py::float_(out.map->mean);
          return py::make_tuple(results_to_py(out.results), map);
        },
        py::arg("config_json"), py::arg("base_dir") = std::filesystem::path{}, py::arg("log") = false,
        "Run the full pipeline from a JSON config string; returns (results, mAP or None).");
  m.def("verify_manifest", &fr::verify_manifest, py::arg("output_dir"));
}
