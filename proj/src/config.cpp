#include "fusionrank/config.hpp"

#include <fstream>
#include <limits>
#include <set>

#include "fusionrank/error.hpp"

namespace fusionrank {

namespace {

using nlohmann::json;

constexpr std::size_t kFull = std::numeric_limits<std::size_t>::max();

// Reads fields of one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(path(key) + ": expected a boolean");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(path(key) + ": expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) out = as_count(*v, key);
  }
  // Count or the string "full".
  void get_count_or_full(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) {
      out = (v->is_string() && v->get<std::string>() == "full") ? kFull : as_count(*v, key);
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(path(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (seen_.count(it.key()) == 0) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  std::size_t as_count(const json& v, const std::string& key) const {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError(path(key) + ": expected a non-negative integer");
    }
    return v.get<std::size_t>();
  }

  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute() || base.empty()) return path;
  return base / path;
}

std::vector<std::filesystem::path> path_list(const json* v, const std::string& where,
                                             const std::filesystem::path& base) {
  std::vector<std::filesystem::path> out;
  if (v == nullptr) return out;
  if (!v->is_array()) throw ConfigError(where + ": expected an array of paths");
  for (const auto& e : *v) {
    if (!e.is_string()) throw ConfigError(where + ": expected an array of paths");
    out.push_back(resolve(base, e.get<std::string>()));
  }
  return out;
}

json count_or_full(std::size_t v) { return v == kFull ? json("full") : json(v); }

}  // namespace

PipelineConfig config_from_json(const json& doc, const std::filesystem::path& base_dir) {
  PipelineConfig cfg;
  ObjectReader root(doc, "config");

  if (const json* models = root.find("models")) {
    if (!models->is_array()) throw ConfigError("config.models: expected an array");
    for (std::size_t i = 0; i < models->size(); ++i) {
      const std::string where = "config.models[" + std::to_string(i) + "]";
      ObjectReader m((*models)[i], where);
      ModelInputs in;
      in.name = "model" + std::to_string(i);
      m.get("name", in.name);
      in.query_views = path_list(m.find("query_views"), where + ".query_views", base_dir);
      in.gallery_views = path_list(m.find("gallery_views"), where + ".gallery_views", base_dir);
      m.finish();
      cfg.models.push_back(std::move(in));
    }
  }
  if (const json* labels = root.find("labels"); labels != nullptr && !labels->is_null()) {
    if (!labels->is_string()) throw ConfigError("config.labels: expected a path or null");
    cfg.labels = resolve(base_dir, labels->get<std::string>());
  }
  if (const json* out = root.find("output_dir")) {
    if (!out->is_string()) throw ConfigError("config.output_dir: expected a path");
    cfg.output_dir = resolve(base_dir, out->get<std::string>());
  }
  root.get("normalize_on_load", cfg.normalize_on_load);
  root.get("workers", cfg.workers);
  root.get("block_rows", cfg.block_rows);

  if (const json* agg = root.find("aggregate")) {
    ObjectReader a(*agg, "config.aggregate");
    a.get("tta", cfg.aggregate.tta);
    if (const json* pca = a.find("pca")) {
      ObjectReader r(*pca, "config.aggregate.pca");
      r.get("enabled", cfg.aggregate.pca.enabled);
      r.get("r", cfg.aggregate.pca.r);
      r.get("whiten", cfg.aggregate.pca.whiten);
      r.finish();
    }
    if (const json* dba = a.find("dba")) {
      ObjectReader r(*dba, "config.aggregate.dba");
      r.get("enabled", cfg.aggregate.dba.enabled);
      r.get("k", cfg.aggregate.dba.k);
      std::string weights = "linear";
      r.get("weights", weights);
      if (weights == "linear") {
        cfg.aggregate.dba.weights = DbaWeighting::kLinear;
      } else if (weights == "uniform") {
        cfg.aggregate.dba.weights = DbaWeighting::kUniform;
      } else {
        throw ConfigError("config.aggregate.dba.weights: expected 'linear' or 'uniform'");
      }
      r.finish();
    }
    if (const json* aqe = a.find("aqe")) {
      ObjectReader r(*aqe, "config.aggregate.aqe");
      r.get("enabled", cfg.aggregate.aqe.enabled);
      r.get("k", cfg.aggregate.aqe.k);
      r.finish();
    }
    a.finish();
  }

  if (const json* rr = root.find("rerank")) {
    ObjectReader r(*rr, "config.rerank");
    r.get("enabled", cfg.rerank.enabled);
    r.get("k1", cfg.rerank.params.k1);
    r.get("k2", cfg.rerank.params.k2);
    r.get("lambda_value", cfg.rerank.params.lambda_value);
    std::size_t candidates = cfg.rerank.candidates.value_or(kFull);
    r.get_count_or_full("candidates", candidates);
    cfg.rerank.candidates =
        candidates == kFull ? std::nullopt : std::optional<std::size_t>(candidates);
    std::string pool = "pooled";
    r.get("pool", pool);
    if (pool == "pooled") {
      cfg.rerank.pool = NeighborPool::kPooled;
    } else if (pool == "gallery_only") {
      cfg.rerank.pool = NeighborPool::kGalleryOnly;
    } else {
      throw ConfigError("config.rerank.pool: expected 'pooled' or 'gallery_only'");
    }
    r.finish();
  }

  if (const json* df = root.find("diffusion")) {
    ObjectReader r(*df, "config.diffusion");
    r.get("enabled", cfg.diffusion.enabled);
    r.get("kd", cfg.diffusion.params.kd);
    r.get_count_or_full("n_trunc", cfg.diffusion.params.n_trunc);
    r.get("alpha", cfg.diffusion.params.alpha);
    r.get("gamma_exp", cfg.diffusion.params.gamma_exp);
    r.get("cg_tol", cfg.diffusion.params.cg_tol);
    r.get("cg_max_iter", cfg.diffusion.params.cg_max_iter);
    r.finish();
  }

  if (const json* fu = root.find("fusion")) {
    ObjectReader r(*fu, "config.fusion");
    r.get("lambda", cfg.fusion.lambda);
    r.get("top_k", cfg.fusion.top_k);
    r.get("normalize_before_fuse", cfg.fusion.normalize_before_fuse);
    r.finish();
  }

  if (const json* ev = root.find("eval")) {
    ObjectReader r(*ev, "config.eval");
    r.get("k", cfg.eval.k);
    std::string denom = "min";
    r.get("denominator", denom);
    if (denom == "min") {
      cfg.eval.denominator = ApDenominator::kMinRelevantK;
    } else if (denom == "relevant") {
      cfg.eval.denominator = ApDenominator::kRelevant;
    } else {
      throw ConfigError("config.eval.denominator: expected 'min' or 'relevant'");
    }
    r.finish();
  }
  root.finish();
  validate_config(cfg, false);
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(doc, path.parent_path());
}

json config_to_json(const PipelineConfig& cfg) {
  json models = json::array();
  for (const auto& m : cfg.models) {
    json q = json::array();
    json g = json::array();
    for (const auto& p : m.query_views) q.push_back(p.string());
    for (const auto& p : m.gallery_views) g.push_back(p.string());
    models.push_back({{"name", m.name}, {"query_views", q}, {"gallery_views", g}});
  }
  const auto& rp = cfg.rerank.params;
  const auto& dp = cfg.diffusion.params;
  return json{
      {"models", models},
      {"labels", cfg.labels ? json(cfg.labels->string()) : json(nullptr)},
      {"output_dir", cfg.output_dir.string()},
      {"normalize_on_load", cfg.normalize_on_load},
      {"aggregate",
       {{"tta", cfg.aggregate.tta},
        {"pca",
         {{"enabled", cfg.aggregate.pca.enabled},
          {"r", cfg.aggregate.pca.r},
          {"whiten", cfg.aggregate.pca.whiten}}},
        {"dba",
         {{"enabled", cfg.aggregate.dba.enabled},
          {"k", cfg.aggregate.dba.k},
          {"weights", cfg.aggregate.dba.weights == DbaWeighting::kLinear ? "linear" : "uniform"}}},
        {"aqe", {{"enabled", cfg.aggregate.aqe.enabled}, {"k", cfg.aggregate.aqe.k}}}}},
      {"rerank",
       {{"enabled", cfg.rerank.enabled},
        {"k1", rp.k1},
        {"k2", rp.k2},
        {"lambda_value", rp.lambda_value},
        {"candidates", count_or_full(cfg.rerank.candidates.value_or(kFull))},
        {"pool", cfg.rerank.pool == NeighborPool::kPooled ? "pooled" : "gallery_only"}}},
      {"diffusion",
       {{"enabled", cfg.diffusion.enabled},
        {"kd", dp.kd},
        {"n_trunc", count_or_full(dp.n_trunc)},
        {"alpha", dp.alpha},
        {"gamma_exp", dp.gamma_exp},
        {"cg_tol", dp.cg_tol},
        {"cg_max_iter", dp.cg_max_iter}}},
      {"fusion",
       {{"lambda", cfg.fusion.lambda},
        {"top_k", cfg.fusion.top_k},
        {"normalize_before_fuse", cfg.fusion.normalize_before_fuse}}},
      {"eval",
       {{"k", cfg.eval.k},
        {"denominator",
         cfg.eval.denominator == ApDenominator::kMinRelevantK ? "min" : "relevant"}}},
      {"workers", cfg.workers},
      {"block_rows", cfg.block_rows},
  };
}

void validate_config(const PipelineConfig& cfg, bool check_files) {
  try {
    if (cfg.rerank.enabled) validate(cfg.rerank.params);
    if (cfg.diffusion.enabled) validate(cfg.diffusion.params);
    validate(FusionParams{cfg.fusion.lambda, cfg.fusion.top_k, 1.0, 0.0, false});
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  if (cfg.rerank.candidates && *cfg.rerank.candidates == 0) {
    throw ConfigError("rerank.candidates must be at least 1");
  }
  if (cfg.eval.k == 0) throw ConfigError("eval.k must be at least 1");
  if (cfg.block_rows == 0) throw ConfigError("block_rows must be at least 1");
  if (cfg.aggregate.pca.enabled && cfg.aggregate.pca.r == 0) {
    throw ConfigError("aggregate.pca.r must be at least 1 when PCA is enabled");
  }
  if (cfg.models.empty()) throw ConfigError("config lists no models");
  std::set<std::string> names;
  for (const auto& m : cfg.models) {
    if (m.query_views.empty() || m.gallery_views.empty()) {
      throw ConfigError("model '" + m.name + "' needs at least one query and one gallery view");
    }
    if (m.name.empty() ||
        m.name.find_first_not_of("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-") !=
            std::string::npos) {
      throw ConfigError("model name '" + m.name + "' may only use letters, digits, '_' and '-'");
    }
    if (!names.insert(m.name).second) throw ConfigError("duplicate model name '" + m.name + "'");
  }
  if (!check_files) return;
  auto require = [](const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) throw ConfigError("input file '" + p.string() + "' does not exist");
  };
  for (const auto& m : cfg.models) {
    for (const auto& p : m.query_views) require(p);
    for (const auto& p : m.gallery_views) require(p);
  }
  if (cfg.labels) require(*cfg.labels);
}

void apply_override(json& doc, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    if (!node->is_object()) throw ConfigError("override key '" + key + "' crosses a non-object");
    start = dot + 1;
  }
}

}  // namespace fusionrank
