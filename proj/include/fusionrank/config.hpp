#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusionrank/aggregate.hpp"
#include "fusionrank/diffusion.hpp"
#include "fusionrank/fusion_eval.hpp"
#include "fusionrank/kreciprocal.hpp"

namespace fusionrank {

struct ModelInputs {
  std::string name;
  std::vector<std::filesystem::path> query_views;
  std::vector<std::filesystem::path> gallery_views;
};

struct PipelineConfig {
  std::vector<ModelInputs> models;
  std::optional<std::filesystem::path> labels;
  std::filesystem::path output_dir = "out";
  bool normalize_on_load = true;

  struct Aggregate {
    bool tta = true;
    struct {
      bool enabled = false;
      std::size_t r = 0;
      bool whiten = false;
    } pca;
    struct {
      bool enabled = false;
      std::size_t k = 10;
      DbaWeighting weights = DbaWeighting::kLinear;
    } dba;
    struct {
      bool enabled = false;
      std::size_t k = 5;
    } aqe;
  } aggregate;

  struct Rerank {
    bool enabled = true;
    KReciprocalParams params;
    std::optional<std::size_t> candidates = 1000;  // nullopt: every gallery item
    NeighborPool pool = NeighborPool::kPooled;
  } rerank;

  struct Diffusion {
    bool enabled = true;
    DiffusionParams params;
  } diffusion;

  struct Fusion {
    double lambda = 1.0;
    std::size_t top_k = 100;
    bool normalize_before_fuse = false;
  } fusion;

  struct Eval {
    std::size_t k = 100;
    ApDenominator denominator = ApDenominator::kMinRelevantK;
  } eval;

  std::size_t workers = 0;  // 0: $RERANK_WORKERS, then hardware concurrency
  std::size_t block_rows = 1024;
};

/// Parses a config document. Unknown keys and parameter violations throw
/// ConfigError; relative paths are resolved against `base_dir`.
PipelineConfig config_from_json(const nlohmann::json& doc,
                                const std::filesystem::path& base_dir = {});

PipelineConfig load_config(const std::filesystem::path& path);

/// Fully resolved config, every field present.
nlohmann::json config_to_json(const PipelineConfig& cfg);

/// Parameter invariants, plus existence of every referenced input file when
/// `check_files` is set.
void validate_config(const PipelineConfig& cfg, bool check_files = true);

/// Applies a `dotted.key=value` override, value parsed as JSON (bare words
/// fall back to strings).
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace fusionrank
