#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusionrank/config.hpp"
#include "fusionrank/fusion_eval.hpp"
#include "fusionrank/tensorio.hpp"

namespace fusionrank {

/// Receives one structured record per completed stage.
using LogSink = std::function<void(const nlohmann::json&)>;

/// Writes each record as one JSON line to stderr.
LogSink stderr_log_sink();

struct PipelineOutput {
  std::vector<RankedResult> results;
  std::optional<MapReport> map;
  nlohmann::json manifest;
};

/// load -> normalize -> TTA (per model) -> ensemble -> [PCA, DBA, AQE] ->
/// diffusion S and k-reciprocal D -> fuse -> top-K -> submission.csv.
///
/// Every intermediate artifact is written under cfg.output_dir with a stable
/// name, and manifest.json records the resolved config, artifact SHA-256
/// digests and stage timings. A failing stage throws with the stage name in
/// the message and leaves earlier artifacts in place.
PipelineOutput run_pipeline(const PipelineConfig& cfg, const LogSink& log = stderr_log_sink());

/// Names of manifest artifacts whose file is missing or whose digest differs.
std::vector<std::string> verify_manifest(const std::filesystem::path& output_dir);

/// query_id,ap lines with a header.
void write_ap_csv(const MapReport& report, const std::filesystem::path& path);

}  // namespace fusionrank
