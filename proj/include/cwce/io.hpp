#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cwce/cwce.hpp"
#include "cwce/panel.hpp"
#include "cwce/reml.hpp"

#include "json.hpp"

namespace cwce {

// All real values serialize with 17 significant digits, which round-trips
// IEEE doubles exactly.
std::string format_double(double v);
double parse_double(const std::string& s);

nlohmann::json params_to_json(const ScmParams& params);
ScmParams params_from_json(const nlohmann::json& j);

nlohmann::json fit_to_json(const RemlFit& fit);
RemlFit fit_from_json(const nlohmann::json& j);

nlohmann::json dist_to_json(const CwceDistribution& dist);
CwceDistribution dist_from_json(const nlohmann::json& j);

// Columnar panel format: one row per individual-time with columns
//   id, k, c, a, y[, d], u0, u1, u2, n_y
// plus a JSON sidecar (params, seed, n, m). Round-trips bit-exactly.
void write_panel(const Panel& panel, const std::filesystem::path& csv_path,
                 const std::filesystem::path& meta_path);
Panel read_panel(const std::filesystem::path& csv_path,
                 const std::filesystem::path& meta_path);

std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(const std::string& bytes);

struct ExperimentConfig {
  int schema_version = 1;
  std::string recipe;  // fig5|fig7|fig8|fig9|fig10|fig11|fig12|fig13|table5|bias_demo|custom
  ScmParams scm;
  int n = 0;
  int m = 0;
  std::uint64_t seed = 0;
  int k = 3;
  ExposureRegime regime;
  std::vector<std::pair<int, int>> subset_grid;
  std::string outputs;
};

// Strict parse: unknown keys are rejected (fail-closed), exactly one of
// "scm" / "scm_preset" must be present.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& config);

}  // namespace cwce
