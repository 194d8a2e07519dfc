#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "stratify/bart.hpp"
#include "stratify/data_model.hpp"
#include "stratify/errors.hpp"
#include "stratify/postprocess.hpp"
#include "stratify/profile_regression.hpp"

namespace stratify {

inline constexpr const char* kVersion = "1.0.0";

// Settings for one end-to-end run. Stage seeds derive from `seed`:
// stage 1 uses derive_seed(seed, 1), the mixture sampler derive_seed(seed, 2).
struct RunConfig {
  std::string preset = "sim";
  TreeEnsembleConfig stage1;
  ChainOptions stage2;
  double kappa0 = 0.01;
  double dirichlet_a = 1.0;
  double alpha_shape = 2.0;
  double alpha_rate = 1.0;
  bool variable_selection = false;
  double rho_atom = 0.5;
  bool standardize = false;
  std::size_t k_max = 0;  // 0 selects default_k_max(n)
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// "sim": stage 1 6000/1000, stage 2 2000/1000 iterations/burn-in.
// "application": stage 1 6000/1000, stage 2 40000/10000.
RunConfig preset_config(const std::string& name);

nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j);

PriorSpec build_prior(const ClusteringData& data, const RunConfig& cfg);

struct PipelineResult {
  PotentialOutcomeMatrix outcomes;
  ClusteringData data;
  ChainTrace trace;
  SimilarityMatrix similarity;
  RepresentativeClustering representative;
  ClusterProfileSummary profiles;
};

// Stage 1 imputation, mixture sampler, similarity, representative
// clustering and profile summaries.
PipelineResult run_pipeline(const Dataset& ds, const RunConfig& cfg, const WarningSink& warn = stderr_warning);

// Stage 2 and post-processing from already imputed outcomes.
PipelineResult run_clustering(const Dataset& ds, const PotentialOutcomeMatrix& outcomes, const RunConfig& cfg,
                              const WarningSink& warn = stderr_warning);

// Writes every artifact of `result` into `dir` and returns the list of
// file names written.
std::vector<std::string> write_pipeline_outputs(const PipelineResult& result, const std::filesystem::path& dir);

}  // namespace stratify
