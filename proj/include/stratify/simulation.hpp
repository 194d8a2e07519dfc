#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "stratify/data_model.hpp"
#include "stratify/pipeline.hpp"

namespace stratify {

struct ScenarioConfig {
  int scenario = 1;
  std::size_t n = 450;
  double sigma_y = 0.5;
  double sigma_x = 0.5;
  double rho_x = 0.0;  // within-cluster corr(X1, X2), scenario 1 only
  // Appended covariates whose distribution does not depend on the cluster:
  // cycling through N(0, 1), a fair binary and a uniform ternary variable.
  std::size_t noise_covariates = 0;
  std::size_t replicates = 10;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct LabeledDataset {
  Dataset data;
  std::vector<int> labels;       // generating cluster, 1-based
  Eigen::MatrixXd true_outcomes;  // n x K expected potential outcomes
};

// Three equal clusters, three continuous covariates, three arms.
LabeledDataset gen_scenario1(const ScenarioConfig& cfg, std::uint64_t seed);
// Four clusters of sizes n/9, 2n/9, 2n/9, 4n/9; two binary covariates, one
// ternary, one continuous; four arms.
LabeledDataset gen_scenario2(const ScenarioConfig& cfg, std::uint64_t seed);
LabeledDataset generate(const ScenarioConfig& cfg, std::uint64_t seed);

// Cluster-level truths of a scenario: covariate means (scenario 1) or
// E(X4) (scenario 2) per cluster, and expected potential outcomes.
std::vector<std::vector<double>> scenario_covariate_means(int scenario);
std::vector<std::vector<double>> scenario_outcome_means(int scenario);

// Seeds for replicate r: data from derive_seed(derive_seed(seed, r), 0),
// pipeline from derive_seed(derive_seed(seed, r), 1).
std::uint64_t replicate_data_seed(std::uint64_t seed, std::size_t replicate);
std::uint64_t replicate_run_seed(std::uint64_t seed, std::size_t replicate);

struct ReplicateResult {
  std::size_t replicate = 0;
  double ari = 0.0;
  double completeness = 0.0;
  double homogeneity = 0.0;
  std::size_t n_cluster = 0;
  std::vector<double> selection;  // mean rho per covariate when selecting
  // recovered[g][p]: size-weighted posterior median of parameter p for
  // true cluster g; parameters are the continuous covariate means followed
  // by the outcome means.
  std::vector<std::vector<double>> recovered;
  std::string error;  // non-empty when the replicate failed
};

// For every true cluster g, sum over representative clusters r of
// |r and g| / |g| times the posterior median of each mu_x / mu_y parameter.
std::vector<std::vector<double>> recovered_profile_means(const PipelineResult& result, std::span<const int> truth);

ReplicateResult run_replicate(const ScenarioConfig& cfg, std::size_t replicate, const RunConfig& run);

struct ExperimentResult {
  std::vector<ReplicateResult> replicates;

  nlohmann::json aggregate(const ScenarioConfig& cfg) const;
};

// Replicates are independent; `threads` > 1 runs them concurrently without
// changing any result.
ExperimentResult run_experiment(const ScenarioConfig& cfg, const RunConfig& run, std::size_t threads = 1);

// replicate,ari,completeness,homogeneity,n_cluster
void write_replicates(const ExperimentResult& result, const std::filesystem::path& path);

}  // namespace stratify
