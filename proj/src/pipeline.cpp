#include "stratify/pipeline.hpp"

#include <string>

#include "stratify/artifacts.hpp"
#include "stratify/rng.hpp"

namespace stratify {

void RunConfig::validate() const {
  stage1.validate();
  stage2.validate();
  if (!(kappa0 > 0.0)) throw ConfigError("kappa0 must be positive");
  if (!(dirichlet_a > 0.0)) throw ConfigError("Dirichlet concentration must be positive");
  if (!(alpha_shape > 0.0 && alpha_rate > 0.0)) throw ConfigError("alpha prior shape and rate must be positive");
  if (!(rho_atom >= 0.0 && rho_atom < 1.0)) throw ConfigError("rho atom weight must lie in [0, 1)");
  if (k_max == 1) throw ConfigError("k_max must be at least 2 (or 0 for the default)");
}

RunConfig preset_config(const std::string& name) {
  RunConfig cfg;
  cfg.preset = name;
  cfg.stage1.iterations = 6000;
  cfg.stage1.burnin = 1000;
  if (name == "sim") {
    cfg.stage2.iterations = 2000;
    cfg.stage2.burnin = 1000;
  } else if (name == "application") {
    cfg.stage2.iterations = 40000;
    cfg.stage2.burnin = 10000;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected sim or application)");
  }
  return cfg;
}

nlohmann::json config_to_json(const RunConfig& cfg) {
  const auto& s1 = cfg.stage1;
  const auto& s2 = cfg.stage2;
  return nlohmann::json{
      {"preset", cfg.preset},
      {"seed", cfg.seed},
      {"stage1",
       {{"trees", s1.trees},
        {"base", s1.base},
        {"power", s1.power},
        {"k", s1.k},
        {"sigma_dof", s1.sigma_dof},
        {"sigma_quantile", s1.sigma_quantile},
        {"iterations", s1.iterations},
        {"burnin", s1.burnin},
        {"max_cutpoints", s1.max_cutpoints},
        {"min_leaf_size", s1.min_leaf_size}}},
      {"stage2",
       {{"iterations", s2.iterations},
        {"burnin", s2.burnin},
        {"initial_clusters", s2.initial_clusters},
        {"kappa0", cfg.kappa0},
        {"dirichlet_a", cfg.dirichlet_a},
        {"alpha_shape", cfg.alpha_shape},
        {"alpha_rate", cfg.alpha_rate},
        {"variable_selection", cfg.variable_selection},
        {"rho_atom", cfg.rho_atom},
        {"standardize", cfg.standardize}}},
      {"k_max", cfg.k_max}};
}

RunConfig config_from_json(const nlohmann::json& j) {
  try {
    RunConfig cfg = preset_config(j.value("preset", std::string("sim")));
    cfg.seed = j.value("seed", cfg.seed);
    cfg.k_max = j.value("k_max", cfg.k_max);
    if (j.contains("stage1")) {
      const auto& s = j.at("stage1");
      auto& c = cfg.stage1;
      c.trees = s.value("trees", c.trees);
      c.base = s.value("base", c.base);
      c.power = s.value("power", c.power);
      c.k = s.value("k", c.k);
      c.sigma_dof = s.value("sigma_dof", c.sigma_dof);
      c.sigma_quantile = s.value("sigma_quantile", c.sigma_quantile);
      c.iterations = s.value("iterations", c.iterations);
      c.burnin = s.value("burnin", c.burnin);
      c.max_cutpoints = s.value("max_cutpoints", c.max_cutpoints);
      c.min_leaf_size = s.value("min_leaf_size", c.min_leaf_size);
    }
    if (j.contains("stage2")) {
      const auto& s = j.at("stage2");
      cfg.stage2.iterations = s.value("iterations", cfg.stage2.iterations);
      cfg.stage2.burnin = s.value("burnin", cfg.stage2.burnin);
      cfg.stage2.initial_clusters = s.value("initial_clusters", cfg.stage2.initial_clusters);
      cfg.kappa0 = s.value("kappa0", cfg.kappa0);
      cfg.dirichlet_a = s.value("dirichlet_a", cfg.dirichlet_a);
      cfg.alpha_shape = s.value("alpha_shape", cfg.alpha_shape);
      cfg.alpha_rate = s.value("alpha_rate", cfg.alpha_rate);
      cfg.variable_selection = s.value("variable_selection", cfg.variable_selection);
      cfg.rho_atom = s.value("rho_atom", cfg.rho_atom);
      cfg.standardize = s.value("standardize", cfg.standardize);
    }
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid run configuration: ") + e.what());
  }
}

PriorSpec build_prior(const ClusteringData& data, const RunConfig& cfg) {
  PriorSpec prior = default_prior(data, cfg.kappa0, cfg.dirichlet_a);
  prior.alpha_shape = cfg.alpha_shape;
  prior.alpha_rate = cfg.alpha_rate;
  prior.variable_selection = cfg.variable_selection;
  prior.rho_atom = cfg.rho_atom;
  return prior;
}

PipelineResult run_clustering(const Dataset& ds, const PotentialOutcomeMatrix& outcomes, const RunConfig& cfg,
                              const WarningSink& warn) {
  cfg.validate();
  PipelineResult result;
  result.outcomes = outcomes;
  result.data = make_clustering_data(ds, outcomes, cfg.standardize);
  const PriorSpec prior = build_prior(result.data, cfg);
  ChainOptions options = cfg.stage2;
  options.seed = derive_seed(cfg.seed, 2);
  result.trace = run_chain(result.data, prior, options, warn);
  result.similarity = accumulate_similarity(result.trace);
  const std::size_t k_max = cfg.k_max == 0 ? default_k_max(ds.size()) : cfg.k_max;
  result.representative = select_representative(result.similarity, k_max, warn);
  result.profiles = summarize_profiles(result.trace, result.data, result.representative.labels);
  return result;
}

PipelineResult run_pipeline(const Dataset& ds, const RunConfig& cfg, const WarningSink& warn) {
  cfg.validate();
  TreeEnsembleConfig stage1 = cfg.stage1;
  stage1.seed = derive_seed(cfg.seed, 1);
  const PotentialOutcomeMatrix outcomes = fit_and_impute(ds, stage1, warn);
  return run_clustering(ds, outcomes, cfg, warn);
}

std::vector<std::string> write_pipeline_outputs(const PipelineResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files{"potential_outcomes.csv", "trace.csv", "cluster_params.csv", "similarity.bin",
                                 "representative.csv", "profiles.csv"};
  write_potential_outcomes(result.outcomes, dir / "potential_outcomes.csv");
  write_trace(result.trace, result.data, dir / "trace.csv", dir / "cluster_params.csv");
  write_similarity(result.similarity, dir / "similarity.bin");
  write_labels(result.representative.labels, dir / "representative.csv");
  write_profiles(result.profiles, dir / "profiles.csv");
  if (result.trace.variable_selection) {
    write_selection(result.trace, result.data, dir / "selection.csv");
    files.push_back("selection.csv");
  }
  return files;
}

}  // namespace stratify
