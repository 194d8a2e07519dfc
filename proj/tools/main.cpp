// Command-line driver: simulation, the two-stage pipeline and its pieces.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stratify/artifacts.hpp"
#include "stratify/bart.hpp"
#include "stratify/data_model.hpp"
#include "stratify/errors.hpp"
#include "stratify/metrics.hpp"
#include "stratify/pipeline.hpp"
#include "stratify/postprocess.hpp"
#include "stratify/profile_regression.hpp"
#include "stratify/rng.hpp"
#include "stratify/simulation.hpp"

namespace fs = std::filesystem;
using namespace stratify;

namespace {

const char* kDefaultsFooter = R"(Prior and sampler defaults:
  stage 1: 200 trees, split probability 0.95 (1 + depth)^-2, leaf prior k = 2,
           sigma^2 prior nu = 3 at quantile 0.90, 100 cutpoints per covariate,
           minimum leaf size 5, grow/prune/change 0.5/0.25/0.25
  stage 2: alpha ~ Gamma(2, 1); NIW mean = column means, kappa0 = 0.01,
           dof = dimension + 2, scale = diag(column variances);
           Dirichlet concentration 1 per category; selection prior
           rho ~ 0.5 delta_0 + 0.5 Beta(0.5, 0.5) (off unless --variable-selection);
           20 initial clusters
  presets: sim = stage 1 6000/1000, stage 2 2000/1000 iterations/burn-in;
           application = stage 1 6000/1000, stage 2 40000/10000
  k_max:   min(10, floor(n / 10)), at least 2
Exit codes: 1 configuration error, 2 data error, 3 numerical failure.)";

// Optional overrides on top of a preset; only flags given on the command
// line are applied.
struct Overrides {
  std::string preset = "sim";
  std::uint64_t seed = 0;
  std::vector<std::function<void(RunConfig&)>> apply;
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> pending;

  template <typename T>
  void add(CLI::App* app, const std::string& name, T& storage, std::function<void(RunConfig&, const T&)> set,
           const std::string& help) {
    CLI::Option* opt = app->add_option(name, storage, help)->capture_default_str();
    pending.emplace_back(opt, [&storage, set](RunConfig& c) { set(c, storage); });
  }

  void flag(CLI::App* app, const std::string& name, bool& storage, std::function<void(RunConfig&)> set,
            const std::string& help) {
    CLI::Option* opt = app->add_flag(name, storage, help);
    pending.emplace_back(opt, [set](RunConfig& c) { set(c); });
  }

  RunConfig build() const {
    RunConfig cfg = preset_config(preset);
    cfg.seed = seed;
    for (const auto& [opt, set] : pending)
      if (opt->count() > 0) set(cfg);
    return cfg;
  }
};

struct FlagValues {
  std::size_t trees = 200;
  std::size_t bart_iterations = 6000;
  std::size_t bart_burnin = 1000;
  std::size_t iterations = 2000;
  std::size_t burnin = 1000;
  std::size_t initial_clusters = 20;
  double kappa0 = 0.01;
  double alpha_shape = 2.0;
  double alpha_rate = 1.0;
  double dirichlet_a = 1.0;
  double rho_atom = 0.5;
  std::size_t k_max = 0;
  bool standardize = false;
  bool variable_selection = false;
};

void add_seed_and_preset(CLI::App* app, Overrides& o) {
  app->add_option("--preset", o.preset, "Iteration preset: sim or application")
      ->capture_default_str()
      ->check(CLI::IsMember({"sim", "application"}));
  app->add_option("--seed", o.seed, "Seed for every random stream of the run")->capture_default_str();
}

void add_stage1_flags(CLI::App* app, Overrides& o, FlagValues& f, bool prefixed) {
  o.add<std::size_t>(app, "--trees", f.trees, [](RunConfig& c, const std::size_t& v) { c.stage1.trees = v; },
                     "Number of trees in stage 1");
  const std::string it = prefixed ? "--bart-iterations" : "--iterations";
  const std::string bi = prefixed ? "--bart-burnin" : "--burnin";
  o.add<std::size_t>(app, it, f.bart_iterations, [](RunConfig& c, const std::size_t& v) { c.stage1.iterations = v; },
                     "Stage-1 iterations");
  o.add<std::size_t>(app, bi, f.bart_burnin, [](RunConfig& c, const std::size_t& v) { c.stage1.burnin = v; },
                     "Stage-1 burn-in");
}

void add_stage2_flags(CLI::App* app, Overrides& o, FlagValues& f) {
  o.add<std::size_t>(app, "--iterations", f.iterations, [](RunConfig& c, const std::size_t& v) { c.stage2.iterations = v; },
                     "Mixture sampler iterations");
  o.add<std::size_t>(app, "--burnin", f.burnin, [](RunConfig& c, const std::size_t& v) { c.stage2.burnin = v; },
                     "Mixture sampler burn-in");
  o.add<std::size_t>(app, "--initial-clusters", f.initial_clusters,
                     [](RunConfig& c, const std::size_t& v) { c.stage2.initial_clusters = v; },
                     "Components in the random starting allocation");
  o.add<double>(app, "--kappa0", f.kappa0, [](RunConfig& c, const double& v) { c.kappa0 = v; },
                "NIW mean precision multiplier");
  o.add<double>(app, "--alpha-shape", f.alpha_shape, [](RunConfig& c, const double& v) { c.alpha_shape = v; },
                "Gamma prior shape for alpha");
  o.add<double>(app, "--alpha-rate", f.alpha_rate, [](RunConfig& c, const double& v) { c.alpha_rate = v; },
                "Gamma prior rate for alpha");
  o.add<double>(app, "--dirichlet-a", f.dirichlet_a, [](RunConfig& c, const double& v) { c.dirichlet_a = v; },
                "Dirichlet concentration per category");
  o.add<double>(app, "--rho-atom", f.rho_atom, [](RunConfig& c, const double& v) { c.rho_atom = v; },
                "Prior weight of rho_j = 0 under variable selection");
  o.flag(app, "--standardize", f.standardize, [](RunConfig& c) { c.standardize = true; },
         "Z-score continuous covariates before clustering");
  o.flag(app, "--variable-selection", f.variable_selection, [](RunConfig& c) { c.variable_selection = true; },
         "Enable covariate selection switches");
}

void add_postprocess_flags(CLI::App* app, Overrides& o, FlagValues& f) {
  o.add<std::size_t>(app, "--k-max", f.k_max, [](RunConfig& c, const std::size_t& v) { c.k_max = v; },
                     "Largest k tried by PAM (0 = min(10, n / 10))");
}

Dataset load_inputs(const std::string& data, const std::string& schema) {
  if (!fs::exists(schema)) throw DataError("schema file not found: " + schema);
  if (!fs::exists(data)) throw DataError("data file not found: " + data);
  return load_dataset(data, load_schema(schema));
}

nlohmann::json manifest_base(const std::string& command, const RunConfig& cfg) {
  return nlohmann::json{{"command", command},
                        {"version", kVersion},
                        {"config", config_to_json(cfg)},
                        {"seed_derivation", "stage1 = derive_seed(seed, 1); stage2 = derive_seed(seed, 2)"}};
}

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

WarningSink make_sink(bool quiet) {
  if (quiet) return [](const std::string&) {};
  return stderr_warning;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Treatment-response stratification: imputed potential outcomes clustered by profile regression"};
  app.footer(kDefaultsFooter);
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("--quiet", quiet, "Suppress warnings");

  std::optional<fs::path> diagnostics_dir;
  std::function<void()> action;

  // simulate
  ScenarioConfig sim_cfg;
  std::string sim_out;
  auto* sim = app.add_subcommand("simulate", "Generate scenario data sets with ground-truth labels");
  auto add_scenario_flags = [](CLI::App* sub, ScenarioConfig& s) {
    sub->add_option("--scenario", s.scenario, "Scenario 1 or 2")->capture_default_str()->check(CLI::IsMember({1, 2}));
    sub->add_option("--n", s.n, "Subjects per data set")->capture_default_str();
    sub->add_option("--sigma-y", s.sigma_y, "Outcome noise sd")->capture_default_str();
    sub->add_option("--sigma-x", s.sigma_x, "Continuous covariate noise sd")->capture_default_str();
    sub->add_option("--rho-x", s.rho_x, "Within-cluster corr(X1, X2), scenario 1")->capture_default_str();
    sub->add_option("--noise-covariates", s.noise_covariates, "Appended cluster-independent covariates")
        ->capture_default_str();
    sub->add_option("--replicates", s.replicates, "Number of data sets")->capture_default_str();
    sub->add_option("--seed", s.seed, "Base seed")->capture_default_str();
  };
  add_scenario_flags(sim, sim_cfg);
  sim->add_option("--out-dir", sim_out, "Output directory")->required();
  sim->callback([&]() {
    action = [&]() {
      sim_cfg.validate();
      for (std::size_t r = 0; r < sim_cfg.replicates; ++r) {
        const fs::path dir = sim_cfg.replicates == 1 ? fs::path(sim_out) : fs::path(sim_out) / ("replicate_" + std::to_string(r + 1));
        fs::create_directories(dir);
        const LabeledDataset d = generate(sim_cfg, replicate_data_seed(sim_cfg.seed, r));
        write_dataset(d.data, dir / "data.csv");
        save_schema(dataset_schema(d.data), dir / "schema.json");
        write_labels(d.labels, dir / "truth.csv");
        PotentialOutcomeMatrix truth;
        truth.values = d.true_outcomes;
        write_potential_outcomes(truth, dir / "true_outcomes.csv");
        nlohmann::json m{{"command", "simulate"},
                         {"version", kVersion},
                         {"scenario", sim_cfg.scenario},
                         {"n", sim_cfg.n},
                         {"sigma_y", sim_cfg.sigma_y},
                         {"sigma_x", sim_cfg.sigma_x},
                         {"rho_x", sim_cfg.rho_x},
                         {"noise_covariates", sim_cfg.noise_covariates},
                         {"seed", sim_cfg.seed},
                         {"replicate", r + 1},
                         {"data_seed", replicate_data_seed(sim_cfg.seed, r)},
                         {"suggested_pipeline_seed", replicate_run_seed(sim_cfg.seed, r)}};
        write_json(m, dir / "manifest.json");
      }
    };
  });

  // experiment
  ScenarioConfig exp_cfg;
  std::string exp_out;
  std::size_t exp_threads = 1;
  Overrides exp_o;
  FlagValues exp_f;
  auto* exp = app.add_subcommand("experiment", "Replicated simulation study with metric aggregation");
  add_scenario_flags(exp, exp_cfg);
  exp->add_option("--preset", exp_o.preset, "Iteration preset: sim or application")
      ->capture_default_str()
      ->check(CLI::IsMember({"sim", "application"}));
  add_stage1_flags(exp, exp_o, exp_f, true);
  add_stage2_flags(exp, exp_o, exp_f);
  add_postprocess_flags(exp, exp_o, exp_f);
  exp->add_option("--threads", exp_threads, "Replicates run concurrently")->capture_default_str();
  exp->add_option("--out-dir", exp_out, "Output directory")->required();
  exp->callback([&]() {
    action = [&]() {
      RunConfig run = exp_o.build();
      run.seed = exp_cfg.seed;
      exp_cfg.validate();
      run.validate();
      fs::create_directories(exp_out);
      diagnostics_dir = exp_out;
      const ExperimentResult result = run_experiment(exp_cfg, run, exp_threads);
      write_replicates(result, fs::path(exp_out) / "replicates.csv");
      write_json(result.aggregate(exp_cfg), fs::path(exp_out) / "aggregate.json");
      nlohmann::json m = manifest_base("experiment", run);
      m["seed_derivation"] =
          "replicate r: data = derive_seed(derive_seed(seed, r), 0), run = derive_seed(derive_seed(seed, r), 1); "
          "within a run: stage1 = derive_seed(run, 1), stage2 = derive_seed(run, 2)";
      m["scenario"] = {{"scenario", exp_cfg.scenario}, {"n", exp_cfg.n},           {"sigma_y", exp_cfg.sigma_y},
                       {"sigma_x", exp_cfg.sigma_x},   {"rho_x", exp_cfg.rho_x},   {"noise_covariates", exp_cfg.noise_covariates},
                       {"replicates", exp_cfg.replicates}, {"seed", exp_cfg.seed}};
      write_json(m, fs::path(exp_out) / "manifest.json");
      std::cout << result.aggregate(exp_cfg).dump(2) << '\n';
    };
  });

  // fit-stage1
  std::string data_path;
  std::string schema_path;
  std::string out_dir;
  Overrides s1_o;
  FlagValues s1_f;
  auto* fit = app.add_subcommand("fit-stage1", "Impute potential outcomes with the sum-of-trees model");
  fit->add_option("--data", data_path, "Data CSV")->required();
  fit->add_option("--schema", schema_path, "Schema JSON")->required();
  fit->add_option("--out-dir", out_dir, "Output directory")->required();
  add_seed_and_preset(fit, s1_o);
  add_stage1_flags(fit, s1_o, s1_f, false);
  fit->callback([&]() {
    action = [&]() {
      RunConfig cfg = s1_o.build();
      cfg.stage1.validate();
      const Dataset ds = load_inputs(data_path, schema_path);
      fs::create_directories(out_dir);
      diagnostics_dir = out_dir;
      TreeEnsembleConfig t = cfg.stage1;
      t.seed = derive_seed(cfg.seed, 1);
      const PotentialOutcomeMatrix po = fit_and_impute(ds, t, make_sink(quiet));
      write_potential_outcomes(po, fs::path(out_dir) / "potential_outcomes.csv");
      write_encoding_table(ds, fs::path(out_dir) / "encoding.csv");
      nlohmann::json m = manifest_base("fit-stage1", cfg);
      m["inputs"] = {{"data", absolute(data_path)}, {"schema", absolute(schema_path)}};
      m["files"] = {"potential_outcomes.csv", "encoding.csv"};
      write_json(m, fs::path(out_dir) / "manifest.json");
    };
  });

  // cluster
  std::string po_path;
  Overrides cl_o;
  FlagValues cl_f;
  auto* cl = app.add_subcommand("cluster", "Run the mixture sampler on imputed potential outcomes");
  cl->add_option("--data", data_path, "Data CSV")->required();
  cl->add_option("--schema", schema_path, "Schema JSON")->required();
  cl->add_option("--potential-outcomes", po_path, "potential_outcomes.csv from fit-stage1")->required();
  cl->add_option("--out-dir", out_dir, "Output directory")->required();
  add_seed_and_preset(cl, cl_o);
  add_stage2_flags(cl, cl_o, cl_f);
  cl->callback([&]() {
    action = [&]() {
      RunConfig cfg = cl_o.build();
      cfg.validate();
      const Dataset ds = load_inputs(data_path, schema_path);
      if (!fs::exists(po_path)) throw DataError("potential outcomes file not found: " + po_path);
      const PotentialOutcomeMatrix po = read_potential_outcomes(po_path);
      fs::create_directories(out_dir);
      diagnostics_dir = out_dir;
      const ClusteringData data = make_clustering_data(ds, po, cfg.standardize);
      ChainOptions opt = cfg.stage2;
      opt.seed = derive_seed(cfg.seed, 2);
      const ChainTrace trace = run_chain(data, build_prior(data, cfg), opt, make_sink(quiet));
      const fs::path dir(out_dir);
      write_trace(trace, data, dir / "trace.csv", dir / "cluster_params.csv");
      const SimilarityMatrix s = accumulate_similarity(trace);
      write_similarity(s, dir / "similarity.bin");
      nlohmann::json files = {"trace.csv", "cluster_params.csv", "similarity.bin"};
      if (trace.variable_selection) {
        write_selection(trace, data, dir / "selection.csv");
        files.push_back("selection.csv");
      }
      nlohmann::json m = manifest_base("cluster", cfg);
      m["inputs"] = {{"data", absolute(data_path)}, {"schema", absolute(schema_path)}, {"potential_outcomes", absolute(po_path)}};
      m["similarity_iterations"] = s.iterations;
      m["files"] = files;
      write_json(m, dir / "manifest.json");
    };
  });

  // postprocess
  std::string trace_dir;
  bool similarity_csv = false;
  Overrides pp_o;
  FlagValues pp_f;
  auto* pp = app.add_subcommand("postprocess", "Representative clustering and profile summaries from a trace");
  pp->add_option("--data", data_path, "Data CSV")->required();
  pp->add_option("--schema", schema_path, "Schema JSON")->required();
  pp->add_option("--potential-outcomes", po_path, "potential_outcomes.csv")->required();
  pp->add_option("--trace-dir", trace_dir, "Directory written by cluster")->required();
  pp->add_option("--out-dir", out_dir, "Output directory")->required();
  pp->add_flag("--similarity-csv", similarity_csv, "Also export the similarity matrix as CSV");
  add_postprocess_flags(pp, pp_o, pp_f);
  pp->callback([&]() {
    action = [&]() {
      RunConfig cfg = pp_o.build();
      const Dataset ds = load_inputs(data_path, schema_path);
      if (!fs::exists(po_path)) throw DataError("potential outcomes file not found: " + po_path);
      const fs::path tdir(trace_dir);
      if (!fs::exists(tdir / "trace.csv")) throw DataError("trace file not found: " + (tdir / "trace.csv").string());
      bool standardize = false;
      if (fs::exists(tdir / "manifest.json")) {
        const auto m = read_json(tdir / "manifest.json");
        if (m.contains("config")) standardize = config_from_json(m["config"]).standardize;
      }
      const ClusteringData data = make_clustering_data(ds, read_potential_outcomes(po_path), standardize);
      const ChainTrace trace = read_trace(tdir / "trace.csv", tdir / "cluster_params.csv", data);
      fs::create_directories(out_dir);
      diagnostics_dir = out_dir;
      const SimilarityMatrix s = accumulate_similarity(trace);
      const std::size_t k_max = cfg.k_max == 0 ? default_k_max(ds.size()) : cfg.k_max;
      const RepresentativeClustering rep = select_representative(s, k_max, make_sink(quiet));
      const fs::path dir(out_dir);
      write_labels(rep.labels, dir / "representative.csv");
      write_profiles(summarize_profiles(trace, data, rep.labels), dir / "profiles.csv");
      if (similarity_csv) write_similarity_csv(s, dir / "similarity.csv");
      nlohmann::json m{{"command", "postprocess"},
                       {"version", kVersion},
                       {"k_max", k_max},
                       {"chosen_k", rep.k},
                       {"silhouette", rep.silhouette},
                       {"silhouette_by_k", rep.silhouette_by_k},
                       {"similarity_iterations", s.iterations}};
      write_json(m, dir / "manifest.json");
    };
  });

  // evaluate
  std::string pred_path;
  std::string truth_path;
  std::string metrics_out;
  auto* ev = app.add_subcommand("evaluate", "Compare a clustering with ground-truth labels");
  ev->add_option("--pred", pred_path, "Predicted labels CSV (subject,cluster)")->required();
  ev->add_option("--truth", truth_path, "True labels CSV (subject,cluster)")->required();
  ev->add_option("--out", metrics_out, "Write metrics JSON here instead of stdout");
  ev->callback([&]() {
    action = [&]() {
      const std::vector<int> pred = read_labels(pred_path);
      const std::vector<int> truth = read_labels(truth_path);
      const nlohmann::json j = to_json(evaluate_clustering(truth, pred));
      if (metrics_out.empty()) std::cout << j.dump(2) << '\n';
      else write_json(j, metrics_out);
    };
  });

  // report
  std::string run_dir;
  auto* rp = app.add_subcommand("report", "Text summary of a pipeline output directory");
  rp->add_option("--run-dir", run_dir, "Directory written by pipeline")->required();
  rp->callback([&]() {
    action = [&]() {
      const fs::path dir(run_dir);
      const std::vector<int> labels = read_labels(dir / "representative.csv");
      std::map<int, std::size_t> sizes;
      for (int l : labels) ++sizes[l];
      std::cout << "subjects: " << labels.size() << "\nclusters: " << sizes.size() << '\n';
      for (const auto& [c, n] : sizes) std::cout << "  cluster " << c << ": " << n << " subjects\n";
      if (fs::exists(dir / "profiles.csv")) {
        const csv::Table t = csv::read(dir / "profiles.csv");
        std::cout << "parameters outside the cross-cluster average (90% interval):\n";
        for (const auto& row : t.rows)
          if (row[2] == "mean" && row[4] != "overlapping")
            std::cout << "  cluster " << row[0] << " " << row[1] << " " << row[4] << " (posterior mean " << row[3] << ")\n";
      }
      if (fs::exists(dir / "metrics.json")) std::cout << "metrics: " << read_json(dir / "metrics.json").dump() << '\n';
    };
  });

  // pipeline
  std::string manifest_path;
  std::string pipe_truth;
  Overrides pl_o;
  FlagValues pl_f;
  auto* pl = app.add_subcommand("pipeline", "Run both stages and post-processing end to end");
  pl->add_option("--data", data_path, "Data CSV");
  pl->add_option("--schema", schema_path, "Schema JSON");
  pl->add_option("--truth", pipe_truth, "Optional true labels; writes metrics.json");
  pl->add_option("--out-dir", out_dir, "Output directory")->required();
  pl->add_option("--manifest", manifest_path, "Rerun the configuration and inputs recorded in a manifest");
  add_seed_and_preset(pl, pl_o);
  add_stage1_flags(pl, pl_o, pl_f, true);
  add_stage2_flags(pl, pl_o, pl_f);
  add_postprocess_flags(pl, pl_o, pl_f);
  pl->callback([&]() {
    action = [&]() {
      RunConfig cfg;
      if (!manifest_path.empty()) {
        if (!fs::exists(manifest_path)) throw DataError("manifest not found: " + manifest_path);
        const auto m = read_json(manifest_path);
        if (!m.contains("config") || !m.contains("inputs")) throw ConfigError(manifest_path + ": not a pipeline manifest");
        cfg = config_from_json(m["config"]);
        data_path = m["inputs"].value("data", std::string());
        schema_path = m["inputs"].value("schema", std::string());
        pipe_truth = m["inputs"].value("truth", std::string());
      } else {
        if (data_path.empty() || schema_path.empty()) throw ConfigError("pipeline needs --data and --schema, or --manifest");
        cfg = pl_o.build();
      }
      cfg.validate();
      const Dataset ds = load_inputs(data_path, schema_path);
      fs::create_directories(out_dir);
      diagnostics_dir = out_dir;
      const PipelineResult result = run_pipeline(ds, cfg, make_sink(quiet));
      const fs::path dir(out_dir);
      std::vector<std::string> files = write_pipeline_outputs(result, dir);
      write_encoding_table(ds, dir / "encoding.csv");
      files.push_back("encoding.csv");
      nlohmann::json m = manifest_base("pipeline", cfg);
      m["inputs"] = {{"data", absolute(data_path)}, {"schema", absolute(schema_path)}};
      if (!pipe_truth.empty()) {
        const std::vector<int> truth = read_labels(pipe_truth);
        write_json(to_json(evaluate_clustering(truth, result.representative.labels)), dir / "metrics.json");
        files.push_back("metrics.json");
        m["inputs"]["truth"] = absolute(pipe_truth);
      }
      m["similarity_iterations"] = result.similarity.iterations;
      m["chosen_k"] = result.representative.k;
      m["silhouette"] = result.representative.silhouette;
      m["files"] = files;
      write_json(m, dir / "manifest.json");
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  auto write_diagnostics = [&](const std::string& what) {
    if (!diagnostics_dir) return;
    std::ofstream out(*diagnostics_dir / "diagnostics.txt");
    out << "numerical failure: " << what << '\n';
  };
  try {
    if (action) action();
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    write_diagnostics(e.what());
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
