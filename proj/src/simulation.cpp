#include "stratify/simulation.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include "stratify/artifacts.hpp"
#include "stratify/csv.hpp"
#include "stratify/metrics.hpp"
#include "stratify/rng.hpp"

namespace stratify {

void ScenarioConfig::validate() const {
  if (scenario != 1 && scenario != 2) throw ConfigError("scenario must be 1 or 2");
  if (!(sigma_y > 0.0) || !(sigma_x > 0.0)) throw ConfigError("noise standard deviations must be positive");
  if (!(rho_x >= 0.0 && rho_x < 1.0)) throw ConfigError("rho_x must lie in [0, 1)");
  if (scenario == 1 && (n == 0 || n % 3 != 0)) throw ConfigError("scenario 1 needs n divisible by 3, got " + std::to_string(n));
  if (scenario == 2 && (n == 0 || n % 9 != 0)) throw ConfigError("scenario 2 needs n divisible by 9, got " + std::to_string(n));
  if (replicates == 0) throw ConfigError("replicate count must be positive");
}

std::vector<std::vector<double>> scenario_covariate_means(int scenario) {
  if (scenario == 1) return {{2, 4, 5}, {4, 6, 1}, {6, 1, 3}};
  return {{2}, {4}, {8}, {6}};
}

std::vector<std::vector<double>> scenario_outcome_means(int scenario) {
  if (scenario == 1) return {{4, 4, 4}, {4, 7, 9}, {4, 6, 5}};
  return {{2, 2, 2, 2}, {2, 5, 4, 3}, {2, 4, 5, 6}, {3, 6, 8, 8}};
}

std::uint64_t replicate_data_seed(std::uint64_t seed, std::size_t replicate) {
  return derive_seed(derive_seed(seed, replicate), 0);
}

std::uint64_t replicate_run_seed(std::uint64_t seed, std::size_t replicate) {
  return derive_seed(derive_seed(seed, replicate), 1);
}

namespace {

struct Builder {
  std::vector<int> labels;
  std::vector<int> treatment;
  std::vector<double> outcome;
  std::vector<std::vector<double>> cont;  // per row
  std::vector<std::vector<int>> disc;     // per row, raw values 0..K-1
};

std::vector<int> shuffled_labels(const std::vector<std::size_t>& sizes, Rng& rng) {
  std::vector<int> labels;
  for (std::size_t g = 0; g < sizes.size(); ++g) labels.insert(labels.end(), sizes[g], static_cast<int>(g + 1));
  for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng.index(i)]);
  return labels;
}

int categorical(const std::vector<double>& probs, Rng& rng) {
  double u = rng.uniform();
  for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
    if (u < probs[k]) return static_cast<int>(k);
    u -= probs[k];
  }
  return static_cast<int>(probs.size()) - 1;
}

LabeledDataset assemble(const Builder& b, std::size_t arms, std::vector<std::string> cont_names,
                        std::vector<std::string> disc_names, std::vector<int> categories, int scenario) {
  LabeledDataset out;
  Dataset& ds = out.data;
  const std::size_t n = b.labels.size();
  ds.arms = arms;
  ds.treatment = b.treatment;
  ds.outcome = b.outcome;
  ds.continuous_names = std::move(cont_names);
  ds.discrete_names = std::move(disc_names);
  ds.categories = std::move(categories);
  ds.continuous.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(ds.continuous_names.size()));
  ds.discrete.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(ds.discrete_names.size()));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ds.continuous_names.size(); ++j)
      ds.continuous(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = b.cont[i][j];
    for (std::size_t j = 0; j < ds.discrete_names.size(); ++j)
      ds.discrete(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = b.disc[i][j] + 1;
  }
  for (std::size_t j = 0; j < ds.discrete_names.size(); ++j) {
    CategoryEncoding enc;
    enc.covariate = ds.discrete_names[j];
    for (int k = 0; k < ds.categories[j]; ++k) enc.labels.push_back(std::to_string(k));
    ds.encodings.push_back(std::move(enc));
  }
  ds.validate();
  out.labels = b.labels;
  const auto truth = scenario_outcome_means(scenario);
  out.true_outcomes.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(arms));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < arms; ++a)
      out.true_outcomes(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) =
          truth[static_cast<std::size_t>(b.labels[i] - 1)][a];
  return out;
}

void append_noise(const ScenarioConfig& cfg, Builder& b, std::vector<std::string>& cont_names,
                  std::vector<std::string>& disc_names, std::vector<int>& categories, Rng& rng) {
  for (std::size_t k = 0; k < cfg.noise_covariates; ++k) {
    const std::string name = "noise" + std::to_string(k + 1);
    switch (k % 3) {
      case 0:
        cont_names.push_back(name);
        for (auto& row : b.cont) row.push_back(rng.normal());
        break;
      case 1:
        disc_names.push_back(name);
        categories.push_back(2);
        for (auto& row : b.disc) row.push_back(static_cast<int>(rng.index(2)));
        break;
      default:
        disc_names.push_back(name);
        categories.push_back(3);
        for (auto& row : b.disc) row.push_back(static_cast<int>(rng.index(3)));
        break;
    }
  }
}

}  // namespace

LabeledDataset gen_scenario1(const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.scenario != 1) throw ConfigError("gen_scenario1 called with scenario " + std::to_string(cfg.scenario));
  Rng rng(seed);
  const auto xm = scenario_covariate_means(1);
  const auto ym = scenario_outcome_means(1);
  const std::size_t third = cfg.n / 3;
  Builder b;
  b.labels = shuffled_labels({third, third, third}, rng);
  const double rho = cfg.rho_x;
  const double rho_c = std::sqrt(1.0 - rho * rho);
  for (int g : b.labels) {
    const auto& m = xm[static_cast<std::size_t>(g - 1)];
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    const double z3 = rng.normal();
    b.cont.push_back({m[0] + cfg.sigma_x * z1, m[1] + cfg.sigma_x * (rho * z1 + rho_c * z2), m[2] + cfg.sigma_x * z3});
    b.disc.emplace_back();
    const int a = 1 + static_cast<int>(rng.index(3));
    b.treatment.push_back(a);
    b.outcome.push_back(ym[static_cast<std::size_t>(g - 1)][static_cast<std::size_t>(a - 1)] + cfg.sigma_y * rng.normal());
  }
  std::vector<std::string> cont_names{"X1", "X2", "X3"};
  std::vector<std::string> disc_names;
  std::vector<int> categories;
  append_noise(cfg, b, cont_names, disc_names, categories, rng);
  return assemble(b, 3, cont_names, disc_names, categories, 1);
}

LabeledDataset gen_scenario2(const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.scenario != 2) throw ConfigError("gen_scenario2 called with scenario " + std::to_string(cfg.scenario));
  Rng rng(seed);
  const std::vector<double> p_x1{0.2, 0.4, 0.6, 0.8};
  const std::vector<double> p_x2{0.4, 0.4, 0.6, 0.6};
  const std::vector<double> p_x3_0{0.1, 0.2, 0.3, 0.4};
  const std::vector<double> p_x3_1{0.15, 0.3, 0.15, 0.3};
  const auto xm = scenario_covariate_means(2);
  const auto ym = scenario_outcome_means(2);
  const std::size_t ninth = cfg.n / 9;
  Builder b;
  b.labels = shuffled_labels({ninth, 2 * ninth, 2 * ninth, 4 * ninth}, rng);
  for (int g : b.labels) {
    const auto c = static_cast<std::size_t>(g - 1);
    const int x1 = rng.bernoulli(p_x1[c]) ? 1 : 0;
    const int x2 = rng.bernoulli(p_x2[c]) ? 1 : 0;
    const int x3 = categorical({p_x3_0[c], p_x3_1[c], 1.0 - p_x3_0[c] - p_x3_1[c]}, rng);
    b.disc.push_back({x1, x2, x3});
    b.cont.push_back({xm[c][0] + cfg.sigma_x * rng.normal()});
    const int a = 1 + static_cast<int>(rng.index(4));
    b.treatment.push_back(a);
    b.outcome.push_back(ym[c][static_cast<std::size_t>(a - 1)] + cfg.sigma_y * rng.normal());
  }
  std::vector<std::string> cont_names{"X4"};
  std::vector<std::string> disc_names{"X1", "X2", "X3"};
  std::vector<int> categories{2, 2, 3};
  append_noise(cfg, b, cont_names, disc_names, categories, rng);
  return assemble(b, 4, cont_names, disc_names, categories, 2);
}

LabeledDataset generate(const ScenarioConfig& cfg, std::uint64_t seed) {
  return cfg.scenario == 1 ? gen_scenario1(cfg, seed) : gen_scenario2(cfg, seed);
}

std::vector<std::vector<double>> recovered_profile_means(const PipelineResult& result, std::span<const int> truth) {
  const auto& rep = result.representative.labels;
  if (truth.size() != rep.size()) throw DataError("recovered means: label length mismatch");
  int g_count = 0;
  for (int g : truth) g_count = std::max(g_count, g);
  std::vector<std::string> params;
  for (const auto& name : result.data.continuous_names) params.push_back("mu_x[" + name + "]");
  for (const auto& name : result.data.outcome_names) params.push_back("mu_y[" + name + "]");

  std::vector<std::vector<double>> out(static_cast<std::size_t>(g_count), std::vector<double>(params.size(), 0.0));
  std::vector<double> g_size(static_cast<std::size_t>(g_count), 0.0);
  for (int g : truth) g_size[static_cast<std::size_t>(g - 1)] += 1.0;
  std::map<std::pair<int, int>, double> overlap;
  for (std::size_t i = 0; i < truth.size(); ++i) overlap[{truth[i], rep[i]}] += 1.0;
  for (const auto& [key, count] : overlap) {
    const auto g = static_cast<std::size_t>(key.first - 1);
    const double w = count / g_size[g];
    for (std::size_t p = 0; p < params.size(); ++p) {
      const ProfileEntry* e = result.profiles.find(key.second, params[p]);
      if (e == nullptr) throw DataError("recovered means: missing profile entry " + params[p]);
      out[g][p] += w * e->quantiles[3];
    }
  }
  return out;
}

ReplicateResult run_replicate(const ScenarioConfig& cfg, std::size_t replicate, const RunConfig& run) {
  ReplicateResult r;
  r.replicate = replicate;
  try {
    const LabeledDataset sim = generate(cfg, replicate_data_seed(cfg.seed, replicate));
    RunConfig rc = run;
    rc.seed = replicate_run_seed(cfg.seed, replicate);
    const PipelineResult result = run_pipeline(sim.data, rc, [](const std::string&) {});
    const ClusteringMetrics m = evaluate_clustering(sim.labels, result.representative.labels);
    r.ari = m.ari;
    r.completeness = m.completeness;
    r.homogeneity = m.homogeneity;
    r.n_cluster = m.n_clusters_pred;
    if (result.trace.variable_selection) r.selection = mean_selection_probabilities(result.trace);
    r.recovered = recovered_profile_means(result, sim.labels);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

ExperimentResult run_experiment(const ScenarioConfig& cfg, const RunConfig& run, std::size_t threads) {
  cfg.validate();
  run.validate();
  ExperimentResult result;
  result.replicates.resize(cfg.replicates);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t r = next++; r < cfg.replicates; r = next++) result.replicates[r] = run_replicate(cfg, r, run);
  };
  const std::size_t count = std::max<std::size_t>(1, std::min(threads, cfg.replicates));
  if (count == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return result;
}

nlohmann::json ExperimentResult::aggregate(const ScenarioConfig& cfg) const {
  auto summarize = [&](auto get) {
    std::vector<double> v;
    for (const auto& r : replicates)
      if (r.error.empty()) v.push_back(get(r));
    double mean = 0.0;
    for (double x : v) mean += x;
    mean = v.empty() ? 0.0 : mean / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return nlohmann::json{{"mean", mean}, {"sd", sd}};
  };
  std::size_t failed = 0;
  nlohmann::json errors = nlohmann::json::array();
  for (const auto& r : replicates)
    if (!r.error.empty()) {
      ++failed;
      errors.push_back({{"replicate", r.replicate}, {"error", r.error}});
    }
  return nlohmann::json{{"scenario", cfg.scenario},
                        {"n", cfg.n},
                        {"sigma_y", cfg.sigma_y},
                        {"sigma_x", cfg.sigma_x},
                        {"rho_x", cfg.rho_x},
                        {"noise_covariates", cfg.noise_covariates},
                        {"replicates", replicates.size()},
                        {"failed", failed},
                        {"errors", errors},
                        {"ari", summarize([](const ReplicateResult& r) { return r.ari; })},
                        {"completeness", summarize([](const ReplicateResult& r) { return r.completeness; })},
                        {"homogeneity", summarize([](const ReplicateResult& r) { return r.homogeneity; })},
                        {"n_cluster", summarize([](const ReplicateResult& r) { return static_cast<double>(r.n_cluster); })}};
}

void write_replicates(const ExperimentResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_row(out, {"replicate", "ari", "completeness", "homogeneity", "n_cluster"});
  for (const auto& r : result.replicates) {
    if (!r.error.empty()) {
      csv::write_row(out, {std::to_string(r.replicate + 1), "NaN", "NaN", "NaN", "NaN"});
      continue;
    }
    csv::write_row(out, {std::to_string(r.replicate + 1), csv::format_double(r.ari), csv::format_double(r.completeness),
                         csv::format_double(r.homogeneity), std::to_string(r.n_cluster)});
  }
}

}  // namespace stratify
