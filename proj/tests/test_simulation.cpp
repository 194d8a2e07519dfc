#include <doctest.h>

#include <cmath>
#include <limits>

#include "stratify/simulation.hpp"
#include "support.hpp"

using namespace stratify;

namespace {

ScenarioConfig scenario(int id, std::size_t n, double sigma = 0.5) {
  ScenarioConfig cfg;
  cfg.scenario = id;
  cfg.n = n;
  cfg.sigma_x = sigma;
  cfg.sigma_y = sigma;
  return cfg;
}

// Generating values, written out independently of the generator.
const double kMeans1[3][3] = {{2, 4, 5}, {4, 6, 1}, {6, 1, 3}};
const double kOutcomes1[3][3] = {{4, 4, 4}, {4, 7, 9}, {4, 6, 5}};
const double kX4[4] = {2, 4, 8, 6};
const double kOutcomes2[4][4] = {{2, 2, 2, 2}, {2, 5, 4, 3}, {2, 4, 5, 6}, {3, 6, 8, 8}};
const double kPX1[4] = {0.2, 0.4, 0.6, 0.8};
const double kPX2[4] = {0.4, 0.4, 0.6, 0.6};
const double kPX3[4][3] = {{0.1, 0.15, 0.75}, {0.2, 0.3, 0.5}, {0.3, 0.15, 0.55}, {0.4, 0.3, 0.3}};

std::vector<std::size_t> cluster_sizes(const LabeledDataset& sim, int clusters) {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(clusters), 0);
  for (int g : sim.labels) ++sizes[static_cast<std::size_t>(g - 1)];
  return sizes;
}

void check_frequency(std::size_t hits, std::size_t total, double p) {
  const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(total));
  CHECK(std::abs(static_cast<double>(hits) / static_cast<double>(total) - p) <= 3.0 * se);
}

}  // namespace

TEST_CASE("scenario tables") {
  const auto xm = scenario_covariate_means(1);
  const auto ym = scenario_outcome_means(1);
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(xm[g][j] == kMeans1[g][j]);
      CHECK(ym[g][j] == kOutcomes1[g][j]);
    }
  const auto x2 = scenario_covariate_means(2);
  const auto y2 = scenario_outcome_means(2);
  for (std::size_t g = 0; g < 4; ++g) {
    CHECK(x2[g][0] == kX4[g]);
    for (std::size_t a = 0; a < 4; ++a) CHECK(y2[g][a] == kOutcomes2[g][a]);
  }
}

TEST_CASE("scenario 1 cluster means, sizes and outcome means") {
  const std::size_t n = 30000;
  const LabeledDataset sim = gen_scenario1(scenario(1, n), 3);
  CHECK(sim.data.size() == n);
  CHECK(sim.data.arms == 3);
  CHECK(sim.data.p1() == 3);
  CHECK(cluster_sizes(sim, 3) == std::vector<std::size_t>{10000, 10000, 10000});

  double sum_x[3][3] = {};
  double sum_y[3][3] = {};
  std::size_t count_y[3][3] = {};
  std::size_t arms[3] = {};
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = static_cast<std::size_t>(sim.labels[i] - 1);
    const auto a = static_cast<std::size_t>(sim.data.treatment[i] - 1);
    for (std::size_t j = 0; j < 3; ++j) sum_x[g][j] += sim.data.continuous(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    sum_y[g][a] += sim.data.outcome[i];
    ++count_y[g][a];
    ++arms[a];
    for (std::size_t b = 0; b < 3; ++b) CHECK(sim.true_outcomes(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) == kOutcomes1[g][b]);
  }
  for (std::size_t g = 0; g < 3; ++g) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(sum_x[g][j] / 10000.0 - kMeans1[g][j]) <= 4.0 * 0.5 / 100.0);
    for (std::size_t a = 0; a < 3; ++a) {
      const double m = sum_y[g][a] / static_cast<double>(count_y[g][a]);
      CHECK(std::abs(m - kOutcomes1[g][a]) <= 4.0 * 0.5 / std::sqrt(static_cast<double>(count_y[g][a])));
    }
  }
  for (std::size_t a = 0; a < 3; ++a) check_frequency(arms[a], n, 1.0 / 3.0);
}

TEST_CASE("scenario 1 within-cluster correlation") {
  for (double rho : {0.0, 0.3, 0.6, 0.9}) {
    CAPTURE(rho);
    ScenarioConfig cfg = scenario(1, 100002);
    cfg.rho_x = rho;
    const LabeledDataset sim = gen_scenario1(cfg, 8);
    for (int g = 1; g <= 3; ++g) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0, m = 0;
      for (std::size_t i = 0; i < sim.data.size(); ++i) {
        if (sim.labels[i] != g) continue;
        const double x = sim.data.continuous(static_cast<Eigen::Index>(i), 0);
        const double y = sim.data.continuous(static_cast<Eigen::Index>(i), 1);
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
        m += 1;
      }
      const double cov = sxy / m - sx / m * sy / m;
      const double r = cov / std::sqrt((sxx / m - sx / m * sx / m) * (syy / m - sy / m * sy / m));
      CHECK(std::abs(r - rho) <= 0.02);
    }
  }
}

TEST_CASE("scenario 1 noise shrinks with sigma_x") {
  const LabeledDataset sim = gen_scenario1(scenario(1, 300, 1e-9), 2);
  for (std::size_t i = 0; i < sim.data.size(); ++i) {
    const auto g = static_cast<std::size_t>(sim.labels[i] - 1);
    CHECK(std::abs(sim.data.continuous(static_cast<Eigen::Index>(i), 2) - kMeans1[g][2]) <= 1e-7);
  }
}

TEST_CASE("scenario 2 cluster sizes") {
  CHECK(cluster_sizes(gen_scenario2(scenario(2, 900), 1), 4) == std::vector<std::size_t>{100, 200, 200, 400});
  CHECK(cluster_sizes(gen_scenario2(scenario(2, 450), 1), 4) == std::vector<std::size_t>{50, 100, 100, 200});
}

TEST_CASE("scenario 2 category frequencies") {
  const std::size_t n = 90000;
  const LabeledDataset sim = gen_scenario2(scenario(2, n), 4);
  const Dataset& ds = sim.data;
  REQUIRE(ds.discrete_names == std::vector<std::string>{"X1", "X2", "X3"});
  REQUIRE(ds.continuous_names == std::vector<std::string>{"X4"});
  CHECK(ds.encodings[0].labels == std::vector<std::string>{"0", "1"});
  CHECK(ds.encodings[2].labels == std::vector<std::string>{"0", "1", "2"});
  std::size_t size[4] = {};
  std::size_t x1[4] = {}, x2[4] = {}, x3[4][3] = {};
  double x4[4] = {};
  std::size_t arms[4] = {};
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = static_cast<std::size_t>(sim.labels[i] - 1);
    const auto r = static_cast<Eigen::Index>(i);
    ++size[g];
    x1[g] += ds.discrete(r, 0) == 2 ? 1 : 0;
    x2[g] += ds.discrete(r, 1) == 2 ? 1 : 0;
    ++x3[g][static_cast<std::size_t>(ds.discrete(r, 2) - 1)];
    x4[g] += ds.continuous(r, 0);
    ++arms[static_cast<std::size_t>(ds.treatment[i] - 1)];
  }
  for (std::size_t g = 0; g < 4; ++g) {
    CAPTURE(g);
    check_frequency(x1[g], size[g], kPX1[g]);
    check_frequency(x2[g], size[g], kPX2[g]);
    for (std::size_t k = 0; k < 3; ++k) check_frequency(x3[g][k], size[g], kPX3[g][k]);
    CHECK(std::abs(x4[g] / static_cast<double>(size[g]) - kX4[g]) <= 4.0 * 0.5 / std::sqrt(static_cast<double>(size[g])));
  }
  for (std::size_t a = 0; a < 4; ++a) check_frequency(arms[a], n, 0.25);
}

TEST_CASE("noise covariates do not depend on the cluster") {
  ScenarioConfig cfg = scenario(2, 45000);
  cfg.noise_covariates = 3;
  const LabeledDataset sim = gen_scenario2(cfg, 6);
  const Dataset& ds = sim.data;
  CHECK(ds.continuous_names == std::vector<std::string>{"X4", "noise1"});
  CHECK(ds.discrete_names == std::vector<std::string>{"X1", "X2", "X3", "noise2", "noise3"});
  CHECK(ds.categories == std::vector<int>{2, 2, 3, 2, 3});
  std::size_t size[4] = {};
  double cont[4] = {};
  std::size_t bin[4] = {};
  std::size_t ter[4][3] = {};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto g = static_cast<std::size_t>(sim.labels[i] - 1);
    const auto r = static_cast<Eigen::Index>(i);
    ++size[g];
    cont[g] += ds.continuous(r, 1);
    bin[g] += ds.discrete(r, 3) == 2 ? 1 : 0;
    ++ter[g][static_cast<std::size_t>(ds.discrete(r, 4) - 1)];
  }
  for (std::size_t g = 0; g < 4; ++g) {
    CHECK(std::abs(cont[g] / static_cast<double>(size[g])) <= 4.0 / std::sqrt(static_cast<double>(size[g])));
    check_frequency(bin[g], size[g], 0.5);
    for (std::size_t k = 0; k < 3; ++k) check_frequency(ter[g][k], size[g], 1.0 / 3.0);
  }
}

TEST_CASE("nearest centroid recovers the labels at low noise") {
  const LabeledDataset s1 = gen_scenario1(scenario(1, 3000, 0.2), 10);
  std::size_t errors = 0;
  for (std::size_t i = 0; i < s1.data.size(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int g = 0; g < 3; ++g) {
      double d = 0.0;
      for (int j = 0; j < 3; ++j) d += std::pow(s1.data.continuous(static_cast<Eigen::Index>(i), j) - kMeans1[g][j], 2);
      if (d < best_d) {
        best_d = d;
        best = g + 1;
      }
    }
    errors += best != s1.labels[i] ? 1 : 0;
  }
  CHECK(static_cast<double>(errors) / 3000.0 < 0.01);

  const LabeledDataset s2 = gen_scenario2(scenario(2, 3600, 0.2), 10);
  errors = 0;
  for (std::size_t i = 0; i < s2.data.size(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int g = 0; g < 4; ++g) {
      const double d = std::abs(s2.data.continuous(static_cast<Eigen::Index>(i), 0) - kX4[g]);
      if (d < best_d) {
        best_d = d;
        best = g + 1;
      }
    }
    errors += best != s2.labels[i] ? 1 : 0;
  }
  CHECK(static_cast<double>(errors) / 3600.0 < 0.01);
}

TEST_CASE("generators are seed deterministic") {
  for (int id : {1, 2}) {
    const ScenarioConfig cfg = scenario(id, 90);
    const LabeledDataset a = generate(cfg, 77);
    const LabeledDataset b = generate(cfg, 77);
    const LabeledDataset c = generate(cfg, 78);
    CHECK(a.data == b.data);
    CHECK(a.labels == b.labels);
    CHECK_FALSE(a.data == c.data);
  }
  std::vector<std::uint64_t> seeds;
  for (std::size_t r = 0; r < 20; ++r) {
    seeds.push_back(replicate_data_seed(5, r));
    seeds.push_back(replicate_run_seed(5, r));
  }
  std::sort(seeds.begin(), seeds.end());
  CHECK(std::adjacent_find(seeds.begin(), seeds.end()) == seeds.end());
  CHECK(replicate_data_seed(5, 3) == replicate_data_seed(5, 3));
}

TEST_CASE("scenario configuration errors") {
  CHECK_THROWS_AS(scenario(1, 100).validate(), ConfigError);
  CHECK_THROWS_AS(scenario(2, 450 + 3).validate(), ConfigError);
  CHECK_THROWS_AS(scenario(3, 90).validate(), ConfigError);
  CHECK_THROWS_AS(scenario(1, 90, 0.0).validate(), ConfigError);
  ScenarioConfig cfg = scenario(1, 90);
  cfg.rho_x = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.rho_x = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(gen_scenario1(scenario(1, 100), 1), ConfigError);
}

TEST_CASE("experiment results do not depend on the thread count") {
  ScenarioConfig cfg = scenario(1, 60);
  cfg.replicates = 3;
  cfg.seed = 12;
  RunConfig run;
  run.stage1.trees = 20;
  run.stage1.iterations = 120;
  run.stage1.burnin = 20;
  run.stage2.iterations = 120;
  run.stage2.burnin = 20;
  const ExperimentResult serial = run_experiment(cfg, run, 1);
  const ExperimentResult parallel = run_experiment(cfg, run, 3);
  REQUIRE(serial.replicates.size() == 3);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(serial.replicates[r].error.empty());
    CHECK(serial.replicates[r].ari == parallel.replicates[r].ari);
    CHECK(serial.replicates[r].n_cluster == parallel.replicates[r].n_cluster);
    CHECK(serial.replicates[r].recovered == parallel.replicates[r].recovered);
    CHECK(serial.replicates[r].recovered.size() == 3);
  }
  CHECK(serial.aggregate(cfg) == parallel.aggregate(cfg));

  testing::TempDir dir;
  write_replicates(serial, dir / "replicates.csv");
  const std::string text = testing::read_text(dir / "replicates.csv");
  CHECK(text.rfind("replicate,ari,completeness,homogeneity,n_cluster\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
}

TEST_CASE("aggregate reports mean and sample sd and skips failures") {
  ExperimentResult res;
  for (int r = 0; r < 3; ++r) {
    ReplicateResult rr;
    rr.replicate = static_cast<std::size_t>(r);
    rr.ari = 0.5 + 0.25 * r;
    rr.n_cluster = 3 + static_cast<std::size_t>(r);
    res.replicates.push_back(rr);
  }
  ReplicateResult failed;
  failed.replicate = 3;
  failed.error = "boom";
  res.replicates.push_back(failed);
  const auto j = res.aggregate(scenario(1, 450));
  CHECK(j.at("ari").at("mean").get<double>() == doctest::Approx(0.75));
  CHECK(j.at("ari").at("sd").get<double>() == doctest::Approx(0.25));
  CHECK(j.at("n_cluster").at("mean").get<double>() == doctest::Approx(4.0));
  CHECK(j.at("failed") == 1);
  CHECK(j.at("errors").size() == 1);
}
