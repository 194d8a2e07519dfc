#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "stratify/bart.hpp"
#include "support.hpp"

using namespace stratify;

namespace {

TreeEnsembleConfig quick_config(std::uint64_t seed = 1) {
  TreeEnsembleConfig cfg;
  cfg.trees = 50;
  cfg.iterations = 400;
  cfg.burnin = 100;
  cfg.seed = seed;
  return cfg;
}

// One continuous covariate x1 ~ U(-1, 1), one binary and one three-level
// covariate; the outcome is filled in by the caller.
Dataset base_dataset(std::mt19937_64& g, std::size_t n, std::size_t arms) {
  Dataset ds = testing::random_dataset(g, n, arms, 1, 1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> three(1, 3);
  for (std::size_t i = 0; i < n; ++i) ds.continuous(static_cast<Eigen::Index>(i), 0) = u(g);
  ds.discrete.conservativeResize(Eigen::NoChange, 2);
  for (std::size_t i = 0; i < n; ++i) ds.discrete(static_cast<Eigen::Index>(i), 1) = three(g);
  ds.discrete_names.push_back("t");
  ds.categories.push_back(3);
  ds.encodings.push_back({"t", {"1", "2", "3"}});
  return ds;
}

double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

}  // namespace

TEST_CASE("design matrix layout") {
  Dataset ds;
  ds.arms = 3;
  ds.treatment = {1, 3};
  ds.outcome = {0, 0};
  ds.continuous_names = {"x"};
  ds.continuous.resize(2, 1);
  ds.continuous << 0.5, -1.0;
  ds.discrete_names = {"b", "t"};
  ds.categories = {2, 3};
  ds.discrete.resize(2, 2);
  ds.discrete << 2, 3, 1, 1;
  const RowMatrix x = design_matrix(ds);
  RowMatrix expected(2, 7);
  expected << 0.5, 1, 0, 0, 1, 0, 0, -1.0, 0, 1, 0, 0, 0, 1;
  CHECK(x == expected);
  const RowMatrix forced = design_matrix(ds, 2);
  CHECK(forced(0, 5) == 1.0);
  CHECK(forced(1, 5) == 1.0);
  CHECK(forced(1, 6) == 0.0);
}

TEST_CASE("constant outcome is predicted exactly") {
  std::mt19937_64 g(1);
  Dataset ds = base_dataset(g, 40, 2);
  std::fill(ds.outcome.begin(), ds.outcome.end(), 5.0);
  std::vector<std::string> warnings;
  const auto draws = fit_sum_of_trees(ds, quick_config(), [&](const std::string& w) { warnings.push_back(w); });
  CHECK(warnings.size() == 1);
  const Eigen::VectorXd fit = predict_in_sample(draws, ds);
  CHECK((fit.array() - 5.0).abs().maxCoeff() <= 1e-6);
  const auto po = impute_potential_outcomes(draws, ds);
  CHECK((po.values.array() - 5.0).abs().maxCoeff() <= 1e-6);
}

TEST_CASE("the first prediction is the outcome mean") {
  std::mt19937_64 g(2);
  Dataset ds = base_dataset(g, 30, 2);
  std::normal_distribution<double> z;
  for (auto& y : ds.outcome) y = 3.0 + z(g);
  const SumOfTreesSampler sampler(ds, quick_config());
  const TreeEnsembleState state = sampler.snapshot();
  const double mean = std::accumulate(ds.outcome.begin(), ds.outcome.end(), 0.0) / 30.0;
  const RowMatrix x = design_matrix(ds);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    CHECK(state.predict({x.row(i).data(), static_cast<std::size_t>(x.cols())}) == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("same seed gives identical draws and predictions") {
  std::mt19937_64 g(3);
  Dataset ds = base_dataset(g, 60, 3);
  std::normal_distribution<double> z;
  for (std::size_t i = 0; i < ds.size(); ++i)
    ds.outcome[i] = ds.continuous(static_cast<Eigen::Index>(i), 0) + ds.treatment[i] + 0.3 * z(g);
  const auto a = fit_and_impute(ds, quick_config(9));
  const auto b = fit_and_impute(ds, quick_config(9));
  CHECK(a.values == b.values);
  const auto c = fit_and_impute(ds, quick_config(10));
  CHECK(a.values != c.values);
}

TEST_CASE("streaming imputation matches imputation from stored draws") {
  std::mt19937_64 g(4);
  Dataset ds = base_dataset(g, 50, 2);
  std::normal_distribution<double> z;
  for (std::size_t i = 0; i < ds.size(); ++i) ds.outcome[i] = 2.0 * ds.treatment[i] + z(g);
  const auto cfg = quick_config(5);
  const auto direct = impute_potential_outcomes(fit_sum_of_trees(ds, cfg), ds);
  const auto streamed = fit_and_impute(ds, cfg);
  CHECK((direct.values - streamed.values).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(streamed.arm_labels.size() == 2);
}

TEST_CASE("linear signal is recovered on held-out data") {
  std::mt19937_64 g(5);
  auto make = [&](std::size_t n) {
    Dataset ds = base_dataset(g, n, 2);
    std::normal_distribution<double> eps(0.0, 0.1);
    for (std::size_t i = 0; i < n; ++i) ds.outcome[i] = 2.0 * ds.continuous(static_cast<Eigen::Index>(i), 0) + eps(g);
    return ds;
  };
  const Dataset train = make(500);
  const Dataset test = make(500);
  TreeEnsembleConfig cfg;
  cfg.iterations = 1500;
  cfg.burnin = 500;
  cfg.seed = 11;
  const auto draws = fit_sum_of_trees(train, cfg);
  Eigen::VectorXd truth(500);
  for (Eigen::Index i = 0; i < 500; ++i) truth(i) = 2.0 * test.continuous(i, 0);
  const double err = rmse(predict_in_sample(draws, test), truth);
  INFO("held-out RMSE " << err);
  CHECK(err <= 0.2);
}

TEST_CASE("row order does not change the imputed outcomes") {
  std::mt19937_64 g(6);
  Dataset ds = base_dataset(g, 45, 2);
  std::normal_distribution<double> z;
  for (std::size_t i = 0; i < ds.size(); ++i) ds.outcome[i] = ds.continuous(static_cast<Eigen::Index>(i), 0) + z(g);
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), g);
  Dataset shuffled = ds;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const auto s = static_cast<Eigen::Index>(perm[i]);
    shuffled.treatment[i] = ds.treatment[perm[i]];
    shuffled.outcome[i] = ds.outcome[perm[i]];
    shuffled.continuous.row(r) = ds.continuous.row(s);
    shuffled.discrete.row(r) = ds.discrete.row(s);
  }
  const auto a = fit_and_impute(ds, quick_config(2));
  const auto b = fit_and_impute(shuffled, quick_config(2));
  for (std::size_t i = 0; i < ds.size(); ++i)
    CHECK(b.values.row(static_cast<Eigen::Index>(i)) == a.values.row(static_cast<Eigen::Index>(perm[i])));
}

TEST_CASE("forcing the observed arm reproduces the in-sample prediction") {
  std::mt19937_64 g(7);
  Dataset ds = base_dataset(g, 40, 3);
  std::normal_distribution<double> z;
  for (std::size_t i = 0; i < ds.size(); ++i) ds.outcome[i] = ds.treatment[i] * ds.continuous(static_cast<Eigen::Index>(i), 0) + z(g);
  const auto draws = fit_sum_of_trees(ds, quick_config(3));
  const Eigen::VectorXd fit = predict_in_sample(draws, ds);
  const auto po = impute_potential_outcomes(draws, ds);
  for (int a = 1; a <= 3; ++a) {
    const Eigen::VectorXd forced = predict_arm(draws, ds, a);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.treatment[i] != a) continue;
      CHECK(forced(static_cast<Eigen::Index>(i)) == fit(static_cast<Eigen::Index>(i)));
      CHECK(po.values(static_cast<Eigen::Index>(i), a - 1) == fit(static_cast<Eigen::Index>(i)));
    }
  }
  CHECK_THROWS_AS(predict_arm(draws, ds, 4), ConfigError);
  CHECK_THROWS_AS(predict_arm(draws, ds, 0), ConfigError);
}

TEST_CASE("every arm gets a column even when one is rare") {
  std::mt19937_64 g(8);
  Dataset ds = base_dataset(g, 30, 3);
  for (auto& t : ds.treatment) t = t == 3 ? 1 : t;
  ds.treatment[0] = 3;
  std::normal_distribution<double> z;
  for (auto& y : ds.outcome) y = z(g);
  const auto po = fit_and_impute(ds, quick_config());
  CHECK(po.arms() == 3);
  CHECK(po.subjects() == 30);
  CHECK(po.values.allFinite());
}

TEST_CASE("posterior draws are well formed") {
  std::mt19937_64 g(9);
  Dataset ds = base_dataset(g, 80, 2);
  std::normal_distribution<double> z;
  for (std::size_t i = 0; i < ds.size(); ++i) ds.outcome[i] = std::sin(3.0 * ds.continuous(static_cast<Eigen::Index>(i), 0)) + 0.2 * z(g);
  const auto cfg = quick_config(4);
  const auto draws = fit_sum_of_trees(ds, cfg);
  CHECK(draws.size() == cfg.iterations - cfg.burnin);
  const RowMatrix x = design_matrix(ds);
  const Eigen::RowVectorXd lo = x.colwise().minCoeff();
  const Eigen::RowVectorXd hi = x.colwise().maxCoeff();
  for (const auto& draw : draws) {
    CHECK(draw.sigma2 > 0.0);
    CHECK(draw.trees.size() == cfg.trees);
    for (const auto& tree : draw.trees) {
      // Every node is reached exactly once from the root.
      std::vector<int> seen(tree.nodes.size(), 0);
      std::vector<int> stack{0};
      while (!stack.empty()) {
        const int node = stack.back();
        stack.pop_back();
        ++seen[static_cast<std::size_t>(node)];
        const TreeNode& nd = tree.nodes[static_cast<std::size_t>(node)];
        if (nd.is_leaf()) continue;
        CHECK(nd.cut >= lo(nd.var));
        CHECK(nd.cut <= hi(nd.var));
        stack.push_back(nd.left);
        stack.push_back(nd.right);
      }
      CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
    }
  }
}

TEST_CASE("no treatment effect gives matching column means") {
  std::mt19937_64 g(10);
  const int reps = 10;
  std::vector<double> diffs;
  for (int r = 0; r < reps; ++r) {
    Dataset ds = base_dataset(g, 150, 2);
    std::normal_distribution<double> z;
    for (std::size_t i = 0; i < ds.size(); ++i) ds.outcome[i] = ds.continuous(static_cast<Eigen::Index>(i), 0) + 0.5 * z(g);
    const auto po = fit_and_impute(ds, quick_config(100 + static_cast<std::uint64_t>(r)));
    diffs.push_back(po.values.col(1).mean() - po.values.col(0).mean());
  }
  const double mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / reps;
  double ss = 0.0;
  for (double d : diffs) ss += (d - mean) * (d - mean);
  const double se = std::sqrt(ss / (reps - 1) / reps);
  INFO("mean arm difference " << mean << ", se " << se);
  CHECK(std::abs(mean) <= 2.0 * se);
}

TEST_CASE("stage-one configuration and input errors") {
  TreeEnsembleConfig cfg;
  cfg.trees = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.base = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.burnin = cfg.iterations;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.sigma_quantile = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  std::mt19937_64 g(11);
  const Dataset small = base_dataset(g, 9, 2);
  CHECK_THROWS_AS(fit_sum_of_trees(small, quick_config()), DataError);
}
