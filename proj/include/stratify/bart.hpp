#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stratify/data_model.hpp"
#include "stratify/errors.hpp"

namespace stratify {

// Sum-of-trees regression settings. Defaults are the usual package
// conventions: 200 trees, split prior 0.95 (1 + depth)^-2, leaf shrinkage
// k = 2, sigma^2 prior with 3 degrees of freedom at the 0.90 quantile.
struct TreeEnsembleConfig {
  std::size_t trees = 200;
  double base = 0.95;
  double power = 2.0;
  double k = 2.0;
  double sigma_dof = 3.0;
  double sigma_quantile = 0.90;
  std::size_t iterations = 6000;
  std::size_t burnin = 1000;
  std::uint64_t seed = 0;

  std::size_t max_cutpoints = 100;
  std::size_t min_leaf_size = 5;
  double p_grow = 0.5;
  double p_prune = 0.25;
  double p_change = 0.25;

  void validate() const;  // throws ConfigError
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Numeric regression design for stage 1: continuous covariates, discrete
// covariates (binary ones as a single 0/1 column, larger ones as one
// indicator per category), then indicators for arms 2..K. With
// `forced_arm`, every row gets that arm instead of the observed one.
RowMatrix design_matrix(const Dataset& ds, std::optional<int> forced_arm = std::nullopt);

struct TreeNode {
  int left = -1;  // -1 for leaves
  int right = -1;
  int var = -1;
  double cut = 0.0;  // rows with x[var] <= cut go left
  double value = 0.0;

  bool is_leaf() const { return left < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> row) const;
  std::size_t leaf_count() const;
};

// One posterior draw. Leaf values are on the internal (centred, range-
// scaled) outcome scale; predict() maps back to outcome units.
struct TreeEnsembleState {
  std::vector<DecisionTree> trees;
  double sigma2 = 1.0;  // residual variance, outcome units
  double offset = 0.0;
  double scale = 1.0;

  double predict(std::span<const double> row) const;
};

// n x K posterior-mean predictions with treatment forced to each arm.
struct PotentialOutcomeMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> arm_labels;

  std::size_t subjects() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t arms() const { return static_cast<std::size_t>(values.cols()); }
};

// Bayesian backfitting sampler. Rows are put into a canonical order before
// anything else happens, so results do not depend on the input row order.
class SumOfTreesSampler {
 public:
  SumOfTreesSampler(const Dataset& ds, const TreeEnsembleConfig& cfg, WarningSink warn = stderr_warning);
  ~SumOfTreesSampler();
  SumOfTreesSampler(SumOfTreesSampler&&) noexcept;
  SumOfTreesSampler& operator=(SumOfTreesSampler&&) noexcept;

  // One sweep over all trees followed by a sigma^2 draw.
  void step();
  std::size_t iteration() const;

  TreeEnsembleState snapshot() const;

  // Adds the current draw to the running mean of the all-arm predictions.
  void accumulate_potential_outcomes();
  std::size_t accumulated_draws() const;
  PotentialOutcomeMatrix potential_outcomes() const;

  // True when the outcome had zero variance and the model is the constant.
  bool degenerate() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Runs `iterations` sweeps and returns the (iterations - burnin) retained
// draws. Requires n >= 10.
std::vector<TreeEnsembleState> fit_sum_of_trees(const Dataset& ds, const TreeEnsembleConfig& cfg,
                                                WarningSink warn = stderr_warning);

// Posterior-mean prediction for every subject under every arm, computed by
// evaluating each stored draw.
PotentialOutcomeMatrix impute_potential_outcomes(std::span<const TreeEnsembleState> draws, const Dataset& ds);

// Posterior-mean prediction at the observed arm.
Eigen::VectorXd predict_in_sample(std::span<const TreeEnsembleState> draws, const Dataset& ds);

// Posterior-mean prediction with every subject's arm forced to `arm`.
Eigen::VectorXd predict_arm(std::span<const TreeEnsembleState> draws, const Dataset& ds, int arm);

// Same result as impute_potential_outcomes(fit_sum_of_trees(...)) up to
// summation order, without storing the draws.
PotentialOutcomeMatrix fit_and_impute(const Dataset& ds, const TreeEnsembleConfig& cfg,
                                      WarningSink warn = stderr_warning);

}  // namespace stratify
