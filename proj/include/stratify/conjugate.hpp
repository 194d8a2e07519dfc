#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "stratify/linalg.hpp"
#include "stratify/rng.hpp"

namespace stratify {

// Normal-inverse-Wishart hyperparameters:
//   mu | Sigma ~ N(mean, Sigma / kappa),  Sigma ~ IW(scale, dof).
struct NiwParams {
  Vector mean;
  double kappa = 1.0;
  Matrix scale;
  double dof = 1.0;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

// Count, mean and centred scatter of a set of vectors, accumulated with
// Welford's update.
class GaussianStats {
 public:
  explicit GaussianStats(std::size_t dim = 0);

  void add(std::span<const double> x);
  void clear();

  std::size_t count() const { return count_; }
  const Vector& mean() const { return mean_; }
  const Matrix& scatter() const { return scatter_; }

 private:
  std::size_t count_ = 0;
  Vector mean_;
  Matrix scatter_;
  Vector delta_;
};

// kappa' = kappa + n, dof' = dof + n, mean' = (kappa mean + n xbar) / kappa',
// scale' = scale + S + kappa n / kappa' (xbar - mean)(xbar - mean)'.
NiwParams conjugate_update_niw(const NiwParams& prior, const GaussianStats& data);
NiwParams conjugate_update_niw(const NiwParams& prior, const std::vector<Vector>& data);

// log p(x_1..x_n) with (mu, Sigma) integrated out.
double niw_log_marginal(const NiwParams& prior, const GaussianStats& data);

// Posterior predictive density of one new point under NIW hyperparameters:
// a multivariate t with dof - dim + 1 degrees of freedom centred at the
// mean. The factorization is done once at construction.
class NiwPredictive {
 public:
  NiwPredictive() = default;
  explicit NiwPredictive(const NiwParams& params);

  double log_density(std::span<const double> x) const;

 private:
  Vector mean_;
  SpdFactor scale_;
  double dof_ = 1.0;
  double constant_ = 0.0;
};

// NIW posterior of a growing or shrinking set of vectors. Single-point
// additions and removals are rank-one updates of the scale inverse and its
// log determinant, so the predictive and marginal stay O(dim^2).
class NiwPosterior {
 public:
  explicit NiwPosterior(const NiwParams& prior);

  void add(std::span<const double> x);
  void remove(std::span<const double> x);
  std::size_t count() const { return count_; }

  // log m(D + x) - log m(D).
  double log_predictive(std::span<const double> x) const;
  // log m(D), equal to niw_log_marginal on the same points.
  double log_marginal() const;

 private:
  void rank_one(double c);

  const NiwParams* prior_;
  std::size_t count_ = 0;
  double kappa_ = 0.0;
  double dof_ = 0.0;
  Vector mean_;
  Matrix inverse_;
  mutable Vector u_;
  mutable Vector w_;
  double log_det_ = 0.0;
  double prior_log_det_ = 0.0;
};

struct GaussianDraw {
  Vector mean;
  Matrix covariance;
};

// Sigma ~ IW(scale, dof), mu | Sigma ~ N(mean, Sigma / kappa).
GaussianDraw sample_niw(const NiwParams& params, Rng& rng);

// a'_k = a_k + counts_k.
std::vector<double> conjugate_update_dirichlet(std::span<const double> concentration,
                                               std::span<const std::size_t> counts);

// log p(sequence with the given category counts), probabilities integrated
// out under Dirichlet(concentration). No multinomial coefficient.
double dirichlet_log_marginal(std::span<const double> concentration, std::span<const std::size_t> counts);

std::vector<double> sample_dirichlet(std::span<const double> concentration, Rng& rng);

}  // namespace stratify
