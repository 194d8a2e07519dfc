#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stratify/bart.hpp"
#include "stratify/conjugate.hpp"
#include "stratify/data_model.hpp"
#include "stratify/errors.hpp"
#include "stratify/linalg.hpp"
#include "stratify/rng.hpp"

namespace stratify {

// Row-major inputs of the mixture model: continuous covariates, discrete
// codes (0-based here), and the imputed outcome vector, together with the
// data-wide reference profile used when a covariate is switched off.
struct ClusteringData {
  std::size_t n = 0;
  std::size_t p1 = 0;
  std::size_t p2 = 0;
  std::size_t outcome_dim = 0;
  std::vector<double> x;  // n * p1
  std::vector<int> d;     // n * p2, codes 0..K_j-1
  std::vector<double> y;  // n * outcome_dim
  std::vector<int> categories;

  std::vector<std::string> continuous_names;
  std::vector<std::string> discrete_names;
  std::vector<std::vector<std::string>> levels;
  std::vector<std::string> outcome_names;

  std::vector<double> xbar;               // reference mean per continuous covariate
  std::vector<std::vector<double>> psi0;  // reference category proportions

  std::span<const double> x_row(std::size_t i) const { return {x.data() + i * p1, p1}; }
  std::span<const double> y_row(std::size_t i) const { return {y.data() + i * outcome_dim, outcome_dim}; }
  int code(std::size_t i, std::size_t j) const { return d[i * p2 + j]; }

  void validate() const;  // throws DataError
};

// With `standardize`, continuous covariates are z-scored before clustering.
ClusteringData make_clustering_data(const Dataset& ds, const PotentialOutcomeMatrix& outcomes,
                                    bool standardize = false);

// Recomputes xbar and psi0 from the rows currently held.
void refresh_reference(ClusteringData& data);

struct PriorSpec {
  NiwParams covariate;  // dimension p1 (unused when p1 == 0)
  NiwParams outcome;    // dimension K
  std::vector<std::vector<double>> dirichlet;
  double alpha_shape = 2.0;
  double alpha_rate = 1.0;

  bool variable_selection = false;
  // rho_j ~ w delta_0 + (1 - w) Beta(rho_a, rho_b).
  double rho_atom = 0.5;
  double rho_a = 0.5;
  double rho_b = 0.5;

  void validate(const ClusteringData& data) const;  // throws ConfigError
};

// NIW means at the column means, kappa0, dof = dim + 2, scale = diagonal of
// the column variances (1 where a variance is zero or undefined);
// Dirichlet concentration `dirichlet_a` for every category.
PriorSpec default_prior(const ClusteringData& data, double kappa0 = 0.01, double dirichlet_a = 1.0);

struct ComponentParams {
  Vector mu_x;
  Vector mu_star;  // effective mean: mu_x where selected, xbar elsewhere
  Matrix sigma_x;
  SpdFactor sigma_x_factor;
  std::vector<int> gamma_x;
  std::vector<std::vector<double>> psi;
  std::vector<int> gamma_d;
  std::vector<std::vector<double>> log_mass;  // log psi or log psi0 per category
  Vector mu_y;
  Matrix sigma_y;
  SpdFactor sigma_y_factor;
};

struct StickState {
  std::vector<double> v;
  std::vector<double> pi;
  double alpha = 1.0;

  std::size_t size() const { return v.size(); }
};

struct VariableSelectionState {
  std::vector<double> rho_x;
  std::vector<double> rho_d;
};

struct ChainState {
  std::vector<int> z;  // component index per subject, 0-based
  StickState stick;
  std::vector<ComponentParams> components;
  VariableSelectionState selection;
  Rng rng;
  std::size_t iteration = 0;
  std::size_t split_merge = 0;  // split-merge attempts per sweep
  double alpha_step = 1.0;
  std::size_t alpha_proposed = 0;
  std::size_t alpha_accepted = 0;

  std::vector<std::size_t> sizes() const;
};

struct ChainOptions {
  std::size_t iterations = 2000;
  std::size_t burnin = 1000;
  std::uint64_t seed = 0;
  std::size_t initial_clusters = 20;
  // Split-merge attempts per sweep; not used with variable selection.
  std::size_t split_merge = 5;
  bool record_parameters = true;

  void validate() const;
};

// Log densities of the component-level models.
double log_density_cont(std::span<const double> x, const Vector& mu, const Matrix& sigma,
                        std::string_view context = "covariate covariance");
double log_density_outcome(std::span<const double> y, const Vector& mu, const Matrix& sigma,
                           std::string_view context = "outcome covariance");
// codes are 1-based; psi[j] and psi0[j] are probability vectors.
double log_mass_disc(std::span<const int> codes, const std::vector<std::vector<double>>& psi,
                     std::span<const int> gamma, const std::vector<std::vector<double>>& psi0);

std::vector<double> stick_weights(std::span<const double> v);

inline double effective_mean(int gamma, double mu, double xbar) { return gamma != 0 ? mu : xbar; }

// Fills mu_star, the Cholesky factors and log_mass from the raw parameters.
void finalize_component(ComponentParams& comp, const ClusteringData& data);

// Log likelihood contributions of subject i under a component, without the
// stick weight.
double covariate_log_likelihood(const ComponentParams& comp, const ClusteringData& data, std::size_t i);
double outcome_log_likelihood(const ComponentParams& comp, const ClusteringData& data, std::size_t i);
std::vector<double> allocation_log_weights(const ChainState& state, const ClusteringData& data, std::size_t i);

// log p(z | alpha) with the sticks integrated out, from the allocation
// counts per component index: prod_c alpha B(1 + n_c, alpha + n_{>c}).
double log_allocation_prior(const std::vector<std::size_t>& counts, double alpha);

// Random allocation to min(initial_clusters, n) components, alpha at its
// prior mean, sticks drawn given the allocation and parameters from the
// prior.
ChainState initial_state(const ClusteringData& data, const PriorSpec& prior, const ChainOptions& options);

// One full sweep: alpha, sticks, selection probabilities, component
// parameters, slice variables and allocations, pruning of trailing empty
// components, and two label-switching moves. `adapt` tunes the alpha
// proposal scale (burn-in only).
void gibbs_sweep(ChainState& state, const ClusteringData& data, const PriorSpec& prior, bool adapt = false,
                 const WarningSink& warn = stderr_warning);

struct ClusterRecord {
  std::size_t size = 0;
  Vector mu_x;  // effective mean
  Matrix sigma_x;
  std::vector<int> gamma_x;
  std::vector<std::vector<double>> psi;  // effective probabilities
  std::vector<int> gamma_d;
  Vector mu_y;
  Matrix sigma_y;
};

// One retained iteration. Labels are compacted to 1..n_active in order of
// component index; clusters[c - 1] describes label c.
struct IterationRecord {
  std::size_t iteration = 0;
  double alpha = 0.0;
  std::vector<int> z;
  std::vector<ClusterRecord> clusters;
  std::vector<double> rho_x;
  std::vector<double> rho_d;

  std::size_t active() const;
};

struct ChainTrace {
  std::size_t subjects = 0;
  bool variable_selection = false;
  std::vector<IterationRecord> records;
};

IterationRecord record_iteration(const ChainState& state, const ClusteringData& data, bool with_parameters);

ChainTrace run_chain(const ClusteringData& data, const PriorSpec& prior, const ChainOptions& options,
                     const WarningSink& warn = stderr_warning);

}  // namespace stratify
