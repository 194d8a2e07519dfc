#include "stratify/profile_regression.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

namespace stratify {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::size_t kLaunchScans = 5;

std::string cluster_context(std::size_t c, const char* what) {
  return "cluster " + std::to_string(c + 1) + " " + what;
}

double clamp_stick(double v) {
  return std::clamp(v, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

}  // namespace

void ClusteringData::validate() const {
  if (x.size() != n * p1 || d.size() != n * p2 || y.size() != n * outcome_dim)
    throw DataError("clustering data: array sizes do not match the dimensions");
  if (categories.size() != p2) throw DataError("clustering data: category counts missing");
  if (outcome_dim == 0) throw DataError("clustering data: outcome vector is empty");
  for (double v : x)
    if (!std::isfinite(v)) throw DataError("clustering data: non-finite covariate value");
  for (double v : y)
    if (!std::isfinite(v)) throw DataError("clustering data: non-finite outcome value");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p2; ++j)
      if (code(i, j) < 0 || code(i, j) >= categories[j])
        throw DataError("clustering data: category code out of range for subject " + std::to_string(i + 1));
  if (xbar.size() != p1 || psi0.size() != p2) throw DataError("clustering data: reference profile missing");
}

void refresh_reference(ClusteringData& data) {
  data.xbar.assign(data.p1, 0.0);
  for (std::size_t i = 0; i < data.n; ++i)
    for (std::size_t j = 0; j < data.p1; ++j) data.xbar[j] += data.x[i * data.p1 + j];
  if (data.n > 0)
    for (double& v : data.xbar) v /= static_cast<double>(data.n);
  data.psi0.assign(data.p2, {});
  for (std::size_t j = 0; j < data.p2; ++j) {
    const auto kj = static_cast<std::size_t>(data.categories[j]);
    data.psi0[j].assign(kj, data.n > 0 ? 0.0 : 1.0 / static_cast<double>(kj));
    for (std::size_t i = 0; i < data.n; ++i) data.psi0[j][static_cast<std::size_t>(data.code(i, j))] += 1.0;
    if (data.n > 0)
      for (double& p : data.psi0[j]) p /= static_cast<double>(data.n);
  }
}

ClusteringData make_clustering_data(const Dataset& ds, const PotentialOutcomeMatrix& outcomes, bool standardize) {
  if (outcomes.subjects() != ds.size())
    throw DataError("potential outcomes have " + std::to_string(outcomes.subjects()) + " rows but the data set has " +
                    std::to_string(ds.size()));
  ClusteringData data;
  data.n = ds.size();
  data.p1 = ds.p1();
  data.p2 = ds.p2();
  data.outcome_dim = outcomes.arms();
  data.categories = ds.categories;
  data.continuous_names = ds.continuous_names;
  data.discrete_names = ds.discrete_names;
  data.outcome_names = outcomes.arm_labels;
  data.x.resize(data.n * data.p1);
  data.d.resize(data.n * data.p2);
  data.y.resize(data.n * data.outcome_dim);
  for (std::size_t i = 0; i < data.n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < data.p1; ++j) data.x[i * data.p1 + j] = ds.continuous(r, static_cast<Eigen::Index>(j));
    for (std::size_t j = 0; j < data.p2; ++j) data.d[i * data.p2 + j] = ds.discrete(r, static_cast<Eigen::Index>(j)) - 1;
    for (std::size_t a = 0; a < data.outcome_dim; ++a)
      data.y[i * data.outcome_dim + a] = outcomes.values(r, static_cast<Eigen::Index>(a));
  }
  if (standardize && data.n > 1) {
    for (std::size_t j = 0; j < data.p1; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < data.n; ++i) mean += data.x[i * data.p1 + j];
      mean /= static_cast<double>(data.n);
      double ss = 0.0;
      for (std::size_t i = 0; i < data.n; ++i) ss += std::pow(data.x[i * data.p1 + j] - mean, 2);
      const double sd = std::sqrt(ss / static_cast<double>(data.n - 1));
      for (std::size_t i = 0; i < data.n; ++i) {
        double& v = data.x[i * data.p1 + j];
        v = sd > 0.0 ? (v - mean) / sd : v - mean;
      }
    }
  }
  for (std::size_t j = 0; j < data.p2; ++j) {
    std::vector<std::string> labels;
    for (const auto& enc : ds.encodings)
      if (enc.covariate == ds.discrete_names[j]) labels = enc.labels;
    if (labels.size() != static_cast<std::size_t>(ds.categories[j])) {
      labels.clear();
      for (int k = 1; k <= ds.categories[j]; ++k) labels.push_back(std::to_string(k));
    }
    data.levels.push_back(std::move(labels));
  }
  refresh_reference(data);
  data.validate();
  return data;
}

void PriorSpec::validate(const ClusteringData& data) const {
  auto fail = [](const std::string& what) { throw ConfigError("mixture prior: " + what); };
  auto check_niw = [&](const NiwParams& p, std::size_t dim, const std::string& block) {
    if (p.dim() != dim || static_cast<std::size_t>(p.scale.rows()) != dim ||
        static_cast<std::size_t>(p.scale.cols()) != dim)
      fail(block + " hyperparameters have the wrong dimension");
    if (dim == 0) return;
    if (!(p.kappa > 0.0)) fail(block + " kappa must be positive");
    if (!(p.dof > static_cast<double>(dim) - 1.0)) fail(block + " degrees of freedom must exceed dimension - 1");
    if (!p.scale.isApprox(p.scale.transpose(), 1e-12) || !SpdFactor::try_factor(p.scale))
      fail(block + " scale matrix must be symmetric positive definite");
  };
  check_niw(covariate, data.p1, "covariate");
  check_niw(outcome, data.outcome_dim, "outcome");
  if (dirichlet.size() != data.p2) fail("one Dirichlet concentration vector per discrete covariate is required");
  for (std::size_t j = 0; j < data.p2; ++j) {
    if (dirichlet[j].size() != static_cast<std::size_t>(data.categories[j]))
      fail("Dirichlet concentration for '" + data.discrete_names[j] + "' has the wrong length");
    for (double a : dirichlet[j])
      if (!(a > 0.0)) fail("Dirichlet concentrations must be positive");
  }
  if (!(alpha_shape > 0.0 && alpha_rate > 0.0)) fail("alpha Gamma prior shape and rate must be positive");
  if (!(rho_atom >= 0.0 && rho_atom < 1.0)) fail("selection prior atom weight must lie in [0, 1)");
  if (!(rho_a > 0.0 && rho_b > 0.0)) fail("selection prior Beta parameters must be positive");
}

namespace {

NiwParams default_niw(const std::vector<double>& values, std::size_t n, std::size_t dim, double kappa0) {
  NiwParams p;
  p.mean = Vector::Zero(static_cast<Eigen::Index>(dim));
  p.scale = Matrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  p.kappa = kappa0;
  p.dof = static_cast<double>(dim) + 2.0;
  for (std::size_t j = 0; j < dim; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += values[i * dim + j];
    if (n > 0) mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += std::pow(values[i * dim + j] - mean, 2);
    const double var = n > 1 ? ss / static_cast<double>(n - 1) : 0.0;
    const auto jj = static_cast<Eigen::Index>(j);
    p.mean(jj) = mean;
    p.scale(jj, jj) = var > 0.0 ? var : 1.0;
  }
  return p;
}

}  // namespace

PriorSpec default_prior(const ClusteringData& data, double kappa0, double dirichlet_a) {
  if (!(kappa0 > 0.0)) throw ConfigError("mixture prior: kappa0 must be positive");
  if (!(dirichlet_a > 0.0)) throw ConfigError("mixture prior: Dirichlet concentration must be positive");
  PriorSpec prior;
  prior.covariate = default_niw(data.x, data.n, data.p1, kappa0);
  prior.outcome = default_niw(data.y, data.n, data.outcome_dim, kappa0);
  for (int kj : data.categories) prior.dirichlet.emplace_back(static_cast<std::size_t>(kj), dirichlet_a);
  return prior;
}

std::vector<std::size_t> ChainState::sizes() const {
  std::vector<std::size_t> counts(stick.size(), 0);
  for (int c : z) ++counts[static_cast<std::size_t>(c)];
  return counts;
}

void ChainOptions::validate() const {
  if (iterations == 0) throw ConfigError("mixture sampler: iterations must be positive");
  if (burnin >= iterations) throw ConfigError("mixture sampler: burn-in must be smaller than the number of iterations");
  if (initial_clusters == 0) throw ConfigError("mixture sampler: initial cluster count must be positive");
}

double log_density_cont(std::span<const double> x, const Vector& mu, const Matrix& sigma, std::string_view context) {
  if (x.size() != static_cast<std::size_t>(mu.size())) throw DataError("covariate density: dimension mismatch");
  const Vector xv = Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
  return log_mvn_density(xv, mu, sigma, context);
}

double log_density_outcome(std::span<const double> y, const Vector& mu, const Matrix& sigma, std::string_view context) {
  if (y.size() != static_cast<std::size_t>(mu.size())) throw DataError("outcome density: dimension mismatch");
  const Vector yv = Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
  return log_mvn_density(yv, mu, sigma, context);
}

double log_mass_disc(std::span<const int> codes, const std::vector<std::vector<double>>& psi, std::span<const int> gamma,
                     const std::vector<std::vector<double>>& psi0) {
  double total = 0.0;
  for (std::size_t j = 0; j < codes.size(); ++j) {
    const auto k = static_cast<std::size_t>(codes[j] - 1);
    const double p = gamma[j] != 0 ? psi[j].at(k) : psi0[j].at(k);
    if (!(p > 0.0)) return kNegInf;
    total += std::log(p);
  }
  return total;
}

std::vector<double> stick_weights(std::span<const double> v) {
  std::vector<double> pi(v.size());
  double remaining = 1.0;
  for (std::size_t c = 0; c < v.size(); ++c) {
    pi[c] = v[c] * remaining;
    remaining *= 1.0 - v[c];
  }
  return pi;
}

void finalize_component(ComponentParams& comp, const ClusteringData& data) {
  if (data.p1 > 0) {
    comp.mu_star.resize(static_cast<Eigen::Index>(data.p1));
    for (std::size_t j = 0; j < data.p1; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      comp.mu_star(jj) = effective_mean(comp.gamma_x[j], comp.mu_x(jj), data.xbar[j]);
    }
    comp.sigma_x_factor = SpdFactor::factor(comp.sigma_x, "covariate covariance");
  }
  comp.log_mass.resize(data.p2);
  for (std::size_t j = 0; j < data.p2; ++j) {
    const auto& probs = comp.gamma_d[j] != 0 ? comp.psi[j] : data.psi0[j];
    comp.log_mass[j].resize(probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k) comp.log_mass[j][k] = probs[k] > 0.0 ? std::log(probs[k]) : kNegInf;
  }
  comp.sigma_y_factor = SpdFactor::factor(comp.sigma_y, "outcome covariance");
}

double covariate_log_likelihood(const ComponentParams& comp, const ClusteringData& data, std::size_t i) {
  double total = 0.0;
  if (data.p1 > 0)
    total += comp.sigma_x_factor.log_density(data.x_row(i), {comp.mu_star.data(), data.p1});
  for (std::size_t j = 0; j < data.p2; ++j) total += comp.log_mass[j][static_cast<std::size_t>(data.code(i, j))];
  return total;
}

double outcome_log_likelihood(const ComponentParams& comp, const ClusteringData& data, std::size_t i) {
  return comp.sigma_y_factor.log_density(data.y_row(i), {comp.mu_y.data(), data.outcome_dim});
}

std::vector<double> allocation_log_weights(const ChainState& state, const ClusteringData& data, std::size_t i) {
  std::vector<double> w(state.components.size());
  for (std::size_t c = 0; c < w.size(); ++c)
    w[c] = covariate_log_likelihood(state.components[c], data, i) + outcome_log_likelihood(state.components[c], data, i);
  return w;
}

namespace {

double draw_rho(std::size_t selected, std::size_t total, const PriorSpec& prior, Rng& rng) {
  const double a = prior.rho_a;
  const double b = prior.rho_b;
  if (selected == 0 && prior.rho_atom > 0.0) {
    // Atom probability: w / (w + (1 - w) B(a, b + C) / B(a, b)).
    const double c = static_cast<double>(total);
    const double log_ratio = std::lgamma(b + c) - std::lgamma(a + b + c) - std::lgamma(b) + std::lgamma(a + b);
    const double slab = (1.0 - prior.rho_atom) * std::exp(log_ratio);
    if (rng.uniform() < prior.rho_atom / (prior.rho_atom + slab)) return 0.0;
  }
  return rng.beta(a + static_cast<double>(selected), b + static_cast<double>(total - selected));
}

int draw_indicator(double log_odds, Rng& rng) {
  if (log_odds == kNegInf) return 0;
  if (log_odds == std::numeric_limits<double>::infinity()) return 1;
  const double p = 1.0 / (1.0 + std::exp(-log_odds));
  return rng.uniform() < p ? 1 : 0;
}

double log_or_neginf(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

ComponentParams prior_component(const ClusteringData& data, const PriorSpec& prior, const VariableSelectionState& vs,
                                Rng& rng) {
  ComponentParams comp;
  if (data.p1 > 0) {
    GaussianDraw g = sample_niw(prior.covariate, rng);
    comp.mu_x = std::move(g.mean);
    comp.sigma_x = std::move(g.covariance);
  }
  comp.gamma_x.assign(data.p1, 1);
  comp.gamma_d.assign(data.p2, 1);
  if (prior.variable_selection) {
    for (std::size_t j = 0; j < data.p1; ++j) comp.gamma_x[j] = rng.bernoulli(vs.rho_x[j]) ? 1 : 0;
    for (std::size_t j = 0; j < data.p2; ++j) comp.gamma_d[j] = rng.bernoulli(vs.rho_d[j]) ? 1 : 0;
  }
  for (std::size_t j = 0; j < data.p2; ++j) comp.psi.push_back(sample_dirichlet(prior.dirichlet[j], rng));
  GaussianDraw g = sample_niw(prior.outcome, rng);
  comp.mu_y = std::move(g.mean);
  comp.sigma_y = std::move(g.covariance);
  finalize_component(comp, data);
  return comp;
}

// Sigma | mu, gamma from its inverse-Wishart conditional, then each
// (gamma_j, mu_j) with mu_j integrated out of the indicator update.
void update_selected_continuous(ComponentParams& comp, const ClusteringData& data, const PriorSpec& prior,
                                const VariableSelectionState& vs, const GaussianStats& stats, Rng& rng) {
  const std::size_t p = data.p1;
  const auto pe = static_cast<Eigen::Index>(p);
  const double n = static_cast<double>(stats.count());
  const NiwParams& h = prior.covariate;
  Vector mu_star(pe);
  for (std::size_t j = 0; j < p; ++j)
    mu_star(static_cast<Eigen::Index>(j)) = effective_mean(comp.gamma_x[j], comp.mu_x(static_cast<Eigen::Index>(j)), data.xbar[j]);
  Vector dev = stats.mean() - mu_star;
  const Vector prior_dev = comp.mu_x - h.mean;
  Matrix scale = h.scale + h.kappa * prior_dev * prior_dev.transpose() + stats.scatter() + n * dev * dev.transpose();
  scale = 0.5 * (scale + scale.transpose());
  comp.sigma_x = sample_inverse_wishart(scale, h.dof + 1.0 + n, rng);
  const Matrix prec = SpdFactor::factor(comp.sigma_x, "covariate covariance").inverse();

  for (std::size_t jj = 0; jj < p; ++jj) {
    const auto j = static_cast<Eigen::Index>(jj);
    const double pjj = prec(j, j);
    double b = 0.0;
    double shift = 0.0;
    for (Eigen::Index l = 0; l < pe; ++l) {
      if (l == j) continue;
      b += prec(j, l) * dev(l);
      shift += prec(j, l) * (comp.mu_x(l) - h.mean(l));
    }
    const double tau = h.kappa * pjj;  // conditional prior precision of mu_j
    const double m = h.mean(j) - shift / pjj;
    const double target = stats.mean()(j) + b / pjj;  // likelihood centre for mu*_j
    const double lik_prec = n * pjj;
    const double w = tau * lik_prec / (tau + lik_prec);
    const double rho = vs.rho_x[jj];
    double log_odds = log_or_neginf(rho) - log_or_neginf(1.0 - rho);
    if (std::isfinite(log_odds)) {
      log_odds += 0.5 * std::log(tau / (tau + lik_prec)) - 0.5 * w * (m - target) * (m - target) +
                  0.5 * lik_prec * (data.xbar[jj] - target) * (data.xbar[jj] - target);
    }
    const int g = draw_indicator(log_odds, rng);
    comp.gamma_x[jj] = g;
    if (g == 1) {
      const double post_prec = tau + lik_prec;
      comp.mu_x(j) = (tau * m + lik_prec * target) / post_prec + rng.normal() / std::sqrt(post_prec);
    } else {
      comp.mu_x(j) = m + rng.normal() / std::sqrt(tau);
    }
    dev(j) = stats.mean()(j) - effective_mean(g, comp.mu_x(j), data.xbar[jj]);
  }
}

void update_component(ComponentParams& comp, const ClusteringData& data, const PriorSpec& prior,
                      const VariableSelectionState& vs, const std::vector<std::size_t>& members, Rng& rng) {
  // Components opened by a split arrive without parameters.
  if (members.empty() || comp.mu_y.size() == 0) {
    comp = prior_component(data, prior, vs, rng);
    if (members.empty()) return;
  }
  if (data.p1 > 0) {
    GaussianStats stats(data.p1);
    for (std::size_t i : members) stats.add(data.x_row(i));
    if (prior.variable_selection) {
      update_selected_continuous(comp, data, prior, vs, stats, rng);
    } else {
      GaussianDraw g = sample_niw(conjugate_update_niw(prior.covariate, stats), rng);
      comp.mu_x = std::move(g.mean);
      comp.sigma_x = std::move(g.covariance);
      comp.gamma_x.assign(data.p1, 1);
    }
  }
  for (std::size_t j = 0; j < data.p2; ++j) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(data.categories[j]), 0);
    for (std::size_t i : members) ++counts[static_cast<std::size_t>(data.code(i, j))];
    int g = 1;
    if (prior.variable_selection) {
      double ref = 0.0;
      for (std::size_t k = 0; k < counts.size(); ++k)
        if (counts[k] > 0) ref += static_cast<double>(counts[k]) * log_or_neginf(data.psi0[j][k]);
      const double rho = vs.rho_d[j];
      const double on = log_or_neginf(rho) + dirichlet_log_marginal(prior.dirichlet[j], counts);
      const double off = log_or_neginf(1.0 - rho) + ref;
      g = (on == kNegInf) ? 0 : (off == kNegInf ? 1 : draw_indicator(on - off, rng));
    }
    comp.gamma_d[j] = g;
    if (g == 1) {
      comp.psi[j] = sample_dirichlet(conjugate_update_dirichlet(prior.dirichlet[j], counts), rng);
    } else {
      comp.psi[j] = sample_dirichlet(prior.dirichlet[j], rng);
    }
  }
  GaussianStats ystats(data.outcome_dim);
  for (std::size_t i : members) ystats.add(data.y_row(i));
  GaussianDraw g = sample_niw(conjugate_update_niw(prior.outcome, ystats), rng);
  comp.mu_y = std::move(g.mean);
  comp.sigma_y = std::move(g.covariance);
  finalize_component(comp, data);
}

void update_alpha(ChainState& s, const PriorSpec& prior, bool adapt) {
  const auto m = static_cast<double>(s.stick.size());
  double log_stick = 0.0;
  for (double v : s.stick.v) log_stick += std::log1p(-v);
  auto log_target = [&](double log_a) {
    const double a = std::exp(log_a);
    return prior.alpha_shape * log_a - prior.alpha_rate * a + m * log_a + (a - 1.0) * log_stick;
  };
  const double current = std::log(s.stick.alpha);
  const double proposal = current + s.alpha_step * s.rng.normal();
  ++s.alpha_proposed;
  if (std::log(s.rng.uniform()) < log_target(proposal) - log_target(current)) {
    s.stick.alpha = std::exp(proposal);
    ++s.alpha_accepted;
  }
  if (adapt && s.alpha_proposed == 50) {
    const double rate = static_cast<double>(s.alpha_accepted) / 50.0;
    s.alpha_step *= rate > 0.44 ? 1.1 : 1.0 / 1.1;
    s.alpha_proposed = 0;
    s.alpha_accepted = 0;
  } else if (!adapt && s.alpha_proposed >= 50) {
    s.alpha_proposed = 0;
    s.alpha_accepted = 0;
  }
}

void update_sticks(ChainState& s, const std::vector<std::size_t>& counts) {
  std::size_t above = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  for (std::size_t c = 0; c < s.stick.size(); ++c) {
    above -= counts[c];
    s.stick.v[c] = clamp_stick(s.rng.beta(1.0 + static_cast<double>(counts[c]), s.stick.alpha + static_cast<double>(above)));
  }
}

void truncate(ChainState& s, std::size_t m) {
  s.stick.v.resize(m);
  s.components.resize(m);
  s.stick.pi = stick_weights(s.stick.v);
}

std::size_t occupied_extent(const ChainState& s) {
  int top = -1;
  for (int c : s.z) top = std::max(top, c);
  return static_cast<std::size_t>(std::max(top + 1, 1));
}

void swap_labels(ChainState& s, std::size_t a, std::size_t b) {
  std::swap(s.components[a], s.components[b]);
  const int ia = static_cast<int>(a);
  const int ib = static_cast<int>(b);
  for (int& c : s.z) {
    if (c == ia) c = ib;
    else if (c == ib) c = ia;
  }
}

void label_switch(ChainState& s) {
  const std::size_t m = s.stick.size();
  std::vector<std::size_t> counts = s.sizes();
  std::vector<std::size_t> nonempty;
  for (std::size_t c = 0; c < m; ++c)
    if (counts[c] > 0) nonempty.push_back(c);

  // Swap two occupied components, keeping the weights in place.
  if (nonempty.size() >= 2) {
    const std::size_t ia = s.rng.index(nonempty.size());
    std::size_t ib = s.rng.index(nonempty.size() - 1);
    if (ib >= ia) ++ib;
    const std::size_t a = nonempty[ia];
    const std::size_t b = nonempty[ib];
    const double na = static_cast<double>(counts[a]);
    const double nb = static_cast<double>(counts[b]);
    const double log_accept = (nb - na) * (std::log(s.stick.pi[a]) - std::log(s.stick.pi[b]));
    if (std::log(s.rng.uniform()) < log_accept) {
      swap_labels(s, a, b);
      std::swap(counts[a], counts[b]);
    }
  }

  // Swap neighbours together with their sticks.
  if (m >= 2) {
    const std::size_t l = s.rng.index(m - 1);
    if (!(counts[l] == 0 && l + 1 == m - 1)) {
      const double log_accept = static_cast<double>(counts[l]) * std::log1p(-s.stick.v[l + 1]) -
                                static_cast<double>(counts[l + 1]) * std::log1p(-s.stick.v[l]);
      if (std::log(s.rng.uniform()) < log_accept) {
        swap_labels(s, l, l + 1);
        std::swap(s.stick.v[l], s.stick.v[l + 1]);
      }
    }
  }
  s.stick.pi = stick_weights(s.stick.v);
}

// Sufficient statistics of one cluster with all parameters integrated out.
class CollapsedCluster {
 public:
  CollapsedCluster(const ClusteringData& data, const PriorSpec& prior)
      : data_(&data), prior_(&prior), x_(prior.covariate), y_(prior.outcome) {
    for (std::size_t j = 0; j < data.p2; ++j) {
      counts_.emplace_back(static_cast<std::size_t>(data.categories[j]), 0);
      const auto& a = prior.dirichlet[j];
      total_a_.push_back(std::accumulate(a.begin(), a.end(), 0.0));
    }
  }

  std::size_t size() const { return size_; }

  void add(std::size_t i) {
    x_.add(data_->x_row(i));
    y_.add(data_->y_row(i));
    for (std::size_t j = 0; j < counts_.size(); ++j) ++counts_[j][static_cast<std::size_t>(data_->code(i, j))];
    ++size_;
  }

  void remove(std::size_t i) {
    x_.remove(data_->x_row(i));
    y_.remove(data_->y_row(i));
    for (std::size_t j = 0; j < counts_.size(); ++j) --counts_[j][static_cast<std::size_t>(data_->code(i, j))];
    --size_;
  }

  double log_marginal() const {
    double total = x_.log_marginal() + y_.log_marginal();
    for (std::size_t j = 0; j < counts_.size(); ++j) total += dirichlet_log_marginal(prior_->dirichlet[j], counts_[j]);
    return total;
  }

  double log_predictive(std::size_t i) const {
    double value = x_.log_predictive(data_->x_row(i)) + y_.log_predictive(data_->y_row(i));
    for (std::size_t j = 0; j < counts_.size(); ++j) {
      const auto k = static_cast<std::size_t>(data_->code(i, j));
      value += std::log((prior_->dirichlet[j][k] + static_cast<double>(counts_[j][k])) /
                        (total_a_[j] + static_cast<double>(size_)));
    }
    return value;
  }

 private:
  const ClusteringData* data_;
  const PriorSpec* prior_;
  NiwPosterior x_;
  NiwPosterior y_;
  std::vector<std::vector<std::size_t>> counts_;
  std::vector<double> total_a_;
  std::size_t size_ = 0;
};

// Empty labels below the occupied extent, plus the first label past it.
std::vector<std::size_t> free_labels(const std::vector<std::size_t>& counts) {
  std::size_t extent = 0;
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] > 0) extent = c + 1;
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < extent; ++c)
    if (counts[c] == 0) labels.push_back(c);
  labels.push_back(extent);
  return labels;
}

std::vector<std::size_t> label_counts(const std::vector<int>& z) {
  std::vector<std::size_t> counts;
  for (int c : z) {
    const auto l = static_cast<std::size_t>(c);
    if (l >= counts.size()) counts.resize(l + 1, 0);
    ++counts[l];
  }
  return counts;
}

// Restricted Gibbs step: moves k to side 0 or 1 with probability
// proportional to size times predictive density. Returns the log
// probability of the side taken; `forced` >= 0 takes that side.
double restricted_step(std::array<CollapsedCluster, 2>& sides, std::vector<int>& side, std::size_t k, int forced,
                       Rng& rng) {
  sides[static_cast<std::size_t>(side[k])].remove(k);
  std::array<double, 2> lw{};
  for (std::size_t t = 0; t < 2; ++t)
    lw[t] = std::log(static_cast<double>(sides[t].size())) + sides[t].log_predictive(k);
  const double top = std::max(lw[0], lw[1]);
  const double norm = top + std::log(std::exp(lw[0] - top) + std::exp(lw[1] - top));
  int pick = forced;
  if (pick < 0) pick = std::log(rng.uniform()) < lw[0] - norm ? 0 : 1;
  side[k] = pick;
  sides[static_cast<std::size_t>(pick)].add(k);
  return lw[static_cast<std::size_t>(pick)] - norm;
}

// Split-merge move on the allocations with sticks and component parameters
// integrated out, using a randomly launched restricted Gibbs proposal.
// Returns true if the allocations changed.
bool split_merge(ChainState& s, const ClusteringData& data, const PriorSpec& prior, std::size_t scans) {
  const std::size_t n = data.n;
  if (n < 2) return false;
  const std::size_t i = s.rng.index(n);
  std::size_t j = s.rng.index(n - 1);
  if (j >= i) ++j;
  const int ci = s.z[i];
  const int cj = s.z[j];
  const bool split = ci == cj;
  const double log_u = std::log(s.rng.uniform());

  std::vector<std::size_t> others;
  for (std::size_t k = 0; k < n; ++k)
    if (k != i && k != j && (s.z[k] == ci || s.z[k] == cj)) others.push_back(k);

  const std::vector<std::size_t> counts = label_counts(s.z);
  const double alpha = s.stick.alpha;
  CollapsedCluster merged(data, prior);
  merged.add(i);
  merged.add(j);
  for (std::size_t k : others) merged.add(k);

  // For a merge the proposal term is a log probability (<= 0), so the
  // target ratio alone can settle a rejection before any launch.
  std::vector<std::size_t> proposed = counts;
  double log_bound = 0.0;
  std::vector<std::size_t> labels;
  if (!split) {
    proposed[static_cast<std::size_t>(ci)] += proposed[static_cast<std::size_t>(cj)];
    proposed[static_cast<std::size_t>(cj)] = 0;
    while (!proposed.empty() && proposed.back() == 0) proposed.pop_back();
    labels = free_labels(proposed);
    if (std::find(labels.begin(), labels.end(), static_cast<std::size_t>(cj)) == labels.end()) return false;
    CollapsedCluster a(data, prior);
    CollapsedCluster b(data, prior);
    for (std::size_t k = 0; k < n; ++k) {
      if (s.z[k] == ci) a.add(k);
      else if (s.z[k] == cj) b.add(k);
    }
    log_bound = log_allocation_prior(proposed, alpha) - log_allocation_prior(counts, alpha) + merged.log_marginal() -
                a.log_marginal() - b.log_marginal() - std::log(static_cast<double>(labels.size()));
    if (!(log_u < log_bound)) return false;
  }

  // Launch state from a random split followed by restricted scans.
  std::array<CollapsedCluster, 2> sides{CollapsedCluster(data, prior), CollapsedCluster(data, prior)};
  std::vector<int> side(n, -1);
  side[i] = 0;
  side[j] = 1;
  sides[0].add(i);
  sides[1].add(j);
  for (std::size_t k : others) {
    side[k] = s.rng.uniform() < 0.5 ? 0 : 1;
    sides[static_cast<std::size_t>(side[k])].add(k);
  }
  for (std::size_t t = 0; t < scans; ++t)
    for (std::size_t k : others) restricted_step(sides, side, k, -1, s.rng);

  if (split) {
    double log_q = 0.0;
    for (std::size_t k : others) log_q += restricted_step(sides, side, k, -1, s.rng);
    labels = free_labels(counts);
    const std::size_t fresh = labels[s.rng.index(labels.size())];
    if (fresh >= proposed.size()) proposed.resize(fresh + 1, 0);
    proposed[static_cast<std::size_t>(ci)] = sides[0].size();
    proposed[fresh] = sides[1].size();
    const double log_accept = log_allocation_prior(proposed, alpha) - log_allocation_prior(counts, alpha) +
                              sides[0].log_marginal() + sides[1].log_marginal() - merged.log_marginal() +
                              std::log(static_cast<double>(labels.size())) - log_q;
    if (!(log_u < log_accept)) return false;
    s.z[j] = static_cast<int>(fresh);
    for (std::size_t k : others)
      if (side[k] == 1) s.z[k] = static_cast<int>(fresh);
    return true;
  }

  double log_q = 0.0;
  for (std::size_t k : others) log_q += restricted_step(sides, side, k, s.z[k] == ci ? 0 : 1, s.rng);
  if (!(log_u < log_bound + log_q)) return false;
  for (std::size_t k : others)
    if (s.z[k] == cj) s.z[k] = ci;
  s.z[j] = ci;
  return true;
}

}  // namespace

// log p(z | alpha) with the sticks integrated out:
// prod_c alpha B(1 + n_c, alpha + n_{>c}).
double log_allocation_prior(const std::vector<std::size_t>& counts, double alpha) {
  std::size_t above = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  double total = 0.0;
  for (std::size_t c : counts) {
    above -= c;
    const double a = 1.0 + static_cast<double>(c);
    const double b = alpha + static_cast<double>(above);
    total += std::log(alpha) + std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  }
  return total;
}

ChainState initial_state(const ClusteringData& data, const PriorSpec& prior, const ChainOptions& options) {
  data.validate();
  prior.validate(data);
  options.validate();
  ChainState s;
  s.rng = Rng(options.seed);
  s.split_merge = options.split_merge;
  s.stick.alpha = prior.alpha_shape / prior.alpha_rate;
  s.selection.rho_x.assign(data.p1, prior.variable_selection ? 0.5 : 1.0);
  s.selection.rho_d.assign(data.p2, prior.variable_selection ? 0.5 : 1.0);
  const std::size_t start = std::min(options.initial_clusters, std::max<std::size_t>(data.n, 1));
  s.z.resize(data.n);
  for (auto& c : s.z) c = static_cast<int>(s.rng.index(start));
  const std::size_t m = occupied_extent(s);
  s.stick.v.assign(m, 0.5);
  update_sticks(s, s.sizes());
  s.stick.pi = stick_weights(s.stick.v);
  for (std::size_t c = 0; c < m; ++c) s.components.push_back(prior_component(data, prior, s.selection, s.rng));
  return s;
}

void gibbs_sweep(ChainState& s, const ClusteringData& data, const PriorSpec& prior, bool adapt, const WarningSink& warn) {
  if (!prior.variable_selection && s.split_merge > 0) {
    bool moved = false;
    for (std::size_t t = 0; t < s.split_merge; ++t) moved = split_merge(s, data, prior, kLaunchScans) || moved;
    if (moved) {
      // Sticks are redrawn given the new allocations; component parameters
      // are redrawn below before anything reads them.
      truncate(s, occupied_extent(s));
      update_sticks(s, s.sizes());
    }
  }
  truncate(s, occupied_extent(s));
  update_alpha(s, prior, adapt);

  std::vector<std::size_t> counts = s.sizes();
  update_sticks(s, counts);

  const std::size_t m = s.stick.size();
  std::vector<std::vector<std::size_t>> members(m);
  for (std::size_t i = 0; i < data.n; ++i) members[static_cast<std::size_t>(s.z[i])].push_back(i);

  if (prior.variable_selection) {
    std::size_t occupied = 0;
    for (std::size_t c = 0; c < m; ++c) occupied += counts[c] > 0 ? 1 : 0;
    for (std::size_t j = 0; j < data.p1; ++j) {
      std::size_t on = 0;
      for (std::size_t c = 0; c < m; ++c)
        if (counts[c] > 0) on += static_cast<std::size_t>(s.components[c].gamma_x[j]);
      s.selection.rho_x[j] = draw_rho(on, occupied, prior, s.rng);
    }
    for (std::size_t j = 0; j < data.p2; ++j) {
      std::size_t on = 0;
      for (std::size_t c = 0; c < m; ++c)
        if (counts[c] > 0) on += static_cast<std::size_t>(s.components[c].gamma_d[j]);
      s.selection.rho_d[j] = draw_rho(on, occupied, prior, s.rng);
    }
  }

  for (std::size_t c = 0; c < m; ++c) {
    ComponentParams backup = s.components[c];
    try {
      update_component(s.components[c], data, prior, s.selection, members[c], s.rng);
    } catch (const NumericalError& e) {
      if (backup.mu_y.size() == 0) throw;
      s.components[c] = std::move(backup);
      warn("iteration " + std::to_string(s.iteration + 1) + ": " + cluster_context(c, "parameter draw rejected") +
           " (" + e.what() + ")");
    }
  }

  // Slice variables and dynamic extension of the stick.
  s.stick.pi = stick_weights(s.stick.v);
  std::vector<double> u(data.n);
  double u_min = 1.0;
  for (std::size_t i = 0; i < data.n; ++i) {
    u[i] = s.stick.pi[static_cast<std::size_t>(s.z[i])] * s.rng.uniform();
    u_min = std::min(u_min, u[i]);
  }
  double remaining = 1.0;
  for (double v : s.stick.v) remaining *= 1.0 - v;
  while (data.n > 0 && remaining > u_min) {
    const double v = clamp_stick(s.rng.beta(1.0, s.stick.alpha));
    s.stick.v.push_back(v);
    s.stick.pi.push_back(v * remaining);
    remaining *= 1.0 - v;
    bool drawn = false;
    for (int attempt = 0; attempt < 10 && !drawn; ++attempt) {
      try {
        s.components.push_back(prior_component(data, prior, s.selection, s.rng));
        drawn = true;
      } catch (const NumericalError&) {
      }
    }
    if (!drawn) throw NumericalError("could not draw new component parameters from the prior");
  }

  // Allocation. A component with no other members has its parameters
  // integrated out (all of them, or all but the covariate block when
  // selecting variables); if chosen, they are redrawn given the subject.
  const NiwPredictive pred_y(prior.outcome);
  NiwPredictive pred_x;
  const bool collapse_x = data.p1 > 0 && !prior.variable_selection;
  if (collapse_x) pred_x = NiwPredictive(prior.covariate);
  std::vector<std::vector<double>> log_a(data.p2);
  for (std::size_t j = 0; j < data.p2; ++j) {
    const auto& a = prior.dirichlet[j];
    const double total_a = std::accumulate(a.begin(), a.end(), 0.0);
    for (double ak : a) log_a[j].push_back(std::log(ak / total_a));
  }

  const std::size_t total = s.stick.size();
  std::vector<std::size_t> occupancy(total, 0);
  for (int c : s.z) ++occupancy[static_cast<std::size_t>(c)];
  std::vector<double> logw(total);
  for (std::size_t i = 0; i < data.n; ++i) {
    --occupancy[static_cast<std::size_t>(s.z[i])];
    const double empty_y = pred_y.log_density(data.y_row(i));
    const double empty_x = collapse_x ? pred_x.log_density(data.x_row(i)) : 0.0;
    double best = kNegInf;
    for (std::size_t c = 0; c < total; ++c) {
      if (!(s.stick.pi[c] > u[i])) {
        logw[c] = kNegInf;
        continue;
      }
      const ComponentParams& comp = s.components[c];
      if (occupancy[c] > 0) {
        logw[c] = covariate_log_likelihood(comp, data, i) + outcome_log_likelihood(comp, data, i);
      } else {
        double w = empty_y;
        if (collapse_x) w += empty_x;
        else if (data.p1 > 0) w += comp.sigma_x_factor.log_density(data.x_row(i), {comp.mu_star.data(), data.p1});
        for (std::size_t j = 0; j < data.p2; ++j) {
          const auto k = static_cast<std::size_t>(data.code(i, j));
          w += comp.gamma_d[j] != 0 ? log_a[j][k] : log_or_neginf(data.psi0[j][k]);
        }
        logw[c] = w;
      }
      best = std::max(best, logw[c]);
    }
    auto chosen = static_cast<std::size_t>(s.z[i]);
    if (best != kNegInf) {
      double norm = 0.0;
      for (std::size_t c = 0; c < total; ++c) norm += logw[c] == kNegInf ? 0.0 : std::exp(logw[c] - best);
      double pick = s.rng.uniform() * norm;
      for (std::size_t c = 0; c < total; ++c) {
        if (logw[c] == kNegInf) continue;
        chosen = c;
        pick -= std::exp(logw[c] - best);
        if (pick <= 0.0) break;
      }
    }
    s.z[i] = static_cast<int>(chosen);
    if (occupancy[chosen]++ == 0) {
      ComponentParams backup = s.components[chosen];
      try {
        update_component(s.components[chosen], data, prior, s.selection, {i}, s.rng);
      } catch (const NumericalError& e) {
        s.components[chosen] = std::move(backup);
        warn("iteration " + std::to_string(s.iteration + 1) + ": " +
             cluster_context(chosen, "parameter draw rejected") + " (" + e.what() + ")");
      }
    }
  }

  truncate(s, occupied_extent(s));
  label_switch(s);
  ++s.iteration;
}

std::size_t IterationRecord::active() const {
  int top = 0;
  for (int c : z) top = std::max(top, c);
  return static_cast<std::size_t>(top);
}

IterationRecord record_iteration(const ChainState& state, const ClusteringData& data, bool with_parameters) {
  IterationRecord rec;
  rec.iteration = state.iteration;
  rec.alpha = state.stick.alpha;
  rec.rho_x = state.selection.rho_x;
  rec.rho_d = state.selection.rho_d;
  const std::vector<std::size_t> counts = state.sizes();
  std::vector<int> label(counts.size(), 0);
  int next = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) continue;
    label[c] = ++next;
    ClusterRecord cr;
    cr.size = counts[c];
    if (with_parameters) {
      const ComponentParams& comp = state.components[c];
      cr.mu_x = comp.mu_star;
      cr.sigma_x = comp.sigma_x;
      cr.gamma_x = comp.gamma_x;
      cr.gamma_d = comp.gamma_d;
      for (std::size_t j = 0; j < data.p2; ++j) cr.psi.push_back(comp.gamma_d[j] != 0 ? comp.psi[j] : data.psi0[j]);
      cr.mu_y = comp.mu_y;
      cr.sigma_y = comp.sigma_y;
    }
    rec.clusters.push_back(std::move(cr));
  }
  rec.z.resize(state.z.size());
  for (std::size_t i = 0; i < state.z.size(); ++i) rec.z[i] = label[static_cast<std::size_t>(state.z[i])];
  return rec;
}

ChainTrace run_chain(const ClusteringData& data, const PriorSpec& prior, const ChainOptions& options,
                     const WarningSink& warn) {
  ChainState state = initial_state(data, prior, options);
  ChainTrace trace;
  trace.subjects = data.n;
  trace.variable_selection = prior.variable_selection;
  trace.records.reserve(options.iterations - options.burnin);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    const bool in_burnin = it < options.burnin;
    gibbs_sweep(state, data, prior, in_burnin, warn);
    if (!in_burnin) trace.records.push_back(record_iteration(state, data, options.record_parameters));
  }
  return trace;
}

}  // namespace stratify
