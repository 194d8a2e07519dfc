#include "stratify/conjugate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "stratify/errors.hpp"

namespace stratify {

GaussianStats::GaussianStats(std::size_t dim)
    : mean_(Vector::Zero(static_cast<Eigen::Index>(dim))),
      scatter_(Matrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim))),
      delta_(static_cast<Eigen::Index>(dim)) {}

void GaussianStats::add(std::span<const double> x) {
  const auto d = mean_.size();
  ++count_;
  const double inv_n = 1.0 / static_cast<double>(count_);
  for (Eigen::Index j = 0; j < d; ++j) delta_(j) = x[static_cast<std::size_t>(j)] - mean_(j);
  mean_ += delta_ * inv_n;
  // scatter += (x - old_mean)(x - new_mean)'
  for (Eigen::Index c = 0; c < d; ++c) {
    const double after = x[static_cast<std::size_t>(c)] - mean_(c);
    for (Eigen::Index r = 0; r < d; ++r) scatter_(r, c) += delta_(r) * after;
  }
}

void GaussianStats::clear() {
  count_ = 0;
  mean_.setZero();
  scatter_.setZero();
}

NiwParams conjugate_update_niw(const NiwParams& prior, const GaussianStats& data) {
  if (data.count() == 0) return prior;
  if (data.mean().size() != prior.mean.size()) throw std::invalid_argument("NIW update: dimension mismatch");
  const double n = static_cast<double>(data.count());
  NiwParams post;
  post.kappa = prior.kappa + n;
  post.dof = prior.dof + n;
  post.mean = (prior.kappa * prior.mean + n * data.mean()) / post.kappa;
  const Vector diff = data.mean() - prior.mean;
  post.scale = prior.scale + data.scatter() + (prior.kappa * n / post.kappa) * diff * diff.transpose();
  post.scale = 0.5 * (post.scale + post.scale.transpose());
  return post;
}

NiwParams conjugate_update_niw(const NiwParams& prior, const std::vector<Vector>& data) {
  GaussianStats stats(prior.dim());
  for (const auto& x : data) {
    if (x.size() != prior.mean.size()) throw std::invalid_argument("NIW update: dimension mismatch");
    stats.add({x.data(), static_cast<std::size_t>(x.size())});
  }
  return conjugate_update_niw(prior, stats);
}

double niw_log_marginal(const NiwParams& prior, const GaussianStats& data) {
  const NiwParams post = conjugate_update_niw(prior, data);
  const std::size_t d = prior.dim();
  const double n = static_cast<double>(data.count());
  const auto prior_f = SpdFactor::factor(prior.scale, "NIW prior scale");
  const auto post_f = SpdFactor::factor(post.scale, "NIW posterior scale");
  return -0.5 * n * static_cast<double>(d) * std::log(std::numbers::pi) +
         log_multivariate_gamma(0.5 * post.dof, d) - log_multivariate_gamma(0.5 * prior.dof, d) +
         0.5 * prior.dof * prior_f.log_det() - 0.5 * post.dof * post_f.log_det() +
         0.5 * static_cast<double>(d) * (std::log(prior.kappa) - std::log(post.kappa));
}

NiwPredictive::NiwPredictive(const NiwParams& params) : mean_(params.mean) {
  const auto d = static_cast<double>(params.dim());
  dof_ = params.dof - d + 1.0;
  if (!(dof_ > 0.0)) throw std::invalid_argument("NIW predictive: degrees of freedom must exceed dim - 1");
  scale_ = SpdFactor::factor(params.scale * ((params.kappa + 1.0) / (params.kappa * dof_)), "NIW predictive scale");
  constant_ = std::lgamma(0.5 * (dof_ + d)) - std::lgamma(0.5 * dof_) - 0.5 * d * std::log(dof_ * std::numbers::pi) -
              0.5 * scale_.log_det();
}

double NiwPredictive::log_density(std::span<const double> x) const {
  const double d = static_cast<double>(mean_.size());
  const double m = scale_.mahalanobis(x, {mean_.data(), static_cast<std::size_t>(mean_.size())});
  return constant_ - 0.5 * (dof_ + d) * std::log1p(m / dof_);
}

NiwPosterior::NiwPosterior(const NiwParams& prior) : prior_(&prior) {
  if (prior.dim() == 0) return;
  kappa_ = prior.kappa;
  dof_ = prior.dof;
  mean_ = prior.mean;
  const SpdFactor f = SpdFactor::factor(prior.scale, "NIW prior scale");
  prior_log_det_ = f.log_det();
  log_det_ = prior_log_det_;
  inverse_ = f.inverse();
  u_.resize(mean_.size());
  w_.resize(mean_.size());
}

void NiwPosterior::add(std::span<const double> x) {
  ++count_;
  if (prior_->dim() == 0) return;
  const Eigen::Map<const Vector> v(x.data(), static_cast<Eigen::Index>(x.size()));
  u_ = v - mean_;
  rank_one(kappa_ / (kappa_ + 1.0));
  mean_ = (kappa_ * mean_ + v) / (kappa_ + 1.0);
  kappa_ += 1.0;
  dof_ += 1.0;
}

void NiwPosterior::remove(std::span<const double> x) {
  if (count_ == 0) throw std::logic_error("NIW posterior: remove from an empty set");
  --count_;
  if (prior_->dim() == 0) return;
  const Eigen::Map<const Vector> v(x.data(), static_cast<Eigen::Index>(x.size()));
  const double kappa = kappa_ - 1.0;
  mean_ = (kappa_ * mean_ - v) / kappa;
  u_ = v - mean_;
  kappa_ = kappa;
  dof_ -= 1.0;
  rank_one(-kappa / (kappa + 1.0));
}

// scale += c u u', with u in u_.
void NiwPosterior::rank_one(double c) {
  w_.noalias() = inverse_ * u_;
  const double denom = 1.0 + c * u_.dot(w_);
  log_det_ += std::log(denom);
  inverse_.noalias() -= (c / denom) * w_ * w_.transpose();
}

double NiwPosterior::log_predictive(std::span<const double> x) const {
  const std::size_t dim = prior_->dim();
  if (dim == 0) return 0.0;
  const auto d = static_cast<double>(dim);
  const Eigen::Map<const Vector> v(x.data(), static_cast<Eigen::Index>(x.size()));
  u_ = v - mean_;
  w_.noalias() = inverse_ * u_;
  const double c = kappa_ / (kappa_ + 1.0);
  return -0.5 * d * std::log(std::numbers::pi) + std::lgamma(0.5 * (dof_ + 1.0)) -
         std::lgamma(0.5 * (dof_ + 1.0 - d)) - 0.5 * log_det_ - 0.5 * (dof_ + 1.0) * std::log1p(c * u_.dot(w_)) +
         0.5 * d * std::log(c);
}

double NiwPosterior::log_marginal() const {
  const std::size_t dim = prior_->dim();
  if (dim == 0) return 0.0;
  const NiwParams& h = *prior_;
  const auto d = static_cast<double>(dim);
  const double n = static_cast<double>(count_);
  return -0.5 * n * d * std::log(std::numbers::pi) + log_multivariate_gamma(0.5 * dof_, dim) -
         log_multivariate_gamma(0.5 * h.dof, dim) + 0.5 * h.dof * prior_log_det_ - 0.5 * dof_ * log_det_ +
         0.5 * d * (std::log(h.kappa) - std::log(kappa_));
}

GaussianDraw sample_niw(const NiwParams& params, Rng& rng) {
  GaussianDraw draw;
  draw.covariance = sample_inverse_wishart(params.scale, params.dof, rng);
  const auto f = SpdFactor::factor(draw.covariance / params.kappa, "NIW mean covariance");
  draw.mean = sample_mvn(params.mean, f, rng);
  return draw;
}

std::vector<double> conjugate_update_dirichlet(std::span<const double> concentration,
                                               std::span<const std::size_t> counts) {
  if (concentration.size() != counts.size()) throw std::invalid_argument("Dirichlet update: length mismatch");
  std::vector<double> post(concentration.begin(), concentration.end());
  for (std::size_t k = 0; k < post.size(); ++k) post[k] += static_cast<double>(counts[k]);
  return post;
}

double dirichlet_log_marginal(std::span<const double> concentration, std::span<const std::size_t> counts) {
  double a_total = 0.0;
  double n_total = 0.0;
  double value = 0.0;
  for (std::size_t k = 0; k < concentration.size(); ++k) {
    const double nk = static_cast<double>(counts[k]);
    a_total += concentration[k];
    n_total += nk;
    value += std::lgamma(concentration[k] + nk) - std::lgamma(concentration[k]);
  }
  return value + std::lgamma(a_total) - std::lgamma(a_total + n_total);
}

std::vector<double> sample_dirichlet(std::span<const double> concentration, Rng& rng) {
  std::vector<double> draw(concentration.size());
  double total = 0.0;
  for (std::size_t k = 0; k < draw.size(); ++k) {
    draw[k] = rng.gamma(concentration[k], 1.0);
    total += draw[k];
  }
  if (!(total > 0.0)) {
    // All gammas underflowed (tiny concentrations): put the mass on one
    // category chosen in proportion to the concentrations.
    double a_total = 0.0;
    for (double a : concentration) a_total += a;
    double u = rng.uniform() * a_total;
    std::size_t pick = 0;
    for (; pick + 1 < draw.size() && u > concentration[pick]; ++pick) u -= concentration[pick];
    std::fill(draw.begin(), draw.end(), 0.0);
    draw[pick] = 1.0;
    return draw;
  }
  for (double& p : draw) p /= total;
  return draw;
}

}  // namespace stratify
