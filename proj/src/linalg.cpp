#include "stratify/linalg.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "stratify/errors.hpp"

namespace stratify {

std::optional<SpdFactor> SpdFactor::try_factor(const Matrix& m) {
  if (m.rows() != m.cols() || !m.allFinite()) return std::nullopt;
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) return std::nullopt;
  SpdFactor f;
  f.lower_ = llt.matrixL();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < f.lower_.rows(); ++i) {
    const double d = f.lower_(i, i);
    if (!(d > 0.0) || !std::isfinite(d)) return std::nullopt;
    log_det += std::log(d);
  }
  f.log_det_ = 2.0 * log_det;
  return f;
}

SpdFactor SpdFactor::factor(const Matrix& m, std::string_view context) {
  if (auto f = try_factor(m)) return *f;
  const double dim = static_cast<double>(std::max<Eigen::Index>(m.rows(), 1));
  Matrix jittered = m;
  jittered.diagonal().array() += 1e-8 * std::abs(m.trace()) / dim;
  if (auto f = try_factor(jittered)) return *f;
  throw NumericalError("Cholesky factorization failed for " + std::string(context));
}

double SpdFactor::mahalanobis(std::span<const double> x, std::span<const double> mu) const {
  const auto d = static_cast<Eigen::Index>(dim());
  // Forward substitution L z = x - mu on a small stack buffer.
  double buffer[16];
  std::vector<double> heap;
  double* z = buffer;
  if (d > 16) {
    heap.resize(static_cast<std::size_t>(d));
    z = heap.data();
  }
  double total = 0.0;
  const double* l = lower_.data();
  for (Eigen::Index i = 0; i < d; ++i) {
    double v = x[static_cast<std::size_t>(i)] - mu[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < i; ++k) v -= l[k * d + i] * z[k];
    v /= l[i * d + i];
    z[i] = v;
    total += v * v;
  }
  return total;
}

double SpdFactor::log_density(std::span<const double> x, std::span<const double> mu) const {
  return -0.5 * (static_cast<double>(dim()) * kLog2Pi + log_det_ + mahalanobis(x, mu));
}

Matrix SpdFactor::inverse() const {
  const auto d = lower_.rows();
  Matrix linv = lower_.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
  return linv.transpose() * linv;
}

double log_mvn_density(const Vector& x, const Vector& mu, const Matrix& sigma, std::string_view context) {
  if (x.size() != mu.size() || sigma.rows() != x.size() || sigma.cols() != x.size()) {
    throw NumericalError("dimension mismatch in log_mvn_density for " + std::string(context));
  }
  const auto f = SpdFactor::try_factor(sigma);
  if (!f) throw NumericalError("covariance is not positive definite for " + std::string(context));
  return f->log_density({x.data(), static_cast<std::size_t>(x.size())},
                        {mu.data(), static_cast<std::size_t>(mu.size())});
}

Vector sample_mvn(const Vector& mean, const SpdFactor& cov, Rng& rng) {
  Vector z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean + cov.lower().triangularView<Eigen::Lower>() * z;
}

Matrix sample_inverse_wishart(const Matrix& scale, double dof, Rng& rng) {
  const auto d = scale.rows();
  const auto scale_factor = SpdFactor::try_factor(scale);
  if (!scale_factor) throw NumericalError("inverse-Wishart scale matrix is not positive definite");
  // Bartlett factor of a standard Wishart draw.
  Matrix a = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(dof - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  // With scale = U U', the draw is (U A^{-T})(U A^{-T})'.
  const Matrix a_inv = a.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
  const Matrix b = scale_factor->lower() * a_inv.transpose();
  Matrix sigma = b * b.transpose();
  return 0.5 * (sigma + sigma.transpose());
}

double log_multivariate_gamma(double a, std::size_t d) {
  double total = 0.25 * static_cast<double>(d * (d - 1)) * std::log(std::numbers::pi);
  for (std::size_t j = 0; j < d; ++j) total += std::lgamma(a - 0.5 * static_cast<double>(j));
  return total;
}

}  // namespace stratify
