#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string_view>

#include "stratify/rng.hpp"

namespace stratify {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kLog2Pi = 1.8378770664093454836;

// Lower Cholesky factor of a symmetric positive-definite matrix together with
// its log-determinant. Small dimensions dominate here, so density
// evaluation uses hand-rolled forward substitution.
class SpdFactor {
 public:
  SpdFactor() = default;

  static std::optional<SpdFactor> try_factor(const Matrix& m);
  // Retries once with 1e-8 * trace / dim added to the diagonal. Throws
  // NumericalError mentioning `context` when both attempts fail.
  static SpdFactor factor(const Matrix& m, std::string_view context);

  std::size_t dim() const { return static_cast<std::size_t>(lower_.rows()); }
  double log_det() const { return log_det_; }
  const Matrix& lower() const { return lower_; }

  // (x - mu)' M^{-1} (x - mu).
  double mahalanobis(std::span<const double> x, std::span<const double> mu) const;
  double log_density(std::span<const double> x, std::span<const double> mu) const;
  Matrix inverse() const;

 private:
  Matrix lower_;
  double log_det_ = 0.0;
};

// Multivariate normal log-density. Throws NumericalError when sigma is not
// SPD, naming `context` (e.g. the cluster) in the message.
double log_mvn_density(const Vector& x, const Vector& mu, const Matrix& sigma,
                       std::string_view context = "covariance");

Vector sample_mvn(const Vector& mean, const SpdFactor& cov, Rng& rng);

// Draw from IW(scale, dof) with density proportional to
// |S|^{-(dof + d + 1) / 2} exp(-tr(scale S^{-1}) / 2). Throws NumericalError
// if the scale matrix cannot be factored.
Matrix sample_inverse_wishart(const Matrix& scale, double dof, Rng& rng);

// log Gamma_d(a).
double log_multivariate_gamma(double a, std::size_t d);

}  // namespace stratify
