#pragma once

#include <Eigen/Dense>
#include <functional>
#include <utility>
#include <vector>

#include "cwce/params.hpp"

namespace cwce {

struct MvnDist {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  int dim() const { return static_cast<int>(mean.size()); }
  void validate() const;  // symmetry within 1e-10, PSD within -1e-10*trace
};

// Z has one row per repeat k: (1, a_{k-1}, a_{k-2}) with a_j = 0 for j < 1.
// mu_y[k-1] is the marginal outcome mean: mu + C_{k-1} beta_c + a_{k-1} beta1
// + a_{k-2} beta2, with no confounder term at k = 1.
struct DesignMatrices {
  Eigen::MatrixXd z;
  Eigen::VectorXd mu_y;
};

DesignMatrices build_design(const ScmParams& params,
                            const std::vector<int>& exposures,
                            const std::vector<double>& confounders);

// Joint law of (U0, U1, U2, Y_1..Y_h) given exposures and confounders:
// mean (0, mu_y), covariance [[S, S Z^T], [Z S, Z S Z^T + sigma^2 I]] with
// S = diag(tau) * latent_corr * diag(tau). For LogNormalLmm this is the
// log-scale law.
MvnDist build_marginal_moments(const ScmParams& params,
                               const std::vector<int>& exposures,
                               const std::vector<double>& confounders);

// Gaussian conditioning by Schur complement. Cholesky solves on the observed
// block with a graduated jitter ladder (0, 1e-12, 1e-10, 1e-8 x trace/dim);
// throws NumericalError if the block stays singular. Returns the law of the
// unobserved coordinates in their original relative order.
MvnDist condition_gaussian(const MvnDist& joint,
                           const std::vector<int>& observed_idx,
                           const Eigen::VectorXd& observed_values);

// Lower Cholesky factor with the same jitter ladder as condition_gaussian.
Eigen::MatrixXd chol_lower_jittered(const Eigen::MatrixXd& m);

double std_normal_pdf(double x);
double std_normal_cdf(double x);  // erfc based

// P(X > dh, Y > dk) for a standard bivariate normal with correlation rho.
// Port of the Gauss-Legendre scheme of Genz (2004), double-precision node
// sets selected by |rho|; |error| < 5e-16 claimed for the original.
double bvn_upper(double dh, double dk, double rho);

// P(lower <= X <= upper) componentwise for an arbitrary bivariate normal.
// Bounds may be +-infinity; degenerate (zero variance) coordinates collapse
// to indicators on the mean.
double bvn_rect_prob(const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov,
                     const Eigen::Vector2d& lower, const Eigen::Vector2d& upper);

// Probabilists' Gauss-Hermite rule: nodes of He_n and weights normalized to
// the N(0,1) probability measure (weights sum to 1). order in [2, 64].
std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite_nodes(int order);

// Tensor-product quadrature of f against an MVN (dim <= 3), whitened through
// the Cholesky factor of cov.
double mvn_quadrature(const MvnDist& dist,
                      const std::function<double(const Eigen::VectorXd&)>& f,
                      int order = 32);

}  // namespace cwce
