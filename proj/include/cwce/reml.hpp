#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "cwce/panel.hpp"

namespace cwce {

enum class ResponseTransform { Identity, Log };
enum class RandomCovStructure { Diagonal, Unstructured };

// Fixed effects: intercept + lag-1 exposure + lag-2 exposure + lag-1
// confounder (the covariate entering the outcome assignment; zero at k = 1).
// Random effects: intercept + lag-1 slope + lag-2 slope.
struct ModelSpec {
  ResponseTransform response_transform = ResponseTransform::Identity;
  RandomCovStructure random_cov_structure = RandomCovStructure::Diagonal;
};

// Per-individual design blocks plus the cross-product sufficient statistics
// that the likelihood actually consumes.
struct IndivBlock {
  int m = 0;
  Eigen::MatrixXd x;  // m x 4
  Eigen::MatrixXd z;  // m x 3
  Eigen::VectorXd y;  // m
  Eigen::Matrix3d zz;
  Eigen::Matrix<double, 3, 4> zx;
  Eigen::Vector3d zy;
  Eigen::Matrix4d xx;
  Eigen::Vector4d xy;
  double yy = 0.0;
};

struct PanelView {
  std::vector<IndivBlock> blocks;
  int n_obs = 0;
  ModelSpec spec;
};

PanelView make_panel_view(const Panel& panel, const ModelSpec& spec);

struct VarianceComponents {
  Eigen::Matrix3d sigma_u = Eigen::Matrix3d::Zero();  // latent covariance
  double sigma = 1.0;                                 // residual sd
};

// Profiled restricted log-likelihood
//   -1/2 [ sum_i log|V_i| + log|sum_i X_i' V_i^-1 X_i| + sum_i r_i' V_i^-1 r_i
//          + (N - p) log 2 pi ]
// with V_i = Z_i Sigma Z_i' + sigma^2 I, r_i the GLS residuals at the
// profiled beta. Evaluated per individual through 3x3 Woodbury blocks and
// Cholesky solves; returns -infinity when a block is not positive definite.
// The parallel version computes per-individual contributions concurrently and
// reduces them in index order, so it is bit-identical to the serial one.
double restricted_loglik(const PanelView& view, const VarianceComponents& vc);
double restricted_loglik_serial(const PanelView& view, const VarianceComponents& vc);

// GLS fixed effects at fixed variance components.
Eigen::Vector4d gls_beta(const PanelView& view, const VarianceComponents& vc);

struct RemlOptions {
  int max_iter = 4000;
  double rel_tol = 1e-9;
  int polish_sweeps = 3;       // coordinate Brent passes after the simplex
  bool parallel = true;
};

struct RemlFit {
  Eigen::Vector4d beta = Eigen::Vector4d::Zero();  // (b0, b1, b2, bC)
  double tau0 = 0, tau1 = 0, tau2 = 0, sigma = 0;
  Eigen::Matrix3d sigma_u = Eigen::Matrix3d::Zero();
  double restricted_loglik = 0.0;
  bool converged = false;
  int n_iter = 0;
  double gradient_norm = 0.0;  // FD norm of the per-observation objective
  ModelSpec spec;

  VarianceComponents vc() const { return {sigma_u, sigma}; }
};

// Maximizes the restricted likelihood over log-sds (Diagonal) or a
// log-Cholesky parameterization (Unstructured) with Nelder-Mead followed by
// coordinate polish. Estimates below exp(-15) are reported as 0.
RemlFit fit_lmm_reml(const PanelView& view, const RemlOptions& opts = {});

// Pooled OLS with no random effects; the time-varying-confounding comparator.
struct PooledFit {
  Eigen::Vector4d beta = Eigen::Vector4d::Zero();

  double implied_ace(int lag1, int lag2) const { return lag1 * beta(1) + lag2 * beta(2); }
};

PooledFit fit_naive_pooled(const PanelView& view);

}  // namespace cwce
