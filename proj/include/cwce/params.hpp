#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace cwce {

enum class ScmKind { Crossover, GaussianLmm, LogNormalLmm, TruncatedLmm };

std::string to_string(ScmKind kind);
ScmKind scm_kind_from_string(const std::string& name);

struct ConfounderAtom {
  double value = 0.0;
  double prob = 0.0;
};

// Full parameter set of one structural assignment. Which fields are active
// depends on `kind`:
//   Crossover     -- mu, tau0 (baseline), beta1/tau1 (treatment effect
//                    U_AY ~ N(beta1, tau1^2)), alpha0 (assignment log odds)
//   GaussianLmm   -- everything except delta
//   LogNormalLmm  -- as GaussianLmm on the log scale; outcomes stored as exp
//   TruncatedLmm  -- GaussianLmm plus threshold delta for the indicator
struct ScmParams {
  ScmKind kind = ScmKind::GaussianLmm;

  double mu = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double beta_c = 0.0;

  double alpha0 = 0.0;
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  double alpha3 = 0.0;

  double tau0 = 0.0;
  double tau1 = 0.0;
  double tau2 = 0.0;
  double sigma = 0.0;

  Eigen::Matrix3d latent_corr = Eigen::Matrix3d::Identity();
  std::vector<ConfounderAtom> confounder_law;

  double delta = 0.0;  // TruncatedLmm only

  // diag(tau) * latent_corr * diag(tau)
  Eigen::Matrix3d latent_cov() const;

  // Lower-triangular square root of latent_cov(); falls back to a symmetric
  // eigenvalue square root when the Cholesky fails (exact zero taus).
  Eigen::Matrix3d latent_chol() const;

  bool identity_corr() const;

  void validate() const;  // throws ValidationError

  // Parameter sets of the four worked examples.
  static ScmParams gaussian_example();
  static ScmParams lognormal_example();
  static ScmParams truncated_example();
  static ScmParams crossover_example();
  static ScmParams preset(const std::string& name);
};

}  // namespace cwce
