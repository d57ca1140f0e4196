#include "cwce/params.hpp"

#include <cmath>

#include "cwce/errors.hpp"

namespace cwce {

std::string to_string(ScmKind kind) {
  switch (kind) {
    case ScmKind::Crossover: return "crossover";
    case ScmKind::GaussianLmm: return "gaussian_lmm";
    case ScmKind::LogNormalLmm: return "lognormal_lmm";
    case ScmKind::TruncatedLmm: return "truncated_lmm";
  }
  throw ValidationError("unknown ScmKind");
}

ScmKind scm_kind_from_string(const std::string& name) {
  if (name == "crossover") return ScmKind::Crossover;
  if (name == "gaussian_lmm") return ScmKind::GaussianLmm;
  if (name == "lognormal_lmm") return ScmKind::LogNormalLmm;
  if (name == "truncated_lmm") return ScmKind::TruncatedLmm;
  throw ValidationError("unknown SCM kind name: " + name);
}

Eigen::Matrix3d ScmParams::latent_cov() const {
  Eigen::Vector3d tau(tau0, tau1, tau2);
  return tau.asDiagonal() * latent_corr * tau.asDiagonal();
}

Eigen::Matrix3d ScmParams::latent_chol() const {
  const Eigen::Matrix3d cov = latent_cov();
  Eigen::LLT<Eigen::Matrix3d> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  // PSD with zero variances: symmetric square root, lower-triangularized by
  // treating it as the simulation's mixing matrix directly.
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

bool ScmParams::identity_corr() const {
  return latent_corr.isIdentity(1e-14);
}

void ScmParams::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  for (double v : {mu, beta1, beta2, beta_c, alpha0, alpha1, alpha2, alpha3,
                   tau0, tau1, tau2, sigma, delta}) {
    if (!finite(v)) throw ValidationError("ScmParams: non-finite parameter");
  }
  if (tau0 < 0 || tau1 < 0 || tau2 < 0 || sigma < 0)
    throw ValidationError("ScmParams: tau0, tau1, tau2, sigma must be >= 0");

  if ((latent_corr - latent_corr.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw ValidationError("ScmParams: latent_corr not symmetric");
  for (int i = 0; i < 3; ++i)
    if (std::fabs(latent_corr(i, i) - 1.0) > 1e-12)
      throw ValidationError("ScmParams: latent_corr diagonal must be 1");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(latent_corr);
  if (es.eigenvalues().minCoeff() < -1e-10 * latent_corr.trace())
    throw ValidationError("ScmParams: latent_corr not positive semidefinite");

  if (kind != ScmKind::Crossover) {
    if (confounder_law.empty())
      throw ValidationError("ScmParams: confounder_law must not be empty");
    double total = 0.0;
    for (const auto& atom : confounder_law) {
      if (!finite(atom.value) || !finite(atom.prob) || atom.prob < 0)
        throw ValidationError("ScmParams: bad confounder atom");
      total += atom.prob;
    }
    if (std::fabs(total - 1.0) > 1e-12)
      throw ValidationError("ScmParams: confounder probabilities must sum to 1");
  }
}

ScmParams ScmParams::gaussian_example() {
  ScmParams p;
  p.kind = ScmKind::GaussianLmm;
  p.mu = 120.0;
  p.beta1 = -10.0;
  p.beta2 = -5.0;
  p.beta_c = 5.0;
  p.alpha0 = -3.0;
  p.alpha1 = 0.05;
  p.alpha2 = 1.0;
  p.alpha3 = 0.7;
  p.tau0 = 5.0;
  p.tau1 = 10.0;
  p.tau2 = 5.0;
  p.sigma = 1.0;
  p.confounder_law = {{0.7, 0.3}, {-0.3, 0.7}};
  return p;
}

ScmParams ScmParams::lognormal_example() {
  ScmParams p;
  p.kind = ScmKind::LogNormalLmm;
  p.mu = 0.0;
  p.beta1 = -0.2;
  p.beta2 = -0.1;
  p.beta_c = 4.0;
  p.alpha0 = -0.5;
  p.alpha1 = 0.01;
  p.alpha2 = 1.0;
  p.alpha3 = 0.7;
  p.tau0 = 0.25;
  p.tau1 = 0.5;
  p.tau2 = 0.25;
  p.sigma = 0.25;
  p.confounder_law = {{0.5, 0.5}, {-0.5, 0.5}};
  return p;
}

ScmParams ScmParams::truncated_example() {
  ScmParams p = gaussian_example();
  p.kind = ScmKind::TruncatedLmm;
  p.delta = 120.0;
  return p;
}

ScmParams ScmParams::crossover_example() {
  ScmParams p;
  p.kind = ScmKind::Crossover;
  p.mu = 120.0;
  p.tau0 = 5.0;
  p.beta1 = -10.0;  // mean treatment effect E[U_AY]
  p.tau1 = 10.0;    // sd of U_AY
  p.alpha0 = 0.0;   // assignment log odds; 0 => P(A1=1) = 1/2
  return p;
}

ScmParams ScmParams::preset(const std::string& name) {
  if (name == "gaussian-example") return gaussian_example();
  if (name == "lognormal-example") return lognormal_example();
  if (name == "truncated-example") return truncated_example();
  if (name == "crossover-example") return crossover_example();
  throw ValidationError("unknown ScmParams preset: " + name);
}

}  // namespace cwce
