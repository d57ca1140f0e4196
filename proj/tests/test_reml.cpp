#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <random>

#include "cwce/errors.hpp"
#include "cwce/reml.hpp"
#include "doctest.h"

using namespace cwce;

namespace {

// dense-matrix restricted log-likelihood over the whole stacked panel; the
// independent oracle for the blocked evaluation
double dense_rll(const PanelView& view, const VarianceComponents& vc) {
  int n_obs = 0;
  for (const auto& b : view.blocks) n_obs += b.m;
  Eigen::MatrixXd x(n_obs, 4), z = Eigen::MatrixXd::Zero(n_obs, 3 * view.blocks.size());
  Eigen::VectorXd y(n_obs);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n_obs, n_obs);
  int row = 0;
  for (size_t i = 0; i < view.blocks.size(); ++i) {
    const auto& b = view.blocks[i];
    x.middleRows(row, b.m) = b.x;
    y.segment(row, b.m) = b.y;
    v.block(row, row, b.m, b.m) = b.z * vc.sigma_u * b.z.transpose() +
                                  vc.sigma * vc.sigma * Eigen::MatrixXd::Identity(b.m, b.m);
    row += b.m;
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(v);
  REQUIRE(llt.info() == Eigen::Success);
  double logdet = 0.0;
  for (int i = 0; i < n_obs; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  const Eigen::MatrixXd vix = llt.solve(x);
  const Eigen::VectorXd viy = llt.solve(y);
  const Eigen::Matrix4d xvx = x.transpose() * vix;
  const Eigen::Vector4d xvy = x.transpose() * viy;
  const Eigen::Vector4d beta = xvx.ldlt().solve(xvy);
  const double rss = y.dot(viy) - xvy.dot(beta);
  const double logdet_xvx = std::log(xvx.determinant());
  return -0.5 * (logdet + logdet_xvx + rss + (n_obs - 4) * std::log(2.0 * M_PI));
}

VarianceComponents truth_vc(const ScmParams& p) {
  VarianceComponents vc;
  vc.sigma_u = p.latent_cov();
  vc.sigma = p.sigma;
  return vc;
}

}  // namespace

TEST_CASE("restricted loglik: blocked equals dense on a small instance") {
  const ScmParams p = ScmParams::gaussian_example();
  const Panel panel = simulate_panel(p, 5, 4, 71);
  const PanelView view = make_panel_view(panel, ModelSpec{});
  const VarianceComponents vc = truth_vc(p);
  const double blocked = restricted_loglik(view, vc);
  const double dense = dense_rll(view, vc);
  CHECK(blocked == doctest::Approx(dense).epsilon(1e-9));
}

TEST_CASE("restricted loglik: serial and parallel agree bit-for-bit") {
  const ScmParams p = ScmParams::gaussian_example();
  const Panel panel = simulate_panel(p, 300, 10, 72);
  const PanelView view = make_panel_view(panel, ModelSpec{});
  const VarianceComponents vc = truth_vc(p);
  const double a = restricted_loglik(view, vc);
  const double b = restricted_loglik_serial(view, vc);
  CHECK(a == b);
}

TEST_CASE("restricted loglik: location invariance of the profiled objective") {
  const ScmParams p = ScmParams::gaussian_example();
  const Panel panel = simulate_panel(p, 40, 6, 73);
  PanelView view = make_panel_view(panel, ModelSpec{});
  const VarianceComponents vc = truth_vc(p);
  const double base = restricted_loglik(view, vc);
  for (auto& b : view.blocks) {
    b.y.array() += 50.0;
    b.zy = b.z.transpose() * b.y;
    b.xy = b.x.transpose() * b.y;
    b.yy = b.y.squaredNorm();
  }
  const double shifted = restricted_loglik(view, vc);
  CHECK(shifted == doctest::Approx(base).epsilon(1e-8));
}

TEST_CASE("restricted loglik: zero random parts reduce to the OLS restricted form") {
  ScmParams p = ScmParams::gaussian_example();
  p.tau0 = p.tau1 = p.tau2 = 0.0;
  const Panel panel = simulate_panel(p, 30, 5, 74);
  const PanelView view = make_panel_view(panel, ModelSpec{});
  VarianceComponents vc = truth_vc(p);
  vc.sigma = 1.3;

  // OLS restricted log-likelihood of the stacked regression, by hand
  const int n_obs = view.n_obs;
  Eigen::MatrixXd x(n_obs, 4);
  Eigen::VectorXd y(n_obs);
  int row = 0;
  for (const auto& b : view.blocks) {
    x.middleRows(row, b.m) = b.x;
    y.segment(row, b.m) = b.y;
    row += b.m;
  }
  const double s2 = vc.sigma * vc.sigma;
  const Eigen::Matrix4d xtx = x.transpose() * x;
  const Eigen::Vector4d beta = xtx.ldlt().solve(x.transpose() * y);
  const double rss = (y - x * beta).squaredNorm();
  const double expected = -0.5 * (n_obs * std::log(s2) + std::log((xtx / s2).determinant()) +
                                  rss / s2 + (n_obs - 4) * std::log(2.0 * M_PI));
  CHECK(restricted_loglik(view, vc) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("restricted loglik: -inf sentinel outside the feasible region") {
  const ScmParams p = ScmParams::gaussian_example();
  const Panel panel = simulate_panel(p, 10, 4, 75);
  const PanelView view = make_panel_view(panel, ModelSpec{});
  VarianceComponents vc = truth_vc(p);
  vc.sigma = 0.0;
  CHECK(restricted_loglik(view, vc) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("REML recovery at the large design") {
  const ScmParams p = ScmParams::gaussian_example();
  const Panel panel = simulate_panel(p, 1000, 100, 2025);
  const PanelView view = make_panel_view(panel, ModelSpec{});
  const RemlFit fit = fit_lmm_reml(view);
  REQUIRE(fit.converged);
  CHECK(std::fabs(fit.beta(1) - (-10.0)) < 0.5);
  CHECK(std::fabs(fit.beta(2) - (-5.0)) < 0.5);
  CHECK(std::fabs(fit.beta(3) - 5.0) < 0.5);
  CHECK(std::fabs(fit.tau1 - 10.0) < 1.0);
  CHECK(std::fabs(fit.tau2 - 5.0) < 1.0);
  CHECK(std::fabs(fit.sigma - 1.0) < 0.1);

  // ascent sanity: the optimum cannot be worse than the truth
  CHECK(fit.restricted_loglik >= restricted_loglik(view, truth_vc(p)) - 1e-6);
}

TEST_CASE("REML on log-normal outcomes (log scale)") {
  const ScmParams p = ScmParams::lognormal_example();
  const Panel panel = simulate_panel(p, 1000, 100, 2026);
  ModelSpec spec;
  spec.response_transform = ResponseTransform::Log;
  const RemlFit fit = fit_lmm_reml(make_panel_view(panel, spec));
  REQUIRE(fit.converged);
  CHECK(std::fabs(fit.beta(1) - (-0.2)) < 0.05);
  CHECK(std::fabs(fit.tau1 - 0.5) < 0.1);
  CHECK(std::fabs(fit.sigma - 0.25) < 0.02);
}

TEST_CASE("REML boundary: zero random slopes do not break the fit") {
  ScmParams p = ScmParams::gaussian_example();
  p.tau1 = 0.0;
  p.tau2 = 0.0;
  const Panel panel = simulate_panel(p, 500, 20, 2027);
  const RemlFit fit = fit_lmm_reml(make_panel_view(panel, ModelSpec{}));
  CHECK(fit.tau1 < 0.2);
  CHECK(fit.tau2 < 0.2);
  CHECK(std::isfinite(fit.restricted_loglik));
}

TEST_CASE("REML: permutation invariance of the estimates") {
  const ScmParams p = ScmParams::gaussian_example();
  const Panel panel = simulate_panel(p, 200, 10, 2028);
  Panel shuffled = panel;
  std::mt19937_64 mt(4);
  std::shuffle(shuffled.individuals.begin(), shuffled.individuals.end(), mt);

  const RemlFit a = fit_lmm_reml(make_panel_view(panel, ModelSpec{}));
  const RemlFit b = fit_lmm_reml(make_panel_view(shuffled, ModelSpec{}));
  for (int i = 0; i < 4; ++i) CHECK(std::fabs(a.beta(i) - b.beta(i)) < 1e-8);
  CHECK(std::fabs(a.tau0 - b.tau0) < 1e-8);
  CHECK(std::fabs(a.tau1 - b.tau1) < 1e-8);
  CHECK(std::fabs(a.tau2 - b.tau2) < 1e-8);
  CHECK(std::fabs(a.sigma - b.sigma) < 1e-8);
}

TEST_CASE("REML: unstructured covariance recovers a correlated truth") {
  ScmParams p = ScmParams::gaussian_example();
  p.latent_corr << 1.0, 0.4, 0.0, 0.4, 1.0, 0.2, 0.0, 0.2, 1.0;
  const Panel panel = simulate_panel(p, 800, 30, 2029);
  ModelSpec spec;
  spec.random_cov_structure = RandomCovStructure::Unstructured;
  const RemlFit fit = fit_lmm_reml(make_panel_view(panel, spec));
  REQUIRE(fit.converged);
  const Eigen::Matrix3d truth = p.latent_cov();
  CHECK(std::fabs(fit.sigma_u(0, 1) - truth(0, 1)) < 0.25 * truth(0, 1) + 5.0);
  CHECK(std::fabs(fit.tau1 - 10.0) < 1.5);
}

TEST_CASE("identifiability screen names the offending column") {
  ScmParams p = ScmParams::gaussian_example();
  p.alpha0 = -50.0;  // nobody ever exposed
  p.alpha1 = 0.0;
  const Panel panel = simulate_panel(p, 50, 5, 2030);
  try {
    fit_lmm_reml(make_panel_view(panel, ModelSpec{}));
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("a_{k-1}") != std::string::npos);
  }
}

TEST_CASE("naive pooled OLS: agreement without latent heterogeneity") {
  // REML tau-hats sit at the boundary up to sampling noise, so GLS and OLS
  // coincide to the acceptance tolerance at a large design
  ScmParams p = ScmParams::gaussian_example();
  p.tau0 = p.tau1 = p.tau2 = 0.0;
  const Panel panel = simulate_panel(p, 1000, 50, 2031);
  const PanelView view = make_panel_view(panel, ModelSpec{});
  const PooledFit naive = fit_naive_pooled(view);
  const RemlFit fit = fit_lmm_reml(view);
  for (int i = 0; i < 4; ++i) CHECK(std::fabs(naive.beta(i) - fit.beta(i)) < 1e-3);
}

TEST_CASE("naive pooled OLS is biased under latent heterogeneity") {
  const ScmParams p = ScmParams::gaussian_example();
  const Panel panel = simulate_panel(p, 1000, 100, 2032);
  const PooledFit naive = fit_naive_pooled(make_panel_view(panel, ModelSpec{}));
  const double ace = naive.implied_ace(1, 1);
  CHECK(ace > -12.0);
  CHECK(ace < -7.0);
}
