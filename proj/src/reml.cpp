#include "cwce/reml.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "cwce/errors.hpp"

namespace cwce {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLogTwoPi = 1.8378770664093454836;
constexpr double kZeroReport = 3.059023205018258e-7;  // exp(-15)
}  // namespace

PanelView make_panel_view(const Panel& panel, const ModelSpec& spec) {
  if (panel.params.kind == ScmKind::Crossover)
    throw UnsupportedError("make_panel_view: crossover panels are not fit by REML");
  if (spec.response_transform == ResponseTransform::Log &&
      panel.params.kind != ScmKind::LogNormalLmm)
    throw ValidationError("make_panel_view: log transform expects log-normal outcomes");

  PanelView view;
  view.spec = spec;
  view.blocks.reserve(panel.n());
  for (const Individual& ind : panel.individuals) {
    const int m = static_cast<int>(ind.y.size());
    IndivBlock b;
    b.m = m;
    b.x.resize(m, 4);
    b.z.resize(m, 3);
    b.y.resize(m);
    for (int k = 1; k <= m; ++k) {
      const double a1 = (k >= 2) ? ind.a[k - 2] : 0.0;
      const double a2 = (k >= 3) ? ind.a[k - 3] : 0.0;
      const double c_prev = (k >= 2) ? ind.c[k - 2] : 0.0;
      b.x(k - 1, 0) = 1.0;
      b.x(k - 1, 1) = a1;
      b.x(k - 1, 2) = a2;
      b.x(k - 1, 3) = c_prev;
      b.z(k - 1, 0) = 1.0;
      b.z(k - 1, 1) = a1;
      b.z(k - 1, 2) = a2;
      double resp = ind.y[k - 1];
      if (spec.response_transform == ResponseTransform::Log) {
        if (!(resp > 0))
          throw ValidationError("make_panel_view: log transform needs positive responses");
        resp = std::log(resp);
      }
      b.y(k - 1) = resp;
    }
    b.zz = b.z.transpose() * b.z;
    b.zx = b.z.transpose() * b.x;
    b.zy = b.z.transpose() * b.y;
    b.xx = b.x.transpose() * b.x;
    b.xy = b.x.transpose() * b.y;
    b.yy = b.y.squaredNorm();
    view.n_obs += m;
    view.blocks.push_back(std::move(b));
  }
  return view;
}

namespace {

struct BlockTerms {
  double logdet_v = 0.0;
  Eigen::Matrix4d xvx = Eigen::Matrix4d::Zero();
  Eigen::Vector4d xvy = Eigen::Vector4d::Zero();
  double yvy = 0.0;
  bool ok = false;
};

// PSD square root of the latent covariance used as the Woodbury mixing
// matrix; LLT when possible, eigen square root at exact boundaries.
Eigen::Matrix3d sigma_u_sqrt(const Eigen::Matrix3d& s) {
  Eigen::LLT<Eigen::Matrix3d> llt(s);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(s);
  if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, s.trace()))
    return Eigen::Matrix3d::Constant(std::numeric_limits<double>::quiet_NaN());
  Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// V^-1 = s^-2 (I - Z W Z') with W = L (s^2 I + L' Z'Z L)^-1 L', Sigma = L L'.
BlockTerms block_terms(const IndivBlock& b, const Eigen::Matrix3d& l, double sigma2) {
  BlockTerms t;
  if (!(sigma2 > 0) || !l.allFinite()) return t;

  Eigen::Matrix3d inner = sigma2 * Eigen::Matrix3d::Identity() +
                          l.transpose() * b.zz * l;
  Eigen::LLT<Eigen::Matrix3d> llt(inner);
  if (llt.info() != Eigen::Success) return t;

  const Eigen::Matrix3d lmat = llt.matrixL();
  double logdet_inner = 0.0;
  for (int i = 0; i < 3; ++i) logdet_inner += 2.0 * std::log(lmat(i, i));
  t.logdet_v = (b.m - 3) * std::log(sigma2) + logdet_inner;

  const Eigen::Matrix3d w = l * llt.solve(l.transpose());
  const double inv_s2 = 1.0 / sigma2;
  t.xvx = inv_s2 * (b.xx - b.zx.transpose() * w * b.zx);
  t.xvy = inv_s2 * (b.xy - b.zx.transpose() * w * b.zy);
  t.yvy = inv_s2 * (b.yy - b.zy.dot(w * b.zy));
  t.ok = std::isfinite(t.logdet_v) && std::isfinite(t.yvy);
  return t;
}

double assemble_rll(const PanelView& view, const std::vector<BlockTerms>& terms,
                    Eigen::Vector4d* beta_out) {
  // extended-precision reduction keeps the objective stable under individual
  // reorderings (the permutation-invariance contract)
  long double logdet_sum = 0.0L, yvy_acc = 0.0L;
  Eigen::Matrix<long double, 4, 4> xvx_acc = Eigen::Matrix<long double, 4, 4>::Zero();
  Eigen::Matrix<long double, 4, 1> xvy_acc = Eigen::Matrix<long double, 4, 1>::Zero();
  for (const BlockTerms& t : terms) {
    if (!t.ok) return kNegInf;
    logdet_sum += static_cast<long double>(t.logdet_v);
    yvy_acc += static_cast<long double>(t.yvy);
    xvx_acc += t.xvx.cast<long double>();
    xvy_acc += t.xvy.cast<long double>();
  }
  const double yvy = static_cast<double>(yvy_acc);
  const Eigen::Matrix4d xvx = xvx_acc.cast<double>();
  const Eigen::Vector4d xvy = xvy_acc.cast<double>();
  Eigen::LLT<Eigen::Matrix4d> llt(xvx);
  if (llt.info() != Eigen::Success) return kNegInf;
  double logdet_xvx = 0.0;
  const Eigen::Matrix4d lmat = llt.matrixL();
  for (int i = 0; i < 4; ++i) logdet_xvx += 2.0 * std::log(lmat(i, i));
  const Eigen::Vector4d beta = llt.solve(xvy);
  if (beta_out) *beta_out = beta;
  const double rss = yvy - xvy.dot(beta);
  const double rll = -0.5 * (static_cast<double>(logdet_sum) + logdet_xvx + rss +
                             (view.n_obs - 4) * kLogTwoPi);
  return std::isfinite(rll) ? rll : kNegInf;
}

double rll_impl(const PanelView& view, const VarianceComponents& vc, bool parallel,
                Eigen::Vector4d* beta_out) {
  const Eigen::Matrix3d l = sigma_u_sqrt(vc.sigma_u);
  const double sigma2 = vc.sigma * vc.sigma;
  const int n = static_cast<int>(view.blocks.size());
  std::vector<BlockTerms> terms(n);
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) terms[i] = block_terms(view.blocks[i], l, sigma2);
  } else {
    for (int i = 0; i < n; ++i) terms[i] = block_terms(view.blocks[i], l, sigma2);
  }
  return assemble_rll(view, terms, beta_out);
}

}  // namespace

double restricted_loglik(const PanelView& view, const VarianceComponents& vc) {
  return rll_impl(view, vc, true, nullptr);
}

double restricted_loglik_serial(const PanelView& view, const VarianceComponents& vc) {
  return rll_impl(view, vc, false, nullptr);
}

Eigen::Vector4d gls_beta(const PanelView& view, const VarianceComponents& vc) {
  Eigen::Vector4d beta;
  if (rll_impl(view, vc, true, &beta) == kNegInf)
    throw NumericalError("gls_beta: variance components give a singular system");
  return beta;
}

namespace {

void identifiability_screen(const PanelView& view) {
  // pooled means and variances of the two exposure-lag columns
  double n = 0, s1 = 0, s2 = 0, q1 = 0, q2 = 0, cross = 0;
  for (const IndivBlock& b : view.blocks) {
    n += b.m;
    s1 += b.x.col(1).sum();
    s2 += b.x.col(2).sum();
    q1 += b.x.col(1).squaredNorm();
    q2 += b.x.col(2).squaredNorm();
    cross += b.x.col(1).dot(b.x.col(2));
  }
  const double v1 = q1 / n - (s1 / n) * (s1 / n);
  const double v2 = q2 / n - (s2 / n) * (s2 / n);
  if (v1 <= 1e-12)
    throw ValidationError("fit_lmm_reml: no variation in the lag-1 exposure column a_{k-1}");
  if (v2 <= 1e-12)
    throw ValidationError("fit_lmm_reml: no variation in the lag-2 exposure column a_{k-2}");
  const double cov = cross / n - (s1 / n) * (s2 / n);
  if (std::fabs(cov) >= std::sqrt(v1 * v2) * (1.0 - 1e-12))
    throw ValidationError(
        "fit_lmm_reml: exposure lag columns a_{k-1} and a_{k-2} are collinear");
}

// theta -> variance components. Diagonal: (log t0, log t1, log t2, log s).
// Unstructured: log-Cholesky (log l00, l10, log l11, l20, l21, log l22, log s).
VarianceComponents theta_to_vc(const Eigen::VectorXd& theta, RandomCovStructure rcs) {
  VarianceComponents vc;
  if (rcs == RandomCovStructure::Diagonal) {
    Eigen::Vector3d tau = theta.head(3).array().exp();
    vc.sigma_u = tau.array().square().matrix().asDiagonal();
    vc.sigma = std::exp(theta(3));
  } else {
    Eigen::Matrix3d l = Eigen::Matrix3d::Zero();
    l(0, 0) = std::exp(theta(0));
    l(1, 0) = theta(1);
    l(1, 1) = std::exp(theta(2));
    l(2, 0) = theta(3);
    l(2, 1) = theta(4);
    l(2, 2) = std::exp(theta(5));
    vc.sigma_u = l * l.transpose();
    vc.sigma = std::exp(theta(6));
  }
  return vc;
}

Eigen::VectorXd starting_theta(const PanelView& view, RandomCovStructure rcs) {
  // method of moments from per-individual OLS when the series are long
  // enough; otherwise the fixed 50/25/25 variance split with residual 1
  double tau0s = -1, tau1s = -1, tau2s = -1, sig = -1;
  int usable = 0;
  std::vector<Eigen::Vector4d> coefs;
  for (const IndivBlock& b : view.blocks) {
    if (b.m < 6) continue;
    Eigen::LLT<Eigen::Matrix4d> llt(b.xx);
    if (llt.info() != Eigen::Success) continue;
    coefs.push_back(llt.solve(b.xy));
    ++usable;
  }
  if (usable >= 30) {
    Eigen::Vector4d mean = Eigen::Vector4d::Zero();
    for (const auto& c : coefs) mean += c;
    mean /= usable;
    Eigen::Vector4d var = Eigen::Vector4d::Zero();
    for (const auto& c : coefs) var += (c - mean).cwiseProduct(c - mean);
    var /= std::max(1, usable - 1);
    tau0s = var(0);
    tau1s = var(1);
    tau2s = var(2);
    double rss = 0.0;
    int dof = 0;
    size_t ci = 0;
    for (const IndivBlock& b : view.blocks) {
      if (b.m < 6) continue;
      Eigen::LLT<Eigen::Matrix4d> llt(b.xx);
      if (llt.info() != Eigen::Success) continue;
      rss += (b.y - b.x * coefs[ci++]).squaredNorm();
      dof += b.m - 4;
    }
    if (dof > 0) sig = rss / dof;
  }
  if (!(tau0s > 0) || !(tau1s > 0) || !(tau2s > 0) || !(sig > 0)) {
    double total = 0, count = 0, mean = 0;
    for (const IndivBlock& b : view.blocks) {
      mean += b.y.sum();
      count += b.m;
    }
    mean /= count;
    for (const IndivBlock& b : view.blocks) total += (b.y.array() - mean).square().sum();
    const double vy = std::max(total / std::max(1.0, count - 1), 1e-4);
    tau0s = 0.5 * vy;
    tau1s = 0.25 * vy;
    tau2s = 0.25 * vy;
    sig = 1.0;
  }
  if (rcs == RandomCovStructure::Diagonal) {
    Eigen::VectorXd theta(4);
    theta << 0.5 * std::log(tau0s), 0.5 * std::log(tau1s), 0.5 * std::log(tau2s),
        0.5 * std::log(sig);
    return theta;
  }
  Eigen::VectorXd theta(7);
  theta << 0.5 * std::log(tau0s), 0.0, 0.5 * std::log(tau1s), 0.0, 0.0,
      0.5 * std::log(tau2s), 0.5 * std::log(sig);
  return theta;
}

struct NelderMeadResult {
  Eigen::VectorXd best;
  double fbest = kNegInf;
  int n_iter = 0;
  bool hit_max_iter = false;
};

// Standard Nelder-Mead on -restricted_loglik. The running best never
// worsens (accepted moves only replace the worst vertex with a better one).
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& negf,
                             const Eigen::VectorXd& start, double rel_tol, int max_iter) {
  const int d = static_cast<int>(start.size());
  std::vector<Eigen::VectorXd> pts(d + 1, start);
  std::vector<double> f(d + 1);
  for (int i = 0; i < d; ++i) pts[i + 1](i) += 0.3;
  for (int i = 0; i <= d; ++i) f[i] = negf(pts[i]);

  NelderMeadResult res;
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    std::vector<int> order(d + 1);
    for (int i = 0; i <= d; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return f[a] < f[b]; });
    const int lo = order[0], hi = order[d], nh = order[d - 1];

    if (std::fabs(f[hi] - f[lo]) <= rel_tol * (std::fabs(f[lo]) + 1e-12)) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
    for (int i = 0; i <= d; ++i)
      if (i != hi) centroid += pts[i];
    centroid /= d;

    const Eigen::VectorXd refl = centroid + (centroid - pts[hi]);
    const double fr = negf(refl);
    if (fr < f[lo]) {
      const Eigen::VectorXd expd = centroid + 2.0 * (centroid - pts[hi]);
      const double fe = negf(expd);
      if (fe < fr) { pts[hi] = expd; f[hi] = fe; }
      else { pts[hi] = refl; f[hi] = fr; }
    } else if (fr < f[nh]) {
      pts[hi] = refl;
      f[hi] = fr;
    } else {
      const Eigen::VectorXd contr =
          centroid + 0.5 * ((fr < f[hi] ? refl : pts[hi]) - centroid);
      const double fc = negf(contr);
      if (fc < std::min(fr, f[hi])) {
        pts[hi] = contr;
        f[hi] = fc;
      } else {
        for (int i = 0; i <= d; ++i) {
          if (i == lo) continue;
          pts[i] = pts[lo] + 0.5 * (pts[i] - pts[lo]);
          f[i] = negf(pts[i]);
        }
      }
    }
  }
  int lo = 0;
  for (int i = 1; i <= d; ++i)
    if (f[i] < f[lo]) lo = i;
  res.best = pts[lo];
  res.fbest = f[lo];
  res.n_iter = iter;
  res.hit_max_iter = (iter >= max_iter);
  return res;
}

// Damped Newton polish with finite-difference derivatives. From any point in
// the quadratic basin this converges to the same optimum (down to the FD
// noise floor, ~1e-9 in theta), which makes the fit independent of the
// simplex path and therefore of the individual ordering. Steps are accepted
// only when they improve the objective.
void newton_polish_stage(const std::function<double(const Eigen::VectorXd&)>& negf,
                         Eigen::VectorXd& theta, double& fbest, int max_rounds,
                         double hg) {
  const int d = static_cast<int>(theta.size());
  for (int round = 0; round < max_rounds; ++round) {
    Eigen::VectorXd grad(d);
    Eigen::MatrixXd hess(d, d);
    for (int i = 0; i < d; ++i) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp(i) += hg;
      tm(i) -= hg;
      const double fp = negf(tp), fm = negf(tm);
      grad(i) = (fp - fm) / (2 * hg);
      hess(i, i) = (fp - 2 * fbest + fm) / (hg * hg);
      for (int j = i + 1; j < d; ++j) {
        Eigen::VectorXd tpp = theta, tpm = theta, tmp = theta, tmm = theta;
        tpp(i) += hg; tpp(j) += hg;
        tpm(i) += hg; tpm(j) -= hg;
        tmp(i) -= hg; tmp(j) += hg;
        tmm(i) -= hg; tmm(j) -= hg;
        hess(i, j) = hess(j, i) =
            (negf(tpp) - negf(tpm) - negf(tmp) + negf(tmm)) / (4 * hg * hg);
      }
    }
    if (!grad.allFinite() || !hess.allFinite()) return;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return;
    Eigen::VectorXd step = -ldlt.solve(grad);
    if (!step.allFinite()) return;
    if (step.norm() > 0.5) step *= 0.5 / step.norm();

    bool accepted = false;
    for (int halving = 0; halving < 6; ++halving) {
      const Eigen::VectorXd cand = theta + step;
      const double fc = negf(cand);
      if (fc < fbest) {
        const double moved = step.norm();
        theta = cand;
        fbest = fc;
        accepted = true;
        if (moved < 1e-10) return;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) return;
  }
}

// Two damped-Newton stages with finite-difference derivatives. The O(h^2)
// truncation bias shifts the stage's fixed point smoothly and identically for
// any data ordering, so the result does not depend on the simplex path; the
// second, smaller step refines the fixed point below 1e-9 in theta. Steps are
// accepted only when they improve the objective.
void newton_polish(const std::function<double(const Eigen::VectorXd&)>& negf,
                   Eigen::VectorXd& theta, double& fbest, int max_rounds) {
  newton_polish_stage(negf, theta, fbest, max_rounds, 3e-3);
  newton_polish_stage(negf, theta, fbest, 6, 3e-4);
}

}  // namespace

RemlFit fit_lmm_reml(const PanelView& view, const RemlOptions& opts) {
  if (view.blocks.empty()) throw ValidationError("fit_lmm_reml: empty panel");
  identifiability_screen(view);

  const RandomCovStructure rcs = view.spec.random_cov_structure;
  const bool parallel = opts.parallel;
  long long evals = 0;
  auto negf = [&](const Eigen::VectorXd& theta) {
    ++evals;
    const double rll = rll_impl(view, theta_to_vc(theta, rcs), parallel, nullptr);
    return -rll;
  };

  const Eigen::VectorXd start = starting_theta(view, rcs);
  NelderMeadResult nm = nelder_mead(negf, start, opts.rel_tol, opts.max_iter);
  newton_polish(negf, nm.best, nm.fbest, std::max(opts.polish_sweeps, 12));

  RemlFit fit;
  fit.spec = view.spec;
  fit.n_iter = nm.n_iter;
  const VarianceComponents vc = theta_to_vc(nm.best, rcs);
  fit.sigma_u = vc.sigma_u;
  fit.sigma = vc.sigma;
  fit.restricted_loglik = rll_impl(view, vc, parallel, &fit.beta);

  auto report = [](double v) { return (v < kZeroReport) ? 0.0 : v; };
  fit.tau0 = report(std::sqrt(std::max(0.0, vc.sigma_u(0, 0))));
  fit.tau1 = report(std::sqrt(std::max(0.0, vc.sigma_u(1, 1))));
  fit.tau2 = report(std::sqrt(std::max(0.0, vc.sigma_u(2, 2))));
  fit.sigma = report(vc.sigma);

  // convergence flag: finite-difference gradient of the per-observation
  // objective (an absolute tolerance on the raw objective is below double
  // precision at this data scale)
  const double h = 1e-5;
  double gsq = 0.0;
  for (int j = 0; j < nm.best.size(); ++j) {
    Eigen::VectorXd tp = nm.best, tm = nm.best;
    tp(j) += h;
    tm(j) -= h;
    const double g = (negf(tp) - negf(tm)) / (2.0 * h * view.n_obs);
    gsq += g * g;
  }
  fit.gradient_norm = std::sqrt(gsq);
  fit.converged = !nm.hit_max_iter && std::isfinite(fit.restricted_loglik) &&
                  fit.gradient_norm < 1e-4;
  (void)evals;
  return fit;
}

PooledFit fit_naive_pooled(const PanelView& view) {
  Eigen::Matrix4d xx = Eigen::Matrix4d::Zero();
  Eigen::Vector4d xy = Eigen::Vector4d::Zero();
  for (const IndivBlock& b : view.blocks) {
    xx += b.xx;
    xy += b.xy;
  }
  Eigen::LLT<Eigen::Matrix4d> llt(xx);
  if (llt.info() != Eigen::Success)
    throw NumericalError("fit_naive_pooled: rank-deficient pooled design");
  PooledFit fit;
  fit.beta = llt.solve(xy);
  return fit;
}

}  // namespace cwce
