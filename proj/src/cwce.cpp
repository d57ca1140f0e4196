#include "cwce/cwce.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cwce/errors.hpp"
#include "cwce/rng.hpp"

namespace cwce {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void History::validate() const {
  if (h < 0) throw DimensionError("History: negative horizon");
  if (static_cast<int>(a.size()) != h || static_cast<int>(c.size()) != h ||
      static_cast<int>(y.size()) != h)
    throw DimensionError("History: field lengths must equal h");
  for (int v : a)
    if (v != 0 && v != 1) throw ValidationError("History: exposures must be 0/1");
  for (double v : c)
    if (!std::isfinite(v)) throw ValidationError("History: non-finite confounder");
}

History history_of(const Individual& ind, const ScmParams& params, int h) {
  if (h < 1 || h > static_cast<int>(ind.y.size()))
    throw DimensionError("history_of: h outside 1..m");
  History hist;
  hist.h = h;
  hist.a.assign(ind.a.begin(), ind.a.begin() + h);
  hist.c.assign(ind.c.begin(), ind.c.begin() + h);
  hist.y.assign(ind.y.begin(), ind.y.begin() + h);
  if (params.kind == ScmKind::Crossover)
    hist.y[0] = std::numeric_limits<double>::quiet_NaN();  // Y1 not measured
  return hist;
}

// ---------------------------------------------------------------------------
// CwceDistribution

CwceDistribution CwceDistribution::make_gaussian(double mean, double var) {
  if (!std::isfinite(mean) || !std::isfinite(var))
    throw ValidationError("CwceDistribution: non-finite Gaussian parameters");
  if (var < 0) {
    if (var < -1e-12) throw ValidationError("CwceDistribution: negative variance");
    var = 0.0;
  }
  CwceDistribution d;
  d.kind_ = Kind::Gaussian;
  d.mean_ = mean;
  d.var_ = var;
  return d;
}

CwceDistribution CwceDistribution::make_grid(std::vector<double> points,
                                             std::vector<double> density) {
  if (points.size() != density.size() || points.size() < 2)
    throw DimensionError("CwceDistribution: grid needs >= 2 matching points");
  double integral = 0.0;
  for (size_t i = 0; i + 1 < points.size(); ++i) {
    if (!(points[i + 1] > points[i]))
      throw ValidationError("CwceDistribution: grid points must increase");
    if (density[i] < 0) {
      if (density[i] < -1e-12) throw ValidationError("CwceDistribution: negative density");
      density[i] = 0.0;
    }
    integral += 0.5 * (density[i] + density[i + 1]) * (points[i + 1] - points[i]);
  }
  if (density.back() < 0) density.back() = 0.0;
  if (std::fabs(integral - 1.0) > 1e-6)
    throw ValidationError("CwceDistribution: grid density must integrate to 1");
  CwceDistribution d;
  d.kind_ = Kind::Grid;
  d.points_ = std::move(points);
  d.density_ = std::move(density);
  return d;
}

CwceDistribution CwceDistribution::make_discrete(double pm, double p0, double pp) {
  for (double* v : {&pm, &p0, &pp}) {
    if (*v < 0) {
      if (*v < -1e-12) throw ValidationError("CwceDistribution: negative pmf entry");
      *v = 0.0;
    }
  }
  if (std::fabs(pm + p0 + pp - 1.0) > 1e-12)
    throw ValidationError("CwceDistribution: discrete pmf must sum to 1");
  CwceDistribution d;
  d.kind_ = Kind::Discrete;
  d.p_[0] = pm;
  d.p_[1] = p0;
  d.p_[2] = pp;
  return d;
}

CwceDistribution CwceDistribution::make_degenerate(double value) {
  if (!std::isfinite(value)) throw ValidationError("CwceDistribution: non-finite value");
  CwceDistribution d;
  d.kind_ = Kind::Degenerate;
  d.mean_ = value;
  return d;
}

double CwceDistribution::mean() const {
  switch (kind_) {
    case Kind::Gaussian:
    case Kind::Degenerate: return mean_;
    case Kind::Discrete: return p_[2] - p_[0];
    case Kind::Grid: {
      double m = 0.0;
      for (size_t i = 0; i + 1 < points_.size(); ++i) {
        const double dx = points_[i + 1] - points_[i];
        m += 0.5 * dx * (points_[i] * density_[i] + points_[i + 1] * density_[i + 1]);
      }
      return m;
    }
  }
  return 0.0;
}

double CwceDistribution::variance() const {
  switch (kind_) {
    case Kind::Gaussian: return var_;
    case Kind::Degenerate: return 0.0;
    case Kind::Discrete: {
      const double m = mean();
      return p_[0] * (-1 - m) * (-1 - m) + p_[1] * m * m + p_[2] * (1 - m) * (1 - m);
    }
    case Kind::Grid: {
      const double m = mean();
      double v = 0.0;
      for (size_t i = 0; i + 1 < points_.size(); ++i) {
        const double dx = points_[i + 1] - points_[i];
        const double f0 = (points_[i] - m) * (points_[i] - m) * density_[i];
        const double f1 = (points_[i + 1] - m) * (points_[i + 1] - m) * density_[i + 1];
        v += 0.5 * dx * (f0 + f1);
      }
      return v;
    }
  }
  return 0.0;
}

double CwceDistribution::mode() const {
  switch (kind_) {
    case Kind::Gaussian:
    case Kind::Degenerate: return mean_;
    case Kind::Discrete: {
      // ties break toward 0 (no effect); an exact tie between -1 and +1
      // alone also falls back to 0
      if (p_[1] >= p_[0] && p_[1] >= p_[2]) return 0.0;
      if (p_[0] > p_[2]) return -1.0;
      if (p_[2] > p_[0]) return 1.0;
      return 0.0;
    }
    case Kind::Grid: {
      if (points_.empty()) throw ValidationError("CwceDistribution: empty grid");
      size_t best = 0;
      for (size_t i = 1; i < density_.size(); ++i)
        if (density_[i] > density_[best]) best = i;
      return points_[best];
    }
  }
  return 0.0;
}

double CwceDistribution::cdf(double x) const {
  switch (kind_) {
    case Kind::Degenerate: return x >= mean_ ? 1.0 : 0.0;
    case Kind::Gaussian: {
      const double sd = std::sqrt(var_);
      if (sd == 0.0) return x >= mean_ ? 1.0 : 0.0;
      return std_normal_cdf((x - mean_) / sd);
    }
    case Kind::Discrete: {
      double total = 0.0;
      if (x >= -1) total += p_[0];
      if (x >= 0) total += p_[1];
      if (x >= 1) total += p_[2];
      return total;
    }
    case Kind::Grid: {
      if (x <= points_.front()) return 0.0;
      double total = 0.0;
      for (size_t i = 0; i + 1 < points_.size(); ++i) {
        const double x1 = points_[i + 1];
        if (x >= x1) {
          total += 0.5 * (density_[i] + density_[i + 1]) * (x1 - points_[i]);
        } else {
          const double t = (x - points_[i]) / (x1 - points_[i]);
          const double fx = density_[i] + t * (density_[i + 1] - density_[i]);
          total += 0.5 * (density_[i] + fx) * (x - points_[i]);
          break;
        }
      }
      return std::min(total, 1.0);
    }
  }
  return 0.0;
}

double CwceDistribution::density_at(double x) const {
  if (kind_ == Kind::Gaussian) {
    const double sd = std::sqrt(var_);
    if (sd == 0.0) throw UnsupportedError("density_at: degenerate Gaussian");
    return std_normal_pdf((x - mean_) / sd) / sd;
  }
  if (kind_ == Kind::Grid) {
    if (x < points_.front() || x > points_.back()) return 0.0;
    const auto it = std::upper_bound(points_.begin(), points_.end(), x);
    const size_t i = std::min(points_.size() - 2,
                              static_cast<size_t>(std::max<std::ptrdiff_t>(
                                  0, it - points_.begin() - 1)));
    const double t = (x - points_[i]) / (points_[i + 1] - points_[i]);
    return density_[i] + t * (density_[i + 1] - density_[i]);
  }
  throw UnsupportedError("density_at: only Gaussian/Grid have densities");
}

// ---------------------------------------------------------------------------
// Shared posterior machinery

namespace {

void require_lmm_kind(const ScmParams& params, const char* what) {
  if (params.kind == ScmKind::Crossover)
    throw UnsupportedError(std::string(what) + ": not defined for the crossover kind");
}

// History outcomes on the conditioning (log for LogNormal) scale.
std::vector<double> underlying_y(const ScmParams& params, const History& hist) {
  std::vector<double> out(hist.y.size());
  for (size_t i = 0; i < hist.y.size(); ++i) {
    const double v = hist.y[i];
    if (!std::isfinite(v)) throw ValidationError("History: non-finite outcome");
    if (params.kind == ScmKind::LogNormalLmm) {
      if (v <= 0) throw ValidationError("History: log-normal outcomes must be positive");
      out[i] = std::log(v);
    } else {
      out[i] = v;
    }
  }
  return out;
}

}  // namespace

MvnDist latent_posterior(const ScmParams& params, const History& hist) {
  require_lmm_kind(params, "latent_posterior");
  hist.validate();
  if (hist.h == 0) {
    MvnDist prior;
    prior.mean = Eigen::Vector3d::Zero();
    prior.cov = params.latent_cov();
    return prior;
  }
  const std::vector<double> ylog = underlying_y(params, hist);
  const MvnDist joint = build_marginal_moments(params, hist.a, hist.c);
  std::vector<int> obs(hist.h);
  Eigen::VectorXd vals(hist.h);
  for (int i = 0; i < hist.h; ++i) {
    obs[i] = 3 + i;
    vals(i) = ylog[i];
  }
  return condition_gaussian(joint, obs, vals);
}

namespace {

// Law of (G1, G2) = underlying-scale cross-world potential outcomes
// (Y_k^a, Y_k^0) | H_h. Residual mode (k <= h) pins the time-k noise through
// the observed outcome; future mode (k = h+1) adds a fresh sigma^2 component
// common to both worlds.
struct CrossWorldGaussian {
  Eigen::Vector2d mean;
  Eigen::Matrix2d cov;
};

CrossWorldGaussian cross_world_gaussian(const ScmParams& params, const History& hist,
                                        int k, const ExposureRegime& regime) {
  require_lmm_kind(params, "cross_world_gaussian");
  hist.validate();
  regime.validate();
  if (k < 1) throw DimensionError("cross-world law: k must be >= 1");
  if (static_cast<int>(regime.a.size()) < k - 1)
    throw DimensionError("cross-world law: regime shorter than k-1");
  if (k > hist.h + 1)
    throw UnsupportedError(
        "cross-world law: k beyond h+1 (lag confounder unobserved)");

  const int a1 = regime.lag(k, 1);
  const int a2 = regime.lag(k, 2);
  const MvnDist post = latent_posterior(params, hist);

  Eigen::Matrix<double, 2, 3> x;
  Eigen::Vector2d base;
  Eigen::Matrix2d extra = Eigen::Matrix2d::Zero();
  if (k <= hist.h) {
    const int f1 = (k >= 2) ? hist.a[k - 2] : 0;  // factual A_{k-1}
    const int f2 = (k >= 3) ? hist.a[k - 3] : 0;  // factual A_{k-2}
    const double yk = underlying_y(params, hist)[k - 1];
    x << 0, a1 - f1, a2 - f2,
         0, -f1, -f2;
    base << yk + (a1 - f1) * params.beta1 + (a2 - f2) * params.beta2,
            yk - f1 * params.beta1 - f2 * params.beta2;
  } else {
    const double c_prev = (k >= 2) ? hist.c[k - 2] : 0.0;
    const double m0 = params.mu + ((k >= 2) ? c_prev * params.beta_c : 0.0);
    x << 1, a1, a2,
         1, 0, 0;
    base << m0 + a1 * params.beta1 + a2 * params.beta2, m0;
    extra.setConstant(params.sigma * params.sigma);  // shared fresh noise
  }

  CrossWorldGaussian out;
  out.mean = base + x * post.mean;
  Eigen::Matrix2d cov = x * post.cov * x.transpose() + extra;
  out.cov = 0.5 * (cov + cov.transpose());
  return out;
}

}  // namespace

CwceDistribution cwce_gaussian(const History& hist, const ScmParams& params, int k,
                               const ExposureRegime& regime) {
  if (params.kind != ScmKind::GaussianLmm)
    throw UnsupportedError("cwce_gaussian: params.kind must be GaussianLmm");
  hist.validate();
  regime.validate();
  if (k < 2) throw DimensionError("cwce_gaussian: k must be >= 2");
  if (static_cast<int>(regime.a.size()) < k - 1)
    throw DimensionError("cwce_gaussian: regime shorter than k-1");

  const int a1 = regime.lag(k, 1);
  const int a2 = regime.lag(k, 2);
  if (a1 == 0 && a2 == 0) return CwceDistribution::make_degenerate(0.0);

  const MvnDist post = latent_posterior(params, hist);
  const Eigen::Vector3d x(0.0, a1, a2);
  const double mean = a1 * params.beta1 + a2 * params.beta2 + x.dot(post.mean);
  const double var = std::max(0.0, x.dot(post.cov * x));
  return CwceDistribution::make_gaussian(mean, var);
}

// ---------------------------------------------------------------------------
// Log-normal CWCE: T = exp(G1) - exp(G2) with (G1, G2) bivariate Gaussian.

namespace {

struct LognormalDiffLaw {
  double g1, g2;    // means
  double s1, s2;    // sds
  double rho;

  double mean_t() const { return std::exp(g1 + 0.5 * s1 * s1) - std::exp(g2 + 0.5 * s2 * s2); }
  double var_t() const {
    const double m1 = std::exp(g1 + 0.5 * s1 * s1);
    const double m2 = std::exp(g2 + 0.5 * s2 * s2);
    const double v1 = (std::exp(s1 * s1) - 1.0) * m1 * m1;
    const double v2 = (std::exp(s2 * s2) - 1.0) * m2 * m2;
    const double cov = m1 * m2 * (std::exp(rho * s1 * s2) - 1.0);
    return v1 + v2 - 2.0 * cov;
  }
};

// Density of T on a grid: condition on G2 with a 1-d Gauss-Hermite rule, the
// conditional law of T is a shifted log-normal in G1 | G2.
CwceDistribution lognormal_diff_grid(const LognormalDiffLaw& law, const GridSpec& spec) {
  const double mt = law.mean_t();
  const double vt = law.var_t();
  if (!std::isfinite(mt) || !std::isfinite(vt))
    throw NumericalError("cwce_lognormal: moments overflow");
  const double sdt = std::sqrt(std::max(vt, 0.0));

  const double tiny1 = 1e-12 * std::max(1.0, law.s1);
  const double tiny2 = 1e-12 * std::max(1.0, law.s2);
  const double var_diff =
      law.s1 * law.s1 + law.s2 * law.s2 - 2.0 * law.rho * law.s1 * law.s2;

  if (sdt <= std::fabs(mt) * 1e-14 + 1e-300) return CwceDistribution::make_degenerate(mt);

  const int np = std::max(spec.points, 8);
  const double lo = mt - spec.span_sd * sdt;
  const double hi = mt + spec.span_sd * sdt;
  std::vector<double> pts(np), dens(np, 0.0);
  for (int i = 0; i < np; ++i) pts[i] = lo + (hi - lo) * i / (np - 1);

  auto lognormal_pdf = [](double arg, double g, double s) {
    if (arg <= 0.0 || s <= 0.0) return 0.0;
    const double z = (std::log(arg) - g) / s;
    return std_normal_pdf(z) / (s * arg);
  };

  if (var_diff < 1e-13 * std::max({law.s1 * law.s1, law.s2 * law.s2, 1e-30})) {
    // G1 - G2 essentially constant: T = (e^{c} - 1) e^{G2}
    const double kappa = std::expm1(law.g1 - law.g2);
    if (kappa == 0.0 || law.s2 < tiny2)
      return CwceDistribution::make_degenerate(std::exp(law.g1) - std::exp(law.g2));
    for (int i = 0; i < np; ++i) {
      const double arg = pts[i] / kappa;
      dens[i] = lognormal_pdf(arg, law.g2, law.s2) / std::fabs(kappa);
    }
  } else if (law.s2 < tiny2) {
    // T = e^{G1} - const
    const double c = std::exp(law.g2);
    for (int i = 0; i < np; ++i) dens[i] = lognormal_pdf(pts[i] + c, law.g1, law.s1);
  } else if (law.s1 < tiny1) {
    // T = const - e^{G2}
    const double c = std::exp(law.g1);
    for (int i = 0; i < np; ++i) dens[i] = lognormal_pdf(c - pts[i], law.g2, law.s2);
  } else {
    const auto [nodes, weights] = gauss_hermite_nodes(48);
    const double s1c = law.s1 * std::sqrt(std::max(0.0, 1.0 - law.rho * law.rho));
    const double dx = (hi - lo) / (np - 1);
    for (int j = 0; j < nodes.size(); ++j) {
      const double z = nodes(j);
      const double w = weights(j);
      const double g2j = law.g2 + law.s2 * z;
      const double e2 = std::exp(g2j);
      const double m1j = law.g1 + law.rho * law.s1 * z;
      if (s1c < tiny1) {
        // conditional point mass; deposit with linear interpolation
        const double t = std::exp(m1j) - e2;
        const double pos = (t - lo) / dx;
        const int i0 = static_cast<int>(std::floor(pos));
        if (i0 >= 0 && i0 + 1 < np) {
          const double frac = pos - i0;
          dens[i0] += w * (1.0 - frac) / dx;
          dens[i0 + 1] += w * frac / dx;
        }
        continue;
      }
      for (int i = 0; i < np; ++i) {
        const double arg = pts[i] + e2;
        if (arg > 0.0) dens[i] += w * lognormal_pdf(arg, m1j, s1c);
      }
    }
  }

  double integral = 0.0;
  for (int i = 0; i + 1 < np; ++i)
    integral += 0.5 * (dens[i] + dens[i + 1]) * (pts[i + 1] - pts[i]);
  if (!(integral > 0.0)) return CwceDistribution::make_degenerate(mt);
  for (double& v : dens) v /= integral;
  return CwceDistribution::make_grid(std::move(pts), std::move(dens));
}

}  // namespace

CwceDistribution cwce_lognormal(const History& hist, const ScmParams& params, int k,
                                const ExposureRegime& regime, const GridSpec& spec) {
  if (params.kind != ScmKind::LogNormalLmm)
    throw UnsupportedError("cwce_lognormal: params.kind must be LogNormalLmm");
  const int a1 = regime.lag(k, 1);
  const int a2 = regime.lag(k, 2);
  if (a1 == 0 && a2 == 0) return CwceDistribution::make_degenerate(0.0);

  const CrossWorldGaussian cw = cross_world_gaussian(params, hist, k, regime);
  LognormalDiffLaw law;
  law.g1 = cw.mean(0);
  law.g2 = cw.mean(1);
  law.s1 = std::sqrt(std::max(0.0, cw.cov(0, 0)));
  law.s2 = std::sqrt(std::max(0.0, cw.cov(1, 1)));
  law.rho = (law.s1 > 0 && law.s2 > 0)
                ? std::clamp(cw.cov(0, 1) / (law.s1 * law.s2), -1.0, 1.0)
                : 0.0;
  return lognormal_diff_grid(law, spec);
}

// ---------------------------------------------------------------------------
// Truncated kind

CrossWorldJoint cross_world_joint_truncated(const History& hist, const ScmParams& params,
                                            int k, const ExposureRegime& regime) {
  if (params.kind != ScmKind::TruncatedLmm)
    throw UnsupportedError("cross_world_joint_truncated: params.kind must be TruncatedLmm");
  if (k > hist.h)
    throw UnsupportedError(
        "cross_world_joint_truncated: requires the continuous outcome at k (k <= h)");
  const CrossWorldGaussian cw = cross_world_gaussian(params, hist, k, regime);

  if (regime.lag(k, 1) == 0 && regime.lag(k, 2) == 0) {
    // both worlds are the same world: the joint is exactly diagonal
    const double s = std::sqrt(std::max(0.0, cw.cov(1, 1)));
    const double p1 = (s > 0) ? std_normal_cdf(-(params.delta - cw.mean(1)) / s)
                              : (cw.mean(1) > params.delta ? 1.0 : 0.0);
    CrossWorldJoint joint;
    joint.p[1][1] = p1;
    joint.p[0][0] = 1.0 - p1;
    return joint;
  }

  const double s1 = std::sqrt(std::max(0.0, cw.cov(0, 0)));
  const double s2 = std::sqrt(std::max(0.0, cw.cov(1, 1)));
  const double rho = (s1 > 0 && s2 > 0)
                         ? std::clamp(cw.cov(0, 1) / (s1 * s2), -1.0, 1.0)
                         : 0.0;
  auto z_of = [&](double mean, double sd) {
    if (sd > 0) return (params.delta - mean) / sd;
    return (mean > params.delta) ? -kInf : kInf;  // strict threshold
  };
  const double z1 = z_of(cw.mean(0), s1);
  const double z2 = z_of(cw.mean(1), s2);

  const double p11 = bvn_upper(z1, z2, rho);
  const double m1 = std_normal_cdf(-z1);  // P(D^a = 1)
  const double m2 = std_normal_cdf(-z2);  // P(D^0 = 1)

  CrossWorldJoint joint;
  joint.p[1][1] = p11;
  joint.p[1][0] = std::max(0.0, m1 - p11);
  joint.p[0][1] = std::max(0.0, m2 - p11);
  joint.p[0][0] = std::max(0.0, 1.0 - m1 - m2 + p11);
  const double total = joint.sum();
  if (total <= 0) throw NumericalError("cross_world_joint_truncated: empty pmf");
  for (auto& row : joint.p)
    for (double& v : row) v /= total;
  return joint;
}

CwceDistribution cwce_truncated(const History& hist, const ScmParams& params, int k,
                                const ExposureRegime& regime) {
  const CrossWorldJoint joint = cross_world_joint_truncated(hist, params, k, regime);
  return CwceDistribution::make_discrete(joint.p[0][1], joint.p[0][0] + joint.p[1][1],
                                         joint.p[1][0]);
}

CwceDistribution cwce_crossover(double y2, double y3, int a1) {
  if (a1 != 0 && a1 != 1) throw ValidationError("cwce_crossover: a1 must be 0/1");
  return CwceDistribution::make_degenerate(a1 == 1 ? y2 - y3 : y3 - y2);
}

CwceDistribution cwce_for_kind(const ScmParams& params, const History& hist, int k,
                               const ExposureRegime& regime, const GridSpec& spec) {
  switch (params.kind) {
    case ScmKind::GaussianLmm: return cwce_gaussian(hist, params, k, regime);
    case ScmKind::LogNormalLmm: return cwce_lognormal(hist, params, k, regime, spec);
    case ScmKind::TruncatedLmm: return cwce_truncated(hist, params, k, regime);
    case ScmKind::Crossover:
      throw UnsupportedError("cwce_for_kind: use cwce_crossover for the crossover kind");
  }
  throw UnsupportedError("cwce_for_kind: unknown kind");
}

// ---------------------------------------------------------------------------
// Monte-Carlo oracle

namespace {

struct McSetup {
  Eigen::Vector3d post_mean;
  Eigen::Matrix3d post_chol;
  double c_prev = 0.0;
  int f1 = 0, f2 = 0;      // factual lags at k
  int a1 = 0, a2 = 0;      // regime lags at k
  double yk_underlying = 0.0;
  bool residual_mode = false;
};

McSetup mc_setup(const History& hist, const ScmParams& params, int k,
                 const ExposureRegime& regime, int n_draws) {
  require_lmm_kind(params, "cwce_monte_carlo");
  if (n_draws < 1) throw ValidationError("cwce_monte_carlo: n_draws must be >= 1");
  hist.validate();
  regime.validate();
  if (k < 1 || k > hist.h + 1)
    throw UnsupportedError("cwce_monte_carlo: k must be in 1..h+1");
  if (static_cast<int>(regime.a.size()) < k - 1)
    throw DimensionError("cwce_monte_carlo: regime shorter than k-1");

  const MvnDist post = latent_posterior(params, hist);
  McSetup s;
  s.post_mean = post.mean;
  s.post_chol = chol_lower_jittered(post.cov);
  s.c_prev = (k >= 2) ? hist.c[k - 2] : 0.0;
  s.a1 = regime.lag(k, 1);
  s.a2 = regime.lag(k, 2);
  s.residual_mode = (k <= hist.h);
  if (s.residual_mode) {
    s.f1 = (k >= 2) ? hist.a[k - 2] : 0;
    s.f2 = (k >= 3) ? hist.a[k - 3] : 0;
    s.yk_underlying = underlying_y(params, hist)[k - 1];
  }
  return s;
}

// replays the outcome assignment in the same term order as the simulator
inline double mc_outcome(const ScmParams& p, const Eigen::Vector3d& u, double c_prev,
                         int a1, int a2, double n, int k) {
  double acc = p.mu + u(0);
  if (k >= 2) {
    acc += c_prev * p.beta_c;
    acc += a1 * (p.beta1 + u(1));
  }
  if (k >= 3) acc += a2 * (p.beta2 + u(2));
  acc += n;
  return acc;
}

double mc_draw(const McSetup& s, const ScmParams& params, int k, std::uint64_t seed,
               std::uint64_t j) {
  Rng rng = Rng::stream(seed, j);
  const Eigen::Vector3d z(rng.next_normal(), rng.next_normal(), rng.next_normal());
  const Eigen::Vector3d u = s.post_mean + s.post_chol * z;

  double nk;
  if (s.residual_mode) {
    nk = s.yk_underlying - mc_outcome(params, u, s.c_prev, s.f1, s.f2, 0.0, k);
  } else {
    nk = params.sigma * rng.next_normal();
  }
  const double ya = mc_outcome(params, u, s.c_prev, s.a1, s.a2, nk, k);
  const double y0 = mc_outcome(params, u, s.c_prev, 0, 0, nk, k);
  switch (params.kind) {
    case ScmKind::LogNormalLmm: return std::exp(ya) - std::exp(y0);
    case ScmKind::TruncatedLmm:
      return (ya > params.delta ? 1.0 : 0.0) - (y0 > params.delta ? 1.0 : 0.0);
    default: return ya - y0;
  }
}

McCwce mc_finish(std::vector<double> samples, const ScmParams& params) {
  McCwce out;
  const size_t n = samples.size();
  double sum = 0.0, comp = 0.0;
  for (double v : samples) {  // Kahan
    const double t = v - comp;
    const double next = sum + t;
    comp = (next - sum) - t;
    sum = next;
  }
  out.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : samples) ss += (v - out.mean) * (v - out.mean);
  out.var = (n > 1) ? ss / static_cast<double>(n - 1) : 0.0;

  if (params.kind == ScmKind::TruncatedLmm) {
    for (double v : samples) {
      if (v < -0.5) out.pmf[0] += 1.0;
      else if (v > 0.5) out.pmf[2] += 1.0;
      else out.pmf[1] += 1.0;
    }
    for (double& p : out.pmf) p /= static_cast<double>(n);
    out.dist = CwceDistribution::make_discrete(out.pmf[0], out.pmf[1], out.pmf[2]);
  } else {
    out.dist = kde_grid(samples);
  }
  out.samples = std::move(samples);
  return out;
}

}  // namespace

McCwce cwce_monte_carlo_serial(const History& hist, const ScmParams& params, int k,
                               const ExposureRegime& regime, int n_draws,
                               std::uint64_t seed) {
  const McSetup s = mc_setup(hist, params, k, regime, n_draws);
  std::vector<double> samples(n_draws);
  for (int j = 0; j < n_draws; ++j)
    samples[j] = mc_draw(s, params, k, seed, static_cast<std::uint64_t>(j));
  return mc_finish(std::move(samples), params);
}

McCwce cwce_monte_carlo(const History& hist, const ScmParams& params, int k,
                        const ExposureRegime& regime, int n_draws, std::uint64_t seed) {
  const McSetup s = mc_setup(hist, params, k, regime, n_draws);
  std::vector<double> samples(n_draws);
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n_draws; ++j)
    samples[j] = mc_draw(s, params, k, seed, static_cast<std::uint64_t>(j));
  return mc_finish(std::move(samples), params);
}

// ---------------------------------------------------------------------------

CwceDistribution predict_potential_outcome(const History& hist, const ScmParams& params,
                                           int k, const ExposureRegime& regime,
                                           const GridSpec& spec) {
  require_lmm_kind(params, "predict_potential_outcome");
  hist.validate();
  regime.validate();
  if (k < 1 || k > hist.h + 1)
    throw UnsupportedError("predict_potential_outcome: k must be in 1..h+1");
  if (static_cast<int>(regime.a.size()) < k - 1)
    throw DimensionError("predict_potential_outcome: regime shorter than k-1");

  // Single-world law on the underlying scale.
  double mean, var;
  const int a1 = regime.lag(k, 1);
  const int a2 = regime.lag(k, 2);
  const MvnDist post = latent_posterior(params, hist);
  if (k <= hist.h) {
    const int f1 = (k >= 2) ? hist.a[k - 2] : 0;
    const int f2 = (k >= 3) ? hist.a[k - 3] : 0;
    const double yk = underlying_y(params, hist)[k - 1];
    const Eigen::Vector3d x(0.0, a1 - f1, a2 - f2);
    mean = yk + (a1 - f1) * params.beta1 + (a2 - f2) * params.beta2 + x.dot(post.mean);
    var = std::max(0.0, x.dot(post.cov * x));
  } else {
    const double c_prev = (k >= 2) ? hist.c[k - 2] : 0.0;
    const Eigen::Vector3d x(1.0, a1, a2);
    mean = params.mu + ((k >= 2) ? c_prev * params.beta_c : 0.0) + a1 * params.beta1 +
           a2 * params.beta2 + x.dot(post.mean);
    var = std::max(0.0, x.dot(post.cov * x)) + params.sigma * params.sigma;
  }

  if (params.kind == ScmKind::LogNormalLmm) {
    const double sd = std::sqrt(var);
    if (sd == 0.0) return CwceDistribution::make_degenerate(std::exp(mean));
    LognormalDiffLaw law{mean, mean - 700.0, sd, 0.0, 0.0};  // e^{g2} negligible
    return lognormal_diff_grid(law, spec);
  }
  if (var == 0.0) return CwceDistribution::make_degenerate(mean);
  return CwceDistribution::make_gaussian(mean, var);
}

CwceDistribution kde_grid(const std::vector<double>& samples, int points, double bandwidth) {
  const size_t n = samples.size();
  if (n == 0) throw ValidationError("kde_grid: empty sample");
  if (n == 1) return CwceDistribution::make_degenerate(samples[0]);

  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const double lo_s = sorted.front(), hi_s = sorted.back();
  double mean = 0.0;
  for (double v : sorted) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : sorted) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  const double iqr = sorted[static_cast<size_t>(0.75 * (n - 1))] -
                     sorted[static_cast<size_t>(0.25 * (n - 1))];

  double bw = bandwidth;
  if (bw <= 0.0) {
    double spread = sd;
    if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
    bw = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
  }
  if (bw <= 0.0) return CwceDistribution::make_degenerate(sorted[0]);

  points = std::max(points, 8);
  const double lo = lo_s - 3.0 * bw;
  const double hi = hi_s + 3.0 * bw;
  const double dx = (hi - lo) / (points - 1);

  // linear binning then discrete convolution with the Gaussian kernel
  std::vector<double> bins(points, 0.0);
  for (double v : sorted) {
    const double pos = (v - lo) / dx;
    const int i0 = std::clamp(static_cast<int>(std::floor(pos)), 0, points - 2);
    const double frac = std::clamp(pos - i0, 0.0, 1.0);
    bins[i0] += 1.0 - frac;
    bins[i0 + 1] += frac;
  }
  const int radius = std::min(points - 1, static_cast<int>(std::ceil(5.0 * bw / dx)));
  std::vector<double> kernel(radius + 1);
  for (int r = 0; r <= radius; ++r) kernel[r] = std_normal_pdf(r * dx / bw) / bw;

  std::vector<double> pts(points), dens(points, 0.0);
  for (int i = 0; i < points; ++i) pts[i] = lo + i * dx;
  for (int i = 0; i < points; ++i) {
    if (bins[i] == 0.0) continue;
    const double w = bins[i] / static_cast<double>(n);
    dens[i] += w * kernel[0];
    for (int r = 1; r <= radius; ++r) {
      if (i - r >= 0) dens[i - r] += w * kernel[r];
      if (i + r < points) dens[i + r] += w * kernel[r];
    }
  }
  double integral = 0.0;
  for (int i = 0; i + 1 < points; ++i) integral += 0.5 * (dens[i] + dens[i + 1]) * dx;
  if (!(integral > 0.0)) return CwceDistribution::make_degenerate(mean);
  for (double& v : dens) v /= integral;
  return CwceDistribution::make_grid(std::move(pts), std::move(dens));
}

}  // namespace cwce
