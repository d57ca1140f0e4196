#include "cwce/gauss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cwce/errors.hpp"

namespace cwce {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void MvnDist::validate() const {
  if (cov.rows() != cov.cols() || cov.rows() != mean.size())
    throw DimensionError("MvnDist: mean/cov dimensions disagree");
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw ValidationError("MvnDist: covariance not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const double floor = -1e-10 * std::max(cov.trace(), 1.0);
  if (es.eigenvalues().minCoeff() < floor)
    throw ValidationError("MvnDist: covariance not positive semidefinite");
}

DesignMatrices build_design(const ScmParams& params,
                            const std::vector<int>& exposures,
                            const std::vector<double>& confounders) {
  const int h = static_cast<int>(exposures.size());
  if (static_cast<int>(confounders.size()) != h)
    throw DimensionError("build_design: exposures/confounders length mismatch");
  if (h < 1) throw DimensionError("build_design: need h >= 1");
  for (int a : exposures)
    if (a != 0 && a != 1) throw ValidationError("build_design: exposures must be 0/1");

  DesignMatrices d;
  d.z.resize(h, 3);
  d.mu_y.resize(h);
  for (int k = 1; k <= h; ++k) {
    const int a1 = (k >= 2) ? exposures[k - 2] : 0;  // a_{k-1}
    const int a2 = (k >= 3) ? exposures[k - 3] : 0;  // a_{k-2}
    d.z(k - 1, 0) = 1.0;
    d.z(k - 1, 1) = a1;
    d.z(k - 1, 2) = a2;
    double m = params.mu;
    if (k >= 2) m += confounders[k - 2] * params.beta_c;
    m += a1 * params.beta1 + a2 * params.beta2;
    d.mu_y(k - 1) = m;
  }
  return d;
}

MvnDist build_marginal_moments(const ScmParams& params,
                               const std::vector<int>& exposures,
                               const std::vector<double>& confounders) {
  const DesignMatrices d = build_design(params, exposures, confounders);
  const int h = static_cast<int>(d.mu_y.size());
  const Eigen::Matrix3d S = params.latent_cov();

  MvnDist out;
  out.mean.setZero(3 + h);
  out.mean.tail(h) = d.mu_y;
  out.cov.resize(3 + h, 3 + h);
  out.cov.topLeftCorner(3, 3) = S;
  const Eigen::MatrixXd SZt = S * d.z.transpose();
  out.cov.topRightCorner(3, h) = SZt;
  out.cov.bottomLeftCorner(h, 3) = SZt.transpose();
  out.cov.bottomRightCorner(h, h) =
      d.z * SZt + params.sigma * params.sigma * Eigen::MatrixXd::Identity(h, h);
  return out;
}

namespace {

// Cholesky with the graduated jitter ladder.
Eigen::LLT<Eigen::MatrixXd> chol_with_jitter(const Eigen::MatrixXd& m,
                                             const char* what) {
  const double scale = std::max(m.trace() / std::max<int>(1, m.rows()), 1e-300);
  for (double factor : {0.0, 1e-12, 1e-10, 1e-8}) {
    Eigen::MatrixXd jittered = m;
    if (factor > 0.0) jittered.diagonal().array() += factor * scale;
    Eigen::LLT<Eigen::MatrixXd> llt(jittered);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericalError(std::string(what) + ": matrix singular beyond jitter ladder");
}

}  // namespace

Eigen::MatrixXd chol_lower_jittered(const Eigen::MatrixXd& m) {
  return chol_with_jitter(m, "chol_lower_jittered").matrixL();
}

MvnDist condition_gaussian(const MvnDist& joint,
                           const std::vector<int>& observed_idx,
                           const Eigen::VectorXd& observed_values) {
  const int n = joint.dim();
  if (static_cast<int>(observed_idx.size()) != observed_values.size())
    throw DimensionError("condition_gaussian: index/value length mismatch");

  std::vector<bool> is_obs(n, false);
  for (int idx : observed_idx) {
    if (idx < 0 || idx >= n) throw DimensionError("condition_gaussian: index out of range");
    if (is_obs[idx]) throw DimensionError("condition_gaussian: duplicate observed index");
    is_obs[idx] = true;
  }
  std::vector<int> free_idx;
  for (int i = 0; i < n; ++i)
    if (!is_obs[i]) free_idx.push_back(i);

  const int no = static_cast<int>(observed_idx.size());
  const int nf = static_cast<int>(free_idx.size());
  if (no == 0) return joint;

  Eigen::MatrixXd s_oo(no, no), s_fo(nf, no);
  Eigen::VectorXd mu_o(no), mu_f(nf), resid(no);
  for (int i = 0; i < no; ++i) {
    mu_o(i) = joint.mean(observed_idx[i]);
    resid(i) = observed_values(i) - mu_o(i);
    for (int j = 0; j < no; ++j) s_oo(i, j) = joint.cov(observed_idx[i], observed_idx[j]);
  }
  Eigen::MatrixXd s_ff(nf, nf);
  for (int i = 0; i < nf; ++i) {
    mu_f(i) = joint.mean(free_idx[i]);
    for (int j = 0; j < no; ++j) s_fo(i, j) = joint.cov(free_idx[i], observed_idx[j]);
    for (int j = 0; j < nf; ++j) s_ff(i, j) = joint.cov(free_idx[i], free_idx[j]);
  }

  const auto llt = chol_with_jitter(s_oo, "condition_gaussian");
  // Schur complement via solves; no explicit inverse.
  const Eigen::MatrixXd gain = llt.solve(s_fo.transpose()).transpose();  // S_fo S_oo^{-1}

  MvnDist post;
  post.mean = mu_f + gain * resid;
  Eigen::MatrixXd cov = s_ff - gain * s_fo.transpose();
  post.cov = 0.5 * (cov + cov.transpose());
  return post;
}

double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) * 0.3989422804014326779;
}

double std_normal_cdf(double x) {
  return 0.5 * std::erfc(-x * 0.7071067811865475244);
}

namespace {

// Gauss-Legendre half-interval node sets used by the bivariate normal scheme.
const double kGlX6[3] = {0.9324695142031522, 0.6612093864662647,
                         0.2386191860831970};
const double kGlW6[3] = {0.1713244923791705, 0.3607615730481384,
                         0.4679139345726904};
const double kGlX12[6] = {0.9815606342467191, 0.9041172563704750,
                          0.7699026741943050, 0.5873179542866171,
                          0.3678314989981802, 0.1252334085114692};
const double kGlW12[6] = {0.04717533638651177, 0.1069393259953183,
                          0.1600783285433464, 0.2031674267230659,
                          0.2334925365383547, 0.2491470458134029};
const double kGlX20[10] = {0.9931285991850949, 0.9639719272779138,
                           0.9122344282513259, 0.8391169718222188,
                           0.7463319064601508, 0.6360536807265150,
                           0.5108670019508271, 0.3737060887154196,
                           0.2277858511416451, 0.07652652113349733};
const double kGlW20[10] = {0.01761400713915212, 0.04060142980038694,
                           0.06267204833410906, 0.08327674157670475,
                           0.1019301198172404, 0.1181945319615184,
                           0.1316886384491766, 0.1420961093183821,
                           0.1491729864726037, 0.1527533871307259};

}  // namespace

double bvn_upper(double dh, double dk, double r) {
  if (std::isnan(dh) || std::isnan(dk) || std::isnan(r))
    throw ValidationError("bvn_upper: NaN argument");
  if (r < -1.0 || r > 1.0) throw ValidationError("bvn_upper: |rho| > 1");
  if (dh == kInf || dk == kInf) return 0.0;
  if (dh == -kInf) return (dk == -kInf) ? 1.0 : std_normal_cdf(-dk);
  if (dk == -kInf) return std_normal_cdf(-dh);
  if (r == 0.0) return std_normal_cdf(-dh) * std_normal_cdf(-dk);

  const double* x;
  const double* w;
  int lg;
  if (std::fabs(r) < 0.3) {
    x = kGlX6; w = kGlW6; lg = 3;
  } else if (std::fabs(r) < 0.75) {
    x = kGlX12; w = kGlW12; lg = 6;
  } else {
    x = kGlX20; w = kGlW20; lg = 10;
  }

  double h = dh, k = dk, hk = h * k, bvn = 0.0;
  const double twopi = 6.283185307179586477;

  if (std::fabs(r) < 0.925) {
    const double hs = (h * h + k * k) / 2;
    const double asr = std::asin(r);
    for (int i = 0; i < lg; ++i) {
      for (int is = -1; is <= 1; is += 2) {
        const double sn = std::sin(asr * (is * x[i] + 1) / 2);
        bvn += w[i] * std::exp((sn * hk - hs) / (1 - sn * sn));
      }
    }
    bvn = bvn * asr / (2 * twopi) + std_normal_cdf(-h) * std_normal_cdf(-k);
  } else {
    if (r < 0) {
      k = -k;
      hk = -hk;
    }
    if (std::fabs(r) < 1) {
      const double as = (1 - r) * (1 + r);
      double a = std::sqrt(as);
      const double bs = (h - k) * (h - k);
      const double c = (4 - hk) / 8;
      const double d = (12 - hk) / 16;
      double asr = -(bs / as + hk) / 2;
      if (asr > -100)
        bvn = a * std::exp(asr) *
              (1 - c * (bs - as) * (1 - d * bs / 5) / 3 + c * d * as * as / 5);
      if (-hk < 100) {
        const double b = std::sqrt(bs);
        bvn -= std::exp(-hk / 2) * std::sqrt(twopi) * std_normal_cdf(-b / a) *
               b * (1 - c * bs * (1 - d * bs / 5) / 3);
      }
      a /= 2;
      for (int i = 0; i < lg; ++i) {
        for (int is = -1; is <= 1; is += 2) {
          const double xs0 = a * (is * x[i] + 1);
          const double xs = xs0 * xs0;
          const double rs = std::sqrt(1 - xs);
          asr = -(bs / xs + hk) / 2;
          if (asr > -100) {
            bvn += a * w[i] * std::exp(asr) *
                   (std::exp(-hk * (1 - rs) / (2 * (1 + rs))) / rs -
                    (1 + c * xs * (1 + d * xs)));
          }
        }
      }
      bvn = -bvn / twopi;
    }
    if (r > 0) {
      bvn += std_normal_cdf(-std::max(h, k));
    } else {
      bvn = -bvn;
      if (k > h) {
        if (h < 0)
          bvn += std_normal_cdf(k) - std_normal_cdf(h);
        else
          bvn += std_normal_cdf(-h) - std_normal_cdf(-k);
      }
    }
  }
  return std::clamp(bvn, 0.0, 1.0);
}

namespace {

// Standardized bound; degenerate coordinates map to +-infinity so that the
// general path reduces to indicators.
double standardize(double bound, double mean, double sd) {
  if (bound == kInf) return kInf;
  if (bound == -kInf) return -kInf;
  if (sd > 0) return (bound - mean) / sd;
  return (mean > bound) ? -kInf : kInf;  // point mass: strict "greater than"
}

}  // namespace

double bvn_rect_prob(const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov,
                     const Eigen::Vector2d& lower, const Eigen::Vector2d& upper) {
  for (int i = 0; i < 2; ++i) {
    if (std::isnan(lower(i)) || std::isnan(upper(i)) || lower(i) > upper(i))
      throw ValidationError("bvn_rect_prob: invalid bounds");
  }
  if (std::fabs(cov(0, 1) - cov(1, 0)) >
      1e-10 * std::max(1.0, cov.cwiseAbs().maxCoeff()))
    throw ValidationError("bvn_rect_prob: covariance not symmetric");
  if (cov(0, 0) < -1e-12 || cov(1, 1) < -1e-12 ||
      cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0) <
          -1e-10 * std::max(1.0, cov.trace() * cov.trace()))
    throw ValidationError("bvn_rect_prob: covariance not PSD");

  const double s1 = std::sqrt(std::max(cov(0, 0), 0.0));
  const double s2 = std::sqrt(std::max(cov(1, 1), 0.0));
  double rho = 0.0;
  if (s1 > 0 && s2 > 0) rho = std::clamp(cov(0, 1) / (s1 * s2), -1.0, 1.0);

  const double a1 = standardize(lower(0), mean(0), s1);
  const double b1 = standardize(upper(0), mean(0), s1);
  const double a2 = standardize(lower(1), mean(1), s2);
  const double b2 = standardize(upper(1), mean(1), s2);
  if (a1 >= b1 || a2 >= b2) return 0.0;  // empty after standardization

  // Upper-orthant inclusion-exclusion.
  const double p = bvn_upper(a1, a2, rho) - bvn_upper(b1, a2, rho) -
                   bvn_upper(a1, b2, rho) + bvn_upper(b1, b2, rho);
  return std::clamp(p, 0.0, 1.0);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite_nodes(int order) {
  if (order < 2 || order > 64)
    throw ValidationError("gauss_hermite_nodes: order must be in [2, 64]");
  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite recurrence
  // He_{n+1}(x) = x He_n(x) - n He_{n-1}(x).
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(order, order);
  for (int i = 1; i < order; ++i) {
    const double b = std::sqrt(static_cast<double>(i));
    j(i, i - 1) = b;
    j(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
  Eigen::VectorXd nodes = es.eigenvalues();
  Eigen::VectorXd weights(order);
  for (int i = 0; i < order; ++i) {
    const double v = es.eigenvectors()(0, i);
    weights(i) = v * v;  // total mass of N(0,1) is 1
  }
  weights /= weights.sum();
  return {nodes, weights};
}

double mvn_quadrature(const MvnDist& dist,
                      const std::function<double(const Eigen::VectorXd&)>& f,
                      int order) {
  const int d = dist.dim();
  if (d < 1 || d > 3)
    throw UnsupportedError("mvn_quadrature: only dimensions 1..3 supported");
  dist.validate();
  auto [nodes, weights] = gauss_hermite_nodes(order);

  const auto llt = chol_with_jitter(dist.cov, "mvn_quadrature");
  const Eigen::MatrixXd l = llt.matrixL();

  Eigen::VectorXd x(d), z(d);
  double total = 0.0;
  const int n0 = order;
  const int n1 = (d >= 2) ? order : 1;
  const int n2 = (d >= 3) ? order : 1;
  for (int i = 0; i < n0; ++i) {
    for (int jn = 0; jn < n1; ++jn) {
      for (int kn = 0; kn < n2; ++kn) {
        z(0) = nodes(i);
        if (d >= 2) z(1) = nodes(jn);
        if (d >= 3) z(2) = nodes(kn);
        x = dist.mean + l * z;
        double wt = weights(i);
        if (d >= 2) wt *= weights(jn);
        if (d >= 3) wt *= weights(kn);
        total += wt * f(x);
      }
    }
  }
  return total;
}

}  // namespace cwce
