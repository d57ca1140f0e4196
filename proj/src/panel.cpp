#include "cwce/panel.hpp"

#include <cmath>

#include "cwce/errors.hpp"
#include "cwce/gauss.hpp"
#include "cwce/rng.hpp"

namespace cwce {

ExposureRegime ExposureRegime::lag_pair(int k, int lag1, int lag2) {
  if (k < 2) throw DimensionError("ExposureRegime::lag_pair: k must be >= 2");
  ExposureRegime r = zeros(k - 1);
  r.a[k - 2] = lag1;
  if (k >= 3) r.a[k - 3] = lag2;
  else if (lag2 != 0)
    throw DimensionError("ExposureRegime::lag_pair: no lag-2 slot before k = 3");
  r.validate();
  return r;
}

int ExposureRegime::lag(int k, int l) const {
  const int idx = k - l;  // 1-based time index
  if (idx < 1) return 0;
  if (idx > static_cast<int>(a.size()))
    throw DimensionError("ExposureRegime: regime shorter than requested lag");
  return a[idx - 1];
}

void ExposureRegime::validate() const {
  for (int v : a)
    if (v != 0 && v != 1) throw ValidationError("ExposureRegime: entries must be 0/1");
}

namespace {

// Canonical outcome assignment on the continuous (log for LogNormal) scale.
// Both the simulator and the potential-outcome replay go through this one
// function so that factual replays are bit-identical to the stored values.
inline double lmm_outcome(const ScmParams& p, double u0, double u1, double u2,
                          double c_prev, int a1, int a2, double n, int k) {
  double acc = p.mu + u0;
  if (k >= 2) {
    acc += c_prev * p.beta_c;
    acc += a1 * (p.beta1 + u1);
  }
  if (k >= 3) acc += a2 * (p.beta2 + u2);
  acc += n;
  return acc;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double draw_confounder(const ScmParams& p, Rng& rng) {
  const double u = rng.next_u01();
  double cum = 0.0;
  for (const auto& atom : p.confounder_law) {
    cum += atom.prob;
    if (u <= cum) return atom.value;
  }
  return p.confounder_law.back().value;
}

// Round to a multiple of 2^-30. The crossover assignment has no noise, so the
// exact ICE must be recoverable from outcome differences; quantizing baseline
// and effect makes their sums and differences exact in double precision (for
// magnitudes below ~2^22).
inline double quantize30(double v) { return std::ldexp(std::nearbyint(std::ldexp(v, 30)), -30); }

void simulate_crossover(const ScmParams& p, Individual& ind, Rng& rng) {
  const double z0 = rng.next_normal();
  const double z1 = rng.next_normal();
  const double ua = rng.next_u01();

  const double y1 = quantize30(p.mu + p.tau0 * z0);
  const double u_ay = quantize30(p.beta1 + p.tau1 * z1);
  const int a1 = logistic(p.alpha0) > ua ? 1 : 0;
  const int a2 = 1 - a1;

  ind.u0 = y1 - p.mu;
  ind.u1 = u_ay;
  ind.u2 = 0.0;
  ind.noise_y.assign(3, 0.0);
  ind.noise_a = {ua, 0.0, 0.0};
  ind.c.assign(3, 0.0);
  ind.a = {a1, a2, 0};
  ind.y = {y1, y1 + u_ay * a1, y1 + u_ay * a2};
}

void simulate_lmm(const ScmParams& p, Individual& ind, int m, Rng& rng) {
  const Eigen::Matrix3d l = p.latent_chol();
  const Eigen::Vector3d z(rng.next_normal(), rng.next_normal(), rng.next_normal());
  const Eigen::Vector3d u = l * z;
  ind.u0 = u(0);
  ind.u1 = u(1);
  ind.u2 = u(2);

  ind.noise_y.resize(m);
  ind.noise_a.resize(m);
  ind.c.resize(m);
  ind.a.resize(m);
  ind.y.resize(m);
  if (p.kind == ScmKind::TruncatedLmm) ind.d.resize(m);

  const bool log_scale = (p.kind == ScmKind::LogNormalLmm);
  for (int k = 1; k <= m; ++k) {
    ind.c[k - 1] = draw_confounder(p, rng);
    const double n = p.sigma * rng.next_normal();
    ind.noise_y[k - 1] = n;

    const double c_prev = (k >= 2) ? ind.c[k - 2] : 0.0;
    const int a1 = (k >= 2) ? ind.a[k - 2] : 0;
    const int a2 = (k >= 3) ? ind.a[k - 3] : 0;
    const double yk = lmm_outcome(p, ind.u0, ind.u1, ind.u2, c_prev, a1, a2, n, k);

    ind.y[k - 1] = log_scale ? std::exp(yk) : yk;
    if (p.kind == ScmKind::TruncatedLmm) ind.d[k - 1] = (yk > p.delta) ? 1 : 0;

    const double ua = rng.next_u01();
    ind.noise_a[k - 1] = ua;
    // assignment uses the log-scale outcome for LogNormal (the structural
    // variable), the current confounder, and the previous exposure (absent
    // at k = 1)
    double lp = p.alpha0 + p.alpha1 * yk + p.alpha3 * ind.c[k - 1];
    if (k >= 2) lp += p.alpha2 * a1;
    ind.a[k - 1] = (logistic(lp) > ua) ? 1 : 0;
  }
}

void simulate_one(const ScmParams& p, Individual& ind, int m, std::uint64_t seed,
                  std::uint64_t index) {
  Rng rng = Rng::stream(seed, index);
  if (p.kind == ScmKind::Crossover)
    simulate_crossover(p, ind, rng);
  else
    simulate_lmm(p, ind, m, rng);
}

void check_sim_args(const ScmParams& p, int n, int m) {
  p.validate();
  if (n < 1) throw ValidationError("simulate_panel: n must be >= 1");
  if (p.kind == ScmKind::Crossover) {
    if (m != 3) throw ValidationError("simulate_panel: crossover requires m = 3");
  } else if (m < 3) {
    throw ValidationError("simulate_panel: LMM kinds require m >= 3");
  }
}

}  // namespace

Panel simulate_panel_serial(const ScmParams& params, int n, int m, std::uint64_t seed) {
  check_sim_args(params, n, m);
  Panel panel;
  panel.params = params;
  panel.seed = seed;
  panel.m = m;
  panel.individuals.resize(n);
  for (int i = 0; i < n; ++i)
    simulate_one(params, panel.individuals[i], m, seed, static_cast<std::uint64_t>(i));
  return panel;
}

Panel simulate_panel(const ScmParams& params, int n, int m, std::uint64_t seed) {
  check_sim_args(params, n, m);
  Panel panel;
  panel.params = params;
  panel.seed = seed;
  panel.m = m;
  panel.individuals.resize(n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    simulate_one(params, panel.individuals[i], m, seed, static_cast<std::uint64_t>(i));
  return panel;
}

Panel subset_panel(const Panel& panel, int n_sub, int m_sub) {
  if (n_sub < 1 || n_sub > panel.n() || m_sub < 1 || m_sub > panel.m)
    throw DimensionError("subset_panel: subset exceeds panel size");
  Panel out;
  out.params = panel.params;
  out.seed = panel.seed;
  out.m = m_sub;
  out.individuals.reserve(n_sub);
  for (int i = 0; i < n_sub; ++i) {
    const Individual& src = panel.individuals[i];
    Individual ind;
    ind.u0 = src.u0;
    ind.u1 = src.u1;
    ind.u2 = src.u2;
    auto take = [m_sub](const auto& v) {
      return std::decay_t<decltype(v)>(v.begin(), v.begin() + m_sub);
    };
    ind.noise_y = take(src.noise_y);
    ind.noise_a = take(src.noise_a);
    ind.c = take(src.c);
    ind.a = take(src.a);
    ind.y = take(src.y);
    if (!src.d.empty()) ind.d = take(src.d);
    out.individuals.push_back(std::move(ind));
  }
  return out;
}

double potential_outcome_underlying(const Individual& ind, const ScmParams& params,
                                    const ExposureRegime& regime, int k) {
  if (k < 1 || k > static_cast<int>(ind.y.size()))
    throw DimensionError("potential_outcome: k outside 1..m");
  if (static_cast<int>(regime.a.size()) < k - 1)
    throw DimensionError("potential_outcome: regime shorter than k-1");
  regime.validate();

  const int a1 = regime.lag(k, 1);
  const int a2 = regime.lag(k, 2);
  if (params.kind == ScmKind::Crossover) {
    // Y_l^a = Y_1 + U_AY * a_{l-1}; u1 stores the full effect.
    return ind.y[0] + ind.u1 * a1;
  }
  const double c_prev = (k >= 2) ? ind.c[k - 2] : 0.0;
  return lmm_outcome(params, ind.u0, ind.u1, ind.u2, c_prev, a1, a2,
                     ind.noise_y[k - 1], k);
}

double potential_outcome(const Individual& ind, const ScmParams& params,
                         const ExposureRegime& regime, int k) {
  const double v = potential_outcome_underlying(ind, params, regime, k);
  switch (params.kind) {
    case ScmKind::LogNormalLmm: return std::exp(v);
    case ScmKind::TruncatedLmm: return (v > params.delta) ? 1.0 : 0.0;
    default: return v;
  }
}

double true_ice(const Individual& ind, const ScmParams& params,
                const ExposureRegime& regime, int k) {
  return potential_outcome(ind, params, regime, k) -
         potential_outcome(ind, params, ExposureRegime::zeros(regime.a.size()), k);
}

double true_eice(const Individual& ind, const ScmParams& params,
                 const ExposureRegime& regime, int k,
                 std::optional<double> c_value) {
  if (k < 1 || k > static_cast<int>(ind.y.size()))
    throw DimensionError("true_eice: k outside 1..m");
  const int a1 = regime.lag(k, 1);
  const int a2 = regime.lag(k, 2);
  const double c_prev =
      c_value.value_or((k >= 2 && params.kind != ScmKind::Crossover) ? ind.c[k - 2] : 0.0);
  const double slope = a1 * (params.beta1 + ind.u1) + a2 * (params.beta2 + ind.u2);

  switch (params.kind) {
    case ScmKind::Crossover:
      return ind.u1 * a1;
    case ScmKind::GaussianLmm:
      // additive noise: EICE = ICE
      return slope;
    case ScmKind::LogNormalLmm: {
      const double base = params.mu + c_prev * params.beta_c + ind.u0;
      return std::exp(base) * (std::exp(slope) - 1.0) *
             std::exp(0.5 * params.sigma * params.sigma);
    }
    case ScmKind::TruncatedLmm: {
      const double base = params.mu + ind.u0 + c_prev * params.beta_c;
      if (params.sigma == 0.0) {
        const double d_a = (base + slope > params.delta) ? 1.0 : 0.0;
        const double d_0 = (base > params.delta) ? 1.0 : 0.0;
        return d_a - d_0;
      }
      return std_normal_cdf((params.delta - base) / params.sigma) -
             std_normal_cdf((params.delta - (base + slope)) / params.sigma);
    }
  }
  throw UnsupportedError("true_eice: unknown kind");
}

double closed_form_effect(const ScmParams& params, EffectMeasure measure,
                          const ExposureRegime& regime, int k,
                          std::optional<double> c_value) {
  params.validate();
  const int a1 = regime.lag(k, 1);
  const int a2 = regime.lag(k, 2);
  const Eigen::Matrix3d s = params.latent_cov();
  const Eigen::Vector3d v(1.0, a1, a2);

  switch (params.kind) {
    case ScmKind::Crossover:
      return params.beta1 * a1;
    case ScmKind::GaussianLmm:
      return a1 * params.beta1 + a2 * params.beta2;
    case ScmKind::LogNormalLmm: {
      const double w = v.dot(s * v);
      const double factor =
          std::exp(0.5 * params.sigma * params.sigma) *
          (std::exp(a1 * params.beta1 + a2 * params.beta2 + 0.5 * w) -
           std::exp(0.5 * params.tau0 * params.tau0));
      if (measure == EffectMeasure::Cace) {
        if (!c_value)
          throw UnsupportedError("closed_form_effect: CACE requires c_value for LogNormal");
        return std::exp(params.mu + *c_value * params.beta_c) * factor;
      }
      double total = 0.0;
      for (const auto& atom : params.confounder_law)
        total += std::exp(params.mu + atom.value * params.beta_c) * factor * atom.prob;
      return total;
    }
    case ScmKind::TruncatedLmm: {
      const double sd0 = std::sqrt(params.tau0 * params.tau0 + params.sigma * params.sigma);
      const double sd1 = std::sqrt(v.dot(s * v) + params.sigma * params.sigma);
      auto cace = [&](double c) {
        const double base = params.mu + c * params.beta_c;
        return std_normal_cdf((params.delta - base) / sd0) -
               std_normal_cdf((params.delta - (base + a1 * params.beta1 + a2 * params.beta2)) / sd1);
      };
      if (measure == EffectMeasure::Cace) {
        if (!c_value)
          throw UnsupportedError("closed_form_effect: CACE requires c_value for Truncated");
        return cace(*c_value);
      }
      double total = 0.0;
      for (const auto& atom : params.confounder_law) total += cace(atom.value) * atom.prob;
      return total;
    }
  }
  throw UnsupportedError("closed_form_effect: unknown kind");
}

}  // namespace cwce
