// Serial vs OpenMP benchmark for the three data-parallel kernels: panel
// simulation, the restricted log-likelihood, and the Monte-Carlo CWCE oracle.
// Also verifies that the parallel paths are bit-identical to the serial
// reference.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>

#include "cwce/cwce.hpp"
#include "cwce/reml.hpp"

using namespace cwce;

namespace {

double time_best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

bool panels_equal(const Panel& a, const Panel& b) {
  if (a.n() != b.n() || a.m != b.m) return false;
  for (int i = 0; i < a.n(); ++i) {
    const Individual &x = a.individuals[i], &y = b.individuals[i];
    if (std::memcmp(&x.u0, &y.u0, sizeof(double)) != 0) return false;
    for (size_t k = 0; k < x.y.size(); ++k) {
      if (std::memcmp(&x.y[k], &y.y[k], sizeof(double)) != 0) return false;
      if (x.a[k] != y.a[k]) return false;
    }
  }
  return true;
}

void report(const char* kernel, double serial_s, double parallel_s, bool identical) {
  std::printf("%-22s serial %8.3f ms   omp %8.3f ms   speedup %5.2fx   bit-identical %s\n",
              kernel, serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s,
              identical ? "yes" : "NO");
}

}  // namespace

int main(int argc, char** argv) {
  int threads = 0;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::strcmp(argv[i], "--threads") == 0) threads = std::atoi(argv[i + 1]);
  if (threads > 0) omp_set_num_threads(threads);
  std::printf("OpenMP max threads: %d\n\n", omp_get_max_threads());

  const ScmParams gp = ScmParams::gaussian_example();

  {
    const int n = 50000, m = 10;
    Panel ps, pp;
    const double ts = time_best_of(3, [&] { ps = simulate_panel_serial(gp, n, m, 7); });
    const double tp = time_best_of(3, [&] { pp = simulate_panel(gp, n, m, 7); });
    report("simulate_panel", ts, tp, panels_equal(ps, pp));
  }

  {
    const Panel panel = simulate_panel(gp, 1000, 100, 11);
    const PanelView view = make_panel_view(panel, ModelSpec{});
    VarianceComponents vc;
    vc.sigma_u = gp.latent_cov();
    vc.sigma = gp.sigma;
    double rs = 0, rp = 0;
    const double ts = time_best_of(3, [&] {
      for (int r = 0; r < 50; ++r) rs = restricted_loglik_serial(view, vc);
    });
    const double tp = time_best_of(3, [&] {
      for (int r = 0; r < 50; ++r) rp = restricted_loglik(view, vc);
    });
    report("restricted_loglik x50", ts, tp, std::memcmp(&rs, &rp, sizeof(double)) == 0);
  }

  {
    const Panel panel = simulate_panel(gp, 1, 10, 13);
    const History hist = history_of(panel.individuals[0], gp, 10);
    const ExposureRegime regime = ExposureRegime::lag_pair(3, 1, 1);
    McCwce ms, mp;
    const double ts = time_best_of(3, [&] {
      ms = cwce_monte_carlo_serial(hist, gp, 3, regime, 1000000, 17);
    });
    const double tp = time_best_of(3, [&] {
      mp = cwce_monte_carlo(hist, gp, 3, regime, 1000000, 17);
    });
    report("cwce_monte_carlo 1e6", ts, tp,
           ms.samples.size() == mp.samples.size() &&
               std::memcmp(ms.samples.data(), mp.samples.data(),
                           ms.samples.size() * sizeof(double)) == 0);
  }
  return 0;
}
