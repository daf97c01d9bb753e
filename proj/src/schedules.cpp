#include "pjdm/schedules.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

#include "pjdm/rng.hpp"

namespace pjdm {

void BridgeSchedule::validate() const {
  if (!(T > 0.0)) throw std::invalid_argument("bridge schedule: T must be > 0");
  if (!(g > 0.0)) throw std::invalid_argument("bridge schedule: g must be > 0");
  if (!(m > 0.0 && m < 1.0)) throw std::invalid_argument("bridge schedule: m must lie in (0, 1)");
  if (N < 1) throw std::invalid_argument("bridge schedule: N must be >= 1");
  if (!(rho >= 1.0)) throw std::invalid_argument("bridge schedule: rho must be >= 1");
  if (!(t_min > 0.0 && t_min < T)) {
    throw std::invalid_argument("bridge schedule: t_min must lie in (0, T)");
  }
}

BridgeCoeffs bridge_coeffs(double t, const BridgeSchedule& sched) {
  if (!(t >= 0.0 && t <= sched.T)) {
    throw std::invalid_argument("bridge_coeffs: t=" + std::to_string(t) + " outside [0, T]");
  }
  BridgeCoeffs k;
  k.a = t / sched.T;
  k.b = 1.0 - k.a;
  k.c = sched.g * sched.g * t * (sched.T - t) / sched.T;
  return k;
}

double snr(double t, const BridgeSchedule& sched) {
  if (!(t > 0.0)) throw std::invalid_argument("snr: t must be > 0 (SNR is infinite at t = 0)");
  return 1.0 / (sched.g * sched.g * t);
}

std::vector<double> time_grid(const BridgeSchedule& sched) {
  if (sched.N < 1) throw std::invalid_argument("time_grid: N must be >= 1");
  const double lo = std::pow(sched.t_min, 1.0 / sched.rho);
  const double hi = std::pow(sched.T, 1.0 / sched.rho);
  std::vector<double> t(static_cast<std::size_t>(sched.N) + 1);
  for (int i = 0; i <= sched.N; ++i) {
    t[static_cast<std::size_t>(i)] =
        std::pow(lo + (static_cast<double>(i) / sched.N) * (hi - lo), sched.rho);
  }
  t.front() = sched.t_min;
  t.back() = sched.T;
  return t;
}

namespace {
std::uint64_t hash_string(const std::string& s) { return fnv1a64(s.data(), s.size()); }
}  // namespace

std::uint64_t schedule_hash(const BridgeSchedule& sched) {
  std::ostringstream os;
  os.precision(17);
  os << "bridge:T=" << sched.T << ";g=" << sched.g;
  return hash_string(os.str());
}

RefineSchedule make_refine_schedule(int T_refine, double beta_min, double beta_max, int t_prior) {
  if (T_refine < 1) throw std::invalid_argument("refine schedule: T_refine must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw std::invalid_argument("refine schedule: need 0 < beta_min <= beta_max < 1");
  }
  if (t_prior < 1 || t_prior > T_refine) {
    throw std::invalid_argument("refine schedule: t_prior must lie in [1, T_refine]");
  }
  RefineSchedule s;
  s.T_refine = T_refine;
  s.t_prior = t_prior;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  const auto n = static_cast<std::size_t>(T_refine) + 1;
  s.betas.assign(n, 0.0);
  s.alphas.assign(n, 1.0);
  s.alpha_bars.assign(n, 1.0);
  for (int t = 1; t <= T_refine; ++t) {
    const double frac = T_refine == 1 ? 0.0 : static_cast<double>(t - 1) / (T_refine - 1);
    const double beta = beta_min == beta_max ? beta_min : beta_min + frac * (beta_max - beta_min);
    const auto i = static_cast<std::size_t>(t);
    s.betas[i] = beta;
    s.alphas[i] = 1.0 - beta;
    s.alpha_bars[i] = s.alpha_bars[i - 1] * s.alphas[i];
  }
  return s;
}

std::uint64_t schedule_hash(const RefineSchedule& sched) {
  std::ostringstream os;
  os.precision(17);
  os << "refine:T=" << sched.T_refine << ";bmin=" << sched.beta_min << ";bmax=" << sched.beta_max;
  return hash_string(os.str());
}

}  // namespace pjdm
