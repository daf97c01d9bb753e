#pragma once

#include <cstdint>
#include <vector>

namespace pjdm {

/// Constants of the stage-I bridge with zero drift and constant diffusion g,
/// so the forward marginal is a pinned Brownian bridge.
struct BridgeSchedule {
  double T = 1.0;       // terminal time
  double g = 1.0;       // diffusion coefficient
  double w = 1.0;       // ODE guidance strength on the h term
  double m = 0.3;       // Euler-Maruyama sub-step ratio
  int N = 40;           // sampler steps
  double rho = 7.0;     // grid warping exponent
  double t_min = 1e-4;  // smallest grid time

  /// Throws std::invalid_argument on a violated invariant.
  void validate() const;

  /// Sampling starts here instead of at T, which keeps h finite.
  double start_time() const { return T - guard(); }
  double guard() const { return 1e-6 * T; }
};

struct BridgeCoeffs {
  double a = 0.0;  // weight of x_T
  double b = 0.0;  // weight of x_0
  double c = 0.0;  // variance
};

/// a_t = t/T, b_t = 1 - a_t (so a_t + b_t == 1 exactly), c_t = g^2 t (T - t) / T.
BridgeCoeffs bridge_coeffs(double t, const BridgeSchedule& sched);

/// SNR_t = 1 / (g^2 t); rejects t <= 0.
double snr(double t, const BridgeSchedule& sched);

/// Ascending times t_0 = t_min < ... < t_N = T warped by rho; the sampler
/// walks this array from the back.
std::vector<double> time_grid(const BridgeSchedule& sched);

std::uint64_t schedule_hash(const BridgeSchedule& sched);

/// Discrete DDPM schedule. Arrays are indexed by step t in [0, T_refine];
/// entry 0 holds the t = 0 convention (beta 0, alpha_bar 1).
struct RefineSchedule {
  int T_refine = 0;
  int t_prior = 0;
  double beta_min = 0.0;
  double beta_max = 0.0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  double beta(int t) const { return betas.at(static_cast<std::size_t>(t)); }
  double alpha(int t) const { return alphas.at(static_cast<std::size_t>(t)); }
  double alpha_bar(int t) const { return alpha_bars.at(static_cast<std::size_t>(t)); }
};

/// Linear beta ramp over steps 1..T_refine with a running product for alpha_bar.
RefineSchedule make_refine_schedule(int T_refine, double beta_min, double beta_max, int t_prior);

std::uint64_t schedule_hash(const RefineSchedule& sched);

}  // namespace pjdm
