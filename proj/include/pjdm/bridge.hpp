#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pjdm/denoiser.hpp"
#include "pjdm/field.hpp"
#include "pjdm/phantom.hpp"
#include "pjdm/schedules.hpp"

namespace pjdm {

/// Anything that predicts x_0 from (x_t, t). Samplers only see this
/// interface, so analytic oracles can stand in for a trained network.
class BridgeDenoiser {
 public:
  virtual ~BridgeDenoiser() = default;
  virtual Field predict_x0(const Field& x_t, double t) const = 0;
};

class ModelBridgeDenoiser final : public BridgeDenoiser {
 public:
  ModelBridgeDenoiser(const DenoiserModel& model, const BridgeSchedule& sched)
      : model_(model), sched_(sched) {}
  Field predict_x0(const Field& x_t, double t) const override {
    return model_.precondition(x_t, t, sched_);
  }

 private:
  const DenoiserModel& model_;
  BridgeSchedule sched_;
};

/// a_t x_T + b_t x_0 + sqrt(c_t) eps
Field forward_bridge_sample(const Field& x0, const Field& xT, double t, const Field& eps,
                            const BridgeSchedule& sched);

/// Doob h-term (x_T - x_t) / (g^2 (T - t)); rejects t > T - guard.
Field h_fn(const Field& x_t, double t, const Field& x_T, const BridgeSchedule& sched);

/// Gaussian bridge score -(x_t - a_t x_T - b_t x0_hat) / c_t.
Field bridge_score(const Field& x_t, double t, const Field& x_T, const Field& x0_hat,
                   const BridgeSchedule& sched);

/// Deterministic reverse-SDE drift -g^2 (s - h) for a given x_0 estimate.
Field drift_sde_from(const Field& x_t, double t, const Field& x_T, const Field& x0_hat,
                     const BridgeSchedule& sched);
/// Reverse-ODE drift -g^2 (s/2 - w h) for a given x_0 estimate.
Field drift_ode_from(const Field& x_t, double t, const Field& x_T, const Field& x0_hat,
                     const BridgeSchedule& sched);

Field drift_sde(const Field& x_t, double t, const Field& x_T, const BridgeDenoiser& model,
                const BridgeSchedule& sched);
Field drift_ode(const Field& x_t, double t, const Field& x_T, const BridgeDenoiser& model,
                const BridgeSchedule& sched);

struct SamplerOptions {
  /// Multiplier on the Euler-Maruyama noise; 0 gives the noise-free sampler.
  double noise_scale = 1.0;
  /// Skip the Euler-Maruyama sub-step entirely (t_hat = t_i).
  bool ode_only = false;
  /// Called with (i, x_{i-1}) after every step; i runs N..1.
  std::function<void(int, const Field&)> on_iterate;
};

/// Runs the hybrid sampler over `times` (ascending; walked from the back)
/// starting from `x` at times.back(). Returns the unclamped final iterate.
/// Throws NumericalError on a non-finite iterate.
Field hybrid_integrate(const BridgeDenoiser& model, Field x, const Field& x_T,
                       std::span<const double> times, const BridgeSchedule& sched,
                       std::uint64_t seed, const SamplerOptions& opts = {});

/// Stage-I conversion: starts at x_T at T - guard on the warped grid and
/// clamps the final iterate to >= 0.
Sinogram hybrid_sample(const BridgeDenoiser& model, const Sinogram& x_T,
                       const BridgeSchedule& sched, std::uint64_t seed,
                       const SamplerOptions& opts = {});

/// w(t) for the configured loss-weight identifier.
double bridge_loss_weight(const std::string& kind, double t, const DenoiserModel* model,
                          const BridgeSchedule& sched);

/// w(t) * mean((D(x_t, t) - x_0)^2) for a single draw.
double bridge_loss(const BridgeDenoiser& model, const Field& x0, const Field& xT, double t,
                   const Field& eps, double weight, const BridgeSchedule& sched);

struct TrainState {
  AdamWState optimizer;
  std::uint64_t step = 0;
};

using StepCallback = std::function<void(std::uint64_t step, double loss)>;

/// Minimizes E[w(t) ||D(x_t, t) - x_0||^2] with x_0 = tracer B and x_T =
/// tracer A. Runs from state.step up to cfg.steps; each step's randomness is
/// derived from (cfg.seed, step) so resumed runs replay exactly. Returns the
/// per-step batch losses of the steps it ran.
std::vector<double> train_bridge(DenoiserModel& model, TrainState& state,
                                 std::span<const PairedItem> pairs, const TrainConfig& cfg,
                                 const BridgeSchedule& sched, const StepCallback& on_step = {});

/// Loss averaged over a fixed stratified set of times and noise draws.
double bridge_eval_loss(const DenoiserModel& model, std::span<const PairedItem> pairs,
                        const TrainConfig& cfg, const BridgeSchedule& sched,
                        std::uint64_t seed, int draws_per_item = 8);

/// Endpoint statistics for the bridge preconditioning.
Preconditioning bridge_preconditioning(std::span<const PairedItem> pairs);

}  // namespace pjdm
