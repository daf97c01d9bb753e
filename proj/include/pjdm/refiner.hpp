#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pjdm/bridge.hpp"
#include "pjdm/denoiser.hpp"
#include "pjdm/field.hpp"
#include "pjdm/schedules.hpp"

namespace pjdm {

/// Ranges for the random degradation R. Each draw is uniform in [lo, hi];
/// brightness is a fraction of the blurred image's dynamic range.
struct DegradeParams {
  double sigma_min = 0.8;
  double sigma_max = 1.6;
  int radius = 5;
  double gamma_min = 0.8;
  double gamma_max = 1.2;
  double beta_min = -0.05;
  double beta_max = 0.05;

  void validate() const;
  bool operator==(const DegradeParams&) const = default;
};

/// Normalized samples of exp(-k^2 / (2 sigma^2)) for k = -radius..radius.
/// sigma = 0 gives the unit impulse.
std::vector<double> gaussian_kernel(double sigma, int radius);

/// Separable blur with reflect-101 padding (edge pixel not repeated).
Field gaussian_blur(const Field& x, double sigma, int radius);

struct DegradeDraw {
  double sigma = 0.0;
  double gamma = 1.0;
  double beta = 0.0;
};

DegradeDraw draw_degrade(const DegradeParams& params, std::uint64_t seed);

/// Blur, contrast about the mean, brightness offset, clamp at 0.
Field apply_degrade(const Field& x, const DegradeDraw& draw, int radius);
Sinogram degrade(const Sinogram& x, const DegradeParams& params, std::uint64_t seed);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps for 0 <= t <= T_refine.
Field forward_noise(const Field& x0, int t, const RefineSchedule& sched, const Field& eps);

/// eps_theta(concat(x_t, x_d), t).
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Field predict_eps(const Field& x_t, int t, const Field& x_d) const = 0;
};

class ModelNoisePredictor final : public NoisePredictor {
 public:
  explicit ModelNoisePredictor(const DenoiserModel& model) : model_(model) {}
  Field predict_eps(const Field& x_t, int t, const Field& x_d) const override {
    return model_.forward(x_t, static_cast<double>(t), &x_d);
  }

 private:
  const DenoiserModel& model_;
};

/// Exact noise predictor for the prior x_0 ~ N(mean, s^2 I). With s = 0 it
/// returns the noise that maps x_t back onto `mean`. Ignores x_d.
class GaussianPriorNoiseOracle final : public NoisePredictor {
 public:
  GaussianPriorNoiseOracle(Field mean, double s, const RefineSchedule& sched)
      : mean_(std::move(mean)), s_(s), sched_(sched) {}
  Field predict_eps(const Field& x_t, int t, const Field& x_d) const override;

 private:
  Field mean_;
  double s_;
  RefineSchedule sched_;
};

/// mean((eps_theta - eps)^2) for one draw.
double refiner_loss(const NoisePredictor& model, const Field& x0, const Field& x_d, int t,
                    const Field& eps, const RefineSchedule& sched);

/// Minimizes E||eps - eps_theta(concat(x_t, R(x_0)), t)||^2 over the
/// unpaired tracer-B set with t uniform on [1, t_max or T_refine]. Step
/// randomness derives from (cfg.seed, step); returns the per-step losses.
std::vector<double> train_refiner(DenoiserModel& model, TrainState& state,
                                  std::span<const Sinogram> data, const DegradeParams& degrade,
                                  const TrainConfig& cfg, const RefineSchedule& sched,
                                  const StepCallback& on_step = {});

/// Loss over fixed stratified steps and noise draws.
double refiner_eval_loss(const DenoiserModel& model, std::span<const Sinogram> data,
                         const DegradeParams& degrade, const TrainConfig& cfg,
                         const RefineSchedule& sched, std::uint64_t seed, int draws_per_item = 8);

struct RefineOptions {
  /// 0 runs the full ancestral path (t_prior steps); K > 0 runs K
  /// deterministic DDIM sub-steps on a uniform grid over [0, t_prior].
  int fast_steps = 0;
  /// Called after each step with (t reached, x_t, current x0 estimate).
  std::function<void(int, const Field&, const Field&)> on_step;
};

/// DDIM sub-grid round(j * t_prior / K), j = 0..K, duplicates removed.
std::vector<int> ddim_grid(int t_prior, int steps);

/// Stage-II refinement of a coarse sinogram starting from
/// x_{t_prior} = forward_noise(coarse). Output clamped to >= 0.
Sinogram refine_sample(const NoisePredictor& model, const Sinogram& coarse,
                       const RefineSchedule& sched, const DegradeParams& degrade_params,
                       std::uint64_t seed, const RefineOptions& opts = {});

}  // namespace pjdm
