#include "pjdm/refiner.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pjdm/rng.hpp"

namespace pjdm {

void DegradeParams::validate() const {
  if (!(sigma_min >= 0.0) || !(sigma_max >= sigma_min)) {
    throw std::invalid_argument("degrade: need 0 <= sigma_min <= sigma_max");
  }
  if (!(gamma_min > 0.0) || !(gamma_max >= gamma_min)) {
    throw std::invalid_argument("degrade: need 0 < gamma_min <= gamma_max");
  }
  if (!(beta_max >= beta_min)) throw std::invalid_argument("degrade: need beta_min <= beta_max");
  if (radius < 0) throw std::invalid_argument("degrade: kernel radius must be >= 0");
  if (static_cast<double>(radius) < 3.0 * sigma_max) {
    throw std::invalid_argument("degrade: kernel radius must be >= 3 * sigma_max");
  }
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
  if (radius < 0) throw std::invalid_argument("gaussian_kernel: radius must be >= 0");
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1), 0.0);
  if (sigma <= 0.0) {
    k[static_cast<std::size_t>(radius)] = 1.0;
    return k;
  }
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

namespace {
std::size_t reflect101(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  if (i >= n) i = period - i;
  return static_cast<std::size_t>(i);
}
}  // namespace

Field gaussian_blur(const Field& x, double sigma, int radius) {
  if (sigma <= 0.0 || radius == 0) return x;
  const auto k = gaussian_kernel(sigma, radius);
  const long R = x.rows, C = x.cols;
  Field tmp(x.rows, x.cols);
  for (long r = 0; r < R; ++r) {
    for (long c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        acc += k[static_cast<std::size_t>(j + radius)] * x(static_cast<std::size_t>(r), reflect101(c + j, C));
      }
      tmp(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
    }
  }
  Field out(x.rows, x.cols);
  for (long r = 0; r < R; ++r) {
    for (long c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        acc += k[static_cast<std::size_t>(j + radius)] * tmp(reflect101(r + j, R), static_cast<std::size_t>(c));
      }
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
    }
  }
  return out;
}

DegradeDraw draw_degrade(const DegradeParams& params, std::uint64_t seed) {
  params.validate();
  Rng rng(seed);
  DegradeDraw d;
  d.sigma = rng.uniform(params.sigma_min, params.sigma_max);
  d.gamma = rng.uniform(params.gamma_min, params.gamma_max);
  d.beta = rng.uniform(params.beta_min, params.beta_max);
  return d;
}

Field apply_degrade(const Field& x, const DegradeDraw& draw, int radius) {
  Field y = gaussian_blur(x, draw.sigma, radius);
  if (y.size() == 0) return y;
  const double mu = mean(y);
  const double range = max_value(y) - min_value(y);
  if (draw.gamma != 1.0) {
    for (double& v : y.data) v = draw.gamma * (v - mu) + mu;
  }
  if (draw.beta != 0.0) {
    for (double& v : y.data) v += draw.beta * range;
  }
  return clamp_nonnegative(std::move(y));
}

Sinogram degrade(const Sinogram& x, const DegradeParams& params, std::uint64_t seed) {
  return Sinogram(apply_degrade(x.bins, draw_degrade(params, seed), params.radius));
}

Field forward_noise(const Field& x0, int t, const RefineSchedule& sched, const Field& eps) {
  require_same_shape(x0, eps, "forward_noise");
  if (t < 0 || t > sched.T_refine) {
    throw std::invalid_argument("forward_noise: step " + std::to_string(t) + " outside [0, " +
                                std::to_string(sched.T_refine) + "]");
  }
  if (t == 0) return x0;
  const double ab = sched.alpha_bar(t);
  const double s1 = std::sqrt(ab), s2 = std::sqrt(1.0 - ab);
  Field out(x0.rows, x0.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = s1 * x0.data[i] + s2 * eps.data[i];
  return out;
}

Field GaussianPriorNoiseOracle::predict_eps(const Field& x_t, int t, const Field&) const {
  require_same_shape(x_t, mean_, "prior oracle");
  const double ab = sched_.alpha_bar(t);
  const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
  const double gain = s_ * s_ * sa / (ab * s_ * s_ + 1.0 - ab);
  Field eps(x_t.rows, x_t.cols);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double x0 = mean_.data[i] + gain * (x_t.data[i] - sa * mean_.data[i]);
    eps.data[i] = (x_t.data[i] - sa * x0) / sn;
  }
  return eps;
}

double refiner_loss(const NoisePredictor& model, const Field& x0, const Field& x_d, int t,
                    const Field& eps, const RefineSchedule& sched) {
  const Field x_t = forward_noise(x0, t, sched, eps);
  const Field e = model.predict_eps(x_t, t, x_d);
  require_same_shape(e, eps, "refiner_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double r = e.data[i] - eps.data[i];
    acc += r * r;
  }
  return acc / static_cast<double>(e.size());
}

namespace {
constexpr std::uint64_t kTrainStream = 0x2ef1;
constexpr std::uint64_t kEvalStream = 0x2e7a;
constexpr std::uint64_t kDegradeStream = 0xde6;
constexpr std::uint64_t kInitStream = 0x1a17;
constexpr std::uint64_t kStepStream = 0x57e9;

double refiner_draw(const DenoiserModel& model, const Field& x0, const Field& x_d, int t,
                    const Field& eps, const RefineSchedule& sched, std::vector<float>* grads,
                    double grad_scale) {
  const Field x_t = forward_noise(x0, t, sched, eps);
  nn::Tape<float> tape;
  const Field e = model.forward(x_t, static_cast<double>(t), &x_d, grads ? &tape : nullptr);
  const double n = static_cast<double>(e.size());
  Field resid(e.rows, e.cols);
  double acc = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    resid.data[i] = e.data[i] - eps.data[i];
    acc += resid.data[i] * resid.data[i];
  }
  if (grads) model.backward(tape, (grad_scale * 2.0 / n) * resid, *grads);
  return acc / n;
}

int upper_step(const TrainConfig& cfg, const RefineSchedule& sched) {
  const int hi = cfg.t_max > 0 ? cfg.t_max : sched.T_refine;
  if (hi > sched.T_refine) throw std::invalid_argument("train config: t_max exceeds T_refine");
  return hi;
}
}  // namespace

std::vector<double> train_refiner(DenoiserModel& model, TrainState& state,
                                  std::span<const Sinogram> data, const DegradeParams& degrade_p,
                                  const TrainConfig& cfg, const RefineSchedule& sched,
                                  const StepCallback& on_step) {
  cfg.validate();
  degrade_p.validate();
  if (data.empty()) throw std::invalid_argument("train_refiner: unpaired dataset is empty");
  if (model.arch().in_channels != 2) {
    throw std::invalid_argument("train_refiner: refiner model needs 2 input channels");
  }
  const int hi = upper_step(cfg, sched);
  const AdamWConfig opt{cfg.lr, cfg.weight_decay};
  std::vector<double> losses;
  std::vector<float> grads(model.params().size());
  for (; state.step < static_cast<std::uint64_t>(cfg.steps); ++state.step) {
    Rng rng(subseed(cfg.seed, kTrainStream, state.step));
    std::fill(grads.begin(), grads.end(), 0.0f);
    double loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Sinogram& x0 = data[rng.index(data.size())];
      const std::uint64_t dseed = rng.engine()();
      const Field x_d = degrade(x0, degrade_p, dseed).bins;
      const int t = rng.integer(1, hi);
      const Field eps = rng.normal_field(x0.n_angles(), x0.n_bins());
      loss += refiner_draw(model, x0.bins, x_d, t, eps, sched, &grads, 1.0 / cfg.batch_size);
    }
    loss /= cfg.batch_size;
    if (!std::isfinite(loss)) {
      throw NumericalError("train_refiner: non-finite loss at step " + std::to_string(state.step));
    }
    adamw_step(model.params(), grads, state.optimizer, opt);
    losses.push_back(loss);
    if (on_step) on_step(state.step + 1, loss);
  }
  return losses;
}

double refiner_eval_loss(const DenoiserModel& model, std::span<const Sinogram> data,
                         const DegradeParams& degrade_p, const TrainConfig& cfg,
                         const RefineSchedule& sched, std::uint64_t seed, int draws_per_item) {
  if (data.empty()) throw std::invalid_argument("refiner_eval_loss: empty dataset");
  const int hi = upper_step(cfg, sched);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < data.size(); ++p) {
    Rng rng(subseed(seed, kEvalStream, p));
    const Field x_d = degrade(data[p], degrade_p, subseed(seed, kDegradeStream, p)).bins;
    for (int d = 0; d < draws_per_item; ++d) {
      const int t = 1 + static_cast<int>((d + 0.5) / draws_per_item * (hi - 1) + 0.5);
      const Field eps = rng.normal_field(data[p].n_angles(), data[p].n_bins());
      total += refiner_draw(model, data[p].bins, x_d, std::min(t, hi), eps, sched, nullptr, 0.0);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

std::vector<int> ddim_grid(int t_prior, int steps) {
  if (t_prior < 1) throw std::invalid_argument("ddim_grid: t_prior must be >= 1");
  if (steps < 1) throw std::invalid_argument("ddim_grid: need at least one sub-step");
  std::vector<int> g;
  for (int j = 0; j <= steps; ++j) {
    const int t = static_cast<int>(std::lround(static_cast<double>(j) * t_prior / steps));
    if (g.empty() || g.back() != t) g.push_back(t);
  }
  return g;
}

namespace {
void check_refine_iterate(const Field& x, int t) {
  if (all_finite(x)) return;
  std::ostringstream os;
  double m = 0.0;
  std::size_t bad = 0;
  for (double v : x.data) {
    if (std::isfinite(v)) {
      m = std::max(m, std::abs(v));
    } else {
      ++bad;
    }
  }
  os << "refine_sample: " << bad << " non-finite values at step " << t
     << " (max |x| among finite = " << m << ")";
  throw NumericalError(os.str());
}
}  // namespace

Sinogram refine_sample(const NoisePredictor& model, const Sinogram& coarse,
                       const RefineSchedule& sched, const DegradeParams& degrade_params,
                       std::uint64_t seed, const RefineOptions& opts) {
  const int tp = sched.t_prior;
  if (tp < 1 || tp > sched.T_refine) throw std::invalid_argument("refine_sample: bad t_prior");
  if (opts.fast_steps < 0) throw std::invalid_argument("refine_sample: fast_steps must be >= 0");
  const Field x_d = degrade(coarse, degrade_params, subseed(seed, kDegradeStream, 0)).bins;
  const std::size_t R = coarse.n_angles(), C = coarse.n_bins();
  Field x = forward_noise(coarse.bins, tp, sched, Rng(subseed(seed, kInitStream, 0)).normal_field(R, C));
  check_refine_iterate(x, tp);

  if (opts.fast_steps == 0) {
    Rng rng(subseed(seed, kStepStream, 0));
    for (int t = tp; t >= 1; --t) {
      const Field e = model.predict_eps(x, t, x_d);
      const double a = sched.alpha(t), ab = sched.alpha_bar(t);
      const double coef = (1.0 - a) / std::sqrt(1.0 - ab);
      const double inv = 1.0 / std::sqrt(a);
      const double sigma = t > 1 ? std::sqrt(sched.beta(t)) : 0.0;
      Field x0_hat;
      if (opts.on_step) {
        x0_hat = Field(R, C);
        const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
        for (std::size_t i = 0; i < x.size(); ++i) x0_hat.data[i] = (x.data[i] - sn * e.data[i]) / sa;
      }
      for (std::size_t i = 0; i < x.size(); ++i) {
        x.data[i] = inv * (x.data[i] - coef * e.data[i]);
        if (sigma > 0.0) x.data[i] += sigma * rng.normal();
      }
      check_refine_iterate(x, t - 1);
      if (opts.on_step) opts.on_step(t - 1, x, x0_hat);
    }
  } else {
    const auto grid = ddim_grid(tp, opts.fast_steps);
    Field x0_hat(R, C);
    for (std::size_t j = grid.size() - 1; j >= 1; --j) {
      const int t = grid[j], tn = grid[j - 1];
      const Field e = model.predict_eps(x, t, x_d);
      const double sa = std::sqrt(sched.alpha_bar(t)), sn = std::sqrt(1.0 - sched.alpha_bar(t));
      const double na = std::sqrt(sched.alpha_bar(tn)), nn = std::sqrt(1.0 - sched.alpha_bar(tn));
      for (std::size_t i = 0; i < x.size(); ++i) {
        x0_hat.data[i] = (x.data[i] - sn * e.data[i]) / sa;
        x.data[i] = na * x0_hat.data[i] + nn * e.data[i];
      }
      check_refine_iterate(x, tn);
      if (opts.on_step) opts.on_step(tn, x, x0_hat);
    }
  }
  return Sinogram(clamp_nonnegative(std::move(x)));
}

}  // namespace pjdm
