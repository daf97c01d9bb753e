#include "pjdm/bridge.hpp"

#include <cmath>
#include <sstream>

#include "pjdm/rng.hpp"

namespace pjdm {

Field forward_bridge_sample(const Field& x0, const Field& xT, double t, const Field& eps,
                            const BridgeSchedule& sched) {
  require_same_shape(x0, xT, "forward_bridge_sample");
  require_same_shape(x0, eps, "forward_bridge_sample");
  const BridgeCoeffs k = bridge_coeffs(t, sched);
  if (k.b == 0.0) return xT;
  if (k.a == 0.0) return x0;
  const double sc = std::sqrt(k.c);
  Field out(x0.rows, x0.cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = k.a * xT.data[i] + k.b * x0.data[i] + sc * eps.data[i];
  }
  return out;
}

Field h_fn(const Field& x_t, double t, const Field& x_T, const BridgeSchedule& sched) {
  require_same_shape(x_t, x_T, "h_fn");
  if (t > sched.start_time()) {
    throw std::invalid_argument("h_fn: t too close to T (singular h term)");
  }
  const double denom = sched.g * sched.g * (sched.T - t);
  Field out(x_t.rows, x_t.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = (x_T.data[i] - x_t.data[i]) / denom;
  return out;
}

Field bridge_score(const Field& x_t, double t, const Field& x_T, const Field& x0_hat,
                   const BridgeSchedule& sched) {
  require_same_shape(x_t, x_T, "bridge_score");
  require_same_shape(x_t, x0_hat, "bridge_score");
  const BridgeCoeffs k = bridge_coeffs(t, sched);
  if (k.c < 1e-12) throw std::invalid_argument("bridge_score: c_t below 1e-12 (endpoint)");
  // Written relative to x0_hat (b = 1 - a) so that x_t = x_T = x0_hat gives 0 exactly.
  Field out(x_t.rows, x_t.cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double r = (x_t.data[i] - x0_hat.data[i]) - k.a * (x_T.data[i] - x0_hat.data[i]);
    out.data[i] = -r / k.c;
  }
  return out;
}

Field drift_sde_from(const Field& x_t, double t, const Field& x_T, const Field& x0_hat,
                     const BridgeSchedule& sched) {
  const Field s = bridge_score(x_t, t, x_T, x0_hat, sched);
  const Field h = h_fn(x_t, t, x_T, sched);
  const double g2 = sched.g * sched.g;
  Field out(x_t.rows, x_t.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = -g2 * (s.data[i] - h.data[i]);
  return out;
}

Field drift_ode_from(const Field& x_t, double t, const Field& x_T, const Field& x0_hat,
                     const BridgeSchedule& sched) {
  const Field s = bridge_score(x_t, t, x_T, x0_hat, sched);
  const Field h = h_fn(x_t, t, x_T, sched);
  const double g2 = sched.g * sched.g;
  Field out(x_t.rows, x_t.cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = -g2 * (0.5 * s.data[i] - sched.w * h.data[i]);
  }
  return out;
}

Field drift_sde(const Field& x_t, double t, const Field& x_T, const BridgeDenoiser& model,
                const BridgeSchedule& sched) {
  return drift_sde_from(x_t, t, x_T, model.predict_x0(x_t, t), sched);
}

Field drift_ode(const Field& x_t, double t, const Field& x_T, const BridgeDenoiser& model,
                const BridgeSchedule& sched) {
  return drift_ode_from(x_t, t, x_T, model.predict_x0(x_t, t), sched);
}

namespace {
void check_iterate(const Field& x, int step) {
  if (!all_finite(x)) {
    std::ostringstream os;
    os << "hybrid sampler: non-finite iterate at step " << step << " (max |x| among finite = ";
    double m = 0.0;
    for (double v : x.data) {
      if (std::isfinite(v)) m = std::max(m, std::abs(v));
    }
    os << m << ")";
    throw NumericalError(os.str());
  }
}
}  // namespace

Field hybrid_integrate(const BridgeDenoiser& model, Field x, const Field& x_T,
                       std::span<const double> times, const BridgeSchedule& sched,
                       std::uint64_t seed, const SamplerOptions& opts) {
  require_same_shape(x, x_T, "hybrid_integrate");
  if (times.size() < 2) throw std::invalid_argument("hybrid_integrate: need at least two times");
  Rng rng(seed);
  const int N = static_cast<int>(times.size()) - 1;
  for (int i = N; i >= 1; --i) {
    const double t_i = times[static_cast<std::size_t>(i)];
    const double t_prev = times[static_cast<std::size_t>(i - 1)];
    const double t_hat = opts.ode_only ? t_i : t_i + sched.m * (t_prev - t_i);

    // Euler-Maruyama over [t_hat, t_i]; dt is negative.
    Field x_hat = x;
    if (t_hat != t_i) {
      const double dt = t_hat - t_i;
      const Field d = drift_sde(x, t_i, x_T, model, sched);
      axpy(dt, d, x_hat);
      if (opts.noise_scale != 0.0) {
        const double amp = opts.noise_scale * sched.g * std::sqrt(std::abs(dt));
        for (double& v : x_hat.data) v += amp * rng.normal();
      }
    }

    // Heun predictor over [t_prev, t_hat], then the trapezoidal correction.
    Field x_next = x_hat;
    if (t_prev != t_hat) {
      const double dt = t_prev - t_hat;
      const Field d_hat = drift_ode(x_hat, t_hat, x_T, model, sched);
      axpy(dt, d_hat, x_next);
      if (i != 1) {
        check_iterate(x_next, i);
        const Field d_prime = drift_ode(x_next, t_prev, x_T, model, sched);
        x_next = x_hat;
        for (std::size_t k = 0; k < x_next.size(); ++k) {
          x_next.data[k] += (0.5 * d_prime.data[k] + 0.5 * d_hat.data[k]) * dt;
        }
      }
    }
    check_iterate(x_next, i);
    x = std::move(x_next);
    if (opts.on_iterate) opts.on_iterate(i, x);
  }
  return x;
}

Sinogram hybrid_sample(const BridgeDenoiser& model, const Sinogram& x_T,
                       const BridgeSchedule& sched, std::uint64_t seed,
                       const SamplerOptions& opts) {
  sched.validate();
  std::vector<double> times = time_grid(sched);
  times.back() = sched.start_time();
  Field x = hybrid_integrate(model, x_T.bins, x_T.bins, times, sched, seed, opts);
  return Sinogram(clamp_nonnegative(std::move(x)));
}

double bridge_loss_weight(const std::string& kind, double t, const DenoiserModel* model,
                          const BridgeSchedule& sched) {
  if (kind == "uniform") return 1.0;
  if (kind == "inv_c") {
    const double c = bridge_coeffs(t, sched).c;
    if (!(c > 0.0)) throw std::invalid_argument("loss weight 1/c_t undefined at the endpoints");
    return 1.0 / c;
  }
  if (kind == "precond") {
    if (model == nullptr) return 1.0;
    const double out = model->precond().at(t, sched).out;
    if (!(out > 0.0)) throw std::invalid_argument("loss weight 1/c_out^2 undefined where c_out = 0");
    return 1.0 / (out * out);
  }
  throw std::invalid_argument("unknown loss weight '" + kind + "'");
}

double bridge_loss(const BridgeDenoiser& model, const Field& x0, const Field& xT, double t,
                   const Field& eps, double weight, const BridgeSchedule& sched) {
  const Field x_t = forward_bridge_sample(x0, xT, t, eps, sched);
  const Field d = model.predict_x0(x_t, t);
  require_same_shape(d, x0, "bridge_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double r = d.data[i] - x0.data[i];
    acc += r * r;
  }
  return weight * acc / static_cast<double>(d.size());
}

namespace {
constexpr std::uint64_t kTrainStream = 0xb1d9e;
constexpr std::uint64_t kEvalStream = 0xe7a1;

/// One weighted squared-error draw through the model; accumulates gradients
/// scaled by `grad_scale` and returns the loss.
double bridge_draw(const DenoiserModel& model, const Field& x0, const Field& xT, double t,
                   const Field& eps, const std::string& weight_kind, const BridgeSchedule& sched,
                   std::vector<float>* grads, double grad_scale) {
  const Field x_t = forward_bridge_sample(x0, xT, t, eps, sched);
  const auto k = model.precond().at(t, sched);
  nn::Tape<float> tape;
  const Field f = model.forward(k.in * x_t, k.noise, nullptr, grads ? &tape : nullptr);
  const double w = bridge_loss_weight(weight_kind, t, &model, sched);
  const double n = static_cast<double>(x0.size());
  Field resid(x0.rows, x0.cols);
  double acc = 0.0;
  for (std::size_t i = 0; i < resid.size(); ++i) {
    const double r = k.skip * x_t.data[i] + k.out * f.data[i] - x0.data[i];
    resid.data[i] = r;
    acc += r * r;
  }
  const double loss = w * acc / n;
  if (grads) {
    model.backward(tape, (grad_scale * 2.0 * w * k.out / n) * resid, *grads);
  }
  return loss;
}
}  // namespace

std::vector<double> train_bridge(DenoiserModel& model, TrainState& state,
                                 std::span<const PairedItem> pairs, const TrainConfig& cfg,
                                 const BridgeSchedule& sched, const StepCallback& on_step) {
  cfg.validate();
  sched.validate();
  if (pairs.empty()) throw std::invalid_argument("train_bridge: paired dataset is empty");
  const AdamWConfig opt{cfg.lr, cfg.weight_decay};
  std::vector<double> losses;
  std::vector<float> grads(model.params().size());
  const double upper = sched.T;
  for (; state.step < static_cast<std::uint64_t>(cfg.steps); ++state.step) {
    Rng rng(subseed(cfg.seed, kTrainStream, state.step));
    std::fill(grads.begin(), grads.end(), 0.0f);
    double loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& item = pairs[rng.index(pairs.size())];
      const double t = rng.uniform(sched.t_min, upper);
      const Field eps = rng.normal_field(item.b.n_angles(), item.b.n_bins());
      loss += bridge_draw(model, item.b.bins, item.a.bins, t, eps, cfg.loss_weight, sched, &grads,
                          1.0 / cfg.batch_size);
    }
    loss /= cfg.batch_size;
    if (!std::isfinite(loss)) {
      throw NumericalError("train_bridge: non-finite loss at step " + std::to_string(state.step));
    }
    adamw_step(model.params(), grads, state.optimizer, opt);
    losses.push_back(loss);
    if (on_step) on_step(state.step + 1, loss);
  }
  return losses;
}

double bridge_eval_loss(const DenoiserModel& model, std::span<const PairedItem> pairs,
                        const TrainConfig& cfg, const BridgeSchedule& sched, std::uint64_t seed,
                        int draws_per_item) {
  if (pairs.empty()) throw std::invalid_argument("bridge_eval_loss: empty dataset");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    Rng rng(subseed(seed, kEvalStream, p));
    for (int d = 0; d < draws_per_item; ++d) {
      const double frac = (d + 0.5) / draws_per_item;
      const double t = sched.t_min + frac * (sched.T - sched.t_min);
      const Field eps = rng.normal_field(pairs[p].b.n_angles(), pairs[p].b.n_bins());
      total += bridge_draw(model, pairs[p].b.bins, pairs[p].a.bins, t, eps, cfg.loss_weight,
                           sched, nullptr, 0.0);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

Preconditioning bridge_preconditioning(std::span<const PairedItem> pairs) {
  Preconditioning p;
  p.kind = Preconditioning::Kind::Bridge;
  double n = 0.0, s0 = 0.0, sT = 0.0;
  for (const auto& it : pairs) {
    for (std::size_t i = 0; i < it.b.bins.size(); ++i) {
      s0 += it.b.bins.data[i];
      sT += it.a.bins.data[i];
      n += 1.0;
    }
  }
  if (n == 0.0) return p;
  const double m0 = s0 / n, mT = sT / n;
  double v0 = 0.0, vT = 0.0, c = 0.0;
  for (const auto& it : pairs) {
    for (std::size_t i = 0; i < it.b.bins.size(); ++i) {
      const double d0 = it.b.bins.data[i] - m0;
      const double dT = it.a.bins.data[i] - mT;
      v0 += d0 * d0;
      vT += dT * dT;
      c += d0 * dT;
    }
  }
  p.sigma_0 = std::sqrt(v0 / n);
  p.sigma_T = std::sqrt(vT / n);
  p.cov = c / n;
  if (!(p.sigma_0 > 0.0)) p.sigma_0 = 0.5;
  if (!(p.sigma_T > 0.0)) p.sigma_T = 0.5;
  return p;
}

}  // namespace pjdm
