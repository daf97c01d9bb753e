#include "pjdm/denoiser.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "pjdm/binary_io.hpp"

namespace pjdm {

Preconditioning::Coeffs Preconditioning::at(double t, const BridgeSchedule& sched) const {
  if (!(t > 0.0)) throw std::invalid_argument("precondition: t must be > 0");
  Coeffs k;
  k.noise = std::log(t) / 4.0;
  if (kind == Kind::Identity) return k;
  const BridgeCoeffs bc = bridge_coeffs(t, sched);
  const double s0 = sigma_0 * sigma_0;
  const double sT = sigma_T * sigma_T;
  const double A = bc.a * bc.a * sT + bc.b * bc.b * s0 + 2.0 * bc.a * bc.b * cov + bc.c;
  k.in = 1.0 / std::sqrt(A);
  k.skip = (bc.b * s0 + bc.a * cov) / A;
  k.out = std::sqrt(std::max(0.0, bc.a * bc.a * (s0 * sT - cov * cov) + s0 * bc.c)) * k.in;
  return k;
}

namespace {
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

std::string Preconditioning::to_string() const {
  if (kind == Kind::Identity) return "precond=identity";
  return "precond=bridge s0=" + fmt(sigma_0) + " sT=" + fmt(sigma_T) + " cov=" + fmt(cov);
}

Preconditioning Preconditioning::parse(std::string_view text) {
  Preconditioning p;
  std::istringstream is{std::string(text)};
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("precond: bad token '" + tok + "'");
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "precond") {
      if (val == "identity") {
        p.kind = Kind::Identity;
      } else if (val == "bridge") {
        p.kind = Kind::Bridge;
      } else {
        throw std::invalid_argument("precond: unknown kind '" + val + "'");
      }
    } else if (key == "s0") {
      p.sigma_0 = std::stod(val);
    } else if (key == "sT") {
      p.sigma_T = std::stod(val);
    } else if (key == "cov") {
      p.cov = std::stod(val);
    } else {
      throw std::invalid_argument("precond: unknown key '" + key + "'");
    }
  }
  return p;
}

DenoiserModel::DenoiserModel(nn::Architecture arch, Preconditioning precond, std::uint64_t seed)
    : net_(std::move(arch)), precond_(precond) {
  net_.init(seed);
}

std::string DenoiserModel::descriptor() const {
  return arch().to_string() + " | " + precond_.to_string();
}

DenoiserModel DenoiserModel::from_descriptor(std::string_view text) {
  const auto bar = text.find('|');
  if (bar == std::string_view::npos) throw std::invalid_argument("descriptor: missing '|'");
  DenoiserModel m;
  m.net_ = nn::Network<float>(nn::Architecture::parse(text.substr(0, bar)));
  m.precond_ = Preconditioning::parse(text.substr(bar + 1));
  return m;
}

Field DenoiserModel::forward(const Field& x, double tau, const Field* cond,
                             nn::Tape<float>* tape) const {
  const int channels = arch().in_channels;
  if ((cond != nullptr) != (channels == 2)) {
    throw std::invalid_argument("denoiser: conditioning input must be given iff the model has 2 "
                                "input channels");
  }
  if (channels > 2) throw std::invalid_argument("denoiser: at most 2 input channels supported");
  if (cond) require_same_shape(x, *cond, "denoiser conditioning");
  nn::Tensor3<float> in(channels, static_cast<int>(x.rows), static_cast<int>(x.cols));
  for (std::size_t i = 0; i < x.size(); ++i) {
    in.data(0, static_cast<Eigen::Index>(i)) = static_cast<float>(x.data[i]);
    if (cond) in.data(1, static_cast<Eigen::Index>(i)) = static_cast<float>(cond->data[i]);
  }
  const auto out = net_.forward(in, tau, tape);
  Field f(x.rows, x.cols);
  for (std::size_t i = 0; i < f.size(); ++i) f.data[i] = out.data(0, static_cast<Eigen::Index>(i));
  return f;
}

void DenoiserModel::backward(nn::Tape<float>& tape, const Field& grad_out,
                             std::vector<float>& grads) const {
  nn::Tensor3<float> g(1, static_cast<int>(grad_out.rows), static_cast<int>(grad_out.cols));
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    g.data(0, static_cast<Eigen::Index>(i)) = static_cast<float>(grad_out.data[i]);
  }
  net_.backward(tape, g, grads);
}

Field DenoiserModel::precondition(const Field& x_t, double t, const BridgeSchedule& sched,
                                  nn::Tape<float>* tape) const {
  const auto k = precond_.at(t, sched);
  Field out = k.skip * x_t;
  if (k.out != 0.0) axpy(k.out, forward(k.in * x_t, k.noise, nullptr, tape), out);
  return out;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train config: learning rate must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train config: weight decay must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
  if (steps < 0) throw std::invalid_argument("train config: steps must be >= 0");
  if (loss_weight != "precond" && loss_weight != "inv_c" && loss_weight != "uniform") {
    throw std::invalid_argument("train config: unknown loss weight '" + loss_weight + "'");
  }
  if (time_dist != "uniform") {
    throw std::invalid_argument("train config: unknown time distribution '" + time_dist + "'");
  }
  if (t_max < 0) throw std::invalid_argument("train config: t_max must be >= 0");
}

template <class S>
void adamw_step(std::vector<S>& params, const std::vector<S>& grads, AdamWState& state,
                const AdamWConfig& cfg) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adamw: gradient count does not match parameter count");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(static_cast<double>(grads[i]))) {
      throw NumericalError("adamw: non-finite gradient at index " + std::to_string(i));
    }
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    double p = static_cast<double>(params[i]);
    p -= cfg.lr * cfg.weight_decay * p;
    p -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    params[i] = static_cast<S>(p);
  }
}

template void adamw_step<float>(std::vector<float>&, const std::vector<float>&, AdamWState&,
                                const AdamWConfig&);
template void adamw_step<double>(std::vector<double>&, const std::vector<double>&, AdamWState&,
                                 const AdamWConfig&);

void save_checkpoint(const std::string& path, const DenoiserModel& model,
                     std::uint64_t schedule_hash, std::uint64_t train_step,
                     const AdamWState* optimizer) {
  binio::Writer w;
  w.bytes("PJDM");
  w.u32(kCheckpointVersion);
  const std::string desc = model.descriptor();
  w.u32(static_cast<std::uint32_t>(desc.size()));
  w.bytes(desc);
  w.u64(schedule_hash);
  w.u64(train_step);
  w.u64(model.params().size());
  for (float p : model.params()) w.f32(p);
  const bool has_opt = optimizer != nullptr && optimizer->m.size() == model.params().size();
  w.u8(has_opt ? 1 : 0);
  if (has_opt) {
    for (double v : optimizer->m) w.f64(v);
    for (double v : optimizer->v) w.f64(v);
    w.u64(optimizer->step);
  }
  binio::write_file_atomic(path, w.buffer());
}

Checkpoint load_checkpoint(const std::string& path, const nn::Architecture* expected,
                           std::uint64_t expected_hash) {
  binio::Reader r(binio::read_file(path), "checkpoint " + path);
  if (r.bytes(4) != "PJDM") throw std::runtime_error(path + ": not a PJDM checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto desc_len = r.u32();
  const std::string desc = r.bytes(desc_len);
  Checkpoint ck;
  ck.model = DenoiserModel::from_descriptor(desc);
  if (expected && !(ck.model.arch() == *expected)) {
    throw std::runtime_error(path + ": architecture mismatch (checkpoint '" +
                             ck.model.arch().to_string() + "', expected '" +
                             expected->to_string() + "')");
  }
  ck.schedule_hash = r.u64();
  if (expected_hash != 0 && ck.schedule_hash != expected_hash) {
    throw std::runtime_error(path + ": schedule hash mismatch");
  }
  ck.train_step = r.u64();
  const auto count = r.u64();
  if (count != ck.model.params().size()) {
    throw std::runtime_error(path + ": parameter count does not match descriptor");
  }
  std::vector<float> params(count);
  for (float& p : params) p = r.f32();
  ck.has_optimizer = r.u8() != 0;
  if (ck.has_optimizer) {
    ck.optimizer.m.resize(count);
    ck.optimizer.v.resize(count);
    for (double& v : ck.optimizer.m) v = r.f64();
    for (double& v : ck.optimizer.v) v = r.f64();
    ck.optimizer.step = r.u64();
  }
  if (r.remaining() != 0) throw std::runtime_error(path + ": trailing bytes after checkpoint");
  ck.model.params() = std::move(params);
  return ck;
}

}  // namespace pjdm
