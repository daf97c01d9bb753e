#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pjdm/field.hpp"
#include "pjdm/nn/network.hpp"
#include "pjdm/schedules.hpp"

namespace pjdm {

/// Scalings around the raw network F:
///   D(x_t, t) = c_skip x_t + c_out F(c_in x_t, c_noise).
/// The bridge form uses the endpoint statistics (sigma_0 of x_0, sigma_T of
/// x_T and their covariance) so that the network input and target have unit
/// variance at every t.
struct Preconditioning {
  enum class Kind { Identity, Bridge };

  Kind kind = Kind::Bridge;
  double sigma_0 = 0.5;
  double sigma_T = 0.5;
  double cov = 0.0;

  struct Coeffs {
    double skip = 0.0;
    double out = 1.0;
    double in = 1.0;
    double noise = 0.0;
  };

  Coeffs at(double t, const BridgeSchedule& sched) const;
  std::string to_string() const;
  static Preconditioning parse(std::string_view text);
  bool operator==(const Preconditioning&) const = default;
};

/// Network plus preconditioning. Parameters are float32; the descriptor
/// string fully determines the parameter layout.
class DenoiserModel {
 public:
  DenoiserModel() = default;
  DenoiserModel(nn::Architecture arch, Preconditioning precond, std::uint64_t seed);

  /// "<architecture> | <preconditioning>"
  std::string descriptor() const;
  static DenoiserModel from_descriptor(std::string_view text);

  const nn::Architecture& arch() const { return net_.arch(); }
  const Preconditioning& precond() const { return precond_; }
  void set_precond(const Preconditioning& p) { precond_ = p; }
  std::vector<float>& params() { return net_.params(); }
  const std::vector<float>& params() const { return net_.params(); }
  const nn::Network<float>& net() const { return net_; }

  /// F(x, tau) for one-channel models, F(concat(x, cond), tau) for
  /// two-channel ones. `cond` must be given iff the model has 2 inputs.
  Field forward(const Field& x, double tau, const Field* cond = nullptr,
                nn::Tape<float>* tape = nullptr) const;

  /// Accumulates parameter gradients for the pass recorded in `tape`.
  void backward(nn::Tape<float>& tape, const Field& grad_out, std::vector<float>& grads) const;

  /// x_0 prediction D(x_t, t).
  Field precondition(const Field& x_t, double t, const BridgeSchedule& sched,
                     nn::Tape<float>* tape = nullptr) const;

 private:
  nn::Network<float> net_;
  Preconditioning precond_;
};

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  bool operator==(const AdamWState&) const = default;
};

/// One AdamW update with bias correction and decoupled weight decay:
///   p <- p - lr*wd*p - lr * m_hat / (sqrt(v_hat) + eps)
/// A non-finite gradient throws NumericalError and leaves everything untouched.
template <class S>
void adamw_step(std::vector<S>& params, const std::vector<S>& grads, AdamWState& state,
                const AdamWConfig& cfg);

extern template void adamw_step<float>(std::vector<float>&, const std::vector<float>&,
                                       AdamWState&, const AdamWConfig&);
extern template void adamw_step<double>(std::vector<double>&, const std::vector<double>&,
                                        AdamWState&, const AdamWConfig&);

/// Training knobs shared by both stages.
struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.0;
  int batch_size = 4;
  int steps = 1000;
  std::uint64_t seed = 0;
  /// Bridge loss weight w(t): "precond" (1/c_out^2), "inv_c" (1/c_t) or "uniform".
  std::string loss_weight = "precond";
  /// Bridge time distribution p(t); only "uniform" on [t_min, T] is provided.
  std::string time_dist = "uniform";
  /// Refiner: upper end of the training step range, 0 meaning T_refine.
  int t_max = 0;

  void validate() const;
};

/// Checkpoint: "PJDM", version u32, descriptor (u32 length + text), schedule
/// hash u64, train step u64, parameter count u64, float32 LE parameters in
/// the canonical layer order, then an optimizer flag u8 followed (if set) by
/// the AdamW moments as float64 and the AdamW step u64.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DenoiserModel model;
  std::uint64_t schedule_hash = 0;
  std::uint64_t train_step = 0;
  bool has_optimizer = false;
  AdamWState optimizer;
};

void save_checkpoint(const std::string& path, const DenoiserModel& model,
                     std::uint64_t schedule_hash, std::uint64_t train_step = 0,
                     const AdamWState* optimizer = nullptr);

/// Rejects bad magic/version, truncation, a descriptor whose architecture
/// differs from `expected` (when given) and a schedule hash mismatch (when
/// `expected_hash` is nonzero).
Checkpoint load_checkpoint(const std::string& path, const nn::Architecture* expected = nullptr,
                           std::uint64_t expected_hash = 0);

}  // namespace pjdm
