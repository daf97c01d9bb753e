// Acceptance run: one PASS/FAIL line per criterion. Criteria 9 and 10 drive
// the pjdm CLI end to end; the rest are direct oracle checks.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "../unit/bridge_oracles.hpp"
#include "pjdm/binary_io.hpp"
#include "pjdm/bridge.hpp"
#include "pjdm/metrics.hpp"
#include "pjdm/nn/network.hpp"
#include "pjdm/phantom.hpp"
#include "pjdm/refiner.hpp"
#include "pjdm/rng.hpp"

namespace fs = std::filesystem;
using namespace pjdm;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, const char* f = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Field scalar(double v) { return Field(1, 1, v); }

Field random_field(std::size_t r, std::size_t c, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  Field f(r, c);
  for (double& v : f.data) v = rng.uniform(lo, hi);
  return f;
}

double max_abs_diff(const Field& a, const Field& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

Outcome c1_bridge_moments() {
  const auto t0 = std::chrono::steady_clock::now();
  const BridgeSchedule s;
  const double x0 = 0.2, xT = 0.9, t = s.T / 2;
  const auto k = bridge_coeffs(t, s);
  Rng rng(2024);
  const int n = 10000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = forward_bridge_sample(scalar(x0), scalar(xT), t, scalar(rng.normal()), s).data[0];
    sum += v;
    sum2 += v * v;
  }
  const double m = sum / n, var = sum2 / n - m * m;
  const double mean_err = std::abs(m - (x0 + xT) / 2), var_err = std::abs(var - k.c) / k.c;
  const double secs = seconds_since(t0);
  const bool ok = mean_err < 3.0 * std::sqrt(k.c / n) && var_err < 0.05 && secs < 5.0;
  return {ok, "mean err " + num(mean_err) + ", var rel err " + num(var_err) + ", " + num(secs) + " s"};
}

Outcome c2_endpoints() {
  BridgeSchedule s;
  s.T = 1.7;
  bool ok = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto x0 = random_field(7, 6, seed);
    const auto xT = random_field(7, 6, seed + 100);
    const auto eps = random_field(7, 6, seed + 200, -4.0, 4.0);
    ok = ok && forward_bridge_sample(x0, xT, 0.0, eps, s) == x0;
    ok = ok && forward_bridge_sample(x0, xT, s.T, eps, s) == xT;
  }
  return {ok, "t = 0 and t = T bitwise over 5 draws"};
}

Outcome c3_fixed_point() {
  const BridgeSchedule s;
  const auto x0 = random_field(8, 8, 3);
  test::FixedDenoiser oracle(x0);
  SamplerOptions opts;
  opts.noise_scale = 0.0;
  double worst = 0.0;
  int calls = 0;
  opts.on_iterate = [&](int, const Field& x) {
    ++calls;
    worst = std::max(worst, max_abs_diff(x, x0));
  };
  const auto out = hybrid_sample(oracle, Sinogram(x0), s, 1, opts);
  worst = std::max(worst, max_abs_diff(out.bins, x0));
  return {worst <= 1e-15 && calls == s.N,
          std::to_string(calls) + " iterates, max deviation " + num(worst)};
}

std::vector<double> warped(double lo, double hi, int n, double rho) {
  std::vector<double> t(static_cast<std::size_t>(n) + 1);
  const double a = std::pow(lo, 1.0 / rho), b = std::pow(hi, 1.0 / rho);
  for (int i = 0; i <= n; ++i) t[static_cast<std::size_t>(i)] = std::pow(a + (b - a) * i / n, rho);
  t.front() = lo;
  t.back() = hi;
  return t;
}

Outcome c4_convergence() {
  const auto t0 = std::chrono::steady_clock::now();
  const BridgeSchedule s;
  const double mu0 = 0.3, v0 = 0.04, xT = 0.8, xi = 1.5;
  test::LinearGaussianDenoiser oracle(mu0, v0, scalar(xT), s);
  // Integrates from t = 0.5 down to t_min: the asymptotic regime of the scheme.
  const double lo = s.t_min, hi = 0.5;
  const double start = oracle.marginal_mean(hi, xT) + std::sqrt(oracle.marginal_var(hi)) * xi;
  const double exact = oracle.marginal_mean(lo, xT) + std::sqrt(oracle.marginal_var(lo)) * xi;
  SamplerOptions opts;
  opts.ode_only = true;
  std::vector<double> err;
  for (int n : {10, 20, 40}) {
    const auto out = hybrid_integrate(oracle, scalar(start), scalar(xT), warped(lo, hi, n, s.rho), s, 0, opts);
    err.push_back(std::abs(out.data[0] - exact));
  }
  const double r1 = err[0] / err[1], r2 = err[1] / err[2], secs = seconds_since(t0);
  return {r1 >= 3.0 && r2 >= 3.0 && secs < 10.0,
          "error ratios " + num(r1, "%.2f") + ", " + num(r2, "%.2f") + ", " + num(secs) + " s"};
}

Outcome c5_refiner_inversion() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto coarse = Sinogram(random_field(8, 8, 40 + seed));
    {
      const auto sched = make_refine_schedule(1000, 1e-4, 0.02, 1);
      GaussianPriorNoiseOracle oracle(coarse.bins, 0.0, sched);
      worst = std::max(worst, max_abs_diff(refine_sample(oracle, coarse, sched, {}, seed).bins, coarse.bins));
    }
    const auto sched = make_refine_schedule(1000, 1e-4, 0.02, 185);
    GaussianPriorNoiseOracle oracle(coarse.bins, 0.0, sched);
    for (int k : {0, 50, 185}) {
      RefineOptions opts;
      opts.fast_steps = k;
      worst = std::max(worst, max_abs_diff(refine_sample(oracle, coarse, sched, {}, seed, opts).bins, coarse.bins));
    }
  }
  return {worst <= 1e-5, "max abs error " + num(worst) + " (t = 1, full ancestral, DDIM 50 and 185)"};
}

nn::Tensor3<double> random_tensor(int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  nn::Tensor3<double> t(c, h, w);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = rng.normal();
  return t;
}

// Worst relative error of backprop against central differences, over all
// parameters and inputs, for the probe loss sum(r .* F(x)).
double grad_error(const nn::Architecture& arch, int h, int w, std::uint64_t seed) {
  nn::Network<double> net(arch);
  net.randomize(seed, 0.3);
  const auto x = random_tensor(arch.in_channels, h, w, seed + 1);
  const auto r = random_tensor(1, h, w, seed + 2);
  const double tau = 0.37, eps = 1e-6;
  auto loss = [&](const nn::Tensor3<double>& in) { return net.forward(in, tau).data.cwiseProduct(r.data).sum(); };
  nn::Tape<double> tape;
  net.forward(x, tau, &tape);
  std::vector<double> grads(net.params().size(), 0.0);
  const auto gx = net.backward(tape, r, grads);
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max(1.0, std::abs(n)); };
  double worst = 0.0;
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const double keep = net.params()[i];
    net.params()[i] = keep + eps;
    const double up = loss(x);
    net.params()[i] = keep - eps;
    const double dn = loss(x);
    net.params()[i] = keep;
    worst = std::max(worst, rel(grads[i], (up - dn) / (2 * eps)));
  }
  auto xp = x;
  for (Eigen::Index i = 0; i < x.data.size(); ++i) {
    const double keep = xp.data.data()[i];
    xp.data.data()[i] = keep + eps;
    const double up = loss(xp);
    xp.data.data()[i] = keep - eps;
    const double dn = loss(xp);
    xp.data.data()[i] = keep;
    worst = std::max(worst, rel(gx.data.data()[i], (up - dn) / (2 * eps)));
  }
  return worst;
}

Outcome c6_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  nn::Architecture unet;
  unet.in_channels = 2;
  unet.widths = {3, 4, 5};
  unet.time_dim = 4;
  nn::Architecture linear;
  linear.kind = nn::Architecture::Kind::Linear;
  linear.in_channels = 1;
  linear.time_dim = 2;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    worst = std::max(worst, grad_error(unet, 9, 10, seed));
    worst = std::max(worst, grad_error(linear, 5, 4, seed + 10));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0, "worst relative error " + num(worst) + ", " + num(secs) + " s"};
}

Field f22(double a, double b, double c, double d) {
  Field f(2, 2);
  f.data = {a, b, c, d};
  return f;
}

Outcome c7_metrics() {
  const auto I = f22(1, 0, 0, 1), ref = f22(1, 0, 0, 0);
  MetricsConfig literal;
  literal.psnr_convention = PsnrConvention::Literal;
  const double p_std = psnr(I, ref), p_lit = psnr(I, ref, literal);
  const auto J = random_field(16, 16, 7), K = random_field(16, 16, 8);
  const bool ssim_one = ssim(J, J) == 1.0;
  const double affine = std::abs(nrmse(3.0 * J + Field(16, 16, 0.5), 3.0 * K + Field(16, 16, 0.5)) - nrmse(J, K));
  const bool ok = std::abs(p_std - 6.0206) < 1e-4 && std::abs(p_lit) < 1e-4 && ssim_one && affine < 1e-10;
  return {ok, "psnr " + num(p_std, "%.6f") + " / " + num(p_lit, "%.2g") + " dB, ssim(I,I) " +
                  (ssim_one ? "1" : "!= 1") + ", affine nrmse diff " + num(affine)};
}

Outcome c8_radon() {
  // Linearity.
  const auto I = random_field(32, 32, 1), J = random_field(32, 32, 2);
  const auto lhs = radon(ImageGrid(0.7 * I + 2.3 * J), 20, 32).bins;
  const auto rhs = 0.7 * radon(ImageGrid(I), 20, 32).bins + 2.3 * radon(ImageGrid(J), 20, 32).bins;
  const double lin = max_abs_diff(lhs, rhs) / max_value(rhs);

  // Per-angle mass of a phantom inside the inscribed circle.
  const auto img = make_phantom(random_phantom_spec(77), Tracer::A, 64);
  double mass = 0.0;
  for (double v : img.values()) mass += v;
  const auto s = radon(img, 60, 64);
  double mass_err = 0.0;
  for (std::size_t k = 0; k < 60; ++k) {
    double row = 0.0;
    for (std::size_t j = 0; j < 64; ++j) row += s.bins(k, j);
    mass_err = std::max(mass_err, std::abs(row - mass) / mass);
  }

  // Rotational symmetry, on a smooth radial profile.
  const std::size_t n = 128;
  Field bump(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double dx = c + 0.5 - 64.0, dy = r + 0.5 - 64.0;
      bump(r, c) = std::exp(-(dx * dx + dy * dy) / (2.0 * 16.0 * 16.0));
    }
  }
  const auto sb = radon(ImageGrid(std::move(bump)), 60, 128);
  double sym = 0.0;
  for (std::size_t k = 1; k < 60; ++k) {
    for (std::size_t j = 0; j < 128; ++j) sym = std::max(sym, std::abs(sb.bins(k, j) - sb.bins(0, j)));
  }
  sym /= max_value(sb.bins);
  return {lin < 1e-6 && mass_err < 0.01 && sym < 1e-3,
          "linearity " + num(lin) + ", mass " + num(mass_err) + ", row symmetry " + num(sym)};
}

// ---- CLI-driven criteria ----

struct Cli {
  std::string exe;
  fs::path log;

  bool run(const std::string& command, const fs::path& config) const {
    const std::string line = "\"" + exe + "\" " + command + " --config \"" + config.string() + "\" >> \"" +
                             log.string() + "\" 2>&1";
    return std::system(line.c_str()) == 0;
  }
};

const char* kCommands[] = {"gen-data", "train-bridge", "train-refiner", "convert", "evaluate", "ablate"};

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "run_log.txt") continue;
    const auto raw = binio::read_file(e.path());
    out[fs::relative(e.path(), root).generic_string()] = std::string(raw.begin(), raw.end());
  }
  return out;
}

// The desk-scale benchmark: 64 paired + 128 unpaired 60x64 sinograms, 16 test items.
json e2e_config(const fs::path& out) {
  return {
      {"out_dir", out.string()},
      {"seed", 1},
      {"bridge_lr", 1e-3},
      {"bridge_steps", 2000},
      {"refiner_lr", 5e-4},
      {"refiner_steps", 2000},
      {"refiner_t_max", 185},
      {"checkpoint_every", 500},
  };
}

json small_config(const fs::path& out) {
  return {{"out_dir", out.string()}, {"seed", 3},          {"n_angles", 12},      {"n_bins", 16},
          {"image_size", 16},        {"n_paired", 4},      {"n_unpaired", 4},     {"n_test", 2},
          {"bridge_widths", {8}},    {"refiner_widths", {8}}, {"bridge_steps", 20}, {"refiner_steps", 20},
          {"checkpoint_every", 8},   {"bridge_N", 8},      {"fast_steps", 10}};
}

void write_json(const fs::path& p, const json& j) { binio::write_text_atomic(p, j.dump(2) + "\n"); }

Outcome c9_end_to_end(const Cli& cli, const fs::path& work) {
  const fs::path run = work / "e2e";
  fs::remove_all(run);
  fs::create_directories(work);
  const fs::path cfg = work / "e2e_config.json";
  write_json(cfg, e2e_config(run));
  const auto t0 = std::chrono::steady_clock::now();
  for (const char* c : kCommands) {
    if (!cli.run(c, cfg)) return {false, std::string("pjdm ") + c + " failed, see " + cli.log.string()};
  }
  const double minutes = seconds_since(t0) / 60.0;
  std::ifstream is(run / "ablate" / "ablation.csv");
  std::map<std::string, std::vector<double>> rows;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string name, tok;
    std::getline(ls, name, ',');
    while (std::getline(ls, tok, ',')) rows[name].push_back(std::stod(tok));
  }
  if (rows.size() != 3 || !rows.count("ce_only") || !rows.count("ce_pr") || !rows.count("pr_only")) {
    return {false, "ablation.csv does not have the three variant rows"};
  }
  const auto& ce = rows["ce_only"];
  const auto& cepr = rows["ce_pr"];
  const auto& pr = rows["pr_only"];
  const bool ok = cepr[0] >= ce[0] && cepr[1] >= ce[1] && minutes <= 30.0;
  return {ok, "PSNR CE " + num(ce[0], "%.3f") + " / CE+PR " + num(cepr[0], "%.3f") + " / PR " +
                  num(pr[0], "%.3f") + " dB, SSIM CE " + num(ce[1], "%.4f") + " / CE+PR " +
                  num(cepr[1], "%.4f") + " / PR " + num(pr[1], "%.4f") + ", " + num(minutes, "%.1f") +
                  " min"};
}

Outcome c10_determinism(const Cli& cli, const fs::path& work) {
  const fs::path run = work / "det";
  const fs::path cfg = work / "det_config.json";
  fs::create_directories(work);
  write_json(cfg, small_config(run));
  std::map<std::string, std::string> first;
  for (int pass = 0; pass < 2; ++pass) {
    fs::remove_all(run);
    for (const char* c : kCommands) {
      if (!cli.run(c, cfg)) return {false, std::string("pjdm ") + c + " failed, see " + cli.log.string()};
    }
    if (pass == 0) first = snapshot(run);
  }
  const auto second = snapshot(run);
  std::size_t differing = 0;
  for (const auto& [k, v] : first) {
    if (!second.count(k) || second.at(k) != v) ++differing;
  }
  if (second.size() != first.size()) ++differing;
  return {differing == 0 && !first.empty(),
          std::to_string(first.size()) + " artifacts compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pjdm acceptance run"};
  std::string work = "acceptance_work";
  std::string exe;
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory for CLI runs");
  app.add_option("--cli", exe, "Path to the pjdm executable (needed for criteria 9 and 10)");
  app.add_option("--only", only, "Run just these criteria");
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(work);
  const Cli cli{exe, fs::path(work) / "cli_log.txt"};
  fs::remove(cli.log);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"bridge marginal moments", c1_bridge_moments},
      {"endpoint pinning", c2_endpoints},
      {"sampler fixed point", c3_fixed_point},
      {"sampler convergence order", c4_convergence},
      {"refiner exact inversion", c5_refiner_inversion},
      {"gradient correctness", c6_gradients},
      {"metric oracles", c7_metrics},
      {"radon properties", c8_radon},
      {"end-to-end desk-scale run", [&] { return c9_end_to_end(cli, work); }},
      {"determinism", [&] { return c10_determinism(cli, work); }},
  };
  const std::set<int> pick(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!pick.empty() && !pick.count(id)) continue;
    Outcome o;
    if (id >= 9 && exe.empty()) {
      o = {false, "no --cli given"};
    } else {
      try {
        o = criteria[i].second();
      } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
      }
    }
    failed += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
