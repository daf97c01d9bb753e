#include "pjdm/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pjdm/binary_io.hpp"
#include "pjdm/dataset_io.hpp"
#include "pjdm/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pjdm {

namespace {

constexpr std::uint64_t kBridgeStream = 0xb1;
constexpr std::uint64_t kRefinerStream = 0x2e;
constexpr std::uint64_t kBridgeSampleStream = 0xc0;
constexpr std::uint64_t kRefineSampleStream = 0xc1;
constexpr std::uint64_t kEvalStream = 0xe0;

// One flat key: how to read it from and write it into a config.
struct Key {
  const char* name;
  std::function<json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const json&)> set;
};

template <class T, class C>
Key member(const char* name, T C::*field, C ExperimentConfig::*group) {
  return {name, [=](const ExperimentConfig& c) { return json((c.*group).*field); },
          [=](ExperimentConfig& c, const json& j) { (c.*group).*field = j.get<T>(); }};
}

template <class T>
Key top(const char* name, T ExperimentConfig::*field) {
  return {name, [=](const ExperimentConfig& c) { return json(c.*field); },
          [=](ExperimentConfig& c, const json& j) { c.*field = j.get<T>(); }};
}

const std::vector<Key>& keys() {
  using E = ExperimentConfig;
  static const std::vector<Key> k = {
      top("out_dir", &E::out_dir),
      top("seed", &E::seed),
      top("debug_dumps", &E::debug_dumps),
      member("n_angles", &Geometry::n_angles, &E::geometry),
      member("n_bins", &Geometry::n_bins, &E::geometry),
      member("image_size", &Geometry::image_size, &E::geometry),
      top("n_paired", &E::n_paired),
      top("n_unpaired", &E::n_unpaired),
      top("n_test", &E::n_test),
      top("dose", &E::dose),
      member("bridge_T", &BridgeSchedule::T, &E::bridge),
      member("bridge_g", &BridgeSchedule::g, &E::bridge),
      member("bridge_w", &BridgeSchedule::w, &E::bridge),
      member("bridge_m", &BridgeSchedule::m, &E::bridge),
      member("bridge_N", &BridgeSchedule::N, &E::bridge),
      member("bridge_rho", &BridgeSchedule::rho, &E::bridge),
      member("bridge_t_min", &BridgeSchedule::t_min, &E::bridge),
      top("bridge_noise_scale", &E::bridge_noise_scale),
      top("refine_T", &E::refine_T),
      top("refine_beta_min", &E::refine_beta_min),
      top("refine_beta_max", &E::refine_beta_max),
      top("t_prior", &E::t_prior),
      top("fast_steps", &E::fast_steps),
      member("bridge_lr", &TrainConfig::lr, &E::bridge_train),
      member("bridge_weight_decay", &TrainConfig::weight_decay, &E::bridge_train),
      member("bridge_batch", &TrainConfig::batch_size, &E::bridge_train),
      member("bridge_steps", &TrainConfig::steps, &E::bridge_train),
      member("bridge_loss_weight", &TrainConfig::loss_weight, &E::bridge_train),
      member("bridge_time_dist", &TrainConfig::time_dist, &E::bridge_train),
      member("bridge_widths", &nn::Architecture::widths, &E::bridge_arch),
      member("bridge_time_dim", &nn::Architecture::time_dim, &E::bridge_arch),
      member("bridge_time_scale", &nn::Architecture::time_scale, &E::bridge_arch),
      member("refiner_lr", &TrainConfig::lr, &E::refiner_train),
      member("refiner_weight_decay", &TrainConfig::weight_decay, &E::refiner_train),
      member("refiner_batch", &TrainConfig::batch_size, &E::refiner_train),
      member("refiner_steps", &TrainConfig::steps, &E::refiner_train),
      member("refiner_t_max", &TrainConfig::t_max, &E::refiner_train),
      member("refiner_widths", &nn::Architecture::widths, &E::refiner_arch),
      member("refiner_time_dim", &nn::Architecture::time_dim, &E::refiner_arch),
      member("refiner_time_scale", &nn::Architecture::time_scale, &E::refiner_arch),
      top("checkpoint_every", &E::checkpoint_every),
      member("degrade_sigma_min", &DegradeParams::sigma_min, &E::degrade),
      member("degrade_sigma_max", &DegradeParams::sigma_max, &E::degrade),
      member("degrade_radius", &DegradeParams::radius, &E::degrade),
      member("degrade_gamma_min", &DegradeParams::gamma_min, &E::degrade),
      member("degrade_gamma_max", &DegradeParams::gamma_max, &E::degrade),
      member("degrade_beta_min", &DegradeParams::beta_min, &E::degrade),
      member("degrade_beta_max", &DegradeParams::beta_max, &E::degrade),
      {"psnr_convention",
       [](const E& c) { return json(to_string(c.metrics.psnr_convention)); },
       [](E& c, const json& j) { c.metrics.psnr_convention = parse_psnr_convention(j.get<std::string>()); }},
      member("ssim_k1", &MetricsConfig::k1, &E::metrics),
      member("ssim_k2", &MetricsConfig::k2, &E::metrics),
      member("ssim_dynamic_range", &MetricsConfig::dynamic_range, &E::metrics),
      top("eval_image_domain", &E::eval_image_domain),
      top("profile_samples", &E::profile_samples),
      top("convert_input", &E::convert_input),
  };
  return k;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t hash_json(const json& j) {
  const std::string s = j.dump();
  return fnv1a64(s.data(), s.size());
}

// Fingerprint of the keys a training stage depends on. Step counts are left
// out so that a run can be extended by raising them.
std::uint64_t stage_hash(const ExperimentConfig& cfg, const std::string& prefix) {
  const json all = cfg.to_json();
  static const std::set<std::string> shared = {"seed",    "n_angles", "n_bins", "image_size",
                                               "n_paired", "n_unpaired", "n_test", "dose"};
  static const std::set<std::string> sampling_only = {"bridge_w", "bridge_m", "bridge_N",
                                                      "bridge_rho", "bridge_noise_scale"};
  json sel = json::object();
  for (const auto& [k, v] : all.items()) {
    const bool ours = k.rfind(prefix, 0) == 0 || shared.count(k) ||
                      (prefix == "refiner_" && (k.rfind("refine_", 0) == 0 ||
                                                k.rfind("degrade_", 0) == 0));
    if (!ours || sampling_only.count(k) || k == prefix + "steps") continue;
    sel[k] = v;
  }
  return hash_json(sel);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string numbered(const std::string& stem, std::size_t i, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu", i);
  return stem + buf + ext;
}

void emit(const LogSink& log, const std::string& msg) {
  if (log) log(msg);
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Timestamps live in run_log.txt so that every other file stays byte-stable.
void log_run(const RunPaths& p, const std::string& line) {
  fs::create_directories(p.root);
  std::ofstream os(p.run_log(), std::ios::app);
  os << timestamp() << ' ' << line << '\n';
}

json read_json(const fs::path& path) {
  const auto raw = binio::read_file(path);
  return json::parse(raw.begin(), raw.end());
}

// Records `files` (relative to the run root) as the artifacts of `command`.
// A manifest from a different config, or one that does not parse, is replaced.
void update_manifest(const ExperimentConfig& cfg, const std::string& command,
                     std::vector<std::string> files) {
  const RunPaths p(cfg.out_dir);
  json m;
  try {
    m = read_json(p.manifest());
    if (m.value("config_hash", "") != hex64(cfg.hash())) m = json();
  } catch (const std::exception&) {
    m = json();
  }
  if (!m.is_object()) {
    m = json::object();
    m["artifacts"] = json::object();
  }
  m["format"] = "pjdm-run";
  m["version"] = 1;
  m["config"] = cfg.to_json();
  m["config_hash"] = hex64(cfg.hash());
  m["sampler"] = {{"bridge_N", cfg.bridge.N},
                  {"t_prior", cfg.t_prior},
                  {"fast_steps", cfg.fast_steps},
                  {"refine_T", cfg.refine_T}};
  m["psnr_convention"] = to_string(cfg.metrics.psnr_convention);
  m["formats"] = {{"checkpoint", kCheckpointVersion}, {"sinogram", kSinogramVersion}};
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    if (!fs::exists(p.root / f)) throw std::runtime_error("manifest: missing artifact " + f);
  }
  m["artifacts"][command] = files;
  binio::write_text_atomic(p.manifest(), m.dump(2) + "\n");
}

std::string rel(const RunPaths& p, const fs::path& f) {
  return fs::relative(f, p.root).generic_string();
}

Dataset require_dataset(const RunPaths& p) {
  if (!fs::exists(p.data() / "manifest.json")) {
    throw std::runtime_error("no dataset under " + p.data().string() + " (run gen-data first)");
  }
  return load_dataset(p.data());
}

void write_loss_csv(const fs::path& path, const std::vector<double>& losses) {
  std::string s = "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) s += std::to_string(i + 1) + "," + fmt(losses[i]) + "\n";
  binio::write_text_atomic(path, s);
}

std::vector<double> read_loss_csv(const fs::path& path) {
  std::vector<double> out;
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) break;
    out.push_back(std::stod(line.substr(comma + 1)));
  }
  return out;
}

// Shared driver for both training stages. `train` runs up to cfg.steps and
// `eval` returns a fixed-draw loss.
TrainSummary run_training(
    const ExperimentConfig& cfg, const fs::path& dir, const std::string& prefix,
    DenoiserModel fresh, TrainConfig tcfg,
    const std::function<std::vector<double>(DenoiserModel&, TrainState&, const TrainConfig&)>& train,
    const std::function<double(const DenoiserModel&)>& eval, const LogSink& log) {
  fs::create_directories(dir);
  const fs::path ck_path = dir / "checkpoint.pjdm";
  const fs::path loss_path = dir / "loss.csv";
  const fs::path state_path = dir / "train_state.json";
  const std::uint64_t hash = stage_hash(cfg, prefix);
  const int target = tcfg.steps;

  DenoiserModel model = std::move(fresh);
  TrainState state;
  std::vector<double> losses;
  TrainSummary sum;
  bool resumed = false;
  if (fs::exists(ck_path) && fs::exists(state_path)) {
    try {
      auto ck = load_checkpoint(ck_path.string(), &model.arch(), hash);
      const json st = read_json(state_path);
      losses = read_loss_csv(loss_path);
      if (losses.size() < ck.train_step) throw std::runtime_error("loss trace shorter than checkpoint");
      losses.resize(ck.train_step);
      model = std::move(ck.model);
      state.step = ck.train_step;
      if (ck.has_optimizer) state.optimizer = ck.optimizer;
      sum.initial_eval_loss = st.at("initial_eval_loss").get<double>();
      resumed = true;
      emit(log, prefix + "resuming at step " + std::to_string(state.step));
    } catch (const std::exception& e) {
      emit(log, prefix + "ignoring existing checkpoint: " + e.what());
      model = DenoiserModel(model.arch(), model.precond(), 0);
      state = TrainState{};
      losses.clear();
    }
  }
  if (!resumed) sum.initial_eval_loss = eval(model);
  sum.start_step = state.step;

  auto write_state = [&](double final_eval) {
    json st = {{"stage_hash", hex64(hash)},
               {"step", state.step},
               {"architecture", model.descriptor()},
               {"initial_eval_loss", sum.initial_eval_loss}};
    if (final_eval >= 0.0) st["final_eval_loss"] = final_eval;
    binio::write_text_atomic(state_path, st.dump(2) + "\n");
  };

  const int every = std::max(1, cfg.checkpoint_every);
  while (static_cast<int>(state.step) < target) {
    TrainConfig chunk = tcfg;
    chunk.steps = std::min(target, static_cast<int>(state.step) + every);
    const auto got = train(model, state, chunk);
    losses.insert(losses.end(), got.begin(), got.end());
    save_checkpoint(ck_path.string(), model, hash, state.step, &state.optimizer);
    write_loss_csv(loss_path, losses);
    write_state(-1.0);
    emit(log, prefix + "step " + std::to_string(state.step) + "/" + std::to_string(target) +
                  " loss " + fmt(losses.back()));
  }
  if (!fs::exists(ck_path)) {
    save_checkpoint(ck_path.string(), model, hash, state.step, &state.optimizer);
    write_loss_csv(loss_path, losses);
  }
  sum.end_step = state.step;
  sum.final_eval_loss = eval(model);
  write_state(sum.final_eval_loss);
  return sum;
}

std::vector<Sinogram> unpaired_b(const Dataset& ds) {
  std::vector<Sinogram> out;
  out.reserve(ds.unpaired.size());
  for (const auto& u : ds.unpaired) out.push_back(u.b);
  return out;
}

DenoiserModel load_stage_model(const ExperimentConfig& cfg, const fs::path& dir,
                               const std::string& prefix, const nn::Architecture& arch) {
  const fs::path ck = dir / "checkpoint.pjdm";
  if (!fs::exists(ck)) throw std::runtime_error("missing checkpoint " + ck.string());
  auto c = load_checkpoint(ck.string(), &arch, stage_hash(cfg, prefix));
  const int want = prefix == "bridge_" ? cfg.bridge_train.steps : cfg.refiner_train.steps;
  if (static_cast<int>(c.train_step) < want) {
    throw std::runtime_error(ck.string() + ": training stopped at step " +
                             std::to_string(c.train_step) + " of " + std::to_string(want));
  }
  return std::move(c.model);
}

// Models (trained or injected) used by convert and ablate.
struct Converters {
  std::optional<DenoiserModel> bridge_model;
  std::optional<DenoiserModel> refiner_model;
  const ConvertHooks* hooks = nullptr;
  BridgeSchedule sched;

  std::unique_ptr<BridgeDenoiser> bridge(std::size_t i) const {
    if (hooks && hooks->bridge) return hooks->bridge(i);
    return std::make_unique<ModelBridgeDenoiser>(*bridge_model, sched);
  }
  std::unique_ptr<NoisePredictor> refiner(std::size_t i) const {
    if (hooks && hooks->refiner) return hooks->refiner(i);
    return std::make_unique<ModelNoisePredictor>(*refiner_model);
  }
};

Converters make_converters(const ExperimentConfig& cfg, const ConvertHooks& hooks) {
  const RunPaths p(cfg.out_dir);
  Converters c;
  c.hooks = &hooks;
  c.sched = cfg.bridge;
  if (!hooks.bridge) c.bridge_model = load_stage_model(cfg, p.bridge_dir(), "bridge_", cfg.bridge_arch);
  if (!hooks.refiner) {
    c.refiner_model = load_stage_model(cfg, p.refiner_dir(), "refiner_", cfg.refiner_arch);
  }
  return c;
}

void check_geometry(const Sinogram& s, const Geometry& g, const std::string& what) {
  if (s.n_angles() != g.n_angles || s.n_bins() != g.n_bins) {
    throw std::runtime_error(what + ": sinogram is " + std::to_string(s.n_angles()) + "x" +
                             std::to_string(s.n_bins()) + ", config geometry is " +
                             std::to_string(g.n_angles) + "x" + std::to_string(g.n_bins));
  }
}

Sinogram run_stage1(const ExperimentConfig& cfg, const Converters& cv, const Sinogram& a,
                    std::size_t i, const fs::path* dump_dir) {
  SamplerOptions opts;
  opts.noise_scale = cfg.bridge_noise_scale;
  if (dump_dir) {
    opts.on_iterate = [&](int step, const Field& x) {
      write_sinogram(*dump_dir / numbered("bridge_step", static_cast<std::size_t>(step - 1), ".sino"),
                     Sinogram(x));
    };
  }
  return hybrid_sample(*cv.bridge(i), a, cfg.bridge, subseed(cfg.seed, kBridgeSampleStream, i), opts);
}

Sinogram run_stage2(const ExperimentConfig& cfg, const Converters& cv, const Sinogram& coarse,
                    std::size_t i, const fs::path* dump_dir, const std::string& tag) {
  RefineOptions opts;
  opts.fast_steps = cfg.fast_steps;
  if (dump_dir) {
    opts.on_step = [&](int t, const Field& x, const Field&) {
      write_sinogram(*dump_dir / numbered(tag + "_t", static_cast<std::size_t>(t), ".sino"),
                     Sinogram(x));
    };
  }
  return refine_sample(*cv.refiner(i), coarse, cfg.refine_schedule(), cfg.degrade,
                       subseed(cfg.seed, kRefineSampleStream, i), opts);
}

std::vector<Sinogram> read_series(const fs::path& dir, const std::string& stem, std::size_t n) {
  std::vector<Sinogram> out;
  for (std::size_t i = 0; i < n; ++i) {
    const fs::path f = dir / numbered(stem, i, ".sino");
    if (!fs::exists(f)) throw std::runtime_error("missing artifact " + f.string() + " (run convert)");
    out.push_back(read_sinogram(f));
  }
  return out;
}

const char* kColors[] = {"#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd"};

}  // namespace

ExperimentConfig::ExperimentConfig() {
  bridge_train.lr = 1e-4;
  bridge_train.steps = 2000;
  bridge_arch.in_channels = 1;
  bridge_arch.widths = {16, 32};
  bridge_arch.time_dim = 16;
  bridge_arch.time_scale = 4.0;
  refiner_train.lr = 5e-5;
  refiner_train.steps = 2000;
  refiner_arch.in_channels = 2;
  refiner_arch.widths = {16, 32};
  refiner_arch.time_dim = 16;
  refiner_arch.time_scale = 1.0;
}

void ExperimentConfig::validate() const {
  if (out_dir.empty()) throw std::invalid_argument("config: out_dir must not be empty");
  if (geometry.n_angles < 2 || geometry.n_bins < 2) {
    throw std::invalid_argument("config: geometry needs at least 2 angles and 2 bins");
  }
  if (n_paired < 1) throw std::invalid_argument("config: n_paired must be >= 1");
  if (n_unpaired < 1) throw std::invalid_argument("config: n_unpaired must be >= 1");
  if (!(dose >= 0.0)) throw std::invalid_argument("config: dose must be >= 0");
  bridge.validate();
  if (!(bridge_noise_scale >= 0.0)) throw std::invalid_argument("config: bridge_noise_scale must be >= 0");
  make_refine_schedule(refine_T, refine_beta_min, refine_beta_max, t_prior);
  if (fast_steps < 0) throw std::invalid_argument("config: fast_steps must be >= 0");
  bridge_train.validate();
  refiner_train.validate();
  if (refiner_train.t_max > refine_T) throw std::invalid_argument("config: refiner_t_max exceeds refine_T");
  bridge_arch.validate();
  refiner_arch.validate();
  if (bridge_arch.in_channels != 1 || refiner_arch.in_channels != 2) {
    throw std::invalid_argument("config: bridge takes 1 input channel and the refiner 2");
  }
  if (checkpoint_every < 1) throw std::invalid_argument("config: checkpoint_every must be >= 1");
  degrade.validate();
  metrics.validate();
  if (profile_samples < 2) throw std::invalid_argument("config: profile_samples must be >= 2");
}

RefineSchedule ExperimentConfig::refine_schedule() const {
  return make_refine_schedule(refine_T, refine_beta_min, refine_beta_max, t_prior);
}

json ExperimentConfig::to_json() const {
  json j = json::object();
  for (const auto& k : keys()) j[k.name] = k.get(*this);
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  ExperimentConfig c;
  for (const auto& [name, value] : j.items()) {
    const auto it = std::find_if(keys().begin(), keys().end(),
                                 [&](const Key& k) { return name == k.name; });
    if (it == keys().end()) throw std::invalid_argument("config: unknown key '" + name + "'");
    try {
      it->set(c, value);
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: bad value for '" + name + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  if (j.is_object() && j.value("format", "") == "pjdm-run") j = j.at("config");
  return from_json(j);
}

std::uint64_t ExperimentConfig::hash() const {
  json j = to_json();
  // Where artifacts go and whether debug dumps are written do not change them.
  j.erase("out_dir");
  j.erase("debug_dumps");
  return hash_json(j);
}

void cmd_gen_data(const ExperimentConfig& cfg, const LogSink& log) {
  cfg.validate();
  const RunPaths p(cfg.out_dir);
  const auto ds = gen_dataset(cfg.n_paired, cfg.n_unpaired, cfg.geometry, cfg.seed, cfg.n_test, cfg.dose);
  save_dataset(p.data(), ds);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(p.data())) {
    if (e.is_regular_file()) files.push_back(rel(p, e.path()));
  }
  update_manifest(cfg, "gen-data", files);
  emit(log, "gen-data: " + std::to_string(ds.paired.size()) + " paired, " +
                std::to_string(ds.unpaired.size()) + " unpaired, " + std::to_string(ds.test.size()) +
                " test sinograms");
  log_run(p, "gen-data done");
}

TrainSummary cmd_train_bridge(const ExperimentConfig& cfg, const LogSink& log) {
  cfg.validate();
  const RunPaths p(cfg.out_dir);
  const Dataset ds = require_dataset(p);
  if (!(ds.geometry == cfg.geometry)) throw std::runtime_error("dataset geometry differs from config");
  TrainConfig tcfg = cfg.bridge_train;
  tcfg.seed = subseed(cfg.seed, kBridgeStream, 1);
  DenoiserModel fresh(cfg.bridge_arch, bridge_preconditioning(ds.paired),
                      subseed(cfg.seed, kBridgeStream, 0));
  const std::span<const PairedItem> eval_set(ds.paired.data(), std::min<std::size_t>(ds.paired.size(), 16));
  const auto sum = run_training(
      cfg, p.bridge_dir(), "bridge_", std::move(fresh), tcfg,
      [&](DenoiserModel& m, TrainState& s, const TrainConfig& c) {
        return train_bridge(m, s, ds.paired, c, cfg.bridge);
      },
      [&](const DenoiserModel& m) {
        return bridge_eval_loss(m, eval_set, tcfg, cfg.bridge, subseed(cfg.seed, kEvalStream, 0), 4);
      },
      log);
  update_manifest(cfg, "train-bridge",
                  {"bridge/checkpoint.pjdm", "bridge/loss.csv", "bridge/train_state.json"});
  log_run(p, "train-bridge done at step " + std::to_string(sum.end_step));
  return sum;
}

TrainSummary cmd_train_refiner(const ExperimentConfig& cfg, const LogSink& log) {
  cfg.validate();
  const RunPaths p(cfg.out_dir);
  const Dataset ds = require_dataset(p);
  if (!(ds.geometry == cfg.geometry)) throw std::runtime_error("dataset geometry differs from config");
  const auto data = unpaired_b(ds);
  const auto sched = cfg.refine_schedule();
  TrainConfig tcfg = cfg.refiner_train;
  tcfg.seed = subseed(cfg.seed, kRefinerStream, 1);
  Preconditioning none;
  none.kind = Preconditioning::Kind::Identity;
  DenoiserModel fresh(cfg.refiner_arch, none, subseed(cfg.seed, kRefinerStream, 0));
  const std::span<const Sinogram> eval_set(data.data(), std::min<std::size_t>(data.size(), 16));
  const auto sum = run_training(
      cfg, p.refiner_dir(), "refiner_", std::move(fresh), tcfg,
      [&](DenoiserModel& m, TrainState& s, const TrainConfig& c) {
        return train_refiner(m, s, data, cfg.degrade, c, sched);
      },
      [&](const DenoiserModel& m) {
        return refiner_eval_loss(m, eval_set, cfg.degrade, tcfg, sched,
                                 subseed(cfg.seed, kEvalStream, 1), 4);
      },
      log);
  update_manifest(cfg, "train-refiner",
                  {"refiner/checkpoint.pjdm", "refiner/loss.csv", "refiner/train_state.json"});
  log_run(p, "train-refiner done at step " + std::to_string(sum.end_step));
  return sum;
}

void cmd_convert(const ExperimentConfig& cfg, const ConvertHooks& hooks, const LogSink& log) {
  cfg.validate();
  const RunPaths p(cfg.out_dir);
  std::vector<Sinogram> inputs;
  if (!cfg.convert_input.empty()) {
    inputs.push_back(read_sinogram(cfg.convert_input));
  } else {
    const Dataset ds = require_dataset(p);
    for (const auto& t : ds.test) inputs.push_back(t.a);
  }
  if (inputs.empty()) throw std::runtime_error("convert: nothing to convert (n_test = 0)");
  const Converters cv = make_converters(cfg, hooks);
  const fs::path out = p.convert_dir();
  fs::create_directories(out);
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.is_regular_file() && e.path().extension() == ".sino") fs::remove(e.path());
  }
  std::vector<std::string> files;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    check_geometry(inputs[i], cfg.geometry, "convert input " + std::to_string(i));
    std::optional<fs::path> dump;
    if (cfg.debug_dumps) {
      dump = p.root / "debug" / numbered("convert", i, "");
      fs::create_directories(*dump);
    }
    const Sinogram coarse = run_stage1(cfg, cv, inputs[i], i, dump ? &*dump : nullptr);
    const Sinogram refined = run_stage2(cfg, cv, coarse, i, dump ? &*dump : nullptr, "refine");
    const fs::path fc = out / numbered("coarse", i, ".sino");
    const fs::path fr = out / numbered("refined", i, ".sino");
    write_sinogram(fc, coarse);
    write_sinogram(fr, refined);
    files.push_back(rel(p, fc));
    files.push_back(rel(p, fr));
    emit(log, "convert: item " + std::to_string(i + 1) + "/" + std::to_string(inputs.size()));
  }
  update_manifest(cfg, "convert", files);
  log_run(p, "convert done (" + std::to_string(inputs.size()) + " items)");
}

ProfileLine striatum_profile(const PhantomSpec& spec, std::size_t size, int samples) {
  const double n = static_cast<double>(size);
  auto to_px = [&](double u) { return std::clamp(u * n - 0.5, 0.0, n - 1.0); };
  ProfileLine line;
  line.samples = samples;
  if (spec.tracer_b_regions.size() >= 2) {
    const Ellipse& a = spec.ellipses.at(spec.tracer_b_regions[0]);
    const Ellipse& b = spec.ellipses.at(spec.tracer_b_regions[1]);
    // Extend past both centers by the larger semi-axis so the whole regions are crossed.
    const double dx = b.cx - a.cx, dy = b.cy - a.cy;
    const double len = std::max(std::hypot(dx, dy), 1e-12);
    const double ext = std::max({a.ax, a.ay, b.ax, b.ay});
    line.x0 = to_px(a.cx - dx / len * ext);
    line.y0 = to_px(a.cy - dy / len * ext);
    line.x1 = to_px(b.cx + dx / len * ext);
    line.y1 = to_px(b.cy + dy / len * ext);
  } else {
    line.x0 = 0.0;
    line.x1 = n - 1.0;
    line.y0 = line.y1 = (n - 1.0) / 2.0;
  }
  return line;
}

std::string svg_heatmap(const Field& f, const std::string& title) {
  const int cell = 4;
  const double lo = min_value(f), hi = max_value(f);
  const double span = hi > lo ? hi - lo : 1.0;
  std::ostringstream os;
  const std::size_t w = f.cols * cell, h = f.rows * cell + 20;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<text x=\"2\" y=\"14\" font-family=\"monospace\" font-size=\"12\">" << title << "</text>\n";
  for (std::size_t r = 0; r < f.rows; ++r) {
    for (std::size_t c = 0; c < f.cols; ++c) {
      const int g = static_cast<int>(std::lround(255.0 * (f(r, c) - lo) / span));
      os << "<rect x=\"" << c * cell << "\" y=\"" << 20 + r * cell << "\" width=\"" << cell
         << "\" height=\"" << cell << "\" fill=\"rgb(" << g << ',' << g << ',' << g << ")\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_lines(const std::vector<std::vector<double>>& series,
                      const std::vector<std::string>& labels, const std::string& title) {
  const double W = 480, H = 240, pad = 30;
  double lo = 0.0, hi = 0.0;
  std::size_t n = 0;
  bool first = true;
  for (const auto& s : series) {
    n = std::max(n, s.size());
    for (double v : s) {
      lo = first ? v : std::min(lo, v);
      hi = first ? v : std::max(hi, v);
      first = false;
    }
  }
  const double span = hi > lo ? hi - lo : 1.0;
  char buf[64];
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<text x=\"4\" y=\"16\" font-family=\"monospace\" font-size=\"12\">" << title << "</text>\n";
  os << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << W - 2 * pad << "\" height=\""
     << H - 2 * pad << "\" fill=\"none\" stroke=\"#888888\"/>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % (sizeof kColors / sizeof *kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < series[k].size(); ++i) {
      const double x = pad + (n > 1 ? (W - 2 * pad) * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0);
      const double y = H - pad - (H - 2 * pad) * (series[k][i] - lo) / span;
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", x, y);
      os << buf;
    }
    os << "\"/>\n";
    if (k < labels.size()) {
      os << "<text x=\"" << W - pad - 90 << "\" y=\"" << pad + 14 * (k + 1)
         << "\" font-family=\"monospace\" font-size=\"11\" fill=\"" << color << "\">" << labels[k]
         << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

void cmd_evaluate(const ExperimentConfig& cfg, const LogSink& log) {
  cfg.validate();
  const RunPaths p(cfg.out_dir);
  const Dataset ds = require_dataset(p);
  if (ds.test.empty()) throw std::runtime_error("evaluate: the dataset has no test split");
  std::vector<Sinogram> refs;
  for (const auto& t : ds.test) refs.push_back(t.b);
  const auto coarse = read_series(p.convert_dir(), "coarse", refs.size());
  const auto refined = read_series(p.convert_dir(), "refined", refs.size());
  const std::size_t img = cfg.eval_image_domain ? cfg.geometry.image_size : 0;
  const fs::path out = p.eval_dir();
  fs::create_directories(out);

  const auto rep_c = evaluate(coarse, refs, cfg.metrics, img);
  const auto rep_r = evaluate(refined, refs, cfg.metrics, img);
  binio::write_text_atomic(out / "report_coarse.csv", report_csv(rep_c));
  binio::write_text_atomic(out / "report_refined.csv", report_csv(rep_r));
  std::vector<std::string> files = {"eval/report_coarse.csv", "eval/report_refined.csv"};

  const std::size_t size = cfg.geometry.image_size;
  std::string prof = "item,sample,reference,coarse,refined\n";
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto line = striatum_profile(ds.test[i].spec, size, cfg.profile_samples);
    const auto pr = profile_line(fbp(refs[i], size).pixels, line);
    const auto pc = profile_line(fbp(coarse[i], size).pixels, line);
    const auto pf = profile_line(fbp(refined[i], size).pixels, line);
    for (std::size_t k = 0; k < pr.size(); ++k) {
      prof += std::to_string(i) + "," + std::to_string(k) + "," + fmt(pr[k]) + "," + fmt(pc[k]) +
              "," + fmt(pf[k]) + "\n";
    }
    if (i == 0) {
      binio::write_text_atomic(out / "profile_0000.svg",
                               svg_lines({pr, pc, pf}, {"reference", "coarse", "refined"},
                                         "striatum profile, item 0"));
      binio::write_text_atomic(out / "sino_reference_0000.svg", svg_heatmap(refs[0].bins, "reference"));
      binio::write_text_atomic(out / "sino_coarse_0000.svg", svg_heatmap(coarse[0].bins, "coarse"));
      binio::write_text_atomic(out / "sino_refined_0000.svg", svg_heatmap(refined[0].bins, "refined"));
      for (const char* f : {"profile_0000.svg", "sino_reference_0000.svg", "sino_coarse_0000.svg",
                            "sino_refined_0000.svg"}) {
        files.push_back(std::string("eval/") + f);
      }
    }
  }
  binio::write_text_atomic(out / "profiles.csv", prof);
  files.push_back("eval/profiles.csv");
  update_manifest(cfg, "evaluate", files);
  emit(log, "evaluate: coarse mean PSNR " + format_metric(rep_c.means[0].psnr_db) + " dB, refined " +
                format_metric(rep_r.means[0].psnr_db) + " dB (" +
                to_string(cfg.metrics.psnr_convention) + ")");
  log_run(p, "evaluate done");
}

void cmd_ablate(const ExperimentConfig& cfg, const ConvertHooks& hooks, const LogSink& log) {
  cfg.validate();
  const RunPaths p(cfg.out_dir);
  const Dataset ds = require_dataset(p);
  if (ds.test.empty()) throw std::runtime_error("ablate: the dataset has no test split");
  const Converters cv = make_converters(cfg, hooks);
  std::vector<Sinogram> refs, ce, pr, cepr;
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    const auto& item = ds.test[i];
    refs.push_back(item.b);
    ce.push_back(run_stage1(cfg, cv, item.a, i, nullptr));
    // Same refinement seed for both refined variants.
    cepr.push_back(run_stage2(cfg, cv, ce.back(), i, nullptr, "refine"));
    pr.push_back(run_stage2(cfg, cv, item.a, i, nullptr, "refine"));
    emit(log, "ablate: item " + std::to_string(i + 1) + "/" + std::to_string(ds.test.size()));
  }
  const std::size_t img = cfg.eval_image_domain ? cfg.geometry.image_size : 0;
  const fs::path out = p.ablate_dir();
  fs::create_directories(out);
  std::string csv = "variant,psnr_db,ssim,nrmse";
  if (img) csv += ",image_psnr_db,image_ssim,image_nrmse";
  csv += "\n";
  std::vector<std::string> files;
  const std::pair<const char*, const std::vector<Sinogram>*> variants[] = {
      {"ce_only", &ce}, {"pr_only", &pr}, {"ce_pr", &cepr}};
  for (const auto& [name, outs] : variants) {
    const auto rep = evaluate(*outs, refs, cfg.metrics, img);
    csv += name;
    for (const auto& m : rep.means) {
      csv += "," + format_metric(m.psnr_db) + "," + format_metric(m.ssim) + "," + format_metric(m.nrmse);
    }
    csv += "\n";
    const std::string f = std::string("report_") + name + ".csv";
    binio::write_text_atomic(out / f, report_csv(rep));
    files.push_back("ablate/" + f);
  }
  binio::write_text_atomic(out / "ablation.csv", csv);
  files.push_back("ablate/ablation.csv");
  update_manifest(cfg, "ablate", files);
  emit(log, "ablate:\n" + csv);
  log_run(p, "ablate done");
}

}  // namespace pjdm
