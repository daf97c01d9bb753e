#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "pjdm/bridge.hpp"
#include "pjdm/denoiser.hpp"
#include "pjdm/metrics.hpp"
#include "pjdm/phantom.hpp"
#include "pjdm/refiner.hpp"
#include "pjdm/schedules.hpp"

namespace pjdm {

/// Everything a run needs. Serialized as one flat JSON object; every key has
/// a default and unknown keys are rejected.
struct ExperimentConfig {
  std::string out_dir = "pjdm_out";
  std::uint64_t seed = 0;
  bool debug_dumps = false;

  Geometry geometry;
  std::size_t n_paired = 64;
  std::size_t n_unpaired = 128;
  std::size_t n_test = 16;
  double dose = 0.0;

  BridgeSchedule bridge;
  double bridge_noise_scale = 1.0;
  int refine_T = 1000;
  double refine_beta_min = 1e-4;
  double refine_beta_max = 0.02;
  int t_prior = 185;
  int fast_steps = 50;

  TrainConfig bridge_train;
  nn::Architecture bridge_arch;
  TrainConfig refiner_train;
  nn::Architecture refiner_arch;
  int checkpoint_every = 250;

  DegradeParams degrade;
  MetricsConfig metrics;
  bool eval_image_domain = true;
  int profile_samples = 64;

  /// Optional sinogram file converted instead of the test split.
  std::string convert_input;

  ExperimentConfig();

  void validate() const;
  RefineSchedule refine_schedule() const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys throw.
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Accepts a config file or a run manifest (uses its "config" member).
  static ExperimentConfig load(const std::filesystem::path& path);

  /// FNV-1a of the canonical JSON dump.
  std::uint64_t hash() const;
};

/// Injection points for tests: per-item replacements for the trained models.
struct ConvertHooks {
  std::function<std::unique_ptr<BridgeDenoiser>(std::size_t item)> bridge;
  std::function<std::unique_ptr<NoisePredictor>(std::size_t item)> refiner;
};

/// Fixed layout under cfg.out_dir.
struct RunPaths {
  std::filesystem::path root;
  explicit RunPaths(const std::filesystem::path& r) : root(r) {}
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path bridge_dir() const { return root / "bridge"; }
  std::filesystem::path refiner_dir() const { return root / "refiner"; }
  std::filesystem::path convert_dir() const { return root / "convert"; }
  std::filesystem::path eval_dir() const { return root / "eval"; }
  std::filesystem::path ablate_dir() const { return root / "ablate"; }
  std::filesystem::path manifest() const { return root / "run_manifest.json"; }
  std::filesystem::path run_log() const { return root / "run_log.txt"; }
};

struct TrainSummary {
  std::uint64_t start_step = 0;
  std::uint64_t end_step = 0;
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
};

/// Progress lines go here (default: silent).
using LogSink = std::function<void(const std::string&)>;

void cmd_gen_data(const ExperimentConfig& cfg, const LogSink& log = {});
/// Resumes from bridge/checkpoint.pjdm when its stage hash matches. On a
/// numerical abort the last checkpoint stays in place and the error propagates.
TrainSummary cmd_train_bridge(const ExperimentConfig& cfg, const LogSink& log = {});
TrainSummary cmd_train_refiner(const ExperimentConfig& cfg, const LogSink& log = {});
void cmd_convert(const ExperimentConfig& cfg, const ConvertHooks& hooks = {},
                 const LogSink& log = {});
void cmd_evaluate(const ExperimentConfig& cfg, const LogSink& log = {});
void cmd_ablate(const ExperimentConfig& cfg, const ConvertHooks& hooks = {},
                const LogSink& log = {});

/// Minimal deterministic SVG renderings.
std::string svg_heatmap(const Field& f, const std::string& title);
std::string svg_lines(const std::vector<std::vector<double>>& series,
                      const std::vector<std::string>& labels, const std::string& title);

/// Profile segment through the centers of the tracer-B regions of `spec`,
/// in pixel coordinates of a size x size image.
ProfileLine striatum_profile(const PhantomSpec& spec, std::size_t size, int samples);

}  // namespace pjdm
