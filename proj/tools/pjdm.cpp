// pjdm command-line front end.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "pjdm/field.hpp"
#include "pjdm/harness.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumerical = 2 };

const std::pair<const char*, const char*> kCommands[] = {
    {"gen-data", "Generate the synthetic paired, unpaired and test sinograms"},
    {"train-bridge", "Train the stage-I bridge denoiser (resumes from its checkpoint)"},
    {"train-refiner", "Train the stage-II conditional noise predictor"},
    {"convert", "Run both stages on the test split or on convert_input"},
    {"evaluate", "Metric reports, profile lines and plots for the converted outputs"},
    {"ablate", "Compare CE-only, PR-only and CE+PR on the test split"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PJDM two-stage sinogram tracer conversion"};
  app.require_subcommand(0, 1);
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  bool debug_dumps = false;
  bool print_config = false;
  app.add_flag("--print-config", print_config, "Print the effective configuration and exit");
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file or run manifest")->required();
    sub->add_option("--seed", seed, "Override the master seed");
    sub->add_option("--out", out_dir, "Override the output directory");
    sub->add_flag("--debug-dumps", debug_dumps, "Write per-step sampler iterates");
    sub->add_flag("--print-config", print_config, "Print the effective configuration and exit");
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : kCommands) {
    subs.push_back(app.add_subcommand(name, help));
    add_common(subs.back());
  }
  app.add_option("--config", config_path, "Config used with a bare --print-config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  CLI::App* chosen = nullptr;
  for (auto* s : subs) {
    if (s->parsed()) chosen = s;
  }
  if (!chosen && !print_config) {
    std::cerr << app.help() << "\nerror: a command is required\n";
    return kUsage;
  }

  pjdm::ExperimentConfig cfg;
  try {
    if (!config_path.empty()) cfg = pjdm::ExperimentConfig::load(config_path);
    if (chosen && chosen->count("--seed")) cfg.seed = seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (debug_dumps) cfg.debug_dumps = true;
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  if (print_config) {
    std::cout << cfg.to_json().dump(2) << "\n";
    return kOk;
  }

  const pjdm::LogSink log = [](const std::string& line) { std::cerr << line << "\n"; };
  const std::string cmd = chosen->get_name();
  try {
    if (cmd == "gen-data") {
      pjdm::cmd_gen_data(cfg, log);
    } else if (cmd == "train-bridge") {
      const auto s = pjdm::cmd_train_bridge(cfg, log);
      std::cerr << "eval loss " << s.initial_eval_loss << " -> " << s.final_eval_loss << "\n";
    } else if (cmd == "train-refiner") {
      const auto s = pjdm::cmd_train_refiner(cfg, log);
      std::cerr << "eval loss " << s.initial_eval_loss << " -> " << s.final_eval_loss << "\n";
    } else if (cmd == "convert") {
      pjdm::cmd_convert(cfg, {}, log);
    } else if (cmd == "evaluate") {
      pjdm::cmd_evaluate(cfg, log);
    } else if (cmd == "ablate") {
      pjdm::cmd_ablate(cfg, {}, log);
    }
  } catch (const pjdm::NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}
