#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "bridge_oracles.hpp"
#include "pjdm/binary_io.hpp"
#include "pjdm/dataset_io.hpp"
#include "pjdm/harness.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace pjdm;
using nlohmann::json;

namespace {

ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c;
  c.out_dir = out.string();
  c.seed = 11;
  c.geometry = {12, 16, 16};
  c.n_paired = 4;
  c.n_unpaired = 4;
  c.n_test = 3;
  c.bridge_arch.widths = {8};
  c.refiner_arch.widths = {8};
  c.bridge_train.steps = 6;
  c.refiner_train.steps = 6;
  c.checkpoint_every = 4;
  c.bridge.N = 6;
  c.t_prior = 20;
  c.fast_steps = 5;
  c.profile_samples = 8;
  return c;
}

std::string slurp(const fs::path& p) {
  const auto v = binio::read_file(p);
  return std::string(v.begin(), v.end());
}

// Every file under `root` except the timestamped log, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "run_log.txt") continue;
    out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  }
  return out;
}

std::vector<std::string> csv_lines(const fs::path& p) {
  std::istringstream is(slurp(p));
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string tok; std::getline(is, tok, ',');) out.push_back(tok);
  return out;
}

// Oracle hooks: stage I knows the answer, stage II has a tight Gaussian prior at it.
ConvertHooks oracle_hooks(const Dataset& ds, const ExperimentConfig& cfg, double s) {
  ConvertHooks h;
  h.bridge = [&ds](std::size_t i) -> std::unique_ptr<BridgeDenoiser> {
    return std::make_unique<test::FixedDenoiser>(ds.test.at(i).b.bins);
  };
  h.refiner = [&ds, s, sched = cfg.refine_schedule()](std::size_t i) -> std::unique_ptr<NoisePredictor> {
    return std::make_unique<GaussianPriorNoiseOracle>(ds.test.at(i).b.bins, s, sched);
  };
  return h;
}

void full_run(const ExperimentConfig& c) {
  cmd_gen_data(c);
  cmd_train_bridge(c);
  cmd_train_refiner(c);
  cmd_convert(c);
  cmd_evaluate(c);
  cmd_ablate(c);
}

}  // namespace

TEST_CASE("config: json round trip keeps every value") {
  ExperimentConfig c = tiny("x");
  c.metrics.psnr_convention = PsnrConvention::Literal;
  c.bridge_arch.widths = {4, 6};
  const json j = c.to_json();
  const auto back = ExperimentConfig::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(back.hash() == c.hash());
}

TEST_CASE("config: defaults carry the documented sampler values") {
  const ExperimentConfig c;
  const json j = c.to_json();
  CHECK(j.at("bridge_N") == 40);
  CHECK(j.at("t_prior") == 185);
  CHECK(j.at("bridge_lr") == doctest::Approx(1e-4));
  CHECK(j.at("refiner_lr") == doctest::Approx(5e-5));
  CHECK(j.at("n_paired") == 64);
  CHECK(j.at("n_unpaired") == 128);
  CHECK(j.at("n_angles") == 60);
  CHECK(j.at("n_bins") == 64);
}

TEST_CASE("config: unknown keys, bad types and invalid values are rejected") {
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"bridge_step", 3}}), std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"bridge_N", "forty"}}), std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"psnr_convention", "other"}}), std::invalid_argument);
  CHECK_THROWS(ExperimentConfig::from_json({{"t_prior", 5000}}));
  CHECK_THROWS(ExperimentConfig::from_json(json::array()));
}

TEST_CASE("config: hash ignores output location and dumps only") {
  ExperimentConfig a = tiny("a"), b = tiny("b");
  b.debug_dumps = true;
  CHECK(a.hash() == b.hash());
  b.seed = 12;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("config: load accepts a run manifest") {
  const auto dir = test::scratch("harness_load");
  auto c = tiny(dir / "run");
  cmd_gen_data(c);
  const auto back = ExperimentConfig::load(dir / "run" / "run_manifest.json");
  CHECK(back.to_json() == c.to_json());
  binio::write_text_atomic(dir / "bad.json", "{ not json");
  CHECK_THROWS_AS(ExperimentConfig::load(dir / "bad.json"), std::invalid_argument);
}

TEST_CASE("gen-data: byte identical across runs, counts recorded") {
  const auto dir = test::scratch("harness_gen");
  auto c1 = tiny(dir / "r1"), c2 = tiny(dir / "r2");
  cmd_gen_data(c1);
  cmd_gen_data(c2);
  CHECK(snapshot(dir / "r1" / "data") == snapshot(dir / "r2" / "data"));
  const json m = json::parse(slurp(dir / "r1" / "data" / "manifest.json"));
  const auto ds = load_dataset(dir / "r1" / "data");
  CHECK(ds.paired.size() == 4);
  CHECK(ds.unpaired.size() == 4);
  CHECK(ds.test.size() == 3);
  CHECK(m.dump().find("\"paired\"") != std::string::npos);
}

TEST_CASE("gen-data: a corrupt manifest is replaced on re-run") {
  const auto dir = test::scratch("harness_corrupt");
  auto c = tiny(dir / "run");
  cmd_gen_data(c);
  const auto good = snapshot(dir / "run" / "data");
  binio::write_text_atomic(dir / "run" / "data" / "manifest.json", "{\"garbage\": ");
  binio::write_text_atomic(dir / "run" / "run_manifest.json", "[1, 2");
  CHECK_THROWS(load_dataset(dir / "run" / "data"));
  cmd_gen_data(c);
  CHECK(snapshot(dir / "run" / "data") == good);
  const json m = json::parse(slurp(dir / "run" / "run_manifest.json"));
  CHECK(m.at("format") == "pjdm-run");
}

TEST_CASE("train: missing dataset is an error") {
  const auto dir = test::scratch("harness_nodata");
  const auto c = tiny(dir / "run");
  CHECK_THROWS_AS(cmd_train_bridge(c), std::runtime_error);
  CHECK_THROWS_AS(cmd_train_refiner(c), std::runtime_error);
  CHECK_THROWS_AS(cmd_convert(c), std::runtime_error);
  CHECK_THROWS_AS(cmd_evaluate(c), std::runtime_error);
}

TEST_CASE("train: identical runs give identical checkpoints, resume continues the trace") {
  const auto dir = test::scratch("harness_train");
  auto a = tiny(dir / "a"), b = tiny(dir / "b");
  for (auto* c : {&a, &b}) {
    cmd_gen_data(*c);
    cmd_train_bridge(*c);
    cmd_train_refiner(*c);
  }
  for (const char* f : {"bridge/checkpoint.pjdm", "bridge/loss.csv", "refiner/checkpoint.pjdm",
                        "refiner/loss.csv", "refiner/train_state.json"}) {
    CAPTURE(f);
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
  CHECK(csv_lines(dir / "a" / "bridge" / "loss.csv").size() == 7);

  // Stop at 4 steps, then extend to 6: same bytes as the straight 6-step run.
  auto r = tiny(dir / "r");
  r.bridge_train.steps = 4;
  cmd_gen_data(r);
  const auto s1 = cmd_train_bridge(r);
  CHECK(s1.end_step == 4);
  r.bridge_train.steps = 6;
  const auto s2 = cmd_train_bridge(r);
  CHECK(s2.start_step == 4);
  CHECK(s2.end_step == 6);
  CHECK(s2.initial_eval_loss == s1.initial_eval_loss);
  CHECK(slurp(dir / "r" / "bridge" / "checkpoint.pjdm") == slurp(dir / "a" / "bridge" / "checkpoint.pjdm"));
  CHECK(slurp(dir / "r" / "bridge" / "loss.csv") == slurp(dir / "a" / "bridge" / "loss.csv"));

  // A changed stage config starts over instead of resuming.
  r.bridge_arch.widths = {6};
  const auto s3 = cmd_train_bridge(r);
  CHECK(s3.start_step == 0);
}

TEST_CASE("train: convert refuses a checkpoint that stopped early") {
  const auto dir = test::scratch("harness_short");
  auto c = tiny(dir / "run");
  full_run(c);
  c.bridge_train.steps = 50;
  CHECK_THROWS_AS(cmd_convert(c), std::runtime_error);
}

TEST_CASE("train: four-pair bridge memorization drops the eval loss below 5%") {
  const auto dir = test::scratch("harness_memo");
  auto c = tiny(dir / "run");
  c.geometry = {8, 8, 8};
  c.n_test = 1;
  c.bridge_arch.widths = {32, 64};
  // A small g keeps the four pairs distinguishable at every noise level.
  c.bridge.g = 0.1;
  c.bridge_train.lr = 2e-3;
  c.bridge_train.batch_size = 8;
  c.bridge_train.steps = 500;
  c.checkpoint_every = 500;
  cmd_gen_data(c);
  const auto s = cmd_train_bridge(c);
  MESSAGE("bridge eval loss " << s.initial_eval_loss << " -> " << s.final_eval_loss);
  CHECK(s.final_eval_loss < 0.05 * s.initial_eval_loss);
  // The trace trends down: the last tenth averages well below the first tenth.
  const auto lines = csv_lines(dir / "run" / "bridge" / "loss.csv");
  REQUIRE(lines.size() == 501);
  double head = 0.0, tail = 0.0;
  for (int i = 1; i <= 50; ++i) {
    head += std::stod(split(lines[i])[1]);
    tail += std::stod(split(lines[450 + i])[1]);
  }
  CHECK(tail < 0.2 * head);
}

TEST_CASE("convert: oracle hooks recover the tracer-B sinograms") {
  const auto dir = test::scratch("harness_oracle");
  auto c = tiny(dir / "run");
  c.bridge.N = 40;
  c.t_prior = 185;
  c.fast_steps = 50;
  cmd_gen_data(c);
  const auto ds = load_dataset(dir / "run" / "data");
  cmd_convert(c, oracle_hooks(ds, c, 0.0));
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "_%04zu.sino", i);
    const auto coarse = read_sinogram(dir / "run" / "convert" / (std::string("coarse") + name));
    const auto refined = read_sinogram(dir / "run" / "convert" / (std::string("refined") + name));
    // Stage I keeps a little injected noise; the refiner oracle removes it.
    CHECK(test::max_abs_diff(coarse.bins, ds.test[i].b.bins) < 5e-2);
    CHECK(test::max_abs_diff(refined.bins, ds.test[i].b.bins) < 1e-5);
  }
  const json m = json::parse(slurp(dir / "run" / "run_manifest.json"));
  CHECK(m.at("sampler").at("bridge_N") == 40);
  CHECK(m.at("sampler").at("t_prior") == 185);
  CHECK(m.at("artifacts").at("convert").size() == 2 * ds.test.size());
}

TEST_CASE("convert: geometry mismatch of an input file is an error") {
  const auto dir = test::scratch("harness_geom");
  auto c = tiny(dir / "run");
  full_run(c);
  write_sinogram(dir / "odd.sino", Sinogram(Field(5, 5, 0.1)));
  c.convert_input = (dir / "odd.sino").string();
  CHECK_THROWS_AS(cmd_convert(c), std::runtime_error);
}

TEST_CASE("ablate: oracle pipeline puts CE+PR strictly best on NRMSE") {
  const auto dir = test::scratch("harness_ablate_oracle");
  auto c = tiny(dir / "run");
  c.bridge.N = 40;
  c.t_prior = 185;
  c.fast_steps = 50;
  cmd_gen_data(c);
  const auto ds = load_dataset(dir / "run" / "data");
  cmd_ablate(c, oracle_hooks(ds, c, 0.005));
  const auto lines = csv_lines(dir / "run" / "ablate" / "ablation.csv");
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "variant,psnr_db,ssim,nrmse,image_psnr_db,image_ssim,image_nrmse");
  std::map<std::string, double> nrmse;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split(lines[i]);
    REQUIRE(f.size() == 7);
    nrmse[f[0]] = std::stod(f[3]);
  }
  MESSAGE("nrmse ce_only " << nrmse["ce_only"] << " pr_only " << nrmse["pr_only"] << " ce_pr "
                           << nrmse["ce_pr"]);
  CHECK(nrmse["ce_pr"] < nrmse["ce_only"]);
  CHECK(nrmse["ce_pr"] < nrmse["pr_only"]);
}

TEST_CASE("pipeline: every command is byte reproducible and the manifest lists real files") {
  const auto dir = test::scratch("harness_repro");
  auto a = tiny(dir / "a"), b = tiny(dir / "b");
  full_run(a);
  full_run(b);
  const auto sa = snapshot(dir / "a"), sb = snapshot(dir / "b");
  CHECK(sa.size() == sb.size());
  for (const auto& [k, v] : sa) {
    CAPTURE(k);
    // The manifest embeds out_dir, which legitimately differs.
    if (k == "run_manifest.json") continue;
    CHECK(sb.count(k) == 1);
    if (sb.count(k)) CHECK(v == sb.at(k));
  }
  const json m = json::parse(sa.at("run_manifest.json"));
  for (const char* cmd : {"gen-data", "train-bridge", "train-refiner", "convert", "evaluate", "ablate"}) {
    CAPTURE(cmd);
    REQUIRE(m.at("artifacts").contains(cmd));
    for (const auto& f : m.at("artifacts").at(cmd)) CHECK(fs::exists(dir / "a" / f.get<std::string>()));
  }
  CHECK(fs::exists(dir / "a" / "run_log.txt"));

  // Re-running from the manifest alone reproduces the artifacts.
  auto again = ExperimentConfig::load(dir / "a" / "run_manifest.json");
  again.out_dir = (dir / "c").string();
  full_run(again);
  const auto sc = snapshot(dir / "c");
  for (const auto& [k, v] : sa) {
    if (k == "run_manifest.json") continue;
    CAPTURE(k);
    CHECK((sc.count(k) && sc.at(k) == v));
  }
}

TEST_CASE("evaluate: references against themselves give perfect rows") {
  const auto dir = test::scratch("harness_self");
  auto c = tiny(dir / "run");
  full_run(c);
  const auto ds = load_dataset(dir / "run" / "data");
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "_%04zu.sino", i);
    write_sinogram(dir / "run" / "convert" / (std::string("refined") + name), ds.test[i].b);
  }
  cmd_evaluate(c);
  const auto lines = csv_lines(dir / "run" / "eval" / "report_refined.csv");
  REQUIRE(lines.size() == 1 + 2 * 3 + 2);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split(lines[i]);
    CAPTURE(lines[i]);
    CHECK(f[1] == "inf");
    CHECK(f[2] == "1");
    CHECK(f[3] == "0");
  }
  CHECK(csv_lines(dir / "run" / "eval" / "report_coarse.csv").size() == lines.size());
  const auto prof = csv_lines(dir / "run" / "eval" / "profiles.csv");
  CHECK(prof[0] == "item,sample,reference,coarse,refined");
  CHECK(prof.size() == 1 + 3 * 8);
  CHECK(slurp(dir / "run" / "eval" / "profile_0000.svg").rfind("<svg", 0) == 0);
}

TEST_CASE("svg: renderings are fixed byte streams") {
  Field f(2, 2);
  f.data = {0.0, 0.5, 0.75, 1.0};
  const std::string heat = svg_heatmap(f, "t");
  CHECK(heat ==
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"8\" height=\"28\">\n"
        "<text x=\"2\" y=\"14\" font-family=\"monospace\" font-size=\"12\">t</text>\n"
        "<rect x=\"0\" y=\"20\" width=\"4\" height=\"4\" fill=\"rgb(0,0,0)\"/>\n"
        "<rect x=\"4\" y=\"20\" width=\"4\" height=\"4\" fill=\"rgb(128,128,128)\"/>\n"
        "<rect x=\"0\" y=\"24\" width=\"4\" height=\"4\" fill=\"rgb(191,191,191)\"/>\n"
        "<rect x=\"4\" y=\"24\" width=\"4\" height=\"4\" fill=\"rgb(255,255,255)\"/>\n"
        "</svg>\n");
  const std::string lines = svg_lines({{0.0, 1.0}}, {"a"}, "p");
  CHECK(lines.find("points=\"30.00,210.00 450.00,30.00\"") != std::string::npos);
  CHECK(svg_lines({{0.0, 1.0}}, {"a"}, "p") == lines);
}

TEST_CASE("profile: the striatum line passes through both tracer-B region centers") {
  const auto ds = gen_dataset(1, 0, Geometry{12, 16, 32}, 5, 0);
  const auto& spec = ds.paired[0].spec;
  REQUIRE(spec.tracer_b_regions.size() >= 2);
  const auto line = striatum_profile(spec, 32, 16);
  CHECK(line.samples == 16);
  for (std::size_t k = 0; k < 2; ++k) {
    const Ellipse& e = spec.ellipses.at(spec.tracer_b_regions[k]);
    const double px = e.cx * 32 - 0.5, py = e.cy * 32 - 0.5;
    // Distance from the region center to the segment's supporting line.
    const double dx = line.x1 - line.x0, dy = line.y1 - line.y0;
    const double dist = std::abs(dx * (py - line.y0) - dy * (px - line.x0)) / std::hypot(dx, dy);
    CHECK(dist < 1e-9);
  }
}
