#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pjdm/bridge.hpp"
#include "pjdm/dataset_io.hpp"
#include "pjdm/harness.hpp"
#include "pjdm/metrics.hpp"
#include "pjdm/phantom.hpp"
#include "pjdm/refiner.hpp"

namespace py = pybind11;
using namespace pjdm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Field to_field(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  Field f(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), f.data.begin());
  return f;
}

Array to_array(const Field& f) {
  Array a({f.rows, f.cols});
  std::copy(f.data.begin(), f.data.end(), a.mutable_data());
  return a;
}

py::dict paired_dict(const PairedItem& p) {
  py::dict d;
  d["a"] = to_array(p.a.bins);
  d["b"] = to_array(p.b.bins);
  return d;
}

}  // namespace

PYBIND11_MODULE(_pjdm, m) {
  m.doc() = "PJDM core bindings";
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<BridgeSchedule>(m, "BridgeSchedule")
      .def(py::init<>())
      .def_readwrite("T", &BridgeSchedule::T)
      .def_readwrite("g", &BridgeSchedule::g)
      .def_readwrite("w", &BridgeSchedule::w)
      .def_readwrite("m", &BridgeSchedule::m)
      .def_readwrite("N", &BridgeSchedule::N)
      .def_readwrite("rho", &BridgeSchedule::rho)
      .def_readwrite("t_min", &BridgeSchedule::t_min)
      .def("validate", &BridgeSchedule::validate);

  m.def("bridge_coeffs", [](double t, const BridgeSchedule& s) {
    const auto k = bridge_coeffs(t, s);
    return py::make_tuple(k.a, k.b, k.c);
  }, py::arg("t"), py::arg("sched") = BridgeSchedule{}, "(a_t, b_t, c_t)");
  m.def("time_grid", [](const BridgeSchedule& s) { return time_grid(s); },
        py::arg("sched") = BridgeSchedule{});
  m.def("forward_bridge_sample",
        [](const Array& x0, const Array& xT, double t, const Array& eps, const BridgeSchedule& s) {
          return to_array(forward_bridge_sample(to_field(x0), to_field(xT), t, to_field(eps), s));
        },
        py::arg("x0"), py::arg("xT"), py::arg("t"), py::arg("eps"),
        py::arg("sched") = BridgeSchedule{});

  m.def("refine_schedule",
        [](int T, double beta_min, double beta_max, int t_prior) {
          const auto s = make_refine_schedule(T, beta_min, beta_max, t_prior);
          return s.alpha_bars;
        },
        py::arg("T") = 1000, py::arg("beta_min") = 1e-4, py::arg("beta_max") = 0.02,
        py::arg("t_prior") = 185, "alpha_bar_t for t = 0..T");
  m.def("forward_noise",
        [](const Array& x0, int t, const Array& eps, int T, double beta_min, double beta_max) {
          const auto s = make_refine_schedule(T, beta_min, beta_max, std::min(185, T));
          return to_array(forward_noise(to_field(x0), t, s, to_field(eps)));
        },
        py::arg("x0"), py::arg("t"), py::arg("eps"), py::arg("T") = 1000,
        py::arg("beta_min") = 1e-4, py::arg("beta_max") = 0.02);
  m.def("degrade",
        [](const Array& x, std::uint64_t seed) {
          return to_array(degrade(Sinogram(to_field(x)), DegradeParams{}, seed).bins);
        },
        py::arg("x"), py::arg("seed"), "Random blur, contrast and brightness with the default ranges");

  m.def("phantom",
        [](std::uint64_t seed, const std::string& tracer, std::size_t size) {
          if (tracer != "A" && tracer != "B") throw std::invalid_argument("tracer must be 'A' or 'B'");
          const auto spec = random_phantom_spec(seed);
          return to_array(make_phantom(spec, tracer == "A" ? Tracer::A : Tracer::B, size).pixels);
        },
        py::arg("seed"), py::arg("tracer") = "A", py::arg("size") = 64);
  m.def("radon",
        [](const Array& img, std::size_t n_angles, std::size_t n_bins) {
          return to_array(radon(ImageGrid(to_field(img)), n_angles, n_bins).bins);
        },
        py::arg("image"), py::arg("n_angles") = 60, py::arg("n_bins") = 64);
  m.def("fbp",
        [](const Array& sino, std::size_t size) {
          return to_array(fbp(Sinogram(to_field(sino)), size).pixels);
        },
        py::arg("sinogram"), py::arg("image_size") = 64);
  m.def("gen_dataset",
        [](std::size_t n_paired, std::size_t n_unpaired, std::size_t n_test, std::uint64_t seed,
           std::size_t n_angles, std::size_t n_bins, std::size_t image_size) {
          const auto ds = gen_dataset(n_paired, n_unpaired, Geometry{n_angles, n_bins, image_size},
                                      seed, n_test);
          py::dict out;
          py::list paired, unpaired, test;
          for (const auto& p : ds.paired) paired.append(paired_dict(p));
          for (const auto& u : ds.unpaired) unpaired.append(to_array(u.b.bins));
          for (const auto& t : ds.test) test.append(paired_dict(t));
          out["paired"] = paired;
          out["unpaired"] = unpaired;
          out["test"] = test;
          out["global_scale"] = ds.global_scale;
          return out;
        },
        py::arg("n_paired"), py::arg("n_unpaired") = 0, py::arg("n_test") = 0, py::arg("seed") = 0,
        py::arg("n_angles") = 60, py::arg("n_bins") = 64, py::arg("image_size") = 64);

  m.def("psnr",
        [](const Array& I, const Array& ref, const std::string& convention) {
          MetricsConfig c;
          c.psnr_convention = parse_psnr_convention(convention);
          return psnr(to_field(I), to_field(ref), c);
        },
        py::arg("I"), py::arg("ref"), py::arg("convention") = "standard_rmse");
  m.def("ssim",
        [](const Array& I, const Array& ref, double dynamic_range) {
          MetricsConfig c;
          c.dynamic_range = dynamic_range;
          return ssim(to_field(I), to_field(ref), c);
        },
        py::arg("I"), py::arg("ref"), py::arg("dynamic_range") = 0.0);
  m.def("nrmse", [](const Array& I, const Array& ref) { return nrmse(to_field(I), to_field(ref)); },
        py::arg("I"), py::arg("ref"));
  m.def("profile_line",
        [](const Array& img, double x0, double y0, double x1, double y1, int samples) {
          return profile_line(to_field(img), ProfileLine{x0, y0, x1, y1, samples});
        },
        py::arg("image"), py::arg("x0"), py::arg("y0"), py::arg("x1"), py::arg("y1"),
        py::arg("samples"));

  m.def("read_sinogram", [](const std::string& path) { return to_array(read_sinogram(path).bins); });
  m.def("write_sinogram", [](const std::string& path, const Array& a) {
    write_sinogram(path, Sinogram(to_field(a)));
  });

  m.def("_default_config", [] { return ExperimentConfig{}.to_json().dump(); });
  m.def("_run", [](const std::string& command, const std::string& config_json) {
    const auto cfg = ExperimentConfig::from_json(nlohmann::json::parse(config_json));
    nlohmann::json result = {{"out_dir", cfg.out_dir}};
    py::gil_scoped_release release;
    if (command == "gen-data") {
      cmd_gen_data(cfg);
    } else if (command == "train-bridge" || command == "train-refiner") {
      const auto s = command == "train-bridge" ? cmd_train_bridge(cfg) : cmd_train_refiner(cfg);
      result["start_step"] = s.start_step;
      result["end_step"] = s.end_step;
      result["initial_eval_loss"] = s.initial_eval_loss;
      result["final_eval_loss"] = s.final_eval_loss;
    } else if (command == "convert") {
      cmd_convert(cfg);
    } else if (command == "evaluate") {
      cmd_evaluate(cfg);
    } else if (command == "ablate") {
      cmd_ablate(cfg);
    } else {
      throw std::invalid_argument("unknown command '" + command + "'");
    }
    return result.dump();
  });
}
