#include "pjdm/dataset_io.hpp"

#include <cstdio>
#include <set>

#include "pjdm/binary_io.hpp"

namespace pjdm {

namespace fs = std::filesystem;
using nlohmann::json;

void write_sinogram(const fs::path& path, const Sinogram& sino) {
  binio::Writer w;
  w.bytes("SINO");
  w.u32(kSinogramVersion);
  w.u32(static_cast<std::uint32_t>(sino.n_angles()));
  w.u32(static_cast<std::uint32_t>(sino.n_bins()));
  for (double v : sino.values()) w.f32(static_cast<float>(v));
  binio::write_file_atomic(path, w.buffer());
}

Sinogram read_sinogram(const fs::path& path) {
  binio::Reader r(binio::read_file(path), "sinogram " + path.string());
  if (r.bytes(4) != "SINO") throw std::runtime_error(path.string() + ": bad sinogram magic");
  const auto version = r.u32();
  if (version != kSinogramVersion) {
    throw std::runtime_error(path.string() + ": unsupported sinogram version " +
                             std::to_string(version));
  }
  const std::size_t n_angles = r.u32();
  const std::size_t n_bins = r.u32();
  if (r.remaining() != n_angles * n_bins * 4) {
    throw std::runtime_error(path.string() + ": payload size does not match header");
  }
  std::vector<double> values(n_angles * n_bins);
  for (double& v : values) v = r.f32();
  Sinogram s(n_angles, n_bins, std::move(values));
  s.validate();
  return s;
}

void to_json(json& j, const Ellipse& e) {
  j = json{{"cx", e.cx}, {"cy", e.cy}, {"ax", e.ax}, {"ay", e.ay},
           {"angle", e.angle}, {"intensity", e.intensity}};
}

void from_json(const json& j, Ellipse& e) {
  j.at("cx").get_to(e.cx);
  j.at("cy").get_to(e.cy);
  j.at("ax").get_to(e.ax);
  j.at("ay").get_to(e.ay);
  j.at("angle").get_to(e.angle);
  j.at("intensity").get_to(e.intensity);
}

void to_json(json& j, const PhantomSpec& s) {
  j = json{{"ellipses", s.ellipses},
           {"tracer_b_regions", s.tracer_b_regions},
           {"tracer_b_gain", s.tracer_b_gain},
           {"background_damp", s.background_damp}};
}

void from_json(const json& j, PhantomSpec& s) {
  j.at("ellipses").get_to(s.ellipses);
  j.at("tracer_b_regions").get_to(s.tracer_b_regions);
  j.at("tracer_b_gain").get_to(s.tracer_b_gain);
  j.at("background_damp").get_to(s.background_damp);
}

void to_json(json& j, const Geometry& g) {
  j = json{{"n_angles", g.n_angles}, {"n_bins", g.n_bins}, {"image_size", g.image_size}};
}

void from_json(const json& j, Geometry& g) {
  j.at("n_angles").get_to(g.n_angles);
  j.at("n_bins").get_to(g.n_bins);
  j.at("image_size").get_to(g.image_size);
}

namespace {
std::string item_name(const char* split, std::size_t i, const char* variant) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu_%s.sino", split, i, variant);
  return buf;
}
}  // namespace

void save_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  std::set<std::string> written;
  auto put = [&](const std::string& name, const Sinogram& s) {
    write_sinogram(dir / name, s);
    written.insert(name);
    return name;
  };

  json paired = json::array();
  for (std::size_t i = 0; i < ds.paired.size(); ++i) {
    paired.push_back({{"a", put(item_name("paired", i, "A"), ds.paired[i].a)},
                      {"b", put(item_name("paired", i, "B"), ds.paired[i].b)},
                      {"spec", ds.paired[i].spec}});
  }
  json unpaired = json::array();
  for (std::size_t i = 0; i < ds.unpaired.size(); ++i) {
    unpaired.push_back({{"b", put(item_name("unpaired", i, "B"), ds.unpaired[i].b)},
                        {"spec", ds.unpaired[i].spec}});
  }
  json test = json::array();
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    test.push_back({{"a", put(item_name("test", i, "A"), ds.test[i].a)},
                    {"b", put(item_name("test", i, "B"), ds.test[i].b)},
                    {"spec", ds.test[i].spec}});
  }

  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".sino" && !written.count(entry.path().filename().string())) {
      fs::remove(entry.path());
    }
  }

  json manifest = {{"format", "pjdm-dataset"},
                   {"version", 1},
                   {"geometry", ds.geometry},
                   {"global_scale", ds.global_scale},
                   {"master_seed", ds.master_seed},
                   {"dose", ds.dose},
                   {"counts",
                    {{"paired", ds.paired.size()},
                     {"unpaired", ds.unpaired.size()},
                     {"test", ds.test.size()}}},
                   {"paired", paired},
                   {"unpaired", unpaired},
                   {"test", test}};
  binio::write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  const auto raw = binio::read_file(dir / "manifest.json");
  json m;
  try {
    m = json::parse(raw.begin(), raw.end());
  } catch (const json::exception& e) {
    throw std::runtime_error("dataset manifest " + (dir / "manifest.json").string() +
                             " is not valid JSON: " + e.what());
  }
  if (m.value("format", "") != "pjdm-dataset") {
    throw std::runtime_error("dataset manifest has wrong format tag");
  }
  Dataset ds;
  try {
    m.at("geometry").get_to(ds.geometry);
    m.at("global_scale").get_to(ds.global_scale);
    m.at("master_seed").get_to(ds.master_seed);
    ds.dose = m.value("dose", 0.0);
    auto check = [&](const Sinogram& s, const std::string& name) {
      if (s.n_angles() != ds.geometry.n_angles || s.n_bins() != ds.geometry.n_bins) {
        throw std::runtime_error(name + ": geometry does not match manifest");
      }
      return s;
    };
    auto load = [&](const json& j, const char* key) {
      const std::string name = j.at(key).get<std::string>();
      return check(read_sinogram(dir / name), name);
    };
    for (const auto& j : m.at("paired")) {
      ds.paired.push_back({j.at("spec").get<PhantomSpec>(), load(j, "a"), load(j, "b")});
    }
    for (const auto& j : m.at("unpaired")) {
      ds.unpaired.push_back({j.at("spec").get<PhantomSpec>(), load(j, "b")});
    }
    for (const auto& j : m.at("test")) {
      ds.test.push_back({j.at("spec").get<PhantomSpec>(), load(j, "a"), load(j, "b")});
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("dataset manifest is malformed: ") + e.what());
  }
  return ds;
}

}  // namespace pjdm
