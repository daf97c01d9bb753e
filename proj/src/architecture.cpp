#include <charconv>
#include <cstdio>
#include <sstream>

#include "pjdm/nn/network.hpp"

namespace pjdm::nn {

namespace {
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

std::string Architecture::to_string() const {
  std::ostringstream os;
  os << (kind == Kind::UNet ? "unet" : "linear") << " in=" << in_channels;
  if (kind == Kind::UNet) {
    os << " widths=";
    for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
  }
  os << " temb=" << time_dim << " tscale=" << fmt_double(time_scale);
  return os.str();
}

Architecture Architecture::parse(std::string_view text) {
  Architecture a;
  a.widths.clear();
  std::istringstream is{std::string(text)};
  std::string tok;
  if (!(is >> tok)) throw std::invalid_argument("architecture: empty descriptor");
  if (tok == "unet") {
    a.kind = Kind::UNet;
  } else if (tok == "linear") {
    a.kind = Kind::Linear;
  } else {
    throw std::invalid_argument("architecture: unknown kind '" + tok + "'");
  }
  auto to_int = [](const std::string& s) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw std::invalid_argument("architecture: bad integer '" + s + "'");
    }
    return v;
  };
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("architecture: bad token '" + tok + "'");
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "in") {
      a.in_channels = to_int(val);
    } else if (key == "widths") {
      std::istringstream ws(val);
      std::string w;
      while (std::getline(ws, w, ',')) a.widths.push_back(to_int(w));
    } else if (key == "temb") {
      a.time_dim = to_int(val);
    } else if (key == "tscale") {
      a.time_scale = std::stod(val);
    } else {
      throw std::invalid_argument("architecture: unknown key '" + key + "'");
    }
  }
  a.validate();
  return a;
}

void Architecture::validate() const {
  if (in_channels < 1) throw std::invalid_argument("architecture: in_channels must be >= 1");
  if (time_dim < 2 || time_dim % 2 != 0) {
    throw std::invalid_argument("architecture: time embedding dimension must be even and >= 2");
  }
  if (kind == Kind::UNet) {
    if (widths.empty()) throw std::invalid_argument("architecture: unet needs at least one level");
    for (int w : widths) {
      if (w < 1) throw std::invalid_argument("architecture: widths must be >= 1");
    }
  }
}

std::size_t Architecture::parameter_count() const {
  auto conv = [](std::size_t cout, std::size_t cin) { return cout * cin * 9 + cout; };
  const auto c0 = static_cast<std::size_t>(first_channels());
  std::size_t n = c0 * static_cast<std::size_t>(time_dim) + c0;
  if (kind == Kind::Linear) return n + conv(1, static_cast<std::size_t>(in_channels));
  auto cin = static_cast<std::size_t>(in_channels);
  for (int w : widths) {
    const auto wu = static_cast<std::size_t>(w);
    n += conv(wu, cin) + conv(wu, wu);
    cin = wu;
  }
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto wl = static_cast<std::size_t>(widths[l]);
    n += conv(wl, wl + static_cast<std::size_t>(widths[l + 1]));
  }
  return n + conv(1, static_cast<std::size_t>(widths.front()));
}

}  // namespace pjdm::nn
