#include "pjdm/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace pjdm {

std::string to_string(PsnrConvention c) {
  return c == PsnrConvention::Literal ? "literal" : "standard_rmse";
}

PsnrConvention parse_psnr_convention(const std::string& name) {
  if (name == "standard_rmse") return PsnrConvention::StandardRmse;
  if (name == "literal") return PsnrConvention::Literal;
  throw std::invalid_argument("unknown PSNR convention '" + name + "' (standard_rmse|literal)");
}

void MetricsConfig::validate() const {
  if (!(k1 > 0.0) || !(k2 > 0.0)) throw std::invalid_argument("metrics: k1 and k2 must be > 0");
}

namespace {
double sq_error(const Field& I, const Field& ref) {
  require_same_shape(I, ref, "metric");
  if (I.size() == 0) throw std::invalid_argument("metric: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < I.size(); ++i) {
    const double d = I.data[i] - ref.data[i];
    acc += d * d;
  }
  return acc;
}
}  // namespace

double psnr(const Field& I, const Field& ref, const MetricsConfig& cfg) {
  const double se = sq_error(I, ref);
  if (cfg.psnr_convention == PsnrConvention::StandardRmse) {
    const double peak = max_value(ref);
    if (!(peak > 0.0)) throw std::invalid_argument("psnr: reference peak must be > 0");
    if (se == 0.0) return kInf;
    return 20.0 * std::log10(peak / std::sqrt(se / static_cast<double>(I.size())));
  }
  if (se == 0.0) return kInf;
  const double peak = max_value(I);
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: image peak must be > 0");
  return 20.0 * std::log10(peak / std::sqrt(se));
}

double ssim(const Field& I, const Field& ref, const MetricsConfig& cfg) {
  cfg.validate();
  require_same_shape(I, ref, "ssim");
  if (I.size() < 2) throw std::invalid_argument("ssim: need at least 2 samples");
  const double n = static_cast<double>(I.size());
  const double mu = mean(I), mr = mean(ref);
  double vi = 0.0, vr = 0.0, cv = 0.0;
  for (std::size_t i = 0; i < I.size(); ++i) {
    const double a = I.data[i] - mu, b = ref.data[i] - mr;
    vi += a * a;
    vr += b * b;
    cv += a * b;
  }
  vi /= n;
  vr /= n;
  cv /= n;
  double L = cfg.dynamic_range;
  if (!(L > 0.0)) L = max_value(ref) - min_value(ref);
  if (!(L > 0.0)) L = 1.0;
  const double c1 = (cfg.k1 * L) * (cfg.k1 * L);
  const double c2 = (cfg.k2 * L) * (cfg.k2 * L);
  return ((2.0 * mu * mr + c1) * (2.0 * cv + c2)) / ((mu * mu + mr * mr + c1) * (vi + vr + c2));
}

double nrmse(const Field& I, const Field& ref) {
  const double se = sq_error(I, ref);
  const double range = max_value(ref) - min_value(ref);
  if (!(range > 0.0)) throw std::invalid_argument("nrmse: reference is constant");
  return std::sqrt(se / static_cast<double>(I.size())) / range;
}

std::vector<double> profile_line(const Field& image, const ProfileLine& line) {
  if (line.samples < 2) throw std::invalid_argument("profile_line: need at least 2 samples");
  const double W = static_cast<double>(image.cols) - 1.0;
  const double H = static_cast<double>(image.rows) - 1.0;
  auto inside = [&](double x, double y) { return x >= 0.0 && x <= W && y >= 0.0 && y <= H; };
  if (!inside(line.x0, line.y0) || !inside(line.x1, line.y1)) {
    throw std::invalid_argument("profile_line: endpoint outside the image");
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(line.samples));
  for (int k = 0; k < line.samples; ++k) {
    const double f = static_cast<double>(k) / (line.samples - 1);
    const double x = line.x0 + f * (line.x1 - line.x0);
    const double y = line.y0 + f * (line.y1 - line.y0);
    const auto c0 = static_cast<std::size_t>(std::floor(x));
    const auto r0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t c1 = std::min(c0 + 1, image.cols - 1);
    const std::size_t r1 = std::min(r0 + 1, image.rows - 1);
    const double fx = x - static_cast<double>(c0), fy = y - static_cast<double>(r0);
    double v = (1 - fy) * (1 - fx) * image(r0, c0);
    if (fx != 0.0) v += (1 - fy) * fx * image(r0, c1);
    if (fy != 0.0) v += fy * (1 - fx) * image(r1, c0);
    if (fx != 0.0 && fy != 0.0) v += fy * fx * image(r1, c1);
    out.push_back(v);
  }
  return out;
}

namespace {
MetricsRow mean_row(const std::vector<MetricsRow>& rows, const std::string& domain) {
  MetricsRow m{"mean", 0.0, 0.0, 0.0, domain};
  double ps = 0.0;
  std::size_t finite = 0, n = 0;
  for (const auto& r : rows) {
    if (r.domain != domain) continue;
    ++n;
    m.ssim += r.ssim;
    m.nrmse += r.nrmse;
    if (std::isfinite(r.psnr_db)) {
      ps += r.psnr_db;
      ++finite;
    }
  }
  m.ssim /= static_cast<double>(n);
  m.nrmse /= static_cast<double>(n);
  m.psnr_db = finite ? ps / static_cast<double>(finite) : kInf;
  return m;
}
}  // namespace

MetricsReport evaluate(const std::vector<Sinogram>& outputs, const std::vector<Sinogram>& refs,
                       const MetricsConfig& cfg, std::size_t image_size,
                       const std::vector<std::string>& names) {
  if (outputs.size() != refs.size()) throw std::invalid_argument("evaluate: list length mismatch");
  if (outputs.empty()) throw std::invalid_argument("evaluate: nothing to evaluate");
  if (!names.empty() && names.size() != outputs.size()) {
    throw std::invalid_argument("evaluate: name count mismatch");
  }
  MetricsReport rep;
  auto add = [&](const Field& o, const Field& r, std::size_t i, const char* domain) {
    MetricsRow row;
    row.item = names.empty() ? std::to_string(i) : names[i];
    row.psnr_db = psnr(o, r, cfg);
    row.ssim = ssim(o, r, cfg);
    row.nrmse = nrmse(o, r);
    row.domain = domain;
    if (std::isinf(row.psnr_db)) ++rep.psnr_inf_count;
    rep.rows.push_back(std::move(row));
  };
  for (std::size_t i = 0; i < outputs.size(); ++i) add(outputs[i].bins, refs[i].bins, i, "sinogram");
  rep.means.push_back(mean_row(rep.rows, "sinogram"));
  if (image_size > 0) {
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      add(fbp(outputs[i], image_size).pixels, fbp(refs[i], image_size).pixels, i, "image");
    }
    rep.means.push_back(mean_row(rep.rows, "image"));
  }
  return rep;
}

std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string report_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "item,psnr_db,ssim,nrmse,domain\n";
  auto line = [&](const MetricsRow& r) {
    os << r.item << ',' << format_metric(r.psnr_db) << ',' << format_metric(r.ssim) << ','
       << format_metric(r.nrmse) << ',' << r.domain << '\n';
  };
  for (const auto& r : report.rows) line(r);
  for (const auto& r : report.means) line(r);
  return os.str();
}

}  // namespace pjdm
