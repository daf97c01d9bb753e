#include "pjdm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "pjdm/rng.hpp"

namespace pjdm {

void PhantomSpec::validate() const {
  for (const auto& e : ellipses) {
    if (!(e.ax > 0.0 && e.ay > 0.0)) {
      throw std::invalid_argument("phantom: ellipse semi-axes must be > 0");
    }
    if (!(e.intensity >= 0.0) || !std::isfinite(e.intensity)) {
      throw std::invalid_argument("phantom: ellipse intensity must be finite and >= 0");
    }
  }
  if (!(tracer_b_gain > 0.0)) throw std::invalid_argument("phantom: tracer_b_gain must be > 0");
  if (!(background_damp > 0.0 && background_damp <= 1.0)) {
    throw std::invalid_argument("phantom: background_damp must lie in (0, 1]");
  }
  for (std::size_t r : tracer_b_regions) {
    if (r >= ellipses.size()) throw std::invalid_argument("phantom: region index out of range");
  }
}

namespace {
bool is_region(const PhantomSpec& spec, std::size_t i) {
  return std::find(spec.tracer_b_regions.begin(), spec.tracer_b_regions.end(), i) !=
         spec.tracer_b_regions.end();
}

double variant_factor(const PhantomSpec& spec, std::size_t i, Tracer variant) {
  if (variant == Tracer::A) return 1.0;
  return is_region(spec, i) ? spec.tracer_b_gain : spec.background_damp;
}

bool inside(const Ellipse& e, double x, double y) {
  const double dx = x - e.cx;
  const double dy = y - e.cy;
  const double c = std::cos(e.angle);
  const double s = std::sin(e.angle);
  const double u = (dx * c + dy * s) / e.ax;
  const double v = (-dx * s + dy * c) / e.ay;
  return u * u + v * v <= 1.0;
}

double bilinear(const Field& img, double row, double col) {
  const double r0f = std::floor(row);
  const double c0f = std::floor(col);
  const auto r0 = static_cast<long>(r0f);
  const auto c0 = static_cast<long>(c0f);
  const double fr = row - r0f;
  const double fc = col - c0f;
  const auto rows = static_cast<long>(img.rows);
  const auto cols = static_cast<long>(img.cols);
  auto at = [&](long r, long c) -> double {
    if (r < 0 || c < 0 || r >= rows || c >= cols) return 0.0;
    return img(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  };
  return (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1)) +
         fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1));
}
}  // namespace

double PhantomSpec::shared_scale() const {
  double sum_a = 0.0;
  double sum_b = 0.0;
  for (std::size_t i = 0; i < ellipses.size(); ++i) {
    sum_a += ellipses[i].intensity;
    sum_b += ellipses[i].intensity * variant_factor(*this, i, Tracer::B);
  }
  return std::max(sum_a, sum_b);
}

ImageGrid make_phantom(const PhantomSpec& spec, Tracer variant, std::size_t size) {
  spec.validate();
  Field img(size, size, 0.0);
  const double scale = spec.shared_scale();
  if (scale <= 0.0) return ImageGrid(std::move(img));
  for (std::size_t r = 0; r < size; ++r) {
    const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(size);
    for (std::size_t c = 0; c < size; ++c) {
      const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(size);
      double v = 0.0;
      for (std::size_t i = 0; i < spec.ellipses.size(); ++i) {
        if (inside(spec.ellipses[i], x, y)) {
          v += spec.ellipses[i].intensity * variant_factor(spec, i, variant);
        }
      }
      img(r, c) = v / scale;
    }
  }
  return ImageGrid(std::move(img));
}

Sinogram radon(const ImageGrid& image, std::size_t n_angles, std::size_t n_bins) {
  if (n_angles < 1 || n_bins < 1) throw std::invalid_argument("radon: need n_angles, n_bins >= 1");
  image.validate();
  const Field& img = image.pixels;
  const double half_w = static_cast<double>(img.cols) / 2.0;
  const double half_h = static_cast<double>(img.rows) / 2.0;
  const double radius = std::min(half_w, half_h);
  const double bin_width = 2.0 * radius / static_cast<double>(n_bins);
  const auto n_steps = static_cast<std::size_t>(std::ceil(2.0 * radius / 0.5));
  const double step = 2.0 * radius / static_cast<double>(n_steps);

  Field out(n_angles, n_bins, 0.0);
  for (std::size_t k = 0; k < n_angles; ++k) {
    const double theta = static_cast<double>(k) * std::numbers::pi / static_cast<double>(n_angles);
    const double ct = std::cos(theta);
    const double st = std::sin(theta);
    for (std::size_t j = 0; j < n_bins; ++j) {
      const double s = -radius + (static_cast<double>(j) + 0.5) * bin_width;
      double acc = 0.0;
      for (std::size_t q = 0; q < n_steps; ++q) {
        const double u = -radius + (static_cast<double>(q) + 0.5) * step;
        const double x = s * ct - u * st;
        const double y = s * st + u * ct;
        acc += bilinear(img, y + half_h - 0.5, x + half_w - 0.5);
      }
      out(k, j) = acc * step;
    }
  }
  return Sinogram(std::move(out));
}

ImageGrid fbp(const Sinogram& sino, std::size_t image_size) {
  sino.validate();
  const std::size_t n_angles = sino.n_angles();
  const std::size_t n_bins = sino.n_bins();
  Field img(image_size, image_size, 0.0);
  if (n_angles == 0 || n_bins == 0 || image_size == 0) return ImageGrid(std::move(img));

  const double radius = static_cast<double>(image_size) / 2.0;
  const double tau = 2.0 * radius / static_cast<double>(n_bins);

  // Ram-Lak kernel sampled at the bin spacing.
  const auto nb = static_cast<long>(n_bins);
  std::vector<double> kernel(2 * n_bins - 1, 0.0);
  for (long n = -(nb - 1); n <= nb - 1; ++n) {
    double h = 0.0;
    if (n == 0) {
      h = 1.0 / (4.0 * tau * tau);
    } else if (n % 2 != 0) {
      h = -1.0 / (static_cast<double>(n * n) * std::numbers::pi * std::numbers::pi * tau * tau);
    }
    kernel[static_cast<std::size_t>(n + nb - 1)] = h;
  }

  Field filtered(n_angles, n_bins, 0.0);
  for (std::size_t k = 0; k < n_angles; ++k) {
    for (long i = 0; i < nb; ++i) {
      double acc = 0.0;
      for (long j = 0; j < nb; ++j) {
        acc += kernel[static_cast<std::size_t>(i - j + nb - 1)] *
               sino.bins(k, static_cast<std::size_t>(j));
      }
      filtered(k, static_cast<std::size_t>(i)) = tau * acc;
    }
  }

  std::vector<double> cosv(n_angles), sinv(n_angles);
  for (std::size_t k = 0; k < n_angles; ++k) {
    const double theta = static_cast<double>(k) * std::numbers::pi / static_cast<double>(n_angles);
    cosv[k] = std::cos(theta);
    sinv[k] = std::sin(theta);
  }
  const double weight = std::numbers::pi / static_cast<double>(n_angles);
  for (std::size_t r = 0; r < image_size; ++r) {
    const double y = static_cast<double>(r) + 0.5 - radius;
    for (std::size_t c = 0; c < image_size; ++c) {
      const double x = static_cast<double>(c) + 0.5 - radius;
      double acc = 0.0;
      for (std::size_t k = 0; k < n_angles; ++k) {
        const double s = x * cosv[k] + y * sinv[k];
        const double pos = (s + radius) / tau - 0.5;
        const double p0 = std::floor(pos);
        const auto i0 = static_cast<long>(p0);
        const double f = pos - p0;
        auto at = [&](long i) {
          return (i < 0 || i >= nb) ? 0.0 : filtered(k, static_cast<std::size_t>(i));
        };
        acc += (1.0 - f) * at(i0) + f * at(i0 + 1);
      }
      img(r, c) = std::max(0.0, acc * weight);
    }
  }
  return ImageGrid(std::move(img));
}

Sinogram add_counting_noise(const Sinogram& sino, double dose, std::uint64_t seed) {
  if (!(dose > 0.0)) throw std::invalid_argument("add_counting_noise: dose must be > 0");
  sino.validate();
  double total = 0.0;
  for (double v : sino.values()) total += v;
  if (total == 0.0) return sino;
  const double scale = dose / total;
  Rng rng(seed);
  Sinogram out = sino;
  for (double& v : out.bins.data) {
    const double lambda = v * scale;
    if (lambda <= 0.0) {
      v = 0.0;
      continue;
    }
    std::poisson_distribution<long long> draw(lambda);
    v = static_cast<double>(draw(rng.engine())) / scale;
  }
  return out;
}

PhantomSpec random_phantom_spec(std::uint64_t seed, bool shifted) {
  Rng rng(seed);
  PhantomSpec spec;
  const double ox = rng.uniform(-0.02, 0.02);
  const double oy = rng.uniform(-0.02, 0.02);

  Ellipse outline;
  outline.cx = 0.5 + ox;
  outline.cy = 0.5 + oy;
  outline.ax = rng.uniform(0.32, 0.37);
  outline.ay = rng.uniform(0.38, 0.43);
  outline.angle = rng.uniform(-0.15, 0.15);
  outline.intensity = rng.uniform(0.25, 0.35);
  spec.ellipses.push_back(outline);

  const int n_spots = rng.integer(3, 5);
  for (int i = 0; i < n_spots; ++i) {
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double rad = rng.uniform(0.20, 0.27);
    Ellipse e;
    e.cx = outline.cx + rad * std::cos(phi);
    e.cy = outline.cy + rad * std::sin(phi);
    e.ax = rng.uniform(0.04, 0.08);
    e.ay = rng.uniform(0.03, 0.06);
    e.angle = phi;
    e.intensity = rng.uniform(0.3, 0.6);
    spec.ellipses.push_back(e);
  }

  const double sep = shifted ? rng.uniform(0.09, 0.12) : rng.uniform(0.07, 0.10);
  const double dy = rng.uniform(-0.04, 0.04);
  for (int side = -1; side <= 1; side += 2) {
    Ellipse e;
    e.cx = outline.cx + side * sep;
    e.cy = outline.cy + dy + rng.uniform(-0.01, 0.01);
    e.ax = rng.uniform(0.035, 0.05);
    e.ay = rng.uniform(0.06, 0.085);
    e.angle = side * rng.uniform(0.0, 0.35);
    e.intensity = rng.uniform(0.2, 0.35);
    spec.tracer_b_regions.push_back(spec.ellipses.size());
    spec.ellipses.push_back(e);
  }
  spec.tracer_b_gain = shifted ? rng.uniform(3.0, 4.5) : rng.uniform(2.5, 4.0);
  spec.background_damp = rng.uniform(0.3, 0.5);
  return spec;
}

Dataset gen_dataset(std::size_t n_paired, std::size_t n_unpaired, const Geometry& geometry,
                    std::uint64_t master_seed, std::size_t n_test, double dose) {
  Dataset ds;
  ds.geometry = geometry;
  ds.master_seed = master_seed;
  ds.dose = dose;

  auto project = [&](const PhantomSpec& spec, Tracer variant, ItemStream stream,
                     std::size_t index) {
    Sinogram s = radon(make_phantom(spec, variant, geometry.image_size), geometry.n_angles,
                       geometry.n_bins);
    if (dose > 0.0) {
      const auto variant_tag = variant == Tracer::A ? 0ULL : 1ULL;
      const std::uint64_t seed =
          subseed(master_seed, static_cast<std::uint64_t>(ItemStream::Noise),
                  (static_cast<std::uint64_t>(stream) << 40) ^ (variant_tag << 39) ^ index);
      s = add_counting_noise(s, dose, seed);
    }
    return s;
  };

  auto make_pairs = [&](std::size_t n, ItemStream stream, bool shifted) {
    std::vector<PairedItem> items;
    items.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      PairedItem it;
      it.spec = random_phantom_spec(
          subseed(master_seed, static_cast<std::uint64_t>(stream), i), shifted);
      it.a = project(it.spec, Tracer::A, stream, i);
      it.b = project(it.spec, Tracer::B, stream, i);
      items.push_back(std::move(it));
    }
    return items;
  };

  ds.paired = make_pairs(n_paired, ItemStream::Paired, false);
  ds.test = make_pairs(n_test, ItemStream::Test, true);
  ds.unpaired.reserve(n_unpaired);
  for (std::size_t i = 0; i < n_unpaired; ++i) {
    UnpairedItem it;
    it.spec =
        random_phantom_spec(subseed(master_seed, static_cast<std::uint64_t>(ItemStream::Unpaired), i));
    it.b = project(it.spec, Tracer::B, ItemStream::Unpaired, i);
    ds.unpaired.push_back(std::move(it));
  }

  double peak = 0.0;
  auto track = [&](const Sinogram& s) { peak = std::max(peak, max_value(s.bins)); };
  for (const auto& p : ds.paired) { track(p.a); track(p.b); }
  for (const auto& p : ds.test) { track(p.a); track(p.b); }
  for (const auto& u : ds.unpaired) track(u.b);
  ds.global_scale = peak > 0.0 ? peak : 1.0;

  auto normalize = [&](Sinogram& s) {
    for (double& v : s.bins.data) v /= ds.global_scale;
  };
  for (auto& p : ds.paired) { normalize(p.a); normalize(p.b); }
  for (auto& p : ds.test) { normalize(p.a); normalize(p.b); }
  for (auto& u : ds.unpaired) normalize(u.b);
  return ds;
}

}  // namespace pjdm
