#pragma once

#include <cstdint>
#include <vector>

#include "pjdm/field.hpp"

namespace pjdm {

/// Ellipse in unit-square coordinates: center (cx, cy), semi-axes (ax, ay)
/// along its own frame rotated by `angle` radians.
struct Ellipse {
  double cx = 0.5;
  double cy = 0.5;
  double ax = 0.1;
  double ay = 0.1;
  double angle = 0.0;
  double intensity = 1.0;
};

struct PhantomSpec {
  std::vector<Ellipse> ellipses;
  std::vector<std::size_t> tracer_b_regions;  // indices into `ellipses`
  double tracer_b_gain = 1.0;
  double background_damp = 1.0;

  void validate() const;
  /// Upper bound on any pixel of either variant; both variants divide by it.
  double shared_scale() const;
};

enum class Tracer { A, B };

ImageGrid make_phantom(const PhantomSpec& spec, Tracer variant, std::size_t size);

/// Parallel-beam projection: angle k is k*pi/n_angles, bins span the
/// inscribed-circle diameter, rays are sampled every <= 0.5 px with bilinear
/// interpolation and weighted by the step length.
Sinogram radon(const ImageGrid& image, std::size_t n_angles, std::size_t n_bins);

/// Ram-Lak filtered back-projection onto an image_size^2 grid, clamped at 0.
ImageGrid fbp(const Sinogram& sino, std::size_t image_size);

/// Poisson resampling at `dose` expected total counts.
Sinogram add_counting_noise(const Sinogram& sino, double dose, std::uint64_t seed);

struct Geometry {
  std::size_t n_angles = 60;
  std::size_t n_bins = 64;
  std::size_t image_size = 64;

  bool operator==(const Geometry&) const = default;
};

struct PairedItem {
  PhantomSpec spec;
  Sinogram a;
  Sinogram b;
};

struct UnpairedItem {
  PhantomSpec spec;
  Sinogram b;
};

/// Paired and unpaired sinograms normalized by one global scale. `test` is a
/// held-out paired split drawn from a shifted phantom distribution.
struct Dataset {
  std::vector<PairedItem> paired;
  std::vector<UnpairedItem> unpaired;
  std::vector<PairedItem> test;
  Geometry geometry;
  std::uint64_t master_seed = 0;
  double global_scale = 1.0;
  double dose = 0.0;
};

/// Random head-like phantom: an outline, a few cortical hot spots and two
/// striatum ellipses that make up the tracer-B regions.
PhantomSpec random_phantom_spec(std::uint64_t seed, bool shifted = false);

enum class ItemStream : std::uint64_t { Paired = 1, Unpaired = 2, Test = 3, Noise = 4 };

Dataset gen_dataset(std::size_t n_paired, std::size_t n_unpaired, const Geometry& geometry,
                    std::uint64_t master_seed, std::size_t n_test = 0, double dose = 0.0);

}  // namespace pjdm
