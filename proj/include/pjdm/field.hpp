#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pjdm {

/// Raised when an iterate, loss or gradient leaves the finite range.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major 2-D array of doubles. Diffusion states live in this type
/// because, unlike Sinogram, they may go negative mid-trajectory.
struct Field {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Field() = default;
  Field(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Field(std::size_t r, std::size_t c, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool same_shape(const Field& o) const { return rows == o.rows && cols == o.cols; }

  bool operator==(const Field& o) const = default;
};

void require_same_shape(const Field& a, const Field& b, std::string_view what);

Field operator+(const Field& a, const Field& b);
Field operator-(const Field& a, const Field& b);
Field operator*(double s, const Field& a);
Field& operator+=(Field& a, const Field& b);

/// y += s * x
void axpy(double s, const Field& x, Field& y);

bool all_finite(const Field& f);
double max_abs(const Field& f);
double mean(const Field& f);
double min_value(const Field& f);
double max_value(const Field& f);
Field clamp_nonnegative(Field f);

/// 2-D nonnegative image; rows = height, cols = width.
struct ImageGrid {
  Field pixels;

  ImageGrid() = default;
  explicit ImageGrid(Field f) : pixels(std::move(f)) {}
  ImageGrid(std::size_t width, std::size_t height, std::vector<double> values)
      : pixels(height, width, std::move(values)) {}

  std::size_t width() const { return pixels.cols; }
  std::size_t height() const { return pixels.rows; }
  const std::vector<double>& values() const { return pixels.data; }

  /// Throws std::invalid_argument unless every value is finite and >= 0.
  void validate() const;
};

/// n_angles x n_bins projection array, angle-major.
struct Sinogram {
  Field bins;

  Sinogram() = default;
  explicit Sinogram(Field f) : bins(std::move(f)) {}
  Sinogram(std::size_t n_angles, std::size_t n_bins, std::vector<double> values)
      : bins(n_angles, n_bins, std::move(values)) {}

  std::size_t n_angles() const { return bins.rows; }
  std::size_t n_bins() const { return bins.cols; }
  const std::vector<double>& values() const { return bins.data; }

  void validate() const;

  bool operator==(const Sinogram& o) const = default;
};

}  // namespace pjdm
