#include "pjdm/field.hpp"

#include <algorithm>
#include <cmath>

namespace pjdm {

Field::Field(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != rows * cols) {
    throw std::invalid_argument("field: value count " + std::to_string(data.size()) +
                                " does not match " + std::to_string(rows) + "x" +
                                std::to_string(cols));
  }
}

void require_same_shape(const Field& a, const Field& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch (" +
                                std::to_string(a.rows) + "x" + std::to_string(a.cols) + " vs " +
                                std::to_string(b.rows) + "x" + std::to_string(b.cols) + ")");
  }
}

Field operator+(const Field& a, const Field& b) {
  require_same_shape(a, b, "add");
  Field out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

Field operator-(const Field& a, const Field& b) {
  require_same_shape(a, b, "subtract");
  Field out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

Field operator*(double s, const Field& a) {
  Field out = a;
  for (double& v : out.data) v *= s;
  return out;
}

Field& operator+=(Field& a, const Field& b) {
  require_same_shape(a, b, "add");
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
  return a;
}

void axpy(double s, const Field& x, Field& y) {
  require_same_shape(x, y, "axpy");
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += s * x.data[i];
}

bool all_finite(const Field& f) {
  return std::all_of(f.data.begin(), f.data.end(), [](double v) { return std::isfinite(v); });
}

double max_abs(const Field& f) {
  double m = 0.0;
  for (double v : f.data) m = std::max(m, std::abs(v));
  return m;
}

double mean(const Field& f) {
  if (f.data.empty()) return 0.0;
  double s = 0.0;
  for (double v : f.data) s += v;
  return s / static_cast<double>(f.data.size());
}

double min_value(const Field& f) {
  return f.data.empty() ? 0.0 : *std::min_element(f.data.begin(), f.data.end());
}

double max_value(const Field& f) {
  return f.data.empty() ? 0.0 : *std::max_element(f.data.begin(), f.data.end());
}

Field clamp_nonnegative(Field f) {
  for (double& v : f.data) v = std::max(v, 0.0);
  return f;
}

namespace {
void validate_nonnegative(const Field& f, const char* what) {
  if (f.data.size() != f.rows * f.cols) {
    throw std::invalid_argument(std::string(what) + ": value count does not match shape");
  }
  for (double v : f.data) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument(std::string(what) + ": values must be finite and >= 0");
    }
  }
}
}  // namespace

void ImageGrid::validate() const { validate_nonnegative(pixels, "image"); }
void Sinogram::validate() const { validate_nonnegative(bins, "sinogram"); }

}  // namespace pjdm
