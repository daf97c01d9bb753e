#pragma once

#include <limits>
#include <string>
#include <vector>

#include "pjdm/field.hpp"
#include "pjdm/phantom.hpp"

namespace pjdm {

enum class PsnrConvention {
  StandardRmse,  // 20 log10(max(ref) / RMSE)
  Literal,       // 20 log10(max(I) / ||I - ref||_2), no 1/sqrt(n)
};

/// "standard_rmse" / "literal"
std::string to_string(PsnrConvention c);
PsnrConvention parse_psnr_convention(const std::string& name);

struct MetricsConfig {
  double k1 = 0.01;
  double k2 = 0.03;
  /// Dynamic range L for the SSIM constants; <= 0 means max - min of the reference.
  double dynamic_range = 0.0;
  PsnrConvention psnr_convention = PsnrConvention::StandardRmse;

  void validate() const;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Returns +inf for identical inputs.
double psnr(const Field& I, const Field& ref, const MetricsConfig& cfg = {});
/// Global-statistics SSIM with population variances.
double ssim(const Field& I, const Field& ref, const MetricsConfig& cfg = {});
/// RMSE divided by the reference range.
double nrmse(const Field& I, const Field& ref);

/// Segment from (x0, y0) to (x1, y1) in pixel coordinates (x = column,
/// y = row, pixel centers at integers) sampled at `samples` points.
struct ProfileLine {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;
  int samples = 2;
};

/// Endpoint-inclusive bilinear samples.
std::vector<double> profile_line(const Field& image, const ProfileLine& line);

struct MetricsRow {
  std::string item;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double nrmse = 0.0;
  std::string domain;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;  // per item, grouped by domain
  std::vector<MetricsRow> means; // one per domain; item = "mean"
  std::size_t psnr_inf_count = 0;
};

/// Per-item metrics in the sinogram domain and, if `image_size` > 0, also on
/// FBP reconstructions of both sides. The PSNR mean skips +inf entries and is
/// +inf only when every item is.
MetricsReport evaluate(const std::vector<Sinogram>& outputs, const std::vector<Sinogram>& refs,
                       const MetricsConfig& cfg = {}, std::size_t image_size = 0,
                       const std::vector<std::string>& names = {});

/// `inf` for infinities, otherwise %.10g.
std::string format_metric(double v);

/// CSV with header `item,psnr_db,ssim,nrmse,domain`; item rows then mean rows.
std::string report_csv(const MetricsReport& report);

}  // namespace pjdm
