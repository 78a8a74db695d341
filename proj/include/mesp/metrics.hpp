#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mesp/tensor.hpp"

namespace mesp {

// Pixel-mean averages over every element; frame-sum sums each frame's pixels
// and averages over frames.
struct ErrorMetrics {
  double mse_pixel_mean = 0.0;
  double mse_frame_sum = 0.0;
  double mae_pixel_mean = 0.0;
  double mae_frame_sum = 0.0;
};

// y and y_hat are (T, C, H, W).
ErrorMetrics error_metrics(const Tensor& y, const Tensor& y_hat);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

// Normalized 1-D Gaussian taps of the given length (sigma 1.5).
std::vector<double> ssim_gaussian(int length);

// SSIM of one (H, W) plane: mean of the SSIM map over the valid region of an
// 11x11 Gaussian window. Planes smaller than the window use the centrally
// cropped (renormalized) window of matching extent.
double ssim_plane(const float* y, const float* y_hat, std::int64_t height, std::int64_t width,
                  double data_range);

// Averaged over channels within each frame, then over frames.
double ssim(const Tensor& y, const Tensor& y_hat, double data_range = 1.0);

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t tn = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  std::int64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp, tn += o.tn, fp += o.fp, fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

// value >= threshold counts as positive; y is the ground truth.
ConfusionCounts confusion_at_threshold(const Tensor& y_raw, const Tensor& y_hat_raw,
                                       double threshold);

struct SkillScores {
  double hss = 0.0;
  double csi = 0.0;
  // Set when the denominator vanished and the score was defined as 0.
  bool hss_degenerate = false;
  bool csi_degenerate = false;
};

SkillScores skill_scores(const ConfusionCounts& c);

inline const std::vector<double> kDefaultThresholds{5.0, 20.0, 40.0};

struct ThresholdScores {
  double threshold = 0.0;
  ConfusionCounts counts;  // summed over samples
  double hss = 0.0;        // mean over samples
  double csi = 0.0;
  std::int64_t degenerate = 0;  // samples whose HSS or CSI denominator vanished
};

struct MetricReport {
  std::int64_t samples = 0;
  ErrorMetrics errors;  // mean over samples
  double ssim = 0.0;
  std::vector<ThresholdScores> thresholds;
  double hss_avg = 0.0;
  double csi_avg = 0.0;
};

// y and y_hat are normalized (N, T, C, H, W) batches. Error metrics and SSIM
// use the normalized values; skill scores binarize denormalize(x, lo, hi).
// Skill scores are computed per sample at each threshold, averaged over
// samples, and the threshold means form hss_avg / csi_avg.
MetricReport evaluate(const Tensor& y, const Tensor& y_hat, float lo, float hi,
                      const std::vector<double>& thresholds = kDefaultThresholds,
                      double data_range = 1.0);

// key=value lines.
std::string format_report(const MetricReport& report);

// |y - y_hat| elementwise.
Tensor abs_error(const Tensor& y, const Tensor& y_hat);

}  // namespace mesp
