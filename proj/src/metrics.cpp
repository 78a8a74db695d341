#include "mesp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mesp/data.hpp"
#include "mesp/error.hpp"

namespace mesp {

ErrorMetrics error_metrics(const Tensor& y, const Tensor& y_hat) {
  check_same_shape(y, y_hat, "error_metrics");
  if (y.rank() != 4) {
    fail(ErrorKind::kInvalidShape, "error_metrics expects (T,C,H,W), got " +
                                       shape_to_string(y.shape()));
  }
  const std::int64_t frames = y.dim(0);
  double se = 0.0, ae = 0.0;
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    const double d = static_cast<double>(y[i]) - y_hat[i];
    se += d * d;
    ae += std::fabs(d);
  }
  ErrorMetrics m;
  m.mse_pixel_mean = se / static_cast<double>(y.numel());
  m.mae_pixel_mean = ae / static_cast<double>(y.numel());
  m.mse_frame_sum = se / static_cast<double>(frames);
  m.mae_frame_sum = ae / static_cast<double>(frames);
  return m;
}

std::vector<double> ssim_gaussian(int length) {
  if (length < 1) fail(ErrorKind::kInvalidArgument, "SSIM window length must be >= 1");
  std::vector<double> taps(static_cast<std::size_t>(length));
  const double center = (length - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < length; ++i) {
    const double d = i - center;
    taps[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    total += taps[static_cast<std::size_t>(i)];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

namespace {

// Valid-region separable filtering of a row-major plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::int64_t h, std::int64_t w,
                                 const std::vector<double>& taps_h,
                                 const std::vector<double>& taps_w) {
  const auto kh = static_cast<std::int64_t>(taps_h.size());
  const auto kw = static_cast<std::int64_t>(taps_w.size());
  const std::int64_t oh = h - kh + 1;
  const std::int64_t ow = w - kw + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * ow), 0.0);
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < kw; ++k) acc += taps_w[static_cast<std::size_t>(k)] * plane[static_cast<std::size_t>(i * w + j + k)];
      rows[static_cast<std::size_t>(i * ow + j)] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow), 0.0);
  for (std::int64_t i = 0; i < oh; ++i)
    for (std::int64_t j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < kh; ++k) acc += taps_h[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>((i + k) * ow + j)];
      out[static_cast<std::size_t>(i * ow + j)] = acc;
    }
  return out;
}

}  // namespace

double ssim_plane(const float* y, const float* y_hat, std::int64_t height, std::int64_t width,
                  double data_range) {
  if (height < 1 || width < 1) fail(ErrorKind::kInvalidShape, "SSIM plane extent must be >= 1");
  if (!(data_range > 0.0)) fail(ErrorKind::kInvalidArgument, "SSIM data range must be > 0");
  // Crop the window symmetrically so it keeps odd length and fits the plane.
  auto window_len = [](std::int64_t extent) {
    std::int64_t len = std::min<std::int64_t>(kSsimWindow, extent);
    if (len % 2 == 0) --len;
    return static_cast<int>(len);
  };
  const std::vector<double> taps_h = ssim_gaussian(window_len(height));
  const std::vector<double> taps_w = ssim_gaussian(window_len(width));

  const auto n = static_cast<std::size_t>(height * width);
  std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = y[i];
    b[i] = y_hat[i];
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, height, width, taps_h, taps_w);
  const auto mu_b = filter_valid(b, height, width, taps_h, taps_w);
  const auto e_aa = filter_valid(aa, height, width, taps_h, taps_w);
  const auto e_bb = filter_valid(bb, height, width, taps_h, taps_w);
  const auto e_ab = filter_valid(ab, height, width, taps_h, taps_w);

  const double c1 = (kSsimK1 * data_range) * (kSsimK1 * data_range);
  const double c2 = (kSsimK2 * data_range) * (kSsimK2 * data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
    const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
    total += num / den;
  }
  return total / static_cast<double>(mu_a.size());
}

double ssim(const Tensor& y, const Tensor& y_hat, double data_range) {
  check_same_shape(y, y_hat, "ssim");
  if (y.rank() != 4) {
    fail(ErrorKind::kInvalidShape, "ssim expects (T,C,H,W), got " + shape_to_string(y.shape()));
  }
  const std::int64_t t = y.dim(0), c = y.dim(1), h = y.dim(2), w = y.dim(3);
  double frames_total = 0.0;
  for (std::int64_t f = 0; f < t; ++f) {
    double channels_total = 0.0;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t offset = (f * c + ch) * h * w;
      channels_total += ssim_plane(y.ptr() + offset, y_hat.ptr() + offset, h, w, data_range);
    }
    frames_total += channels_total / static_cast<double>(c);
  }
  return frames_total / static_cast<double>(t);
}

ConfusionCounts confusion_at_threshold(const Tensor& y_raw, const Tensor& y_hat_raw,
                                       double threshold) {
  check_same_shape(y_raw, y_hat_raw, "confusion_at_threshold");
  ConfusionCounts c;
  for (std::int64_t i = 0; i < y_raw.numel(); ++i) {
    const bool truth = y_raw[i] >= threshold;
    const bool pred = y_hat_raw[i] >= threshold;
    if (truth && pred) {
      ++c.tp;
    } else if (!truth && !pred) {
      ++c.tn;
    } else if (pred) {
      ++c.fp;
    } else {
      ++c.fn;
    }
  }
  return c;
}

SkillScores skill_scores(const ConfusionCounts& c) {
  if (c.tp < 0 || c.tn < 0 || c.fp < 0 || c.fn < 0) {
    fail(ErrorKind::kInvalidArgument, "confusion counts must be non-negative");
  }
  SkillScores s;
  const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  const double hss_den = (tp + fn) * (fn + tn) + (tp + fp) * (fp + tn);
  if (hss_den == 0.0) {
    s.hss_degenerate = true;
  } else {
    s.hss = 2.0 * (tp * tn - fn * fp) / hss_den;
  }
  const double csi_den = tp + fn + fp;
  if (csi_den == 0.0) {
    s.csi_degenerate = true;
  } else {
    s.csi = tp / csi_den;
  }
  return s;
}

MetricReport evaluate(const Tensor& y, const Tensor& y_hat, float lo, float hi,
                      const std::vector<double>& thresholds, double data_range) {
  check_same_shape(y, y_hat, "evaluate");
  if (y.rank() != 5) {
    fail(ErrorKind::kInvalidShape, "evaluate expects (N,T,C,H,W), got " +
                                       shape_to_string(y.shape()));
  }
  MetricReport r;
  r.samples = y.dim(0);
  for (double th : thresholds) {
    ThresholdScores ts;
    ts.threshold = th;
    r.thresholds.push_back(ts);
  }
  const auto n = static_cast<double>(r.samples);
  for (std::int64_t s = 0; s < r.samples; ++s) {
    const Tensor ys = slice_rows(y, s, s + 1);
    const Tensor ps = slice_rows(y_hat, s, s + 1);
    const Shape sample_shape(y.shape().begin() + 1, y.shape().end());
    const Tensor y4 = reshape(ys, sample_shape);
    const Tensor p4 = reshape(ps, sample_shape);

    const ErrorMetrics e = error_metrics(y4, p4);
    r.errors.mse_pixel_mean += e.mse_pixel_mean / n;
    r.errors.mse_frame_sum += e.mse_frame_sum / n;
    r.errors.mae_pixel_mean += e.mae_pixel_mean / n;
    r.errors.mae_frame_sum += e.mae_frame_sum / n;
    r.ssim += ssim(y4, p4, data_range) / n;

    const Tensor y_raw = denormalize(y4, lo, hi);
    const Tensor p_raw = denormalize(p4, lo, hi);
    for (auto& ts : r.thresholds) {
      const ConfusionCounts c = confusion_at_threshold(y_raw, p_raw, ts.threshold);
      const SkillScores sk = skill_scores(c);
      ts.counts += c;
      ts.hss += sk.hss / n;
      ts.csi += sk.csi / n;
      if (sk.hss_degenerate || sk.csi_degenerate) ++ts.degenerate;
    }
  }
  for (const auto& ts : r.thresholds) {
    r.hss_avg += ts.hss / static_cast<double>(r.thresholds.size());
    r.csi_avg += ts.csi / static_cast<double>(r.thresholds.size());
  }
  return r;
}

std::string format_report(const MetricReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "# skill scores: per-sample values averaged over samples, then over thresholds\n";
  os << "samples=" << r.samples << "\n";
  os << "mse_frame_sum=" << r.errors.mse_frame_sum << "\n";
  os << "mse_pixel_mean=" << r.errors.mse_pixel_mean << "\n";
  os << "mae_frame_sum=" << r.errors.mae_frame_sum << "\n";
  os << "mae_pixel_mean=" << r.errors.mae_pixel_mean << "\n";
  os << "ssim=" << r.ssim << "\n";
  os << "hss_avg=" << r.hss_avg << "\n";
  os << "csi_avg=" << r.csi_avg << "\n";
  for (const auto& ts : r.thresholds) {
    std::ostringstream tag;
    tag << "_t" << ts.threshold;
    const std::string t = tag.str();
    os << "hss" << t << "=" << ts.hss << "\n";
    os << "csi" << t << "=" << ts.csi << "\n";
    os << "tp" << t << "=" << ts.counts.tp << "\n";
    os << "tn" << t << "=" << ts.counts.tn << "\n";
    os << "fp" << t << "=" << ts.counts.fp << "\n";
    os << "fn" << t << "=" << ts.counts.fn << "\n";
    os << "degenerate" << t << "=" << ts.degenerate << "\n";
  }
  return os.str();
}

Tensor abs_error(const Tensor& y, const Tensor& y_hat) {
  check_same_shape(y, y_hat, "abs_error");
  Tensor out(y.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) out[i] = std::fabs(y[i] - y_hat[i]);
  return out;
}

}  // namespace mesp
