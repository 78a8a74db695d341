#include "mesp/nn_ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <vector>

#include "mesp/error.hpp"
#include "mesp/parallel.hpp"

namespace mesp {

namespace {

using MatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapD = Eigen::Map<MatrixD>;
using ConstMapD = Eigen::Map<const MatrixD>;

// Geometry shared by the forward and backward convolution passes.
struct ConvGeometry {
  std::int64_t n, cin, h, w;
  std::int64_t cout, kh, kw;
  std::int64_t oh, ow;
  std::int64_t groups, cin_g, cout_g;
  std::int64_t sh, sw, ph, pw, dh, dw;

  std::int64_t patch() const { return cin_g * kh * kw; }
  std::int64_t positions() const { return oh * ow; }
};

ConvGeometry make_geometry(const Shape& input, const Shape& weight, const Conv2dOptions& o) {
  const Shape out = conv2d_output_shape(input, weight, o);
  ConvGeometry g{};
  g.n = input[0];
  g.cin = input[1];
  g.h = input[2];
  g.w = input[3];
  g.cout = weight[0];
  g.kh = weight[2];
  g.kw = weight[3];
  g.oh = out[2];
  g.ow = out[3];
  g.groups = o.groups;
  g.cin_g = g.cin / g.groups;
  g.cout_g = g.cout / g.groups;
  g.sh = o.stride[0];
  g.sw = o.stride[1];
  g.ph = o.padding[0];
  g.pw = o.padding[1];
  g.dh = o.dilation[0];
  g.dw = o.dilation[1];
  return g;
}

// col is (cin_g*kh*kw) x (oh*ow), row-major.
void im2col(const ConvGeometry& g, const float* image, std::int64_t group, double* col) {
  const std::int64_t p = g.positions();
  for (std::int64_t c = 0; c < g.cin_g; ++c) {
    const float* plane = image + (group * g.cin_g + c) * g.h * g.w;
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::int64_t oi = 0; oi < g.oh; ++oi) {
          const std::int64_t ii = oi * g.sh - g.ph + ki * g.dh;
          double* dst = row + oi * g.ow;
          if (ii < 0 || ii >= g.h) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const float* src = plane + ii * g.w;
          for (std::int64_t oj = 0; oj < g.ow; ++oj) {
            const std::int64_t jj = oj * g.sw - g.pw + kj * g.dw;
            dst[oj] = (jj < 0 || jj >= g.w) ? 0.0 : static_cast<double>(src[jj]);
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, std::int64_t group, double* image) {
  const std::int64_t p = g.positions();
  for (std::int64_t c = 0; c < g.cin_g; ++c) {
    double* plane = image + (group * g.cin_g + c) * g.h * g.w;
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::int64_t oi = 0; oi < g.oh; ++oi) {
          const std::int64_t ii = oi * g.sh - g.ph + ki * g.dh;
          if (ii < 0 || ii >= g.h) continue;
          const double* src = row + oi * g.ow;
          double* dst = plane + ii * g.w;
          for (std::int64_t oj = 0; oj < g.ow; ++oj) {
            const std::int64_t jj = oj * g.sw - g.pw + kj * g.dw;
            if (jj >= 0 && jj < g.w) dst[jj] += src[oj];
          }
        }
      }
    }
  }
}

std::vector<double> to_double(const Tensor& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

struct ConvGrads {
  Tensor input, weight, bias;
};

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weight, bool has_bias,
                          const Conv2dOptions& options, const Tensor& grad_out,
                          bool need_input, bool need_weight) {
  const ConvGeometry g = make_geometry(input.shape(), weight.shape(), options);
  const std::int64_t kc = g.patch();
  const std::int64_t p = g.positions();
  const std::vector<double> wd = to_double(weight);
  ConvGrads grads;

  if (need_input) {
    grads.input = Tensor(input.shape());
    parallel_for(g.n, [&](std::int64_t n) {
      std::vector<double> image(static_cast<std::size_t>(g.cin * g.h * g.w), 0.0);
      std::vector<double> col(static_cast<std::size_t>(kc * p));
      std::vector<double> go(static_cast<std::size_t>(g.cout_g * p));
      for (std::int64_t grp = 0; grp < g.groups; ++grp) {
        const float* src = grad_out.ptr() + (n * g.cout + grp * g.cout_g) * p;
        for (std::int64_t i = 0; i < g.cout_g * p; ++i) go[static_cast<std::size_t>(i)] = src[i];
        ConstMapD w_g(wd.data() + grp * g.cout_g * kc, g.cout_g, kc);
        ConstMapD go_g(go.data(), g.cout_g, p);
        MapD col_g(col.data(), kc, p);
        col_g.noalias() = w_g.transpose() * go_g;
        col2im_add(g, col.data(), grp, image.data());
      }
      float* dst = grads.input.ptr() + n * g.cin * g.h * g.w;
      for (std::size_t i = 0; i < image.size(); ++i) dst[i] = static_cast<float>(image[i]);
    });
  }

  if (need_weight) {
    std::vector<double> gw(static_cast<std::size_t>(g.cout * kc), 0.0);
    std::vector<double> col(static_cast<std::size_t>(kc * p));
    std::vector<double> go(static_cast<std::size_t>(g.cout_g * p));
    for (std::int64_t n = 0; n < g.n; ++n) {
      const float* image = input.ptr() + n * g.cin * g.h * g.w;
      for (std::int64_t grp = 0; grp < g.groups; ++grp) {
        im2col(g, image, grp, col.data());
        const float* src = grad_out.ptr() + (n * g.cout + grp * g.cout_g) * p;
        for (std::int64_t i = 0; i < g.cout_g * p; ++i) go[static_cast<std::size_t>(i)] = src[i];
        MapD gw_g(gw.data() + grp * g.cout_g * kc, g.cout_g, kc);
        gw_g.noalias() += ConstMapD(go.data(), g.cout_g, p) *
                          ConstMapD(col.data(), kc, p).transpose();
      }
    }
    grads.weight = Tensor(weight.shape());
    for (std::size_t i = 0; i < gw.size(); ++i) grads.weight[static_cast<std::int64_t>(i)] = static_cast<float>(gw[i]);
  }

  if (has_bias) {
    grads.bias = Tensor({g.cout});
    for (std::int64_t co = 0; co < g.cout; ++co) {
      double acc = 0.0;
      for (std::int64_t n = 0; n < g.n; ++n) {
        const float* src = grad_out.ptr() + (n * g.cout + co) * p;
        for (std::int64_t i = 0; i < p; ++i) acc += src[i];
      }
      grads.bias[co] = static_cast<float>(acc);
    }
  }
  return grads;
}

}  // namespace

std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                std::int64_t padding, std::int64_t dilation) {
  if (kernel < 1 || stride < 1 || dilation < 1 || padding < 0) {
    fail(ErrorKind::kInvalidArgument, "conv kernel/stride/dilation must be >= 1, padding >= 0");
  }
  const std::int64_t span = in + 2 * padding - dilation * (kernel - 1) - 1;
  if (span < 0) {
    fail(ErrorKind::kInvalidShape, "conv output extent would be < 1 (input " +
                                       std::to_string(in) + ", kernel " +
                                       std::to_string(kernel) + ")");
  }
  return span / stride + 1;
}

Shape conv2d_output_shape(const Shape& input, const Shape& weight, const Conv2dOptions& o) {
  if (input.size() != 4 || weight.size() != 4) {
    fail(ErrorKind::kInvalidShape, "conv2d expects 4-axis input and weight, got " +
                                       shape_to_string(input) + " and " +
                                       shape_to_string(weight));
  }
  if (o.groups < 1 || input[1] % o.groups != 0 || weight[0] % o.groups != 0) {
    fail(ErrorKind::kInvalidShape, "conv2d channels " + std::to_string(input[1]) + "->" +
                                       std::to_string(weight[0]) +
                                       " not divisible by groups " + std::to_string(o.groups));
  }
  if (weight[1] != input[1] / o.groups) {
    fail(ErrorKind::kInvalidShape, "conv2d weight " + shape_to_string(weight) +
                                       " does not match input channels " +
                                       std::to_string(input[1]) + " with groups " +
                                       std::to_string(o.groups));
  }
  return {input[0], weight[0],
          conv_output_extent(input[2], weight[2], o.stride[0], o.padding[0], o.dilation[0]),
          conv_output_extent(input[3], weight[3], o.stride[1], o.padding[1], o.dilation[1])};
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              const Conv2dOptions& options) {
  const ConvGeometry g = make_geometry(input.shape(), weight.shape(), options);
  if (bias != nullptr && bias->shape() != Shape{g.cout}) {
    fail(ErrorKind::kInvalidShape, "conv2d bias shape " + shape_to_string(bias->shape()) +
                                       " does not match Cout " + std::to_string(g.cout));
  }
  const std::int64_t kc = g.patch();
  const std::int64_t p = g.positions();
  const std::vector<double> wd = to_double(weight);
  Tensor out({g.n, g.cout, g.oh, g.ow});

  parallel_for(g.n, [&](std::int64_t n) {
    std::vector<double> col(static_cast<std::size_t>(kc * p));
    std::vector<double> acc(static_cast<std::size_t>(g.cout_g * p));
    const float* image = input.ptr() + n * g.cin * g.h * g.w;
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      im2col(g, image, grp, col.data());
      MapD acc_g(acc.data(), g.cout_g, p);
      acc_g.noalias() = ConstMapD(wd.data() + grp * g.cout_g * kc, g.cout_g, kc) *
                        ConstMapD(col.data(), kc, p);
      for (std::int64_t co = 0; co < g.cout_g; ++co) {
        const std::int64_t channel = grp * g.cout_g + co;
        const double b = bias != nullptr ? static_cast<double>((*bias)[channel]) : 0.0;
        float* dst = out.ptr() + (n * g.cout + channel) * p;
        const double* src = acc.data() + co * p;
        for (std::int64_t i = 0; i < p; ++i) dst[i] = static_cast<float>(src[i] + b);
      }
    }
  });
  return out;
}

Var conv2d(Var input, Var weight, std::optional<Var> bias, const Conv2dOptions& options) {
  Tensor out = conv2d(input.value(), weight.value(), bias ? &bias->value() : nullptr, options);
  Tape& tape = *input.tape;
  std::vector<Var> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record(
      std::move(out), std::span<const Var>(inputs),
      [input, weight, bias, options](Tape& t, const Tensor& g) {
        ConvGrads grads = conv2d_backward(input.value(), weight.value(), bias.has_value(),
                                          options, g, t.requires_grad(input),
                                          t.requires_grad(weight));
        if (!grads.input.empty()) t.accumulate(input, std::move(grads.input));
        if (!grads.weight.empty()) t.accumulate(weight, std::move(grads.weight));
        if (bias) t.accumulate(*bias, std::move(grads.bias));
      });
}

Tensor pixel_shuffle(const Tensor& input, std::int64_t r) {
  if (input.rank() != 4) fail(ErrorKind::kInvalidShape, "pixel_shuffle expects (N,C,H,W)");
  if (r < 1) fail(ErrorKind::kInvalidArgument, "pixel_shuffle factor must be >= 1");
  const std::int64_t n = input.dim(0), cr = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (cr % (r * r) != 0) {
    fail(ErrorKind::kInvalidShape, "pixel_shuffle channels " + std::to_string(cr) +
                                       " not divisible by " + std::to_string(r * r));
  }
  const std::int64_t c = cr / (r * r);
  Tensor out({n, c, h * r, w * r});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < h * r; ++i)
        for (std::int64_t j = 0; j < w * r; ++j) {
          const std::int64_t src_c = ch * r * r + (i % r) * r + (j % r);
          out[((b * c + ch) * h * r + i) * w * r + j] =
              input[((b * cr + src_c) * h + i / r) * w + j / r];
        }
  return out;
}

Tensor pixel_unshuffle(const Tensor& input, std::int64_t r) {
  if (input.rank() != 4) fail(ErrorKind::kInvalidShape, "pixel_unshuffle expects (N,C,H,W)");
  if (r < 1) fail(ErrorKind::kInvalidArgument, "pixel_unshuffle factor must be >= 1");
  const std::int64_t n = input.dim(0), c = input.dim(1), hr = input.dim(2), wr = input.dim(3);
  if (hr % r != 0 || wr % r != 0) {
    fail(ErrorKind::kInvalidShape, "pixel_unshuffle extent not divisible by factor");
  }
  const std::int64_t h = hr / r, w = wr / r, cr = c * r * r;
  Tensor out({n, cr, h, w});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < hr; ++i)
        for (std::int64_t j = 0; j < wr; ++j) {
          const std::int64_t dst_c = ch * r * r + (i % r) * r + (j % r);
          out[((b * cr + dst_c) * h + i / r) * w + j / r] =
              input[((b * c + ch) * hr + i) * wr + j];
        }
  return out;
}

Var pixel_shuffle(Var input, std::int64_t r) {
  Tensor out = pixel_shuffle(input.value(), r);
  return input.tape->record(std::move(out), {input}, [input, r](Tape& t, const Tensor& g) {
    t.accumulate(input, pixel_unshuffle(g, r));
  });
}

namespace {

void check_norm_args(const Tensor& input, const Tensor& gamma, const Tensor& beta, float eps) {
  if (input.rank() != 4) fail(ErrorKind::kInvalidShape, "layer_norm expects (N,C,H,W)");
  const Shape channels{input.dim(1)};
  if (gamma.shape() != channels || beta.shape() != channels) {
    fail(ErrorKind::kInvalidShape, "layer_norm gamma/beta must have shape " +
                                       shape_to_string(channels));
  }
  if (!(eps > 0.0f)) fail(ErrorKind::kInvalidArgument, "layer_norm eps must be positive");
}

// Per-position statistics over the channel axis.
struct NormStats {
  std::vector<double> mean, rstd;
};

NormStats norm_stats(const Tensor& input, float eps) {
  const std::int64_t n = input.dim(0), c = input.dim(1), s = input.dim(2) * input.dim(3);
  NormStats st;
  st.mean.resize(static_cast<std::size_t>(n * s));
  st.rstd.resize(static_cast<std::size_t>(n * s));
  for (std::int64_t b = 0; b < n; ++b) {
    const float* base = input.ptr() + b * c * s;
    for (std::int64_t pos = 0; pos < s; ++pos) {
      double mu = 0.0;
      for (std::int64_t ch = 0; ch < c; ++ch) mu += base[ch * s + pos];
      mu /= static_cast<double>(c);
      double var = 0.0;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double d = base[ch * s + pos] - mu;
        var += d * d;
      }
      var /= static_cast<double>(c);
      st.mean[static_cast<std::size_t>(b * s + pos)] = mu;
      st.rstd[static_cast<std::size_t>(b * s + pos)] = 1.0 / std::sqrt(var + eps);
    }
  }
  return st;
}

}  // namespace

Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, float eps) {
  check_norm_args(input, gamma, beta, eps);
  const std::int64_t n = input.dim(0), c = input.dim(1), s = input.dim(2) * input.dim(3);
  const NormStats st = norm_stats(input, eps);
  Tensor out(input.shape());
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t pos = 0; pos < s; ++pos) {
        const auto k = static_cast<std::size_t>(b * s + pos);
        const std::int64_t i = (b * c + ch) * s + pos;
        const double xhat = (input[i] - st.mean[k]) * st.rstd[k];
        out[i] = static_cast<float>(gamma[ch] * xhat + beta[ch]);
      }
  return out;
}

Var layer_norm(Var input, Var gamma, Var beta, float eps) {
  Tensor out = layer_norm(input.value(), gamma.value(), beta.value(), eps);
  return input.tape->record(
      std::move(out), {input, gamma, beta}, [input, gamma, beta, eps](Tape& t, const Tensor& g) {
        const Tensor& x = input.value();
        const Tensor& gm = gamma.value();
        const std::int64_t n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
        const NormStats st = norm_stats(x, eps);
        Tensor dx(x.shape());
        std::vector<double> dgamma(static_cast<std::size_t>(c), 0.0);
        std::vector<double> dbeta(static_cast<std::size_t>(c), 0.0);
        for (std::int64_t b = 0; b < n; ++b) {
          for (std::int64_t pos = 0; pos < s; ++pos) {
            const auto k = static_cast<std::size_t>(b * s + pos);
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const std::int64_t i = (b * c + ch) * s + pos;
              const double xhat = (x[i] - st.mean[k]) * st.rstd[k];
              const double dxhat = static_cast<double>(g[i]) * gm[ch];
              mean_dxhat += dxhat;
              mean_dxhat_xhat += dxhat * xhat;
              dgamma[static_cast<std::size_t>(ch)] += g[i] * xhat;
              dbeta[static_cast<std::size_t>(ch)] += g[i];
            }
            mean_dxhat /= static_cast<double>(c);
            mean_dxhat_xhat /= static_cast<double>(c);
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const std::int64_t i = (b * c + ch) * s + pos;
              const double xhat = (x[i] - st.mean[k]) * st.rstd[k];
              const double dxhat = static_cast<double>(g[i]) * gm[ch];
              dx[i] = static_cast<float>(st.rstd[k] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat));
            }
          }
        }
        t.accumulate(input, std::move(dx));
        if (t.requires_grad(gamma)) {
          Tensor dg({c});
          for (std::int64_t ch = 0; ch < c; ++ch) dg[ch] = static_cast<float>(dgamma[static_cast<std::size_t>(ch)]);
          t.accumulate(gamma, std::move(dg));
        }
        if (t.requires_grad(beta)) {
          Tensor db({c});
          for (std::int64_t ch = 0; ch < c; ++ch) db[ch] = static_cast<float>(dbeta[static_cast<std::size_t>(ch)]);
          t.accumulate(beta, std::move(db));
        }
      });
}

namespace {

constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

double gelu_grad(double x) {
  const double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
  const double th = std::tanh(u);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

}  // namespace

float gelu(float x) {
  const double xd = x;
  return static_cast<float>(0.5 * xd * (1.0 + std::tanh(kSqrt2OverPi * (xd + kGeluCoeff * xd * xd * xd))));
}

Tensor gelu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::int64_t i = 0; i < input.numel(); ++i) out[i] = gelu(input[i]);
  return out;
}

Var gelu(Var input) {
  Tensor out = gelu(input.value());
  return input.tape->record(std::move(out), {input}, [input](Tape& t, const Tensor& g) {
    const Tensor& x = input.value();
    Tensor dx(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      dx[i] = static_cast<float>(g[i] * gelu_grad(x[i]));
    }
    t.accumulate(input, std::move(dx));
  });
}

}  // namespace mesp
