#include "mesp/reference.hpp"

#include <cmath>

#include "mesp/error.hpp"

namespace mesp {

namespace {

// Row-major (n, c, h, w) activation.
struct Act {
  std::int64_t n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Act() = default;
  Act(std::int64_t n_, std::int64_t c_, std::int64_t h_, std::int64_t w_)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_ * c_ * h_ * w_), 0.0) {}
  double& at(std::int64_t a, std::int64_t b, std::int64_t i, std::int64_t j) {
    return v[static_cast<std::size_t>(((a * c + b) * h + i) * w + j)];
  }
  double at(std::int64_t a, std::int64_t b, std::int64_t i, std::int64_t j) const {
    return v[static_cast<std::size_t>(((a * c + b) * h + i) * w + j)];
  }
};

class Reference {
 public:
  Reference(const ModelConfig& config, const ReferenceParams& params)
      : config_(config), params_(params) {
    for (LayerSpec& s : layer_plan(config)) layers_.emplace(s.name, std::move(s));
  }

  const std::vector<double>& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail(ErrorKind::kInvalidArgument, "reference: missing " + name);
    return it->second;
  }

  Act conv(const std::string& name, const Act& x) const {
    const LayerSpec& s = layers_.at(name);
    const auto& wt = param(name + ".weight");
    const auto& bias = param(name + ".bias");
    const auto& o = s.options;
    const std::int64_t oh = (x.h + 2 * o.padding[0] - o.dilation[0] * (s.kernel_h - 1) - 1) / o.stride[0] + 1;
    const std::int64_t ow = (x.w + 2 * o.padding[1] - o.dilation[1] * (s.kernel_w - 1) - 1) / o.stride[1] + 1;
    const std::int64_t cin_g = s.in_channels / o.groups;
    const std::int64_t cout_g = s.out_channels / o.groups;
    Act y(x.n, s.out_channels, oh, ow);
    for (std::int64_t n = 0; n < x.n; ++n)
      for (std::int64_t co = 0; co < s.out_channels; ++co) {
        const std::int64_t g = co / cout_g;
        for (std::int64_t i = 0; i < oh; ++i)
          for (std::int64_t j = 0; j < ow; ++j) {
            double acc = bias[static_cast<std::size_t>(co)];
            for (std::int64_t ci = 0; ci < cin_g; ++ci)
              for (std::int64_t ki = 0; ki < s.kernel_h; ++ki) {
                const std::int64_t r = i * o.stride[0] - o.padding[0] + ki * o.dilation[0];
                if (r < 0 || r >= x.h) continue;
                for (std::int64_t kj = 0; kj < s.kernel_w; ++kj) {
                  const std::int64_t q = j * o.stride[1] - o.padding[1] + kj * o.dilation[1];
                  if (q < 0 || q >= x.w) continue;
                  acc += wt[static_cast<std::size_t>(((co * cin_g + ci) * s.kernel_h + ki) * s.kernel_w + kj)] *
                         x.at(n, g * cin_g + ci, r, q);
                }
              }
            y.at(n, co, i, j) = acc;
          }
      }
    return y;
  }

  Act norm(const std::string& name, const Act& x) const {
    const auto& gamma = param(name + ".gamma");
    const auto& beta = param(name + ".beta");
    Act y = x;
    for (std::int64_t n = 0; n < x.n; ++n)
      for (std::int64_t i = 0; i < x.h; ++i)
        for (std::int64_t j = 0; j < x.w; ++j) {
          double mean = 0.0;
          for (std::int64_t c = 0; c < x.c; ++c) mean += x.at(n, c, i, j);
          mean /= static_cast<double>(x.c);
          double var = 0.0;
          for (std::int64_t c = 0; c < x.c; ++c) var += (x.at(n, c, i, j) - mean) * (x.at(n, c, i, j) - mean);
          var /= static_cast<double>(x.c);
          const double inv = 1.0 / std::sqrt(var + static_cast<double>(kLayerNormEps));
          for (std::int64_t c = 0; c < x.c; ++c) {
            y.at(n, c, i, j) = (x.at(n, c, i, j) - mean) * inv * gamma[static_cast<std::size_t>(c)] +
                               beta[static_cast<std::size_t>(c)];
          }
        }
    return y;
  }

  static Act gelu(Act x) {
    for (double& e : x.v) {
      e = 0.5 * e * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (e + 0.044715 * e * e * e)));
    }
    return x;
  }

  static Act add(Act a, const Act& b) {
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
    return a;
  }

  Act gated(const std::string& prefix, const Act& x, bool temporal, std::int64_t block) const {
    const Act xa = norm(prefix + "norm", x);
    const Act attn = conv(prefix + "attn", xa);
    Act value = gelu(conv(prefix + "value", xa));
    if (temporal) {
      for (std::size_t i = 0; i < config_.dilations.size(); ++i) {
        value = conv("blocks." + std::to_string(block) + ".sta.dwd." + std::to_string(i), value);
      }
    } else {
      value = conv(prefix + "dw", value);
    }
    for (std::size_t i = 0; i < value.v.size(); ++i) value.v[i] *= attn.v[i];
    return add(conv(prefix + "proj", value), x);
  }

  Act run(const std::vector<double>& input, std::int64_t batch) const {
    const ModelConfig& c = config_;
    const std::int64_t t = c.in_time, d = c.embed_dim, p = c.patch_size;
    const std::int64_t gh = c.grid_height(), gw = c.grid_width();
    Act x(batch * t, c.in_channels, c.height, c.width);
    if (input.size() != x.v.size()) fail(ErrorKind::kInvalidShape, "reference: input size mismatch");
    x.v = input;

    Act y = gelu(conv("embed.conv1", x));
    y = gelu(conv("embed.conv2", y));
    y = conv("embed.conv3", y);

    for (std::int64_t blk = 0; blk < c.n_block; ++blk) {
      const std::string base = "blocks." + std::to_string(blk) + ".";
      y = gated(base + "sa.", y, false, blk);

      // (B*T, D, h, w) -> (B, D, T, h*w) and back.
      Act st(batch, d, t, gh * gw);
      for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t ti = 0; ti < t; ++ti)
          for (std::int64_t ch = 0; ch < d; ++ch)
            for (std::int64_t s = 0; s < gh * gw; ++s)
              st.at(b, ch, ti, s) = y.at(b * t + ti, ch, s / gw, s % gw);
      st = gated(base + "sta.", st, true, blk);
      for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t ti = 0; ti < t; ++ti)
          for (std::int64_t ch = 0; ch < d; ++ch)
            for (std::int64_t s = 0; s < gh * gw; ++s)
              y.at(b * t + ti, ch, s / gw, s % gw) = st.at(b, ch, ti, s);

      // (B*T, D, h, w) viewed as (B, T*D, h, w); memory order is unchanged.
      Act ff(batch, t * d, gh, gw);
      ff.v = y.v;
      Act hidden = gelu(conv(base + "ff.fc1", ff));
      y.v = add(conv(base + "ff.fc2", hidden), ff).v;
    }

    Act z = gelu(conv("back.conv1", y));
    z = conv("back.conv2", z);
    Act up(z.n, c.in_channels, c.height, c.width);
    for (std::int64_t n = 0; n < z.n; ++n)
      for (std::int64_t ch = 0; ch < c.in_channels; ++ch)
        for (std::int64_t i = 0; i < gh; ++i)
          for (std::int64_t j = 0; j < gw; ++j)
            for (std::int64_t a = 0; a < p; ++a)
              for (std::int64_t b = 0; b < p; ++b)
                up.at(n, ch, i * p + a, j * p + b) = z.at(n, (ch * p + a) * p + b, i, j);
    return conv("back.refine", up);
  }

 private:
  const ModelConfig& config_;
  const ReferenceParams& params_;
  std::unordered_map<std::string, LayerSpec> layers_;
};

}  // namespace

ReferenceParams to_reference(const ParamStore& params) {
  ReferenceParams out;
  for (const auto& e : params.entries()) {
    out.emplace(e.name, std::vector<double>(e.value.data().begin(), e.value.data().end()));
  }
  return out;
}

std::vector<double> reference_forward(const ModelConfig& config, const ReferenceParams& params,
                                      const std::vector<double>& x, std::int64_t batch) {
  return Reference(config, params).run(x, batch).v;
}

}  // namespace mesp
