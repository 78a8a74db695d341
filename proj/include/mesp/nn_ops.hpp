#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "mesp/autograd.hpp"
#include "mesp/tensor.hpp"

namespace mesp {

struct Conv2dOptions {
  std::array<std::int64_t, 2> stride{1, 1};
  std::array<std::int64_t, 2> padding{0, 0};
  std::array<std::int64_t, 2> dilation{1, 1};
  std::int64_t groups = 1;
};

inline constexpr float kLayerNormEps = 1e-6f;

// Output extent along one axis; throws when the result would be < 1.
std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                std::int64_t padding, std::int64_t dilation);

// Validates input (N,Cin,H,W) against weight (Cout,Cin/groups,Kh,Kw) and
// returns (N,Cout,H',W').
Shape conv2d_output_shape(const Shape& input, const Shape& weight,
                          const Conv2dOptions& options);

// Zero-padded cross-correlation. `bias` may be null.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              const Conv2dOptions& options);
Var conv2d(Var input, Var weight, std::optional<Var> bias, const Conv2dOptions& options);

// (N, C*r*r, H, W) -> (N, C, H*r, W*r), out[n,c,h*r+a,w*r+b] = in[n,c*r*r+a*r+b,h,w].
Tensor pixel_shuffle(const Tensor& input, std::int64_t upscale);
// Exact inverse of pixel_shuffle.
Tensor pixel_unshuffle(const Tensor& input, std::int64_t downscale);
Var pixel_shuffle(Var input, std::int64_t upscale);

// Normalizes the channel axis of (N,C,H,W) at every (n,h,w); variance uses
// denominator C.
Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  float eps = kLayerNormEps);
Var layer_norm(Var input, Var gamma, Var beta, float eps = kLayerNormEps);

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
float gelu(float x);
Tensor gelu(const Tensor& input);
Var gelu(Var input);

}  // namespace mesp
