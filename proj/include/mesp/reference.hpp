#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mesp/model.hpp"

namespace mesp {

// Double-precision parameters keyed by store name.
using ReferenceParams = std::unordered_map<std::string, std::vector<double>>;

ReferenceParams to_reference(const ParamStore& params);

// Forward pass in double with direct-loop convolutions, for verification.
// x is (B, T, C, H, W) in row-major order; the result has the same layout.
std::vector<double> reference_forward(const ModelConfig& config, const ReferenceParams& params,
                                      const std::vector<double>& x, std::int64_t batch);

}  // namespace mesp
