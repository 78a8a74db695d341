#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mesp/model.hpp"

namespace mesp {

struct GradCheckOptions {
  double epsilon = 1e-3;
  double rel_tol = 1e-3;
  std::int64_t samples_per_tensor = 3;
  double required_pass_fraction = 0.99;
  std::int64_t batch = 1;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string param;
  std::int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  std::int64_t passed = 0;

  double pass_fraction() const {
    return entries.empty() ? 0.0
                           : static_cast<double>(passed) / static_cast<double>(entries.size());
  }
};

// |a - n| / max(|a|, |n|); zero when both vanish.
double relative_error(double analytic, double numeric);

// Compares reverse-mode gradients of L = sum(forward(x) * R) against central
// differences for randomly sampled scalars of every parameter tensor. x and R
// are standard normal, both drawn from the seed. The numeric side perturbs
// parameters by +-epsilon and evaluates L with the double-precision reference
// forward, since float32 rounding of the outputs alone exceeds the tolerance
// at this step size.
GradCheckReport gradcheck_model(const ModelConfig& config, const GradCheckOptions& options);

}  // namespace mesp
