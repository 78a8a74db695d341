#include "mesp/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mesp/reference.hpp"
#include "mesp/rng.hpp"

namespace mesp {

double relative_error(double analytic, double numeric) {
  const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
  if (scale == 0.0) return 0.0;
  return std::fabs(analytic - numeric) / scale;
}

namespace {

double projected_output(const ModelConfig& config, const ReferenceParams& params,
                        const std::vector<double>& x, const Tensor& projection,
                        std::int64_t batch) {
  const std::vector<double> out = reference_forward(config, params, x, batch);
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * projection[static_cast<std::int64_t>(i)];
  return acc;
}

}  // namespace

GradCheckReport gradcheck_model(const ModelConfig& config, const GradCheckOptions& options) {
  Rng rng(options.seed);
  ParamStore params = init_params(config, options.seed);
  // Non-trivial norm affine terms and biases so their gradients are exercised.
  for (auto& e : params.entries()) {
    if (e.value.rank() == 1) {
      for (std::int64_t i = 0; i < e.value.numel(); ++i) {
        e.value[i] += static_cast<float>(0.1 * rng.normal());
      }
    }
  }
  const Shape in_shape{options.batch, config.in_time, config.in_channels, config.height,
                       config.width};
  Tensor x(in_shape);
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
  Tensor projection(in_shape);
  for (std::int64_t i = 0; i < projection.numel(); ++i) {
    projection[i] = static_cast<float>(rng.normal());
  }

  std::vector<Tensor> analytic;
  {
    Tape tape;
    Network net(config, params, tape, true);
    Var out = forward(net, tape.constant(x));
    Var loss = sum(hadamard(out, tape.constant(projection)));
    analytic = tape.backward(loss);
  }

  GradCheckReport report;
  ReferenceParams ref = to_reference(params);
  const std::vector<double> x_ref(x.data().begin(), x.data().end());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& entry = params.entries()[k];
    std::vector<double>& values = ref.at(entry.name);
    for (std::int64_t s = 0; s < options.samples_per_tensor; ++s) {
      const std::int64_t idx = rng.uniform_int(0, entry.value.numel() - 1);
      double& slot = values[static_cast<std::size_t>(idx)];
      const double original = slot;
      slot = original + options.epsilon;
      const double f_plus = projected_output(config, ref, x_ref, projection, options.batch);
      slot = original - options.epsilon;
      const double f_minus = projected_output(config, ref, x_ref, projection, options.batch);
      slot = original;

      GradCheckEntry e;
      e.param = entry.name;
      e.index = idx;
      e.analytic = analytic[k][idx];
      e.numeric = (f_plus - f_minus) / (2.0 * options.epsilon);
      e.rel_error = relative_error(e.analytic, e.numeric);
      e.pass = e.rel_error <= options.rel_tol;
      if (e.pass) ++report.passed;
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

}  // namespace mesp
