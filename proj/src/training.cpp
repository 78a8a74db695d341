#include "mesp/training.hpp"

#include <cmath>
#include <numeric>
#include <ostream>

#include "mesp/error.hpp"
#include "mesp/rng.hpp"

namespace mesp {

void TrainConfig::validate() const {
  if (batch_size < 1) fail(ErrorKind::kConfig, "batch_size: must be >= 1");
  if (!(learning_rate > 0.0)) fail(ErrorKind::kConfig, "learning_rate: must be > 0");
  if (epochs < 1) fail(ErrorKind::kConfig, "epochs: must be >= 1");
  if (!(beta1 > 0.0 && beta1 < 1.0)) fail(ErrorKind::kConfig, "beta1: must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) fail(ErrorKind::kConfig, "beta2: must lie in (0, 1)");
  if (!(eps > 0.0)) fail(ErrorKind::kConfig, "eps: must be > 0");
  if (!(weight_decay >= 0.0)) fail(ErrorKind::kConfig, "weight_decay: must be >= 0");
}

Var loss_l1l2(Var pred, Var target) {
  check_same_shape(pred.value(), target.value(), "loss_l1l2");
  Var diff = sub(pred, target);
  return add(mean(abs(diff)), mean(square(diff)));
}

double loss_l1l2(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "loss_l1l2");
  double l1 = 0.0, l2 = 0.0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    l1 += std::fabs(d);
    l2 += d * d;
  }
  const auto n = static_cast<double>(pred.numel());
  return l1 / n + l2 / n;
}

void adamw_step(ParamStore& params, std::span<const Tensor> grads, const TrainConfig& config,
                std::int64_t step) {
  if (step < 1) fail(ErrorKind::kInvalidArgument, "adamw_step: step index must be >= 1");
  if (grads.size() != params.size()) {
    fail(ErrorKind::kInvalidArgument, "adamw_step: " + std::to_string(grads.size()) +
                                          " gradients for " + std::to_string(params.size()) +
                                          " parameters");
  }
  const double lr = config.learning_rate;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step));
  const double decay = 1.0 - lr * config.weight_decay;

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& e = params.entries()[k];
    const Tensor& g = grads[k];
    check_same_shape(e.value, g, ("adamw_step '" + e.name + "'").c_str());
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double gi = g[i];
      const double m = b1 * e.first_moment[i] + (1.0 - b1) * gi;
      const double v = b2 * e.second_moment[i] + (1.0 - b2) * gi * gi;
      e.first_moment[i] = static_cast<float>(m);
      e.second_moment[i] = static_cast<float>(v);
      const double m_hat = m / bias1;
      const double v_hat = v / bias2;
      const double p = static_cast<double>(e.value[i]) * decay;
      e.value[i] = static_cast<float>(p - lr * m_hat / (std::sqrt(v_hat) + config.eps));
    }
  }
}

double train_step(const ModelConfig& model, ParamStore& params, const SampleBatch& batch,
                  const TrainConfig& config, std::int64_t step) {
  Tape tape;
  Network net(model, params, tape, true);
  Var pred = forward(net, tape.constant(batch.input));
  Var loss = loss_l1l2(pred, tape.constant(batch.target));
  const double value = loss.value().item();
  const std::vector<Tensor> grads = tape.backward(loss);
  adamw_step(params, grads, config, step);
  return value;
}

TrainResult train(const ModelConfig& model, std::span<const SampleBatch> rows,
                  const TrainConfig& config, std::ostream* csv) {
  return train(model, init_params(model, config.seed), rows, config, csv);
}

TrainResult train(const ModelConfig& model, ParamStore initial, std::span<const SampleBatch> rows,
                  const TrainConfig& config, std::ostream* csv) {
  model.validate();
  config.validate();
  const Shape expected_tail{model.in_time, model.in_channels, model.height, model.width};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string label = "sample " + std::to_string(i);
    validate_sample(rows[i], label);
    const Shape in_tail(rows[i].input.shape().begin() + 1, rows[i].input.shape().end());
    const Shape tg_tail(rows[i].target.shape().begin() + 1, rows[i].target.shape().end());
    if (in_tail != expected_tail || tg_tail != expected_tail) {
      fail(ErrorKind::kInvalidShape, label + ": input " + shape_to_string(rows[i].input.shape()) +
                                         " / target " + shape_to_string(rows[i].target.shape()) +
                                         " do not match the model's (B," +
                                         std::to_string(model.in_time) + "," +
                                         std::to_string(model.in_channels) + "," +
                                         std::to_string(model.height) + "," +
                                         std::to_string(model.width) + ")");
    }
  }
  const auto n = static_cast<std::int64_t>(rows.size());
  const std::int64_t batches = n / config.batch_size;
  if (batches == 0) {
    fail(ErrorKind::kInvalidArgument, "training set of " + std::to_string(n) +
                                          " samples is smaller than batch_size " +
                                          std::to_string(config.batch_size));
  }

  TrainResult result{std::move(initial), {}};
  // Shuffle stream is separate from the initialization stream.
  Rng shuffle_rng(config.seed ^ 0x5DEECE66Dull);
  std::vector<std::size_t> order(rows.size());
  std::int64_t step = 0;
  if (csv != nullptr) *csv << "epoch,step,loss\n";

  for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    for (std::int64_t b = 0; b < batches; ++b) {
      const std::span<const std::size_t> idx(order.data() + b * config.batch_size,
                                             static_cast<std::size_t>(config.batch_size));
      const SampleBatch batch = collate(rows, idx);
      ++step;
      const double loss = train_step(model, result.params, batch, config, step);
      result.log.push_back({epoch, step, loss});
      if (csv != nullptr) {
        const auto old = csv->precision(9);
        *csv << epoch << ',' << step << ',' << loss << '\n';
        csv->precision(old);
        csv->flush();
      }
    }
  }
  return result;
}

std::int64_t autoregressive_passes(std::int64_t frames_per_pass, std::int64_t t_out) {
  if (t_out < 1) fail(ErrorKind::kInvalidArgument, "t_out must be >= 1");
  if (frames_per_pass < 1) fail(ErrorKind::kInvalidArgument, "frames per pass must be >= 1");
  return (t_out + frames_per_pass - 1) / frames_per_pass;
}

Tensor predict_autoregressive(const ParamStore& params, const ModelConfig& config,
                              const Tensor& x_in, std::int64_t t_out, std::int64_t* passes) {
  const std::int64_t n_passes = autoregressive_passes(config.in_time, t_out);
  if (x_in.rank() != 5 || x_in.dim(1) != config.in_time) {
    fail(ErrorKind::kInvalidShape, "predict_autoregressive expects (B," +
                                       std::to_string(config.in_time) + ",C,H,W), got " +
                                       shape_to_string(x_in.shape()));
  }
  std::vector<Tensor> windows;
  Tensor window = x_in;
  for (std::int64_t p = 0; p < n_passes; ++p) {
    window = forward(config, params, window);
    windows.push_back(window);
  }
  if (passes != nullptr) *passes = n_passes;
  Tensor all = concat_axis1(windows);
  return all.dim(1) == t_out ? all : slice_axis1(all, 0, t_out);
}

}  // namespace mesp
