#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "mesp/autograd.hpp"
#include "mesp/data.hpp"
#include "mesp/model.hpp"

namespace mesp {

struct TrainConfig {
  std::int64_t batch_size = 16;
  double learning_rate = 1e-4;
  std::int64_t epochs = 1;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

// mean(|pred - target|) + mean((pred - target)^2)
Var loss_l1l2(Var pred, Var target);
double loss_l1l2(const Tensor& pred, const Tensor& target);

// Decoupled weight decay followed by the bias-corrected Adam update.
// `grads` follows store order; `step` counts from 1.
void adamw_step(ParamStore& params, std::span<const Tensor> grads, const TrainConfig& config,
                std::int64_t step);

struct LossRecord {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double loss = 0.0;
};

struct TrainResult {
  ParamStore params;
  std::vector<LossRecord> log;
};

// One optimization step on a batch; returns the pre-update loss.
double train_step(const ModelConfig& model, ParamStore& params, const SampleBatch& batch,
                  const TrainConfig& config, std::int64_t step);

// Deterministic given the seed: parameters come from init_params(model, seed)
// and each epoch visits the rows in a seeded shuffle, dropping the last
// incomplete batch. When `csv` is non-null a header and one `epoch,step,loss`
// line per step are written as training proceeds.
TrainResult train(const ModelConfig& model, std::span<const SampleBatch> rows,
                  const TrainConfig& config, std::ostream* csv = nullptr);
// Same loop starting from given parameters.
TrainResult train(const ModelConfig& model, ParamStore initial, std::span<const SampleBatch> rows,
                  const TrainConfig& config, std::ostream* csv = nullptr);

std::int64_t autoregressive_passes(std::int64_t frames_per_pass, std::int64_t t_out);

// Repeated forward passes, each fed the previous prediction window, until
// t_out frames exist; surplus frames of the final pass are dropped.
Tensor predict_autoregressive(const ParamStore& params, const ModelConfig& config,
                              const Tensor& x_in, std::int64_t t_out,
                              std::int64_t* passes = nullptr);

}  // namespace mesp
