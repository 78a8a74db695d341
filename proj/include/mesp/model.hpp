#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mesp/autograd.hpp"
#include "mesp/nn_ops.hpp"
#include "mesp/tensor.hpp"

namespace mesp {

struct ModelConfig {
  std::int64_t in_channels = 1;
  std::int64_t in_time = 10;  // frames consumed and produced per forward pass
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::int64_t n_block = 8;
  std::int64_t patch_size = 2;
  std::int64_t embed_hid = 64;
  std::int64_t embed_dim = 128;
  std::vector<std::int64_t> dilations{1, 2, 4};
  std::int64_t ff_expansion = 2;
  std::int64_t dw_kernel = 7;
  std::int64_t std_kernel = 3;
  std::int64_t time_kernel = 3;

  // Throws ErrorKind::kConfig naming the offending field.
  void validate() const;

  std::int64_t grid_height() const { return height / patch_size; }
  std::int64_t grid_width() const { return width / patch_size; }

  bool operator==(const ModelConfig&) const = default;
};

// Dataset presets "movingmnist", "taxibj", "radarecho", plus the small "toy".
ModelConfig model_preset(std::string_view name);
std::vector<std::string> preset_names();

// Named, ordered learnable tensors plus AdamW moment slots.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor first_moment;
    Tensor second_moment;
  };

  void add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  std::size_t size() const noexcept { return entries_.size(); }
  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  std::int64_t total_elements() const;

  // Compares names, order, and values bit for bit (moments excluded).
  bool bitwise_equal(const ParamStore& other) const;

 private:
  std::size_t index_of(std::string_view name) const;

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// One entry of the static architecture description. Every learnable layer and
// every counted elementwise stage appears exactly once, in parameter order.
struct LayerSpec {
  enum class Kind { kConv, kNorm, kPointwise };

  Kind kind = Kind::kConv;
  std::string name;
  // kConv
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t kernel_h = 1;
  std::int64_t kernel_w = 1;
  Conv2dOptions options;
  // kNorm uses in_channels as the normalized width.
  // Input plane extents and how many planes one sequence feeds through it.
  std::int64_t plane_h = 0;
  std::int64_t plane_w = 0;
  std::int64_t planes_per_sequence = 0;
  // kPointwise: elements touched per sequence and FLOPs per element.
  std::int64_t elements = 0;
  std::int64_t flops_per_element = 0;

  std::int64_t param_count() const;
  std::int64_t flops() const;
};

std::vector<LayerSpec> layer_plan(const ModelConfig& config);

// Parameter names and shapes in store order.
std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& config);

// Weights ~ N(0, 2/fan_in) truncated at two standard deviations; biases and
// norm betas zero; norm gammas one. Fully determined by the seed.
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

std::int64_t count_params(const ModelConfig& config);
// One multiply-accumulate = 2 FLOPs; bias add, activation, product and
// residual add = 1 FLOP per element; layer norm = 5 FLOPs per element.
std::int64_t count_flops(const ModelConfig& config, std::int64_t batch = 1);

// A ParamStore bound onto a tape. Parameters are registered as tape leaves in
// store order (trainable) or as constants (inference).
class Network {
 public:
  Network(const ModelConfig& config, const ParamStore& params, Tape& tape, bool trainable);

  const ModelConfig& config() const noexcept { return config_; }
  Tape& tape() const noexcept { return tape_; }
  Var param(std::string_view name) const;

  // Applies the named conv layer from the layer plan (weight + bias).
  Var conv(std::string_view layer, Var x) const;
  Var norm(std::string_view layer, Var x) const;

 private:
  const ModelConfig& config_;
  Tape& tape_;
  std::unordered_map<std::string, Var> vars_;
  std::unordered_map<std::string, LayerSpec> layers_;
};

// (B*T, C, H, W) -> (B*T, embed_dim, H/p, W/p)
Var patch_embed(const Network& net, Var x);
// (B*T, embed_dim, H/p, W/p) -> (B*T, C, H, W)
Var patch_back(const Network& net, Var x);
// Residual included; shape preserving on (B*T, D, h, w).
Var sa_block(const Network& net, Var x, std::int64_t block);
// Runs on the (B, D, T, h*w) layout internally; returns (B*T, D, h, w).
Var sta_block(const Network& net, Var x, std::int64_t block, std::int64_t batch);
// Input and output (B, T*D, h, w).
Var feed_forward(const Network& net, Var x, std::int64_t block);
// The chained time-dilated depthwise convolutions of one STA block, on the
// (B, D, T, h*w) layout. Exposed for receptive-field probing.
Var dilated_time_conv(const Network& net, Var x, std::int64_t block);

// (B, T, C, H, W) -> (B, T, C, H, W)
Var forward(const Network& net, Var x);
Tensor forward(const ModelConfig& config, const ParamStore& params, const Tensor& x);

// Checkpoint: u32 entry count, then per entry a u32 name length, the UTF-8
// name bytes and one tensor container record. Entries follow store order.
void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);
// Also checks that names, order, and shapes match init_params(config).
ParamStore load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

}  // namespace mesp
