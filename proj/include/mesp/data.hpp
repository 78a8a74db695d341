#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mesp/rng.hpp"
#include "mesp/tensor.hpp"

namespace mesp {

// Paired input/target sequences, (B, T_in, C, H, W) and (B, T_out, C, H, W),
// values in [0, 1].
struct SampleBatch {
  Tensor input;
  Tensor target;

  std::int64_t batch() const { return input.dim(0); }
};

// Throws kInvalidShape/kInvalidArgument when the axes disagree or any value
// leaves [0, 1]. `label` prefixes the message.
void validate_sample(const SampleBatch& sample, const std::string& label);

// Concatenates rows[indices[k]] along the batch axis.
SampleBatch collate(std::span<const SampleBatch> rows, std::span<const std::size_t> indices);

inline constexpr std::int64_t kSpriteSize = 8;

struct SpriteMotion {
  std::int64_t x = 0;  // column of the sprite's left edge
  std::int64_t y = 0;  // row of the sprite's top edge
  std::int64_t vx = 0;
  std::int64_t vy = 0;
};

// Advances one frame with reflection off the grid walls: a coordinate that
// would leave [0, extent - 8] is mirrored back inside and its velocity
// component flips sign.
void step_sprite(SpriteMotion& motion, std::int64_t height, std::int64_t width);

// Random 8x8 binary blob (always non-empty).
Tensor make_sprite(Rng& rng);

// n_samples sequences of shape (frames, 1, H, W) with values in {0, 1}.
std::vector<Tensor> gen_moving_sprites(std::int64_t n_samples, std::int64_t frames,
                                       std::int64_t height, std::int64_t width,
                                       std::int64_t n_sprites, std::uint64_t seed);

std::int64_t sliding_window_count(std::int64_t length, std::int64_t t_in, std::int64_t t_out,
                                  std::int64_t stride);

// Windows over a (L, C, H, W) sequence; each row has batch axis 1.
std::vector<SampleBatch> sliding_window(const Tensor& sequence, std::int64_t t_in,
                                        std::int64_t t_out, std::int64_t stride = 1);

float normalize(float value, float lo, float hi);
float denormalize(float value, float lo, float hi);
Tensor normalize(const Tensor& t, float lo, float hi);
Tensor denormalize(const Tensor& t, float lo, float hi);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle, then the first floor(n * ratio) indices go to train.
SplitIndices split_train_test(std::size_t n, double ratio, std::uint64_t seed);

template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_train_test(const std::vector<T>& items,
                                                           double ratio, std::uint64_t seed) {
  const SplitIndices idx = split_train_test(items.size(), ratio, seed);
  std::pair<std::vector<T>, std::vector<T>> out;
  for (auto i : idx.train) out.first.push_back(items[i]);
  for (auto i : idx.test) out.second.push_back(items[i]);
  return out;
}

// Sidecar manifest for a dataset directory.
struct DatasetMeta {
  std::int64_t t_in = 0;
  std::int64_t t_out = 0;
  float lo = 0.0f;
  float hi = 1.0f;
};

void write_meta(const DatasetMeta& meta, const std::filesystem::path& path);
DatasetMeta read_meta(const std::filesystem::path& path);

// Dataset directory: train.mesp and test.mesp, each a (N, t_in + t_out, C, H, W)
// tensor, plus meta.txt.
void save_dataset(const std::filesystem::path& dir, const Tensor& train, const Tensor& test,
                  const DatasetMeta& meta);
Tensor load_split(const std::filesystem::path& dir, const std::string& split);

// Splits stored (N, L, C, H, W) windows into rows with input frames [0, t_in)
// and target frames [t_in, t_in + t_out).
std::vector<SampleBatch> rows_from_windows(const Tensor& windows, std::int64_t t_in,
                                           std::int64_t t_out);

}  // namespace mesp
