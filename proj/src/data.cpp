#include "mesp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mesp/error.hpp"
#include "mesp/tensor_io.hpp"

namespace mesp {

void validate_sample(const SampleBatch& sample, const std::string& label) {
  const Tensor& in = sample.input;
  const Tensor& tg = sample.target;
  if (in.rank() != 5 || tg.rank() != 5) {
    fail(ErrorKind::kInvalidShape, label + ": input and target must be (B,T,C,H,W)");
  }
  if (in.dim(0) != tg.dim(0) || in.dim(2) != tg.dim(2) || in.dim(3) != tg.dim(3) ||
      in.dim(4) != tg.dim(4)) {
    fail(ErrorKind::kInvalidShape, label + ": input " + shape_to_string(in.shape()) +
                                       " and target " + shape_to_string(tg.shape()) +
                                       " disagree on B, C, H or W");
  }
  for (const Tensor* t : {&in, &tg}) {
    for (float v : t->data()) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        fail(ErrorKind::kInvalidArgument, label + ": value " + std::to_string(v) +
                                              " outside [0, 1]");
      }
    }
  }
}

SampleBatch collate(std::span<const SampleBatch> rows, std::span<const std::size_t> indices) {
  if (indices.empty()) fail(ErrorKind::kInvalidArgument, "collate of zero rows");
  std::vector<float> in_data, tg_data;
  Shape in_shape = rows[indices[0]].input.shape();
  Shape tg_shape = rows[indices[0]].target.shape();
  in_shape[0] = 0;
  tg_shape[0] = 0;
  std::int64_t total = 0;
  for (auto i : indices) {
    const SampleBatch& r = rows[i];
    Shape probe_in = r.input.shape(), probe_tg = r.target.shape();
    const auto b = probe_in[0];
    probe_in[0] = 0;
    probe_tg[0] = 0;
    if (probe_in != in_shape || probe_tg != tg_shape) {
      fail(ErrorKind::kInvalidShape, "collate: row " + std::to_string(i) + " has shape " +
                                         shape_to_string(r.input.shape()));
    }
    in_data.insert(in_data.end(), r.input.data().begin(), r.input.data().end());
    tg_data.insert(tg_data.end(), r.target.data().begin(), r.target.data().end());
    total += b;
  }
  in_shape[0] = total;
  tg_shape[0] = total;
  return {Tensor(in_shape, std::move(in_data)), Tensor(tg_shape, std::move(tg_data))};
}

void step_sprite(SpriteMotion& m, std::int64_t height, std::int64_t width) {
  auto advance = [](std::int64_t& pos, std::int64_t& vel, std::int64_t span) {
    if (span == 0) {
      pos = 0;
      return;
    }
    pos += vel;
    // Mirror until inside; velocities never exceed the span so one or two
    // reflections suffice.
    while (pos < 0 || pos > span) {
      if (pos < 0) pos = -pos;
      if (pos > span) pos = 2 * span - pos;
      vel = -vel;
    }
  };
  advance(m.x, m.vx, width - kSpriteSize);
  advance(m.y, m.vy, height - kSpriteSize);
}

Tensor make_sprite(Rng& rng) {
  Tensor sprite({kSpriteSize, kSpriteSize});
  const double center = (kSpriteSize - 1) / 2.0;
  const double radius = 2.0 + 2.0 * rng.uniform();
  bool any = false;
  for (std::int64_t i = 0; i < kSpriteSize; ++i) {
    for (std::int64_t j = 0; j < kSpriteSize; ++j) {
      const double dist = std::hypot(i - center, j - center);
      const bool on = dist <= radius && rng.uniform() < 0.8;
      sprite[i * kSpriteSize + j] = on ? 1.0f : 0.0f;
      any = any || on;
    }
  }
  if (!any) sprite[(kSpriteSize / 2) * kSpriteSize + kSpriteSize / 2] = 1.0f;
  return sprite;
}

std::vector<Tensor> gen_moving_sprites(std::int64_t n_samples, std::int64_t frames,
                                       std::int64_t height, std::int64_t width,
                                       std::int64_t n_sprites, std::uint64_t seed) {
  if (height < kSpriteSize || width < kSpriteSize) {
    fail(ErrorKind::kInvalidArgument, "sprite extent 8x8 does not fit inside " +
                                          std::to_string(height) + "x" + std::to_string(width));
  }
  if (n_samples < 0 || frames < 1 || n_sprites < 1) {
    fail(ErrorKind::kInvalidArgument, "gen_moving_sprites needs frames >= 1 and n_sprites >= 1");
  }
  Rng rng(seed);
  std::vector<Tensor> samples;
  samples.reserve(static_cast<std::size_t>(n_samples));
  const std::int64_t span_x = width - kSpriteSize;
  const std::int64_t span_y = height - kSpriteSize;
  auto draw_velocity = [&](std::int64_t span) -> std::int64_t {
    const std::int64_t vmax = std::min<std::int64_t>(2, span);
    if (vmax == 0) return 0;
    const std::int64_t mag = rng.uniform_int(1, vmax);
    return rng.uniform() < 0.5 ? -mag : mag;
  };

  for (std::int64_t s = 0; s < n_samples; ++s) {
    std::vector<Tensor> sprites;
    std::vector<SpriteMotion> motions;
    for (std::int64_t k = 0; k < n_sprites; ++k) {
      sprites.push_back(make_sprite(rng));
      SpriteMotion m;
      m.x = rng.uniform_int(0, span_x);
      m.y = rng.uniform_int(0, span_y);
      m.vx = draw_velocity(span_x);
      m.vy = draw_velocity(span_y);
      motions.push_back(m);
    }
    Tensor seq({frames, 1, height, width});
    for (std::int64_t f = 0; f < frames; ++f) {
      float* frame = seq.ptr() + f * height * width;
      for (std::int64_t k = 0; k < n_sprites; ++k) {
        const Tensor& sp = sprites[static_cast<std::size_t>(k)];
        const SpriteMotion& m = motions[static_cast<std::size_t>(k)];
        for (std::int64_t i = 0; i < kSpriteSize; ++i) {
          for (std::int64_t j = 0; j < kSpriteSize; ++j) {
            float& px = frame[(m.y + i) * width + m.x + j];
            px = std::max(px, sp[i * kSpriteSize + j]);
          }
        }
      }
      for (auto& m : motions) step_sprite(m, height, width);
    }
    samples.push_back(std::move(seq));
  }
  return samples;
}

std::int64_t sliding_window_count(std::int64_t length, std::int64_t t_in, std::int64_t t_out,
                                  std::int64_t stride) {
  if (t_in < 1 || t_out < 1 || stride < 1) {
    fail(ErrorKind::kInvalidArgument, "sliding_window needs t_in, t_out, stride >= 1");
  }
  if (length < t_in + t_out) return 0;
  return (length - t_in - t_out) / stride + 1;
}

std::vector<SampleBatch> sliding_window(const Tensor& sequence, std::int64_t t_in,
                                        std::int64_t t_out, std::int64_t stride) {
  if (sequence.rank() != 4) {
    fail(ErrorKind::kInvalidShape, "sliding_window expects (L,C,H,W), got " +
                                       shape_to_string(sequence.shape()));
  }
  const std::int64_t length = sequence.dim(0);
  const std::int64_t count = sliding_window_count(length, t_in, t_out, stride);
  if (count == 0) {
    fail(ErrorKind::kInvalidArgument, "sequence of length " + std::to_string(length) +
                                          " yields no windows; requires length >= " +
                                          std::to_string(t_in + t_out));
  }
  const Shape frame(sequence.shape().begin() + 1, sequence.shape().end());
  auto with_batch = [&](std::int64_t frames) {
    Shape s{1, frames};
    s.insert(s.end(), frame.begin(), frame.end());
    return s;
  };
  std::vector<SampleBatch> rows;
  rows.reserve(static_cast<std::size_t>(count));
  for (std::int64_t k = 0; k < count; ++k) {
    const std::int64_t start = k * stride;
    rows.push_back({reshape(slice_rows(sequence, start, start + t_in), with_batch(t_in)),
                    reshape(slice_rows(sequence, start + t_in, start + t_in + t_out),
                            with_batch(t_out))});
  }
  return rows;
}

namespace {

void check_range(float lo, float hi) {
  if (!(hi > lo)) {
    fail(ErrorKind::kInvalidArgument, "normalization range requires hi > lo, got [" +
                                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

}  // namespace

float normalize(float value, float lo, float hi) {
  check_range(lo, hi);
  return static_cast<float>((static_cast<double>(value) - lo) / (static_cast<double>(hi) - lo));
}

float denormalize(float value, float lo, float hi) {
  check_range(lo, hi);
  return static_cast<float>(lo + static_cast<double>(value) * (static_cast<double>(hi) - lo));
}

Tensor normalize(const Tensor& t, float lo, float hi) {
  check_range(lo, hi);
  Tensor out(t.shape());
  for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = normalize(t[i], lo, hi);
  return out;
}

Tensor denormalize(const Tensor& t, float lo, float hi) {
  check_range(lo, hi);
  Tensor out(t.shape());
  for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = denormalize(t[i], lo, hi);
  return out;
}

SplitIndices split_train_test(std::size_t n, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    fail(ErrorKind::kInvalidArgument, "split ratio must lie in (0, 1)");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  // Tolerate ratios like 0.7 whose binary value sits a hair below the decimal.
  const auto n_train =
      static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
  SplitIndices split;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return split;
}

void write_meta(const DatasetMeta& meta, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  os.precision(9);
  os << "t_in=" << meta.t_in << "\n"
     << "t_out=" << meta.t_out << "\n"
     << "lo=" << meta.lo << "\n"
     << "hi=" << meta.hi << "\n";
}

DatasetMeta read_meta(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::kIo, "cannot open " + path.string());
  DatasetMeta meta;
  bool seen[4] = {false, false, false, false};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kFormat, "meta.txt: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "t_in") {
        meta.t_in = std::stoll(value);
        seen[0] = true;
      } else if (key == "t_out") {
        meta.t_out = std::stoll(value);
        seen[1] = true;
      } else if (key == "lo") {
        meta.lo = std::stof(value);
        seen[2] = true;
      } else if (key == "hi") {
        meta.hi = std::stof(value);
        seen[3] = true;
      } else {
        fail(ErrorKind::kFormat, "meta.txt: unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      fail(ErrorKind::kFormat, "meta.txt: bad value for '" + key + "'");
    }
  }
  const char* names[4] = {"t_in", "t_out", "lo", "hi"};
  for (int i = 0; i < 4; ++i) {
    if (!seen[i]) fail(ErrorKind::kFormat, std::string("meta.txt: missing key '") + names[i] + "'");
  }
  return meta;
}

void save_dataset(const std::filesystem::path& dir, const Tensor& train, const Tensor& test,
                  const DatasetMeta& meta) {
  std::filesystem::create_directories(dir);
  save_tensor(train, dir / "train.mesp");
  save_tensor(test, dir / "test.mesp");
  write_meta(meta, dir / "meta.txt");
}

Tensor load_split(const std::filesystem::path& dir, const std::string& split) {
  Tensor t = load_tensor(dir / (split + ".mesp"));
  if (t.rank() != 5) {
    fail(ErrorKind::kFormat, split + ".mesp must hold a rank-5 (N,T,C,H,W) tensor, got " +
                                 shape_to_string(t.shape()));
  }
  return t;
}

std::vector<SampleBatch> rows_from_windows(const Tensor& windows, std::int64_t t_in,
                                           std::int64_t t_out) {
  if (windows.rank() != 5 || windows.dim(1) < t_in + t_out) {
    fail(ErrorKind::kInvalidShape, "windows " + shape_to_string(windows.shape()) +
                                       " cannot supply " + std::to_string(t_in) + "+" +
                                       std::to_string(t_out) + " frames");
  }
  std::vector<SampleBatch> rows;
  for (std::int64_t n = 0; n < windows.dim(0); ++n) {
    const Tensor seq = slice_rows(windows, n, n + 1);
    rows.push_back({slice_axis1(seq, 0, t_in), slice_axis1(seq, t_in, t_in + t_out)});
  }
  return rows;
}

}  // namespace mesp
