#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mesp/model.hpp"
#include "mesp/training.hpp"

namespace mesp {

struct DataConfig {
  std::int64_t t_out = 10;  // frames predicted at evaluation time
  std::int64_t n_samples = 16;
  std::int64_t sequence_length = 20;
  std::int64_t n_sprites = 2;
  std::int64_t window_stride = 1;
  double split_ratio = 0.7;
  float lo = 0.0f;
  float hi = 255.0f;

  bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::string data_dir;
  std::string out_dir = "out";
  std::string checkpoint;

  void validate() const;
};

// Applies `key = value` lines on top of `base`. Blank lines and `#` comments
// are skipped; lists use parentheses, e.g. `dilations = (1,2,4)`. Unknown keys
// and malformed values throw kConfig naming the key and line.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

// Sets one key; same errors as parse_run_config.
void set_run_config_key(RunConfig& config, std::string_view key, std::string_view value);

// Every key in canonical order with its current value, one `key = value` line each.
std::string format_run_config(const RunConfig& config);

std::vector<std::string> run_config_keys();

// Builtin preset file text; throws kConfig for unknown names.
std::string_view preset_text(std::string_view name);
RunConfig run_preset(std::string_view name);

}  // namespace mesp
