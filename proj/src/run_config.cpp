#include "mesp/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mesp/error.hpp"

namespace mesp {

namespace {

constexpr std::string_view kMovingMnist = R"(# MovingMNIST: 10 frames in, 10 frames out
in_channels = 1
in_time = 10
height = 64
width = 64
n_block = 8
patch_size = 2
embed_hid = 64
embed_dim = 128
dilations = (1,2,4)
learning_rate = 1e-4
batch_size = 16
epochs = 2000
t_out = 10
sequence_length = 20
n_sprites = 2
)";

constexpr std::string_view kTaxiBj = R"(# TaxiBJ: inflow/outflow, 4 frames in, 4 frames out
in_channels = 2
in_time = 4
height = 32
width = 32
n_block = 4
patch_size = 4
embed_hid = 32
embed_dim = 64
dilations = (1,2)
learning_rate = 1e-3
batch_size = 16
epochs = 100
t_out = 4
sequence_length = 8
n_sprites = 2
)";

constexpr std::string_view kRadarEcho = R"(# Radar-Echo: 5 frames in, 10 frames out by autoregression
in_channels = 1
in_time = 5
height = 100
width = 100
n_block = 4
patch_size = 4
embed_hid = 128
embed_dim = 128
dilations = (1,2)
learning_rate = 1e-3
batch_size = 16
epochs = 50
t_out = 10
sequence_length = 15
n_samples = 2700
n_sprites = 2
)";

constexpr std::string_view kToy = R"(# Toy: CI-scale configuration
in_channels = 1
in_time = 4
height = 16
width = 16
n_block = 1
patch_size = 2
embed_hid = 16
embed_dim = 16
dilations = (1,2)
learning_rate = 1e-3
batch_size = 8
epochs = 200
t_out = 4
sequence_length = 8
n_samples = 16
n_sprites = 1
)";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  fail(ErrorKind::kConfig, "key '" + std::string(key) + "': expected " + std::string(want) +
                               ", got '" + std::string(value) + "'");
}

std::int64_t parse_int(std::string_view key, std::string_view value) {
  std::int64_t out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, "an integer");
  return out;
}

std::uint64_t parse_uint(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, "a non-negative integer");
  return out;
}

double parse_double(std::string_view key, std::string_view value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, "a number");
  return out;
}

std::vector<std::int64_t> parse_list(std::string_view key, std::string_view value) {
  if (value.size() < 2 || value.front() != '(' || value.back() != ')') {
    bad_value(key, value, "a list like (1,2,4)");
  }
  std::vector<std::int64_t> out;
  std::string_view body = value.substr(1, value.size() - 2);
  while (true) {
    const auto comma = body.find(',');
    out.push_back(parse_int(key, trim(body.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    body = body.substr(comma + 1);
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct KeyHandler {
  std::function<void(RunConfig&, std::string_view, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
KeyHandler int_key(Member member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            std::invoke(member, c) = parse_int(k, v);
          },
          [member](const RunConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <typename Member>
KeyHandler double_key(Member member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            std::invoke(member, c) = static_cast<std::remove_reference_t<decltype(std::invoke(member, c))>>(parse_double(k, v));
          },
          [member](const RunConfig& c) { return format_double(std::invoke(member, c)); }};
}

template <typename Member>
KeyHandler string_key(Member member) {
  return {[member](RunConfig& c, std::string_view, std::string_view v) {
            std::invoke(member, c) = std::string(v);
          },
          [member](const RunConfig& c) { return std::invoke(member, c); }};
}

const std::vector<std::pair<std::string, KeyHandler>>& handlers() {
  static const std::vector<std::pair<std::string, KeyHandler>> table = [] {
    std::vector<std::pair<std::string, KeyHandler>> t;
    t.emplace_back("in_channels", int_key([](auto& c) -> auto& { return c.model.in_channels; }));
    t.emplace_back("in_time", int_key([](auto& c) -> auto& { return c.model.in_time; }));
    t.emplace_back("height", int_key([](auto& c) -> auto& { return c.model.height; }));
    t.emplace_back("width", int_key([](auto& c) -> auto& { return c.model.width; }));
    t.emplace_back("n_block", int_key([](auto& c) -> auto& { return c.model.n_block; }));
    t.emplace_back("patch_size", int_key([](auto& c) -> auto& { return c.model.patch_size; }));
    t.emplace_back("embed_hid", int_key([](auto& c) -> auto& { return c.model.embed_hid; }));
    t.emplace_back("embed_dim", int_key([](auto& c) -> auto& { return c.model.embed_dim; }));
    t.emplace_back("dilations",
                   KeyHandler{[](RunConfig& c, std::string_view k, std::string_view v) {
                                c.model.dilations = parse_list(k, v);
                              },
                              [](const RunConfig& c) {
                                std::string s = "(";
                                for (std::size_t i = 0; i < c.model.dilations.size(); ++i) {
                                  if (i) s += ",";
                                  s += std::to_string(c.model.dilations[i]);
                                }
                                return s + ")";
                              }});
    t.emplace_back("ff_expansion", int_key([](auto& c) -> auto& { return c.model.ff_expansion; }));
    t.emplace_back("dw_kernel", int_key([](auto& c) -> auto& { return c.model.dw_kernel; }));
    t.emplace_back("std_kernel", int_key([](auto& c) -> auto& { return c.model.std_kernel; }));
    t.emplace_back("time_kernel", int_key([](auto& c) -> auto& { return c.model.time_kernel; }));
    t.emplace_back("batch_size", int_key([](auto& c) -> auto& { return c.train.batch_size; }));
    t.emplace_back("learning_rate", double_key([](auto& c) -> auto& { return c.train.learning_rate; }));
    t.emplace_back("epochs", int_key([](auto& c) -> auto& { return c.train.epochs; }));
    t.emplace_back("seed",
                   KeyHandler{[](RunConfig& c, std::string_view k, std::string_view v) {
                                c.train.seed = parse_uint(k, v);
                              },
                              [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    t.emplace_back("beta1", double_key([](auto& c) -> auto& { return c.train.beta1; }));
    t.emplace_back("beta2", double_key([](auto& c) -> auto& { return c.train.beta2; }));
    t.emplace_back("eps", double_key([](auto& c) -> auto& { return c.train.eps; }));
    t.emplace_back("weight_decay", double_key([](auto& c) -> auto& { return c.train.weight_decay; }));
    t.emplace_back("t_out", int_key([](auto& c) -> auto& { return c.data.t_out; }));
    t.emplace_back("n_samples", int_key([](auto& c) -> auto& { return c.data.n_samples; }));
    t.emplace_back("sequence_length", int_key([](auto& c) -> auto& { return c.data.sequence_length; }));
    t.emplace_back("n_sprites", int_key([](auto& c) -> auto& { return c.data.n_sprites; }));
    t.emplace_back("window_stride", int_key([](auto& c) -> auto& { return c.data.window_stride; }));
    t.emplace_back("split_ratio", double_key([](auto& c) -> auto& { return c.data.split_ratio; }));
    t.emplace_back("lo", double_key([](auto& c) -> auto& { return c.data.lo; }));
    t.emplace_back("hi", double_key([](auto& c) -> auto& { return c.data.hi; }));
    t.emplace_back("data", string_key([](auto& c) -> auto& { return c.data_dir; }));
    t.emplace_back("out", string_key([](auto& c) -> auto& { return c.out_dir; }));
    t.emplace_back("checkpoint", string_key([](auto& c) -> auto& { return c.checkpoint; }));
    return t;
  }();
  return table;
}

// Message without the "<kind>: " prefix, for re-raising with more context.
std::string bare_message(const Error& e) {
  const std::string prefix = std::string(to_string(e.kind())) + ": ";
  std::string msg = e.what();
  return msg.starts_with(prefix) ? msg.substr(prefix.size()) : msg;
}

const KeyHandler& handler(std::string_view key) {
  for (const auto& [name, h] : handlers()) {
    if (name == key) return h;
  }
  fail(ErrorKind::kConfig, "unknown key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) fail(ErrorKind::kConfig, std::string("key '") + key + "': " + what);
  };
  require(data.t_out >= 1, "t_out", "must be >= 1");
  require(data.n_samples >= 1, "n_samples", "must be >= 1");
  require(data.n_sprites >= 1, "n_sprites", "must be >= 1");
  require(data.window_stride >= 1, "window_stride", "must be >= 1");
  require(data.split_ratio > 0.0 && data.split_ratio < 1.0, "split_ratio", "must lie in (0, 1)");
  require(data.hi > data.lo, "hi", "must exceed lo");
  require(data.sequence_length >= model.in_time + data.t_out, "sequence_length",
          "must cover in_time + t_out frames");
}

void set_run_config_key(RunConfig& config, std::string_view key, std::string_view value) {
  handler(key).set(config, key, value);
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  std::int64_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view raw =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::kConfig, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    try {
      set_run_config_key(base, key, value);
    } catch (const Error& e) {
      fail(ErrorKind::kConfig, "line " + std::to_string(line_no) + ": " + bare_message(e));
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str(), std::move(base));
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, path.string() + ": " + bare_message(e));
  }
}

std::string format_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& [name, h] : handlers()) out += name + " = " + h.get(config) + "\n";
  return out;
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& entry : handlers()) keys.push_back(entry.first);
  return keys;
}

std::string_view preset_text(std::string_view name) {
  if (name == "movingmnist") return kMovingMnist;
  if (name == "taxibj") return kTaxiBj;
  if (name == "radarecho") return kRadarEcho;
  if (name == "toy") return kToy;
  fail(ErrorKind::kConfig, "unknown preset '" + std::string(name) + "'");
}

RunConfig run_preset(std::string_view name) { return parse_run_config(preset_text(name)); }

}  // namespace mesp
