#include "mesp/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>

#include "mesp/data.hpp"
#include "mesp/error.hpp"
#include "mesp/gradcheck.hpp"
#include "mesp/metrics.hpp"
#include "mesp/model.hpp"
#include "mesp/run_config.hpp"
#include "mesp/tensor_io.hpp"
#include "mesp/training.hpp"

namespace fs = std::filesystem;

namespace mesp {

namespace {

struct Reference {
  const char* preset;
  double params_millions;
  double gflops;
};

constexpr Reference kReferences[] = {
    {"movingmnist", 48.7, 16.61},
    {"taxibj", 1.99, 0.28},
    {"radarecho", 0.77, 1.74},
};

struct CommonFlags {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Config file (key = value lines)");
  cmd->add_option("--preset", f.preset, "Builtin preset: movingmnist, taxibj, radarecho, toy");
  cmd->add_option("--seed", f.seed, "Seed for data, initialization and shuffling");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--data", f.data, "Dataset directory");
  cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint file");
  cmd->add_option("--set", f.overrides, "Override one config key, KEY=VALUE (repeatable)");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg = f.preset.empty() ? RunConfig{} : run_preset(f.preset);
  if (!f.config.empty()) cfg = load_run_config(f.config, cfg);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kConfig, "--set expects KEY=VALUE, got '" + kv + "'");
    set_run_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) cfg.train.seed = *f.seed;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (!f.data.empty()) cfg.data_dir = f.data;
  if (!f.checkpoint.empty()) cfg.checkpoint = f.checkpoint;
  return cfg;
}

fs::path require_data_dir(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) fail(ErrorKind::kConfig, "key 'data': dataset directory not set");
  return cfg.data_dir;
}

fs::path checkpoint_path(const RunConfig& cfg) {
  return cfg.checkpoint.empty() ? fs::path(cfg.out_dir) / "params.ckpt" : fs::path(cfg.checkpoint);
}

// C channels of one sequence come from independent sprite streams.
std::vector<Tensor> generate_sequences(const RunConfig& cfg) {
  const auto& m = cfg.model;
  std::vector<std::vector<Tensor>> per_channel;
  for (std::int64_t c = 0; c < m.in_channels; ++c) {
    per_channel.push_back(gen_moving_sprites(cfg.data.n_samples, cfg.data.sequence_length,
                                             m.height, m.width, cfg.data.n_sprites,
                                             cfg.train.seed + static_cast<std::uint64_t>(c)));
  }
  std::vector<Tensor> out;
  for (std::int64_t s = 0; s < cfg.data.n_samples; ++s) {
    std::vector<Tensor> channels;
    for (const auto& ch : per_channel) channels.push_back(ch[static_cast<std::size_t>(s)]);
    out.push_back(concat_axis1(channels));
  }
  return out;
}

// (N, t_in + t_out, C, H, W) windows over the selected sequences.
Tensor window_split(const std::vector<Tensor>& sequences, const std::vector<std::size_t>& which,
                    const RunConfig& cfg, const char* split) {
  std::vector<Tensor> windows;
  for (auto i : which) {
    for (const SampleBatch& row : sliding_window(sequences[i], cfg.model.in_time, cfg.data.t_out,
                                                 cfg.data.window_stride)) {
      const Tensor joined = concat_axis1(std::vector<Tensor>{row.input, row.target});
      Shape shape(joined.shape().begin() + 1, joined.shape().end());
      windows.push_back(reshape(joined, shape));
    }
  }
  if (windows.empty()) {
    fail(ErrorKind::kConfig, std::string("key 'split_ratio': ") + split +
                                 " split is empty for n_samples=" +
                                 std::to_string(cfg.data.n_samples));
  }
  return stack(windows);
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  const auto sequences = generate_sequences(cfg);
  const SplitIndices split = split_train_test(sequences.size(), cfg.data.split_ratio, cfg.train.seed);
  const Tensor train = window_split(sequences, split.train, cfg, "train");
  const Tensor test = window_split(sequences, split.test, cfg, "test");
  save_dataset(cfg.out_dir, train, test,
               DatasetMeta{cfg.model.in_time, cfg.data.t_out, cfg.data.lo, cfg.data.hi});
  out << "train=" << shape_to_string(train.shape()) << " test=" << shape_to_string(test.shape())
      << " dir=" << cfg.out_dir << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = require_data_dir(cfg);
  const Tensor windows = load_split(dir, "train");
  // Targets are the T frames following the input window.
  const auto rows = rows_from_windows(windows, cfg.model.in_time, cfg.model.in_time);
  fs::create_directories(cfg.out_dir);
  std::ofstream csv(fs::path(cfg.out_dir) / "loss.csv");
  if (!csv) fail(ErrorKind::kIo, "cannot write " + (fs::path(cfg.out_dir) / "loss.csv").string());
  const TrainResult result = train(cfg.model, rows, cfg.train, &csv);
  save_checkpoint(result.params, fs::path(cfg.out_dir) / "params.ckpt");
  std::ofstream(fs::path(cfg.out_dir) / "config.conf") << format_run_config(cfg);
  out << "steps=" << result.log.size() << " final_loss=" << std::setprecision(9)
      << result.log.back().loss << "\n";
  return 0;
}

// Predictions for every test window, batched by batch_size.
Tensor predict_split(const RunConfig& cfg, const ParamStore& params, const Tensor& windows,
                     std::int64_t t_out, std::int64_t& passes) {
  const std::int64_t n = windows.dim(0);
  std::vector<Tensor> chunks;
  for (std::int64_t b = 0; b < n; b += cfg.train.batch_size) {
    const Tensor rows = slice_rows(windows, b, std::min(n, b + cfg.train.batch_size));
    chunks.push_back(predict_autoregressive(params, cfg.model,
                                            slice_axis1(rows, 0, cfg.model.in_time), t_out,
                                            &passes));
  }
  if (chunks.size() == 1) return chunks.front();
  // Join along the batch axis.
  std::vector<float> values;
  Shape shape = chunks.front().shape();
  shape[0] = n;
  for (const auto& c : chunks) values.insert(values.end(), c.data().begin(), c.data().end());
  return Tensor(shape, std::move(values));
}

int cmd_predict(const RunConfig& cfg, std::optional<std::int64_t> t_out_flag, std::ostream& out) {
  const fs::path dir = require_data_dir(cfg);
  const DatasetMeta meta = read_meta(dir / "meta.txt");
  const std::int64_t t_out = t_out_flag.value_or(meta.t_out);
  if (t_out < 1) fail(ErrorKind::kConfig, "key 't_out': must be >= 1");
  const ParamStore params = load_checkpoint(checkpoint_path(cfg), cfg.model);
  const Tensor windows = load_split(dir, "test");
  std::int64_t passes = 0;
  const Tensor pred = predict_split(cfg, params, windows, t_out, passes);
  fs::create_directories(cfg.out_dir);
  save_tensor(pred, fs::path(cfg.out_dir) / "predictions.mesp");
  out << "passes=" << passes << " predictions=" << shape_to_string(pred.shape()) << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& predictions, std::ostream& out) {
  const fs::path dir = require_data_dir(cfg);
  const DatasetMeta meta = read_meta(dir / "meta.txt");
  const Tensor windows = load_split(dir, "test");
  Tensor pred;
  if (predictions.empty()) {
    const ParamStore params = load_checkpoint(checkpoint_path(cfg), cfg.model);
    std::int64_t passes = 0;
    pred = predict_split(cfg, params, windows, meta.t_out, passes);
  } else {
    pred = load_tensor(predictions);
  }
  const std::int64_t t_in = meta.t_in;
  const std::int64_t t_out = pred.rank() == 5 ? pred.dim(1) : 0;
  if (t_out < 1 || windows.dim(1) < t_in + t_out) {
    fail(ErrorKind::kInvalidShape, "predictions " + shape_to_string(pred.shape()) +
                                       " do not fit test windows " +
                                       shape_to_string(windows.shape()));
  }
  const Tensor truth = slice_axis1(windows, t_in, t_in + t_out);
  const MetricReport report = evaluate(truth, pred, meta.lo, meta.hi);
  fs::create_directories(cfg.out_dir);
  const std::string text = format_report(report);
  std::ofstream(fs::path(cfg.out_dir) / "report.txt") << text;
  save_tensor(abs_error(truth, pred), fs::path(cfg.out_dir) / "abs_error.mesp");
  out << text;
  return 0;
}

int cmd_count(const RunConfig& cfg, const std::string& preset, std::ostream& out) {
  const std::int64_t params = count_params(cfg.model);
  const std::int64_t flops = count_flops(cfg.model);
  out << std::setprecision(6);
  out << "params=" << params << " (" << static_cast<double>(params) / 1e6 << "M)\n";
  out << "flops=" << flops << " (" << static_cast<double>(flops) / 1e9 << "G)\n";
  for (const auto& ref : kReferences) {
    if (preset != ref.preset) continue;
    out << "reference_params=" << ref.params_millions << "M ratio="
        << static_cast<double>(params) / (ref.params_millions * 1e6) << "\n";
    out << "reference_flops=" << ref.gflops << "G ratio="
        << static_cast<double>(flops) / (ref.gflops * 1e9) << "\n";
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, const GradCheckOptions& options, std::ostream& out) {
  const GradCheckReport report = gradcheck_model(cfg.model, options);
  double worst = 0.0;
  for (const auto& e : report.entries) worst = std::max(worst, e.rel_error);
  out << "checked=" << report.entries.size() << " passed=" << report.passed
      << " pass_fraction=" << report.pass_fraction() << " max_rel_error=" << worst << "\n";
  for (const auto& e : report.entries) {
    if (!e.pass) {
      out << "mismatch " << e.param << "[" << e.index << "] analytic=" << e.analytic
          << " numeric=" << e.numeric << "\n";
    }
  }
  return report.pass_fraction() >= options.required_pass_fraction ? 0 : 3;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MIMO-ESP spatiotemporal prediction", "mesp"};
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, predict_f, eval_f, count_f, grad_f;
  auto* gen = app.add_subcommand("gen-data", "Generate a moving-sprite dataset");
  add_common(gen, gen_f);
  auto* trn = app.add_subcommand("train", "Train and write params.ckpt and loss.csv");
  add_common(trn, train_f);
  auto* pred = app.add_subcommand("predict", "Autoregressive prediction on the test split");
  add_common(pred, predict_f);
  std::optional<std::int64_t> t_out;
  pred->add_option("--t-out", t_out, "Frames to predict (default: dataset t_out)");
  auto* evl = app.add_subcommand("eval", "Metric report on the test split");
  add_common(evl, eval_f);
  std::string predictions;
  evl->add_option("--predictions", predictions, "Use saved predictions instead of predicting");
  auto* cnt = app.add_subcommand("count", "Parameter and FLOP counts");
  add_common(cnt, count_f);
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  add_common(grad, grad_f);
  bool toy = false;
  GradCheckOptions grad_options;
  grad->add_flag("--toy", toy, "Use the toy preset");
  grad->add_option("--samples", grad_options.samples_per_tensor, "Scalars sampled per tensor");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      const RunConfig cfg = resolve(gen_f);
      cfg.validate();
      return cmd_gen_data(cfg, out);
    }
    if (*trn) {
      const RunConfig cfg = resolve(train_f);
      cfg.model.validate();
      cfg.train.validate();
      return cmd_train(cfg, out);
    }
    if (*pred) {
      const RunConfig cfg = resolve(predict_f);
      cfg.model.validate();
      return cmd_predict(cfg, t_out, out);
    }
    if (*evl) {
      const RunConfig cfg = resolve(eval_f);
      cfg.model.validate();
      return cmd_eval(cfg, predictions, out);
    }
    if (*cnt) {
      const RunConfig cfg = resolve(count_f);
      cfg.model.validate();
      return cmd_count(cfg, count_f.preset, out);
    }
    if (*grad) {
      if (toy) grad_f.preset = "toy";
      RunConfig cfg = resolve(grad_f);
      cfg.model.validate();
      grad_options.seed = cfg.train.seed;
      return cmd_gradcheck(cfg, grad_options, out);
    }
  } catch (const std::exception& e) {
    err << "mesp: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mesp
