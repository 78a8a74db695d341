// Acceptance run: one [PASS]/[FAIL] line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mesp/data.hpp"
#include "mesp/gradcheck.hpp"
#include "mesp/metrics.hpp"
#include "mesp/model.hpp"
#include "mesp/nn_ops.hpp"
#include "mesp/run_config.hpp"
#include "mesp/tensor_io.hpp"
#include "mesp/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mesp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  if (limit_s > 0 && secs >= limit_s) {
    o.pass = false;
    o.detail += " [time limit " + std::to_string(static_cast<int>(limit_s)) + "s exceeded]";
  }
  if (!o.pass) ++failures;
  std::printf("[%s] %d %s: %s time=%.1fs\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(),
              secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Tensor run_stage(const ModelConfig& c, const ParamStore& p,
                 const std::function<Var(const Network&, Tape&)>& stage) {
  Tape tape(false);
  Network net(c, p, tape, false);
  return stage(net, tape).value();
}

Outcome gradient_correctness() {
  GradCheckOptions o;
  o.epsilon = 1e-3;
  o.rel_tol = 1e-3;
  o.samples_per_tensor = 10;
  o.required_pass_fraction = 0.99;
  const GradCheckReport r = gradcheck_model(model_preset("toy"), o);
  double worst = 0.0;
  for (const auto& e : r.entries) worst = std::max(worst, e.rel_error);
  return {r.pass_fraction() >= o.required_pass_fraction,
          "checked=" + std::to_string(r.entries.size()) + " passed=" + std::to_string(r.passed) +
              fmt(" pass_fraction=%.4f", r.pass_fraction()) + " (need >= 0.99 at rel_tol 1e-3, eps 1e-3)" +
              fmt(" max_rel_error=%.2e", worst)};
}

Outcome overfit() {
  const RunConfig cfg = run_preset("toy");
  std::vector<SampleBatch> rows;
  for (const Tensor& s : gen_moving_sprites(8, 8, 16, 16, 1, 0)) {
    rows.push_back(sliding_window(s, 4, 4).front());
  }
  TrainConfig t = cfg.train;
  t.batch_size = 8;
  t.epochs = 200;
  const TrainResult a = train(cfg.model, rows, t);
  const TrainResult b = train(cfg.model, rows, t);
  const double first = a.log.front().loss;
  const double last = a.log.back().loss;
  const double reduction = 1.0 - last / first;
  const bool same = a.log.back().loss == b.log.back().loss && a.params.bitwise_equal(b.params);
  return {a.log.size() == 200 && reduction >= 0.95 && same,
          "steps=" + std::to_string(a.log.size()) + fmt(" step1_loss=%.5f", first) +
              fmt(" step200_loss=%.5f", last) + fmt(" reduction=%.2f%%", 100 * reduction) +
              " (need >= 95%) repeat_bitwise_equal=" + (same ? "yes" : "no")};
}

Outcome parameter_count() {
  const double mm = static_cast<double>(count_params(model_preset("movingmnist")));
  const double tb = static_cast<double>(count_params(model_preset("taxibj")));
  const double re = static_cast<double>(count_params(model_preset("radarecho")));
  const double ref = 48.7e6;
  const bool ok = mm <= 1.5 * ref && mm >= ref / 1.5;
  return {ok, fmt("movingmnist=%.0f", mm) + fmt(" (%.3fx of 48.7M, need within 1.5x)", mm / ref) +
                  fmt("; informational taxibj=%.0f", tb) + fmt(" (%.3fx of 1.99M)", tb / 1.99e6) +
                  fmt(" radarecho=%.0f", re) + fmt(" (%.3fx of 0.77M)", re / 0.77e6)};
}

Outcome metric_oracles() {
  bool ok = true;
  std::string detail;
  double worst_ssim = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = oracle::random_uniform({3, 1, 16, 16}, seed);
    worst_ssim = std::max(worst_ssim, std::fabs(ssim(x, x) - 1.0));
    const ErrorMetrics e = error_metrics(x, x);
    ok &= e.mse_frame_sum == 0.0 && e.mse_pixel_mean == 0.0 && e.mae_frame_sum == 0.0 &&
          e.mae_pixel_mean == 0.0;
  }
  ok &= worst_ssim <= 1e-6;
  detail += fmt("max|ssim(x,x)-1|=%.1e (<= 1e-6)", worst_ssim);
  detail += std::string(" mse/mae zero on equality=") + (ok ? "yes" : "no");

  const SkillScores s = skill_scores({3, 5, 1, 1});
  const bool exact = s.hss == 28.0 / 48.0 && s.csi == 3.0 / 5.0;
  ok &= exact;
  detail += fmt(" hss=%.17g", s.hss) + fmt(" csi=%.17g", s.csi) + (exact ? " (exact)" : " (mismatch)");

  const Tensor y = oracle::random_uniform({4, 2, 1, 16, 16}, 11);
  const Tensor z = oracle::random_uniform({4, 2, 1, 16, 16}, 12);
  const MetricReport suite = evaluate(y, z, 0.0f, 255.0f);
  double hss = 0.0, csi = 0.0;
  for (double th : kDefaultThresholds) {
    const MetricReport single = evaluate(y, z, 0.0f, 255.0f, {th});
    hss += single.hss_avg;
    csi += single.csi_avg;
  }
  hss /= 3.0;
  csi /= 3.0;
  const double gap = std::max(std::fabs(hss - suite.hss_avg), std::fabs(csi - suite.csi_avg));
  ok &= gap <= 1e-12;
  detail += fmt(" threshold_average_gap=%.1e (<= 1e-12)", gap);
  return {ok, detail};
}

Outcome architecture_invariants() {
  std::string detail;
  bool ok = true;

  // Residual passthrough over the whole stack.
  ModelConfig c = model_preset("toy");
  c.n_block = 2;
  ParamStore p = init_params(c, 3);
  for (auto& e : p.entries()) {
    if (e.name.rfind("blocks.", 0) == 0) e.value = Tensor::zeros(e.value.shape());
  }
  const std::int64_t b = 2, t = c.in_time, d = c.embed_dim, h = c.grid_height(), w = c.grid_width();
  const Tensor emb = oracle::random_normal({b * t, d, h, w}, 4);
  const Tensor through = run_stage(c, p, [&](const Network& n, Tape& tp) {
    Var y = tp.constant(emb);
    for (std::int64_t k = 0; k < c.n_block; ++k) {
      y = sta_block(n, sa_block(n, y, k), k, b);
      y = reshape(feed_forward(n, reshape(y, {b, t * d, h, w}), k), {b * t, d, h, w});
    }
    return y;
  });
  const bool identity = through.bitwise_equal(emb);
  ok &= identity;
  detail += std::string("residual_identity=") + (identity ? "yes" : "no");

  // Depthwise isolation in SA and STA.
  const ParamStore q = init_params(c, 5);
  bool isolated = true;
  for (std::int64_t ch = 0; ch < d; ++ch) {
    const Tensor v = oracle::random_normal({t, d, h, w}, 6);
    Tensor bumped = v;
    bumped.at({1, ch, 2, 3}) += 1.0f;
    const Tensor s0 = run_stage(c, q, [&](const Network& n, Tape& tp) { return n.conv("blocks.0.sa.dw", tp.constant(v)); });
    const Tensor s1 = run_stage(c, q, [&](const Network& n, Tape& tp) { return n.conv("blocks.0.sa.dw", tp.constant(bumped)); });
    const Tensor x = oracle::random_normal({1, d, t, h * w}, 7);
    Tensor xb = x;
    xb.at({0, ch, 2, 5}) += 1.0f;
    const Tensor t0 = run_stage(c, q, [&](const Network& n, Tape& tp) { return dilated_time_conv(n, tp.constant(x), 0); });
    const Tensor t1 = run_stage(c, q, [&](const Network& n, Tape& tp) { return dilated_time_conv(n, tp.constant(xb), 0); });
    for (std::int64_t k = 0; k < d; ++k) {
      bool sa_changed = false, sta_changed = false;
      for (std::int64_t f = 0; f < t; ++f)
        for (std::int64_t i = 0; i < h * w; ++i) {
          sa_changed |= s0.at({f, k, i / w, i % w}) != s1.at({f, k, i / w, i % w});
          sta_changed |= t0.at({0, k, f, i}) != t1.at({0, k, f, i});
        }
      isolated &= sa_changed == (k == ch) && sta_changed == (k == ch);
    }
  }
  ok &= isolated;
  detail += std::string(" depthwise_isolation=") + (isolated ? "yes" : "no");

  // Time receptive field of the (1,2,4) chain.
  ModelConfig rf = model_preset("toy");
  rf.in_time = 24;
  rf.embed_dim = 2;
  rf.dilations = {1, 2, 4};
  ParamStore rp = init_params(rf, 8);
  for (auto& e : rp.entries()) {
    if (e.name.rfind("blocks.0.sta.dwd.", 0) != 0) continue;
    const bool bias = e.name.ends_with(".bias");
    for (std::int64_t i = 0; i < e.value.numel(); ++i) e.value[i] = bias ? 0.0f : 0.1f + std::fabs(e.value[i]);
  }
  bool field = true;
  std::int64_t reach = 0;
  for (std::int64_t t0 : {0, 7, 12, 23}) {
    Tensor impulse({1, 2, 24, 6});
    impulse.at({0, 0, t0, 3}) = 1.0f;
    const Tensor out = run_stage(rf, rp, [&](const Network& n, Tape& tp) { return dilated_time_conv(n, tp.constant(impulse), 0); });
    for (std::int64_t f = 0; f < 24; ++f) {
      bool hit = false;
      for (std::int64_t j = 0; j < 6; ++j) hit |= out.at({0, 0, f, j}) != 0.0f;
      if (hit) reach = std::max(reach, std::abs(f - t0));
      field &= hit == (std::abs(f - t0) <= 7);
    }
  }
  ok &= field;
  detail += " receptive_field=|dt|<=" + std::to_string(reach) + (field ? " (exactly 7)" : " (expected 7)");

  // Round trips.
  const Tensor z = oracle::random_normal({2, 12, 3, 5}, 9);
  const bool shuffle = pixel_unshuffle(pixel_shuffle(z, 2), 2).bitwise_equal(z);
  const Tensor r5 = oracle::random_normal({2, 3, 4, 5, 6}, 10);
  const bool reshaped = reshape(reshape(r5, {6, 20, 6}), r5.shape()).bitwise_equal(r5) &&
                        permute(permute(r5, {0, 2, 1, 3, 4}), {0, 2, 1, 3, 4}).bitwise_equal(r5);
  ok &= shuffle && reshaped;
  detail += std::string(" shuffle_round_trip=") + (shuffle ? "yes" : "no") +
            " reshape_round_trip=" + (reshaped ? "yes" : "no");
  return {ok, detail};
}

Outcome autoregressive_contract() {
  ModelConfig c = model_preset("toy");
  c.in_time = 5;
  const ParamStore p = init_params(c, 2);
  const Tensor x = oracle::random_uniform({2, 5, 1, 16, 16}, 3);
  std::int64_t passes = 0;
  const Tensor y = predict_autoregressive(p, c, x, 10, &passes);
  const Tensor first = forward(c, p, x);
  const Tensor second = forward(c, p, first);
  const bool prefix = slice_axis1(y, 0, 5).bitwise_equal(first);
  const bool tail = slice_axis1(y, 5, 10).bitwise_equal(second);
  return {passes == 2 && prefix && tail && y.dim(1) == 10,
          "T=5 t_out=10 passes=" + std::to_string(passes) + " (need 2) frames=" +
              std::to_string(y.dim(1)) + " prefix_bitwise=" + (prefix ? "yes" : "no") +
              " second_window_bitwise=" + (tail ? "yes" : "no")};
}

Outcome io_bit_exactness() {
  testutil::TempDir dir;
  const Tensor t = oracle::random_normal({20, 1, 64, 64}, 1);
  save_tensor(t, dir / "t.mesp");
  const bool tensor_ok = load_tensor(dir / "t.mesp").bitwise_equal(t);

  const ModelConfig c = model_preset("toy");
  const ParamStore p = init_params(c, 4);
  save_checkpoint(p, dir / "p.ckpt");
  const ParamStore a = load_checkpoint(dir / "p.ckpt", c);
  const ParamStore b = load_checkpoint(dir / "p.ckpt", c);
  const bool ckpt_ok = a.bitwise_equal(p);
  const Tensor x = oracle::random_uniform({3, 4, 1, 16, 16}, 5);
  const bool pred_ok =
      predict_autoregressive(a, c, x, 6).bitwise_equal(predict_autoregressive(b, c, x, 6));
  return {tensor_ok && ckpt_ok && pred_ok,
          std::string("tensor_round_trip=") + (tensor_ok ? "yes" : "no") +
              " checkpoint_round_trip=" + (ckpt_ok ? "yes" : "no") +
              " repeated_load_predictions_equal=" + (pred_ok ? "yes" : "no")};
}

}  // namespace

int main() {
  report(1, "gradient correctness", 120, gradient_correctness);
  report(2, "overfit oracle", 300, overfit);
  report(3, "parameter count", 0, parameter_count);
  report(4, "metric oracles", 60, metric_oracles);
  report(5, "architecture invariants", 0, architecture_invariants);
  report(6, "autoregressive contract", 0, autoregressive_contract);
  report(7, "I/O bit-exactness", 0, io_bit_exactness);
  std::printf("%d of 7 criteria passed\n", 7 - failures);
  return failures == 0 ? 0 : 1;
}
