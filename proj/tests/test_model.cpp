#include <doctest.h>

#include <cmath>
#include <functional>
#include <set>

#include "mesp/error.hpp"
#include "mesp/gradcheck.hpp"
#include "mesp/model.hpp"
#include "mesp/reference.hpp"
#include "mesp/rng.hpp"
#include "oracles.hpp"

using namespace mesp;

namespace {

using Stage = std::function<Var(const Network&, Tape&)>;

Tensor run_stage(const ModelConfig& c, const ParamStore& p, const Stage& stage) {
  Tape tape(false);
  Network net(c, p, tape, false);
  return stage(net, tape).value();
}

std::string config_error(const ModelConfig& c) {
  try {
    c.validate();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kConfig) return e.what();
  }
  return "";
}

void zero_matching(ParamStore& p, const std::string& prefix) {
  for (auto& e : p.entries()) {
    if (e.name.rfind(prefix, 0) == 0) e.value = Tensor::zeros(e.value.shape());
  }
}

void randomize(ParamStore& p, const std::string& prefix, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& e : p.entries()) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    for (std::int64_t i = 0; i < e.value.numel(); ++i) {
      e.value[i] = static_cast<float>(scale * rng.normal());
    }
  }
}

bool all_zero(const Tensor& t) {
  for (float v : t.data()) {
    if (v != 0.0f) return false;
  }
  return true;
}

const LayerSpec& find_layer(const std::vector<LayerSpec>& plan, const std::string& name) {
  for (const auto& s : plan) {
    if (s.name == name) return s;
  }
  FAIL("missing layer " << name);
  return plan.front();
}

ModelConfig small_config(std::int64_t t, std::int64_t d, std::int64_t hw) {
  ModelConfig c = model_preset("toy");
  c.in_time = t;
  c.embed_dim = d;
  c.embed_hid = 4;
  c.height = hw;
  c.width = hw;
  return c;
}

oracle::Vec vec_of(const ParamStore& p, const std::string& name) {
  return oracle::to_vec(p.get(name));
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation names the offending field") {
  ModelConfig c = model_preset("toy");
  CHECK(config_error(c).empty());
  auto expect = [&](const std::function<void(ModelConfig&)>& edit, const char* field) {
    ModelConfig bad = c;
    edit(bad);
    const std::string msg = config_error(bad);
    CHECK_MESSAGE(msg.find(field) != std::string::npos, msg);
  };
  expect([](ModelConfig& m) { m.patch_size = 3; }, "patch_size");
  expect([](ModelConfig& m) { m.height = 15; }, "height");
  expect([](ModelConfig& m) { m.width = 6; m.patch_size = 4; }, "width");
  expect([](ModelConfig& m) { m.dilations = {2, 4}; }, "dilations");
  expect([](ModelConfig& m) { m.dilations = {1, 2, 2}; }, "dilations");
  expect([](ModelConfig& m) { m.dilations = {}; }, "dilations");
  expect([](ModelConfig& m) { m.in_time = 0; }, "in_time");
  expect([](ModelConfig& m) { m.dw_kernel = 4; }, "dw_kernel");
  expect([](ModelConfig& m) { m.embed_dim = 0; }, "embed_dim");
  CHECK_THROWS_AS(model_preset("nope"), Error);
}

TEST_CASE("presets carry the dataset hyperparameters") {
  const ModelConfig mm = model_preset("movingmnist");
  CHECK(mm.n_block == 8);
  CHECK(mm.patch_size == 2);
  CHECK(mm.embed_hid == 64);
  CHECK(mm.embed_dim == 128);
  CHECK(mm.dilations == std::vector<std::int64_t>{1, 2, 4});
  CHECK(mm.in_time == 10);

  const ModelConfig tb = model_preset("taxibj");
  CHECK(tb.n_block == 4);
  CHECK(tb.patch_size == 4);
  CHECK(tb.embed_hid == 32);
  CHECK(tb.embed_dim == 64);
  CHECK(tb.dilations == std::vector<std::int64_t>{1, 2});
  CHECK(tb.in_channels == 2);
  CHECK(tb.in_time == 4);

  const ModelConfig re = model_preset("radarecho");
  CHECK(re.n_block == 4);
  CHECK(re.patch_size == 4);
  CHECK(re.embed_hid == 128);
  CHECK(re.embed_dim == 128);
  CHECK(re.dilations == std::vector<std::int64_t>{1, 2});
  CHECK(re.in_time == 5);
  CHECK(re.height == 100);
}

TEST_CASE("initialization rules") {
  const ModelConfig c = model_preset("toy");
  const ParamStore a = init_params(c, 7);
  CHECK(a.bitwise_equal(init_params(c, 7)));
  CHECK_FALSE(a.bitwise_equal(init_params(c, 8)));

  std::set<std::string> names;
  for (const auto& e : a.entries()) {
    CHECK(names.insert(e.name).second);
    const std::string tail = e.name.substr(e.name.rfind('.') + 1);
    if (tail == "gamma") {
      for (float v : e.value.data()) CHECK(v == 1.0f);
    } else if (tail == "bias" || tail == "beta") {
      CHECK(all_zero(e.value));
    } else {
      REQUIRE(tail == "weight");
      const Shape& s = e.value.shape();
      const double sigma = std::sqrt(2.0 / static_cast<double>(s[1] * s[2] * s[3]));
      double sq = 0.0;
      for (float v : e.value.data()) {
        CHECK(std::fabs(v) <= 2.0 * sigma + 1e-7);
        sq += static_cast<double>(v) * v;
      }
      if (e.value.numel() >= 1000) {
        // Truncation at 2 sigma shrinks the standard deviation to about 0.88 sigma.
        const double sd = std::sqrt(sq / static_cast<double>(e.value.numel()));
        CHECK(sd == doctest::Approx(0.88 * sigma).epsilon(0.1));
      }
    }
  }
  const auto layout = param_layout(c);
  REQUIRE(layout.size() == a.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    CHECK(layout[i].first == a.entries()[i].name);
    CHECK(layout[i].second == a.entries()[i].value.shape());
  }
}

TEST_CASE("parameter counts") {
  const ModelConfig c = model_preset("movingmnist");
  const auto plan = layer_plan(c);
  const std::int64_t d = c.embed_dim;
  CHECK(find_layer(plan, "blocks.0.sa.attn").param_count() == d * d + d);
  CHECK(find_layer(plan, "blocks.0.sta.dwd.1").param_count() == 9 * d + d);
  CHECK(find_layer(plan, "blocks.0.sa.dw").param_count() == 49 * d + d);

  for (const char* name : {"toy", "taxibj"}) {
    const ModelConfig p = model_preset(name);
    CHECK(count_params(p) == init_params(p, 0).total_elements());
  }
  std::int64_t from_layout = 0;
  for (const auto& [n, s] : param_layout(c)) from_layout += shape_numel(s);
  const std::int64_t total = count_params(c);
  CHECK(total == from_layout);
  CHECK(static_cast<double>(total) <= 48.7e6 * 1.5);
  CHECK(static_cast<double>(total) >= 48.7e6 / 1.5);
}

TEST_CASE("flop count grows linearly with batch and blocks") {
  ModelConfig c = model_preset("toy");
  const std::int64_t one = count_flops(c, 1);
  CHECK(count_flops(c, 3) == 3 * one);
  ModelConfig two = c;
  two.n_block = 2;
  ModelConfig three = c;
  three.n_block = 3;
  CHECK(count_flops(three) - count_flops(two) == count_flops(two) - one);
  // A single 1x1 D->D conv over the embedded grid: 2*D*D MACs-as-FLOPs plus bias.
  const auto plan = layer_plan(c);
  const auto& attn = find_layer(plan, "blocks.0.sa.attn");
  const std::int64_t hw = c.grid_height() * c.grid_width();
  CHECK(attn.flops() == c.in_time * hw * (2 * c.embed_dim * c.embed_dim + c.embed_dim));
}

TEST_CASE("patch embed shapes and zero network") {
  const ModelConfig mm = model_preset("movingmnist");
  ParamStore p = init_params(mm, 1);
  const Tensor x = oracle::random_uniform({20, 1, 64, 64}, 2);
  const Tensor y = run_stage(mm, p, [&](const Network& n, Tape& t) {
    return patch_embed(n, t.constant(x));
  });
  CHECK(y.shape() == Shape{20, 128, 32, 32});

  zero_matching(p, "embed.");
  CHECK(all_zero(run_stage(mm, p, [&](const Network& n, Tape& t) {
    return patch_embed(n, t.constant(x));
  })));

  const ModelConfig tb = model_preset("taxibj");
  const ParamStore q = init_params(tb, 1);
  const Tensor xt = oracle::random_uniform({16, 2, 32, 32}, 3);
  CHECK(run_stage(tb, q, [&](const Network& n, Tape& t) {
          return patch_embed(n, t.constant(xt));
        }).shape() == Shape{16, 64, 8, 8});
  CHECK_THROWS_AS(run_stage(tb, q, [&](const Network& n, Tape& t) {
                    return patch_embed(n, t.constant(Tensor({16, 2, 30, 32})));
                  }),
                  Error);
}

TEST_CASE("patch back shape, zero input and round trip") {
  const ModelConfig mm = model_preset("movingmnist");
  const ParamStore p = init_params(mm, 4);
  const Tensor y = run_stage(mm, p, [&](const Network& n, Tape& t) {
    return patch_back(n, t.constant(Tensor({20, 128, 32, 32})));
  });
  CHECK(y.shape() == Shape{20, 1, 64, 64});
  CHECK(all_zero(y));

  const ModelConfig c = model_preset("toy");
  const ParamStore q = init_params(c, 5);
  const Tensor x = oracle::random_uniform({3, 1, 16, 16}, 6);
  CHECK(run_stage(c, q, [&](const Network& n, Tape& t) {
          return patch_back(n, patch_embed(n, t.constant(x)));
        }).shape() == x.shape());
  CHECK_THROWS_AS(run_stage(c, q, [&](const Network& n, Tape& t) {
                    return patch_back(n, t.constant(Tensor({3, 16, 4, 8})));
                  }),
                  Error);
}

TEST_CASE("zero block weights give identity blocks") {
  const ModelConfig c = model_preset("toy");
  ParamStore p = init_params(c, 9);
  for (auto& e : p.entries()) {
    if (e.value.rank() == 1) e.value = oracle::random_normal(e.value.shape(), 3, 0.1);
  }
  const std::int64_t b = 2, t = c.in_time, d = c.embed_dim, h = c.grid_height(), w = c.grid_width();
  const Tensor emb = oracle::random_normal({b * t, d, h, w}, 11);
  const Tensor ff_in = reshape(emb, {b, t * d, h, w});

  ParamStore z = p;
  zero_matching(z, "blocks.");
  CHECK(run_stage(c, z, [&](const Network& n, Tape& tp) {
          return sa_block(n, tp.constant(emb), 0);
        }).bitwise_equal(emb));
  CHECK(run_stage(c, z, [&](const Network& n, Tape& tp) {
          return sta_block(n, tp.constant(emb), 0, b);
        }).bitwise_equal(emb));
  CHECK(run_stage(c, z, [&](const Network& n, Tape& tp) {
          return feed_forward(n, tp.constant(ff_in), 0);
        }).bitwise_equal(ff_in));

  // The whole stack collapses to patch_back(patch_embed(x)).
  ModelConfig deep = c;
  deep.n_block = 3;
  ParamStore dz = init_params(deep, 10);
  zero_matching(dz, "blocks.");
  const Tensor x = oracle::random_uniform({b, t, 1, 16, 16}, 12);
  const Tensor full = forward(deep, dz, x);
  const Tensor direct = run_stage(deep, dz, [&](const Network& n, Tape& tp) {
    return patch_back(n, patch_embed(n, tp.constant(reshape(x, {b * t, 1, 16, 16}))));
  });
  CHECK(full.bitwise_equal(reshape(direct, x.shape())));

  // Only the output projection zeroed is already enough.
  ParamStore pz = p;
  zero_matching(pz, "blocks.0.sa.proj");
  CHECK(run_stage(c, pz, [&](const Network& n, Tape& tp) {
          return sa_block(n, tp.constant(emb), 0);
        }).bitwise_equal(emb));

  CHECK_THROWS_AS(run_stage(c, p, [&](const Network& n, Tape& tp) {
                    return sta_block(n, tp.constant(emb), 0, 3);
                  }),
                  Error);
}

TEST_CASE("time-dilated layers follow the dilation list") {
  const ModelConfig mm = model_preset("movingmnist");
  const auto plan = layer_plan(mm);
  int dwd = 0;
  for (const auto& s : plan) {
    if (s.name.rfind("blocks.0.sta.dwd.", 0) == 0) ++dwd;
  }
  CHECK(dwd == 3);
  const std::int64_t dil[] = {1, 2, 4};
  for (int i = 0; i < 3; ++i) {
    const auto& s = find_layer(plan, "blocks.0.sta.dwd." + std::to_string(i));
    CHECK(s.kernel_h == 3);
    CHECK(s.kernel_w == 3);
    CHECK(s.options.groups == 128);
    CHECK(s.options.dilation == std::array<std::int64_t, 2>{dil[i], 1});
    CHECK(s.options.padding == std::array<std::int64_t, 2>{dil[i], 1});
  }
  bool fc1 = false;
  for (const auto& [name, shape] : param_layout(mm)) {
    if (name == "blocks.0.ff.fc1.weight") {
      fc1 = true;
      CHECK(shape == Shape{2560, 1280, 1, 1});
    }
  }
  CHECK(fc1);
}

TEST_CASE("SA block matches a hand composition") {
  const ModelConfig c = small_config(1, 2, 4);
  ParamStore p = init_params(c, 1);
  randomize(p, "blocks.0.sa.", 21, 0.3);
  const Tensor x = oracle::random_normal({1, 2, 2, 2}, 22);
  const Tensor got = run_stage(c, p, [&](const Network& n, Tape& t) {
    return sa_block(n, t.constant(x), 0);
  });

  const Shape s{1, 2, 2, 2};
  const std::string pre = "blocks.0.sa.";
  auto pw = [&](const oracle::Vec& v, const std::string& layer) {
    const oracle::Vec b = vec_of(p, pre + layer + ".bias");
    return oracle::conv2d(v, s, vec_of(p, pre + layer + ".weight"), Shape{2, 2, 1, 1}, &b,
                          Conv2dOptions{});
  };
  const oracle::Vec xv = oracle::to_vec(x);
  const oracle::Vec x_att =
      oracle::layer_norm(xv, s, vec_of(p, pre + "norm.gamma"), vec_of(p, pre + "norm.beta"), kLayerNormEps);
  const oracle::Vec a = pw(x_att, "attn");
  Conv2dOptions dw;
  dw.padding = {3, 3};
  dw.groups = 2;
  const oracle::Vec dwb = vec_of(p, pre + "dw.bias");
  const oracle::Vec v = oracle::conv2d(oracle::gelu(pw(x_att, "value")), s,
                                       vec_of(p, pre + "dw.weight"), Shape{2, 1, 7, 7}, &dwb, dw);
  oracle::Vec av(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) av[i] = a[i] * v[i];
  oracle::Vec expected = pw(av, "proj");
  for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += xv[i];

  CHECK(oracle::max_abs_diff(got, expected) < 1e-5);
}

TEST_CASE("feed forward matches a hand computation") {
  ModelConfig c = small_config(1, 2, 2);
  c.patch_size = 2;
  ParamStore p = init_params(c, 1);
  randomize(p, "blocks.0.ff.", 31, 0.5);
  const Tensor x({1, 2, 1, 1}, {0.7f, -1.3f});
  const Tensor got = run_stage(c, p, [&](const Network& n, Tape& t) {
    return feed_forward(n, t.constant(x), 0);
  });
  const Tensor& w1 = p.get("blocks.0.ff.fc1.weight");  // (4, 2, 1, 1)
  const Tensor& b1 = p.get("blocks.0.ff.fc1.bias");
  const Tensor& w2 = p.get("blocks.0.ff.fc2.weight");  // (2, 4, 1, 1)
  const Tensor& b2 = p.get("blocks.0.ff.fc2.bias");
  double hidden[4];
  for (int j = 0; j < 4; ++j) {
    hidden[j] = oracle::gelu(double(w1[j * 2]) * x[0] + double(w1[j * 2 + 1]) * x[1] + b1[j]);
  }
  for (int i = 0; i < 2; ++i) {
    double out = b2[i] + x[i];
    for (int j = 0; j < 4; ++j) out += double(w2[i * 4 + j]) * hidden[j];
    CHECK(got[i] == doctest::Approx(out).epsilon(1e-6));
  }
}

TEST_CASE("depthwise layers do not mix channels") {
  const ModelConfig c = small_config(6, 4, 8);
  const ParamStore p = init_params(c, 3);
  const std::int64_t d = c.embed_dim, h = c.grid_height(), w = c.grid_width(), t = c.in_time;
  for (std::int64_t ch = 0; ch < d; ++ch) {
    const Tensor v = oracle::random_normal({t, d, h, w}, 40);
    Tensor bumped = v;
    for (std::int64_t i = 0; i < t; ++i) bumped.at({i, ch, 1, 2}) += 1.0f;
    auto dw = [&](const Tensor& in) {
      return run_stage(c, p, [&](const Network& n, Tape& tp) {
        return n.conv("blocks.0.sa.dw", tp.constant(in));
      });
    };
    const Tensor base = dw(v), moved = dw(bumped);
    for (std::int64_t i = 0; i < t; ++i)
      for (std::int64_t k = 0; k < d; ++k) {
        bool changed = false;
        for (std::int64_t r = 0; r < h; ++r)
          for (std::int64_t q = 0; q < w; ++q) changed |= base.at({i, k, r, q}) != moved.at({i, k, r, q});
        CHECK(changed == (k == ch));
      }

    const Tensor s = oracle::random_normal({2, d, t, h * w}, 41);
    Tensor sb = s;
    sb.at({1, ch, 3, 5}) += 1.0f;
    auto dwd = [&](const Tensor& in) {
      return run_stage(c, p, [&](const Network& n, Tape& tp) {
        return dilated_time_conv(n, tp.constant(in), 0);
      });
    };
    const Tensor sbase = dwd(s), smoved = dwd(sb);
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t k = 0; k < d; ++k) {
        bool changed = false;
        for (std::int64_t i = 0; i < t; ++i)
          for (std::int64_t j = 0; j < h * w; ++j) changed |= sbase.at({n, k, i, j}) != smoved.at({n, k, i, j});
        CHECK(changed == (n == 1 && k == ch));
      }
  }
}

TEST_CASE("dilated time receptive field spans seven frames each way") {
  ModelConfig c = small_config(20, 2, 4);
  c.dilations = {1, 2, 4};
  ParamStore p = init_params(c, 5);
  for (auto& e : p.entries()) {
    if (e.name.rfind("blocks.0.sta.dwd.", 0) != 0) continue;
    const bool bias = e.name.ends_with(".bias");
    for (std::int64_t i = 0; i < e.value.numel(); ++i) {
      e.value[i] = bias ? 0.0f : 0.1f + std::fabs(e.value[i]);
    }
  }
  const std::int64_t t = 20, hw = 5;
  for (std::int64_t t0 : {0, 3, 10, 19}) {
    Tensor impulse({1, 2, t, hw});
    impulse.at({0, 1, t0, 2}) = 1.0f;
    const Tensor out = run_stage(c, p, [&](const Network& n, Tape& tp) {
      return dilated_time_conv(n, tp.constant(impulse), 0);
    });
    for (std::int64_t i = 0; i < t; ++i) {
      bool reached = false;
      for (std::int64_t j = 0; j < hw; ++j) reached |= out.at({0, 1, i, j}) != 0.0f;
      CHECK_MESSAGE(reached == (std::abs(i - t0) <= 7), "t0=" << t0 << " t=" << i);
    }
  }
}

TEST_CASE("forward shapes and determinism") {
  const ModelConfig tb = model_preset("taxibj");
  const ParamStore p = init_params(tb, 1);
  const Tensor x = oracle::random_uniform({1, 4, 2, 32, 32}, 2);
  const Tensor y = forward(tb, p, x);
  CHECK(y.shape() == x.shape());
  CHECK(all_finite(y));
  CHECK(forward(tb, p, x).bitwise_equal(y));

  ModelConfig mm = model_preset("movingmnist");
  mm.n_block = 1;  // one block keeps the full-resolution check fast
  const Tensor xm = oracle::random_uniform({1, 10, 1, 64, 64}, 3);
  CHECK(forward(mm, init_params(mm, 1), xm).shape() == xm.shape());

  CHECK_THROWS_AS(forward(tb, p, Tensor({1, 5, 2, 32, 32})), Error);
}

TEST_CASE("float forward agrees with the double reference") {
  const ModelConfig c = model_preset("toy");
  ParamStore p = init_params(c, 2);
  for (auto& e : p.entries()) {
    if (e.value.rank() == 1) e.value = oracle::random_normal(e.value.shape(), 13, 0.1);
  }
  const Tensor x = oracle::random_uniform({2, c.in_time, 1, 16, 16}, 14);
  const Tensor y = forward(c, p, x);
  const std::vector<double> ref =
      reference_forward(c, to_reference(p), oracle::to_vec(x), 2);
  CHECK(oracle::max_abs_diff(y, ref) <= 1e-4 * std::max(1.0, oracle::max_abs(ref)));
}

TEST_CASE("mean output gradient matches finite differences") {
  ModelConfig c = small_config(2, 8, 8);
  c.n_block = 1;
  c.embed_hid = 8;
  ParamStore p = init_params(c, 3);
  Rng rng(17);
  for (auto& e : p.entries()) {
    if (e.value.rank() == 1) {
      for (std::int64_t i = 0; i < e.value.numel(); ++i) e.value[i] += float(0.1 * rng.normal());
    }
  }
  const Tensor x = oracle::random_normal({1, 2, 1, 8, 8}, 18);

  std::vector<Tensor> grads;
  {
    Tape tape;
    Network net(c, p, tape, true);
    grads = tape.backward(mean(forward(net, tape.constant(x))));
  }

  ReferenceParams ref = to_reference(p);
  const std::vector<double> xv = oracle::to_vec(x);
  auto mean_out = [&] {
    const auto out = reference_forward(c, ref, xv, 1);
    double s = 0.0;
    for (double v : out) s += v;
    return s / static_cast<double>(out.size());
  };
  const double eps = 1e-3;
  int checked = 0, passed = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const auto& e = p.entries()[k];
    const std::int64_t idx = rng.uniform_int(0, e.value.numel() - 1);
    double& slot = ref.at(e.name)[static_cast<std::size_t>(idx)];
    const double orig = slot;
    slot = orig + eps;
    const double up = mean_out();
    slot = orig - eps;
    const double down = mean_out();
    slot = orig;
    const double numeric = (up - down) / (2 * eps);
    const double err = relative_error(grads[k][idx], numeric);
    ++checked;
    if (err <= 1e-3) ++passed;
    CHECK_MESSAGE(err <= 1e-3, e.name << "[" << idx << "] analytic " << grads[k][idx]
                                      << " numeric " << numeric);
  }
  CHECK(checked == static_cast<int>(p.size()));
  CHECK(passed == checked);
}

}  // TEST_SUITE
