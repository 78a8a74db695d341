#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mesp/autograd.hpp"
#include "mesp/error.hpp"
#include "mesp/rng.hpp"
#include "mesp/tensor.hpp"
#include "oracles.hpp"

using namespace mesp;

namespace {

Tensor iota(Shape shape) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(i);
  return t;
}

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an mesp::Error");
  return ErrorKind::kIo;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("construction validates shape and data length") {
  CHECK(Tensor({2, 3}).numel() == 6);
  CHECK(kind_of([] { Tensor({2, 0}); }) == ErrorKind::kInvalidShape);
  CHECK(kind_of([] { Tensor({2, 3}, std::vector<float>(5)); }) == ErrorKind::kInvalidShape);
  CHECK(row_major_strides({2, 3, 4}) == Shape{12, 4, 1});
  Tensor t = iota({2, 3, 4});
  CHECK(t.at({1, 2, 3}) == 23.0f);
  CHECK(t.at({1, 0, 2}) == 14.0f);
}

TEST_CASE("reshape relabels without moving data") {
  Tensor big({2, 10, 1, 64, 64});
  CHECK(reshape(big, {20, 1, 64, 64}).shape() == Shape{20, 1, 64, 64});

  Tensor one({1}, {4.5f});
  Tensor r = reshape(one, {1, 1, 1});
  CHECK(r.shape() == Shape{1, 1, 1});
  CHECK(r[0] == 4.5f);

  Tensor t = iota({2, 3});
  Tensor u = reshape(t, {3, 2});
  CHECK(u.shape() == Shape{3, 2});
  for (std::int64_t i = 0; i < 6; ++i) CHECK(u[i] == static_cast<float>(i));

  CHECK(reshape(reshape(t, {6}), {2, 3}).bitwise_equal(t));
  CHECK(kind_of([&] { reshape(t, {4, 2}); }) == ErrorKind::kInvalidShape);
}

TEST_CASE("permute examples") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor tt = permute(t, {1, 0});
  CHECK(tt.shape() == Shape{3, 2});
  CHECK(std::vector<float>(tt.data().begin(), tt.data().end()) ==
        std::vector<float>{1, 4, 2, 5, 3, 6});
  CHECK(permute(t, {0, 1}).bitwise_equal(t));
  CHECK(kind_of([&] { permute(t, {0, 0}); }) == ErrorKind::kInvalidArgument);
  CHECK(kind_of([&] { permute(t, {0}); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("permute element mapping and round trip") {
  Tensor t = oracle::random_normal({2, 3, 4, 5}, 1);
  const std::vector<std::int64_t> order{2, 0, 3, 1};
  Tensor p = permute(t, order);
  CHECK(p.shape() == Shape{4, 2, 5, 3});
  for (std::int64_t a = 0; a < 2; ++a)
    for (std::int64_t b = 0; b < 3; ++b)
      for (std::int64_t c = 0; c < 4; ++c)
        for (std::int64_t d = 0; d < 5; ++d) CHECK(p.at({c, a, d, b}) == t.at({a, b, c, d}));
  CHECK(permute(p, inverse_permutation(order)).bitwise_equal(t));

  std::vector<float> before(t.data().begin(), t.data().end());
  std::vector<float> after(p.data().begin(), p.data().end());
  std::sort(before.begin(), before.end());
  std::sort(after.begin(), after.end());
  CHECK(before == after);
}

TEST_CASE("elementwise algebra") {
  Tensor x = oracle::random_normal({3, 4}, 2);
  CHECK(add(x, Tensor::zeros({3, 4})).bitwise_equal(x));
  CHECK(hadamard(x, Tensor::full({3, 4}, 1.0f)).bitwise_equal(x));
  Tensor h = hadamard(Tensor({3}, {1, 2, 3}), Tensor({3}, {4, 5, 6}));
  CHECK(std::vector<float>(h.data().begin(), h.data().end()) == std::vector<float>{4, 10, 18});
  CHECK(kind_of([&] { add(x, Tensor::zeros({4, 3})); }) == ErrorKind::kInvalidShape);
}

TEST_CASE("slicing, concatenation and stacking") {
  Tensor t = iota({2, 5, 3});
  Tensor mid = slice_axis1(t, 1, 3);
  CHECK(mid.shape() == Shape{2, 2, 3});
  CHECK(mid.at({1, 0, 2}) == t.at({1, 1, 2}));
  Tensor joined = concat_axis1(std::vector<Tensor>{slice_axis1(t, 0, 1), slice_axis1(t, 1, 5)});
  CHECK(joined.bitwise_equal(t));
  CHECK(slice_rows(t, 1, 2).at({0, 4, 1}) == t.at({1, 4, 1}));
  Tensor s = stack(std::vector<Tensor>{iota({2}), iota({2})});
  CHECK(s.shape() == Shape{2, 2});
  CHECK(all_finite(t));
  t[3] = std::nanf("");
  CHECK_FALSE(all_finite(t));
}

TEST_CASE("rng reproducibility and distributions") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 10000; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs = differs || x != c.next_u64();
  }
  CHECK(differs);

  // splitmix64 reference values for seed 0.
  Rng z(0);
  CHECK(z.next_u64() == 0xE220A8397B1DCDAFull);
  CHECK(z.next_u64() == 0x6E789E6AA1B965F4ull);

  Rng r(7);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    const double g = r.normal();
    sum += g;
    sq += g * g;
    const double tn = r.truncated_normal(0.5);
    CHECK(std::fabs(tn) <= 1.0);
    const auto k = r.uniform_int(-2, 2);
    CHECK((k >= -2 && k <= 2));
  }
  CHECK(std::fabs(sum / n) < 0.03);
  CHECK(std::fabs(sq / n - 1.0) < 0.05);
}

}  // TEST_SUITE

TEST_SUITE("autograd") {

TEST_CASE("square example and unused leaves") {
  Tape tape;
  Var w = tape.leaf(Tensor({1}, {3.0f}));
  Var unused = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  auto grads = tape.backward(sum(hadamard(w, w)));
  REQUIRE(grads.size() == 2);
  CHECK(grads[0][0] == 6.0f);
  CHECK(grads[1].shape() == Shape{2, 2});
  for (float g : grads[1].data()) CHECK(g == 0.0f);
  CHECK(tape.grad(unused).shape() == Shape{2, 2});
}

TEST_CASE("backward rejects foreign and non-scalar losses") {
  Tape a, b;
  Var x = a.leaf(Tensor({1}, {1.0f}));
  Var y = b.leaf(Tensor({2}, {1.0f, 2.0f}));
  CHECK(kind_of([&] { a.backward(sum(y)); }) == ErrorKind::kInvalidState);
  CHECK(kind_of([&] { b.backward(y); }) == ErrorKind::kInvalidState);
  (void)x;
}

TEST_CASE("backward is linear in the loss") {
  const Tensor a0 = oracle::random_normal({3, 4}, 3);
  const Tensor b0 = oracle::random_normal({3, 4}, 4);
  auto grads_of = [&](float alpha, float beta) {
    Tape tape;
    Var a = tape.leaf(a0);
    Var b = tape.leaf(b0);
    Var l1 = sum(hadamard(a, square(b)));
    Var l2 = mean(abs(sub(a, b)));
    return tape.backward(add(scale(l1, alpha), scale(l2, beta)));
  };
  const auto g1 = grads_of(1.0f, 0.0f);
  const auto g2 = grads_of(0.0f, 1.0f);
  const auto g = grads_of(2.0f, -3.0f);
  for (std::size_t k = 0; k < g.size(); ++k)
    for (std::int64_t i = 0; i < g[k].numel(); ++i)
      CHECK(g[k][i] == doctest::Approx(2.0 * g1[k][i] - 3.0 * g2[k][i]).epsilon(1e-5));
}

TEST_CASE("shared subexpressions accumulate gradients") {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.5f, -2.0f}));
  Var y = add(hadamard(x, x), scale(x, 3.0f));
  auto g = tape.backward(sum(y));
  CHECK(g[0][0] == doctest::Approx(2 * 1.5 + 3));
  CHECK(g[0][1] == doctest::Approx(2 * -2.0 + 3));
}

TEST_CASE("finite differences agree for every tape operation") {
  using oracle::Vec;
  const Tensor a = oracle::random_normal({2, 3, 4, 5}, 10);
  const Tensor b = oracle::random_normal({2, 3, 4, 5}, 11);

  SUBCASE("reshape") {
    auto r = oracle::fd_check(
        {a}, [](Tape&, auto& v) { return reshape(v[0], {6, 20}); },
        [](const auto& p) { return p[0]; });
    CHECK(r.failed == 0);
  }
  SUBCASE("permute") {
    auto r = oracle::fd_check(
        {a}, [](Tape&, auto& v) { return permute(v[0], {0, 2, 1, 3}); },
        [](const auto& p) {
          Vec y(p[0].size());
          for (int n = 0; n < 2; ++n)
            for (int c = 0; c < 3; ++c)
              for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 5; ++w)
                  y[static_cast<std::size_t>(((n * 4 + h) * 3 + c) * 5 + w)] =
                      p[0][static_cast<std::size_t>(((n * 3 + c) * 4 + h) * 5 + w)];
          return y;
        });
    CHECK(r.failed == 0);
  }
  SUBCASE("add, sub, hadamard, scale") {
    auto r = oracle::fd_check(
        {a, b},
        [](Tape&, auto& v) { return scale(sub(add(v[0], hadamard(v[0], v[1])), v[1]), 1.5f); },
        [](const auto& p) {
          Vec y(p[0].size());
          for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.5 * (p[0][i] + p[0][i] * p[1][i] - p[1][i]);
          return y;
        });
    CHECK(r.failed == 0);
  }
  SUBCASE("abs and square away from zero") {
    Tensor away = a;
    for (std::int64_t i = 0; i < away.numel(); ++i) away[i] += away[i] < 0 ? -0.1f : 0.1f;
    auto r = oracle::fd_check(
        {away}, [](Tape&, auto& v) { return add(abs(v[0]), square(v[0])); },
        [](const auto& p) {
          Vec y(p[0].size());
          for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::fabs(p[0][i]) + p[0][i] * p[0][i];
          return y;
        });
    CHECK(r.failed == 0);
  }
  SUBCASE("sum and mean") {
    auto r = oracle::fd_check(
        {a}, [](Tape&, auto& v) { return add(sum(v[0]), scale(mean(v[0]), 7.0f)); },
        [](const auto& p) {
          double s = 0.0;
          for (double x : p[0]) s += x;
          return Vec{s + 7.0 * s / static_cast<double>(p[0].size())};
        });
    CHECK(r.failed == 0);
  }
}

}  // TEST_SUITE
