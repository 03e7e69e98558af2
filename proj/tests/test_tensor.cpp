#include <cmath>

#include "ban/checkpoint.hpp"
#include "ban/error.hpp"
#include "ban/grad_check.hpp"
#include "ban/ops.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace ban;
using ban::test::random_separated;
using ban::test::random_tensor;
using ban::test::weighted_sum;

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.at({1, 2}) == 6);
  CHECK(t.sum() == 21);
  CHECK(t.reshaped({3, 2}).at({2, 0}) == 5);
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2}, {1, 2, 3}), DimensionError);
  Tensor bad({2}, {1, NAN});
  CHECK_FALSE(bad.all_finite());
  CHECK_THROWS_AS(require_finite(bad, "x"), NumericError);
}

TEST_CASE("conv2d shapes and identity") {
  Rng rng(1);
  Tensor x = random_tensor({1, 3, 16, 16}, rng);
  Tensor w = random_tensor({8, 3, 3, 3}, rng);
  Tensor b({8});
  CHECK(conv2d(x, w, b, {1, 1, 1}).shape() == Shape{1, 8, 16, 16});

  Tensor eye({3, 3, 1, 1});
  for (std::size_t i = 0; i < 3; ++i) eye.at({i, i, 0, 0}) = 1;
  CHECK(conv2d(x, eye, Tensor({3})) == x);
}

TEST_CASE("conv2d dilated impulse response") {
  Tensor x({1, 1, 9, 9});
  x.at({0, 0, 4, 4}) = 1;
  Tensor w({1, 1, 3, 3}, 1);
  Tensor y = conv2d(x, w, Tensor({1}), {1, 2, 2});
  REQUIRE(y.shape() == Shape{1, 1, 9, 9});
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t c = 0; c < 9; ++c) {
      const long dr = static_cast<long>(r) - 4, dc = static_cast<long>(c) - 4;
      const bool tap = (dr == -2 || dr == 0 || dr == 2) && (dc == -2 || dc == 0 || dc == 2);
      CHECK(y.at({0, 0, r, c}) == (tap ? 1 : 0));
    }
}

TEST_CASE("conv2d matches direct loops") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int stride = 1 + static_cast<int>(rng.uniform_int(0, 1));
    const int pad = static_cast<int>(rng.uniform_int(0, 2));
    const int dil = 1 + static_cast<int>(rng.uniform_int(0, 1));
    const std::size_t kk = static_cast<std::size_t>(rng.uniform_int(1, 3));
    Tensor x = random_tensor({1, 2, 7, 8}, rng);
    Tensor w = random_tensor({3, 2, kk, kk}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor fast = conv2d(x, w, b, {stride, pad, dil});
    Tensor slow = ban::test::naive_conv(x, w, b, stride, pad, dil);
    REQUIRE(fast.shape() == slow.shape());
    for (std::size_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv geometry errors") {
  CHECK_THROWS_AS(conv_output_extent(2, 5, {1, 0, 1}), GeometryError);
  Tensor x({1, 2, 4, 4});
  CHECK_THROWS_AS(conv2d(x, Tensor({1, 3, 3, 3}), Tensor({1})), DimensionError);
}

TEST_CASE("relu values and gradient") {
  Tape tape;
  Var x = tape.parameter(Tensor({3}, {-1, 0, 2}));
  Var y = ops::relu(tape, x);
  CHECK(tape.value(y) == Tensor({3}, {0, 0, 2}));

  Tape t2;
  Var a = t2.parameter(Tensor({1}, {3}));
  Var r = ops::relu(t2, a);
  t2.backward(r, Tensor({1}, {5}));
  CHECK(t2.grad(a)[0] == 5);

  Tape t3;
  Var n = t3.parameter(Tensor({4}, {-1, -2, -3, -4}));
  Var rn = ops::relu(t3, n);
  CHECK(t3.value(rn).max_abs() == 0);
  t3.backward(rn);
  CHECK(t3.grad(n).max_abs() == 0);
}

TEST_CASE("fully connected hand arithmetic") {
  Tensor out = fully_connected(Tensor({1, 2}, {1, 2}), Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {3, 3}));
  CHECK(out == Tensor({1, 2}, {4, 5}));
}

TEST_CASE("concat channels") {
  Tensor a({1, 256, 1, 1}, 1), b({1, 256, 1, 1}, 2);
  const Tensor both[] = {a, b};
  CHECK(concat_channels(both).shape() == Shape{1, 512, 1, 1});
  const Tensor one[] = {a};
  CHECK(concat_channels(one) == a);

  Tape tape;
  const Var vars[] = {tape.parameter(Tensor({1, 2, 2, 2}, 1)), tape.parameter(Tensor({1, 3, 2, 2}, 1))};
  Var c = ops::concat_channels(tape, vars);
  tape.backward(c);
  CHECK(tape.grad(vars[0]) == Tensor({1, 2, 2, 2}, 1));
  CHECK(tape.grad(vars[1]) == Tensor({1, 3, 2, 2}, 1));
}

TEST_CASE("tape allows a single backward pass") {
  Tape tape;
  Var x = tape.parameter(Tensor({1}, {2}));
  Var y = ops::sum(tape, x);
  tape.backward(y);
  CHECK_THROWS(tape.backward(y));
}

TEST_CASE("grad check is exact for a linear function") {
  Rng rng(3);
  Tensor r = random_tensor({5}, rng);
  const double err = grad_check(
      [&](Tape& t, std::span<const Var> p) { return weighted_sum(t, p[0], r); }, {random_tensor({5}, rng)}, 1e-5);
  CHECK(err < 1e-10);
}

TEST_CASE("grad check: conv, relu, fc composite") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    std::vector<Tensor> params{random_separated({1, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng),
                               random_tensor({3}, rng), random_tensor({27, 4}, rng), random_tensor({4}, rng)};
    Tensor r = random_tensor({1, 4}, rng);
    auto f = [&](Tape& t, std::span<const Var> p) {
      Var h = ops::relu(t, ops::conv2d(t, p[0], p[1], p[2], {2, 1, 1}));
      Var flat = ops::reshape(t, h, {1, 27});
      return weighted_sum(t, ops::fully_connected(t, flat, p[3], p[4]), r);
    };
    CHECK(grad_check(f, params, 1e-6) < 1e-4);
  }
}

TEST_CASE("grad check: fully connected 3x4") {
  Rng rng(9);
  Tensor r = random_tensor({3, 5}, rng);
  auto f = [&](Tape& t, std::span<const Var> p) { return weighted_sum(t, ops::fully_connected(t, p[0], p[1], p[2]), r); };
  CHECK(grad_check(f, {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)}, 1e-5) <
        1e-6);
}

TEST_CASE("grad check: dilated conv and concat") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(200 + seed);
    Tensor r = random_tensor({1, 5, 6, 6}, rng);
    auto f = [&](Tape& t, std::span<const Var> p) {
      const Var parts[] = {ops::conv2d(t, p[0], p[1], p[2], {1, 2, 2}), p[3]};
      return weighted_sum(t, ops::concat_channels(t, parts), r);
    };
    std::vector<Tensor> params{random_tensor({1, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng),
                               random_tensor({3}, rng), random_tensor({1, 2, 6, 6}, rng)};
    CHECK(grad_check(f, params, 1e-6) < 1e-4);
  }
}

TEST_CASE("checkpoint round trip") {
  Rng rng(5);
  ParamSet p{{"a.weight", random_tensor({2, 3}, rng)}, {"b", random_tensor({4}, rng)}};
  const std::string bytes = encode_checkpoint(p);
  CHECK(bytes.rfind("BANCKPT1", 0) == 0);
  CHECK(decode_checkpoint(bytes) == p);
  CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
  CHECK_THROWS_AS(decode_checkpoint("garbage"), IoError);
}
