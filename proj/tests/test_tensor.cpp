#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <stdexcept>

#include "gaisim/autodiff.hpp"
#include "oracles.hpp"

using namespace gaisim;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return oracle::random_tensor(std::move(shape), rng, lo, hi);
}

// values bounded away from zero so kinked ops stay differentiable under the
// finite-difference probe
Tensor offset_tensor(std::vector<int> shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> mag(0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.data) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

}  // namespace

TEST_CASE("convolution matches the scalar reference across geometries") {
  std::mt19937_64 rng(11);
  struct Geo {
    int cin, h, w, cout, k, stride, pad, dil;
  };
  for (Geo geo : {Geo{1, 5, 5, 1, 3, 1, 1, 1}, Geo{2, 6, 7, 3, 3, 1, 1, 1}, Geo{3, 8, 8, 4, 3, 2, 1, 1},
                  Geo{2, 9, 9, 2, 3, 1, 2, 2}, Geo{2, 16, 16, 2, 3, 1, 6, 6}, Geo{2, 7, 7, 3, 1, 1, 0, 1}}) {
    Tensor x = random_tensor({geo.cin, geo.h, geo.w}, rng);
    Tensor w = random_tensor({geo.cout, geo.cin, geo.k, geo.k}, rng);
    Tensor b = random_tensor({geo.cout}, rng);
    Graph g;
    Var y = g.conv2d(g.constant(x), g.constant(w), g.constant(b), geo.stride, geo.pad, geo.dil);
    Tensor want = oracle::conv2d(x, w, &b, geo.stride, geo.pad, geo.dil);
    CHECK(oracle::max_abs_diff(g.val(y), want) < 1e-12);

    Graph g2;  // bias-free path
    Var y2 = g2.conv2d(g2.constant(x), g2.constant(w), {}, geo.stride, geo.pad, geo.dil);
    Tensor want2 = oracle::conv2d(x, w, nullptr, geo.stride, geo.pad, geo.dil);
    CHECK(oracle::max_abs_diff(g2.val(y2), want2) < 1e-12);
  }
}

TEST_CASE("convolution hand values") {
  Graph g;
  Var y = g.conv2d(g.constant(Tensor::from({1, 2, 2}, {1, 2, 3, 4})),
                   g.constant(Tensor::from({1, 1, 1, 1}, {2})),
                   g.constant(Tensor::from({1}, {1})));
  CHECK(g.val(y).data == std::vector<double>{3, 5, 7, 9});

  Tensor ramp({1, 4, 4});
  for (int i = 0; i < 16; ++i) ramp.data[static_cast<std::size_t>(i)] = i;
  Tensor avg({1, 1, 3, 3}, 1.0 / 9.0);
  Graph g2;
  Var z = g2.conv2d(g2.constant(ramp), g2.constant(avg), {}, 1, 1, 1);
  CHECK(g2.val(z).shape == std::vector<int>{1, 4, 4});
  CHECK(g2.val(z).at3(0, 1, 1) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(g2.val(z).at3(0, 0, 0) == doctest::Approx(10.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("bilinear resize hand values and reference agreement") {
  // constants are reproduced exactly at any scale
  Graph g;
  Var c = g.bilinear_resize(g.constant(Tensor({2, 3, 3}, 0.7)), 8, 5);
  for (double v : g.val(c).data) CHECK(v == 0.7);

  // identity resize is bit-exact
  std::mt19937_64 rng(12);
  Tensor x = random_tensor({2, 5, 7}, rng);
  Graph g2;
  Var same = g2.bilinear_resize(g2.constant(x), 5, 7);
  CHECK(g2.val(same).data == x.data);

  // doubling a 2x2 step pattern: half-pixel centers give 0, 1/4, 3/4, 1
  Graph g3;
  Var up = g3.bilinear_resize(g3.constant(Tensor::from({1, 2, 2}, {0, 1, 0, 1})), 4, 4);
  for (int y = 0; y < 4; ++y) {
    CHECK(g3.val(up).at3(0, y, 0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(g3.val(up).at3(0, y, 1) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(g3.val(up).at3(0, y, 2) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(g3.val(up).at3(0, y, 3) == doctest::Approx(1.0).epsilon(1e-15));
  }

  // random upscale and downscale against the four-corner-weight form
  Tensor a = random_tensor({3, 7, 5}, rng);
  Graph g4;
  CHECK(oracle::max_abs_diff(g4.val(g4.bilinear_resize(g4.constant(a), 11, 9)),
                             oracle::bilinear(a, 11, 9)) < 1e-12);
  Tensor b = random_tensor({1, 8, 8}, rng);
  Graph g5;
  CHECK(oracle::max_abs_diff(g5.val(g5.bilinear_resize(g5.constant(b), 3, 3)),
                             oracle::bilinear(b, 3, 3)) < 1e-12);
}

TEST_CASE("linear and softmax hand values") {
  Graph g;
  Var y = g.linear(g.constant(Tensor::from({2}, {1, 2})), g.constant(Tensor::from({1, 2}, {4, 5})),
                   g.constant(Tensor::from({1}, {3})));
  CHECK(g.val(y).data == std::vector<double>{17});

  Graph g2;
  Var s = g2.softmax(g2.constant(Tensor::from({3}, {std::log(1.0), std::log(2.0), std::log(3.0)})));
  CHECK(g2.val(s)(0) == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  CHECK(g2.val(s)(1) == doctest::Approx(2.0 / 6.0).epsilon(1e-14));
  CHECK(g2.val(s)(2) == doctest::Approx(3.0 / 6.0).epsilon(1e-14));

  // rows normalize independently, even with large shifts
  Graph g3;
  Var m = g3.softmax(g3.constant(Tensor::from({2, 3}, {100, 101, 102, -5, -5, -5})));
  for (int r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) sum += g3.val(m).at2(r, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK(g3.val(m).at2(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("mean equals sum divided by element count") {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({3, 4}, rng);
  Graph g;
  Var c = g.constant(x);
  CHECK(g.val(g.mean(c))(0) == doctest::Approx(g.val(g.sum(c))(0) / 12.0).epsilon(1e-15));
}

TEST_CASE("power normalization scales to the requested mean square") {
  std::mt19937_64 rng(14);
  Tensor z = offset_tensor({4, 3, 3}, rng);
  Graph g;
  Var y = g.power_normalize(g.constant(z), 1.7);
  double q = 0.0;
  for (double v : g.val(y).data) q += v * v;
  CHECK(q / static_cast<double>(z.numel()) == doctest::Approx(1.7).epsilon(1e-13));
  CHECK_FALSE(g.power_normalize_hit_zero());

  Graph g2;
  Var y0 = g2.power_normalize(g2.constant(Tensor({2, 2}, 0.0)), 1.0);
  CHECK(g2.power_normalize_hit_zero());
  for (double v : g2.val(y0).data) CHECK(v == 0.0);
}

// ---- gradient checks ----

TEST_CASE("gradients: arithmetic composite") {
  std::mt19937_64 rng(21);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        Var t = g.add(g.mul(in[0], in[1]), g.scale(g.sub(in[0], in[2]), 0.7));
        return g.sum(g.mul(t, t));
      },
      {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: relu and leaky relu away from the kink") {
  std::mt19937_64 rng(22);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& in) { return g.sum(g.mul(g.relu(in[0]), in[1])); },
      {offset_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  CHECK(err < 1e-6);
  err = grad_check(
      [](Graph& g, std::vector<Var>& in) { return g.sum(g.mul(g.leaky_relu(in[0], 0.2), in[1])); },
      {offset_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: softmax weighted by a second input") {
  std::mt19937_64 rng(23);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& in) { return g.sum(g.mul(g.softmax(in[0]), in[1])); },
      {random_tensor({2, 4}, rng), random_tensor({2, 4}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: convolution plain, strided and dilated") {
  std::mt19937_64 rng(24);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        Var y = g.conv2d(in[0], in[1], in[2], 1, 1, 1);
        return g.sum(g.mul(y, y));
      },
      {random_tensor({2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
  CHECK(err < 1e-6);
  err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        Var y = g.conv2d(in[0], in[1], in[2], 2, 2, 2);
        return g.sum(g.mul(y, y));
      },
      {random_tensor({2, 7, 7}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: linear over batched rows") {
  std::mt19937_64 rng(25);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        Var y = g.linear(in[0], in[1], in[2]);
        return g.sum(g.mul(y, y));
      },
      {random_tensor({2, 3}, rng), random_tensor({4, 3}, rng), random_tensor({4}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: global average pool") {
  std::mt19937_64 rng(26);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        Var y = g.global_avg_pool(in[0]);
        return g.sum(g.mul(y, y));
      },
      {random_tensor({2, 2, 3}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: bilinear resize up and down") {
  std::mt19937_64 rng(27);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        Var y = g.bilinear_resize(in[0], 5, 7);
        return g.sum(g.mul(y, y));
      },
      {random_tensor({2, 3, 3}, rng)});
  CHECK(err < 1e-6);
  err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        Var y = g.bilinear_resize(in[0], 3, 3);
        return g.sum(g.mul(y, y));
      },
      {random_tensor({1, 6, 6}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: matmul with and without transposed right side") {
  std::mt19937_64 rng(28);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        Var y = g.matmul(in[0], in[1]);
        return g.sum(g.mul(y, y));
      },
      {random_tensor({2, 3}, rng), random_tensor({3, 4}, rng)});
  CHECK(err < 1e-6);
  err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        Var y = g.matmul(in[0], in[1], true);
        return g.sum(g.mul(y, y));
      },
      {random_tensor({2, 3}, rng), random_tensor({4, 3}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: transpose and reshape") {
  std::mt19937_64 rng(29);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        Var y = g.matmul(g.transpose2d(in[0]), g.reshape(in[1], {2, 2}));
        return g.sum(g.mul(y, y));
      },
      {random_tensor({2, 3}, rng), random_tensor({4}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: stack, row and slice") {
  std::mt19937_64 rng(30);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        Var m = g.stack_rows({in[0], in[1], in[2]});
        Var r = g.row(m, 1);
        Var s = g.slice1d(r, 1, 2);
        return g.add(g.sum(g.mul(s, s)), g.sum(g.mul(m, m)));
      },
      {random_tensor({4}, rng), random_tensor({4}, rng), random_tensor({4}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: outer sum of two vectors") {
  std::mt19937_64 rng(31);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        Var y = g.add_outer(in[0], in[1]);
        return g.sum(g.mul(y, y));
      },
      {random_tensor({3}, rng), random_tensor({3}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: pairwise attention logits") {
  std::mt19937_64 rng(32);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        Var y = g.gat_pair_logits(in[0], in[1]);
        return g.sum(g.mul(y, y));
      },
      {random_tensor({3, 2}, rng), random_tensor({4}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: per-channel scaling") {
  std::mt19937_64 rng(33);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        Var y = g.scale_channels(in[0], in[1]);
        return g.sum(g.mul(y, y));
      },
      {random_tensor({3, 2, 2}, rng), random_tensor({3}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: power normalization including the projection term") {
  std::mt19937_64 rng(34);
  Tensor ramp({2, 3, 3});
  for (int i = 0; i < 18; ++i) ramp.data[static_cast<std::size_t>(i)] = 0.1 * (i - 9);
  double err = grad_check(
      [&](Graph& g, std::vector<Var>& in) {
        Var y = g.power_normalize(in[0], 1.3);
        return g.sum(g.mul(y, g.constant(ramp)));
      },
      {offset_tensor({2, 3, 3}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: cross entropy with an ignored pixel") {
  std::mt19937_64 rng(35);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& in) {
        return g.softmax_cross_entropy(in[0], {0, 1, 2, -1}, -1);
      },
      {random_tensor({3, 2, 2}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: masked absolute error away from ties") {
  std::mt19937_64 rng(36);
  Tensor target({2, 3}, 0.0);
  for (double& v : target.data) v = 5.0;  // predictions stay well below
  double err = grad_check(
      [&](Graph& g, std::vector<Var>& in) {
        return g.l1_loss(in[0], target, {1, 0, 1, 1, 0, 1});
      },
      {random_tensor({2, 3}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients: cosine distance to unit targets") {
  std::mt19937_64 rng(37);
  Tensor target({3, 2, 2});
  for (int p = 0; p < 4; ++p) {
    double vx = std::cos(0.3 + p), vy = std::sin(0.3 + p), vz = 1.0;
    double n = std::sqrt(vx * vx + vy * vy + vz * vz);
    target.data[static_cast<std::size_t>(p)] = vx / n;
    target.data[static_cast<std::size_t>(4 + p)] = vy / n;
    target.data[static_cast<std::size_t>(8 + p)] = vz / n;
  }
  double err = grad_check(
      [&](Graph& g, std::vector<Var>& in) { return g.cosine_loss(in[0], target); },
      {offset_tensor({3, 2, 2}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("a leaf used twice accumulates both contributions") {
  Tensor x = Tensor::from({2}, {1.0, 2.0});
  x.requires_grad = true;
  x.ensure_grad();
  x.zero_grad();
  Graph g;
  Var v = g.leaf(x);
  g.backward(g.sum(g.add(v, v)));
  CHECK(x.grad == std::vector<double>{2.0, 2.0});
}

TEST_CASE("backward runs once and needs a scalar") {
  Tensor x = Tensor::from({2}, {1.0, 2.0});
  x.requires_grad = true;
  x.ensure_grad();
  Graph g;
  Var v = g.leaf(x);
  Var s = g.sum(v);
  g.backward(s);
  CHECK_THROWS_AS(g.backward(s), std::runtime_error);

  Graph g2;
  Var v2 = g2.leaf(x);
  CHECK_THROWS_AS(g2.backward(v2), std::invalid_argument);
}

TEST_CASE("non-finite results are rejected with the producing operation named") {
  Graph g;
  Var big = g.constant(Tensor({2}, 1e200));
  CHECK_THROWS_WITH_AS(g.mul(big, big), doctest::Contains("mul"), std::runtime_error);

  Tensor bad({2}, 0.0);
  bad.data[0] = std::nan("");
  Graph g2;
  CHECK_THROWS_WITH_AS(g2.constant(bad), doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("shape misuse is rejected") {
  Graph g;
  Var flat = g.constant(Tensor({4}, 1.0));
  Var img = g.constant(Tensor({1, 4, 4}, 1.0));
  Var w = g.constant(Tensor({1, 1, 3, 3}, 1.0));
  CHECK_THROWS_AS(g.conv2d(flat, w), std::invalid_argument);
  CHECK_THROWS_AS(g.conv2d(img, g.constant(Tensor({1, 2, 3, 3}, 1.0))), std::invalid_argument);
  CHECK_THROWS_AS(g.linear(flat, g.constant(Tensor({2, 3}, 1.0))), std::invalid_argument);
  CHECK_THROWS_AS(g.matmul(g.constant(Tensor({2, 3}, 1.0)), g.constant(Tensor({2, 3}, 1.0))),
                  std::invalid_argument);
  CHECK_THROWS_AS(g.reshape(flat, {3, 2}), std::invalid_argument);
  CHECK_THROWS_AS(g.l1_loss(flat, Tensor({5}, 0.0)), std::invalid_argument);
  CHECK_THROWS_AS(g.l1_loss(flat, Tensor({4}, 0.0), {0, 0, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(g.softmax_cross_entropy(img, std::vector<int>(16, 5)), std::invalid_argument);
}
