#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "gaisim/channel.hpp"
#include "oracles.hpp"

using namespace gaisim;

namespace {

// mean squared deviation of the received tensor from the clean one
double noise_var(const Tensor& received, const Tensor& clean) {
  double acc = 0.0;
  for (std::size_t i = 0; i < clean.data.size(); ++i) {
    double d = received.data[i] - clean.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(clean.data.size());
}

// entries of +-1 so power normalization is an exact identity
Tensor sign_tensor(const std::vector<int>& shape, std::uint64_t seed) {
  Tensor t(shape);
  std::mt19937_64 rng(seed);
  for (double& v : t.data) v = (rng() & 1) ? 1.0 : -1.0;
  return t;
}

}  // namespace

TEST_CASE("ratios reduce on construction") {
  CHECK(Rational::of(6, 8) == Rational{3, 4});
  CHECK(Rational::of(0, 5) == Rational{0, 1});
  CHECK(Rational::of(25088, 301056) == Rational{1, 12});
  CHECK_THROWS_AS(Rational::of(1, 0), std::invalid_argument);
  CHECK_THROWS_AS(Rational::of(-2, 4), std::invalid_argument);
  CHECK_THROWS_AS(Rational::of(2, -4), std::invalid_argument);
}

TEST_CASE("compression ratio of the reference geometry is exactly one twelfth") {
  BandwidthInfo info = bandwidth_ratio(3, 224, 224, 512, 7, 7);
  CHECK(info.n == 150528);
  CHECK(info.k2 == 25088);
  CHECK(info.ratio == Rational{1, 12});
  CHECK_THROWS_AS(bandwidth_ratio(0, 4, 4, 1, 2, 2), std::invalid_argument);
}

TEST_CASE("channel count solving inverts the ratio and floors at one") {
  CdsResult r = solve_cds(1.0 / 12.0, 150528, 7, 7);
  CHECK(r.c_ds == 512);
  CHECK(r.achieved == Rational{1, 12});

  CdsResult tiny = solve_cds(1e-9, 100, 4, 4);
  CHECK(tiny.c_ds == 1);

  CHECK_THROWS_AS(solve_cds(0.0, 100, 4, 4), std::invalid_argument);
  CHECK_THROWS_AS(solve_cds(0.5, 0, 4, 4), std::invalid_argument);
}

TEST_CASE("noiseless and infinite-snr transmission equal plain normalization") {
  std::mt19937_64 rng(70);
  Tensor z = oracle::random_tensor({3, 5, 5}, rng);

  ChannelConfig quiet;
  quiet.mode = ChannelMode::noiseless;
  quiet.power = 1.7;
  ChannelSim sim(quiet);
  Graph g;
  Var in = g.constant(z);
  Var out = sim.transmit(g, in);
  Var ref = g.power_normalize(in, 1.7);
  CHECK(g.val(out).data == g.val(ref).data);

  ChannelConfig inf_snr;
  inf_snr.mode = ChannelMode::awgn;
  inf_snr.snr_db = std::numeric_limits<double>::infinity();
  ChannelSim sim2(inf_snr);
  CHECK(sim2.noise_sigma2() == 0.0);
  Graph g2;
  Var in2 = g2.constant(z);
  Var out2 = sim2.transmit(g2, in2);
  Var ref2 = g2.power_normalize(in2, 1.0);
  CHECK(g2.val(out2).data == g2.val(ref2).data);
}

TEST_CASE("noise power follows the configured signal-to-noise ratio") {
  ChannelConfig c;
  c.mode = ChannelMode::awgn;
  c.snr_db = 10.0;
  CHECK(ChannelSim(c).noise_sigma2() == doctest::Approx(0.1).epsilon(1e-12));
  c.snr_db = 3.0;
  c.power = 2.0;
  CHECK(ChannelSim(c).noise_sigma2() == doctest::Approx(2.0 * std::pow(10.0, -0.3)).epsilon(1e-12));
  c.mode = ChannelMode::noiseless;
  CHECK(ChannelSim(c).noise_sigma2() == 0.0);
}

TEST_CASE("empirical noise variance matches the configured level") {
  ChannelConfig c;
  c.mode = ChannelMode::awgn;
  c.snr_db = 4.0;
  c.seed = 1234;
  ChannelSim sim(c);

  Tensor z = sign_tensor({4, 160, 160}, 9);  // ~1e5 samples
  Graph g;
  Var in = g.constant(z);
  Tensor received = g.val(sim.transmit(g, in));
  double sigma2 = sim.noise_sigma2();
  CHECK(noise_var(received, z) == doctest::Approx(sigma2).epsilon(0.05));
}

TEST_CASE("pinned fading rescales the effective noise") {
  ChannelConfig c;
  c.mode = ChannelMode::rayleigh;
  c.snr_db = 4.0;
  c.seed = 77;
  ChannelSim sim(c);
  sim.fix_fading(0.5);

  Tensor z = sign_tensor({4, 160, 160}, 10);
  Graph g;
  Var in = g.constant(z);
  Tensor received = g.val(sim.transmit(g, in));
  CHECK(sim.last_fading() == 0.5);
  // receiver divides the additive noise by h, so the variance grows by 1/h^2
  CHECK(noise_var(received, z) == doctest::Approx(4.0 * sim.noise_sigma2()).epsilon(0.05));

  sim.fix_fading(0.0);  // back to random draws
  Graph g2;
  sim.transmit(g2, g2.constant(z));
  CHECK(sim.last_fading() != 0.5);
}

TEST_CASE("shared fading holds one draw per sample window") {
  ChannelConfig c;
  c.mode = ChannelMode::rayleigh;
  c.snr_db = 10.0;
  c.seed = 5;
  c.share_fading = true;
  ChannelSim sim(c);

  Tensor z = sign_tensor({8}, 11);
  sim.begin_sample();
  Graph g;
  sim.transmit(g, g.constant(z));
  double h1 = sim.last_fading();
  sim.transmit(g, g.constant(z));
  CHECK(sim.last_fading() == h1);
  sim.begin_sample();
  sim.transmit(g, g.constant(z));
  CHECK(sim.last_fading() != h1);
}

TEST_CASE("fading amplitudes follow the configured scale") {
  ChannelConfig c;
  c.mode = ChannelMode::rayleigh;
  c.snr_db = std::numeric_limits<double>::infinity();  // draws still happen
  c.rayleigh_scale = 0.3;
  c.seed = 99;
  ChannelSim sim(c);

  Tensor z = sign_tensor({2}, 12);
  double sum_h2 = 0.0;
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) {
    Graph g;
    Var out = sim.transmit(g, g.constant(z));
    CHECK(g.val(out).data == z.data);  // no noise at infinite snr
    double h = sim.last_fading();
    CHECK(h > 0.0);
    sum_h2 += h * h;
  }
  CHECK(sum_h2 / draws == doctest::Approx(2.0 * 0.3 * 0.3).epsilon(0.05));
}

TEST_CASE("reseeding replays the identical noise sequence") {
  ChannelConfig c;
  c.mode = ChannelMode::awgn;
  c.snr_db = 2.0;
  c.seed = 31;
  ChannelSim sim(c);

  Tensor z = sign_tensor({3, 7, 7}, 13);
  sim.reseed(42);
  Graph g1;
  Tensor y1 = g1.val(sim.transmit(g1, g1.constant(z)));
  Graph g1b;
  Tensor y1b = g1b.val(sim.transmit(g1b, g1b.constant(z)));
  sim.reseed(42);
  Graph g2;
  Tensor y2 = g2.val(sim.transmit(g2, g2.constant(z)));
  CHECK(y1.data == y2.data);
  CHECK(y1.data != y1b.data);
}

TEST_CASE("gradients pass through the noisy channel untouched") {
  ChannelConfig c;
  c.mode = ChannelMode::awgn;
  c.snr_db = 6.0;
  ChannelSim sim(c);

  std::mt19937_64 rng(71);
  Tensor z = oracle::random_tensor({2, 3, 3}, rng);
  double err = grad_check(
      [&](Graph& g, std::vector<Var>& in) {
        sim.reseed(5);  // same noise draw at every evaluation point
        Var y = sim.transmit(g, in[0]);
        return g.sum(g.mul(y, y));
      },
      {z});
  CHECK(err < 1e-6);
}

TEST_CASE("mode names round trip and bad names are rejected") {
  for (ChannelMode m : {ChannelMode::noiseless, ChannelMode::awgn, ChannelMode::rayleigh})
    CHECK(channel_mode_from_string(channel_mode_name(m)) == m);
  CHECK_THROWS_AS(channel_mode_from_string("laser"), std::invalid_argument);
}

TEST_CASE("configuration rejects nonpositive physical parameters") {
  ChannelConfig c;
  c.power = 0.0;
  CHECK_THROWS_AS(ChannelSim{c}, std::invalid_argument);
  ChannelConfig c2;
  c2.rayleigh_scale = -1.0;
  CHECK_THROWS_AS(ChannelSim{c2}, std::invalid_argument);
}
