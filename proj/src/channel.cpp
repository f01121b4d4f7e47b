#include "gaisim/channel.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gaisim {

Rational Rational::of(long long num, long long den) {
  if (den == 0) throw std::invalid_argument("rational: zero denominator");
  if (num < 0 || den < 0) throw std::invalid_argument("rational: negative operand");
  if (num == 0) return {0, 1};
  long long g = std::gcd(num, den);
  return {num / g, den / g};
}

BandwidthInfo bandwidth_ratio(int c_in, int in_h, int in_w, int c_tx, int out_h, int out_w) {
  if (c_in < 1 || in_h < 1 || in_w < 1 || c_tx < 1 || out_h < 1 || out_w < 1)
    throw std::invalid_argument("bandwidth_ratio: dimensions must be positive");
  BandwidthInfo info;
  info.n = static_cast<long long>(c_in) * in_h * in_w;
  info.k2 = static_cast<long long>(c_tx) * out_h * out_w;
  info.ratio = Rational::of(info.k2, 2 * info.n);
  return info;
}

CdsResult solve_cds(double target_r, long long n, int out_h, int out_w) {
  if (!(target_r > 0.0)) throw std::invalid_argument("solve_cds: target ratio must be positive");
  if (n < 1 || out_h < 1 || out_w < 1) throw std::invalid_argument("solve_cds: bad dimensions");
  double ideal = 2.0 * target_r * static_cast<double>(n) / (static_cast<double>(out_h) * out_w);
  long long c = std::llround(ideal);
  CdsResult r;
  r.c_ds = static_cast<int>(std::max<long long>(1, c));
  r.achieved = Rational::of(static_cast<long long>(r.c_ds) * out_h * out_w, 2 * n);
  return r;
}

ChannelMode channel_mode_from_string(const std::string& s) {
  if (s == "noiseless") return ChannelMode::noiseless;
  if (s == "awgn") return ChannelMode::awgn;
  if (s == "rayleigh") return ChannelMode::rayleigh;
  throw std::invalid_argument("unknown channel mode '" + s + "'");
}

std::string channel_mode_name(ChannelMode m) {
  switch (m) {
    case ChannelMode::noiseless: return "noiseless";
    case ChannelMode::awgn: return "awgn";
    case ChannelMode::rayleigh: return "rayleigh";
  }
  return "?";
}

ChannelSim::ChannelSim(const ChannelConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
  if (cfg.power <= 0.0) throw std::invalid_argument("channel: power must be positive");
  if (cfg.rayleigh_scale <= 0.0) throw std::invalid_argument("channel: fading scale must be positive");
}

void ChannelSim::reseed(std::uint64_t seed) {
  rng_.seed(seed);
  shared_h_ = 0.0;
}

double ChannelSim::noise_sigma2() const {
  if (cfg_.mode == ChannelMode::noiseless) return 0.0;
  if (std::isinf(cfg_.snr_db)) return 0.0;
  return cfg_.power * std::pow(10.0, -cfg_.snr_db / 10.0);
}

double ChannelSim::draw_fading() {
  if (fixed_h_ > 0.0) return fixed_h_;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double h = 0.0;
  do {
    h = cfg_.rayleigh_scale * std::sqrt(-2.0 * std::log1p(-uni(rng_)));
  } while (h < 1e-6);
  return h;
}

void ChannelSim::begin_sample() {
  if (cfg_.share_fading && cfg_.mode == ChannelMode::rayleigh) shared_h_ = draw_fading();
}

void ChannelSim::fix_fading(double h) { fixed_h_ = h; }

Var ChannelSim::transmit(Graph& g, Var z) {
  Var zn = g.power_normalize(z, cfg_.power);
  if (cfg_.mode == ChannelMode::noiseless) return zn;
  double sigma2 = noise_sigma2();
  double h = 1.0;
  if (cfg_.mode == ChannelMode::rayleigh) {
    h = (cfg_.share_fading && shared_h_ > 0.0) ? shared_h_ : draw_fading();
    last_h_ = h;
  }
  if (sigma2 == 0.0) return zn;
  // received (h z + noise) / h, written as z + noise / h
  std::normal_distribution<double> gauss(0.0, std::sqrt(sigma2));
  Tensor noise(g.val(zn).shape);
  for (double& v : noise.data) v = gauss(rng_) / h;
  return g.add(zn, g.constant(std::move(noise)));
}

}  // namespace gaisim
