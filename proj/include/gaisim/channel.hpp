#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "gaisim/autodiff.hpp"

namespace gaisim {

/// Exact nonnegative ratio of two 64-bit integers, kept reduced.
struct Rational {
  long long num = 0;
  long long den = 1;

  static Rational of(long long num, long long den);
  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Rational&) const = default;
};

/// Source dimension n, channel symbol count k = k2/2, and compression ratio
/// R = k/n for a transmitted [c_tx, out_h, out_w] tensor against a
/// [c_in, in_h, in_w] source. Two real values form one channel symbol.
struct BandwidthInfo {
  long long n = 0;
  long long k2 = 0;  // twice the symbol count, always integral
  Rational ratio;
};

BandwidthInfo bandwidth_ratio(int c_in, int in_h, int in_w, int c_tx, int out_h, int out_w);

struct CdsResult {
  int c_ds = 0;
  Rational achieved;
};

/// Smallest-channel-count rounding of target_R * n symbols onto an
/// out_h x out_w grid; never below one channel.
CdsResult solve_cds(double target_r, long long n, int out_h, int out_w);

enum class ChannelMode { noiseless, awgn, rayleigh };

struct ChannelConfig {
  ChannelMode mode = ChannelMode::noiseless;
  double snr_db = 10.0;
  double power = 1.0;
  double rayleigh_scale = 0.2;
  bool share_fading = false;  // one fading draw per begin_sample instead of per call
  std::uint64_t seed = 0;
};

ChannelMode channel_mode_from_string(const std::string& s);
std::string channel_mode_name(ChannelMode m);

/// Stateful transmit chain: power normalization followed by the configured
/// channel. Noise enters the graph as a constant, so gradients flow to the
/// transmitted tensor untouched. Fading uses a scalar draw per transmission
/// with perfect channel knowledge at the receiver: (h z + noise) / h.
class ChannelSim {
 public:
  explicit ChannelSim(const ChannelConfig& cfg);

  Var transmit(Graph& g, Var z);
  void begin_sample();  // refresh the shared fading draw, when enabled
  void reseed(std::uint64_t seed);

  double noise_sigma2() const;
  double last_fading() const { return last_h_; }
  void fix_fading(double h);  // test hook; <=0 restores random draws

  const ChannelConfig& config() const { return cfg_; }

 private:
  double draw_fading();

  ChannelConfig cfg_;
  std::mt19937_64 rng_;
  double fixed_h_ = 0.0;
  double shared_h_ = 0.0;
  double last_h_ = 1.0;
};

}  // namespace gaisim
