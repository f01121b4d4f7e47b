#include "gaisim/encoder.hpp"

#include <stdexcept>

#include "gaisim/random.hpp"

namespace gaisim {

int EncoderConfig::alpha() const {
  int a = 1;
  for (const BlockSpec& b : blocks) a *= b.stride;
  return a;
}

void EncoderConfig::validate() const {
  if (blocks.empty()) throw std::invalid_argument("encoder: needs at least one block");
  if (in_channels < 1 || in_h < 1 || in_w < 1) throw std::invalid_argument("encoder: bad input shape");
  for (const BlockSpec& b : blocks) {
    if (b.channels < 1) throw std::invalid_argument("encoder: block channels must be positive");
    if (b.stride < 1) throw std::invalid_argument("encoder: block stride must be positive");
  }
  int a = alpha();
  if (in_h % a != 0 || in_w % a != 0)
    throw std::invalid_argument("encoder: input " + std::to_string(in_h) + "x" + std::to_string(in_w) +
                                " not divisible by total stride " + std::to_string(a));
}

std::vector<std::array<int, 3>> EncoderConfig::block_shapes() const {
  std::vector<std::array<int, 3>> shapes;
  int h = in_h, w = in_w;
  for (const BlockSpec& b : blocks) {
    h = (h - 1) / b.stride + 1;
    w = (w - 1) / b.stride + 1;
    shapes.push_back({b.channels, h, w});
  }
  return shapes;
}

EncoderConfig default_desk_encoder() {
  EncoderConfig cfg;
  cfg.in_channels = 3;
  cfg.in_h = 32;
  cfg.in_w = 32;
  cfg.blocks = {{64, 1}, {64, 1}, {128, 2}, {128, 1}, {256, 2}, {256, 1}, {512, 2}, {512, 1}};
  return cfg;
}

namespace {

ConvParam init_conv(int cin, int cout, int k, std::mt19937_64& rng) {
  ConvParam p;
  p.weight = fan_uniform({cout, cin, k, k}, cin * k * k, cout * k * k, rng);
  p.bias = Tensor({cout});
  return p;
}

}  // namespace

EncoderParams EncoderParams::init(const EncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  EncoderParams enc;
  enc.cfg = cfg;
  int cin = cfg.in_channels;
  for (const BlockSpec& spec : cfg.blocks) {
    ResidualBlockParams blk;
    blk.in_channels = cin;
    blk.out_channels = spec.channels;
    blk.stride = spec.stride;
    blk.conv1 = init_conv(cin, spec.channels, 3, rng);
    blk.conv2 = init_conv(spec.channels, spec.channels, 3, rng);
    if (spec.stride != 1 || cin != spec.channels) blk.proj = init_conv(cin, spec.channels, 1, rng);
    enc.blocks.push_back(std::move(blk));
    cin = spec.channels;
  }
  return enc;
}

void EncoderParams::register_params(std::vector<std::pair<std::string, Tensor*>>& out,
                                    const std::string& prefix) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    std::string base = prefix + "block" + std::to_string(i) + ".";
    out.emplace_back(base + "conv1.weight", &blocks[i].conv1.weight);
    out.emplace_back(base + "conv1.bias", &blocks[i].conv1.bias);
    out.emplace_back(base + "conv2.weight", &blocks[i].conv2.weight);
    out.emplace_back(base + "conv2.bias", &blocks[i].conv2.bias);
    if (blocks[i].proj) {
      out.emplace_back(base + "proj.weight", &blocks[i].proj->weight);
      out.emplace_back(base + "proj.bias", &blocks[i].proj->bias);
    }
  }
}

Var residual_block_forward(Graph& g, Var x, ResidualBlockParams& blk, ParamBinder& bind) {
  Var h = g.conv2d(x, bind(blk.conv1.weight), bind(blk.conv1.bias), blk.stride, 1, 1);
  h = g.relu(h);
  h = g.conv2d(h, bind(blk.conv2.weight), bind(blk.conv2.bias), 1, 1, 1);
  Var shortcut = x;
  if (blk.proj)
    shortcut = g.conv2d(x, bind(blk.proj->weight), bind(blk.proj->bias), blk.stride, 0, 1);
  return g.relu(g.add(h, shortcut));
}

std::vector<Var> encode_collect(Graph& g, Var image, EncoderParams& enc, ParamBinder& bind) {
  std::vector<Var> features;
  features.reserve(enc.blocks.size());
  Var h = image;
  for (ResidualBlockParams& blk : enc.blocks) {
    h = residual_block_forward(g, h, blk, bind);
    features.push_back(h);
  }
  return features;
}

}  // namespace gaisim
