#pragma once

#include <array>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gaisim/autodiff.hpp"

namespace gaisim {

struct ConvParam {
  Tensor weight;
  Tensor bias;
};

struct BlockSpec {
  int channels = 0;
  int stride = 1;
};

struct EncoderConfig {
  int in_channels = 3;
  int in_h = 32;
  int in_w = 32;
  std::vector<BlockSpec> blocks;

  int alpha() const;  // product of strides
  void validate() const;
  // [C,H,W] after each block
  std::vector<std::array<int, 3>> block_shapes() const;
};

EncoderConfig default_desk_encoder();

/// One residual unit: relu(conv2(relu(conv1(x))) + shortcut(x)), 3x3 kernels,
/// stride on conv1, 1x1 projection shortcut when shape changes.
struct ResidualBlockParams {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  ConvParam conv1;
  ConvParam conv2;
  std::optional<ConvParam> proj;
};

struct EncoderParams {
  EncoderConfig cfg;
  std::vector<ResidualBlockParams> blocks;

  static EncoderParams init(const EncoderConfig& cfg, std::mt19937_64& rng);
  void register_params(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix);
};

Var residual_block_forward(Graph& g, Var x, ResidualBlockParams& blk, ParamBinder& bind);

/// Runs every block and returns each block's output feature map in order.
std::vector<Var> encode_collect(Graph& g, Var image, EncoderParams& enc, ParamBinder& bind);

}  // namespace gaisim
