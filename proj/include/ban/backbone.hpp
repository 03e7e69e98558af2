#pragma once

#include <cstdint>
#include <vector>

#include "ban/ban_head.hpp"

namespace ban {

// 3x3 conv + ReLU blocks. Every block but the last downsamples by 2; the last
// keeps stride 1 and uses dilation 2 instead.
struct BackboneConfig {
  std::vector<int> channels{16, 32, 64, 128};
  int input_channels = 3;

  int feature_channels() const { return channels.back(); }
  double spatial_scale() const;
  void validate() const;
};

ParamSet build_backbone(const BackboneConfig& config, std::uint64_t seed);
Var backbone_forward(Tape& tape, const BoundParams& params, Var image, const BackboneConfig& config);

struct ModelConfig {
  BackboneConfig backbone;
  BanConfig head;
};

ParamSet build_model(const ModelConfig& config, std::uint64_t seed);

// Throws ConfigError unless `params` has exactly the names and shapes
// build_model would produce for `config`.
void check_compatible(const ParamSet& params, const ModelConfig& config);

struct ModelGraph {
  Var features;
  HeadGraph head;
};

ModelGraph model_forward(Tape& tape, const BoundParams& params, Var image, std::span<const Box> proposals,
                         const ModelConfig& config);

}  // namespace ban
