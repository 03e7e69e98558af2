#include "ban/backbone.hpp"

#include <cmath>

#include "ban/error.hpp"
#include "ban/ops.hpp"
#include "ban/rng.hpp"

namespace ban {

namespace {

std::string block_name(std::size_t i) { return "backbone.conv" + std::to_string(i + 1); }

Conv2dOptions block_options(std::size_t i, std::size_t count) {
  if (i + 1 == count) return {1, 2, 2};
  return {2, 1, 1};
}

}  // namespace

double BackboneConfig::spatial_scale() const { return 1.0 / std::ldexp(1.0, static_cast<int>(channels.size()) - 1); }

void BackboneConfig::validate() const {
  if (channels.empty()) throw ConfigError("backbone needs at least one block");
  for (int c : channels)
    if (c < 1) throw ConfigError("backbone channel counts must be positive");
  if (input_channels < 1) throw ConfigError("backbone input_channels must be positive");
}

ParamSet build_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamSet params;
  std::size_t cin = cfg.input_channels;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const std::size_t cout = cfg.channels[i];
    const std::string w = block_name(i) + ".weight";
    // He initialisation; the trunk trains from scratch.
    const double stddev = std::sqrt(2.0 / static_cast<double>(cin * 9));
    Rng rng(mix_seed(seed, fnv1a(w)));
    Tensor weight({cout, cin, 3, 3});
    for (auto& v : weight.values()) v = static_cast<Scalar>(rng.gaussian(0.0, stddev));
    params.emplace(w, std::move(weight));
    params.emplace(block_name(i) + ".bias", Tensor({cout}));
    cin = cout;
  }
  return params;
}

Var backbone_forward(Tape& tape, const BoundParams& params, Var image, const BackboneConfig& cfg) {
  Var x = image;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const std::string base = block_name(i);
    auto w = params.find(base + ".weight");
    auto b = params.find(base + ".bias");
    if (w == params.end() || b == params.end()) throw ConfigError("missing parameters for " + base);
    x = ops::relu(tape, ops::conv2d(tape, x, w->second, b->second, block_options(i, cfg.channels.size())));
  }
  return x;
}

ParamSet build_model(const ModelConfig& cfg, std::uint64_t seed) {
  ParamSet params = build_backbone(cfg.backbone, seed);
  ParamSet head = build_head(cfg.head, cfg.backbone.feature_channels(), seed);
  params.merge(head);
  return params;
}

void check_compatible(const ParamSet& params, const ModelConfig& cfg) {
  ParamSet expected = build_model(cfg, 0);
  for (const auto& [name, t] : expected) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("checkpoint lacks parameter '" + name + "' required by the config");
    if (it->second.shape() != t.shape())
      throw ConfigError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                        ", config expects " + shape_str(t.shape()));
  }
  for (const auto& [name, t] : params)
    if (!expected.count(name)) throw ConfigError("checkpoint parameter '" + name + "' is not used by the config");
}

ModelGraph model_forward(Tape& tape, const BoundParams& params, Var image, std::span<const Box> proposals,
                         const ModelConfig& cfg) {
  ModelGraph g;
  g.features = backbone_forward(tape, params, image, cfg.backbone);
  g.head = head_forward(tape, params, g.features, proposals, cfg.head, cfg.backbone.spatial_scale());
  return g;
}

}  // namespace ban
