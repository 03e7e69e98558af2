#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ban/autograd.hpp"
#include "ban/checkpoint.hpp"
#include "ban/geometry.hpp"
#include "ban/pooling.hpp"

namespace ban {

// Parameters bound onto a tape, by name.
using BoundParams = std::map<std::string, Var>;

BoundParams bind_params(Tape& tape, const ParamSet& params, bool trainable);

struct BanConfig {
  // Boundary contexts in addition to Base. Base is always present.
  std::vector<ContextKind> contexts;
  int k = 5;
  PoolMode head_mode = PoolMode::PSRoI;
  bool shared_features = true;
  int num_classes = 20;
  int regression_dims = 4;
  int trunk_channels = 1024;
  int roi_feature_channels = 256;

  // Base first, then contexts in enumerator order, duplicates removed.
  std::vector<ContextKind> subnetworks() const;
  int num_subnetworks() const { return static_cast<int>(subnetworks().size()); }
  // Which 4-wide slot of the regression output holds the deltas for `label`.
  int regression_slot(int label) const;
  void validate() const;
};

// Parses "S,V,B" style family lists ("none" or empty for no contexts) and
// also accepts individual context keys such as "side_top".
std::vector<ContextKind> parse_contexts(std::string_view text);
std::string format_contexts(std::span<const ContextKind> contexts);

// Closed-form parameter count of the head built on `feature_channels` inputs.
std::size_t head_parameter_count(const BanConfig& config, int feature_channels);

// Weights ~ N(0, 0.01), biases 0. Each tensor draws from a stream derived
// from (seed, name), so identically named parameters agree across configs.
ParamSet build_head(const BanConfig& config, int feature_channels, std::uint64_t seed);

// Tape-level result of the head over R proposals.
struct HeadGraph {
  Var class_scores;                 // [R, C+1], pre-softmax
  Var box_deltas;                   // [R, regression_dims]
  std::vector<ContextKind> subnets;
  std::vector<Var> context_scores;  // PSRoI: per sub-network [R, C+1]
  std::vector<Var> context_deltas;  // PSRoI: per sub-network [R, regression_dims]
  std::vector<Var> score_maps;      // PSRoI: per sub-network [1, (C+1)k^2, H, W]
};

HeadGraph head_forward(Tape& tape, const BoundParams& params, Var features, std::span<const Box> proposals,
                       const BanConfig& config, double spatial_scale);

struct HeadOutput {
  std::vector<Scalar> class_scores;
  std::vector<Scalar> box_deltas;
  std::vector<std::vector<Scalar>> per_context_scores;  // PSRoI only, subnetworks() order
};

// Tape-free evaluation; features are [1,C,H,W] or [C,H,W].
std::vector<HeadOutput> forward(const ParamSet& params, const Tensor& features, std::span<const Box> proposals,
                                const BanConfig& config, double spatial_scale);

struct SharingGradients {
  Tensor aggregate_scores;                   // dE/df at class_scores, [1, C+1]
  Tensor aggregate_deltas;                   // dE/df at box_deltas, [1, D]
  std::vector<Tensor> context_scores;        // dE/df_c per sub-network
  std::vector<Tensor> context_deltas;
  std::vector<Tensor> score_map_weight_grads;  // d E / d (cls conv weight) per sub-network
};

// Backpropagates E = softmax cross-entropy(class_scores, label) + sum of
// box deltas through the PSRoI head for a single proposal.
SharingGradients backward_sharing_check(const ParamSet& params, const Tensor& features, const Box& proposal,
                                        const BanConfig& config, double spatial_scale, int label);

// One image's worth of evaluated RoIs for contribution analysis.
struct ContributionSample {
  Tensor features;
  std::vector<Box> rois;
  std::vector<int> labels;  // 0 = background
};

struct ContributionTable {
  std::vector<ContextKind> columns;      // report order
  std::vector<std::string> row_names;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> omitted;      // rows with no assigned RoIs
};

struct ContributionAnalysis {
  ContributionTable classification;  // rows: background + classes
  ContributionTable localization;    // rows: cx, cy, width, height
};

// Mean over RoIs of |s_c| / sum_c' |s_c'|, per class (RoIs labelled with that
// class) and per regression coordinate (foreground RoIs, label slot).
ContributionAnalysis contribution_analysis(const ParamSet& params, std::span<const ContributionSample> samples,
                                           const BanConfig& config, double spatial_scale,
                                           std::span<const std::string> class_names);

std::string contribution_csv(const ContributionTable& table);

// The k x k position-sensitive response of `context`'s class score map for
// `class_id`, pooled over g(proposal | context). Its mean is the voted score.
Tensor local_activation_map(const ParamSet& params, const Tensor& features, const Box& proposal,
                            ContextKind context, int class_id, const BanConfig& config, double spatial_scale);

}  // namespace ban
