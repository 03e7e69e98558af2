#pragma once

#include <span>

#include "ban/autograd.hpp"
#include "ban/geometry.hpp"
#include "ban/tensor.hpp"

namespace ban {

enum class PoolMode { RoI, PSRoI };

struct PoolSpec {
  int k = 5;                    // bins per axis, 1..7
  double spatial_scale = 1.0;   // feature cells per image pixel
  PoolMode mode = PoolMode::PSRoI;
};

// Integer cell range [start, end) of one bin along one axis, already
// clamped to the feature extent. Empty when end <= start.
struct BinRange {
  int start = 0;
  int end = 0;
  bool empty() const { return end <= start; }
};

// Floor/ceil binning of the scaled RoI along one axis.
std::vector<BinRange> bin_ranges(double lo, double hi, int k, double spatial_scale, int extent);

// Features may be [C,H,W] or [1,C,H,W]. Outputs are [C,k,k] / [G,k,k].
Tensor roi_pool(const Tensor& features, const Box& roi, const PoolSpec& spec);
Tensor psroi_pool(const Tensor& score_map, const Box& roi, const PoolSpec& spec);
// Mean over the k*k bins of each group: [G,k,k] -> [G], or [R,G,k,k] -> [R,G].
Tensor vote(const Tensor& pooled);

namespace ops {

// Batched over RoIs: outputs [R,C,k,k] / [R,G,k,k].
Var roi_pool(Tape& tape, Var features, std::span<const Box> rois, const PoolSpec& spec);
Var psroi_pool(Tape& tape, Var score_map, std::span<const Box> rois, const PoolSpec& spec);
Var vote(Tape& tape, Var pooled);

}  // namespace ops

}  // namespace ban
