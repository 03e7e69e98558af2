#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ban/autograd.hpp"
#include "ban/geometry.hpp"

namespace ban {

std::vector<double> softmax(std::span<const Scalar> scores);

// -log softmax(scores)[u]; computed with the max-shift for stability.
double cross_entropy(std::span<const Scalar> scores, int u);

// Sum over x,y,w,h of 0.5 d^2 (|d| < 1) or |d| - 0.5.
double smooth_l1(const RegressionTarget& t, const RegressionTarget& v);
double smooth_l1_scalar(double d);
double smooth_l1_grad(double d);

// Maps a label to the 4-wide regression slot it is supervised on.
using SlotOf = std::function<int(int label)>;

struct LossTerms {
  double cls = 0;  // summed over the RoIs it covers
  double reg = 0;
};

// L_cls + 1{u>0} L_reg for every row of scores [R,C+1] / deltas [R,D].
std::vector<double> per_roi_losses(const Tensor& scores, const Tensor& deltas, std::span<const int> labels,
                                   std::span<const RegressionTarget> targets, const SlotOf& slot_of);

namespace ops {

// scores [C+1] or [1,C+1] -> scalar [1].
Var cross_entropy(Tape& tape, Var scores, int u);
// deltas [4] or [1,4] -> scalar [1].
Var smooth_l1(Tape& tape, Var deltas, const RegressionTarget& target);

// Sum over `keep` of [L_cls + 1{u>0} L_reg], divided by `normalizer`.
// RoIs not in `keep` receive no gradient.
Var detection_loss(Tape& tape, Var scores, Var deltas, std::span<const int> labels,
                   std::span<const RegressionTarget> targets, std::span<const std::size_t> keep,
                   const SlotOf& slot_of, double normalizer, LossTerms* terms = nullptr);

}  // namespace ops

}  // namespace ban
