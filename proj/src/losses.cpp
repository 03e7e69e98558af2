#include "ban/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <string>

#include "ban/error.hpp"

namespace ban {

namespace {

std::array<double, 4> target_array(const RegressionTarget& t) { return {t.tx, t.ty, t.tw, t.th}; }

void check_label(int u, std::size_t classes) {
  if (u < 0 || static_cast<std::size_t>(u) >= classes)
    throw DimensionError("label " + std::to_string(u) + " outside [0," + std::to_string(classes - 1) + "]");
}

std::size_t last_dim(const Tensor& t, const char* what) {
  if (t.rank() == 1) return t.dim(0);
  if (t.rank() == 2 && t.dim(0) == 1) return t.dim(1);
  throw DimensionError(std::string(what) + ": expected a vector, got " + shape_str(t.shape()));
}

}  // namespace

std::vector<double> softmax(std::span<const Scalar> scores) {
  std::vector<double> p(scores.size());
  if (scores.empty()) return p;
  const double m = *std::max_element(scores.begin(), scores.end());
  double z = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) z += p[i] = std::exp(scores[i] - m);
  for (auto& v : p) v /= z;
  return p;
}

double cross_entropy(std::span<const Scalar> scores, int u) {
  check_label(u, scores.size());
  const double m = *std::max_element(scores.begin(), scores.end());
  double z = 0;
  for (auto s : scores) z += std::exp(s - m);
  return std::log(z) - (scores[u] - m);
}

double smooth_l1_scalar(double d) {
  const double a = std::abs(d);
  return a < 1 ? 0.5 * d * d : a - 0.5;
}

double smooth_l1_grad(double d) {
  if (std::abs(d) < 1) return d;
  return d > 0 ? 1.0 : -1.0;
}

double smooth_l1(const RegressionTarget& t, const RegressionTarget& v) {
  const auto a = target_array(t), b = target_array(v);
  double s = 0;
  for (int i = 0; i < 4; ++i) s += smooth_l1_scalar(a[i] - b[i]);
  return s;
}

std::vector<double> per_roi_losses(const Tensor& scores, const Tensor& deltas, std::span<const int> labels,
                                   std::span<const RegressionTarget> targets, const SlotOf& slot_of) {
  const std::size_t r = scores.dim(0), c = scores.dim(1), d = deltas.dim(1);
  if (labels.size() != r || targets.size() != r || deltas.dim(0) != r)
    throw DimensionError("per_roi_losses: RoI count mismatch");
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    double loss = cross_entropy({scores.data() + i * c, c}, labels[i]);
    if (labels[i] > 0) {
      const Scalar* p = deltas.data() + i * d + 4 * slot_of(labels[i]);
      loss += smooth_l1({p[0], p[1], p[2], p[3]}, targets[i]);
    }
    out[i] = loss;
  }
  return out;
}

namespace ops {

Var cross_entropy(Tape& tape, Var scores, int u) {
  const Tensor& s = tape.value(scores);
  const std::size_t n = last_dim(s, "cross_entropy");
  const double loss = ban::cross_entropy(s.values(), u);
  const Var ins[] = {scores};
  return tape.record(Tensor({1}, static_cast<Scalar>(loss)), ins, [scores, u, n](Tape& t, const Tensor& g) {
    Tensor* d = t.grad_sink(scores);
    const auto p = softmax(t.value(scores).values());
    for (std::size_t i = 0; i < n; ++i)
      (*d)[i] += g[0] * static_cast<Scalar>(p[i] - (static_cast<int>(i) == u ? 1.0 : 0.0));
  });
}

Var smooth_l1(Tape& tape, Var deltas, const RegressionTarget& target) {
  const Tensor& x = tape.value(deltas);
  if (last_dim(x, "smooth_l1") != 4) throw DimensionError("smooth_l1: expected 4 deltas");
  const double loss = ban::smooth_l1({x[0], x[1], x[2], x[3]}, target);
  const Var ins[] = {deltas};
  return tape.record(Tensor({1}, static_cast<Scalar>(loss)), ins, [deltas, target](Tape& t, const Tensor& g) {
    Tensor* d = t.grad_sink(deltas);
    const Tensor& xv = t.value(deltas);
    const auto v = target_array(target);
    for (int i = 0; i < 4; ++i) (*d)[i] += g[0] * static_cast<Scalar>(smooth_l1_grad(xv[i] - v[i]));
  });
}

Var detection_loss(Tape& tape, Var scores, Var deltas, std::span<const int> labels,
                   std::span<const RegressionTarget> targets, std::span<const std::size_t> keep,
                   const SlotOf& slot_of, double normalizer, LossTerms* terms) {
  const Tensor& s = tape.value(scores);
  const Tensor& x = tape.value(deltas);
  if (s.rank() != 2 || x.rank() != 2 || s.dim(0) != x.dim(0))
    throw DimensionError("detection_loss: scores " + shape_str(s.shape()) + " vs deltas " + shape_str(x.shape()));
  const std::size_t r = s.dim(0), c = s.dim(1), d = x.dim(1);
  if (labels.size() != r || targets.size() != r) throw DimensionError("detection_loss: RoI count mismatch");
  if (!(normalizer > 0)) throw NumericError("detection_loss: normalizer must be positive");

  struct Item {
    std::size_t roi;
    int label;
    int slot;
    RegressionTarget target;
  };
  auto items = std::make_shared<std::vector<Item>>();
  LossTerms local;
  for (auto i : keep) {
    if (i >= r) throw DimensionError("detection_loss: kept index out of range");
    check_label(labels[i], c);
    local.cls += ban::cross_entropy({s.data() + i * c, c}, labels[i]);
    int slot = -1;
    if (labels[i] > 0) {
      slot = slot_of(labels[i]);
      if (slot < 0 || static_cast<std::size_t>(4 * slot + 4) > d)
        throw DimensionError("detection_loss: regression slot out of range");
      const Scalar* p = x.data() + i * d + 4 * slot;
      local.reg += ban::smooth_l1({p[0], p[1], p[2], p[3]}, targets[i]);
    }
    items->push_back({i, labels[i], slot, targets[i]});
  }
  if (terms) *terms = local;
  const double total = (local.cls + local.reg) / normalizer;
  const Var ins[] = {scores, deltas};
  return tape.record(Tensor({1}, static_cast<Scalar>(total)), ins, [=](Tape& t, const Tensor& g) {
    const double w = g[0] / normalizer;
    const Tensor& sv = t.value(scores);
    const Tensor& xv = t.value(deltas);
    Tensor* ds = t.grad_sink(scores);
    Tensor* dx = t.grad_sink(deltas);
    for (const auto& it : *items) {
      if (ds) {
        const auto p = softmax({sv.data() + it.roi * c, c});
        for (std::size_t j = 0; j < c; ++j)
          (*ds)[it.roi * c + j] +=
              static_cast<Scalar>(w * (p[j] - (static_cast<int>(j) == it.label ? 1.0 : 0.0)));
      }
      if (dx && it.slot >= 0) {
        const auto v = target_array(it.target);
        for (int j = 0; j < 4; ++j) {
          const std::size_t idx = it.roi * d + 4 * it.slot + j;
          (*dx)[idx] += static_cast<Scalar>(w * smooth_l1_grad(xv[idx] - v[j]));
        }
      }
    }
  });
}

}  // namespace ops

}  // namespace ban
