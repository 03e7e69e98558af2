#include "ban/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ban/error.hpp"
#include "ban/ops.hpp"
#include "ban/rng.hpp"

namespace ban {

std::vector<LabeledRoI> assign_labels(std::span<const Box> proposals, std::span<const GroundTruth> gts,
                                      double fg_thresh) {
  std::vector<LabeledRoI> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) {
    LabeledRoI roi{p, 0, {}, 0};
    double best = -1;
    std::size_t best_gt = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = iou(p, gts[g].box);
      if (o > best) {
        best = o;
        best_gt = g;
      }
    }
    if (!gts.empty() && best >= fg_thresh) {
      roi.label = gts[best_gt].class_id;
      roi.target = encode_box(gts[best_gt].box, p);
    }
    out.push_back(roi);
  }
  return out;
}

std::vector<std::size_t> ohem_select(std::span<const LabeledRoI> rois, std::size_t keep) {
  if (keep > rois.size()) throw ConfigError("ohem_select: keep exceeds the number of RoIs");
  std::vector<std::size_t> order(rois.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rois[a].loss > rois[b].loss; });
  order.resize(keep);
  return order;
}

double SgdConfig::lr_at(int iteration) const {
  double current = lr;
  int best_step = -1;
  for (const auto& [step, value] : schedule)
    if (iteration >= step && step > best_step) {
      best_step = step;
      current = value;
    }
  return current;
}

void SgdConfig::validate() const {
  if (lr < 0) throw ConfigError("lr must be non-negative");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0,1)");
  if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
  if (images_per_batch < 1) throw ConfigError("images_per_batch must be >= 1");
  if (rois_per_image < 1) throw ConfigError("rois_per_image must be >= 1");
  if (ohem_keep < 1 || ohem_keep > rois_per_image) throw ConfigError("ohem_keep must lie in [1, rois_per_image]");
}

void sgd_step(ParamSet& params, const ParamSet& grads, SgdState& state, double lr, const SgdConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericError("non-finite gradient for '" + name + "'");
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("gradient for unknown parameter '" + name + "'");
    require_same_shape(it->second, g, name.c_str());
  }
  for (auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    auto [v, fresh] = state.try_emplace(name, Tensor(p.shape()));
    Tensor& vel = v->second;
    const auto m = static_cast<Scalar>(cfg.momentum);
    const auto wd = static_cast<Scalar>(cfg.weight_decay);
    const auto step = static_cast<Scalar>(lr);
    for (std::size_t i = 0; i < p.size(); ++i) {
      vel[i] = m * vel[i] + g->second[i] + wd * p[i];
      p[i] -= step * vel[i];
    }
  }
}

std::vector<Box> propose(std::span<const Box> gts, int width, int height, int n, std::uint64_t seed,
                         const ProposalConfig& cfg) {
  if (n <= 0) throw ConfigError("propose: n must be positive");
  if (width <= 0 || height <= 0) throw GeometryError("propose: image extents must be positive");
  Rng rng(seed);
  std::vector<Box> out;
  out.reserve(n);
  for (const auto& gt : gts) {
    for (int j = 0; j < cfg.jitter_per_gt; ++j) {
      const double dx = rng.uniform(-cfg.center_jitter, cfg.center_jitter) * gt.w;
      const double dy = rng.uniform(-cfg.center_jitter, cfg.center_jitter) * gt.h;
      const double sw = std::exp(rng.uniform(-cfg.scale_jitter, cfg.scale_jitter));
      const double sh = std::exp(rng.uniform(-cfg.scale_jitter, cfg.scale_jitter));
      try {
        out.push_back(clip_box({gt.cx + dx, gt.cy + dy, gt.w * sw, gt.h * sh}, width, height));
      } catch (const EmptyBoxError&) {
        continue;
      }
      if (static_cast<int>(out.size()) == n) return out;
    }
  }
  const double max_side = std::max(cfg.random_min_size + 1, cfg.random_max_fraction * std::min(width, height));
  auto random_box = [&] {
    const double w = rng.uniform(cfg.random_min_size, max_side);
    const double h = rng.uniform(cfg.random_min_size, max_side);
    const double cx = rng.uniform(0, width);
    const double cy = rng.uniform(0, height);
    return Box{cx, cy, w, h};
  };
  const long max_attempts = 200L * n;
  for (long attempt = 0; attempt < max_attempts && static_cast<int>(out.size()) < n; ++attempt) {
    Box b;
    try {
      b = clip_box(random_box(), width, height);
    } catch (const EmptyBoxError&) {
      continue;
    }
    bool ok = true;
    for (const auto& kept : out)
      if (iou(b, kept) > cfg.nms_thresh) {
        ok = false;
        break;
      }
    if (ok) out.push_back(b);
  }
  // Dense scenes can exhaust the NMS budget; top up without suppression.
  while (static_cast<int>(out.size()) < n) {
    try {
      out.push_back(clip_box(random_box(), width, height));
    } catch (const EmptyBoxError&) {
    }
  }
  return out;
}

PreparedImage prepare_image(const Sample& sample, int num_proposals, std::uint64_t seed, const ProposalConfig& cfg) {
  std::vector<Box> gt_boxes;
  for (const auto& o : sample.objects) gt_boxes.push_back(o.box);
  const auto boxes = propose(gt_boxes, sample.image.width, sample.image.height, num_proposals, seed, cfg);
  return {image_tensor(sample.image), assign_labels(boxes, sample.objects)};
}

StepGraph build_step(Tape& tape, const BoundParams& params, std::span<PreparedImage> batch, const ModelConfig& model,
                     int ohem_keep, const std::vector<std::vector<std::size_t>>* fixed_keep) {
  if (batch.empty()) throw ConfigError("build_step: empty batch");
  const SlotOf slot_of = [&](int label) { return model.head.regression_slot(label); };
  struct Pending {
    HeadGraph head;
    std::vector<int> labels;
    std::vector<RegressionTarget> targets;
  };
  std::vector<Pending> pending;
  StepGraph step;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    PreparedImage& img = batch[i];
    std::vector<Box> boxes;
    Pending p;
    for (const auto& r : img.rois) {
      boxes.push_back(r.box);
      p.labels.push_back(r.label);
      p.targets.push_back(r.target);
    }
    const Var image = tape.constant(img.image);
    p.head = model_forward(tape, params, image, boxes, model).head;
    const auto losses = per_roi_losses(tape.value(p.head.class_scores), tape.value(p.head.box_deltas), p.labels,
                                       p.targets, slot_of);
    for (std::size_t r = 0; r < losses.size(); ++r) img.rois[r].loss = losses[r];
    if (fixed_keep) {
      step.keep.push_back(fixed_keep->at(i));
    } else {
      const std::size_t keep = std::min<std::size_t>(ohem_keep, img.rois.size());
      step.keep.push_back(ohem_select(img.rois, keep));
    }
    step.kept += step.keep.back().size();
    pending.push_back(std::move(p));
  }
  std::vector<Var> parts;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    LossTerms terms;
    parts.push_back(ops::detection_loss(tape, pending[i].head.class_scores, pending[i].head.box_deltas,
                                        pending[i].labels, pending[i].targets, step.keep[i], slot_of,
                                        static_cast<double>(step.kept), &terms));
    step.terms.cls += terms.cls;
    step.terms.reg += terms.reg;
  }
  step.loss = ops::add(tape, parts);
  return step;
}

TrainResult train(const Dataset& data, const ModelConfig& model, const SgdConfig& sgd, const ProposalConfig& proposals,
                  std::uint64_t seed, const ProgressFn& progress) {
  return train_from(build_model(model, seed), data, model, sgd, proposals, seed, progress);
}

TrainResult train_from(ParamSet init, const Dataset& data, const ModelConfig& model, const SgdConfig& sgd,
                       const ProposalConfig& proposals, std::uint64_t seed, const ProgressFn& progress) {
  if (data.samples.empty()) throw ConfigError("train: dataset is empty");
  sgd.validate();
  check_compatible(init, model);
  TrainResult result{std::move(init), {}};
  SgdState state;

  std::vector<std::size_t> order(data.samples.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  auto next_index = [&] {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), 0);
      Rng rng(mix_seed(seed, 0x5EED0000ULL + epoch++));
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
      cursor = 0;
    }
    return order[cursor++];
  };

  for (int it = 0; it < sgd.iterations; ++it) {
    std::vector<PreparedImage> batch;
    for (int b = 0; b < sgd.images_per_batch; ++b) {
      const std::size_t idx = next_index();
      const std::uint64_t pseed = mix_seed(seed, 0xB0A0000000ULL + static_cast<std::uint64_t>(it) * 1024 + b);
      batch.push_back(prepare_image(data.samples[idx], sgd.rois_per_image, pseed, proposals));
    }
    LossRecord rec;
    rec.iteration = it;
    rec.lr = sgd.lr_at(it);
    ParamSet grads;
    try {
      Tape tape;
      const BoundParams bound = bind_params(tape, result.params, true);
      const StepGraph step = build_step(tape, bound, batch, model, sgd.ohem_keep);
      rec.loss_cls = step.terms.cls / static_cast<double>(step.kept);
      rec.loss_reg = step.terms.reg / static_cast<double>(step.kept);
      rec.loss_total = static_cast<double>(tape.value(step.loss)[0]);
      if (!std::isfinite(rec.loss_total)) throw NumericError("loss is not finite");
      tape.backward(step.loss);
      for (const auto& [name, var] : bound) grads.emplace(name, tape.grad(var));
      sgd_step(result.params, grads, state, rec.lr, sgd);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at iteration " + std::to_string(it) + ": " + e.what());
    }
    result.log.push_back(rec);
    if (progress) progress(rec);
  }
  return result;
}

std::string loss_log_csv(std::span<const LossRecord> log) {
  std::ostringstream os;
  os << "iteration,loss_cls,loss_reg,loss_total,lr\n";
  os.precision(17);
  for (const auto& r : log)
    os << r.iteration << ',' << r.loss_cls << ',' << r.loss_reg << ',' << r.loss_total << ',' << r.lr << '\n';
  return os.str();
}

std::pair<double, double> smoothed_loss_ends(std::span<const LossRecord> log, std::size_t window) {
  if (log.empty()) return {0, 0};
  const std::size_t w = std::min(window, log.size());
  double first = 0, last = 0;
  for (std::size_t i = 0; i < w; ++i) {
    first += log[i].loss_total;
    last += log[log.size() - w + i].loss_total;
  }
  return {first / static_cast<double>(w), last / static_cast<double>(w)};
}

}  // namespace ban
