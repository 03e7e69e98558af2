#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "ban/backbone.hpp"
#include "ban/dataset.hpp"
#include "ban/losses.hpp"

namespace ban {

struct LabeledRoI {
  Box box;
  int label = 0;            // 0 = background
  RegressionTarget target;  // meaningful only when label > 0
  double loss = 0;
};

// Max-IoU assignment: label of the best-overlapping ground truth when its
// IoU >= fg_thresh, otherwise background. Equal IoUs go to the lower index.
std::vector<LabeledRoI> assign_labels(std::span<const Box> proposals, std::span<const GroundTruth> gts,
                                      double fg_thresh = 0.5);

// Indices of the `keep` largest losses, in descending-loss order; equal
// losses resolved by lower index.
std::vector<std::size_t> ohem_select(std::span<const LabeledRoI> rois, std::size_t keep);

struct SgdConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<std::pair<int, double>> schedule{{1400, 1e-4}};  // (iteration, lr) steps
  int iterations = 2000;
  int images_per_batch = 2;
  int rois_per_image = 300;
  int ohem_keep = 128;

  double lr_at(int iteration) const;
  void validate() const;
};

using SgdState = ParamSet;  // velocity per parameter

// v <- momentum v + grad + weight_decay p;  p <- p - lr v.
void sgd_step(ParamSet& params, const ParamSet& grads, SgdState& state, double lr, const SgdConfig& cfg);

struct ProposalConfig {
  int jitter_per_gt = 16;
  double center_jitter = 0.25;  // fraction of the GT extent
  double scale_jitter = 0.3;    // log-scale half range
  double nms_thresh = 0.3;
  double random_min_size = 8;
  double random_max_fraction = 0.6;  // of the shorter image side
};

// Jittered copies of every ground truth (kept unconditionally), then uniform
// random boxes that survive NMS against everything accepted so far, until n.
// All boxes are clipped to the image. Deterministic in `seed`.
std::vector<Box> propose(std::span<const Box> gts, int width, int height, int n, std::uint64_t seed,
                         const ProposalConfig& cfg = {});

// One image ready for a training step.
struct PreparedImage {
  Tensor image;  // [1,3,H,W]
  std::vector<LabeledRoI> rois;
};

PreparedImage prepare_image(const Sample& sample, int num_proposals, std::uint64_t seed, const ProposalConfig& cfg);

struct StepGraph {
  Var loss;
  LossTerms terms;   // summed over kept RoIs
  std::size_t kept = 0;
  std::vector<std::vector<std::size_t>> keep;  // per image
};

// Forward of the whole batch with OHEM. When `fixed_keep` is given the
// selection is taken from it instead of from the losses.
StepGraph build_step(Tape& tape, const BoundParams& params, std::span<PreparedImage> batch, const ModelConfig& model,
                     int ohem_keep, const std::vector<std::vector<std::size_t>>* fixed_keep = nullptr);

struct LossRecord {
  int iteration = 0;
  double loss_cls = 0;
  double loss_reg = 0;
  double loss_total = 0;
  double lr = 0;
};

struct TrainResult {
  ParamSet params;
  std::vector<LossRecord> log;
};

using ProgressFn = std::function<void(const LossRecord&)>;

// Starts from build_model(model, seed). Fully determined by its arguments.
TrainResult train(const Dataset& data, const ModelConfig& model, const SgdConfig& sgd, const ProposalConfig& proposals,
                  std::uint64_t seed, const ProgressFn& progress = {});
TrainResult train_from(ParamSet init, const Dataset& data, const ModelConfig& model, const SgdConfig& sgd,
                       const ProposalConfig& proposals, std::uint64_t seed, const ProgressFn& progress = {});

std::string loss_log_csv(std::span<const LossRecord> log);

// Mean of the first and of the last `window` total losses.
std::pair<double, double> smoothed_loss_ends(std::span<const LossRecord> log, std::size_t window = 100);

}  // namespace ban
