#include "ban/evaluation.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "ban/error.hpp"
#include "ban/losses.hpp"
#include "ban/rng.hpp"

namespace ban {

std::vector<GroundTruthRecord> ground_truth_records(const Dataset& data) {
  std::vector<GroundTruthRecord> out;
  for (const auto& s : data.samples)
    for (const auto& o : s.objects) out.push_back({s.image_id, o.class_id, o.box});
  return out;
}

std::vector<PrPoint> precision_recall(std::span<const DetectionRecord> dets, std::span<const GroundTruthRecord> gts,
                                      int class_id, double iou_thresh) {
  std::map<std::string, std::vector<std::size_t>> by_image;
  std::size_t npos = 0;
  for (std::size_t g = 0; g < gts.size(); ++g)
    if (gts[g].class_id == class_id) {
      by_image[gts[g].image_id].push_back(g);
      ++npos;
    }
  std::vector<std::size_t> order;
  for (std::size_t d = 0; d < dets.size(); ++d)
    if (dets[d].class_id == class_id) order.push_back(d);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::vector<bool> matched(gts.size(), false);
  std::vector<PrPoint> curve;
  std::size_t tp = 0, fp = 0;
  for (auto d : order) {
    double best = -1;
    std::size_t best_g = 0;
    auto it = by_image.find(dets[d].image_id);
    if (it != by_image.end())
      for (auto g : it->second) {
        if (matched[g]) continue;
        const double o = iou(dets[d].box, gts[g].box);
        if (o > best) {
          best = o;
          best_g = g;
        }
      }
    if (best >= iou_thresh) {
      matched[best_g] = true;
      ++tp;
    } else {
      ++fp;
    }
    curve.push_back({static_cast<double>(tp) / static_cast<double>(tp + fp),
                     npos ? static_cast<double>(tp) / static_cast<double>(npos) : 0.0});
  }
  return curve;
}

double average_precision(std::span<const DetectionRecord> dets, std::span<const GroundTruthRecord> gts, int class_id,
                         double iou_thresh, ApProtocol protocol) {
  const bool any_gt =
      std::any_of(gts.begin(), gts.end(), [&](const GroundTruthRecord& g) { return g.class_id == class_id; });
  if (!any_gt) return 0.0;
  const auto curve = precision_recall(dets, gts, class_id, iou_thresh);
  if (protocol == ApProtocol::Voc07) {
    double ap = 0;
    for (int t = 0; t <= 10; ++t) {
      const double level = t / 10.0;
      double p = 0;
      for (const auto& pt : curve)
        if (pt.recall >= level) p = std::max(p, pt.precision);
      ap += p;
    }
    return ap / 11.0;
  }
  // Running max from the right gives the interpolated precision envelope.
  std::vector<double> envelope(curve.size());
  double m = 0;
  for (std::size_t i = curve.size(); i-- > 0;) envelope[i] = m = std::max(m, curve[i].precision);
  double ap = 0, prev = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    ap += (curve[i].recall - prev) * envelope[i];
    prev = curve[i].recall;
  }
  return ap;
}

MapResult map_voc(std::span<const DetectionRecord> dets, std::span<const GroundTruthRecord> gts, int num_classes,
                  double iou_thresh, ApProtocol protocol) {
  MapResult r;
  double sum = 0;
  for (int c = 1; c <= num_classes; ++c) {
    const bool any_gt = std::any_of(gts.begin(), gts.end(), [&](const GroundTruthRecord& g) { return g.class_id == c; });
    if (!any_gt) {
      r.excluded.push_back(c);
      continue;
    }
    const double ap = average_precision(dets, gts, c, iou_thresh, protocol);
    r.per_class.emplace_back(c, ap);
    sum += ap;
  }
  r.map = r.per_class.empty() ? 0.0 : sum / static_cast<double>(r.per_class.size());
  return r;
}

MapResult map_coco_style(std::span<const DetectionRecord> dets, std::span<const GroundTruthRecord> gts,
                         int num_classes) {
  MapResult out;
  std::vector<double> per_class_sum;
  double total = 0;
  for (int t = 0; t < 10; ++t) {
    const double thresh = (50 + 5 * t) / 100.0;
    const MapResult r = map_voc(dets, gts, num_classes, thresh, ApProtocol::Area);
    if (t == 0) {
      out.excluded = r.excluded;
      out.per_class = r.per_class;
      for (auto& pc : out.per_class) pc.second = 0;
    }
    for (std::size_t i = 0; i < r.per_class.size(); ++i) out.per_class[i].second += r.per_class[i].second / 10.0;
    total += r.map;
  }
  out.map = total / 10.0;
  return out;
}

std::vector<DetectionRecord> detect_image(const ParamSet& params, const Sample& sample, std::size_t image_index,
                                          const ModelConfig& model, const DetectorConfig& cfg) {
  std::vector<Box> gt_boxes;
  for (const auto& o : sample.objects) gt_boxes.push_back(o.box);
  const int width = sample.image.width, height = sample.image.height;
  const auto proposals = propose(gt_boxes, width, height, cfg.rois_per_image,
                                 mix_seed(cfg.seed, 0xDE7EC7ULL + image_index), cfg.proposals);

  Tape tape;
  const BoundParams bound = bind_params(tape, params, false);
  const ModelGraph g = model_forward(tape, bound, tape.constant(image_tensor(sample.image)), proposals, model);
  const Tensor& scores = tape.value(g.head.class_scores);
  const Tensor& deltas = tape.value(g.head.box_deltas);
  const std::size_t groups = scores.dim(1), d = deltas.dim(1);

  std::vector<DetectionRecord> out;
  for (int c = 1; c < static_cast<int>(groups); ++c) {
    std::vector<Box> boxes;
    std::vector<double> conf;
    const int slot = model.head.regression_slot(c);
    for (std::size_t r = 0; r < proposals.size(); ++r) {
      const auto p = softmax({scores.data() + r * groups, groups});
      const Scalar* t = deltas.data() + r * d + 4 * slot;
      try {
        boxes.push_back(clip_box(decode_box({t[0], t[1], t[2], t[3]}, proposals[r]), width, height));
      } catch (const GeometryError&) {
        continue;
      }
      conf.push_back(p[c]);
    }
    for (auto i : nms(boxes, conf, cfg.nms_thresh)) out.push_back({sample.image_id, c, conf[i], boxes[i]});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const DetectionRecord& a, const DetectionRecord& b) { return a.score > b.score; });
  if (static_cast<int>(out.size()) > cfg.max_detections) out.resize(cfg.max_detections);
  return out;
}

std::vector<DetectionRecord> run_detector(const ParamSet& params, const Dataset& data, const ModelConfig& model,
                                          const DetectorConfig& cfg) {
  check_compatible(params, model);
  std::vector<DetectionRecord> out;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    auto dets = detect_image(params, data.samples[i], i, model, cfg);
    out.insert(out.end(), dets.begin(), dets.end());
  }
  return out;
}

}  // namespace ban
