#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ban/backbone.hpp"
#include "ban/dataset.hpp"
#include "ban/training.hpp"

namespace ban {

struct DetectionRecord {
  std::string image_id;
  int class_id = 1;
  double score = 0;
  Box box;
};

struct GroundTruthRecord {
  std::string image_id;
  int class_id = 1;
  Box box;
};

std::vector<GroundTruthRecord> ground_truth_records(const Dataset& data);

enum class ApProtocol {
  Voc07,  // 11-point interpolated
  Area,   // area under the max-interpolated PR curve
};

struct PrPoint {
  double precision;
  double recall;
};

// Greedy matching in descending score order (stable for ties): a detection
// takes the highest-IoU unmatched ground truth of its class and image when
// that IoU >= iou_thresh; anything else is a false positive.
std::vector<PrPoint> precision_recall(std::span<const DetectionRecord> dets, std::span<const GroundTruthRecord> gts,
                                      int class_id, double iou_thresh);

// 0 when the class has no ground truth.
double average_precision(std::span<const DetectionRecord> dets, std::span<const GroundTruthRecord> gts, int class_id,
                         double iou_thresh, ApProtocol protocol);

struct MapResult {
  double map = 0;
  std::vector<std::pair<int, double>> per_class;  // classes with ground truth
  std::vector<int> excluded;                      // classes without ground truth
};

MapResult map_voc(std::span<const DetectionRecord> dets, std::span<const GroundTruthRecord> gts, int num_classes,
                  double iou_thresh, ApProtocol protocol = ApProtocol::Voc07);

// Mean over IoU thresholds 0.50:0.05:0.95 of the class-mean Area AP.
MapResult map_coco_style(std::span<const DetectionRecord> dets, std::span<const GroundTruthRecord> gts,
                         int num_classes);

struct DetectorConfig {
  int rois_per_image = 300;
  double nms_thresh = 0.3;
  int max_detections = 100;
  std::uint64_t seed = 42;
  ProposalConfig proposals;
};

// Per image: proposals, head forward, softmax, box decoding, clipping,
// per-class NMS and a global top-k by score.
std::vector<DetectionRecord> run_detector(const ParamSet& params, const Dataset& data, const ModelConfig& model,
                                          const DetectorConfig& cfg);

std::vector<DetectionRecord> detect_image(const ParamSet& params, const Sample& sample, std::size_t image_index,
                                          const ModelConfig& model, const DetectorConfig& cfg);

}  // namespace ban
