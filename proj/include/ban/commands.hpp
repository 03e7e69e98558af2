#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ban/run_config.hpp"

namespace ban {

namespace fs = std::filesystem;

// Writes <out>/train, <out>/test and <out>/config.txt.
void cmd_gen_data(const RunConfig& cfg, const fs::path& out, std::ostream& log);

// Trains on <data_dir>/train. Writes checkpoint.bin, loss.csv, config.txt and
// train.log (the only file with wall-clock content).
void cmd_train(const RunConfig& cfg, const fs::path& out, std::ostream& log);

struct EvalReport {
  MapResult map50, map70, coco;
  double map50_area = 0;
  std::vector<std::string> class_names;
};

EvalReport evaluate_detections(std::span<const DetectionRecord> dets, const Dataset& test);
std::string metrics_text(const EvalReport& r);
std::string metrics_csv(const EvalReport& r);
std::string per_class_csv(const EvalReport& r);

// Evaluates on <data_dir>/test. Writes metrics.txt, metrics.csv,
// per_class_ap.csv and detections.csv.
EvalReport cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out, std::ostream& log);

// Contribution tables over the first analyze_images test images.
ContributionAnalysis contributions(const RunConfig& cfg, const ParamSet& params, const Dataset& test);
void cmd_analyze(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out, std::ostream& log);

struct AblationRow {
  std::string contexts;  // "none", "S", ...
  std::uint64_t seed = 0;
  double map50 = 0;
  double map70 = 0;
};

// The six context sets compared in the ablation, in report order.
const std::vector<std::string>& ablation_context_sets();

// Trains and evaluates every context set for every ablation seed. The
// training and test sets are supplied so callers control their size.
std::vector<AblationRow> ablation_grid(const RunConfig& cfg, const Dataset& train_set, const Dataset& test_set,
                                       std::ostream& log);
std::string ablation_csv(std::span<const AblationRow> rows);
std::string ablation_summary(std::span<const AblationRow> rows);
void cmd_ablation(const RunConfig& cfg, const fs::path& out, std::ostream& log);

struct VisualizeRequest {
  std::string image_id;
  std::optional<Box> proposal;  // default: first ground-truth box
  std::optional<int> class_id;  // default: argmax of the aggregate score
};

// Writes heat_<context>.ppm per sub-network and contribution.csv.
void cmd_visualize(const RunConfig& cfg, const fs::path& checkpoint, const VisualizeRequest& req, const fs::path& out,
                   std::ostream& log);

// k x k map upscaled by `factor`, blue (low) to red (high) over [lo, hi].
Image heat_map_image(const Tensor& map, int factor, double lo, double hi);

}  // namespace ban
