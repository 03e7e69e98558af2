#include "ban/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "ban/checkpoint.hpp"
#include "ban/error.hpp"
#include "ban/rng.hpp"

namespace ban {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
}

std::string timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

Dataset load_split(const RunConfig& cfg, const char* split) {
  const fs::path dir = fs::path(cfg.get("data_dir")) / split;
  if (!fs::exists(dir / "manifest.csv"))
    throw IoError("no dataset at '" + dir.string() + "' (run gen-data first)");
  Dataset d = load_dataset(dir);
  if (d.num_classes() != static_cast<int>(cfg.class_names().size()))
    throw ConfigError("dataset at '" + dir.string() + "' has " + std::to_string(d.num_classes()) +
                      " classes, config expects " + std::to_string(cfg.class_names().size()));
  return d;
}

ParamSet load_compatible(const fs::path& checkpoint, const ModelConfig& model) {
  ParamSet p = load_checkpoint(checkpoint);
  check_compatible(p, model);
  return p;
}

Tensor image_features(const ParamSet& params, const Image& image, const ModelConfig& model) {
  Tape tape;
  const BoundParams bound = bind_params(tape, params, false);
  return tape.value(backbone_forward(tape, bound, tape.constant(image_tensor(image)), model.backbone));
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void cmd_gen_data(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  make_dir(out);
  const auto train_rows = generate_dataset(cfg.train_spec(), out / "train");
  const auto test_rows = generate_dataset(cfg.test_spec(), out / "test");
  write_text(out / "config.txt", cfg.dump());
  log << "wrote " << train_rows.size() << " training and " << test_rows.size() << " test images to " << out.string()
      << "\n";
}

void cmd_train(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  const Dataset data = load_split(cfg, "train");
  const ModelConfig model = cfg.model();
  const SgdConfig sgd = cfg.sgd();
  make_dir(out);
  write_text(out / "config.txt", cfg.dump());
  std::ofstream tlog(out / "train.log");
  if (!tlog) throw IoError("cannot write '" + (out / "train.log").string() + "'");
  tlog << timestamp() << " start: " << data.samples.size() << " images, " << sgd.iterations << " iterations\n";
  const int every = std::max(1, sgd.iterations / 20);
  const TrainResult r = train(data, model, sgd, cfg.proposals(), cfg.seed(), [&](const LossRecord& rec) {
    if (rec.iteration % every == 0 || rec.iteration + 1 == sgd.iterations) {
      tlog << timestamp() << " iter " << rec.iteration << " loss " << fmt(rec.loss_total) << " lr " << rec.lr << "\n";
      tlog.flush();
      log << "iter " << rec.iteration << " loss " << fmt(rec.loss_total) << "\n";
    }
  });
  save_checkpoint(out / "checkpoint.bin", r.params);
  write_text(out / "loss.csv", loss_log_csv(r.log));
  const auto [first, last] = smoothed_loss_ends(r.log);
  tlog << timestamp() << " done: smoothed loss " << fmt(first) << " -> " << fmt(last) << "\n";
  log << "smoothed loss " << fmt(first) << " -> " << fmt(last) << "; checkpoint " << (out / "checkpoint.bin").string()
      << "\n";
}

EvalReport evaluate_detections(std::span<const DetectionRecord> dets, const Dataset& test) {
  const auto gts = ground_truth_records(test);
  const int c = test.num_classes();
  EvalReport r;
  r.class_names = test.class_names;
  r.map50 = map_voc(dets, gts, c, 0.5, ApProtocol::Voc07);
  r.map70 = map_voc(dets, gts, c, 0.7, ApProtocol::Voc07);
  r.coco = map_coco_style(dets, gts, c);
  r.map50_area = map_voc(dets, gts, c, 0.5, ApProtocol::Area).map;
  return r;
}

std::string metrics_text(const EvalReport& r) {
  std::ostringstream os;
  os << "mAP@0.5 (VOC07 11-point): " << fmt(r.map50.map) << "\n"
     << "mAP@0.7 (VOC07 11-point): " << fmt(r.map70.map) << "\n"
     << "mAP@0.5 (area):           " << fmt(r.map50_area) << "\n"
     << "mAP@[.5:.95] (area):      " << fmt(r.coco.map) << "\n";
  for (int c : r.map50.excluded)
    os << "excluded (no ground truth): " << r.class_names[static_cast<std::size_t>(c - 1)] << "\n";
  return os.str();
}

std::string metrics_csv(const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(17) << "metric,value\n"
     << "map50," << r.map50.map << "\nmap70," << r.map70.map << "\nmap50_area," << r.map50_area << "\nmap_coco,"
     << r.coco.map << "\n";
  return os.str();
}

std::string per_class_csv(const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(17) << "class_id,class,ap50,ap70,ap_coco\n";
  for (std::size_t i = 0; i < r.map50.per_class.size(); ++i) {
    const int c = r.map50.per_class[i].first;
    os << c << ',' << r.class_names[static_cast<std::size_t>(c - 1)] << ',' << r.map50.per_class[i].second << ','
       << r.map70.per_class[i].second << ',' << r.coco.per_class[i].second << '\n';
  }
  return os.str();
}

EvalReport cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out, std::ostream& log) {
  cfg.validate();
  const ModelConfig model = cfg.model();
  const ParamSet params = load_compatible(checkpoint, model);
  const Dataset test = load_split(cfg, "test");
  const auto dets = run_detector(params, test, model, cfg.detector());
  const EvalReport r = evaluate_detections(dets, test);
  make_dir(out);
  write_text(out / "metrics.txt", metrics_text(r));
  write_text(out / "metrics.csv", metrics_csv(r));
  write_text(out / "per_class_ap.csv", per_class_csv(r));
  std::ostringstream d;
  d << std::setprecision(17) << "image_id,class_id,score,x1,y1,x2,y2\n";
  for (const auto& det : dets) {
    const Corners c = det.box.corners();
    d << det.image_id << ',' << det.class_id << ',' << det.score << ',' << c.x1 << ',' << c.y1 << ',' << c.x2 << ','
      << c.y2 << '\n';
  }
  write_text(out / "detections.csv", d.str());
  log << metrics_text(r);
  return r;
}

ContributionAnalysis contributions(const RunConfig& cfg, const ParamSet& params, const Dataset& test) {
  const ModelConfig model = cfg.model();
  const DetectorConfig det = cfg.detector();
  const std::size_t n = std::min<std::size_t>(test.samples.size(), static_cast<std::size_t>(cfg.get_int("analyze_images")));
  std::vector<ContributionSample> samples;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = test.samples[i];
    std::vector<Box> gt_boxes;
    for (const auto& o : s.objects) gt_boxes.push_back(o.box);
    ContributionSample cs;
    cs.features = image_features(params, s.image, model);
    cs.rois = propose(gt_boxes, s.image.width, s.image.height, det.rois_per_image,
                      mix_seed(det.seed, 0xDE7EC7ULL + i), det.proposals);
    for (const auto& l : assign_labels(cs.rois, s.objects)) cs.labels.push_back(l.label);
    samples.push_back(std::move(cs));
  }
  return contribution_analysis(params, samples, model.head, model.backbone.spatial_scale(), test.class_names);
}

void cmd_analyze(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out, std::ostream& log) {
  cfg.validate();
  const ModelConfig model = cfg.model();
  if (model.head.head_mode != PoolMode::PSRoI) throw ConfigError("analyze requires head_mode=psroi");
  const ParamSet params = load_compatible(checkpoint, model);
  const ContributionAnalysis a = contributions(cfg, params, load_split(cfg, "test"));
  make_dir(out);
  write_text(out / "contribution_classification.csv", contribution_csv(a.classification));
  write_text(out / "contribution_localization.csv", contribution_csv(a.localization));
  log << "classification contributions:\n" << contribution_csv(a.classification);
  log << "localization contributions:\n" << contribution_csv(a.localization);
  for (const auto& row : a.classification.omitted) log << "omitted (no RoIs): " << row << "\n";
}

const std::vector<std::string>& ablation_context_sets() {
  static const std::vector<std::string> sets{"none", "S", "V", "B", "S,V", "S,V,B"};
  return sets;
}

std::vector<AblationRow> ablation_grid(const RunConfig& cfg, const Dataset& train_set, const Dataset& test_set,
                                       std::ostream& log) {
  cfg.validate();
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(cfg.get("ablation_seeds"));
  for (std::string item; std::getline(ss, item, ',');) seeds.push_back(std::stoull(item));
  std::vector<AblationRow> rows;
  for (const auto& contexts : ablation_context_sets())
    for (auto seed : seeds) {
      RunConfig run = cfg;
      run.set("contexts", contexts);
      run.set("seed", std::to_string(seed));
      run.set("iterations", cfg.get("ablation_iterations"));
      const ModelConfig model = run.model();
      const TrainResult tr = train(train_set, model, run.sgd(), run.proposals(), seed);
      const EvalReport r = evaluate_detections(run_detector(tr.params, test_set, model, run.detector()), test_set);
      rows.push_back({contexts, seed, r.map50.map, r.map70.map});
      log << "ablation " << contexts << " seed " << seed << ": mAP@0.5 " << fmt(r.map50.map, 4) << " mAP@0.7 "
          << fmt(r.map70.map, 4) << "\n";
    }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << std::setprecision(17) << "contexts,seed,map50,map70\n";
  for (const auto& r : rows) os << '"' << r.contexts << "\"," << r.seed << ',' << r.map50 << ',' << r.map70 << '\n';
  return os.str();
}

std::string ablation_summary(std::span<const AblationRow> rows) {
  // Reference VOC07 test numbers for the same six context sets.
  static const std::map<std::string, std::pair<double, double>> reference{
      {"none", {79.54, 61.95}}, {"S", {80.23, 62.84}},   {"V", {80.01, 62.13}},
      {"B", {79.80, 63.23}},    {"S,V", {80.39, 63.36}}, {"S,V,B", {80.75, 64.66}}};
  std::ostringstream os;
  os << "contexts  median mAP@0.5  median mAP@0.7  | reference mAP@0.5  mAP@0.7\n";
  for (const auto& set : ablation_context_sets()) {
    std::vector<double> a, b;
    for (const auto& r : rows)
      if (r.contexts == set) {
        a.push_back(r.map50 * 100);
        b.push_back(r.map70 * 100);
      }
    if (a.empty()) continue;
    const auto& ref = reference.at(set);
    os << std::left << std::setw(8) << set << "  " << std::right << std::setw(14) << fmt(median(a), 2) << "  "
       << std::setw(14) << fmt(median(b), 2) << "  | " << std::setw(17) << fmt(ref.first, 2) << "  "
       << std::setw(7) << fmt(ref.second, 2) << "\n";
  }
  return os.str();
}

void cmd_ablation(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  const auto rows = ablation_grid(cfg, load_split(cfg, "train"), load_split(cfg, "test"), log);
  make_dir(out);
  write_text(out / "ablation.csv", ablation_csv(rows));
  write_text(out / "ablation_summary.txt", ablation_summary(rows));
  log << ablation_summary(rows);
}

Image heat_map_image(const Tensor& map, int factor, double lo, double hi) {
  if (map.rank() != 2) throw DimensionError("heat map must be [k,k]");
  if (factor < 1) throw ConfigError("heat map scale must be >= 1");
  const int k = static_cast<int>(map.dim(0));
  Image img{k * factor, k * factor, std::vector<std::uint8_t>(static_cast<std::size_t>(k * factor * k * factor * 3))};
  const double range = hi > lo ? hi - lo : 1.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double t = std::clamp((map[static_cast<std::size_t>((y / factor) * k + x / factor)] - lo) / range, 0.0, 1.0);
      std::uint8_t* px = &img.rgb[static_cast<std::size_t>((y * img.width + x) * 3)];
      px[0] = static_cast<std::uint8_t>(std::lround(255 * t));
      px[1] = static_cast<std::uint8_t>(std::lround(255 * (1 - std::abs(2 * t - 1))));
      px[2] = static_cast<std::uint8_t>(std::lround(255 * (1 - t)));
    }
  return img;
}

void cmd_visualize(const RunConfig& cfg, const fs::path& checkpoint, const VisualizeRequest& req, const fs::path& out,
                   std::ostream& log) {
  cfg.validate();
  const ModelConfig model = cfg.model();
  if (model.head.head_mode != PoolMode::PSRoI) throw ConfigError("visualize requires head_mode=psroi");
  const ParamSet params = load_compatible(checkpoint, model);
  const Dataset test = load_split(cfg, "test");
  auto it = std::find_if(test.samples.begin(), test.samples.end(),
                         [&](const Sample& s) { return s.image_id == req.image_id; });
  if (it == test.samples.end()) throw ConfigError("image '" + req.image_id + "' is not in the test set");
  if (!req.proposal && it->objects.empty()) throw ConfigError("image has no objects; pass --proposal");
  const Box proposal = req.proposal ? *req.proposal : it->objects.front().box;
  if (!proposal.valid()) throw GeometryError("proposal must have positive extent");

  const Tensor features = image_features(params, it->image, model);
  const double scale = model.backbone.spatial_scale();
  const HeadOutput h = forward(params, features, std::span(&proposal, 1), model.head, scale).front();
  int cls = 1;
  for (int c = 2; c <= model.head.num_classes; ++c)
    if (h.class_scores[static_cast<std::size_t>(c)] > h.class_scores[static_cast<std::size_t>(cls)]) cls = c;
  if (req.class_id) cls = *req.class_id;
  if (cls < 0 || cls > model.head.num_classes) throw ConfigError("class id out of range");

  const auto subnets = model.head.subnetworks();
  std::vector<Tensor> maps;
  double lo = INFINITY, hi = -INFINITY;
  for (auto kind : subnets) {
    maps.push_back(local_activation_map(params, features, proposal, kind, cls, model.head, scale));
    for (auto v : maps.back().values()) {
      lo = std::min(lo, static_cast<double>(v));
      hi = std::max(hi, static_cast<double>(v));
    }
  }
  make_dir(out);
  const int factor = cfg.get_int("heatmap_scale");
  double total = 0;
  for (const auto& s : h.per_context_scores) total += std::abs(s[static_cast<std::size_t>(cls)]);
  std::ostringstream csv;
  csv << std::setprecision(17) << "context,name,score,contribution\n";
  for (std::size_t s = 0; s < subnets.size(); ++s) {
    write_ppm(out / ("heat_" + std::string(context_key(subnets[s])) + ".ppm"), heat_map_image(maps[s], factor, lo, hi));
    const double score = h.per_context_scores[s][static_cast<std::size_t>(cls)];
    csv << context_key(subnets[s]) << ',' << context_report_name(subnets[s]) << ',' << score << ','
        << (total > 0 ? std::abs(score) / total : 0.0) << '\n';
  }
  write_text(out / "contribution.csv", csv.str());
  log << "class " << cls << " (" << (cls == 0 ? std::string("bkgd") : test.class_names[static_cast<std::size_t>(cls - 1)]) << "): wrote "
      << subnets.size() << " heat maps to " << out.string() << "\n";
}

}  // namespace ban
