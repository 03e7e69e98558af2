#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ban/error.hpp"
#include "ban/evaluation.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace ban;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ban_test_" + name);
  fs::remove_all(p);
  return p;
}

// Area AP by explicit enumeration: TP/FP flags come from the given match
// vector, precision at every rank, then for each rank the best precision at
// any rank with at least that recall.
double brute_area_ap(const std::vector<bool>& tp, std::size_t npos) {
  double ap = 0, prev_recall = 0;
  std::size_t hits = 0;
  std::vector<double> prec, rec;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    hits += tp[i];
    prec.push_back(static_cast<double>(hits) / static_cast<double>(i + 1));
    rec.push_back(static_cast<double>(hits) / static_cast<double>(npos));
  }
  for (std::size_t i = 0; i < tp.size(); ++i) {
    double best = 0;
    for (std::size_t j = 0; j < tp.size(); ++j)
      if (rec[j] >= rec[i]) best = std::max(best, prec[j]);
    ap += (rec[i] - prev_recall) * best;
    prev_recall = rec[i];
  }
  return ap;
}

double brute_voc07_ap(const std::vector<bool>& tp, std::size_t npos) {
  double ap = 0;
  for (int t = 0; t <= 10; ++t) {
    double best = 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
      hits += tp[i];
      if (static_cast<double>(hits) / static_cast<double>(npos) >= t / 10.0)
        best = std::max(best, static_cast<double>(hits) / static_cast<double>(i + 1));
    }
    ap += best / 11;
  }
  return ap;
}

// Independent greedy matcher over a score-sorted list.
std::vector<bool> brute_matches(const std::vector<DetectionRecord>& sorted, const std::vector<GroundTruthRecord>& gts,
                                double thresh) {
  std::vector<bool> used(gts.size(), false), tp;
  for (const auto& d : sorted) {
    int best = -1;
    double best_iou = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].image_id != d.image_id || gts[g].class_id != d.class_id) continue;
      const double o = iou(d.box, gts[g].box);
      if (o > best_iou) {
        best_iou = o;
        best = static_cast<int>(g);
      }
    }
    const bool hit = best >= 0 && best_iou >= thresh;
    if (hit) used[static_cast<std::size_t>(best)] = true;
    tp.push_back(hit);
  }
  return tp;
}

}  // namespace

TEST_CASE("dataset generation") {
  SyntheticSpec spec;
  spec.num_images = 12;
  spec.image_size = 64;
  spec.min_size = 10;
  spec.max_size = 30;
  const Dataset a = generate_samples(spec);
  REQUIRE(a.samples.size() == 12);
  for (const auto& s : a.samples) {
    CHECK(s.image.rgb.size() == 64u * 64u * 3u);
    CHECK(!s.objects.empty());
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const Corners c = s.objects[i].box.corners();
      CHECK(c.x1 >= 0);
      CHECK(c.y1 >= 0);
      CHECK(c.x2 <= 64);
      CHECK(c.y2 <= 64);
      for (std::size_t j = 0; j < i; ++j) CHECK(iou(s.objects[i].box, s.objects[j].box) <= 0.5);
    }
  }

  const fs::path d1 = temp_dir("gen1"), d2 = temp_dir("gen2");
  generate_dataset(spec, d1);
  generate_dataset(spec, d2);
  for (const auto& e : fs::recursive_directory_iterator(d1))
    if (e.is_regular_file()) CHECK(slurp(e.path()) == slurp(d2 / fs::relative(e.path(), d1)));

  const Dataset back = load_dataset(d1);
  REQUIRE(back.samples.size() == a.samples.size());
  CHECK(back.class_names == a.class_names);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(back.samples[i].image.rgb == a.samples[i].image.rgb);
    REQUIRE(back.samples[i].objects.size() == a.samples[i].objects.size());
    for (std::size_t j = 0; j < a.samples[i].objects.size(); ++j)
      CHECK(iou(back.samples[i].objects[j].box, a.samples[i].objects[j].box) > 1 - 1e-12);
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("one object per image") {
  SyntheticSpec spec;
  spec.num_images = 9;
  spec.min_objects = spec.max_objects = 1;
  const fs::path d = temp_dir("one");
  generate_dataset(spec, d);
  const std::string ann = slurp(d / "annotations.csv");
  CHECK(std::count(ann.begin(), ann.end(), '\n') == 9);
  fs::remove_all(d);
}

TEST_CASE("dataset errors") {
  SyntheticSpec spec;
  spec.classes = {"hexagon"};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK_THROWS_AS(load_dataset("/nonexistent/dir"), IoError);
  CHECK_THROWS_AS(read_ppm("/nonexistent.ppm"), IoError);
}

TEST_CASE("ppm round trip") {
  Image img{3, 2, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18}};
  CHECK(encode_ppm(img).rfind("P6\n3 2\n255\n", 0) == 0);
  const fs::path p = fs::temp_directory_path() / "ban_test_rt.ppm";
  write_ppm(p, img);
  CHECK(read_ppm(p).rgb == img.rgb);
  fs::remove(p);
}

TEST_CASE("ap worked examples") {
  const std::vector<GroundTruthRecord> one{{"a", 1, Box::from_corners(0, 0, 10, 10)}};
  const std::vector<DetectionRecord> good{{"a", 1, 0.9, Box::from_corners(0, 0, 10, 9)}};
  const std::vector<DetectionRecord> bad{{"a", 1, 0.9, Box::from_corners(0, 0, 10, 4)}};
  for (auto proto : {ApProtocol::Voc07, ApProtocol::Area}) {
    CHECK(average_precision(good, one, 1, 0.5, proto) == 1.0);
    CHECK(average_precision(bad, one, 1, 0.5, proto) == 0.0);
  }

  const std::vector<GroundTruthRecord> two{{"a", 1, Box::from_corners(0, 0, 10, 10)},
                                           {"a", 1, Box::from_corners(50, 50, 60, 60)}};
  const std::vector<DetectionRecord> ranked{{"a", 1, 0.9, Box::from_corners(0, 0, 10, 10)},
                                            {"a", 1, 0.8, Box::from_corners(30, 30, 40, 40)},
                                            {"a", 1, 0.7, Box::from_corners(50, 50, 60, 60)}};
  CHECK(average_precision(ranked, two, 1, 0.5, ApProtocol::Area) == doctest::Approx(5.0 / 6).epsilon(1e-15));

  // A duplicate of a matched detection is a false positive.
  const std::vector<DetectionRecord> dup{{"a", 1, 0.9, Box::from_corners(0, 0, 10, 10)},
                                         {"a", 1, 0.8, Box::from_corners(0, 0, 10, 10)}};
  CHECK(precision_recall(dup, one, 1, 0.5).back().precision == 0.5);
}

TEST_CASE("map edge cases") {
  const std::vector<GroundTruthRecord> gts{{"a", 1, Box::from_corners(0, 0, 10, 10)},
                                           {"b", 3, Box::from_corners(5, 5, 20, 20)}};
  std::vector<DetectionRecord> perfect;
  for (const auto& g : gts) perfect.push_back({g.image_id, g.class_id, 1.0, g.box});
  const MapResult r = map_voc(perfect, gts, 3, 0.5);
  CHECK(r.map == 1.0);
  CHECK(r.excluded == std::vector<int>{2});
  CHECK(r.per_class.size() == 2);
  CHECK(map_coco_style(perfect, gts, 3).map == 1.0);
  CHECK(map_voc({}, gts, 3, 0.5).map == 0.0);
  CHECK(map_coco_style({}, gts, 3).map == 0.0);
}

TEST_CASE("ap matches brute force on micro instances") {
  Rng rng(123);
  for (int trial = 0; trial < 3000; ++trial) {
    const int ng = static_cast<int>(rng.uniform_int(1, 3)), nd = static_cast<int>(rng.uniform_int(0, 5));
    std::vector<GroundTruthRecord> gts;
    for (int g = 0; g < ng; ++g) {
      const double x = rng.uniform_int(0, 3) * 8.0, y = rng.uniform_int(0, 1) * 8.0;
      gts.push_back({rng.uniform() < 0.8 ? "a" : "b", 1, Box::from_corners(x, y, x + 10, y + 10)});
    }
    std::vector<DetectionRecord> dets;
    for (int d = 0; d < nd; ++d) {
      const double x = rng.uniform_int(0, 3) * 8.0 + rng.uniform(-3, 3), y = rng.uniform_int(0, 1) * 8.0;
      dets.push_back({rng.uniform() < 0.8 ? "a" : "b", 1, static_cast<double>(rng.uniform_int(0, 3)),
                      Box::from_corners(x, y, x + 10, y + 10)});
    }
    std::vector<DetectionRecord> sorted = dets;
    std::stable_sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.score > b.score; });
    const auto tp = brute_matches(sorted, gts, 0.5);
    CHECK(average_precision(dets, gts, 1, 0.5, ApProtocol::Area) == brute_area_ap(tp, gts.size()));
    CHECK(average_precision(dets, gts, 1, 0.5, ApProtocol::Voc07) == doctest::Approx(brute_voc07_ap(tp, gts.size())).epsilon(1e-15));
  }
}

TEST_CASE("detector output properties") {
  SyntheticSpec spec;
  spec.num_images = 2;
  spec.image_size = 32;
  spec.min_size = 8;
  spec.max_size = 16;
  const Dataset data = generate_samples(spec);
  ModelConfig m;
  m.backbone.channels = {4, 6};
  m.head.contexts = parse_contexts("S");
  m.head.num_classes = 3;
  m.head.k = 2;
  m.head.trunk_channels = 8;
  const ParamSet p = build_model(m, 1);
  DetectorConfig dc;
  dc.rois_per_image = 40;
  dc.max_detections = 50;
  const auto a = run_detector(p, data, m, dc);
  CHECK(a.size() <= 100);
  for (const auto& d : a) {
    CHECK(d.score >= 0);
    CHECK(d.score <= 1);
    const Corners c = d.box.corners();
    CHECK(c.x1 >= 0);
    CHECK(c.x2 <= 32);
  }
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (a[i].image_id == a[j].image_id && a[i].class_id == a[j].class_id) CHECK(iou(a[i].box, a[j].box) <= 0.3);
  const auto b = run_detector(p, data, m, dc);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].score == b[i].score);
    CHECK(a[i].box == b[i].box);
  }
  ModelConfig other = m;
  other.head.k = 3;
  CHECK_THROWS_AS(run_detector(p, data, other, dc), ConfigError);
}
