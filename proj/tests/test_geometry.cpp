#include <algorithm>
#include <cmath>

#include "ban/error.hpp"
#include "ban/geometry.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace ban;

namespace {

Box random_box(Rng& rng, double extent = 100) {
  const double x1 = rng.uniform(0, extent * 0.8), y1 = rng.uniform(0, extent * 0.8);
  return Box::from_corners(x1, y1, x1 + rng.uniform(1, extent * 0.5), y1 + rng.uniform(1, extent * 0.5));
}

// Intersection over union from corner arithmetic, written independently.
double iou_oracle(const Box& a, const Box& b) {
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2, ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2, by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

// Keep a box iff no higher-priority kept box overlaps it above thresh,
// evaluated by scanning a fully sorted priority list.
std::vector<std::size_t> nms_oracle(const std::vector<Box>& boxes, const std::vector<double>& scores, double thresh) {
  std::vector<std::size_t> order(boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  });
  std::vector<std::size_t> kept;
  for (auto i : order) {
    bool ok = true;
    for (auto j : kept) ok = ok && !(iou_oracle(boxes[i], boxes[j]) > thresh);
    if (ok) kept.push_back(i);
  }
  return kept;
}

}  // namespace

TEST_CASE("context examples") {
  const Box r{100, 100, 60, 90};
  CHECK(generate_context(r, ContextKind::Base) == r);
  CHECK(generate_context(r, ContextKind::SideLeft) == Box{70, 100, 40, 90});
  CHECK(generate_context(r, ContextKind::VertexTL) == Box{70, 55, 40, 60});
  CHECK(generate_context(r, ContextKind::OutBoundary) == Box{100, 100, 120, 180});
  CHECK(generate_context(r, ContextKind::InBoundary) == Box{100, 100, 30, 45});
  CHECK(generate_context(r, ContextKind::SideBottom) == Box{100, 145, 60, 60});
}

TEST_CASE("context area ratios") {
  const Box r{10, 20, 30, 60};
  for (auto kind : kAllContexts) {
    const double ratio = generate_context(r, kind).area() / r.area();
    switch (family_of(kind)) {
      case ContextFamily::None: CHECK(ratio == 1.0); break;
      case ContextFamily::Side: CHECK(ratio == doctest::Approx(2.0 / 3).epsilon(1e-15)); break;
      case ContextFamily::Vertex: CHECK(ratio == doctest::Approx(4.0 / 9).epsilon(1e-15)); break;
      case ContextFamily::Boundary:
        CHECK(ratio == (kind == ContextKind::InBoundary ? 0.25 : 4.0));
        break;
    }
  }
}

TEST_CASE("context families") {
  int counts[4] = {0, 0, 0, 0};
  for (auto kind : kAllContexts) ++counts[static_cast<int>(family_of(kind))];
  CHECK(counts[0] == 1);
  CHECK(counts[1] == 4);
  CHECK(counts[2] == 4);
  CHECK(counts[3] == 2);
  for (auto kind : kAllContexts) CHECK(context_from_key(context_key(kind)) == kind);
  CHECK_THROWS_AS(context_from_key("diagonal"), ConfigError);
}

TEST_CASE("context equivariance") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Box r = random_box(rng);
    const double dx = rng.uniform(-50, 50), dy = rng.uniform(-50, 50), s = rng.uniform(0.2, 5);
    for (auto kind : kAllContexts) {
      const Box c = generate_context(r, kind);
      const Box shifted = generate_context({r.cx + dx, r.cy + dy, r.w, r.h}, kind);
      CHECK(std::abs(shifted.cx - (c.cx + dx)) < 1e-9);
      CHECK(std::abs(shifted.cy - (c.cy + dy)) < 1e-9);
      CHECK(std::abs(shifted.w - c.w) < 1e-9);
      const Box scaled = generate_context({r.cx * s, r.cy * s, r.w * s, r.h * s}, kind);
      CHECK(std::abs(scaled.cx - c.cx * s) < 1e-9);
      CHECK(std::abs(scaled.h - c.h * s) < 1e-9);
    }
  }
}

TEST_CASE("iou") {
  const Box a = Box::from_corners(0, 0, 10, 10);
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box::from_corners(20, 20, 30, 30)) == 0.0);
  CHECK(iou(a, Box::from_corners(5, 0, 15, 10)) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const Box p = random_box(rng), q = random_box(rng);
    CHECK(std::abs(iou(p, q) - iou_oracle(p, q)) < 1e-12);
    CHECK(iou(p, q) == iou(q, p));
  }
}

TEST_CASE("nms examples") {
  const std::vector<Box> boxes{Box::from_corners(0, 0, 10, 10), Box::from_corners(1, 1, 11, 11),
                               Box::from_corners(20, 20, 30, 30)};
  const std::vector<double> scores{0.9, 0.8, 0.7};
  CHECK(nms(boxes, scores, 0.3) == std::vector<std::size_t>{0, 2});
  CHECK(nms(std::span(boxes).first(1), std::span(scores).first(1), 0.3) == std::vector<std::size_t>{0});
  const std::vector<Box> same(4, Box{5, 5, 4, 4});
  CHECK(nms(same, std::vector<double>{0.1, 0.7, 0.3, 0.7}, 0.3) == std::vector<std::size_t>{1});
}

TEST_CASE("nms matches brute force on micro-instances") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 6));
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) {
      boxes.push_back(random_box(rng, 30));
      scores.push_back(static_cast<double>(rng.uniform_int(0, 4)) / 4);  // frequent ties
    }
    const double thresh = rng.uniform(0.1, 0.7);
    CHECK(nms(boxes, scores, thresh) == nms_oracle(boxes, scores, thresh));
  }
}

TEST_CASE("box encoding") {
  const Box anchor{0, 0, 10, 10};
  CHECK(encode_box(anchor, anchor) == RegressionTarget{0, 0, 0, 0});
  const RegressionTarget t = encode_box({5, 0, 10, 10}, anchor);
  CHECK(t == RegressionTarget{0.5, 0, 0, 0});
  Rng rng(4);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const Box g = random_box(rng), p = random_box(rng);
    const Box back = decode_box(encode_box(g, p), p);
    worst = std::max({worst, std::abs(back.cx - g.cx), std::abs(back.cy - g.cy), std::abs(back.w - g.w),
                      std::abs(back.h - g.h)});
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("clipping") {
  const Box inside = Box::from_corners(10, 10, 20, 30);
  CHECK(clip_box(inside, 100, 100) == inside);
  const Corners c = clip_box(Box::from_corners(-5, -5, 5, 5), 100, 100).corners();
  CHECK(c.x1 == 0);
  CHECK(c.y1 == 0);
  CHECK(c.x2 == 5);
  CHECK(c.y2 == 5);
  CHECK_THROWS_AS(clip_box(Box::from_corners(120, 120, 130, 130), 100, 100), EmptyBoxError);
}
