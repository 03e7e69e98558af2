#include "ban/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ban/error.hpp"

namespace ban {

Box Box::from_corners(double x1, double y1, double x2, double y2) {
  return Box{(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
}

bool Box::valid() const {
  return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) && w > 0 && h > 0;
}

ContextFamily family_of(ContextKind kind) {
  switch (kind) {
    case ContextKind::Base:
      return ContextFamily::None;
    case ContextKind::SideTop:
    case ContextKind::SideBottom:
    case ContextKind::SideLeft:
    case ContextKind::SideRight:
      return ContextFamily::Side;
    case ContextKind::VertexTL:
    case ContextKind::VertexTR:
    case ContextKind::VertexBR:
    case ContextKind::VertexBL:
      return ContextFamily::Vertex;
    case ContextKind::InBoundary:
    case ContextKind::OutBoundary:
      return ContextFamily::Boundary;
  }
  return ContextFamily::None;
}

namespace {
struct ContextNames {
  ContextKind kind;
  std::string_view key;
  std::string_view report;
};
constexpr ContextNames kNames[] = {
    {ContextKind::Base, "base", "Base"},
    {ContextKind::SideTop, "side_top", "Up"},
    {ContextKind::SideBottom, "side_bottom", "Down"},
    {ContextKind::SideLeft, "side_left", "Left"},
    {ContextKind::SideRight, "side_right", "Right"},
    {ContextKind::VertexTL, "vertex_tl", "NW"},
    {ContextKind::VertexTR, "vertex_tr", "NE"},
    {ContextKind::VertexBR, "vertex_br", "SE"},
    {ContextKind::VertexBL, "vertex_bl", "SW"},
    {ContextKind::InBoundary, "in", "In"},
    {ContextKind::OutBoundary, "out", "Out"},
};
}  // namespace

std::string_view context_key(ContextKind kind) { return kNames[static_cast<int>(kind)].key; }

std::string_view context_report_name(ContextKind kind) { return kNames[static_cast<int>(kind)].report; }

ContextKind context_from_key(std::string_view key) {
  for (const auto& n : kNames)
    if (n.key == key || n.report == key) return n.kind;
  throw ConfigError("unknown context '" + std::string(key) + "'");
}

Box generate_context(const Box& r, ContextKind kind) {
  const double w23 = 2.0 * r.w / 3.0;
  const double h23 = 2.0 * r.h / 3.0;
  const double hw = r.w / 2, hh = r.h / 2;
  switch (kind) {
    case ContextKind::Base:
      return r;
    case ContextKind::SideTop:
      return {r.cx, r.cy - hh, r.w, h23};
    case ContextKind::SideBottom:
      return {r.cx, r.cy + hh, r.w, h23};
    case ContextKind::SideLeft:
      return {r.cx - hw, r.cy, w23, r.h};
    case ContextKind::SideRight:
      return {r.cx + hw, r.cy, w23, r.h};
    case ContextKind::VertexTL:
      return {r.cx - hw, r.cy - hh, w23, h23};
    case ContextKind::VertexTR:
      return {r.cx + hw, r.cy - hh, w23, h23};
    case ContextKind::VertexBR:
      return {r.cx + hw, r.cy + hh, w23, h23};
    case ContextKind::VertexBL:
      return {r.cx - hw, r.cy + hh, w23, h23};
    case ContextKind::InBoundary:
      return {r.cx, r.cy, hw, hh};
    case ContextKind::OutBoundary:
      return {r.cx, r.cy, 2 * r.w, 2 * r.h};
  }
  return r;
}

double iou(const Box& a, const Box& b) {
  const Corners ca = a.corners(), cb = b.corners();
  const double iw = std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1);
  const double ih = std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores, double thresh) {
  if (boxes.size() != scores.size()) throw DimensionError("nms: boxes and scores differ in length");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> kept;
  for (auto i : order) {
    bool keep = true;
    for (auto k : kept)
      if (iou(boxes[i], boxes[k]) > thresh) {
        keep = false;
        break;
      }
    if (keep) kept.push_back(i);
  }
  return kept;
}

RegressionTarget encode_box(const Box& gt, const Box& anchor) {
  if (!(anchor.w > 0 && anchor.h > 0 && gt.w > 0 && gt.h > 0))
    throw GeometryError("encode_box: boxes must have positive extent");
  return {(gt.cx - anchor.cx) / anchor.w, (gt.cy - anchor.cy) / anchor.h, std::log(gt.w / anchor.w),
          std::log(gt.h / anchor.h)};
}

Box decode_box(const RegressionTarget& t, const Box& anchor) {
  return {t.tx * anchor.w + anchor.cx, t.ty * anchor.h + anchor.cy, std::exp(t.tw) * anchor.w,
          std::exp(t.th) * anchor.h};
}

Box clip_box(const Box& b, int width, int height) {
  if (width <= 0 || height <= 0) throw GeometryError("clip_box: image extents must be positive");
  const Corners orig = b.corners();
  Corners c = orig;
  c.x1 = std::clamp(c.x1, 0.0, double(width));
  c.x2 = std::clamp(c.x2, 0.0, double(width));
  c.y1 = std::clamp(c.y1, 0.0, double(height));
  c.y2 = std::clamp(c.y2, 0.0, double(height));
  if (!(c.x2 > c.x1 && c.y2 > c.y1)) throw EmptyBoxError("clip_box: box lies outside the image");
  if (c.x1 == orig.x1 && c.y1 == orig.y1 && c.x2 == orig.x2 && c.y2 == orig.y2) return b;
  return Box::from_corners(c);
}

}  // namespace ban
