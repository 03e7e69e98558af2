#pragma once

#include <array>
#include <span>
#include <string_view>
#include <vector>

namespace ban {

struct Corners {
  double x1, y1, x2, y2;
};

// Axis-aligned box in continuous pixel coordinates, stored center-size.
struct Box {
  double cx = 0, cy = 0, w = 1, h = 1;

  static Box from_corners(double x1, double y1, double x2, double y2);
  static Box from_corners(const Corners& c) { return from_corners(c.x1, c.y1, c.x2, c.y2); }
  Corners corners() const { return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }
  double area() const { return w * h; }
  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

// Base plus the ten boundary contexts. Enumerator order is the canonical
// sub-network order used for parameter naming.
enum class ContextKind {
  Base,
  SideTop,
  SideBottom,
  SideLeft,
  SideRight,
  VertexTL,
  VertexTR,
  VertexBR,
  VertexBL,
  InBoundary,
  OutBoundary,
};

inline constexpr std::size_t kContextCount = 11;

inline constexpr std::array<ContextKind, kContextCount> kAllContexts = {
    ContextKind::Base,       ContextKind::SideTop,    ContextKind::SideBottom, ContextKind::SideLeft,
    ContextKind::SideRight,  ContextKind::VertexTL,   ContextKind::VertexTR,   ContextKind::VertexBR,
    ContextKind::VertexBL,   ContextKind::InBoundary, ContextKind::OutBoundary,
};

// Column order of the contribution tables: Base, up, down, left, right,
// NW, SE, NE, SW, In, Out.
inline constexpr std::array<ContextKind, kContextCount> kReportOrder = {
    ContextKind::Base,     ContextKind::SideTop,  ContextKind::SideBottom, ContextKind::SideLeft,
    ContextKind::SideRight, ContextKind::VertexTL, ContextKind::VertexBR,  ContextKind::VertexTR,
    ContextKind::VertexBL, ContextKind::InBoundary, ContextKind::OutBoundary,
};

enum class ContextFamily { None, Side, Vertex, Boundary };

ContextFamily family_of(ContextKind kind);
std::string_view context_key(ContextKind kind);          // "side_top", ...
std::string_view context_report_name(ContextKind kind);  // "Up", "NW", ...
ContextKind context_from_key(std::string_view key);

Box generate_context(const Box& proposal, ContextKind kind);

double iou(const Box& a, const Box& b);

// Greedy NMS. Returns kept indices in selection order (descending score,
// equal scores resolved by lower index).
std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores, double thresh);

struct RegressionTarget {
  double tx = 0, ty = 0, tw = 0, th = 0;
  friend bool operator==(const RegressionTarget&, const RegressionTarget&) = default;
};

RegressionTarget encode_box(const Box& gt, const Box& anchor);
Box decode_box(const RegressionTarget& t, const Box& anchor);

// Clamps corners to [0,width] x [0,height]. Throws EmptyBoxError when the
// clamped box has no area.
Box clip_box(const Box& b, int width, int height);

}  // namespace ban
