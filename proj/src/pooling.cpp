#include "ban/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "ban/error.hpp"

namespace ban {

namespace {

struct MapDims {
  std::size_t c, h, w;
};

MapDims map_dims(const Tensor& t, const char* what) {
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  if (t.rank() == 4 && t.dim(0) == 1) return {t.dim(1), t.dim(2), t.dim(3)};
  throw DimensionError(std::string(what) + ": expected [C,H,W] or [1,C,H,W], got " + shape_str(t.shape()));
}

void check_spec(const PoolSpec& spec, PoolMode mode, const char* what) {
  if (spec.k < 1 || spec.k > 7) throw ConfigError(std::string(what) + ": k must lie in [1,7]");
  if (!(spec.spatial_scale > 0)) throw ConfigError(std::string(what) + ": spatial_scale must be positive");
  if (spec.mode != mode) throw ConfigError(std::string(what) + ": pool spec has the wrong mode");
}

struct RoiBins {
  std::vector<BinRange> ys, xs;
};

RoiBins roi_bins(const Box& roi, const PoolSpec& spec, const MapDims& d) {
  if (!roi.valid()) throw GeometryError("pooling: RoI must have positive extent");
  const Corners c = roi.corners();
  return {bin_ranges(c.y1, c.y2, spec.k, spec.spatial_scale, static_cast<int>(d.h)),
          bin_ranges(c.x1, c.x2, spec.k, spec.spatial_scale, static_cast<int>(d.w))};
}

// Forward for one RoI. `argmax` (RoI mode) receives one flat cell index per
// output bin, or -1 for empty bins.
void roi_pool_one(const Scalar* fmap, const MapDims& d, const RoiBins& bins, int k, Scalar* out,
                  long* argmax) {
  for (std::size_t c = 0; c < d.c; ++c) {
    const Scalar* plane = fmap + c * d.h * d.w;
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        const std::size_t o = (c * k + i) * k + j;
        const BinRange ry = bins.ys[i], rx = bins.xs[j];
        if (ry.empty() || rx.empty()) {
          out[o] = 0;
          argmax[o] = -1;
          continue;
        }
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        long where = -1;
        for (int y = ry.start; y < ry.end; ++y)
          for (int x = rx.start; x < rx.end; ++x) {
            const long idx = static_cast<long>(y) * static_cast<long>(d.w) + x;
            if (plane[idx] > best) {
              best = plane[idx];
              where = idx;
            }
          }
        out[o] = best;
        argmax[o] = static_cast<long>(c * d.h * d.w) + where;
      }
  }
}

void psroi_pool_one(const Scalar* fmap, const MapDims& d, const RoiBins& bins, int k, std::size_t groups,
                    Scalar* out) {
  const std::size_t kk = static_cast<std::size_t>(k) * k;
  for (std::size_t g = 0; g < groups; ++g)
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        const std::size_t o = (g * k + i) * k + j;
        const BinRange ry = bins.ys[i], rx = bins.xs[j];
        if (ry.empty() || rx.empty()) {
          out[o] = 0;
          continue;
        }
        const Scalar* plane = fmap + (g * kk + i * k + j) * d.h * d.w;
        Scalar acc = 0;
        for (int y = ry.start; y < ry.end; ++y)
          for (int x = rx.start; x < rx.end; ++x) acc += plane[y * d.w + x];
        out[o] = acc / static_cast<Scalar>((ry.end - ry.start) * (rx.end - rx.start));
      }
}

std::size_t psroi_groups(const MapDims& d, int k) {
  const std::size_t kk = static_cast<std::size_t>(k) * k;
  if (d.c % kk != 0)
    throw DimensionError("psroi_pool: channel count " + std::to_string(d.c) + " not divisible by k^2 = " +
                         std::to_string(kk));
  return d.c / kk;
}

}  // namespace

std::vector<BinRange> bin_ranges(double lo, double hi, int k, double spatial_scale, int extent) {
  const double start = lo * spatial_scale;
  const double end = hi * spatial_scale;
  const double size = std::max(end - start, 0.1);
  const double bin = size / k;
  std::vector<BinRange> bins(k);
  for (int i = 0; i < k; ++i) {
    const int s = static_cast<int>(std::floor(start + i * bin));
    const int e = static_cast<int>(std::ceil(start + (i + 1) * bin));
    bins[i] = {std::clamp(s, 0, extent), std::clamp(e, 0, extent)};
  }
  return bins;
}

Tensor roi_pool(const Tensor& features, const Box& roi, const PoolSpec& spec) {
  check_spec(spec, PoolMode::RoI, "roi_pool");
  const MapDims d = map_dims(features, "roi_pool");
  const RoiBins bins = roi_bins(roi, spec, d);
  const std::size_t k = spec.k;
  Tensor out({d.c, k, k});
  std::vector<long> argmax(out.size());
  roi_pool_one(features.data(), d, bins, spec.k, out.data(), argmax.data());
  return out;
}

Tensor psroi_pool(const Tensor& score_map, const Box& roi, const PoolSpec& spec) {
  check_spec(spec, PoolMode::PSRoI, "psroi_pool");
  const MapDims d = map_dims(score_map, "psroi_pool");
  const std::size_t groups = psroi_groups(d, spec.k);
  const RoiBins bins = roi_bins(roi, spec, d);
  const std::size_t k = spec.k;
  Tensor out({groups, k, k});
  psroi_pool_one(score_map.data(), d, bins, spec.k, groups, out.data());
  return out;
}

Tensor vote(const Tensor& pooled) {
  if (pooled.rank() != 3 && pooled.rank() != 4)
    throw DimensionError("vote: expected [G,k,k] or [R,G,k,k], got " + shape_str(pooled.shape()));
  const std::size_t kk = pooled.dim(pooled.rank() - 1) * pooled.dim(pooled.rank() - 2);
  Shape shape(pooled.shape().begin(), pooled.shape().end() - 2);
  Tensor out(shape);
  for (std::size_t o = 0; o < out.size(); ++o) {
    Scalar acc = 0;
    for (std::size_t b = 0; b < kk; ++b) acc += pooled[o * kk + b];
    out[o] = acc / static_cast<Scalar>(kk);
  }
  return out;
}

namespace ops {

Var roi_pool(Tape& tape, Var features, std::span<const Box> rois, const PoolSpec& spec) {
  check_spec(spec, PoolMode::RoI, "roi_pool");
  const Tensor& fmap = tape.value(features);
  const MapDims d = map_dims(fmap, "roi_pool");
  if (rois.empty()) throw DimensionError("roi_pool: empty RoI list");
  const std::size_t k = spec.k;
  const std::size_t per = d.c * k * k;
  Tensor out({rois.size(), d.c, k, k});
  auto argmax = std::make_shared<std::vector<long>>(out.size());
  for (std::size_t r = 0; r < rois.size(); ++r)
    roi_pool_one(fmap.data(), d, roi_bins(rois[r], spec, d), spec.k, out.data() + r * per,
                 argmax->data() + r * per);
  const Var ins[] = {features};
  return tape.record(std::move(out), ins, [features, argmax](Tape& t, const Tensor& g) {
    Tensor* dx = t.grad_sink(features);
    for (std::size_t o = 0; o < g.size(); ++o)
      if ((*argmax)[o] >= 0) (*dx)[(*argmax)[o]] += g[o];
  });
}

Var psroi_pool(Tape& tape, Var score_map, std::span<const Box> rois, const PoolSpec& spec) {
  check_spec(spec, PoolMode::PSRoI, "psroi_pool");
  const Tensor& fmap = tape.value(score_map);
  const MapDims d = map_dims(fmap, "psroi_pool");
  const std::size_t groups = psroi_groups(d, spec.k);
  if (rois.empty()) throw DimensionError("psroi_pool: empty RoI list");
  const std::size_t k = spec.k;
  const std::size_t per = groups * k * k;
  Tensor out({rois.size(), groups, k, k});
  auto bins = std::make_shared<std::vector<RoiBins>>();
  bins->reserve(rois.size());
  for (std::size_t r = 0; r < rois.size(); ++r) {
    bins->push_back(roi_bins(rois[r], spec, d));
    psroi_pool_one(fmap.data(), d, bins->back(), spec.k, groups, out.data() + r * per);
  }
  const Var ins[] = {score_map};
  return tape.record(std::move(out), ins, [=](Tape& t, const Tensor& g) {
    Tensor* dx = t.grad_sink(score_map);
    const std::size_t kk = k * k;
    for (std::size_t r = 0; r < bins->size(); ++r) {
      const RoiBins& b = (*bins)[r];
      for (std::size_t grp = 0; grp < groups; ++grp)
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const BinRange ry = b.ys[i], rx = b.xs[j];
            if (ry.empty() || rx.empty()) continue;
            const Scalar share = g[r * per + (grp * k + i) * k + j] /
                                 static_cast<Scalar>((ry.end - ry.start) * (rx.end - rx.start));
            Scalar* plane = dx->data() + (grp * kk + i * k + j) * d.h * d.w;
            for (int y = ry.start; y < ry.end; ++y)
              for (int x = rx.start; x < rx.end; ++x) plane[y * d.w + x] += share;
          }
    }
  });
}

Var vote(Tape& tape, Var pooled) {
  const Tensor& p = tape.value(pooled);
  Tensor out = ban::vote(p);
  const std::size_t kk = p.size() / out.size();
  const Var ins[] = {pooled};
  return tape.record(std::move(out), ins, [pooled, kk](Tape& t, const Tensor& g) {
    Tensor* dx = t.grad_sink(pooled);
    const Scalar inv = Scalar(1) / static_cast<Scalar>(kk);
    for (std::size_t o = 0; o < g.size(); ++o)
      for (std::size_t b = 0; b < kk; ++b) (*dx)[o * kk + b] += g[o] * inv;
  });
}

}  // namespace ops

}  // namespace ban
