#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ban/rng.hpp"
#include "ban/tensor.hpp"

namespace ban::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

// Values kept away from zero so that ReLU kinks and max ties do not land
// inside the finite-difference stencil.
inline Tensor random_separated(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double mag = 0.1 + rng.uniform() + 0.01 * static_cast<double>(i % 97);
    t[i] = static_cast<Scalar>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return t;
}

// Direct-loop convolution oracle, single image.
inline Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad, int dil) {
  const long c = static_cast<long>(x.dim(1)), h = static_cast<long>(x.dim(2)), wd = static_cast<long>(x.dim(3));
  const long m = static_cast<long>(w.dim(0)), kh = static_cast<long>(w.dim(2)), kw = static_cast<long>(w.dim(3));
  const long oh = (h + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
  const long ow = (wd + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
  Tensor out({1, static_cast<std::size_t>(m), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  for (long o = 0; o < m; ++o)
    for (long y = 0; y < oh; ++y)
      for (long xx = 0; xx < ow; ++xx) {
        double acc = b[static_cast<std::size_t>(o)];
        for (long ci = 0; ci < c; ++ci)
          for (long i = 0; i < kh; ++i)
            for (long j = 0; j < kw; ++j) {
              const long iy = y * stride - pad + i * dil, ix = xx * stride - pad + j * dil;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += w[static_cast<std::size_t>(((o * c + ci) * kh + i) * kw + j)] *
                     x[static_cast<std::size_t>((ci * h + iy) * wd + ix)];
            }
        out[static_cast<std::size_t>((o * oh + y) * ow + xx)] = static_cast<Scalar>(acc);
      }
  return out;
}

}  // namespace ban::test

#include "ban/autograd.hpp"

namespace ban::test {

// sum_i r_i x_i as a tape op; turns any output into a scalar with a generic
// upstream gradient.
inline Var weighted_sum(Tape& tape, Var x, const Tensor& r) {
  const Tensor& xv = tape.value(x);
  require_same_shape(xv, r, "weighted_sum");
  double acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv[i]) * r[i];
  const Var inputs[] = {x};
  return tape.record(Tensor({1}, {static_cast<Scalar>(acc)}), inputs, [x, r](Tape& t, const Tensor& g) {
    Tensor gx = r;
    gx.scale_(g[0]);
    t.accumulate(x, gx);
  });
}

}  // namespace ban::test
