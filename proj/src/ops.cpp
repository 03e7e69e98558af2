#include "ban/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <memory>
#include <string>

#include "ban/error.hpp"

namespace ban {

namespace {

using MatR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct ConvGeom {
  std::size_t n, cin, h, w, cout, kh, kw, ho, wo;
  Conv2dOptions opt;
  std::size_t k() const { return cin * kh * kw; }
  std::size_t p() const { return ho * wo; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && opt.stride == 1 && opt.pad == 0;
  }
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dOptions& opt) {
  if (opt.stride < 1 || opt.dilation < 1 || opt.pad < 0)
    throw GeometryError("conv2d: stride and dilation must be >= 1, pad >= 0");
  if (x.rank() != 4) throw DimensionError("conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  if (w.rank() != 4) throw DimensionError("conv2d: weight must be [Cout,Cin,kh,kw], got " + shape_str(w.shape()));
  if (w.dim(1) != x.dim(1))
    throw DimensionError("conv2d: input channels " + std::to_string(x.dim(1)) + " vs weight " +
                         std::to_string(w.dim(1)));
  if (b.rank() != 1 || b.dim(0) != w.dim(0))
    throw DimensionError("conv2d: bias must be [" + std::to_string(w.dim(0)) + "], got " +
                         shape_str(b.shape()));
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0, opt};
  g.ho = conv_output_extent(g.h, g.kh, opt);
  g.wo = conv_output_extent(g.w, g.kw, opt);
  return g;
}

void im2col(const ConvGeom& g, const Scalar* img, Scalar* cols) {
  const long stride = g.opt.stride, pad = g.opt.pad, dil = g.opt.dilation;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * g.p();
        const Scalar* plane = img + c * g.h * g.w;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(i) * dil;
          Scalar* out = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(out, out + g.wo, Scalar(0));
            continue;
          }
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(j) * dil;
            out[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? Scalar(0) : plane[iy * g.w + ix];
          }
        }
      }
}

void col2im_add(const ConvGeom& g, const Scalar* cols, Scalar* img) {
  const long stride = g.opt.stride, pad = g.opt.pad, dil = g.opt.dilation;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * g.p();
        Scalar* plane = img + c * g.h * g.w;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(i) * dil;
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(j) * dil;
            if (ix >= 0 && ix < static_cast<long>(g.w)) plane[iy * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
}

// Forward; fills `saved_cols` (one K x P block per image) unless pointwise.
Tensor conv_forward(const ConvGeom& g, const Tensor& x, const Tensor& w, const Tensor& b,
                    std::vector<Scalar>* saved_cols) {
  Tensor out({g.n, g.cout, g.ho, g.wo});
  CMapR wmat(w.data(), g.cout, g.k());
  std::vector<Scalar> scratch;
  if (!g.pointwise()) {
    scratch.resize(g.n * g.k() * g.p());
  }
  for (std::size_t n = 0; n < g.n; ++n) {
    const Scalar* img = x.data() + n * g.cin * g.h * g.w;
    const Scalar* cols = img;
    if (!g.pointwise()) {
      Scalar* dst = scratch.data() + n * g.k() * g.p();
      im2col(g, img, dst);
      cols = dst;
    }
    MapR o(out.data() + n * g.cout * g.p(), g.cout, g.p());
    o.noalias() = wmat * CMapR(cols, g.k(), g.p());
    for (std::size_t co = 0; co < g.cout; ++co) o.row(co).array() += b[co];
  }
  if (saved_cols) *saved_cols = std::move(scratch);
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

void check_fc(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "fully_connected input");
  require_rank(w, 2, "fully_connected weight");
  require_rank(b, 1, "fully_connected bias");
  if (x.dim(1) != w.dim(0) || w.dim(1) != b.dim(0))
    throw DimensionError("fully_connected: " + shape_str(x.shape()) + " x " + shape_str(w.shape()) +
                         " + " + shape_str(b.shape()));
}

Tensor fc_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_fc(x, w, b);
  const std::size_t n = x.dim(0), d = x.dim(1), m = w.dim(1);
  Tensor out({n, m});
  MapR o(out.data(), n, m);
  o.noalias() = CMapR(x.data(), n, d) * CMapR(w.data(), d, m);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) o(r, c) += b[c];
  return out;
}

Shape concat_shape(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  Shape shape = parts[0]->shape();
  if (shape.size() < 2) throw DimensionError("concat_channels: inputs need rank >= 2");
  std::size_t channels = 0;
  for (const Tensor* t : parts) {
    const Shape& s = t->shape();
    bool ok = s.size() == shape.size();
    for (std::size_t a = 0; ok && a < s.size(); ++a)
      if (a != 1 && s[a] != shape[a]) ok = false;
    if (!ok)
      throw DimensionError("concat_channels: " + shape_str(s) + " incompatible with " + shape_str(shape));
    channels += s[1];
  }
  shape[1] = channels;
  return shape;
}

Tensor concat_forward(std::span<const Tensor* const> parts) {
  Shape shape = concat_shape(parts);
  Tensor out(shape);
  const std::size_t outer = shape[0];
  const std::size_t row = shape_numel(shape) / outer;
  std::size_t offset = 0;
  for (const Tensor* t : parts) {
    const std::size_t chunk = t->size() / outer;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(t->data() + o * chunk, chunk, out.data() + o * row + offset);
    offset += chunk;
  }
  return out;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const Conv2dOptions& opt) {
  const long span = static_cast<long>(opt.dilation) * (static_cast<long>(kernel) - 1) + 1;
  const long numer = static_cast<long>(in) + 2L * opt.pad - span;
  if (numer < 0)
    throw GeometryError("conv2d: kernel extent " + std::to_string(span) + " exceeds padded input " +
                        std::to_string(in + 2 * opt.pad));
  return static_cast<std::size_t>(numer / opt.stride + 1);
}

namespace ops {

Var conv2d(Tape& tape, Var input, Var weight, Var bias, const Conv2dOptions& opt) {
  const Tensor& x = tape.value(input);
  const Tensor& w = tape.value(weight);
  const Tensor& b = tape.value(bias);
  const ConvGeom g = conv_geometry(x, w, b, opt);
  auto cols = std::make_shared<std::vector<Scalar>>();
  Tensor out = conv_forward(g, x, w, b, cols.get());
  const Var ins[] = {input, weight, bias};
  return tape.record(std::move(out), ins, [=](Tape& t, const Tensor& gout) {
    Tensor* dx = t.grad_sink(input);
    Tensor* dw = t.grad_sink(weight);
    Tensor* db = t.grad_sink(bias);
    const Tensor& xv = t.value(input);
    CMapR wmat(t.value(weight).data(), g.cout, g.k());
    std::vector<Scalar> dcols(dx && !g.pointwise() ? g.k() * g.p() : 0);
    for (std::size_t n = 0; n < g.n; ++n) {
      CMapR go(gout.data() + n * g.cout * g.p(), g.cout, g.p());
      const Scalar* colsn =
          g.pointwise() ? xv.data() + n * g.cin * g.h * g.w : cols->data() + n * g.k() * g.p();
      if (dw) MapR(dw->data(), g.cout, g.k()).noalias() += go * CMapR(colsn, g.k(), g.p()).transpose();
      // Plain loop: Eigen's vectorised sum splits by pointer alignment, which
      // would make the result depend on where the buffer was allocated.
      if (db)
        for (std::size_t co = 0; co < g.cout; ++co) {
          const Scalar* row = gout.data() + (n * g.cout + co) * g.p();
          Scalar acc = 0;
          for (std::size_t i = 0; i < g.p(); ++i) acc += row[i];
          (*db)[co] += acc;
        }
      if (dx) {
        Scalar* dimg = dx->data() + n * g.cin * g.h * g.w;
        if (g.pointwise()) {
          MapR(dimg, g.k(), g.p()).noalias() += wmat.transpose() * go;
        } else {
          MapR(dcols.data(), g.k(), g.p()).noalias() = wmat.transpose() * go;
          col2im_add(g, dcols.data(), dimg);
        }
      }
    }
  });
}

Var relu(Tape& tape, Var x) {
  Tensor out = ban::relu(tape.value(x));
  const Var ins[] = {x};
  return tape.record(std::move(out), ins, [x](Tape& t, const Tensor& g) {
    Tensor* dx = t.grad_sink(x);
    const Tensor& xv = t.value(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0) (*dx)[i] += g[i];
  });
}

Var fully_connected(Tape& tape, Var input, Var weight, Var bias) {
  Tensor out = fc_forward(tape.value(input), tape.value(weight), tape.value(bias));
  const Var ins[] = {input, weight, bias};
  return tape.record(std::move(out), ins, [=](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(input);
    const Tensor& wv = t.value(weight);
    const std::size_t n = xv.dim(0), d = xv.dim(1), m = wv.dim(1);
    CMapR go(g.data(), n, m);
    if (Tensor* dx = t.grad_sink(input))
      MapR(dx->data(), n, d).noalias() += go * CMapR(wv.data(), d, m).transpose();
    if (Tensor* dw = t.grad_sink(weight))
      MapR(dw->data(), d, m).noalias() += CMapR(xv.data(), n, d).transpose() * go;
    if (Tensor* db = t.grad_sink(bias))
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) (*db)[c] += go(r, c);
  });
}

Var concat_channels(Tape& tape, std::span<const Var> inputs) {
  std::vector<const Tensor*> parts;
  for (auto v : inputs) parts.push_back(&tape.value(v));
  Tensor out = concat_forward(parts);
  std::vector<Var> ins(inputs.begin(), inputs.end());
  return tape.record(std::move(out), inputs, [ins](Tape& t, const Tensor& g) {
    const std::size_t outer = g.dim(0);
    const std::size_t row = g.size() / outer;
    std::size_t offset = 0;
    for (auto v : ins) {
      const std::size_t chunk = t.value(v).size() / outer;
      if (Tensor* d = t.grad_sink(v))
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < chunk; ++i) (*d)[o * chunk + i] += g[o * row + offset + i];
      offset += chunk;
    }
  });
}

Var add(Tape& tape, std::span<const Var> inputs) {
  if (inputs.empty()) throw DimensionError("add: no operands");
  Tensor out = tape.value(inputs[0]);
  for (std::size_t i = 1; i < inputs.size(); ++i) out.add_(tape.value(inputs[i]));
  std::vector<Var> ins(inputs.begin(), inputs.end());
  return tape.record(std::move(out), inputs, [ins](Tape& t, const Tensor& g) {
    for (auto v : ins) t.accumulate(v, g);
  });
}

Var reshape(Tape& tape, Var x, Shape shape) {
  Tensor out = tape.value(x).reshaped(std::move(shape));
  const Var ins[] = {x};
  return tape.record(std::move(out), ins, [x](Tape& t, const Tensor& g) {
    if (Tensor* d = t.grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
  });
}

Var sum(Tape& tape, Var x) {
  Tensor out({1}, tape.value(x).sum());
  const Var ins[] = {x};
  return tape.record(std::move(out), ins, [x](Tape& t, const Tensor& g) {
    if (Tensor* d = t.grad_sink(x))
      for (auto& v : d->values()) v += g[0];
  });
}

Var scale(Tape& tape, Var x, Scalar factor) {
  Tensor out = tape.value(x);
  out.scale_(factor);
  const Var ins[] = {x};
  return tape.record(std::move(out), ins, [x, factor](Tape& t, const Tensor& g) {
    if (Tensor* d = t.grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += factor * g[i];
  });
}

}  // namespace ops

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opt) {
  return conv_forward(conv_geometry(input, weight, bias, opt), input, weight, bias, nullptr);
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.values()) v = v > 0 ? v : Scalar(0);
  return out;
}

Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  return fc_forward(input, weight, bias);
}

Tensor concat_channels(std::span<const Tensor> inputs) {
  std::vector<const Tensor*> parts;
  for (const auto& t : inputs) parts.push_back(&t);
  return concat_forward(parts);
}

}  // namespace ban
