#pragma once

#include <span>

#include "ban/autograd.hpp"
#include "ban/tensor.hpp"

namespace ban {

struct Conv2dOptions {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

// Output extent of a convolution along one axis; throws GeometryError when
// the result is not a positive integer.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const Conv2dOptions& opt);

namespace ops {

// Cross-correlation. input [N,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout].
Var conv2d(Tape& tape, Var input, Var weight, Var bias, const Conv2dOptions& opt = {});
// max(0, x); gradient passes only where x > 0.
Var relu(Tape& tape, Var x);
// input [N,D] x weight [D,M] + bias [M] -> [N,M].
Var fully_connected(Tape& tape, Var input, Var weight, Var bias);
// Stacks along axis 1; all other extents must agree.
Var concat_channels(Tape& tape, std::span<const Var> inputs);
// Elementwise sum of same-shape operands, accumulated left to right.
Var add(Tape& tape, std::span<const Var> inputs);
Var reshape(Tape& tape, Var x, Shape shape);
// Scalar [1] holding the sum of all elements.
Var sum(Tape& tape, Var x);
Var scale(Tape& tape, Var x, Scalar factor);

}  // namespace ops

// Tape-free forward evaluation of the same operations.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& opt = {});
Tensor relu(const Tensor& x);
Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor concat_channels(std::span<const Tensor> inputs);

}  // namespace ban
