#pragma once

// Direct (loop-nest) 3D convolution over (batch, channel, x, y, z) tensors.
// No FFT, Winograd or im2col: the multiply-add count must stay auditable.

#include <array>
#include <cstdint>
#include <string>

#include "scalelab/error.hpp"
#include "scalelab/tensor.hpp"

namespace scalelab::ml {

using Extent3 = std::array<std::size_t, 3>;

struct FlopCount {
  std::uint64_t multiply_adds = 0;

  std::uint64_t total_flops() const { return 2 * multiply_adds; }

  FlopCount& operator+=(const FlopCount& o) {
    multiply_adds += o.multiply_adds;
    return *this;
  }
  friend FlopCount operator+(FlopCount a, const FlopCount& b) { return a += b; }
  friend FlopCount operator*(FlopCount a, std::uint64_t k) { return {a.multiply_adds * k}; }
  bool operator==(const FlopCount&) const = default;
};

struct Conv3dSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Extent3 kernel{1, 1, 1};
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};

  void validate() const {
    if (in_channels == 0 || out_channels == 0) throw Error(ErrorKind::InvalidInput, "conv3d: channel counts must be >= 1");
    for (int a = 0; a < 3; ++a) {
      if (kernel[a] == 0 || stride[a] == 0) throw Error(ErrorKind::InvalidInput, "conv3d: kernel and stride must be >= 1");
    }
  }

  // floor((i + 2p - k) / s) + 1; throws when the kernel does not fit.
  Extent3 output_extent(const Extent3& input) const {
    Extent3 out{};
    for (int a = 0; a < 3; ++a) {
      const std::size_t padded = input[a] + 2 * padding[a];
      if (padded < kernel[a])
        throw Error(ErrorKind::ShapeMismatch, "conv3d: kernel larger than padded input on axis " + std::to_string(a));
      out[a] = (padded - kernel[a]) / stride[a] + 1;
    }
    return out;
  }

  Shape weight_shape() const { return {out_channels, in_channels, kernel[0], kernel[1], kernel[2]}; }
};

// batch x out_ch x Ox x Oy x Oz x in_ch x kx x ky x kz, counting every
// kernel tap including those landing on zero padding.
inline FlopCount conv3d_flops(std::size_t batch, const Conv3dSpec& spec, const Extent3& input) {
  const auto o = spec.output_extent(input);
  return {static_cast<std::uint64_t>(batch) * spec.out_channels * o[0] * o[1] * o[2] * spec.in_channels *
          spec.kernel[0] * spec.kernel[1] * spec.kernel[2]};
}

struct ConvForward {
  Tensor output;
  FlopCount flops;
};

struct ConvGradients {
  Tensor grad_input;
  Tensor grad_weights;
  Tensor grad_bias;
};

namespace detail {

struct ConvGeometry {
  std::size_t batch, in_ch, out_ch;
  Extent3 in, out;
};

inline ConvGeometry check_conv_shapes(const Tensor& input, const Conv3dSpec& spec, const Tensor& weights) {
  spec.validate();
  if (input.rank() != 5)
    throw Error(ErrorKind::ShapeMismatch, "conv3d: input must be (batch, channels, x, y, z), got " + shape_string(input.shape()));
  if (input.extent(1) != spec.in_channels)
    throw Error(ErrorKind::ShapeMismatch, "conv3d: input has " + std::to_string(input.extent(1)) +
                                              " channels, spec expects " + std::to_string(spec.in_channels));
  if (weights.shape() != spec.weight_shape())
    throw Error(ErrorKind::ShapeMismatch, "conv3d: weight shape " + shape_string(weights.shape()) + " expected " +
                                              shape_string(spec.weight_shape()));
  Extent3 in{input.extent(2), input.extent(3), input.extent(4)};
  return {input.extent(0), spec.in_channels, spec.out_channels, in, spec.output_extent(in)};
}

}  // namespace detail

inline ConvForward conv3d_forward(const Tensor& input, const Conv3dSpec& spec, const Tensor& weights, const Tensor& bias) {
  const auto g = detail::check_conv_shapes(input, spec, weights);
  if (bias.size() != spec.out_channels)
    throw Error(ErrorKind::ShapeMismatch, "conv3d: bias length must equal out_channels");

  const auto [X, Y, Z] = g.in;
  const auto [OX, OY, OZ] = g.out;
  const auto [KX, KY, KZ] = spec.kernel;
  Tensor out({g.batch, g.out_ch, OX, OY, OZ});
  const auto in = input.data();
  const auto w = weights.data();
  auto o = out.data();

  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oc = 0; oc < g.out_ch; ++oc)
      for (std::size_t ox = 0; ox < OX; ++ox)
        for (std::size_t oy = 0; oy < OY; ++oy)
          for (std::size_t oz = 0; oz < OZ; ++oz) {
            double acc = bias[oc];
            for (std::size_t ic = 0; ic < g.in_ch; ++ic)
              for (std::size_t i = 0; i < KX; ++i) {
                // Padded coordinates; taps outside the input contribute 0.
                const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * spec.stride[0] + i) -
                                         static_cast<std::ptrdiff_t>(spec.padding[0]);
                if (x < 0 || x >= static_cast<std::ptrdiff_t>(X)) continue;
                for (std::size_t j = 0; j < KY; ++j) {
                  const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * spec.stride[1] + j) -
                                           static_cast<std::ptrdiff_t>(spec.padding[1]);
                  if (y < 0 || y >= static_cast<std::ptrdiff_t>(Y)) continue;
                  for (std::size_t k = 0; k < KZ; ++k) {
                    const std::ptrdiff_t z = static_cast<std::ptrdiff_t>(oz * spec.stride[2] + k) -
                                             static_cast<std::ptrdiff_t>(spec.padding[2]);
                    if (z < 0 || z >= static_cast<std::ptrdiff_t>(Z)) continue;
                    const std::size_t in_idx = (((b * g.in_ch + ic) * X + x) * Y + y) * Z + z;
                    const std::size_t w_idx = (((oc * g.in_ch + ic) * KX + i) * KY + j) * KZ + k;
                    acc += in[in_idx] * w[w_idx];
                  }
                }
              }
            o[(((b * g.out_ch + oc) * OX + ox) * OY + oy) * OZ + oz] = acc;
          }
  return {std::move(out), conv3d_flops(g.batch, spec, g.in)};
}

// Gradients of the forward map with respect to input, weights and bias.
// With compute_grad_input = false the grad_input tensor is left zero.
inline ConvGradients conv3d_backward(const Tensor& grad_out, const Tensor& input, const Conv3dSpec& spec,
                                     const Tensor& weights, bool compute_grad_input = true) {
  const auto g = detail::check_conv_shapes(input, spec, weights);
  const Shape expected{g.batch, g.out_ch, g.out[0], g.out[1], g.out[2]};
  if (grad_out.shape() != expected)
    throw Error(ErrorKind::ShapeMismatch, "conv3d backward: grad_out shape " + shape_string(grad_out.shape()) +
                                              " expected " + shape_string(expected));

  const auto [X, Y, Z] = g.in;
  const auto [OX, OY, OZ] = g.out;
  const auto [KX, KY, KZ] = spec.kernel;
  ConvGradients grads{Tensor(input.shape()), Tensor(weights.shape()), Tensor({g.out_ch})};
  const auto in = input.data();
  const auto w = weights.data();
  const auto go = grad_out.data();
  auto gi = grads.grad_input.data();
  auto gw = grads.grad_weights.data();
  auto gb = grads.grad_bias.data();

  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oc = 0; oc < g.out_ch; ++oc)
      for (std::size_t ox = 0; ox < OX; ++ox)
        for (std::size_t oy = 0; oy < OY; ++oy)
          for (std::size_t oz = 0; oz < OZ; ++oz) {
            const double gval = go[(((b * g.out_ch + oc) * OX + ox) * OY + oy) * OZ + oz];
            gb[oc] += gval;
            if (gval == 0.0) continue;
            for (std::size_t ic = 0; ic < g.in_ch; ++ic)
              for (std::size_t i = 0; i < KX; ++i) {
                const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * spec.stride[0] + i) -
                                         static_cast<std::ptrdiff_t>(spec.padding[0]);
                if (x < 0 || x >= static_cast<std::ptrdiff_t>(X)) continue;
                for (std::size_t j = 0; j < KY; ++j) {
                  const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * spec.stride[1] + j) -
                                           static_cast<std::ptrdiff_t>(spec.padding[1]);
                  if (y < 0 || y >= static_cast<std::ptrdiff_t>(Y)) continue;
                  for (std::size_t k = 0; k < KZ; ++k) {
                    const std::ptrdiff_t z = static_cast<std::ptrdiff_t>(oz * spec.stride[2] + k) -
                                             static_cast<std::ptrdiff_t>(spec.padding[2]);
                    if (z < 0 || z >= static_cast<std::ptrdiff_t>(Z)) continue;
                    const std::size_t in_idx = (((b * g.in_ch + ic) * X + x) * Y + y) * Z + z;
                    const std::size_t w_idx = (((oc * g.in_ch + ic) * KX + i) * KY + j) * KZ + k;
                    gw[w_idx] += gval * in[in_idx];
                    if (compute_grad_input) gi[in_idx] += gval * w[w_idx];
                  }
                }
              }
          }
  return grads;
}

}  // namespace scalelab::ml
