#pragma once

// Toy stand-in model: conv3d(1 -> C, k^3) -> ReLU -> flatten -> dense -> scalar,
// trained with a mean-squared-error loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scalelab/conv3d.hpp"
#include "scalelab/error.hpp"
#include "scalelab/tensor.hpp"

namespace scalelab::ml {

struct ModelConfig {
  std::size_t sample_side = 5;
  std::size_t conv_channels = 4;
  std::size_t kernel = 3;

  Conv3dSpec conv_spec() const {
    Conv3dSpec s;
    s.in_channels = 1;
    s.out_channels = conv_channels;
    s.kernel = {kernel, kernel, kernel};
    return s;
  }

  std::size_t conv_side() const {
    if (sample_side < kernel) throw Error(ErrorKind::ShapeMismatch, "model: sample side smaller than the kernel");
    return sample_side - kernel + 1;
  }

  std::size_t features() const {
    const auto o = conv_side();
    return conv_channels * o * o * o;
  }
};

struct NamedTensor {
  std::string name;
  Tensor value;

  bool operator==(const NamedTensor&) const = default;
};

// Ordered: conv.weight (C,1,k,k,k), conv.bias (C), dense.weight (1,F), dense.bias (1).
struct ModelParams {
  std::vector<NamedTensor> tensors;

  const Tensor& get(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    throw Error(ErrorKind::InvalidInput, "no parameter named '" + name + "'");
  }
  Tensor& get(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ModelParams&>(*this).get(name));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.value.size();
    return n;
  }

  bool operator==(const ModelParams&) const = default;
};

inline ModelParams zero_params(const ModelConfig& cfg) {
  const auto spec = cfg.conv_spec();
  return {{{"conv.weight", Tensor(spec.weight_shape())},
           {"conv.bias", Tensor({cfg.conv_channels})},
           {"dense.weight", Tensor({1, cfg.features()})},
           {"dense.bias", Tensor({1})}}};
}

// Deterministic initialization; every replica seeded alike starts identical.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  auto p = zero_params(cfg);
  std::mt19937_64 rng(seed);
  const double fan_in = static_cast<double>(cfg.kernel * cfg.kernel * cfg.kernel);
  std::normal_distribution<double> conv_w(0.0, 1.0 / std::sqrt(fan_in));
  std::normal_distribution<double> dense_w(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.features())));
  for (auto& v : p.get("conv.weight").values()) v = conv_w(rng);
  for (auto& v : p.get("conv.bias").values()) v = 0.01;
  for (auto& v : p.get("dense.weight").values()) v = dense_w(rng);
  return p;
}

inline std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> out;
  out.reserve(p.parameter_count());
  for (const auto& t : p.tensors) out.insert(out.end(), t.value.values().begin(), t.value.values().end());
  return out;
}

// Inverse of flatten against a layout template.
inline ModelParams unflatten(const ModelParams& layout, std::span<const double> flat) {
  if (flat.size() != layout.parameter_count())
    throw Error(ErrorKind::ShapeMismatch, "flat parameter vector has " + std::to_string(flat.size()) +
                                              " values, layout needs " + std::to_string(layout.parameter_count()));
  ModelParams out = layout;
  std::size_t at = 0;
  for (auto& t : out.tensors) {
    auto dst = t.value.data();
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at), flat.begin() + static_cast<std::ptrdiff_t>(at + dst.size()),
              dst.begin());
    at += dst.size();
  }
  return out;
}

struct LossResult {
  double loss = 0;
  FlopCount flops;
};

struct LossAndGradient {
  double loss = 0;
  ModelParams gradient;
  FlopCount flops;  // forward + backward
};

namespace detail {

struct ModelShapes {
  Conv3dSpec conv;
  std::size_t batch;
  std::size_t features;
};

inline ModelShapes check_model_shapes(const ModelParams& params, const Tensor& batch, const Tensor& targets) {
  const auto& w = params.get("conv.weight");
  if (w.rank() != 5 || w.extent(1) != 1)
    throw Error(ErrorKind::ShapeMismatch, "model: conv.weight must be (C, 1, kx, ky, kz)");
  Conv3dSpec conv;
  conv.in_channels = 1;
  conv.out_channels = w.extent(0);
  conv.kernel = {w.extent(2), w.extent(3), w.extent(4)};
  if (batch.rank() != 5 || batch.extent(1) != 1)
    throw Error(ErrorKind::ShapeMismatch, "model: batch must be (B, 1, X, Y, Z), got " + shape_string(batch.shape()));
  if (targets.rank() == 0 || targets.extent(0) != batch.extent(0) || targets.size() != batch.extent(0))
    throw Error(ErrorKind::ShapeMismatch, "model: targets must hold one value per sample");
  const auto o = conv.output_extent({batch.extent(2), batch.extent(3), batch.extent(4)});
  const std::size_t features = conv.out_channels * o[0] * o[1] * o[2];
  if (params.get("conv.bias").size() != conv.out_channels)
    throw Error(ErrorKind::ShapeMismatch, "model: conv.bias length mismatch");
  if (params.get("dense.weight").size() != features)
    throw Error(ErrorKind::ShapeMismatch, "model: dense.weight has " + std::to_string(params.get("dense.weight").size()) +
                                              " inputs, conv produces " + std::to_string(features));
  if (params.get("dense.bias").size() != 1) throw Error(ErrorKind::ShapeMismatch, "model: dense.bias must be scalar");
  return {conv, batch.extent(0), features};
}

}  // namespace detail

// Per-sample scalar predictions plus the intermediate activations needed
// for backprop.
struct ModelActivations {
  Tensor pre;    // conv output, (B, C, O, O, O)
  Tensor post;   // ReLU(pre)
  std::vector<double> outputs;
  FlopCount flops;
};

inline ModelActivations model_activations(const ModelParams& params, const Tensor& batch, const Tensor& targets) {
  const auto s = detail::check_model_shapes(params, batch, targets);
  auto conv = conv3d_forward(batch, s.conv, params.get("conv.weight"), params.get("conv.bias"));
  Tensor post = conv.output;
  for (auto& v : post.values()) v = v > 0.0 ? v : 0.0;

  const auto dw = params.get("dense.weight").data();
  const double db = params.get("dense.bias")[0];
  std::vector<double> outputs(s.batch);
  for (std::size_t b = 0; b < s.batch; ++b) {
    double acc = db;
    for (std::size_t f = 0; f < s.features; ++f) acc += dw[f] * post[b * s.features + f];
    outputs[b] = acc;
  }
  FlopCount flops = conv.flops + FlopCount{s.batch * s.features};
  return {std::move(conv.output), std::move(post), std::move(outputs), flops};
}

inline std::vector<double> model_predict(const ModelParams& params, const Tensor& batch) {
  return model_activations(params, batch, Tensor({batch.extent(0)})).outputs;
}

inline LossResult model_forward_loss(const ModelParams& params, const Tensor& batch, const Tensor& targets) {
  const auto act = model_activations(params, batch, targets);
  double sum = 0;
  for (std::size_t b = 0; b < act.outputs.size(); ++b) {
    const double e = act.outputs[b] - targets[b];
    sum += e * e;
  }
  return {sum / static_cast<double>(act.outputs.size()), act.flops};
}

// Loss and its exact gradient for every parameter. ReLU'(0) is taken as 0.
inline LossAndGradient model_loss_and_gradient(const ModelParams& params, const Tensor& batch, const Tensor& targets) {
  const auto s = detail::check_model_shapes(params, batch, targets);
  const auto act = model_activations(params, batch, targets);
  const double inv_b = 1.0 / static_cast<double>(s.batch);

  LossAndGradient out{0.0, params, {}};
  for (auto& t : out.gradient.tensors) std::fill(t.value.values().begin(), t.value.values().end(), 0.0);

  const auto dw = params.get("dense.weight").data();
  auto g_dw = out.gradient.get("dense.weight").data();
  double g_db = 0;
  Tensor grad_pre(act.pre.shape());
  for (std::size_t b = 0; b < s.batch; ++b) {
    const double e = act.outputs[b] - targets[b];
    out.loss += e * e;
    const double dy = 2.0 * e * inv_b;
    g_db += dy;
    for (std::size_t f = 0; f < s.features; ++f) {
      const std::size_t idx = b * s.features + f;
      g_dw[f] += dy * act.post[idx];
      grad_pre[idx] = act.pre[idx] > 0.0 ? dy * dw[f] : 0.0;
    }
  }
  out.loss *= inv_b;
  out.gradient.get("dense.bias")[0] = g_db;

  auto conv_grads = conv3d_backward(grad_pre, batch, s.conv, params.get("conv.weight"), false);
  out.gradient.get("conv.weight") = std::move(conv_grads.grad_weights);
  out.gradient.get("conv.bias") = std::move(conv_grads.grad_bias);

  // Backward: conv grad-weight pass mirrors the forward conv; the dense
  // layer needs grad-weight and grad-activation passes.
  const FlopCount conv_fwd = conv3d_flops(s.batch, s.conv, {batch.extent(2), batch.extent(3), batch.extent(4)});
  out.flops = act.flops + conv_fwd + FlopCount{2 * s.batch * s.features};
  return out;
}

inline ModelParams model_backward(const ModelParams& params, const Tensor& batch, const Tensor& targets) {
  return model_loss_and_gradient(params, batch, targets).gradient;
}

// Rows [begin, begin + count) of the leading axis.
inline Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t count) {
  if (t.rank() == 0 || begin + count > t.extent(0) || count == 0)
    throw Error(ErrorKind::ShapeMismatch, "slice_batch out of range");
  const std::size_t row = t.size() / t.extent(0);
  Shape shape = t.shape();
  shape[0] = count;
  std::vector<double> data(t.values().begin() + static_cast<std::ptrdiff_t>(begin * row),
                           t.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * row));
  return Tensor(std::move(shape), std::move(data));
}

// Concatenates tensors along the leading axis.
inline Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error(ErrorKind::EmptyInput, "concat_batch of nothing");
  Shape shape = parts.front().shape();
  std::vector<double> data;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1))
      throw Error(ErrorKind::ShapeMismatch, "concat_batch: trailing extents differ");
    rows += p.extent(0);
    data.insert(data.end(), p.values().begin(), p.values().end());
  }
  shape[0] = rows;
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace scalelab::ml
