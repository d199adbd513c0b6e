#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "scalelab/model.hpp"
#include "scalelab/synthetic.hpp"

using namespace scalelab;
using namespace scalelab::ml;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Oracle: copy into an explicitly zero-padded buffer, then run a valid
// convolution with direct index arithmetic. Counts every multiply-add.
struct OracleConv {
  Tensor output;
  std::uint64_t multiply_adds = 0;
};

OracleConv oracle_conv(const Tensor& in, const Conv3dSpec& s, const Tensor& w, const Tensor& b) {
  const std::size_t B = in.extent(0), C = in.extent(1);
  const std::size_t X = in.extent(2), Y = in.extent(3), Z = in.extent(4);
  const std::size_t PX = X + 2 * s.padding[0], PY = Y + 2 * s.padding[1], PZ = Z + 2 * s.padding[2];
  std::vector<double> padded(B * C * PX * PY * PZ, 0.0);
  auto pidx = [&](std::size_t n, std::size_t c, std::size_t x, std::size_t y, std::size_t z) {
    return (((n * C + c) * PX + x) * PY + y) * PZ + z;
  };
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t x = 0; x < X; ++x)
        for (std::size_t y = 0; y < Y; ++y)
          for (std::size_t z = 0; z < Z; ++z)
            padded[pidx(n, c, x + s.padding[0], y + s.padding[1], z + s.padding[2])] =
                in[(((n * C + c) * X + x) * Y + y) * Z + z];

  const std::size_t K = s.out_channels;
  const std::size_t OX = (PX - s.kernel[0]) / s.stride[0] + 1;
  const std::size_t OY = (PY - s.kernel[1]) / s.stride[1] + 1;
  const std::size_t OZ = (PZ - s.kernel[2]) / s.stride[2] + 1;
  OracleConv r{Tensor({B, K, OX, OY, OZ}), 0};
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t ox = 0; ox < OX; ++ox)
        for (std::size_t oy = 0; oy < OY; ++oy)
          for (std::size_t oz = 0; oz < OZ; ++oz) {
            double acc = b[k];
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t i = 0; i < s.kernel[0]; ++i)
                for (std::size_t j = 0; j < s.kernel[1]; ++j)
                  for (std::size_t l = 0; l < s.kernel[2]; ++l) {
                    const double wv = w[(((k * C + c) * s.kernel[0] + i) * s.kernel[1] + j) * s.kernel[2] + l];
                    acc += wv * padded[pidx(n, c, ox * s.stride[0] + i, oy * s.stride[1] + j, oz * s.stride[2] + l)];
                    ++r.multiply_adds;
                  }
            r.output[(((n * K + k) * OX + ox) * OY + oy) * OZ + oz] = acc;
          }
  return r;
}

Conv3dSpec random_spec(std::mt19937_64& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  Conv3dSpec s;
  s.in_channels = pick(1, 3);
  s.out_channels = pick(1, 4);
  for (int a = 0; a < 3; ++a) {
    s.kernel[a] = pick(1, 3);
    s.stride[a] = pick(1, 2);
    s.padding[a] = pick(0, 1);
  }
  return s;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// FLOP accounting

TEST(ConvFlops, KnownValue) {
  Conv3dSpec s;
  s.out_channels = 4;
  s.kernel = {3, 3, 3};
  EXPECT_EQ(conv3d_flops(1, s, {9, 9, 9}).multiply_adds, 37044u);
  EXPECT_EQ(conv3d_flops(1, s, {9, 9, 9}).total_flops(), 74088u);
}

TEST(ConvFlops, InstrumentedCounterMatchesFormula) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 25; ++trial) {
    const auto s = random_spec(rng);
    const std::size_t batch = 1 + trial % 3;
    Extent3 ext{4 + rng() % 4, 4 + rng() % 4, 4 + rng() % 4};
    const auto in = random_tensor({batch, s.in_channels, ext[0], ext[1], ext[2]}, rng);
    const auto w = random_tensor(s.weight_shape(), rng);
    const auto b = random_tensor({s.out_channels}, rng);
    const auto oracle = oracle_conv(in, s, w, b);
    const auto fwd = conv3d_forward(in, s, w, b);
    EXPECT_EQ(oracle.multiply_adds, conv3d_flops(batch, s, ext).multiply_adds) << "trial " << trial;
    EXPECT_EQ(fwd.flops.multiply_adds, oracle.multiply_adds);
    ASSERT_EQ(fwd.output.shape(), oracle.output.shape());
    EXPECT_LE(max_abs_diff(fwd.output.data(), oracle.output.data()), 1e-12);
  }
}

TEST(ConvFlops, FlopCountArithmetic) {
  FlopCount a{3};
  a += FlopCount{4};
  EXPECT_EQ(a.multiply_adds, 7u);
  EXPECT_EQ((a * 3).multiply_adds, 21u);
  EXPECT_EQ((a + FlopCount{1}).total_flops(), 16u);
}

TEST(Conv, KernelLargerThanInputRejected) {
  Conv3dSpec s;
  s.kernel = {5, 5, 5};
  EXPECT_THROW(s.output_extent({3, 3, 3}), Error);
  Tensor in({1, 2, 5, 5, 5});
  EXPECT_THROW(conv3d_forward(in, s, Tensor(s.weight_shape()), Tensor({1})), Error);
}

// ---------------------------------------------------------------------------
// Gradients

// The backward pass of L = sum(out * R) against central differences.
TEST(ConvBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const auto s = random_spec(rng);
    const auto in = random_tensor({2, s.in_channels, 5, 4, 5}, rng);
    auto w = random_tensor(s.weight_shape(), rng);
    auto b = random_tensor({s.out_channels}, rng);
    const auto out_shape = conv3d_forward(in, s, w, b).output.shape();
    const auto R = random_tensor(out_shape, rng);
    auto objective = [&](const Tensor& x, const Tensor& wt, const Tensor& bt) {
      const auto o = conv3d_forward(x, s, wt, bt).output;
      double acc = 0;
      for (std::size_t i = 0; i < o.size(); ++i) acc += o[i] * R[i];
      return acc;
    };
    const auto g = conv3d_backward(R, in, s, w);
    const double h = 1e-5;

    Tensor x = in;
    for (std::size_t i = 0; i < x.size(); i += 3) {
      const double keep = x[i];
      x[i] = keep + h;
      const double up = objective(x, w, b);
      x[i] = keep - h;
      const double dn = objective(x, w, b);
      x[i] = keep;
      EXPECT_NEAR(g.grad_input[i], (up - dn) / (2 * h), 1e-7);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + h;
      const double up = objective(in, w, b);
      w[i] = keep - h;
      const double dn = objective(in, w, b);
      w[i] = keep;
      EXPECT_NEAR(g.grad_weights[i], (up - dn) / (2 * h), 1e-7);
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double keep = b[i];
      b[i] = keep + h;
      const double up = objective(in, w, b);
      b[i] = keep - h;
      const double dn = objective(in, w, b);
      b[i] = keep;
      EXPECT_NEAR(g.grad_bias[i], (up - dn) / (2 * h), 1e-7);
    }
  }
}

TEST(ModelGradient, MatchesFiniteDifferences) {
  const ModelConfig cfg{5, 4, 3};
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u, 6u}) {
    const auto params = init_params(cfg, seed);
    const auto data = synthetic_shower(seed * 31, 3, cfg.sample_side);
    const auto lg = model_loss_and_gradient(params, data.inputs, data.targets);
    const auto analytic = flatten(lg.gradient);
    auto flat = flatten(params);
    const double h = 1e-5;
    double num = 0, den = 0;
    for (std::size_t i = 0; i < flat.size(); ++i) {
      const double keep = flat[i];
      flat[i] = keep + h;
      const double up = model_forward_loss(unflatten(params, flat), data.inputs, data.targets).loss;
      flat[i] = keep - h;
      const double dn = model_forward_loss(unflatten(params, flat), data.inputs, data.targets).loss;
      flat[i] = keep;
      const double fd = (up - dn) / (2 * h);
      num += (analytic[i] - fd) * (analytic[i] - fd);
      den += analytic[i] * analytic[i];
      EXPECT_LE(std::abs(analytic[i] - fd), 1e-5 * std::max(1.0, std::abs(fd))) << "seed " << seed << " i " << i;
    }
    EXPECT_LT(std::sqrt(num / den), 1e-5) << "seed " << seed;
  }
}

TEST(ModelGradient, ReluDerivativeAtZeroIsZero) {
  // All-zero conv weights and bias put every pre-activation exactly at 0.
  const ModelConfig cfg{4, 2, 3};
  auto params = zero_params(cfg);
  for (auto& v : params.get("dense.weight").values()) v = 1.0;
  const auto data = synthetic_shower(9, 2, cfg.sample_side);
  const auto g = model_backward(params, data.inputs, data.targets);
  for (double v : g.get("conv.weight").values()) EXPECT_EQ(v, 0.0);
  for (double v : g.get("conv.bias").values()) EXPECT_EQ(v, 0.0);
}

TEST(ModelGradient, FlopsCoverForwardAndBackward) {
  const ModelConfig cfg{5, 4, 3};
  const auto params = init_params(cfg, 1);
  const auto data = synthetic_shower(1, 2, 5);
  const auto conv = conv3d_flops(2, cfg.conv_spec(), {5, 5, 5});
  const auto fwd = model_forward_loss(params, data.inputs, data.targets);
  EXPECT_EQ(fwd.flops.multiply_adds, conv.multiply_adds + 2 * cfg.features());
  const auto lg = model_loss_and_gradient(params, data.inputs, data.targets);
  // Backward: the weight gradient costs one more convolution, the dense layer
  // two more passes. The input gradient is not needed.
  EXPECT_EQ(lg.flops.multiply_adds, 2 * conv.multiply_adds + 3 * 2 * cfg.features());
}

// ---------------------------------------------------------------------------
// Model plumbing

TEST(Model, ParameterLayout) {
  const ModelConfig cfg{5, 4, 3};
  const auto p = init_params(cfg, 3);
  ASSERT_EQ(p.tensors.size(), 4u);
  EXPECT_EQ(p.tensors[0].name, "conv.weight");
  EXPECT_EQ(p.get("conv.weight").shape(), (Shape{4, 1, 3, 3, 3}));
  EXPECT_EQ(p.get("dense.weight").shape(), (Shape{1, 4 * 27}));
  EXPECT_EQ(p.parameter_count(), 4u * 27 + 4 + 108 + 1);
  EXPECT_EQ(init_params(cfg, 3), p);
  EXPECT_NE(init_params(cfg, 4), p);
}

TEST(Model, FlattenRoundTrip) {
  const auto p = init_params({6, 3, 3}, 11);
  const auto flat = flatten(p);
  EXPECT_EQ(flat.size(), p.parameter_count());
  EXPECT_EQ(unflatten(p, flat), p);
  std::vector<double> short_flat(flat.begin(), flat.end() - 1);
  EXPECT_THROW(unflatten(p, short_flat), Error);
}

TEST(Model, SliceConcatRoundTrip) {
  const auto data = synthetic_shower(2, 6, 4);
  std::vector<Tensor> parts{slice_batch(data.inputs, 0, 2), slice_batch(data.inputs, 2, 3),
                            slice_batch(data.inputs, 5, 1)};
  EXPECT_EQ(concat_batch(parts), data.inputs);
  EXPECT_THROW(slice_batch(data.inputs, 5, 2), Error);
}

TEST(Model, WrongTargetCountIsShapeMismatch) {
  const ModelConfig cfg{5, 4, 3};
  const auto data = synthetic_shower(2, 3, 5);
  try {
    model_forward_loss(init_params(cfg, 1), data.inputs, Tensor({2}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(Synthetic, DeterministicAndTargetIsEnergySum) {
  const auto a = synthetic_shower(5, 4, 6);
  const auto b = synthetic_shower(5, 4, 6);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.inputs.shape(), (Shape{4, 1, 6, 6, 6}));
  EXPECT_NE(synthetic_shower(6, 4, 6).inputs, a.inputs);
  for (std::size_t n = 0; n < 4; ++n) {
    double sum = 0;
    for (std::size_t i = 0; i < 216; ++i) {
      EXPECT_GE(a.inputs[n * 216 + i], 0.0);
      sum += a.inputs[n * 216 + i];
    }
    EXPECT_NEAR(a.targets[n], sum, 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Tensor

TEST(Tensor, SerializeRoundTrip) {
  std::mt19937_64 rng(4);
  const auto t = random_tensor({2, 3, 4}, rng);
  const auto bytes = serialize(t);
  EXPECT_EQ(bytes.size(), 4u + 3 * 4 + 24 * 8);
  EXPECT_EQ(bytes[3], 3u);  // big-endian rank
  EXPECT_EQ(deserialize(bytes), t);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(deserialize(truncated), Error);
}

TEST(Tensor, ShapeChecks) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), Error);
  EXPECT_THROW(Tensor({2, 0}), Error);
  EXPECT_EQ(Tensor::scalar(2.5).size(), 1u);
  EXPECT_EQ(Tensor::vector({1, 2, 3}).shape(), (Shape{3}));
}
