#pragma once

// Deterministic calorimeter-like voxel volumes: a Gaussian energy blob plus
// noise, clamped at zero. The target of each sample is its total deposited
// energy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>

#include "scalelab/error.hpp"
#include "scalelab/tensor.hpp"

namespace scalelab::ml {

struct ShowerBatch {
  Tensor inputs;   // (count, 1, side, side, side)
  Tensor targets;  // (count)
};

inline ShowerBatch synthetic_shower(std::uint64_t seed, std::size_t count, std::size_t side) {
  if (side < 2) throw Error(ErrorKind::InvalidInput, "synthetic_shower: side must be >= 2");
  if (count == 0) throw Error(ErrorKind::InvalidInput, "synthetic_shower: count must be >= 1");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double s = static_cast<double>(side);
  const std::size_t voxels = side * side * side;

  ShowerBatch out{Tensor({count, 1, side, side, side}), Tensor({count})};
  for (std::size_t n = 0; n < count; ++n) {
    const double cx = s * (0.25 + 0.5 * unit(rng)) - 0.5;
    const double cy = s * (0.25 + 0.5 * unit(rng)) - 0.5;
    const double cz = s * (0.25 + 0.5 * unit(rng)) - 0.5;
    const double sigma = s * (0.12 + 0.12 * unit(rng));
    const double amplitude = 0.05 + 0.1 * unit(rng);
    double total = 0;
    for (std::size_t x = 0; x < side; ++x)
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t z = 0; z < side; ++z) {
          const double dx = static_cast<double>(x) - cx;
          const double dy = static_cast<double>(y) - cy;
          const double dz = static_cast<double>(z) - cz;
          const double blob = amplitude * std::exp(-(dx * dx + dy * dy + dz * dz) / (2 * sigma * sigma));
          const double v = std::max(0.0, blob + 0.02 * amplitude * noise(rng));
          out.inputs[n * voxels + (x * side + y) * side + z] = v;
          total += v;
        }
    out.targets[n] = total;
  }
  return out;
}

}  // namespace scalelab::ml
