#pragma once

// Cluster/node hardware model, rank x thread placement validation, and
// theoretical peak FLOP rates.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scalelab/error.hpp"
#include "scalelab/kvconfig.hpp"

namespace scalelab::topo {

struct NodeSpec {
  std::uint32_t cores_per_node = 1;
  std::uint32_t sockets = 1;
  std::uint32_t numa_domains = 1;
  std::uint32_t threads_per_core = 1;  // 2 = hyperthreading available
  double nominal_freq_ghz = 1.0;
  double production_freq_ghz = 1.0;
  std::uint32_t simd_width_bits = 64;
  std::uint32_t fma_units_per_core = 1;
  double memory_gb = 1.0;
  // Sub-NUMA clustering modes per socket the hardware can be configured
  // into. 0 means "numa_domains / sockets", i.e. no extra clustering.
  std::uint32_t max_numa_clustering = 0;

  std::uint32_t default_numa_clustering() const { return numa_domains / sockets; }

  std::uint32_t numa_clustering_limit() const {
    return max_numa_clustering == 0 ? default_numa_clustering() : max_numa_clustering;
  }

  bool operator==(const NodeSpec&) const = default;
};

struct ClusterSpec {
  std::string name;
  std::uint64_t total_nodes = 1;
  NodeSpec node;

  std::uint64_t total_cores() const { return total_nodes * node.cores_per_node; }

  bool operator==(const ClusterSpec&) const = default;
};

struct PlacementPlan {
  std::uint32_t ranks_per_node = 1;
  std::uint32_t threads_per_rank = 1;
  bool hyperthreading = false;
  std::uint32_t numa_clustering = 1;  // NUMA domains per socket

  bool operator==(const PlacementPlan&) const = default;
};

struct ValidatedPlan {
  PlacementPlan plan;
  std::uint32_t logical_cores_used = 0;
  std::uint32_t logical_cores_available = 0;
};

enum class Precision { fp64, fp32 };
enum class FreqMode { nominal, production };

inline void validate(const NodeSpec& n) {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidInput, "node spec: " + m); };
  if (n.cores_per_node == 0 || n.sockets == 0 || n.numa_domains == 0 || n.simd_width_bits == 0 ||
      n.fma_units_per_core == 0)
    fail("counts must be strictly positive");
  if (!(n.nominal_freq_ghz > 0) || !(n.production_freq_ghz > 0) || !(n.memory_gb > 0))
    fail("frequencies and memory must be strictly positive");
  if (n.threads_per_core != 1 && n.threads_per_core != 2) fail("threads_per_core must be 1 or 2");
  if (n.cores_per_node % n.sockets != 0) fail("cores_per_node not divisible by sockets");
  if (n.cores_per_node % n.numa_domains != 0) fail("cores_per_node not divisible by numa_domains");
  if (n.numa_domains % n.sockets != 0) fail("numa_domains not divisible by sockets");
  if (n.max_numa_clustering != 0 && n.max_numa_clustering < n.default_numa_clustering())
    fail("max_numa_clustering below the default clustering");
}

inline void validate(const ClusterSpec& c) {
  if (c.total_nodes < 1) throw Error(ErrorKind::InvalidInput, "cluster spec: total_nodes must be >= 1");
  validate(c.node);
}

inline ValidatedPlan validate_placement(const NodeSpec& node, const PlacementPlan& plan) {
  validate(node);
  if (plan.ranks_per_node == 0 || plan.threads_per_rank == 0 || plan.numa_clustering == 0)
    throw Error(ErrorKind::InvalidInput, "placement plan: counts must be strictly positive");

  const std::uint32_t per_core = plan.hyperthreading ? node.threads_per_core : 1;
  const std::uint32_t available = node.cores_per_node * per_core;
  const std::uint64_t used = std::uint64_t{plan.ranks_per_node} * plan.threads_per_rank;
  if (used > available) {
    throw Error(ErrorKind::Oversubscription,
                std::to_string(plan.ranks_per_node) + " ranks x " + std::to_string(plan.threads_per_rank) +
                    " threads = " + std::to_string(used) + " > " + std::to_string(available) +
                    " logical cores");
  }

  if (plan.numa_clustering > node.numa_clustering_limit()) {
    throw Error(ErrorKind::NumaMismatch, "numa_clustering " + std::to_string(plan.numa_clustering) +
                                             " exceeds the node's limit of " +
                                             std::to_string(node.numa_clustering_limit()) + " domains per socket");
  }
  const std::uint32_t domains = plan.numa_clustering * node.sockets;
  if (plan.ranks_per_node != 1 && domains % plan.ranks_per_node != 0) {
    throw Error(ErrorKind::NumaMismatch, std::to_string(plan.ranks_per_node) +
                                             " ranks per node do not divide " + std::to_string(domains) +
                                             " NUMA domains");
  }
  return {plan, static_cast<std::uint32_t>(used), available};
}

inline double lane_bits(Precision p) { return p == Precision::fp64 ? 64.0 : 32.0; }

// cores x freq x FMA units x SIMD lanes x 2 (an FMA is a multiply and an add).
inline double peak_flops(const NodeSpec& node, Precision precision, FreqMode mode = FreqMode::nominal) {
  validate(node);
  const auto lane = static_cast<std::uint32_t>(lane_bits(precision));
  if (node.simd_width_bits % lane != 0)
    throw Error(ErrorKind::InvalidInput, "simd_width_bits not divisible by lane width");
  const double freq_hz = (mode == FreqMode::nominal ? node.nominal_freq_ghz : node.production_freq_ghz) * 1e9;
  const double lanes = static_cast<double>(node.simd_width_bits / lane);
  return static_cast<double>(node.cores_per_node) * freq_hz * node.fma_units_per_core * lanes * 2.0;
}

inline double peak_flops(const ClusterSpec& cluster, Precision precision, FreqMode mode = FreqMode::nominal) {
  validate(cluster);
  return static_cast<double>(cluster.total_nodes) * peak_flops(cluster.node, precision, mode);
}

// Every plan with ranks_per_node in {1, sockets, sockets x clustering} (capped
// at 2 x numa_clustering per socket) whose threads fill the node's logical
// cores exactly, with and without hyperthreading. Sorted by ranks, then
// non-HT first.
inline std::vector<PlacementPlan> enumerate_placements(const NodeSpec& node) {
  validate(node);
  std::vector<std::uint32_t> rank_options{1, node.sockets};
  for (std::uint32_t c = node.default_numa_clustering(); c <= node.numa_clustering_limit(); ++c)
    rank_options.push_back(c * node.sockets);
  std::sort(rank_options.begin(), rank_options.end());
  rank_options.erase(std::unique(rank_options.begin(), rank_options.end()), rank_options.end());

  std::vector<PlacementPlan> plans;
  for (auto ranks : rank_options) {
    std::optional<std::uint32_t> clustering;
    for (std::uint32_t c = node.default_numa_clustering(); c <= node.numa_clustering_limit(); ++c) {
      if (ranks == 1 || (c * node.sockets) % ranks == 0) {
        clustering = c;
        break;
      }
    }
    if (!clustering || ranks > 2 * *clustering * node.sockets) continue;

    for (bool ht : {false, true}) {
      if (ht && node.threads_per_core < 2) continue;
      const std::uint32_t logical = node.cores_per_node * (ht ? node.threads_per_core : 1);
      if (logical % ranks != 0) continue;
      plans.push_back({ranks, logical / ranks, ht, *clustering});
    }
  }
  return plans;
}

inline NodeSpec sng_node() {
  NodeSpec n;
  n.cores_per_node = 48;
  n.sockets = 2;
  n.numa_domains = 2;
  n.threads_per_core = 2;
  n.nominal_freq_ghz = 2.7;
  n.production_freq_ghz = 2.3;
  n.simd_width_bits = 512;
  n.fma_units_per_core = 2;
  n.memory_gb = 96;
  n.max_numa_clustering = 2;
  return n;
}

// 311,040 cores / 48 per node.
inline ClusterSpec sng_cluster() { return {"sng", 6480, sng_node()}; }

inline std::optional<ClusterSpec> preset(const std::string& name) {
  if (name == "sng") return sng_cluster();
  return std::nullopt;
}

inline ClusterSpec cluster_from_config(const KeyValueConfig& cfg) {
  auto count = [&](const char* key, long long fallback) -> std::uint32_t {
    auto v = fallback < 0 ? cfg.get_int(key) : cfg.get_int(key, fallback);
    if (v < 0 || v > 0xFFFFFFFFLL) throw Error(ErrorKind::Config, std::string("key '") + key + "' out of range");
    return static_cast<std::uint32_t>(v);
  };
  ClusterSpec c;
  c.name = cfg.get_string("name", "custom");
  auto nodes = cfg.get_int("total_nodes", 1);
  if (nodes < 1) throw Error(ErrorKind::Config, "total_nodes must be >= 1");
  c.total_nodes = static_cast<std::uint64_t>(nodes);
  c.node.cores_per_node = count("cores_per_node", -1);
  c.node.sockets = count("sockets", 1);
  c.node.numa_domains = count("numa_domains", c.node.sockets);
  c.node.threads_per_core = count("threads_per_core", 1);
  c.node.nominal_freq_ghz = cfg.get_double("nominal_freq_ghz");
  c.node.production_freq_ghz = cfg.get_double("production_freq_ghz", c.node.nominal_freq_ghz);
  c.node.simd_width_bits = count("simd_width_bits", -1);
  c.node.fma_units_per_core = count("fma_units_per_core", 1);
  c.node.memory_gb = cfg.get_double("memory_gb", 1.0);
  c.node.max_numa_clustering = count("max_numa_clustering", 0);
  try {
    validate(c);
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
  return c;
}

// A preset name ("sng") or a path to a key=value file.
inline ClusterSpec load_cluster(const std::string& preset_or_path) {
  if (auto p = preset(preset_or_path)) return *p;
  return cluster_from_config(KeyValueConfig::load(preset_or_path));
}

}  // namespace scalelab::topo
