#pragma once

// Data-parallel synchronous SGD over W workers, weak-scaling measurements,
// and convolution FLOP-rate measurement.

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "scalelab/collectives.hpp"
#include "scalelab/conv3d.hpp"
#include "scalelab/error.hpp"
#include "scalelab/model.hpp"
#include "scalelab/report.hpp"
#include "scalelab/synthetic.hpp"
#include "scalelab/topo.hpp"

namespace scalelab::harness {

enum class LrScaling { linear, sqrt, none };

inline double effective_lr(double base, std::size_t workers, LrScaling rule) {
  if (workers < 1) throw Error(ErrorKind::InvalidInput, "workers must be >= 1");
  switch (rule) {
    case LrScaling::linear: return base * static_cast<double>(workers);
    case LrScaling::sqrt: return base * std::sqrt(static_cast<double>(workers));
    case LrScaling::none: return base;
  }
  return base;
}

struct TrainConfig {
  std::size_t workers = 1;
  std::size_t per_worker_batch = 2;
  double base_learning_rate = 0.01;
  LrScaling lr_scaling = LrScaling::none;
  std::size_t epochs = 1;
  std::size_t samples_per_worker_per_epoch = 8;
  std::size_t sample_side = 5;
  std::uint64_t seed = 1;
  coll::TransportKind transport = coll::TransportKind::in_process;
  // Allgather the parameters after every step and require bitwise equality.
  bool check_replicas = false;

  std::size_t global_batch() const { return per_worker_batch * workers; }
  std::size_t steps_per_epoch() const { return samples_per_worker_per_epoch / per_worker_batch; }
  double learning_rate() const { return effective_lr(base_learning_rate, workers, lr_scaling); }
  ml::ModelConfig model() const { return {sample_side, 4, 3}; }
};

inline void validate(const TrainConfig& c) {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidInput, "train config: " + m); };
  if (c.workers < 1) fail("workers must be >= 1");
  if (c.per_worker_batch < 1) fail("per_worker_batch must be >= 1");
  if (c.epochs < 1) fail("epochs must be >= 1");
  if (!(c.base_learning_rate > 0)) fail("base_learning_rate must be positive");
  if (c.samples_per_worker_per_epoch < c.per_worker_batch || c.samples_per_worker_per_epoch % c.per_worker_batch != 0)
    fail("samples_per_worker_per_epoch must be a positive multiple of per_worker_batch");
  if (c.sample_side < 3) fail("sample_side must be >= 3 for the 3x3x3 kernel");
}

struct EpochStats {
  std::size_t epoch = 0;
  double wall_time_s = 0;
  double mean_loss = 0;
  std::uint64_t total_flops = 0;  // this worker's forward + backward FLOPs
  double achieved_flops_per_s = 0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  ml::ModelParams params;
  std::vector<double> step_losses;  // global batch loss per step
  std::size_t replica_checks = 0;
};

// Unbounded thread-safe mailbox.
template <typename T>
class Channel {
 public:
  void push(T v) {
    {
      std::lock_guard lock(mu_);
      items_.push_back(std::move(v));
    }
    cv_.notify_one();
  }

  std::vector<T> drain() {
    std::lock_guard lock(mu_);
    std::vector<T> out(std::make_move_iterator(items_.begin()), std::make_move_iterator(items_.end()));
    items_.clear();
    return out;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> items_;
};

// Worker r trains on shard synthetic_shower(seed + r). Averaged gradients
// (with the batch loss appended) go through one allreduce per step.
inline TrainResult run_worker(coll::Communicator& comm, const TrainConfig& cfg, Channel<EpochStats>* stats = nullptr) {
  validate(cfg);
  if (static_cast<std::size_t>(comm.size()) != cfg.workers)
    throw Error(ErrorKind::InvalidInput, "communicator size does not match workers");

  const auto model = cfg.model();
  TrainResult result;
  result.params = ml::init_params(model, cfg.seed);
  const auto shard = ml::synthetic_shower(cfg.seed + static_cast<std::uint64_t>(comm.rank()),
                                          cfg.samples_per_worker_per_epoch, cfg.sample_side);
  const double lr = cfg.learning_rate();
  const std::size_t steps = cfg.steps_per_epoch();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0;
    ml::FlopCount flops;
    for (std::size_t k = 0; k < steps; ++k) {
      const auto x = ml::slice_batch(shard.inputs, k * cfg.per_worker_batch, cfg.per_worker_batch);
      const auto y = ml::slice_batch(shard.targets, k * cfg.per_worker_batch, cfg.per_worker_batch);
      auto lg = ml::model_loss_and_gradient(result.params, x, y);
      flops += lg.flops;

      auto buf = ml::flatten(lg.gradient);
      buf.push_back(lg.loss);
      auto avg = coll::allreduce(comm, buf, coll::ReduceOp::average());
      const double global_loss = avg.back();
      avg.pop_back();

      auto flat = ml::flatten(result.params);
      for (std::size_t i = 0; i < flat.size(); ++i) flat[i] -= lr * avg[i];
      result.params = ml::unflatten(result.params, flat);

      loss_sum += global_loss;
      result.step_losses.push_back(global_loss);

      if (cfg.check_replicas) {
        const auto all = coll::allgather(comm, flat);
        for (const auto& other : all) {
          if (other != flat) throw Error(ErrorKind::InvalidInput, "replica parameters diverged");
        }
        ++result.replica_checks;
      }
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EpochStats es{epoch, wall, loss_sum / static_cast<double>(steps), flops.total_flops(),
                  static_cast<double>(flops.total_flops()) / wall};
    result.epochs.push_back(es);
    if (stats && comm.rank() == 0) stats->push(es);
  }
  return result;
}

struct DistributedRun {
  std::vector<EpochStats> epochs;  // reported by worker 0
  ml::ModelParams params;          // worker 0's final parameters
  std::vector<double> step_losses;
  std::vector<TrainResult> workers;
};

namespace detail {

// Prefer the failure that caused the others: a PeerUnreachable is usually
// the echo of another rank's error.
inline void rethrow_root_cause(const std::vector<std::exception_ptr>& errors) {
  std::exception_ptr first, root;
  for (const auto& e : errors) {
    if (!e) continue;
    if (!first) first = e;
    try {
      std::rethrow_exception(e);
    } catch (const PeerUnreachable&) {
    } catch (...) {
      if (!root) root = e;
    }
  }
  if (root) std::rethrow_exception(root);
  if (first) std::rethrow_exception(first);
}

}  // namespace detail

// Spawns cfg.workers threads, one rank each, joined before returning. World
// construction happens before any epoch clock starts.
inline DistributedRun train_distributed(const TrainConfig& cfg) {
  validate(cfg);
  const int w = static_cast<int>(cfg.workers);
  std::vector<TrainResult> results(cfg.workers);
  std::vector<std::exception_ptr> errors(cfg.workers);
  Channel<EpochStats> stats;

  if (cfg.transport == coll::TransportKind::in_process) {
    auto world = coll::make_inprocess_world(w);
    std::vector<std::thread> threads;
    for (int r = 0; r < w; ++r) {
      threads.emplace_back([&, r] {
        try {
          results[r] = run_worker(world.ranks[r], cfg, &stats);
        } catch (...) {
          errors[r] = std::current_exception();
          world.abort();
        }
      });
    }
    for (auto& t : threads) t.join();
  } else {
    auto reservation = coll::reserve_loopback(cfg.workers);
    std::vector<std::thread> threads;
    for (int r = 0; r < w; ++r) {
      threads.emplace_back([&, r] {
        try {
          coll::WorldConfig wc{w, r, coll::TransportKind::tcp, reservation.endpoints, {}, {}};
          auto comm = coll::connect_tcp(wc, std::move(reservation.listeners[r]));
          results[r] = run_worker(comm, cfg, &stats);
        } catch (...) {
          errors[r] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
  }
  detail::rethrow_root_cause(errors);

  DistributedRun run;
  run.epochs = stats.drain();
  run.params = results[0].params;
  run.step_losses = results[0].step_losses;
  run.workers = std::move(results);
  return run;
}

struct RunSummary {
  std::size_t workers = 0;
  std::size_t repeat = 0;
  std::vector<EpochStats> epochs;
};

struct ScalingMeasurement {
  std::vector<report::ScalingRecord> records;
  std::vector<RunSummary> runs;
  std::optional<ErrorKind> failure_kind;
  std::string failure;
};

// Weak scaling: per-worker workload stays fixed while the worker count
// grows. Each record's time is the mean epoch time over `repeats` runs.
// On a training failure the records gathered so far are returned together
// with the error.
inline ScalingMeasurement measure_scaling(const TrainConfig& tmpl, const std::vector<std::size_t>& worker_counts,
                                          std::size_t repeats = 4) {
  if (worker_counts.empty()) throw Error(ErrorKind::EmptyInput, "no worker counts");
  for (std::size_t i = 0; i < worker_counts.size(); ++i) {
    if (worker_counts[i] < 1) throw Error(ErrorKind::InvalidInput, "worker counts must be >= 1");
    if (i > 0 && worker_counts[i] <= worker_counts[i - 1])
      throw Error(ErrorKind::InvalidInput, "worker counts must be strictly ascending");
  }
  if (repeats < 1) throw Error(ErrorKind::InvalidInput, "repeats must be >= 1");

  ScalingMeasurement m;
  for (auto workers : worker_counts) {
    auto cfg = tmpl;
    cfg.workers = workers;
    double sum = 0;
    std::size_t n = 0;
    try {
      for (std::size_t rep = 0; rep < repeats; ++rep) {
        auto run = train_distributed(cfg);
        for (const auto& e : run.epochs) {
          sum += e.wall_time_s;
          ++n;
        }
        m.runs.push_back({workers, rep, std::move(run.epochs)});
      }
    } catch (const Error& e) {
      m.failure_kind = e.kind();
      m.failure = e.what();
      return m;
    }
    m.records.push_back({workers, sum / static_cast<double>(n)});
  }
  return m;
}

struct ConvShape {
  std::size_t batch = 1;
  ml::Conv3dSpec spec;
  ml::Extent3 input{9, 9, 9};
};

struct ConvTiming {
  ml::FlopCount flops_per_call;
  std::size_t calls = 0;
  double seconds = 0;

  double achieved_flops_per_s() const {
    return static_cast<double>(flops_per_call.total_flops()) * static_cast<double>(calls) / seconds;
  }
};

struct ConvPerf {
  ConvTiming timing;
  double achieved_flops_per_s = 0;
  double peak_flops_per_s = 0;
  double ratio = 0;

  report::PerfRecord as_perf_record() const { return {1, achieved_flops_per_s / 1e15, ratio}; }
};

inline ConvTiming time_conv(const ConvShape& shape, std::size_t repeats, std::uint64_t seed = 7) {
  if (repeats < 1) throw Error(ErrorKind::InvalidInput, "repeats must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ml::Tensor input({shape.batch, shape.spec.in_channels, shape.input[0], shape.input[1], shape.input[2]});
  ml::Tensor weights(shape.spec.weight_shape());
  ml::Tensor bias({shape.spec.out_channels});
  for (auto& v : input.values()) v = u(rng);
  for (auto& v : weights.values()) v = u(rng);

  auto warm = ml::conv3d_forward(input, shape.spec, weights, bias);
  ConvTiming t{warm.flops, repeats, 0};
  double sink = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < repeats; ++i) sink += ml::conv3d_forward(input, shape.spec, weights, bias).output[0];
  t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  volatile double keep = sink;
  (void)keep;
  return t;
}

inline ConvPerf percent_of_peak(const ConvTiming& timing, const topo::NodeSpec& node,
                                topo::Precision precision = topo::Precision::fp64,
                                topo::FreqMode mode = topo::FreqMode::nominal) {
  const double peak = topo::peak_flops(node, precision, mode);
  const double achieved = timing.achieved_flops_per_s();
  return {timing, achieved, peak, achieved / peak};
}

// Times repeated forward calls of one convolution and normalizes the
// achieved rate by the node's theoretical peak.
inline ConvPerf measure_conv_percent_of_peak(const topo::NodeSpec& node, const ConvShape& shape, std::size_t repeats,
                                             topo::Precision precision = topo::Precision::fp64,
                                             topo::FreqMode mode = topo::FreqMode::nominal) {
  return percent_of_peak(time_conv(shape, repeats), node, precision, mode);
}

}  // namespace scalelab::harness
