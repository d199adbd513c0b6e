#pragma once

// Ring allreduce and allgather over a pluggable transport.

#include <algorithm>
#include <chrono>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scalelab/error.hpp"
#include "scalelab/ring_schedule.hpp"
#include "scalelab/tcp_transport.hpp"
#include "scalelab/tensor.hpp"
#include "scalelab/transport.hpp"

namespace scalelab::coll {

enum class TransportKind { in_process, tcp };

struct WorldConfig {
  int world_size = 1;
  int rank = 0;
  TransportKind transport = TransportKind::in_process;
  std::vector<std::string> endpoints;  // tcp only, one per rank
  Deadline step_deadline;              // off by default
  TcpOptions tcp;
};

inline void validate(const WorldConfig& w) {
  if (w.world_size < 1) throw Error(ErrorKind::InvalidInput, "world_size must be >= 1");
  if (w.rank < 0 || w.rank >= w.world_size) throw Error(ErrorKind::InvalidInput, "rank out of range");
  if (w.world_size >= (1 << 13)) throw Error(ErrorKind::InvalidInput, "world_size too large for the step tag");
  if (w.transport == TransportKind::tcp && static_cast<int>(w.endpoints.size()) != w.world_size)
    throw Error(ErrorKind::InvalidInput, "tcp world needs one endpoint per rank");
}

enum class ReduceKind { sum, average, max };

struct ReduceOp {
  ReduceKind kind = ReduceKind::sum;

  static ReduceOp sum() { return {ReduceKind::sum}; }
  static ReduceOp average() { return {ReduceKind::average}; }
  static ReduceOp max() { return {ReduceKind::max}; }
};

// One rank's handle on a world. Confined to the worker that drives it.
class Communicator {
 public:
  Communicator(std::unique_ptr<Transport> transport, Deadline step_deadline = {})
      : transport_(std::move(transport)), deadline_(step_deadline) {}

  int rank() const { return transport_->rank(); }
  int size() const { return transport_->size(); }

  void set_step_deadline(Deadline d) { deadline_ = d; }
  Deadline step_deadline() const { return deadline_; }

  Message exchange(int to, Phase phase, std::size_t step, std::vector<double> payload, int from) {
    const auto tag = make_tag(phase, step);
    Message out{tag, static_cast<std::uint16_t>(rank()), std::move(payload)};
    return transport_->exchange(to, out, from, tag, deadline_);
  }

 private:
  std::unique_ptr<Transport> transport_;
  Deadline deadline_;
};

// All ranks of an in-process world, plus the abort switch their driver uses
// when one worker fails.
struct InProcessWorld {
  std::shared_ptr<InProcessFabric> fabric;
  std::vector<Communicator> ranks;

  void abort() { fabric->abort(); }
};

inline InProcessWorld make_inprocess_world(int world_size, Deadline step_deadline = {}) {
  WorldConfig probe;
  probe.world_size = world_size;
  validate(probe);
  InProcessWorld w{std::make_shared<InProcessFabric>(world_size), {}};
  w.ranks.reserve(static_cast<std::size_t>(world_size));
  for (int r = 0; r < world_size; ++r)
    w.ranks.emplace_back(std::make_unique<InProcessTransport>(w.fabric, r), step_deadline);
  return w;
}

// Connects one TCP rank. Without a pre-bound listener, binds endpoints[rank].
inline Communicator connect_tcp(const WorldConfig& cfg, std::optional<TcpListener> listener = std::nullopt) {
  validate(cfg);
  if (cfg.transport != TransportKind::tcp) throw Error(ErrorKind::InvalidInput, "connect_tcp needs a tcp world");
  TcpListener l = listener ? std::move(*listener) : TcpListener::bind(parse_endpoint(cfg.endpoints[cfg.rank]));
  return Communicator(std::make_unique<TcpTransport>(cfg.rank, cfg.endpoints, std::move(l), cfg.tcp),
                      cfg.step_deadline);
}

namespace detail {

inline double combine(ReduceKind kind, double received, double own) {
  return kind == ReduceKind::max ? std::max(received, own) : received + own;
}

}  // namespace detail

// Every rank ends with the same elementwise reduction. Each chunk is
// accumulated in a fixed ring order, so the result is bitwise identical
// across ranks and across repeated runs.
inline std::vector<double> allreduce(Communicator& comm, std::span<const double> input, ReduceOp op) {
  std::vector<double> buf(input.begin(), input.end());
  const int n = comm.size();
  if (n == 1) return buf;

  const auto schedule = build_ring_schedule(static_cast<std::size_t>(n), buf.size());
  for (const auto& step : schedule.steps()) {
    const auto rs = schedule.at(step, comm.rank());
    const auto send_begin = buf.begin() + static_cast<std::ptrdiff_t>(schedule.chunk_begin(rs.send_chunk));
    std::vector<double> out(send_begin, send_begin + static_cast<std::ptrdiff_t>(schedule.chunk_size(rs.send_chunk)));
    auto in = comm.exchange(rs.send_to, rs.phase, rs.step_index, std::move(out), rs.recv_from);

    const std::size_t recv_begin = schedule.chunk_begin(rs.recv_chunk);
    const std::size_t recv_len = schedule.chunk_size(rs.recv_chunk);
    if (in.payload.size() != recv_len) {
      throw Error(ErrorKind::ShapeMismatch, "rank " + std::to_string(rs.recv_from) + " sent " +
                                                std::to_string(in.payload.size()) + " elements, expected " +
                                                std::to_string(recv_len));
    }
    if (rs.phase == Phase::reduce_scatter) {
      for (std::size_t i = 0; i < recv_len; ++i)
        buf[recv_begin + i] = detail::combine(op.kind, in.payload[i], buf[recv_begin + i]);
    } else {
      std::copy(in.payload.begin(), in.payload.end(), buf.begin() + static_cast<std::ptrdiff_t>(recv_begin));
    }
  }
  if (op.kind == ReduceKind::average) {
    for (auto& v : buf) v /= static_cast<double>(n);
  }
  return buf;
}

inline ml::Tensor allreduce(Communicator& comm, const ml::Tensor& input, ReduceOp op) {
  return ml::Tensor(input.shape(), allreduce(comm, input.data(), op));
}

// Ragged ring allgather: N-1 steps, each forwarding the block received in
// the previous step. Returns every rank's buffer in rank order.
inline std::vector<std::vector<double>> allgather(Communicator& comm, std::span<const double> input,
                                                  Phase phase = Phase::gather, std::size_t step_offset = 0) {
  const int n = comm.size();
  const int r = comm.rank();
  std::vector<std::vector<double>> blocks(static_cast<std::size_t>(n));
  blocks[static_cast<std::size_t>(r)].assign(input.begin(), input.end());
  const int right = (r + 1) % n;
  const int left = (r + n - 1) % n;
  for (int s = 0; s + 1 < n; ++s) {
    const int send_owner = (r - s + n) % n;
    const int recv_owner = (r - s - 1 + 2 * n) % n;
    auto in = comm.exchange(right, phase, step_offset + static_cast<std::size_t>(s),
                            blocks[static_cast<std::size_t>(send_owner)], left);
    blocks[static_cast<std::size_t>(recv_owner)] = std::move(in.payload);
  }
  return blocks;
}

// Shapes travel first (rank and extents as exact small integers), then data;
// a data block whose length disagrees with its announced shape is a
// ShapeMismatch.
inline std::vector<ml::Tensor> allgather(Communicator& comm, const ml::Tensor& input) {
  const std::size_t n = static_cast<std::size_t>(comm.size());
  std::vector<double> shape_msg{static_cast<double>(input.rank())};
  for (auto e : input.shape()) shape_msg.push_back(static_cast<double>(e));
  auto shapes = allgather(comm, shape_msg, Phase::gather, 0);
  auto data = allgather(comm, input.data(), Phase::gather, n);

  std::vector<ml::Tensor> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& sm = shapes[i];
    if (sm.empty() || sm[0] != static_cast<double>(sm.size() - 1))
      throw Error(ErrorKind::ShapeMismatch, "malformed shape message from rank " + std::to_string(i));
    ml::Shape shape;
    for (std::size_t a = 1; a < sm.size(); ++a) shape.push_back(static_cast<std::size_t>(sm[a]));
    if (ml::element_count(shape) != data[i].size())
      throw Error(ErrorKind::ShapeMismatch, "rank " + std::to_string(i) + " data length disagrees with its shape");
    out.emplace_back(std::move(shape), std::move(data[i]));
  }
  return out;
}

}  // namespace scalelab::coll
