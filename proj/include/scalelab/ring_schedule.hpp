#pragma once

// Chunk schedule of a ring allreduce: N-1 reduce-scatter steps followed by
// N-1 allgather steps. At reduce-scatter step s rank r sends chunk (r-s) mod N
// to rank r+1 and receives chunk (r-s-1) mod N from rank r-1, accumulating.
// Afterwards rank r owns the fully reduced chunk (r+1) mod N, and the
// allgather steps circulate the reduced chunks.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "scalelab/error.hpp"

namespace scalelab::coll {

enum class Phase : std::uint8_t { reduce_scatter = 0, allgather = 1, gather = 2, control = 3 };

struct RingStep {
  Phase phase;
  std::size_t step_index;  // index within its phase
};

// One step as seen by a specific rank.
struct RankStep {
  Phase phase;
  std::size_t step_index;
  std::size_t send_chunk;
  std::size_t recv_chunk;
  int send_to;
  int recv_from;
};

class RingSchedule {
 public:
  RingSchedule() = default;

  RingSchedule(std::size_t world_size, std::size_t buffer_len) : world_size_(world_size) {
    if (world_size == 0) throw Error(ErrorKind::InvalidInput, "world_size must be >= 1");
    // First (M mod N) chunks get ceil(M/N) elements, the rest floor(M/N).
    const std::size_t base = buffer_len / world_size;
    const std::size_t extra = buffer_len % world_size;
    boundaries_.reserve(world_size + 1);
    boundaries_.push_back(0);
    for (std::size_t c = 0; c < world_size; ++c) boundaries_.push_back(boundaries_.back() + base + (c < extra ? 1 : 0));

    for (std::size_t s = 0; s + 1 < world_size; ++s) steps_.push_back({Phase::reduce_scatter, s});
    for (std::size_t s = 0; s + 1 < world_size; ++s) steps_.push_back({Phase::allgather, s});
  }

  std::size_t world_size() const { return world_size_; }
  std::size_t buffer_len() const { return boundaries_.empty() ? 0 : boundaries_.back(); }
  const std::vector<std::size_t>& chunk_boundaries() const { return boundaries_; }
  const std::vector<RingStep>& steps() const { return steps_; }

  std::size_t chunk_begin(std::size_t c) const { return boundaries_.at(c); }
  std::size_t chunk_size(std::size_t c) const { return boundaries_.at(c + 1) - boundaries_.at(c); }

  int send_to(int rank) const { return static_cast<int>((rank + 1) % world_size_); }
  int recv_from(int rank) const { return static_cast<int>((rank + world_size_ - 1) % world_size_); }

  RankStep at(const RingStep& step, int rank) const {
    const std::size_t n = world_size_;
    const std::size_t r = static_cast<std::size_t>(rank);
    const std::size_t s = step.step_index;
    // Reduce-scatter: send (r-s), recv (r-s-1). Allgather: send (r+1-s), recv (r-s).
    const std::size_t send = step.phase == Phase::reduce_scatter ? (r + n - s % n) % n : (r + 1 + n - s % n) % n;
    const std::size_t recv = (send + n - 1) % n;
    return {step.phase, s, send, recv, send_to(rank), recv_from(rank)};
  }

  std::vector<RankStep> for_rank(int rank) const {
    if (rank < 0 || static_cast<std::size_t>(rank) >= world_size_)
      throw Error(ErrorKind::InvalidInput, "rank out of range");
    std::vector<RankStep> out;
    out.reserve(steps_.size());
    for (const auto& s : steps_) out.push_back(at(s, rank));
    return out;
  }

 private:
  std::size_t world_size_ = 1;
  std::vector<std::size_t> boundaries_;
  std::vector<RingStep> steps_;
};

inline RingSchedule build_ring_schedule(std::size_t world_size, std::size_t buffer_len) {
  return RingSchedule(world_size, buffer_len);
}

// Elements each rank puts on the wire over the whole schedule.
inline std::vector<std::size_t> transmitted_elements(const RingSchedule& schedule, std::size_t buffer_len) {
  if (buffer_len != schedule.buffer_len())
    throw Error(ErrorKind::InvalidInput, "buffer_len does not match the schedule");
  std::vector<std::size_t> sent(schedule.world_size(), 0);
  for (std::size_t r = 0; r < sent.size(); ++r)
    for (const auto& step : schedule.steps()) sent[r] += schedule.chunk_size(schedule.at(step, static_cast<int>(r)).send_chunk);
  return sent;
}

}  // namespace scalelab::coll
