#pragma once

// Point-to-point message layer under the collectives: the wire encoding, the
// transport interface, and the in-process transport.

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include "scalelab/error.hpp"
#include "scalelab/ring_schedule.hpp"
#include "scalelab/tensor.hpp"

namespace scalelab::coll {

using Deadline = std::optional<std::chrono::milliseconds>;

inline std::uint16_t make_tag(Phase phase, std::size_t step) {
  if (step >= (1u << 14)) throw Error(ErrorKind::InvalidInput, "step index does not fit the 14-bit tag field");
  return static_cast<std::uint16_t>((static_cast<unsigned>(phase) << 14) | step);
}

inline constexpr std::uint16_t kHandshakeTag = 0xFFFF;

struct Message {
  std::uint16_t tag = 0;
  std::uint16_t sender = 0;
  std::vector<double> payload;

  bool operator==(const Message&) const = default;
};

// 12-byte header: BE u32 payload bytes, BE u16 tag, BE u16 sender, BE u32
// element count. Payload is consecutive LE fp64 values.
struct WireHeader {
  std::uint32_t payload_bytes = 0;
  std::uint16_t tag = 0;
  std::uint16_t sender = 0;
  std::uint32_t element_count = 0;
};

inline constexpr std::size_t kHeaderBytes = 12;
// Refuse frames larger than this; a corrupted length would otherwise
// trigger a huge allocation.
inline constexpr std::uint32_t kMaxPayloadBytes = 1u << 30;

inline std::array<std::uint8_t, kHeaderBytes> encode_header(const WireHeader& h) {
  std::array<std::uint8_t, kHeaderBytes> b{};
  auto put = [&b](std::size_t at, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * (bytes - 1 - i)));
  };
  put(0, h.payload_bytes, 4);
  put(4, h.tag, 2);
  put(6, h.sender, 2);
  put(8, h.element_count, 4);
  return b;
}

inline WireHeader decode_header(std::span<const std::uint8_t, kHeaderBytes> b) {
  auto get = [&b](std::size_t at, int bytes) {
    std::uint32_t v = 0;
    for (int i = 0; i < bytes; ++i) v = (v << 8) | b[at + i];
    return v;
  };
  WireHeader h;
  h.payload_bytes = get(0, 4);
  h.tag = static_cast<std::uint16_t>(get(4, 2));
  h.sender = static_cast<std::uint16_t>(get(6, 2));
  h.element_count = get(8, 4);
  return h;
}

inline void check_header(const WireHeader& h) {
  if (h.payload_bytes > kMaxPayloadBytes) throw Error(ErrorKind::ShapeMismatch, "frame exceeds maximum payload size");
  if (std::uint64_t{h.element_count} * 8 != h.payload_bytes)
    throw Error(ErrorKind::ShapeMismatch, "header element count disagrees with payload length");
}

inline std::vector<std::uint8_t> encode_message(const Message& m) {
  WireHeader h{static_cast<std::uint32_t>(m.payload.size() * 8), m.tag, m.sender,
               static_cast<std::uint32_t>(m.payload.size())};
  auto head = encode_header(h);
  std::vector<std::uint8_t> out(head.begin(), head.end());
  ml::append_le_f64(out, m.payload);
  return out;
}

inline Message decode_message(std::span<const std::uint8_t> frame) {
  if (frame.size() < kHeaderBytes) throw Error(ErrorKind::ShapeMismatch, "truncated frame header");
  auto h = decode_header(frame.first<kHeaderBytes>());
  check_header(h);
  if (frame.size() - kHeaderBytes != h.payload_bytes)
    throw Error(ErrorKind::ShapeMismatch, "frame length disagrees with header");
  return {h.tag, h.sender, ml::read_le_f64(frame.subspan(kHeaderBytes))};
}

class Transport {
 public:
  virtual ~Transport() = default;

  virtual int rank() const = 0;
  virtual int size() const = 0;

  // Sends `out` to rank `to` while receiving the next message from rank
  // `from`. Both directions progress concurrently so a full ring of
  // exchanges cannot deadlock.
  virtual Message exchange(int to, const Message& out, int from, std::uint16_t expected_tag, Deadline deadline) = 0;
};

// Mailbox shared by all ranks of one in-process world, keyed by
// (from, to, tag).
class InProcessFabric {
 public:
  explicit InProcessFabric(int world_size) : world_size_(world_size) {}

  int world_size() const { return world_size_; }

  void post(int from, int to, Message m) {
    {
      std::lock_guard lock(mu_);
      boxes_[{from, to, m.tag}].push_back(std::move(m));
    }
    cv_.notify_all();
  }

  Message take(int from, int to, std::uint16_t tag, Deadline deadline) {
    std::unique_lock lock(mu_);
    auto& box = boxes_[{from, to, tag}];
    auto ready = [&] { return aborted_ || !box.empty(); };
    if (deadline) {
      if (!cv_.wait_for(lock, *deadline, ready)) throw PeerUnreachable(from, "step deadline exceeded");
    } else {
      cv_.wait(lock, ready);
    }
    if (aborted_) throw PeerUnreachable(from, "world aborted");
    Message m = std::move(box.front());
    box.pop_front();
    return m;
  }

  // Wakes every blocked rank with PeerUnreachable.
  void abort() {
    {
      std::lock_guard lock(mu_);
      aborted_ = true;
    }
    cv_.notify_all();
  }

 private:
  int world_size_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::tuple<int, int, std::uint16_t>, std::deque<Message>> boxes_;
  bool aborted_ = false;
};

class InProcessTransport final : public Transport {
 public:
  InProcessTransport(std::shared_ptr<InProcessFabric> fabric, int rank) : fabric_(std::move(fabric)), rank_(rank) {}

  int rank() const override { return rank_; }
  int size() const override { return fabric_->world_size(); }

  Message exchange(int to, const Message& out, int from, std::uint16_t expected_tag, Deadline deadline) override {
    fabric_->post(rank_, to, out);
    return fabric_->take(from, rank_, expected_tag, deadline);
  }

 private:
  std::shared_ptr<InProcessFabric> fabric_;
  int rank_;
};

}  // namespace scalelab::coll
