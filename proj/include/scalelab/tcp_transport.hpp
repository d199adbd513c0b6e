#pragma once

// TCP ring transport. Rank r listens on endpoints[r], connects to rank
// (r+1) mod N and accepts one connection from rank (r-1) mod N.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "scalelab/error.hpp"
#include "scalelab/transport.hpp"

namespace scalelab::coll {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Socket() { reset(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
};

inline Endpoint parse_endpoint(const std::string& s) {
  auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
    throw Error(ErrorKind::InvalidInput, "endpoint '" + s + "' is not host:port");
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(s.substr(colon + 1), &used);
    if (used != s.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidInput, "endpoint '" + s + "' has a bad port");
  }
  if (port < 0 || port > 65535) throw Error(ErrorKind::InvalidInput, "endpoint '" + s + "' port out of range");
  return {s.substr(0, colon), static_cast<std::uint16_t>(port)};
}

namespace detail {

inline sockaddr_in resolve_ipv4(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
    throw Error(ErrorKind::InvalidInput, "cannot resolve host '" + ep.host + "'");
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof(addr));
  ::freeaddrinfo(res);
  addr.sin_port = htons(ep.port);
  return addr;
}

inline std::string errno_string() { return std::strerror(errno); }

inline void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

inline void set_nonblocking(int fd, bool on) {
  int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, on ? (flags | O_NONBLOCK) : (flags & ~O_NONBLOCK));
}

// Blocking write of the whole buffer; false on peer failure.
inline bool write_all(int fd, std::span<const std::uint8_t> bytes) {
  while (!bytes.empty()) {
    auto n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    bytes = bytes.subspan(static_cast<std::size_t>(n));
  }
  return true;
}

// Blocking read of exactly bytes.size() bytes, bounded by timeout_ms (<0 = none).
inline bool read_exact(int fd, std::span<std::uint8_t> bytes, int timeout_ms) {
  while (!bytes.empty()) {
    pollfd p{fd, POLLIN, 0};
    int rc = ::poll(&p, 1, timeout_ms);
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) return false;
    auto n = ::recv(fd, bytes.data(), bytes.size(), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    bytes = bytes.subspan(static_cast<std::size_t>(n));
  }
  return true;
}

}  // namespace detail

class TcpListener {
 public:
  // Binds and listens on ep; port 0 picks an ephemeral port.
  static TcpListener bind(const Endpoint& ep) {
    TcpListener l;
    l.sock_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!l.sock_.valid()) throw Error(ErrorKind::InvalidInput, "socket(): " + detail::errno_string());
    int one = 1;
    ::setsockopt(l.sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    auto addr = detail::resolve_ipv4(ep);
    if (::bind(l.sock_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
      throw Error(ErrorKind::InvalidInput, "bind " + ep.str() + ": " + detail::errno_string());
    if (::listen(l.sock_.fd(), 16) != 0)
      throw Error(ErrorKind::InvalidInput, "listen " + ep.str() + ": " + detail::errno_string());
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(l.sock_.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
    l.endpoint_ = {ep.host, ntohs(bound.sin_port)};
    return l;
  }

  const Endpoint& endpoint() const { return endpoint_; }
  int fd() const { return sock_.fd(); }

 private:
  Socket sock_;
  Endpoint endpoint_;
};

// Binds n loopback listeners on ephemeral ports; hands out both the
// listeners and the endpoint strings a world needs.
struct LoopbackReservation {
  std::vector<TcpListener> listeners;
  std::vector<std::string> endpoints;
};

inline LoopbackReservation reserve_loopback(std::size_t n) {
  LoopbackReservation r;
  for (std::size_t i = 0; i < n; ++i) {
    r.listeners.push_back(TcpListener::bind({"127.0.0.1", 0}));
    r.endpoints.push_back(r.listeners.back().endpoint().str());
  }
  return r;
}

struct TcpOptions {
  int connect_attempts = 20;
  std::chrono::milliseconds retry_interval{100};
};

class TcpTransport final : public Transport {
 public:
  // Establishes both ring connections. `listener` must be bound to
  // endpoints[rank].
  TcpTransport(int rank, std::vector<std::string> endpoints, TcpListener listener, TcpOptions opts = {})
      : rank_(rank), size_(static_cast<int>(endpoints.size())) {
    if (size_ < 1 || rank < 0 || rank >= size_) throw Error(ErrorKind::InvalidInput, "tcp world: rank out of range");
    if (size_ == 1) return;
    const int right = (rank + 1) % size_;
    const int left = (rank + size_ - 1) % size_;

    auto target = parse_endpoint(endpoints[right]);
    auto addr = detail::resolve_ipv4(target);
    for (int attempt = 0; attempt < opts.connect_attempts && !to_right_.valid(); ++attempt) {
      Socket s(::socket(AF_INET, SOCK_STREAM, 0));
      if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
        to_right_ = std::move(s);
      } else {
        std::this_thread::sleep_for(opts.retry_interval);
      }
    }
    if (!to_right_.valid()) throw PeerUnreachable(right, "connect to " + target.str() + " failed");
    detail::set_nodelay(to_right_.fd());
    auto hello = encode_header({0, kHandshakeTag, static_cast<std::uint16_t>(rank), 0});
    if (!detail::write_all(to_right_.fd(), hello)) throw PeerUnreachable(right, "handshake send failed");

    const int accept_timeout_ms =
        static_cast<int>(2 * opts.connect_attempts * opts.retry_interval.count()) + 1000;
    pollfd p{listener.fd(), POLLIN, 0};
    if (::poll(&p, 1, accept_timeout_ms) <= 0) throw PeerUnreachable(left, "no incoming connection");
    from_left_ = Socket(::accept(listener.fd(), nullptr, nullptr));
    if (!from_left_.valid()) throw PeerUnreachable(left, "accept failed: " + detail::errno_string());
    detail::set_nodelay(from_left_.fd());
    std::array<std::uint8_t, kHeaderBytes> buf{};
    if (!detail::read_exact(from_left_.fd(), buf, accept_timeout_ms)) throw PeerUnreachable(left, "handshake read failed");
    auto h = decode_header(buf);
    if (h.tag != kHandshakeTag || h.sender != left || h.payload_bytes != 0)
      throw PeerUnreachable(left, "unexpected handshake from rank " + std::to_string(h.sender));
  }

  int rank() const override { return rank_; }
  int size() const override { return size_; }

  Message exchange(int to, const Message& out, int from, std::uint16_t expected_tag, Deadline deadline) override {
    if (to != (rank_ + 1) % size_ || from != (rank_ + size_ - 1) % size_)
      throw Error(ErrorKind::InvalidInput, "tcp transport only links ring neighbours");
    const auto frame = encode_message(out);
    std::size_t sent = 0;

    std::vector<std::uint8_t> in(kHeaderBytes);
    std::size_t got = 0;
    bool have_header = false;
    WireHeader header;

    const auto start = std::chrono::steady_clock::now();
    detail::set_nonblocking(to_right_.fd(), true);
    detail::set_nonblocking(from_left_.fd(), true);
    struct Restore {
      int a, b;
      ~Restore() {
        detail::set_nonblocking(a, false);
        detail::set_nonblocking(b, false);
      }
    } restore{to_right_.fd(), from_left_.fd()};

    while (sent < frame.size() || got < in.size()) {
      pollfd fds[2] = {{to_right_.fd(), static_cast<short>(sent < frame.size() ? POLLOUT : 0), 0},
                       {from_left_.fd(), static_cast<short>(got < in.size() ? POLLIN : 0), 0}};
      int timeout = -1;
      if (deadline) {
        auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
        if (elapsed >= *deadline) throw PeerUnreachable(got < in.size() ? from : to, "step deadline exceeded");
        timeout = static_cast<int>((*deadline - elapsed).count());
      }
      int rc = ::poll(fds, 2, timeout);
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw PeerUnreachable(from, "poll failed: " + detail::errno_string());
      }
      if (rc == 0) continue;

      if (fds[0].revents & (POLLERR | POLLHUP)) throw PeerUnreachable(to, "connection lost");
      if (fds[0].revents & POLLOUT) {
        auto n = ::send(to_right_.fd(), frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
        if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)
          throw PeerUnreachable(to, "send failed: " + detail::errno_string());
        if (n > 0) sent += static_cast<std::size_t>(n);
      }
      if (fds[1].revents & (POLLIN | POLLHUP | POLLERR)) {
        auto n = ::recv(from_left_.fd(), in.data() + got, in.size() - got, 0);
        if (n == 0) throw PeerUnreachable(from, "connection closed");
        if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)
          throw PeerUnreachable(from, "recv failed: " + detail::errno_string());
        if (n > 0) got += static_cast<std::size_t>(n);
        if (!have_header && got == kHeaderBytes) {
          header = decode_header(std::span<const std::uint8_t, kHeaderBytes>(in.data(), kHeaderBytes));
          check_header(header);
          have_header = true;
          in.resize(kHeaderBytes + header.payload_bytes);
        }
      }
    }
    auto msg = decode_message(in);
    if (msg.sender != from) throw Error(ErrorKind::InvalidInput, "frame from unexpected sender");
    if (msg.tag != expected_tag) throw Error(ErrorKind::InvalidInput, "frame with unexpected tag");
    return msg;
  }

 private:
  int rank_;
  int size_;
  Socket to_right_;
  Socket from_left_;
};

}  // namespace scalelab::coll
