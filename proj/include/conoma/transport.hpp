#pragma once

// Inter-platform exchange for the distributed algorithm: the message payload
// of effective interference powers, an in-process bus, and a local-socket
// transport speaking length-prefixed binary frames.
//
// Wire frame (socket transport), all integers big-endian:
//   u32  payload length in bytes
//   u16  platform id (0 = CC, e+1 = EC e)
//   u32  sequence number (2*round for data frames, 2*round+1 for control)
//   u32  scalar count
//   f64  scalars, IEEE-754 binary64 big-endian
//
// Canonical scalar ordering of a data frame from platform P:
//   section A: for each observer device o not in P (ascending index), for
//     each sender device i in P (ascending): |h_o^H q_i|^2, where q_i is the
//     direct beam for strong i and the direct+relay superposition for weak i;
//   section B: for each weak observer w not in P (ascending), for each strong
//     sender s' in P (ascending): |g_{s',w}|^2 p_{s'}.
// A control frame carries exactly one scalar (the sender's local objective
// improvement for the round).

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <sys/socket.h>
#include <unistd.h>

#include "conoma/phy.hpp"
#include "conoma/subproblem.hpp"

namespace conoma {

struct ExchangeMessage {
  int platform = -1;      // -1 = CC, e >= 0 = EC e
  std::uint32_t sequence = 0;
  std::vector<double> scalars;
};

namespace detail {

inline std::vector<int> platform_devices(const Topology& topo, int platform) {
  std::vector<int> out;
  for (int k = 0; k < topo.num_devices(); ++k)
    if (topo.platform_of[k] == platform) out.push_back(k);
  return out;
}

}  // namespace detail

inline int exchange_scalar_count(const Scenario& sc, int platform) {
  const auto& topo = sc.topology;
  const int K = topo.num_devices();
  const auto own = detail::platform_devices(topo, platform);
  int strong_own = 0;
  for (int k : own)
    if (topo.is_strong[k]) ++strong_own;
  int weak_other = 0;
  for (int w : topo.weak_set)
    if (topo.platform_of[w] != platform) ++weak_other;
  return (K - static_cast<int>(own.size())) * static_cast<int>(own.size()) +
         weak_other * strong_own;
}

inline ExchangeMessage build_exchange_message(const ResourceState& st, const Scenario& sc,
                                              int platform, int round) {
  const auto& topo = sc.topology;
  const auto& ch = sc.channels;
  ExchangeMessage msg;
  msg.platform = platform;
  msg.sequence = 2u * static_cast<std::uint32_t>(round);
  const auto own = detail::platform_devices(topo, platform);
  for (int o = 0; o < topo.num_devices(); ++o) {
    if (topo.platform_of[o] == platform) continue;
    const cvec& h = ch.aggregate[o];
    for (int i : own) {
      const double pw = topo.is_strong[i]
                            ? std::norm(h.dot(st.q_direct.col(i)))
                            : std::norm(h.dot(cvec(st.q_direct.col(i) + st.q_relay.col(i))));
      msg.scalars.push_back(pw);
    }
  }
  for (int w : topo.weak_set) {
    if (topo.platform_of[w] == platform) continue;
    for (int s : own)
      if (topo.is_strong[s])
        msg.scalars.push_back(std::norm(ch.g_d2d(s, w)) * st.p(s));
  }
  for (double v : msg.scalars)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::runtime_error("build_exchange_message: non-finite interference scalar (round " +
                               std::to_string(round) + ")");
  return msg;
}

// Rebuilds the receiver's cross-platform interference constants from one data
// frame per peer platform.
inline FrozenInterference frozen_from_messages(const std::vector<ExchangeMessage>& msgs,
                                               const Scenario& sc, int self_platform) {
  const auto& topo = sc.topology;
  const int K = topo.num_devices();
  FrozenInterference out;
  out.slot1 = Eigen::VectorXd::Zero(K);
  out.slot2 = Eigen::VectorXd::Zero(K);
  for (const auto& msg : msgs) {
    if (msg.platform == self_platform)
      throw std::invalid_argument("frozen_from_messages: message from self");
    const auto senders = detail::platform_devices(topo, msg.platform);
    const int expected = exchange_scalar_count(sc, msg.platform);
    if (static_cast<int>(msg.scalars.size()) != expected)
      throw std::runtime_error("frozen_from_messages: scalar count mismatch");
    std::size_t idx = 0;
    for (int o = 0; o < K; ++o) {
      if (topo.platform_of[o] == msg.platform) continue;
      double acc = 0.0;
      for (std::size_t i = 0; i < senders.size(); ++i) acc += msg.scalars[idx++];
      if (topo.platform_of[o] == self_platform) out.slot1(o) += acc;
    }
    for (int w : topo.weak_set) {
      if (topo.platform_of[w] == msg.platform) continue;
      for (int s : senders) {
        if (!topo.is_strong[s]) continue;
        const double v = msg.scalars[idx++];
        if (topo.platform_of[w] == self_platform) out.slot2(w) += v;
      }
    }
  }
  return out;
}

// Both transports deliver, per gather() call, exactly one message from every
// peer in platform order; senders emit frames in a fixed per-round order, so
// no round can consume another round's frame (the barrier contract).
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void broadcast(int self_platform, const ExchangeMessage& msg) = 0;
  virtual std::vector<ExchangeMessage> gather(int self_platform) = 0;
};

// Shared-memory bus: per (sender, receiver) FIFO guarded by one mutex.
class BusTransport : public Transport {
 public:
  // platforms: CC (-1) plus ECs 0..E-1.
  explicit BusTransport(int num_ec, double timeout_sec = 30.0)
      : num_ec_(num_ec), timeout_sec_(timeout_sec) {}

  void broadcast(int self_platform, const ExchangeMessage& msg) override {
    std::lock_guard<std::mutex> lk(mu_);
    for (int p = -1; p < num_ec_; ++p)
      if (p != self_platform) queues_[{self_platform, p}].push_back(msg);
    cv_.notify_all();
  }

  std::vector<ExchangeMessage> gather(int self_platform) override {
    std::vector<ExchangeMessage> out;
    std::unique_lock<std::mutex> lk(mu_);
    for (int p = -1; p < num_ec_; ++p) {
      if (p == self_platform) continue;
      auto& q = queues_[{p, self_platform}];
      if (!cv_.wait_for(lk, std::chrono::duration<double>(timeout_sec_),
                        [&] { return !q.empty(); }))
        throw std::runtime_error("transport timeout waiting for platform " + std::to_string(p));
      out.push_back(q.front());
      q.pop_front();
    }
    return out;
  }

 private:
  int num_ec_;
  double timeout_sec_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::pair<int, int>, std::deque<ExchangeMessage>> queues_;
};

namespace detail {

inline void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v >> 8));
  buf.push_back(static_cast<char>(v & 0xff));
}
inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) buf.push_back(static_cast<char>((v >> s) & 0xff));
}
inline void put_f64(std::string& buf, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  for (int s = 56; s >= 0; s -= 8) buf.push_back(static_cast<char>((bits >> s) & 0xff));
}
inline std::uint64_t get_bits(const unsigned char* p, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v = (v << 8) | p[i];
  return v;
}

inline std::string encode_frame(const ExchangeMessage& msg) {
  std::string payload;
  put_u16(payload, static_cast<std::uint16_t>(msg.platform + 1));
  put_u32(payload, msg.sequence);
  put_u32(payload, static_cast<std::uint32_t>(msg.scalars.size()));
  for (double d : msg.scalars) put_f64(payload, d);
  std::string frame;
  put_u32(frame, static_cast<std::uint32_t>(payload.size()));
  return frame + payload;
}

inline ExchangeMessage decode_payload(const unsigned char* p, std::size_t n) {
  if (n < 10) throw std::runtime_error("transport: short frame");
  ExchangeMessage msg;
  msg.platform = static_cast<int>(get_bits(p, 2)) - 1;
  msg.sequence = static_cast<std::uint32_t>(get_bits(p + 2, 4));
  const std::uint32_t count = static_cast<std::uint32_t>(get_bits(p + 6, 4));
  if (n != 10 + 8ull * count) throw std::runtime_error("transport: frame length mismatch");
  msg.scalars.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint64_t bits = get_bits(p + 10 + 8 * i, 8);
    std::memcpy(&msg.scalars[i], &bits, 8);
  }
  return msg;
}

inline void write_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::write(fd, data, n);
    if (w <= 0) throw std::runtime_error("transport: socket write failed");
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

inline void read_all(int fd, unsigned char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t r = ::read(fd, data, n);
    if (r <= 0) throw std::runtime_error("transport: socket read failed");
    data += r;
    n -= static_cast<std::size_t>(r);
  }
}

}  // namespace detail

// Full mesh of local stream sockets, one pair per platform pair. Each fd is
// used by exactly one platform thread, so no locking is needed.
class SocketTransport : public Transport {
 public:
  explicit SocketTransport(int num_ec) : num_ec_(num_ec) {
    const int n = num_ec_ + 1;
    fds_.assign(n, std::vector<int>(n, -1));
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        int sv[2];
        if (::socketpair(AF_UNIX, SOCK_STREAM, 0, sv) != 0)
          throw std::runtime_error("SocketTransport: socketpair failed");
        fds_[i][j] = sv[0];
        fds_[j][i] = sv[1];
      }
  }
  SocketTransport(const SocketTransport&) = delete;
  SocketTransport& operator=(const SocketTransport&) = delete;
  ~SocketTransport() override {
    for (auto& row : fds_)
      for (int fd : row)
        if (fd >= 0) ::close(fd);
  }

  void broadcast(int self_platform, const ExchangeMessage& msg) override {
    const std::string frame = detail::encode_frame(msg);
    const int self = self_platform + 1;
    for (int p = 0; p <= num_ec_; ++p)
      if (p != self) detail::write_all(fds_[self][p], frame.data(), frame.size());
  }

  std::vector<ExchangeMessage> gather(int self_platform) override {
    std::vector<ExchangeMessage> out;
    const int self = self_platform + 1;
    for (int p = 0; p <= num_ec_; ++p) {
      if (p == self) continue;
      unsigned char hdr[4];
      detail::read_all(fds_[self][p], hdr, 4);
      const std::size_t len = static_cast<std::size_t>(detail::get_bits(hdr, 4));
      if (len > (1u << 26)) throw std::runtime_error("transport: oversized frame");
      std::vector<unsigned char> payload(len);
      detail::read_all(fds_[self][p], payload.data(), len);
      out.push_back(detail::decode_payload(payload.data(), len));
    }
    return out;
  }

 private:
  int num_ec_;
  std::vector<std::vector<int>> fds_;
};

}  // namespace conoma
