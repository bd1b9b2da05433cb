#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/ip.h>
#include <netinet/ip_icmp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/uio.h>
#include <time.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "avband/error.hpp"
#include "avband/estimators.hpp"
#include "avband/numeric.hpp"
#include "avband/samples.hpp"

namespace avband::probe {

enum class ProbeMode { kIcmpEcho, kUdpEcho };

inline std::vector<Bytes> DefaultSizes() {
#ifdef _WIN32
  return {32, 1032};
#else
  return {64, 1064};
#endif
}

inline constexpr std::uint16_t kEchoPort = 7;
inline constexpr Bytes kMaxPayload = 65507;
inline constexpr Bytes kIpv4HeaderBytes = 20;
inline constexpr Bytes kIcmpHeaderBytes = 8;
inline constexpr Bytes kUdpHeaderBytes = 8;

struct ProbeConfig {
  std::string target;
  std::vector<Bytes> sizes = DefaultSizes();  // payload bytes
  int retries = 10;                           // probes per size
  Seconds pacing = 0.1;
  Seconds timeout = 2.0;
  ProbeMode mode = ProbeMode::kIcmpEcho;
  std::uint16_t port = kEchoPort;  // udp_echo only
  // Probes discarded before measuring each size, to settle caches and
  // neighbour resolution; not counted in the report.
  int warmup = 1;

  void Validate() const {
    if (sizes.size() < 2) {
      throw Error(ErrorKind::kInvalidArgument, "need at least 2 probe sizes");
    }
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (sizes[i] < 1 || sizes[i] > kMaxPayload) {
        throw Error(ErrorKind::kInvalidArgument,
                    "probe size " + std::to_string(sizes[i]) + " outside [1, 65507]");
      }
      if (i > 0 && sizes[i] <= sizes[i - 1]) {
        throw Error(ErrorKind::kInvalidArgument, "probe sizes must be strictly increasing");
      }
    }
    if (retries < 1) throw Error(ErrorKind::kInvalidArgument, "retries must be >= 1");
    if (!(pacing >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "pacing must be >= 0");
    if (!(timeout > 0.0)) throw Error(ErrorKind::kInvalidArgument, "timeout must be > 0");
    if (warmup < 0) throw Error(ErrorKind::kInvalidArgument, "warmup must be >= 0");
    if (target.empty()) throw Error(ErrorKind::kInvalidArgument, "no target given");
  }
};

// Header bytes added on the wire. Two-size differences do not depend on it
// because both probes carry the same headers.
inline Bytes WireSize(ProbeMode mode, Bytes payload) {
  return payload + kIpv4HeaderBytes +
         (mode == ProbeMode::kIcmpEcho ? kIcmpHeaderBytes : kUdpHeaderBytes);
}

struct SizeCounts {
  Bytes size = 0;
  Bytes wire_size = 0;
  int sent = 0;
  int received = 0;
  int lost = 0;
};

struct ProbeReport {
  ProbeConfig config;
  std::string resolved_address;
  std::vector<SizeCounts> per_size;
  SampleSet samples;  // round-trip delays of answered probes
  std::size_t stray_replies = 0;
  Warnings warnings;
};

namespace detail {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      Reset();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  ~Socket() { Reset(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

 private:
  void Reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  int fd_ = -1;
};

inline sockaddr_in Resolve(const std::string& host) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(host.c_str(), nullptr, &hints, &res);
  if (rc != 0 || res == nullptr) {
    throw Error(ErrorKind::kResolveFailure,
                "cannot resolve '" + host + "': " + ::gai_strerror(rc));
  }
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof(addr));
  ::freeaddrinfo(res);
  return addr;
}

inline std::uint16_t InternetChecksum(const std::uint8_t* data, std::size_t len) {
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i + 1 < len; i += 2) sum += (data[i] << 8) | data[i + 1];
  if (len & 1) sum += data[len - 1] << 8;
  while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum);
}

using Clock = std::chrono::steady_clock;

inline double WallClockNow() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

inline std::int64_t RealtimeNs() {
  timespec ts{};
  ::clock_gettime(CLOCK_REALTIME, &ts);
  return static_cast<std::int64_t>(ts.tv_sec) * 1'000'000'000 + ts.tv_nsec;
}

// Asks the kernel to stamp every received datagram. Best effort: without it
// receive times fall back to the user-space clock.
inline void EnableKernelTimestamps(int fd) {
  const int on = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_TIMESTAMPNS, &on, sizeof(on));
}

struct Received {
  ssize_t bytes = -1;
  Clock::time_point at;
  std::optional<std::int64_t> kernel_ns;  // CLOCK_REALTIME at socket arrival
};

inline Received ReceiveStamped(int fd, std::vector<std::uint8_t>& buf) {
  iovec iov{buf.data(), buf.size()};
  alignas(cmsghdr) char control[CMSG_SPACE(sizeof(timespec))];
  msghdr msg{};
  msg.msg_iov = &iov;
  msg.msg_iovlen = 1;
  msg.msg_control = control;
  msg.msg_controllen = sizeof(control);
  Received r;
  r.bytes = ::recvmsg(fd, &msg, 0);
  r.at = Clock::now();
  if (r.bytes < 0) return r;
  for (cmsghdr* c = CMSG_FIRSTHDR(&msg); c != nullptr; c = CMSG_NXTHDR(&msg, c)) {
    if (c->cmsg_level == SOL_SOCKET && c->cmsg_type == SCM_TIMESTAMPNS) {
      timespec ts{};
      std::memcpy(&ts, CMSG_DATA(c), sizeof(ts));
      r.kernel_ns = static_cast<std::int64_t>(ts.tv_sec) * 1'000'000'000 + ts.tv_nsec;
    }
  }
  return r;
}

// Payload pattern: 4-byte magic, 4-byte run id, 4-byte probe index, then a
// byte ramp. Truncated to the payload size for tiny probes.
inline std::vector<std::uint8_t> MakePayload(Bytes size, std::uint32_t run_id,
                                             std::uint32_t index) {
  std::vector<std::uint8_t> p(static_cast<std::size_t>(size));
  std::uint8_t head[12] = {'A', 'V', 'B', 'D'};
  for (int i = 0; i < 4; ++i) {
    head[4 + i] = static_cast<std::uint8_t>(run_id >> (24 - 8 * i));
    head[8 + i] = static_cast<std::uint8_t>(index >> (24 - 8 * i));
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = i < sizeof(head) ? head[i] : static_cast<std::uint8_t>(i);
  }
  return p;
}

// One transport: sends a payload and waits for the matching echo.
class Transport {
 public:
  virtual ~Transport() = default;
  // AwaitReply returns the matching reply's receive stamps, or nullopt on
  // timeout. Stray traffic increments `stray`.
  virtual void Send(const std::vector<std::uint8_t>& payload, std::uint16_t seq) = 0;
  virtual std::optional<Received> AwaitReply(const std::vector<std::uint8_t>& payload,
                                             std::uint16_t seq, Clock::time_point deadline,
                                             std::size_t& stray) = 0;
};

// Waits for `fd` to become readable. The first kSpinWindow of every wait
// spins on a zero-timeout poll so scheduler wake-up latency does not leak
// into microsecond-scale round trips; after that it blocks.
inline constexpr auto kSpinWindow = std::chrono::milliseconds(5);

inline int WaitReadable(int fd, Clock::time_point deadline) {
  const auto spin_until = std::min(deadline, Clock::now() + kSpinWindow);
  while (true) {
    pollfd pfd{fd, POLLIN, 0};
    const auto now = Clock::now();
    int timeout_ms = 0;
    if (now >= spin_until) {
      const auto left = std::chrono::duration_cast<std::chrono::microseconds>(deadline - now);
      if (left.count() <= 0) return 0;
      timeout_ms = static_cast<int>((left.count() + 999) / 1000);
    }
    const int rc = ::poll(&pfd, 1, timeout_ms);
    if (rc < 0 && errno == EINTR) continue;
    if (rc != 0 || timeout_ms > 0) return rc;
  }
}

class IcmpTransport final : public Transport {
 public:
  IcmpTransport(const sockaddr_in& peer, std::uint16_t ident) : peer_(peer), ident_(ident) {
    int fd = ::socket(AF_INET, SOCK_RAW, IPPROTO_ICMP);
    if (fd >= 0) {
      raw_ = true;
    } else {
      // Unprivileged ICMP datagram sockets (net.ipv4.ping_group_range).
      fd = ::socket(AF_INET, SOCK_DGRAM, IPPROTO_ICMP);
      if (fd < 0) {
        throw Error(ErrorKind::kPermissionDenied,
                    std::string("cannot open ICMP socket (") + std::strerror(errno) +
                        "); run with CAP_NET_RAW or use --mode udp against an echo service");
      }
    }
    sock_ = Socket(fd);
    EnableKernelTimestamps(fd);
  }

  void Send(const std::vector<std::uint8_t>& payload, std::uint16_t seq) override {
    packet_.assign(kIcmpHeaderBytes + payload.size(), 0);
    packet_[0] = ICMP_ECHO;
    packet_[1] = 0;
    packet_[4] = static_cast<std::uint8_t>(ident_ >> 8);
    packet_[5] = static_cast<std::uint8_t>(ident_);
    packet_[6] = static_cast<std::uint8_t>(seq >> 8);
    packet_[7] = static_cast<std::uint8_t>(seq);
    std::copy(payload.begin(), payload.end(), packet_.begin() + kIcmpHeaderBytes);
    const std::uint16_t sum = InternetChecksum(packet_.data(), packet_.size());
    packet_[2] = static_cast<std::uint8_t>(sum >> 8);
    packet_[3] = static_cast<std::uint8_t>(sum);
    const auto n = ::sendto(sock_.fd(), packet_.data(), packet_.size(), 0,
                            reinterpret_cast<const sockaddr*>(&peer_), sizeof(peer_));
    if (n < 0) throw Error(ErrorKind::kIo, std::string("sendto: ") + std::strerror(errno));
  }

  std::optional<Received> AwaitReply(const std::vector<std::uint8_t>& payload, std::uint16_t seq,
                                     Clock::time_point deadline, std::size_t& stray) override {
    buf_.resize(static_cast<std::size_t>(kMaxPayload) + 128);
    while (true) {
      if (WaitReadable(sock_.fd(), deadline) <= 0) return std::nullopt;
      const Received got = ReceiveStamped(sock_.fd(), buf_);
      const auto n = got.bytes;
      if (n < 0) continue;
      std::size_t off = 0;
      if (raw_) {
        if (n < 20) continue;
        off = static_cast<std::size_t>(buf_[0] & 0x0f) * 4;
      }
      if (static_cast<std::size_t>(n) < off + kIcmpHeaderBytes) continue;
      const std::uint8_t* icmp = buf_.data() + off;
      const std::size_t icmp_len = static_cast<std::size_t>(n) - off;
      const std::uint8_t type = icmp[0];
      if (type == ICMP_ECHO) continue;  // our own request looped back on raw sockets
      if (type == ICMP_DEST_UNREACH || type == ICMP_TIME_EXCEEDED) {
        if (QuotesOurProbe(icmp, icmp_len, seq)) {
          throw Error(ErrorKind::kUnreachable,
                      "ICMP " + std::string(type == ICMP_DEST_UNREACH ? "destination unreachable"
                                                                      : "time exceeded") +
                          " (code " + std::to_string(icmp[1]) + ")");
        }
        ++stray;
        continue;
      }
      const std::uint16_t rid = static_cast<std::uint16_t>((icmp[4] << 8) | icmp[5]);
      const std::uint16_t rseq = static_cast<std::uint16_t>((icmp[6] << 8) | icmp[7]);
      const bool id_ok = !raw_ || rid == ident_;  // the kernel rewrites ids on datagram sockets
      if (type == ICMP_ECHOREPLY && id_ok && rseq == seq &&
          icmp_len - kIcmpHeaderBytes == payload.size() &&
          std::equal(payload.begin(), payload.end(), icmp + kIcmpHeaderBytes)) {
        return got;
      }
      ++stray;
    }
  }

 private:
  bool QuotesOurProbe(const std::uint8_t* icmp, std::size_t len, std::uint16_t seq) const {
    // Error body: original IP header followed by the first 8 bytes of our ICMP header.
    if (len < kIcmpHeaderBytes + 20) return false;
    const std::uint8_t* ip = icmp + kIcmpHeaderBytes;
    const std::size_t ihl = static_cast<std::size_t>(ip[0] & 0x0f) * 4;
    if (len < kIcmpHeaderBytes + ihl + 8) return false;
    const std::uint8_t* orig = ip + ihl;
    const std::uint16_t oseq = static_cast<std::uint16_t>((orig[6] << 8) | orig[7]);
    const std::uint16_t oid = static_cast<std::uint16_t>((orig[4] << 8) | orig[5]);
    return orig[0] == ICMP_ECHO && oseq == seq && (!raw_ || oid == ident_);
  }

  sockaddr_in peer_;
  std::uint16_t ident_;
  bool raw_ = false;
  Socket sock_;
  std::vector<std::uint8_t> packet_;
  std::vector<std::uint8_t> buf_;
};

class UdpTransport final : public Transport {
 public:
  explicit UdpTransport(sockaddr_in peer) {
    sock_ = Socket(::socket(AF_INET, SOCK_DGRAM, 0));
    if (!sock_.valid()) throw Error(ErrorKind::kIo, std::string("socket: ") + std::strerror(errno));
    if (::connect(sock_.fd(), reinterpret_cast<const sockaddr*>(&peer), sizeof(peer)) < 0) {
      throw Error(ErrorKind::kIo, std::string("connect: ") + std::strerror(errno));
    }
    EnableKernelTimestamps(sock_.fd());
  }

  void Send(const std::vector<std::uint8_t>& payload, std::uint16_t) override {
    if (::send(sock_.fd(), payload.data(), payload.size(), 0) < 0) {
      if (errno == ECONNREFUSED) ThrowRefused();
      throw Error(ErrorKind::kIo, std::string("send: ") + std::strerror(errno));
    }
  }

  std::optional<Received> AwaitReply(const std::vector<std::uint8_t>& payload, std::uint16_t,
                                     Clock::time_point deadline, std::size_t& stray) override {
    buf_.resize(static_cast<std::size_t>(kMaxPayload) + 1);
    while (true) {
      if (WaitReadable(sock_.fd(), deadline) <= 0) return std::nullopt;
      const Received got = ReceiveStamped(sock_.fd(), buf_);
      const auto n = got.bytes;
      if (n < 0) {
        if (errno == ECONNREFUSED) ThrowRefused();
        continue;
      }
      if (static_cast<std::size_t>(n) == payload.size() &&
          std::equal(payload.begin(), payload.end(), buf_.begin())) {
        return got;
      }
      ++stray;
    }
  }

 private:
  [[noreturn]] static void ThrowRefused() {
    throw Error(ErrorKind::kUnreachable, "ICMP port unreachable: no UDP echo service at target");
  }

  Socket sock_;
  std::vector<std::uint8_t> buf_;
};

}  // namespace detail

// Sends `retries` paced echo probes per size, smallest size first, one in
// flight at a time. A round trip runs from a clock read just before sending
// to the reply's arrival, read from the monotonic clock or, for replies that
// outlast the spin window, from the kernel's arrival stamp; lost probes are
// counted, never turned into delays.
inline ProbeReport RunProbe(const ProbeConfig& config) {
  config.Validate();
  ProbeReport report;
  report.config = config;
  const sockaddr_in peer_base = detail::Resolve(config.target);
  char text[INET_ADDRSTRLEN] = {};
  ::inet_ntop(AF_INET, &peer_base.sin_addr, text, sizeof(text));
  report.resolved_address = text;
  report.samples.source = "probe:" + config.target;

  std::random_device rd;
  const std::uint32_t run_id = (static_cast<std::uint32_t>(rd()) << 1) ^ static_cast<std::uint32_t>(::getpid());
  std::unique_ptr<detail::Transport> transport;
  if (config.mode == ProbeMode::kIcmpEcho) {
    transport = std::make_unique<detail::IcmpTransport>(peer_base,
                                                        static_cast<std::uint16_t>(run_id));
  } else {
    sockaddr_in peer = peer_base;
    peer.sin_port = htons(config.port);
    transport = std::make_unique<detail::UdpTransport>(peer);
  }

  const auto timeout = std::chrono::duration_cast<detail::Clock::duration>(
      std::chrono::duration<double>(config.timeout));
  const auto pacing = std::chrono::duration<double>(config.pacing);
  std::uint32_t index = 0;
  std::uint16_t wire_seq = static_cast<std::uint16_t>(run_id >> 16);
  bool first = true;

  // Returns the RTT, or nullopt if the probe timed out.
  auto one_probe = [&](Bytes size) -> std::optional<Seconds> {
    if (!first) std::this_thread::sleep_for(pacing);
    first = false;
    const auto payload = detail::MakePayload(size, run_id, index++);
    const std::uint16_t seq = ++wire_seq;
    const auto sent = detail::Clock::now();
    const std::int64_t sent_ns = detail::RealtimeNs();
    transport->Send(payload, seq);
    const auto got = transport->AwaitReply(payload, seq, sent + timeout, report.stray_replies);
    if (!got) return std::nullopt;
    const Seconds user_rtt = std::chrono::duration<double>(got->at - sent).count();
    // Replies caught while spinning are timed best by the monotonic clock.
    // Later ones waited in a blocking poll, whose wake-up latency the kernel
    // arrival stamp leaves out; that stamp reads the wall clock, so it is
    // only trusted when it agrees with the monotonic measurement.
    if (got->kernel_ns && user_rtt > std::chrono::duration<double>(detail::kSpinWindow).count()) {
      const Seconds kernel_rtt = static_cast<double>(*got->kernel_ns - sent_ns) * 1e-9;
      if (kernel_rtt > 0.0 && kernel_rtt <= user_rtt + 1e-3) return kernel_rtt;
    }
    return user_rtt;
  };

  std::uint64_t sample_seq = 0;
  for (Bytes size : config.sizes) {
    SizeCounts counts;
    counts.size = size;
    counts.wire_size = WireSize(config.mode, size);
    for (int w = 0; w < config.warmup; ++w) one_probe(size);
    for (int r = 0; r < config.retries; ++r) {
      const double sent_at = detail::WallClockNow();
      ++counts.sent;
      if (const auto rtt = one_probe(size)) {
        ++counts.received;
        report.samples.samples.push_back(
            {size, *rtt, Direction::kRoundTrip, sample_seq, sent_at});
      } else {
        ++counts.lost;
      }
      ++sample_seq;
    }
    if (counts.received == 0) {
      report.warnings.push_back("AllLost: every probe of size " + std::to_string(size) +
                                " B was lost; size excluded");
    } else if (counts.lost > 0) {
      report.warnings.push_back(std::to_string(counts.lost) + " of " +
                                std::to_string(counts.sent) + " probes of size " +
                                std::to_string(size) + " B lost");
    }
    report.per_size.push_back(counts);
  }
  if (report.stray_replies > 0) {
    report.warnings.push_back(std::to_string(report.stray_replies) +
                              " stray or stale replies discarded");
  }
  return report;
}

struct ProbeResult {
  ProbeReport report;
  std::vector<SizeDelayStats> stats;
  PathEstimate estimate;
};

inline constexpr std::string_view kRoundTripCaveat =
    "estimates come from round-trip times and are reported for the outgoing channel; "
    "the reverse path is not separated out";

// Runs the probe, then aggregates per size and estimates the path.
inline ProbeResult EstimateFromReport(ProbeReport report, const EstimateOptions& options = {}) {
  ProbeResult result;
  int sizes_with_data = 0;
  for (const auto& c : report.per_size) sizes_with_data += c.received > 0 ? 1 : 0;
  if (sizes_with_data < 2) {
    throw Error(ErrorKind::kInsufficientData,
                std::to_string(sizes_with_data) + " probe size(s) answered, need 2");
  }
  result.stats = Aggregate(report.samples, &report.warnings);
  result.estimate = EstimatePath(result.stats, options);
  result.estimate.warnings.insert(result.estimate.warnings.begin(), std::string(kRoundTripCaveat));
  result.report = std::move(report);
  return result;
}

inline ProbeResult ProbeAndEstimate(const ProbeConfig& config, const EstimateOptions& options = {}) {
  return EstimateFromReport(RunProbe(config), options);
}

}  // namespace avband::probe
