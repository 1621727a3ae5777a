// Reliable, ordered, full-duplex inter-monitor messaging: the frame codec,
// message types, and two interchangeable transports (an in-memory pair and
// TCP). Two logical channel classes (sync and error) are multiplexed over a
// single connection; the error class carries only ABORT and may overtake
// sync traffic, never the other way around within a class.

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include "nvx/bytes.hpp"

namespace nvx {

inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr char kFrameMagic[4] = {'N', 'V', 'X', 'M'};
inline constexpr std::size_t kFrameHeaderSize = 20;

enum class MsgType : std::uint8_t {
  HELLO = 1,
  STATE = 2,
  VERDICT = 3,
  RESULT = 4,
  ABORT = 5,
  BYE = 6,
};

inline std::string_view msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::HELLO: return "HELLO";
    case MsgType::STATE: return "STATE";
    case MsgType::VERDICT: return "VERDICT";
    case MsgType::RESULT: return "RESULT";
    case MsgType::ABORT: return "ABORT";
    case MsgType::BYE: return "BYE";
  }
  return "?";
}

enum class ChannelClass : std::uint8_t { Sync = 0, Error = 1 };

struct WireMessage {
  MsgType type = MsgType::STATE;
  ChannelClass channel = ChannelClass::Sync;
  std::uint64_t seq = 0;
  Bytes payload;

  bool operator==(const WireMessage& other) const {
    return type == other.type && channel == other.channel && seq == other.seq &&
           payload == other.payload;
  }
};

// ABORT is the only message allowed on the error class, and never appears on
// the sync class.
inline bool message_class_valid(const WireMessage& m) {
  return (m.channel == ChannelClass::Error) == (m.type == MsgType::ABORT);
}

// --- errors ----------------------------------------------------------------

struct CodecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagicError : CodecError {
  BadMagicError() : CodecError("frame does not start with NVXM") {}
};
struct BadVersionError : CodecError {
  explicit BadVersionError(int got)
      : CodecError("unsupported frame version " + std::to_string(got)) {}
};
struct TruncatedError : CodecError {
  TruncatedError() : CodecError("frame truncated") {}
};

struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PeerDisconnectedError : TransportError {
  PeerDisconnectedError() : TransportError("peer disconnected") {}
  explicit PeerDisconnectedError(const std::string& what) : TransportError(what) {}
};
struct VersionMismatchError : TransportError {
  VersionMismatchError(int ours, int theirs)
      : TransportError("protocol version mismatch: ours " +
                       std::to_string(ours) + ", peer " + std::to_string(theirs)) {}
};
struct ProtocolViolationError : TransportError {
  using TransportError::TransportError;
};
struct UnsupportedTransportError : TransportError {
  explicit UnsupportedTransportError(const std::string& name)
      : TransportError(name + " transport is not implemented") {}
};

// --- frame codec ------------------------------------------------------------
//
// magic "NVXM" | version u8 | msg_type u8 | channel u8 | reserved u8 |
// seq u64le | payload_len u32le | payload
//
inline Bytes encode_frame(const WireMessage& m) {
  if (m.payload.size() >= 0xffffffffull)
    throw CodecError("payload too large to frame");
  Bytes out;
  out.reserve(kFrameHeaderSize + m.payload.size());
  out.insert(out.end(), kFrameMagic, kFrameMagic + 4);
  put_u8(out, kProtocolVersion);
  put_u8(out, static_cast<std::uint8_t>(m.type));
  put_u8(out, static_cast<std::uint8_t>(m.channel));
  put_u8(out, 0);
  put_u64le(out, m.seq);
  put_u32le(out, static_cast<std::uint32_t>(m.payload.size()));
  out.insert(out.end(), m.payload.begin(), m.payload.end());
  return out;
}

struct DecodedFrame {
  WireMessage message;
  std::size_t consumed = 0;
};

// Decodes exactly one frame starting at `offset` and reports the bytes
// consumed. Throws TruncatedError when the buffer holds less than a frame.
inline DecodedFrame decode_frame(const Bytes& data, std::size_t offset = 0) {
  if (data.size() - offset < kFrameHeaderSize) throw TruncatedError{};
  if (!std::equal(kFrameMagic, kFrameMagic + 4, data.begin() + offset))
    throw BadMagicError{};
  ByteReader in{data};
  in.pos = offset + 4;
  std::uint8_t version = in.u8();
  if (version != kProtocolVersion) throw BadVersionError{version};
  DecodedFrame out;
  std::uint8_t type = in.u8();
  if (type < static_cast<std::uint8_t>(MsgType::HELLO) ||
      type > static_cast<std::uint8_t>(MsgType::BYE))
    throw CodecError("unknown message type " + std::to_string(type));
  out.message.type = static_cast<MsgType>(type);
  std::uint8_t cls = in.u8();
  if (cls > 1) throw CodecError("unknown channel class");
  out.message.channel = static_cast<ChannelClass>(cls);
  in.u8();  // reserved
  out.message.seq = in.u64le();
  std::uint32_t len = in.u32le();
  if (data.size() - offset < kFrameHeaderSize + len) throw TruncatedError{};
  out.message.payload = in.raw(len);
  out.consumed = kFrameHeaderSize + len;
  return out;
}

// --- link layer ------------------------------------------------------------

// A reliable ordered duplex message pipe; the transport contract (no loss,
// no duplication, FIFO) is provided by the backing medium, so frames carry
// no checksums.
class Link {
 public:
  virtual ~Link() = default;
  virtual void send(const WireMessage& m) = 0;
  // nullopt on timeout; throws PeerDisconnectedError once the peer is gone
  // and all queued data has been drained.
  virtual std::optional<WireMessage> recv(std::chrono::milliseconds timeout) = 0;
  virtual void close() = 0;
};

namespace detail {

struct MemPipe {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<WireMessage> queue;
  bool closed = false;
};

}  // namespace detail

class MemLink final : public Link {
 public:
  MemLink(std::shared_ptr<detail::MemPipe> in, std::shared_ptr<detail::MemPipe> out)
      : in_(std::move(in)), out_(std::move(out)) {}

  ~MemLink() override { close(); }

  void send(const WireMessage& m) override {
    std::lock_guard lock(out_->mu);
    if (out_->closed) throw PeerDisconnectedError{};
    out_->queue.push_back(m);
    out_->cv.notify_all();
  }

  std::optional<WireMessage> recv(std::chrono::milliseconds timeout) override {
    std::unique_lock lock(in_->mu);
    if (!in_->cv.wait_for(lock, timeout,
                          [&] { return !in_->queue.empty() || in_->closed; }))
      return std::nullopt;
    if (in_->queue.empty()) throw PeerDisconnectedError{};
    WireMessage m = std::move(in_->queue.front());
    in_->queue.pop_front();
    return m;
  }

  void close() override {
    for (auto& pipe : {in_, out_}) {
      std::lock_guard lock(pipe->mu);
      pipe->closed = true;
      pipe->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<detail::MemPipe> in_, out_;
};

inline std::pair<std::unique_ptr<Link>, std::unique_ptr<Link>> make_memory_link_pair() {
  auto a = std::make_shared<detail::MemPipe>();
  auto b = std::make_shared<detail::MemPipe>();
  return {std::make_unique<MemLink>(a, b), std::make_unique<MemLink>(b, a)};
}

// --- TCP link ----------------------------------------------------------------

class TcpLink final : public Link {
 public:
  explicit TcpLink(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    // Monitors may queue a long run of asynchronous STATE messages before
    // the peer drains them; generous buffers keep the window open so the
    // sender never stalls on flow control mid-burst.
    int bufsize = 1 << 20;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &bufsize, sizeof bufsize);
    ::setsockopt(fd_, SOL_SOCKET, SO_SNDBUF, &bufsize, sizeof bufsize);
  }

  ~TcpLink() override { close(); }

  void send(const WireMessage& m) override {
    Bytes frame = encode_frame(m);
    std::size_t sent = 0;
    while (sent < frame.size()) {
      ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
      if (n <= 0) throw PeerDisconnectedError{"send failed"};
      sent += static_cast<std::size_t>(n);
    }
  }

  std::optional<WireMessage> recv(std::chrono::milliseconds timeout) override {
    auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
      if (auto m = try_extract()) return m;
      auto now = std::chrono::steady_clock::now();
      std::int64_t remain_ms =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now)
              .count();
      if (remain_ms < 0) remain_ms = 0;
      struct pollfd pfd{fd_, POLLIN, 0};
      int rc = ::poll(&pfd, 1,
                      static_cast<int>(std::min<std::int64_t>(remain_ms, 50)));
      if (rc < 0) throw TransportError("poll failed");
      if (rc == 0) {
        if (std::chrono::steady_clock::now() >= deadline) return std::nullopt;
        continue;
      }
      std::uint8_t chunk[4096];
      ssize_t n = ::read(fd_, chunk, sizeof chunk);
      if (n == 0) {
        if (auto m = try_extract()) return m;
        throw PeerDisconnectedError{};
      }
      if (n < 0) throw PeerDisconnectedError{"read failed"};
      buffer_.insert(buffer_.end(), chunk, chunk + n);
    }
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  std::optional<WireMessage> try_extract() {
    try {
      DecodedFrame frame = decode_frame(buffer_);
      buffer_.erase(buffer_.begin(),
                    buffer_.begin() + static_cast<std::ptrdiff_t>(frame.consumed));
      return frame.message;
    } catch (const TruncatedError&) {
      return std::nullopt;
    }
  }

  int fd_ = -1;
  Bytes buffer_;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

class TcpListener {
 public:
  explicit TcpListener(const Endpoint& ep) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw TransportError("cannot create listening socket");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port);
    if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1)
      throw TransportError("bad listen address " + ep.host);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
      throw TransportError("cannot bind " + ep.host + ":" + std::to_string(ep.port));
    if (::listen(fd_, 16) != 0) throw TransportError("listen failed");
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }

  std::uint16_t port() const { return port_; }

  std::unique_ptr<Link> accept(std::chrono::milliseconds timeout) {
    struct pollfd pfd{fd_, POLLIN, 0};
    int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (rc <= 0) throw TransportError("timed out waiting for peer connection");
    int client = ::accept(fd_, nullptr, nullptr);
    if (client < 0) throw TransportError("accept failed");
    return std::make_unique<TcpLink>(client);
  }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

inline std::unique_ptr<Link> tcp_connect(const Endpoint& ep,
                                         std::chrono::milliseconds timeout =
                                             std::chrono::milliseconds(5000)) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw TransportError("cannot create socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port);
    if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd);
      throw TransportError("bad address " + ep.host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0)
      return std::make_unique<TcpLink>(fd);
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline)
      throw TransportError("cannot connect to " + ep.host + ":" +
                           std::to_string(ep.port));
    struct timespec ts{0, 20 * 1000 * 1000};
    ::nanosleep(&ts, nullptr);
  }
}

// --- channel ----------------------------------------------------------

enum class Role : std::uint8_t { Leader, Follower };
enum class RecvMode : std::uint8_t { Blocking, Poll };

struct HelloInfo {
  std::uint8_t version = 0;
  std::string peer_name;
  Bytes platform_digest;
};

struct ChannelCounters {
  std::uint64_t sent_state = 0, sent_verdict = 0, sent_result = 0,
                sent_abort = 0, sent_hello = 0, sent_bye = 0;
  std::uint64_t recv_state = 0, recv_verdict = 0, recv_result = 0,
                recv_abort = 0, recv_hello = 0, recv_bye = 0;

  void count_sent(MsgType t) { bump(t, true); }
  void count_received(MsgType t) { bump(t, false); }
  std::uint64_t total_sent() const {
    return sent_state + sent_verdict + sent_result + sent_abort + sent_hello +
           sent_bye;
  }

 private:
  void bump(MsgType t, bool sent) {
    auto pick = [&]() -> std::uint64_t& {
      switch (t) {
        case MsgType::STATE: return sent ? sent_state : recv_state;
        case MsgType::VERDICT: return sent ? sent_verdict : recv_verdict;
        case MsgType::RESULT: return sent ? sent_result : recv_result;
        case MsgType::ABORT: return sent ? sent_abort : recv_abort;
        case MsgType::HELLO: return sent ? sent_hello : recv_hello;
        case MsgType::BYE: return sent ? sent_bye : recv_bye;
      }
      return sent ? sent_bye : recv_bye;
    };
    ++pick();
  }
};

// One monitor's end of an inter-monitor connection: assigns per-class
// sequence numbers on send, demultiplexes per-class FIFO queues on receive,
// and validates the ABORT/error-class pairing in both directions.
class Channel {
 public:
  explicit Channel(std::unique_ptr<Link> link,
                   std::chrono::milliseconds default_timeout =
                       std::chrono::milliseconds(10000))
      : link_(std::move(link)), timeout_(default_timeout) {}

  // HELLO payload: protocol version byte, sender name, platform digest.
  // Must complete before any other traffic flows.
  HelloInfo handshake(const std::string& own_name, const Bytes& platform_digest,
                      std::uint8_t version = kProtocolVersion) {
    Bytes payload;
    put_u8(payload, version);
    put_lp_string(payload, own_name);
    put_lp_bytes(payload, platform_digest);
    send(MsgType::HELLO, ChannelClass::Sync, payload);
    auto peer = recv(ChannelClass::Sync, RecvMode::Blocking);
    if (!peer || peer->type != MsgType::HELLO)
      throw ProtocolViolationError("expected HELLO");
    ByteReader in{peer->payload};
    HelloInfo info;
    info.version = in.u8();
    info.peer_name = in.lp_string();
    info.platform_digest = in.lp_bytes();
    if (info.version != kProtocolVersion)
      throw VersionMismatchError(kProtocolVersion, info.version);
    peer_ = info;
    return info;
  }

  std::uint64_t send(MsgType type, ChannelClass cls, Bytes payload) {
    WireMessage m;
    m.type = type;
    m.channel = cls;
    m.payload = std::move(payload);
    if (!message_class_valid(m))
      throw ProtocolViolationError(
          "only ABORT may use the error channel, and ABORT may use nothing else");
    m.seq = cls == ChannelClass::Sync ? sync_seq_++ : error_seq_++;
    link_->send(m);
    counters_.count_sent(type);
    return m.seq;
  }

  // Per-class FIFO receive. Poll mode never blocks (the error class is polled
  // at every syscall boundary). Messages of the other class observed while
  // draining the link are queued, so error traffic can overtake sync traffic
  // but sync order is never disturbed.
  std::optional<WireMessage> recv(ChannelClass cls, RecvMode mode) {
    return recv(cls, mode, timeout_);
  }

  std::optional<WireMessage> recv(ChannelClass cls, RecvMode mode,
                                  std::chrono::milliseconds timeout) {
    auto& queue = cls == ChannelClass::Sync ? sync_in_ : error_in_;
    auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
      if (!queue.empty()) {
        WireMessage m = std::move(queue.front());
        queue.pop_front();
        return m;
      }
      // The peer may close after its final messages; those stay deliverable.
      // Only an empty queue on a dead link is a disconnect, and polls report
      // it as absence so queued traffic of the other class can still drain.
      if (peer_gone_) {
        if (mode == RecvMode::Poll) return std::nullopt;
        throw PeerDisconnectedError{};
      }
      std::chrono::milliseconds wait(0);
      if (mode == RecvMode::Blocking) {
        auto now = std::chrono::steady_clock::now();
        if (now >= deadline) return std::nullopt;
        wait = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
        wait = std::min(wait, std::chrono::milliseconds(50));
      }
      std::optional<WireMessage> m;
      try {
        m = link_->recv(wait);
      } catch (const PeerDisconnectedError&) {
        peer_gone_ = true;
        continue;
      }
      if (!m) {
        if (mode == RecvMode::Poll) return std::nullopt;
        continue;
      }
      accept_incoming(std::move(*m));
    }
  }

  void send_bye() { send(MsgType::BYE, ChannelClass::Sync, {}); }

  const std::optional<HelloInfo>& peer() const { return peer_; }
  const ChannelCounters& counters() const { return counters_; }
  void close() { link_->close(); }

 private:
  void accept_incoming(WireMessage m) {
    if (!message_class_valid(m))
      throw ProtocolViolationError("peer sent " +
                                   std::string(msg_type_name(m.type)) +
                                   " on the wrong channel class");
    auto& expected =
        m.channel == ChannelClass::Sync ? next_sync_in_ : next_error_in_;
    if (m.seq != expected)
      throw ProtocolViolationError("out-of-order seq " + std::to_string(m.seq) +
                                   ", expected " + std::to_string(expected));
    ++expected;
    counters_.count_received(m.type);
    (m.channel == ChannelClass::Sync ? sync_in_ : error_in_).push_back(std::move(m));
  }

  std::unique_ptr<Link> link_;
  std::chrono::milliseconds timeout_;
  bool peer_gone_ = false;
  std::uint64_t sync_seq_ = 0, error_seq_ = 0;
  std::uint64_t next_sync_in_ = 0, next_error_in_ = 0;
  std::deque<WireMessage> sync_in_, error_in_;
  std::optional<HelloInfo> peer_;
  ChannelCounters counters_;
};

// --- transport selection -----------------------------------------------

enum class TransportKind : std::uint8_t { Mem, Tcp, Enet, Rdma };

inline std::optional<TransportKind> transport_from_name(std::string_view name) {
  if (name == "mem") return TransportKind::Mem;
  if (name == "tcp") return TransportKind::Tcp;
  if (name == "enet") return TransportKind::Enet;
  if (name == "rdma") return TransportKind::Rdma;
  return std::nullopt;
}

inline std::string_view transport_name(TransportKind k) {
  switch (k) {
    case TransportKind::Mem: return "mem";
    case TransportKind::Tcp: return "tcp";
    case TransportKind::Enet: return "enet";
    case TransportKind::Rdma: return "rdma";
  }
  return "?";
}

// Leader side of one leader/follower connection. The leader listens and the
// follower connects; port comes from configuration (0 picks a free port for
// in-process runs).
inline std::unique_ptr<Channel> open_channel(TransportKind kind, Role role,
                                             const Endpoint& endpoint,
                                             std::chrono::milliseconds timeout =
                                                 std::chrono::milliseconds(10000)) {
  switch (kind) {
    case TransportKind::Tcp: {
      if (role == Role::Leader) {
        TcpListener listener(endpoint);
        return std::make_unique<Channel>(listener.accept(timeout), timeout);
      }
      return std::make_unique<Channel>(tcp_connect(endpoint, timeout), timeout);
    }
    case TransportKind::Mem:
      throw TransportError(
          "memory transport endpoints are created pairwise; use "
          "make_memory_channel_pair");
    case TransportKind::Enet:
      throw UnsupportedTransportError("enet");
    case TransportKind::Rdma:
      throw UnsupportedTransportError("rdma");
  }
  throw TransportError("unknown transport");
}

inline std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>>
make_memory_channel_pair(std::chrono::milliseconds timeout =
                             std::chrono::milliseconds(10000)) {
  auto [a, b] = make_memory_link_pair();
  return {std::make_unique<Channel>(std::move(a), timeout),
          std::make_unique<Channel>(std::move(b), timeout)};
}

}  // namespace nvx
