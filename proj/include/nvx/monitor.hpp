// Leader and follower monitor state machines: lockstep and asynchronous
// cross-checking at syscall entry, result replication at exit, skip-and-inject
// for follower I/O, immutable-state caching, and abort handling over the
// error channel.

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nvx/canonical.hpp"
#include "nvx/policy.hpp"
#include "nvx/rccom.hpp"

namespace nvx {

// --- replicated result records -----------------------------------------------

// The canonical result of one executed call, as broadcast in RESULT
// messages: the canonicalized return value plus every output buffer in
// platform-independent form.
struct ResultRecord {
  CanonResult result;

  struct Output {
    int arg_pos = 0;  // 1-based canonical argument position
    bool is_shadow = false;
    std::string struct_name;  // when is_shadow
    Bytes bytes;              // plain output buffers
    CanonValue shadow;        // shadow-struct outputs
  };
  std::vector<Output> outputs;

  // Lifts the replicable parts out of a canonical exit state.
  static ResultRecord from_exit_state(const CanonicalSyscallState& state) {
    ResultRecord rec;
    if (state.result) rec.result = *state.result;
    const SyscallSig& sig = syscall_signature(state.id);
    for (std::size_t i = 0; i < sig.args.size() && i < state.args.size(); ++i) {
      const ArgSpec& spec = sig.args[i];
      if (spec.kind == ArgKind::OutBuf &&
          state.args[i].kind == ValueKind::Buffer) {
        Output out;
        out.arg_pos = static_cast<int>(i) + 1;
        out.bytes = state.args[i].bytes;
        rec.outputs.push_back(std::move(out));
      } else if (spec.kind == ArgKind::OutShadow &&
                 state.args[i].kind == ValueKind::Shadow) {
        Output out;
        out.arg_pos = static_cast<int>(i) + 1;
        out.is_shadow = true;
        out.struct_name = spec.struct_name;
        out.shadow = state.args[i];
        rec.outputs.push_back(std::move(out));
      }
    }
    return rec;
  }
};

inline Bytes encode_result_record(std::uint64_t replication_ordinal,
                                  const ResultRecord& rec) {
  Bytes out;
  put_u64le(out, replication_ordinal);
  detail::serialize_result(out, rec.result);
  put_u32le(out, static_cast<std::uint32_t>(rec.outputs.size()));
  for (const auto& o : rec.outputs) {
    put_u32le(out, static_cast<std::uint32_t>(o.arg_pos));
    put_u8(out, o.is_shadow ? 1 : 0);
    if (o.is_shadow) {
      put_lp_string(out, o.struct_name);
      detail::serialize_value(out, o.shadow);
    } else {
      put_lp_bytes(out, o.bytes);
    }
  }
  return out;
}

struct DecodedResult {
  std::uint64_t replication_ordinal = 0;
  ResultRecord record;
};

inline DecodedResult decode_result_record(const Bytes& payload) {
  ByteReader in{payload};
  DecodedResult out;
  out.replication_ordinal = in.u64le();
  out.record.result = detail::deserialize_result(in);
  std::uint32_t n = in.u32le();
  for (std::uint32_t i = 0; i < n; ++i) {
    ResultRecord::Output o;
    o.arg_pos = static_cast<int>(in.u32le());
    o.is_shadow = in.u8() != 0;
    if (o.is_shadow) {
      o.struct_name = in.lp_string();
      o.shadow = detail::deserialize_value(in);
    } else {
      o.bytes = in.lp_bytes();
    }
    out.record.outputs.push_back(std::move(o));
  }
  return out;
}

// --- verdict / abort payloads ------------------------------------------------

inline Bytes encode_verdict(const Verdict& v) {
  Bytes out;
  put_u8(out, v.match() ? 1 : 0);
  if (!v.match()) {
    put_u8(out, static_cast<std::uint8_t>(v.divergence->reason));
    put_u32le(out, static_cast<std::uint32_t>(v.divergence->arg_pos));
    put_i64le(out, v.divergence->buffer_offset);
    put_lp_string(out, v.divergence->detail);
  }
  return out;
}

inline Verdict decode_verdict(const Bytes& payload) {
  ByteReader in{payload};
  if (in.u8() != 0) return Verdict::matched();
  Divergence d;
  d.reason = static_cast<DivergenceReason>(in.u8());
  d.arg_pos = static_cast<int>(in.u32le());
  d.buffer_offset = in.i64le();
  d.detail = in.lp_string();
  return Verdict::diverged(std::move(d));
}

// Machine-readable incident shipped over the error channel and embedded in
// reports: the divergence, the offending checked-call ordinal, and both
// serialized states.
struct AbortInfo {
  std::string cause = "divergence";  // divergence | channel-loss |
                                     // protocol-error | peer-abort
  Divergence divergence{DivergenceReason::ValueMismatch, 0, -1, ""};
  std::uint64_t ordinal = 0;
  std::string origin;       // monitor that raised it
  Bytes state_leader;       // serialized canonical states, when applicable
  Bytes state_follower;
};

inline Bytes encode_abort(const AbortInfo& a) {
  Bytes out;
  put_lp_string(out, a.cause);
  put_u8(out, static_cast<std::uint8_t>(a.divergence.reason));
  put_u32le(out, static_cast<std::uint32_t>(a.divergence.arg_pos));
  put_i64le(out, a.divergence.buffer_offset);
  put_lp_string(out, a.divergence.detail);
  put_u64le(out, a.ordinal);
  put_lp_string(out, a.origin);
  put_lp_bytes(out, a.state_leader);
  put_lp_bytes(out, a.state_follower);
  return out;
}

inline AbortInfo decode_abort(const Bytes& payload) {
  ByteReader in{payload};
  AbortInfo a;
  a.cause = in.lp_string();
  a.divergence.reason = static_cast<DivergenceReason>(in.u8());
  a.divergence.arg_pos = static_cast<int>(in.u32le());
  a.divergence.buffer_offset = in.i64le();
  a.divergence.detail = in.lp_string();
  a.ordinal = in.u64le();
  a.origin = in.lp_string();
  a.state_leader = in.lp_bytes();
  a.state_follower = in.lp_bytes();
  return a;
}

// Human-readable incident report (structured text).
inline std::string render_incident(const AbortInfo& a) {
  std::string out;
  out += "[incident]\n";
  out += "cause = " + a.cause + "\n";
  out += "reason = " + std::string(divergence_reason_name(a.divergence.reason)) + "\n";
  if (a.divergence.arg_pos > 0)
    out += "arg = " + std::to_string(a.divergence.arg_pos) + "\n";
  if (a.divergence.buffer_offset >= 0)
    out += "offset = " + std::to_string(a.divergence.buffer_offset) + "\n";
  if (!a.divergence.detail.empty()) out += "detail = " + a.divergence.detail + "\n";
  out += "ordinal = " + std::to_string(a.ordinal) + "\n";
  out += "origin = " + a.origin + "\n";
  if (!a.state_leader.empty())
    out += "state.leader =\n" + hex_dump(a.state_leader);
  if (!a.state_follower.empty())
    out += "state.follower =\n" + hex_dump(a.state_follower);
  return out;
}

// --- monitor state ------------------------------------------------------

struct ModeFlags {
  bool pfa_enabled = true;
  bool acc_enabled = true;
};

enum class MonitorStatus : std::uint8_t { Running, Aborted };

struct MonitorState {
  Role role = Role::Follower;
  FdTranslation fdmap;
  std::map<SyscallId, ResultRecord> cache;  // immutable-state results
  ModeFlags mode;
  MonitorStatus status = MonitorStatus::Running;
  std::optional<AbortInfo> abort_info;
};

// What the variant runner should do with the interrupted call.
struct Action {
  enum class Kind : std::uint8_t {
    Proceed,         // execute the call locally
    ProceedAsLocal,  // execute locally under the filesystem bypass
    Skip,            // do not execute; inject the carried result
    AwaitResult,     // do not execute; the leader's result will arrive
    Abort,           // tear down
  };
  Kind kind = Kind::Proceed;
  std::optional<ResultRecord> inject;    // Skip
  std::optional<AbortInfo> abort_info;   // Abort
  // Effective classification, for reporting.
  SensitivityClass sensitivity = SensitivityClass::None;
  ReplicationClass replication = ReplicationClass::LocalExecute;
  bool state_sent = false;
  bool verdict_received = false;

  static Action proceed() { return {}; }
  static Action abort(AbortInfo info) {
    Action a;
    a.kind = Kind::Abort;
    a.abort_info = std::move(info);
    return a;
  }
};

inline char action_code(Action::Kind k) {
  switch (k) {
    case Action::Kind::Proceed: return 'P';
    case Action::Kind::ProceedAsLocal: return 'L';
    case Action::Kind::Skip: return 'S';
    case Action::Kind::AwaitResult: return 'W';
    case Action::Kind::Abort: return 'A';
  }
  return '?';
}

namespace detail {

inline SensitivityClass effective_sensitivity(const ModeFlags& mode,
                                              SensitivityClass sens) {
  // With asynchronous cross-checking disabled, moderately sensitive calls
  // fall back to full lockstep.
  if (!mode.acc_enabled && sens == SensitivityClass::Moderate)
    return SensitivityClass::High;
  return sens;
}

}  // namespace detail

// --- follower ------------------------------------------------------------

class FollowerMonitor {
 public:
  FollowerMonitor(std::string name, Channel* to_leader, const PolicyTable* policy,
                  const StaticFileOracle* statics, ModeFlags mode)
      : name_(std::move(name)), channel_(to_leader), policy_(policy),
        statics_(statics) {
    state_.role = Role::Follower;
    state_.mode = mode;
  }

  MonitorState& state() { return state_; }
  const MonitorState& state() const { return state_; }

  // Invoked at every syscall boundary; transitions to aborted before the
  // variant crosses the boundary if an ABORT is pending on the error class.
  std::optional<Action> poll_abort() {
    if (state_.status == MonitorStatus::Aborted)
      return Action::abort(*state_.abort_info);
    std::optional<WireMessage> m;
    try {
      m = channel_->recv(ChannelClass::Error, RecvMode::Poll);
    } catch (const TransportError& e) {
      return channel_lost(e);
    }
    if (!m) return std::nullopt;
    AbortInfo info = decode_abort(m->payload);
    info.cause = "peer-abort";
    return enter_aborted(std::move(info));
  }

  Action on_entry(const CanonicalSyscallState& s) {
    if (auto aborted = poll_abort()) return *aborted;

    Action action;
    SensitivityClass sens = detail::effective_sensitivity(
        state_.mode, classify_sensitivity(*policy_, s.id, s));
    ReplicationClass repl = classify_replication(*policy_, s.id, s, *statics_,
                                                 state_.mode.pfa_enabled);
    // A LocalExecute that the table alone would not grant comes from the
    // filesystem bypass; the runner reports it distinctly.
    bool pfa_bypass =
        repl == ReplicationClass::LocalExecute &&
        classify_replication(*policy_, s.id, s, *statics_, false) !=
            ReplicationClass::LocalExecute;
    action.sensitivity = sens;
    action.replication = repl;

    // Warm immutable-state cache: cancel the call outright, zero messages.
    if (repl == ReplicationClass::CachedImmutable) {
      auto hit = state_.cache.find(s.id);
      if (hit != state_.cache.end()) {
        action.kind = Action::Kind::Skip;
        action.inject = hit->second;
        return action;
      }
    }

    if (sens != SensitivityClass::None) {
      try {
        channel_->send(MsgType::STATE, ChannelClass::Sync, serialize_state(s));
      } catch (const TransportError& e) {
        return channel_lost(e);
      }
      action.state_sent = true;
    }

    if (sens == SensitivityClass::High) {
      // Lockstep: block until the leader's verdict, watching the error class.
      while (true) {
        if (auto aborted = poll_abort()) return *aborted;
        std::optional<WireMessage> m;
        try {
          m = channel_->recv(ChannelClass::Sync, RecvMode::Blocking,
                             std::chrono::milliseconds(20));
        } catch (const TransportError& e) {
          return channel_lost(e);
        }
        if (!m) {
          if (++wait_slices_ > kMaxWaitSlices) return timed_out();
          continue;
        }
        wait_slices_ = 0;
        if (m->type != MsgType::VERDICT)
          return protocol_error("expected VERDICT, got " +
                                std::string(msg_type_name(m->type)));
        Verdict v = decode_verdict(m->payload);
        action.verdict_received = true;
        if (!v.match()) {
          AbortInfo info;
          info.cause = "divergence";
          info.divergence = *v.divergence;
          info.origin = name_;
          return *enter_aborted(std::move(info));
        }
        break;
      }
    }
    // Moderate with asynchronous checking: state already sent, resume
    // immediately without waiting for a reply.

    finish_entry_action(action, repl, pfa_bypass);
    return action;
  }

  // Delivers one RESULT message; validates it matches the awaited
  // replication ordinal.
  std::optional<ResultRecord> on_result(const WireMessage& m, SyscallId id,
                                        ReplicationClass repl) {
    if (m.type != MsgType::RESULT) {
      protocol_error("expected RESULT, got " +
                     std::string(msg_type_name(m.type)));
      return std::nullopt;
    }
    DecodedResult decoded = decode_result_record(m.payload);
    if (decoded.replication_ordinal != await_ordinal_) {
      protocol_error("RESULT for replication ordinal " +
                     std::to_string(decoded.replication_ordinal) + ", awaiting " +
                     std::to_string(await_ordinal_));
      return std::nullopt;
    }
    ++await_ordinal_;
    if (repl == ReplicationClass::CachedImmutable)
      state_.cache[id] = decoded.record;
    return decoded.record;
  }

  // Blocks until the leader's result for the current call arrives.
  std::optional<ResultRecord> await_result(SyscallId id, ReplicationClass repl) {
    while (true) {
      if (poll_abort()) return std::nullopt;
      std::optional<WireMessage> m;
      try {
        m = channel_->recv(ChannelClass::Sync, RecvMode::Blocking,
                           std::chrono::milliseconds(20));
      } catch (const TransportError& e) {
        channel_lost(e);
        return std::nullopt;
      }
      if (!m) {
        if (++wait_slices_ > kMaxWaitSlices) {
          timed_out();
          return std::nullopt;
        }
        continue;
      }
      wait_slices_ = 0;
      return on_result(*m, id, repl);
    }
  }

  // Canonicalization failed locally; notify the leader over the error channel
  // and stop.
  Action local_failure(const Divergence& d) {
    AbortInfo info;
    info.cause = "divergence";
    info.divergence = d;
    info.origin = name_;
    try {
      channel_->send(MsgType::ABORT, ChannelClass::Error, encode_abort(info));
    } catch (const TransportError&) {
    }
    return *enter_aborted(std::move(info));
  }

  void finish() {
    try {
      channel_->send_bye();
    } catch (const TransportError&) {
    }
  }

  std::uint64_t awaited_results() const { return await_ordinal_; }

 private:
  static constexpr int kMaxWaitSlices = 500;  // x20ms = 10s

  void finish_entry_action(Action& action, ReplicationClass repl,
                           bool pfa_bypass) {
    switch (repl) {
      case ReplicationClass::ReplicateIO:
      case ReplicationClass::ReplicateMutableState:
      case ReplicationClass::CachedImmutable:  // cold cache: leader's result fills it
        action.kind = Action::Kind::AwaitResult;
        break;
      case ReplicationClass::LocalExecute:
        action.kind =
            pfa_bypass ? Action::Kind::ProceedAsLocal : Action::Kind::Proceed;
        break;
    }
  }

  Action channel_lost(const TransportError& e) {
    AbortInfo info;
    info.cause = "channel-loss";
    info.divergence.detail = e.what();
    info.origin = name_;
    return *enter_aborted(std::move(info));
  }

  Action timed_out() {
    AbortInfo info;
    info.cause = "channel-loss";
    info.divergence.detail = "timed out waiting for leader";
    info.origin = name_;
    return *enter_aborted(std::move(info));
  }

  Action protocol_error(const std::string& what) {
    AbortInfo info;
    info.cause = "protocol-error";
    info.divergence.detail = what;
    info.origin = name_;
    try {
      channel_->send(MsgType::ABORT, ChannelClass::Error, encode_abort(info));
    } catch (const TransportError&) {
    }
    return *enter_aborted(std::move(info));
  }

  std::optional<Action> enter_aborted(AbortInfo info) {
    state_.status = MonitorStatus::Aborted;
    state_.abort_info = std::move(info);
    return Action::abort(*state_.abort_info);
  }

  std::string name_;
  Channel* channel_;
  const PolicyTable* policy_;
  const StaticFileOracle* statics_;
  MonitorState state_;
  std::uint64_t await_ordinal_ = 0;
  int wait_slices_ = 0;
};

// --- leader ------------------------------------------------------------------

class LeaderMonitor {
 public:
  struct Peer {
    Channel* channel = nullptr;
    std::string name;
    std::size_t cursor = 0;  // next checked ordinal to compare for this peer
    std::deque<CanonicalSyscallState> pending;  // arrived ahead of our execution
    bool said_bye = false;
  };

  LeaderMonitor(std::string name, const PolicyTable* policy,
                const StaticFileOracle* statics, ModeFlags mode)
      : name_(std::move(name)), policy_(policy), statics_(statics) {
    state_.role = Role::Leader;
    state_.mode = mode;
  }

  void add_follower(std::string follower_name, Channel* channel) {
    peers_.push_back(Peer{channel, std::move(follower_name)});
  }

  MonitorState& state() { return state_; }
  const MonitorState& state() const { return state_; }
  const std::optional<AbortInfo>& incident() const { return state_.abort_info; }

  // Checked states not yet confirmed against every follower.
  std::size_t pending_async() const {
    std::size_t min_cursor = checked_.size();
    for (const auto& p : peers_) min_cursor = std::min(min_cursor, p.cursor);
    return checked_.size() - min_cursor;
  }

  std::optional<Action> poll_abort() {
    if (state_.status == MonitorStatus::Aborted)
      return Action::abort(*state_.abort_info);
    for (auto& peer : peers_) {
      std::optional<WireMessage> m;
      try {
        m = peer.channel->recv(ChannelClass::Error, RecvMode::Poll);
      } catch (const TransportError& e) {
        if (channel_lost(peer, e)) return Action::abort(*state_.abort_info);
        continue;
      }
      if (m) {
        AbortInfo info = decode_abort(m->payload);
        info.cause = "peer-abort";
        abort_all(info);
        return Action::abort(info);
      }
    }
    return std::nullopt;
  }

  Action on_entry(const CanonicalSyscallState& s) {
    if (auto aborted = poll_abort()) return *aborted;

    Action action;
    SensitivityClass sens = detail::effective_sensitivity(
        state_.mode, classify_sensitivity(*policy_, s.id, s));
    ReplicationClass repl = classify_replication(*policy_, s.id, s, *statics_,
                                                 state_.mode.pfa_enabled);
    action.sensitivity = sens;
    action.replication = repl;

    if (repl == ReplicationClass::CachedImmutable) {
      auto hit = state_.cache.find(s.id);
      if (hit != state_.cache.end()) {
        action.kind = Action::Kind::Skip;
        action.inject = hit->second;
        return action;
      }
    }

    if (sens != SensitivityClass::None) {
      std::size_t ordinal = checked_.size();
      checked_.push_back({s, sens});
      for (auto& peer : peers_) {
        if (!drain_pending(peer)) return Action::abort(*state_.abort_info);
      }
      if (sens == SensitivityClass::High) {
        // Lockstep: wait for every follower to reach this state.
        for (auto& peer : peers_) {
          if (!await_cursor(peer, ordinal + 1))
            return Action::abort(*state_.abort_info);
        }
      } else {
        // Asynchronous checking: compare whatever has already arrived and
        // resume; stragglers are compared when they show up.
        for (auto& peer : peers_) {
          if (!drain_available(peer)) return Action::abort(*state_.abort_info);
        }
      }
    }

    // The leader executes the real call; on a match it always proceeds.
    action.kind = Action::Kind::Proceed;
    return action;
  }

  // Releases followers blocked on the current lockstep call. Invoked after
  // the leader's own execution so no follower resumes before the real
  // effect.
  void flush_verdicts() {
    if (state_.status == MonitorStatus::Aborted) {
      pending_verdicts_.clear();
      return;
    }
    for (Peer* peer : pending_verdicts_) {
      try {
        peer->channel->send(MsgType::VERDICT, ChannelClass::Sync,
                            encode_verdict(Verdict::matched()));
      } catch (const TransportError& e) {
        channel_lost(*peer, e);
        break;
      }
    }
    pending_verdicts_.clear();
  }

  // Broadcasts the canonical result of a replicated call. Returns the number
  // of RESULT messages sent.
  std::size_t on_exit(const CanonicalSyscallState& exit_state,
                      ReplicationClass repl) {
    flush_verdicts();
    if (state_.status == MonitorStatus::Aborted) return 0;
    bool replicate = repl == ReplicationClass::ReplicateIO ||
                     repl == ReplicationClass::ReplicateMutableState ||
                     (repl == ReplicationClass::CachedImmutable &&
                      state_.cache.find(exit_state.id) == state_.cache.end());
    if (!replicate) return 0;
    ResultRecord record = ResultRecord::from_exit_state(exit_state);
    if (repl == ReplicationClass::CachedImmutable)
      state_.cache[exit_state.id] = record;
    Bytes payload = encode_result_record(replication_ordinal_, record);
    ++replication_ordinal_;
    std::size_t sent = 0;
    for (auto& peer : peers_) {
      try {
        peer.channel->send(MsgType::RESULT, ChannelClass::Sync, payload);
        ++sent;
      } catch (const TransportError& e) {
        channel_lost(peer, e);
        return sent;
      }
    }
    return sent;
  }

  // Drains trailing follower traffic and says goodbye. The final checked
  // call of a program is highly sensitive, so in benign runs every cursor is
  // already caught up by the time this runs.
  void finish() {
    finishing_ = true;
    for (auto& peer : peers_) {
      if (state_.status == MonitorStatus::Aborted) break;
      drain_available(peer);
    }
    for (auto& peer : peers_) {
      try {
        peer.channel->send_bye();
      } catch (const TransportError&) {
      }
    }
  }

  void abort_all(const AbortInfo& info) {
    if (state_.status == MonitorStatus::Aborted) return;
    state_.status = MonitorStatus::Aborted;
    state_.abort_info = info;
    Bytes payload = encode_abort(info);
    for (auto& peer : peers_) {
      try {
        peer.channel->send(MsgType::ABORT, ChannelClass::Error, payload);
      } catch (const TransportError&) {
      }
    }
  }

 private:
  struct Checked {
    CanonicalSyscallState state;
    SensitivityClass sensitivity;
  };

  // Compares one follower state against the checked log at the peer cursor.
  // Matching lockstep verdicts are queued, not sent: followers may only
  // resume once the leader's own kernel effect has happened, so the
  // VERDICT goes out at the leader's exit boundary (flush_verdicts).
  bool compare_next(Peer& peer, const CanonicalSyscallState& theirs) {
    if (peer.cursor >= checked_.size()) {
      peer.pending.push_back(theirs);  // follower ran ahead of the leader
      return true;
    }
    const Checked& mine = checked_[peer.cursor];
    Verdict verdict = deep_equivalent(mine.state, theirs);
    if (!verdict.match()) {
      AbortInfo info;
      info.cause = "divergence";
      info.divergence = *verdict.divergence;
      info.ordinal = peer.cursor;
      info.origin = name_;
      info.state_leader = serialize_state(mine.state);
      info.state_follower = serialize_state(theirs);
      abort_all(info);
      return false;
    }
    ++peer.cursor;
    if (mine.sensitivity == SensitivityClass::High)
      pending_verdicts_.push_back(&peer);
    return true;
  }

  bool handle_message(Peer& peer, WireMessage m) {
    switch (m.type) {
      case MsgType::STATE:
        return compare_next(peer, deserialize_state(m.payload));
      case MsgType::BYE:
        peer.said_bye = true;
        return true;
      default: {
        AbortInfo info;
        info.cause = "protocol-error";
        info.divergence.detail = "unexpected " +
                                 std::string(msg_type_name(m.type)) +
                                 " from " + peer.name;
        info.origin = name_;
        abort_all(info);
        return false;
      }
    }
  }

  bool drain_pending(Peer& peer) {
    while (!peer.pending.empty() && peer.cursor < checked_.size()) {
      CanonicalSyscallState next = std::move(peer.pending.front());
      peer.pending.pop_front();
      if (!compare_next(peer, next)) return false;
    }
    return true;
  }

  bool drain_available(Peer& peer) {
    while (true) {
      if (!drain_pending(peer)) return false;
      if (peer.said_bye) return true;
      std::optional<WireMessage> m;
      try {
        m = peer.channel->recv(ChannelClass::Sync, RecvMode::Poll);
      } catch (const TransportError& e) {
        return !channel_lost(peer, e);
      }
      if (!m) return true;
      if (!handle_message(peer, std::move(*m))) return false;
    }
  }

  bool await_cursor(Peer& peer, std::size_t target) {
    int slices = 0;
    while (peer.cursor < target) {
      if (!drain_pending(peer)) return false;
      if (peer.cursor >= target) break;
      if (auto aborted = poll_abort()) return false;
      std::optional<WireMessage> m;
      try {
        m = peer.channel->recv(ChannelClass::Sync, RecvMode::Blocking,
                               std::chrono::milliseconds(20));
      } catch (const TransportError& e) {
        return !channel_lost(peer, e);
      }
      if (!m) {
        if (++slices > kMaxWaitSlices) {
          AbortInfo info;
          info.cause = "channel-loss";
          info.divergence.detail = "timed out waiting for " + peer.name;
          info.origin = name_;
          abort_all(info);
          return false;
        }
        continue;
      }
      slices = 0;
      if (!handle_message(peer, std::move(*m))) return false;
    }
    return true;
  }

  // Returns true when the abort was raised here. Disconnects observed while
  // winding down a completed run are a benign teardown race, not an abort.
  bool channel_lost(Peer& peer, const TransportError& e) {
    if (finishing_) {
      peer.said_bye = true;
      return false;
    }
    AbortInfo info;
    info.cause = "channel-loss";
    info.divergence.detail = peer.name + ": " + e.what();
    info.origin = name_;
    abort_all(info);
    return true;
  }

  static constexpr int kMaxWaitSlices = 500;
  bool finishing_ = false;

  std::string name_;
  const PolicyTable* policy_;
  const StaticFileOracle* statics_;
  MonitorState state_;
  std::vector<Peer> peers_;
  std::vector<Checked> checked_;
  std::vector<Peer*> pending_verdicts_;
  std::uint64_t replication_ordinal_ = 0;
};

}  // namespace nvx
