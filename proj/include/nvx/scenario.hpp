// Scenario orchestration: boots one leader and any number of followers with
// their monitors, wires the configured transport between them, runs the
// logical program to completion or abort, and assembles the report
// (verdicts, per-class message counts, ledger, observed results).

#pragma once

#include <functional>
#include <future>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "nvx/harness.hpp"
#include "nvx/monitor.hpp"
#include "nvx/rccom.hpp"

namespace nvx {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VariantConfig {
  std::string name;
  std::string platform;  // key into the runtime platform map (or abi path)
  Role role = Role::Follower;
  Endpoint endpoint;     // leader's listen address for the tcp transport
  std::int64_t fd_base = 0;  // 0 = auto (spread per variant index)
  std::string open_style;    // "open" = render legacy open on this platform
};

struct ScenarioConfig {
  std::string name = "scenario";
  TransportKind transport = TransportKind::Mem;
  ModeFlags mode;
  std::string app_root = "/app";
  std::map<std::string, Bytes> files;
  std::vector<Bytes> net_inbound;
  LogicalProgram program;
  std::vector<VariantConfig> variants;
  std::vector<FaultSpec> faults;
};

// Immutable runtime tables shared by every party.
struct ScenarioRuntime {
  PolicyTable policy;
  StructRegistry structs = default_struct_registry();
  std::map<std::string, PlatformSpec> platforms;
};

// Adds a fault to a copy of the scenario after validating its trigger.
inline ScenarioConfig inject_fault(const ScenarioConfig& scenario,
                                   const FaultSpec& fault) {
  if (fault.ordinal >= scenario.program.intents.size())
    throw BadTriggerError("fault ordinal " + std::to_string(fault.ordinal) +
                          " beyond program length " +
                          std::to_string(scenario.program.intents.size()));
  bool known = false;
  for (const auto& v : scenario.variants) known |= v.name == fault.variant;
  if (!known) throw BadTriggerError("fault targets unknown variant " + fault.variant);
  ScenarioConfig out = scenario;
  out.faults.push_back(fault);
  return out;
}

// --- reports -----------------------------------------------------------------

struct CallRecord {
  std::size_t ordinal = 0;
  SyscallId id = SyscallId::READ;
  SensitivityClass sensitivity = SensitivityClass::None;
  ReplicationClass replication = ReplicationClass::LocalExecute;
  char action = 'P';
  int state_sent = 0;
  int verdict_received = 0;
  int result_received = 0;
  int result_sent = 0;  // leader side: RESULT copies broadcast

  int messages() const {
    return state_sent + verdict_received + result_received + result_sent;
  }
};

struct VariantReport {
  std::string name;
  Role role = Role::Follower;
  MonitorStatus status = MonitorStatus::Running;
  std::optional<AbortInfo> incident;
  std::vector<CallRecord> calls;
  // ordinal -> canonical result record (replication-ordinal-independent
  // encoding) of what this variant observed for the call.
  std::map<std::size_t, Bytes> observed;
  ChannelCounters channels;  // summed over this variant's channels
  std::int64_t exit_code = -1;
  std::string error;  // infrastructure failure, not a divergence
};

enum class ScenarioStatus : std::uint8_t { Ok, Aborted, Error };

inline std::string_view scenario_status_name(ScenarioStatus s) {
  switch (s) {
    case ScenarioStatus::Ok: return "ok";
    case ScenarioStatus::Aborted: return "aborted";
    case ScenarioStatus::Error: return "error";
  }
  return "?";
}

struct MessageTotals {
  std::uint64_t state = 0, verdict = 0, result = 0, abort = 0, hello = 0,
                bye = 0;
  std::uint64_t syscall_total() const { return state + verdict + result; }
};

struct ScenarioReport {
  std::string scenario;
  ScenarioStatus status = ScenarioStatus::Ok;
  std::optional<AbortInfo> incident;
  MessageTotals totals;
  std::vector<LedgerRecord> ledger;
  std::map<std::string, VariantReport> variants;
  std::size_t divergences = 0;
  std::size_t matches = 0;

  const VariantReport* leader() const {
    for (const auto& [name, v] : variants)
      if (v.role == Role::Leader) return &v;
    return nullptr;
  }

  std::string to_text() const;
};

// Every externally observable effect must originate at the leader.
inline bool single_effector_holds(const ScenarioReport& report) {
  const VariantReport* lead = report.leader();
  if (!lead) return false;
  for (const auto& rec : report.ledger)
    if (rec.origin != lead->name) return false;
  return true;
}

// Follower-observed results must be byte-identical to the leader's canonical
// results, call for call.
inline bool transparency_holds(const ScenarioReport& report,
                               std::string* failure = nullptr) {
  const VariantReport* lead = report.leader();
  if (!lead) return false;
  for (const auto& [name, variant] : report.variants) {
    if (variant.role == Role::Leader) continue;
    for (const auto& [ordinal, bytes] : variant.observed) {
      auto it = lead->observed.find(ordinal);
      if (it == lead->observed.end()) continue;
      if (it->second != bytes) {
        if (failure)
          *failure = name + " ordinal " + std::to_string(ordinal) +
                     " observed a different result than the leader";
        return false;
      }
    }
  }
  return true;
}

// --- the variant runner ------------------------------------------------------

namespace detail {

struct PartyResult {
  VariantReport report;
};

class VariantRunner {
 public:
  VariantRunner(const ScenarioConfig& scenario, const ScenarioRuntime& runtime,
                const VariantConfig& cfg, std::size_t variant_index,
                SideEffectLedger* ledger)
      : scenario_(scenario), runtime_(runtime), cfg_(cfg),
        index_(variant_index), ledger_(ledger) {
    const auto it = runtime.platforms.find(cfg.platform);
    if (it == runtime.platforms.end())
      throw ConfigError("unknown platform " + cfg.platform);
    platform_ = &it->second;

    FsContext fs;
    for (const auto& [path, content] : scenario.files) fs.put_file(path, content);
    fs.put_dir(scenario.app_root);
    manifest_ = StaticFileManifest::capture(fs);

    KernelConfig kcfg;
    kcfg.variant = cfg.name;
    kcfg.fd_base = cfg.fd_base ? cfg.fd_base : 3 + 10 * static_cast<std::int64_t>(index_);
    kcfg.pid = 1000 + 17 * static_cast<std::int64_t>(index_);
    kcfg.ppid = 900 + 13 * static_cast<std::int64_t>(index_);
    kcfg.uid = 1000;
    kcfg.gid = 1000;
    kcfg.clock_base = 1700000000 + 7777 * static_cast<std::int64_t>(index_);
    kcfg.cwd = scenario.app_root;
    kcfg.app_root = scenario.app_root;
    kcfg.record_fs_mutations = cfg.role == Role::Leader;
    kernel_ = std::make_unique<VirtualKernel>(
        kcfg, std::move(fs),
        std::deque<Bytes>(scenario.net_inbound.begin(), scenario.net_inbound.end()),
        ledger);

    rctx_.platform = platform_;
    rctx_.structs = &runtime.structs;
    rctx_.addr_base = 0x10000 + 0x100000 * (static_cast<std::uint64_t>(index_) + 1);

    intents_ = program_for_variant(scenario.program, scenario.faults, cfg.name);
    if (!cfg.open_style.empty())
      for (auto& intent : intents_)
        if (intent.op == OpCode::Open)
          intent.overrides["open_style:" + platform_->name] = cfg.open_style;

    report_.name = cfg.name;
    report_.role = cfg.role;
  }

  const PlatformSpec& platform() const { return *platform_; }

  VariantReport run_leader(std::vector<std::pair<std::string, Channel*>> channels) {
    LeaderMonitor monitor(cfg_.name, &runtime_.policy, oracle_for(monitor_fdmap_),
                          scenario_.mode);
    for (auto& [name, ch] : channels) monitor.add_follower(name, ch);
    run_loop(
        [&](const CanonicalSyscallState& s) { return monitor.on_entry(s); },
        [&](const CanonicalSyscallState& exit_state, const Action& act,
            CallRecord& rec) {
          rec.result_sent =
              static_cast<int>(monitor.on_exit(exit_state, act.replication));
          return true;
        },
        [&](SyscallId, ReplicationClass) -> std::optional<ResultRecord> {
          return std::nullopt;  // the leader never awaits results
        },
        [&] { return monitor.poll_abort(); },
        [&](const Divergence& d, std::size_t ordinal) {
          AbortInfo info;
          info.cause = "divergence";
          info.divergence = d;
          info.ordinal = ordinal;
          info.origin = cfg_.name;
          monitor.abort_all(info);
          return Action::abort(info);
        },
        [&] { monitor.flush_verdicts(); });
    monitor.finish();
    if (monitor.state().status == MonitorStatus::Aborted) {
      report_.status = MonitorStatus::Aborted;
      if (!report_.incident) report_.incident = monitor.state().abort_info;
    }
    for (auto& [name, ch] : channels) {
      accumulate(ch->counters());
    }
    return std::move(report_);
  }

  VariantReport run_follower(Channel* channel) {
    FollowerMonitor monitor(cfg_.name, channel, &runtime_.policy,
                            oracle_for(monitor_fdmap_), scenario_.mode);
    run_loop(
        [&](const CanonicalSyscallState& s) { return monitor.on_entry(s); },
        [&](const CanonicalSyscallState&, const Action&, CallRecord&) {
          return true;  // followers replicate nothing
        },
        [&](SyscallId id, ReplicationClass repl) {
          return monitor.await_result(id, repl);
        },
        [&] { return monitor.poll_abort(); },
        [&](const Divergence& d, std::size_t) { return monitor.local_failure(d); },
        [] {},
        &monitor);
    monitor.finish();
    if (monitor.state().status == MonitorStatus::Aborted) {
      report_.status = MonitorStatus::Aborted;
      if (!report_.incident) report_.incident = monitor.state().abort_info;
    }
    accumulate(channel->counters());
    return std::move(report_);
  }

  FdTranslation& fdmap() { return monitor_fdmap_; }

 private:
  const StaticFileOracle* oracle_for(FdTranslation& fdmap) {
    oracle_ = std::make_unique<ManifestOracle>(&manifest_, &kernel_->fs(), &fdmap);
    return oracle_.get();
  }

  // Core execution loop shared by both roles. `on_exit_hook` runs after a
  // locally executed call; `await` is the follower's result wait;
  // `fail_local` reports a local canonicalization failure to the peers.
  void run_loop(
      const std::function<Action(const CanonicalSyscallState&)>& on_entry,
      const std::function<bool(const CanonicalSyscallState&, const Action&,
                               CallRecord&)>& on_exit_hook,
      const std::function<std::optional<ResultRecord>(SyscallId, ReplicationClass)>&
          await,
      const std::function<std::optional<Action>()>& poll_abort,
      const std::function<Action(const Divergence&, std::size_t)>& fail_local,
      const std::function<void()>& flush_lockstep,
      FollowerMonitor* follower = nullptr) {
    CanonContext cctx;
    cctx.app_root = scenario_.app_root;
    cctx.cwd = kernel_->config().cwd;
    cctx.structs = &runtime_.structs;
    cctx.fdmap = &monitor_fdmap_;

    for (std::size_t ordinal = 0; ordinal < intents_.size(); ++ordinal) {
      const Intent& intent = intents_[ordinal];
      if (auto aborted = poll_abort()) {
        note_abort(*aborted);
        return;
      }

      RawSyscallEvent entry = render_entry(intent, rctx_);
      for (const auto& fault : scenario_.faults)
        if (fault.variant == cfg_.name && fault.ordinal == ordinal)
          mutate_event(entry, fault);

      CanonicalSyscallState state;
      try {
        state = canonicalize(entry, cctx);
      } catch (const std::exception& e) {
        note_abort(fail_local(divergence_from_exception(e), ordinal));
        return;
      }

      Action action = on_entry(state);
      CallRecord rec;
      rec.ordinal = ordinal;
      rec.id = state.id;
      rec.sensitivity = action.sensitivity;
      rec.replication = action.replication;
      rec.action = action_code(action.kind);
      rec.state_sent = action.state_sent ? 1 : 0;
      rec.verdict_received = action.verdict_received ? 1 : 0;

      if (action.kind == Action::Kind::Abort) {
        report_.calls.push_back(rec);
        note_abort(action);
        return;
      }

      update_written_set(state);

      if (action.kind == Action::Kind::Skip) {
        report_.observed[ordinal] = encode_result_record(0, *action.inject);
        report_.calls.push_back(rec);
        continue;
      }

      if (action.kind == Action::Kind::AwaitResult) {
        auto record = await(state.id, action.replication);
        if (!record) {
          report_.calls.push_back(rec);
          if (follower && follower->state().abort_info)
            note_abort(Action::abort(*follower->state().abort_info));
          return;
        }
        rec.result_received = 1;
        inject_observation(intent, *record);
        report_.observed[ordinal] = encode_result_record(0, *record);
        report_.calls.push_back(rec);
        continue;
      }

      // Proceed / ProceedAsLocal: execute on the local kernel.
      LogicalOutcome outcome = kernel_->execute(intent, rctx_.slot_fds);
      if (intent.op == OpCode::ExitGroup) {
        // No exit event: release lockstep peers now that the effect is done.
        flush_lockstep();
        report_.exit_code = intent.a;
        report_.calls.push_back(rec);
        return;
      }
      if (!outcome.error && outcome.is_new_fd) {
        monitor_fdmap_.register_open(outcome.value, outcome.new_fd_info);
        if (intent.out_slot >= 0) rctx_.slot_fds[intent.out_slot] = outcome.value;
      }
      RawSyscallEvent exit_ev = render_exit(intent, entry, outcome, rctx_);
      CanonicalSyscallState exit_state;
      try {
        exit_state = canonicalize(exit_ev, cctx);
      } catch (const std::exception& e) {
        flush_lockstep();
        report_.error = std::string("exit canonicalization failed: ") + e.what();
        report_.calls.push_back(rec);
        return;
      }
      report_.observed[ordinal] =
          encode_result_record(0, ResultRecord::from_exit_state(exit_state));
      if (!on_exit_hook(exit_state, action, rec)) {
        report_.calls.push_back(rec);
        return;
      }
      if (intent.op == OpCode::Close && !outcome.error)
        monitor_fdmap_.close_raw(raw_slot_fd(intent.slot));
      report_.calls.push_back(rec);
    }
  }

  std::int64_t raw_slot_fd(int slot) const {
    auto it = rctx_.slot_fds.find(slot);
    return it == rctx_.slot_fds.end() ? -1 : it->second;
  }

  // Reconstructs the variant-visible observation from a replicated record and
  // keeps kernel/descriptor bookkeeping consistent with it.
  void inject_observation(const Intent& intent, const ResultRecord& record) {
    if (record.result.is_error) return;
    switch (intent.op) {
      case OpCode::Open:
      case OpCode::Socket:
      case OpCode::Accept:
      case OpCode::Dup: {
        if (record.result.kind != ResultKind::Fd) break;
        std::int64_t canon = record.result.value;
        FdInfo info;
        if (intent.op == OpCode::Open) {
          info.cls = FdClass::File;
          try {
            info.path = normalize_path(kernel_->config().cwd, intent.path,
                                       scenario_.app_root);
          } catch (const PathEscapeError&) {
            info.path = intent.path;
          }
        } else if (intent.op == OpCode::Dup) {
          const FdInfo* src = monitor_fdmap_.info(
              monitor_fdmap_.canon_of(raw_slot_fd(intent.slot)).value_or(-1));
          if (src) info = *src;
        } else {
          info.cls = FdClass::Socket;
        }
        monitor_fdmap_.register_injected(canon, info);
        kernel_->adopt_fd(canon, info);
        if (intent.out_slot >= 0) rctx_.slot_fds[intent.out_slot] = canon;
        break;
      }
      case OpCode::Read:
      case OpCode::Recvfrom: {
        // The variant's file position advances exactly as if it had read.
        if (intent.op == OpCode::Read)
          kernel_->advance_offset(raw_slot_fd(intent.slot), record.result.value);
        break;
      }
      case OpCode::Lseek:
        kernel_->set_offset(raw_slot_fd(intent.slot), record.result.value);
        break;
      default:
        break;
    }
  }

  // Both monitors track the written-file set from the canonical states they
  // observe, so classification stays consistent across variants.
  void update_written_set(const CanonicalSyscallState& state) {
    if (state.direction != Direction::Entry) return;
    if (state.id == SyscallId::OPENAT && state.args.size() >= 3 &&
        state.args[1].kind == ValueKind::Path &&
        state.args[2].kind == ValueKind::Flags) {
      static const char* write_flags[] = {"WRONLY", "RDWR", "CREAT", "TRUNC",
                                          "APPEND"};
      for (const char* flag : write_flags) {
        if (state.args[2].flags.count(flag)) {
          manifest_.mark_written(state.args[1].text);
          break;
        }
      }
    } else if (state.id == SyscallId::WRITE && !state.args.empty() &&
               state.args[0].kind == ValueKind::Fd) {
      const FdInfo* info = monitor_fdmap_.info(state.args[0].int_value);
      if (info && info->cls == FdClass::File) manifest_.mark_written(info->path);
    }
  }

  void note_abort(const Action& action) {
    report_.status = MonitorStatus::Aborted;
    if (action.abort_info) report_.incident = action.abort_info;
  }

  void accumulate(const ChannelCounters& c) {
    report_.channels.sent_state += c.sent_state;
    report_.channels.sent_verdict += c.sent_verdict;
    report_.channels.sent_result += c.sent_result;
    report_.channels.sent_abort += c.sent_abort;
    report_.channels.sent_hello += c.sent_hello;
    report_.channels.sent_bye += c.sent_bye;
    report_.channels.recv_state += c.recv_state;
    report_.channels.recv_verdict += c.recv_verdict;
    report_.channels.recv_result += c.recv_result;
    report_.channels.recv_abort += c.recv_abort;
    report_.channels.recv_hello += c.recv_hello;
    report_.channels.recv_bye += c.recv_bye;
  }

  const ScenarioConfig& scenario_;
  const ScenarioRuntime& runtime_;
  VariantConfig cfg_;
  std::size_t index_;
  SideEffectLedger* ledger_;
  const PlatformSpec* platform_ = nullptr;
  std::unique_ptr<VirtualKernel> kernel_;
  StaticFileManifest manifest_;
  std::unique_ptr<ManifestOracle> oracle_;
  FdTranslation monitor_fdmap_;
  RenderContext rctx_;
  std::vector<Intent> intents_;
  VariantReport report_;
};

}  // namespace detail

// --- orchestration ----------------------------------------------------

inline void validate_scenario(const ScenarioConfig& config) {
  std::size_t leaders = 0;
  for (const auto& v : config.variants)
    if (v.role == Role::Leader) ++leaders;
  if (leaders != 1)
    throw ConfigError("a deployment needs exactly one leader, found " +
                      std::to_string(leaders));
  if (config.program.intents.empty()) throw ConfigError("empty program");
  if (config.transport != TransportKind::Mem &&
      config.transport != TransportKind::Tcp)
    throw UnsupportedTransportError(
        std::string(transport_name(config.transport)));
}

// Appends the terminal exit if the program does not end with one; every
// program closes with a lockstep boundary.
inline LogicalProgram ensure_terminated(LogicalProgram program) {
  if (program.intents.empty() ||
      program.intents.back().op != OpCode::ExitGroup) {
    Intent exit;
    exit.op = OpCode::ExitGroup;
    exit.a = 0;
    program.intents.push_back(exit);
  }
  return program;
}

inline ScenarioReport run_scenario(const ScenarioConfig& raw_config,
                                   const ScenarioRuntime& runtime) {
  ScenarioConfig config = raw_config;
  config.program = ensure_terminated(config.program);
  validate_scenario(config);

  SideEffectLedger ledger;
  ScenarioReport report;
  report.scenario = config.name;

  const VariantConfig* leader_cfg = nullptr;
  std::vector<const VariantConfig*> follower_cfgs;
  std::size_t leader_index = 0;
  for (std::size_t i = 0; i < config.variants.size(); ++i) {
    if (config.variants[i].role == Role::Leader) {
      leader_cfg = &config.variants[i];
      leader_index = i;
    } else {
      follower_cfgs.push_back(&config.variants[i]);
    }
  }

  // Channel construction. Memory transport: pairwise queues. TCP: the leader
  // listens once and accepts one connection per follower; followers connect.
  std::vector<std::unique_ptr<Channel>> leader_ends;
  std::vector<std::unique_ptr<Channel>> follower_ends(follower_cfgs.size());
  std::unique_ptr<TcpListener> listener;
  std::uint16_t port = 0;
  if (config.transport == TransportKind::Mem) {
    for (std::size_t i = 0; i < follower_cfgs.size(); ++i) {
      auto [l, f] = make_memory_channel_pair();
      leader_ends.push_back(std::move(l));
      follower_ends[i] = std::move(f);
    }
  } else {
    listener = std::make_unique<TcpListener>(leader_cfg->endpoint);
    port = listener->port();
  }

  struct PartyOutcome {
    VariantReport report;
    std::string error;
  };
  std::vector<PartyOutcome> outcomes(config.variants.size());

  auto follower_body = [&](std::size_t follower_slot, std::size_t variant_index) {
    PartyOutcome& out = outcomes[variant_index];
    try {
      detail::VariantRunner runner(config, runtime,
                                   *follower_cfgs[follower_slot], variant_index,
                                   &ledger);
      std::unique_ptr<Channel> channel;
      if (config.transport == TransportKind::Mem) {
        channel = std::move(follower_ends[follower_slot]);
      } else {
        channel = std::make_unique<Channel>(
            tcp_connect({leader_cfg->endpoint.host, port}));
      }
      channel->handshake(follower_cfgs[follower_slot]->name,
                         runner.platform().digest());
      out.report = runner.run_follower(channel.get());
    } catch (const std::exception& e) {
      out.error = e.what();
      out.report.name = follower_cfgs[follower_slot]->name;
      out.report.role = Role::Follower;
      out.report.error = e.what();
    }
  };

  auto leader_body = [&] {
    PartyOutcome& out = outcomes[leader_index];
    try {
      detail::VariantRunner runner(config, runtime, *leader_cfg, leader_index,
                                   &ledger);
      std::vector<std::unique_ptr<Channel>> channels;
      std::vector<std::pair<std::string, Channel*>> named;
      if (config.transport == TransportKind::Mem) {
        channels = std::move(leader_ends);
      } else {
        for (std::size_t i = 0; i < follower_cfgs.size(); ++i)
          channels.push_back(std::make_unique<Channel>(
              listener->accept(std::chrono::milliseconds(10000))));
      }
      // Handshakes identify peers by name; order followers per config.
      std::map<std::string, Channel*> by_name;
      for (auto& ch : channels) {
        HelloInfo hello = ch->handshake(leader_cfg->name, runner.platform().digest());
        by_name[hello.peer_name] = ch.get();
      }
      for (const auto* fcfg : follower_cfgs) {
        auto it = by_name.find(fcfg->name);
        if (it == by_name.end())
          throw ConfigError("follower " + fcfg->name + " never connected");
        named.emplace_back(fcfg->name, it->second);
      }
      out.report = runner.run_leader(std::move(named));
      for (auto& ch : channels) {
        // counters were accumulated inside run_leader
        (void)ch;
      }
    } catch (const std::exception& e) {
      out.error = e.what();
      out.report.name = leader_cfg->name;
      out.report.role = Role::Leader;
      out.report.error = e.what();
    }
  };

  std::vector<std::thread> threads;
  threads.emplace_back(leader_body);
  for (std::size_t i = 0, slot = 0; i < config.variants.size(); ++i) {
    if (config.variants[i].role == Role::Follower)
      threads.emplace_back(follower_body, slot++, i);
  }
  for (auto& t : threads) t.join();

  // Assemble.
  bool any_abort = false, any_error = false;
  for (auto& out : outcomes) {
    if (!out.error.empty() || !out.report.error.empty()) any_error = true;
    if (out.report.status == MonitorStatus::Aborted) any_abort = true;
    report.totals.state += out.report.channels.sent_state;
    report.totals.verdict += out.report.channels.sent_verdict;
    report.totals.result += out.report.channels.sent_result;
    report.totals.abort += out.report.channels.sent_abort;
    report.totals.hello += out.report.channels.sent_hello;
    report.totals.bye += out.report.channels.sent_bye;
    if (!out.report.incident && out.report.status == MonitorStatus::Aborted) {
      // aborted without local detail; the leader's incident will cover it
    }
    report.variants[out.report.name] = std::move(out.report);
  }
  report.ledger = ledger.snapshot();
  report.status = any_abort ? ScenarioStatus::Aborted
                 : any_error ? ScenarioStatus::Error
                             : ScenarioStatus::Ok;
  // Prefer the leader's incident: it carries both serialized states.
  if (const VariantReport* lead = report.leader(); lead && lead->incident) {
    report.incident = lead->incident;
  } else {
    for (const auto& [name, v] : report.variants)
      if (v.incident) report.incident = v.incident;
  }
  if (report.status == ScenarioStatus::Aborted) report.divergences = 1;
  for (const auto& [name, v] : report.variants)
    if (v.role == Role::Follower)
      report.matches += static_cast<std::size_t>(v.channels.recv_verdict);
  return report;
}

// Runs exactly one party of a scenario in this process, for deployments that
// spread monitors across processes or hosts. Requires the tcp transport and
// fixed endpoints; the returned report covers the local party only.
inline ScenarioReport run_party(const ScenarioConfig& raw_config,
                                const ScenarioRuntime& runtime,
                                const std::string& party) {
  ScenarioConfig config = raw_config;
  config.program = ensure_terminated(config.program);
  validate_scenario(config);
  if (config.transport != TransportKind::Tcp)
    throw ConfigError("split deployments need the tcp transport");

  const VariantConfig* mine = nullptr;
  const VariantConfig* leader_cfg = nullptr;
  std::size_t my_index = 0, follower_count = 0;
  for (std::size_t i = 0; i < config.variants.size(); ++i) {
    const auto& v = config.variants[i];
    if (v.role == Role::Leader) leader_cfg = &v;
    else ++follower_count;
    if (v.name == party) {
      mine = &v;
      my_index = i;
    }
  }
  if (!mine) throw ConfigError("no variant named " + party);
  if (leader_cfg->endpoint.port == 0)
    throw ConfigError("split deployments need a fixed leader endpoint port");

  SideEffectLedger ledger;
  ScenarioReport report;
  report.scenario = config.name;
  detail::VariantRunner runner(config, runtime, *mine, my_index, &ledger);

  VariantReport vr;
  if (mine->role == Role::Leader) {
    TcpListener listener(mine->endpoint);
    std::vector<std::unique_ptr<Channel>> channels;
    std::vector<std::pair<std::string, Channel*>> named;
    std::map<std::string, Channel*> by_name;
    for (std::size_t i = 0; i < follower_count; ++i) {
      channels.push_back(std::make_unique<Channel>(
          listener.accept(std::chrono::milliseconds(30000))));
      HelloInfo hello =
          channels.back()->handshake(mine->name, runner.platform().digest());
      by_name[hello.peer_name] = channels.back().get();
    }
    for (const auto& v : config.variants) {
      if (v.role == Role::Leader) continue;
      auto it = by_name.find(v.name);
      if (it == by_name.end())
        throw ConfigError("follower " + v.name + " never connected");
      named.emplace_back(v.name, it->second);
    }
    vr = runner.run_leader(std::move(named));
  } else {
    auto channel = std::make_unique<Channel>(
        tcp_connect(leader_cfg->endpoint, std::chrono::milliseconds(30000)));
    channel->handshake(mine->name, runner.platform().digest());
    vr = runner.run_follower(channel.get());
  }

  report.totals.state = vr.channels.sent_state;
  report.totals.verdict = vr.channels.sent_verdict;
  report.totals.result = vr.channels.sent_result;
  report.totals.abort = vr.channels.sent_abort;
  report.totals.hello = vr.channels.sent_hello;
  report.totals.bye = vr.channels.sent_bye;
  report.status = vr.status == MonitorStatus::Aborted ? ScenarioStatus::Aborted
                                                      : ScenarioStatus::Ok;
  if (vr.incident) report.incident = vr.incident;
  if (report.status == ScenarioStatus::Aborted) report.divergences = 1;
  report.ledger = ledger.snapshot();
  report.variants[vr.name] = std::move(vr);
  return report;
}

// --- report rendering ------------------------------------------------------

inline std::string ScenarioReport::to_text() const {
  std::ostringstream out;
  out << "[scenario]\n";
  out << "name = " << scenario << "\n";
  out << "status = " << scenario_status_name(status) << "\n";
  out << "\n[messages]\n";
  out << "state = " << totals.state << "\n";
  out << "verdict = " << totals.verdict << "\n";
  out << "result = " << totals.result << "\n";
  out << "abort = " << totals.abort << "\n";
  out << "hello = " << totals.hello << "\n";
  out << "bye = " << totals.bye << "\n";
  out << "syscall_total = " << totals.syscall_total() << "\n";
  for (const auto& [name, v] : variants) {
    out << "\n[variant." << name << "]\n";
    out << "role = " << (v.role == Role::Leader ? "leader" : "follower") << "\n";
    out << "status = "
        << (v.status == MonitorStatus::Aborted ? "aborted" : "completed") << "\n";
    if (!v.error.empty()) out << "error = " << v.error << "\n";
    if (v.exit_code >= 0) out << "exit_code = " << v.exit_code << "\n";
    for (const auto& c : v.calls) {
      out << c.ordinal << " " << syscall_id_name(c.id) << " "
          << sensitivity_name(c.sensitivity) << " "
          << replication_name(c.replication) << " action=" << c.action
          << " msgs=" << c.messages() << "\n";
    }
  }
  out << "\n[ledger]\n";
  for (const auto& rec : ledger) {
    out << rec.seq << " " << rec.origin << " " << effect_kind_name(rec.kind)
        << " " << rec.target << " sha256:" << rec.payload_digest << "\n";
  }
  if (incident) {
    out << "\n" << render_incident(*incident);
  }
  return out.str();
}

}  // namespace nvx
