// Two-axis syscall classification: security sensitivity (drives how a call
// is cross-checked) and replication strategy (drives what happens to its
// results). The table is a data file so alternative classifications can be
// swapped in without a rebuild.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvx/canonical.hpp"
#include "nvx/platform.hpp"

namespace nvx {

enum class SensitivityClass : std::uint8_t { High, Moderate, None };

enum class ReplicationClass : std::uint8_t {
  ReplicateIO,           // externally observable I/O; leader executes, results injected
  ReplicateMutableState, // mutable program state; leader's results injected
  LocalExecute,          // every variant executes its own call, no replication
  CachedImmutable,       // first result cached, later invocations cancelled
};

inline std::string_view sensitivity_name(SensitivityClass s) {
  switch (s) {
    case SensitivityClass::High: return "high";
    case SensitivityClass::Moderate: return "moderate";
    case SensitivityClass::None: return "none";
  }
  return "?";
}

inline std::string_view replication_name(ReplicationClass r) {
  switch (r) {
    case ReplicationClass::ReplicateIO: return "io";
    case ReplicationClass::ReplicateMutableState: return "mutable";
    case ReplicationClass::LocalExecute: return "local";
    case ReplicationClass::CachedImmutable: return "cached";
  }
  return "?";
}

struct PolicyFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Answers "does this canonical descriptor currently name a verified static
// file?" — i.e. its content digest still matches the startup manifest and it
// has never been opened for writing during the run.
struct StaticFileOracle {
  virtual ~StaticFileOracle() = default;
  virtual bool verified_static(std::int64_t canon_fd) const = 0;
};

struct NoStaticFiles final : StaticFileOracle {
  bool verified_static(std::int64_t) const override { return false; }
};

// Argument predicates a table row may carry. Predicates see only the
// canonical state, so they are identical across variants by construction.
enum class ArgPredicate : std::uint8_t { Always, Fd1Socket, Fd1File, Fd1Std };

inline std::optional<ArgPredicate> predicate_from_name(std::string_view name) {
  if (name == "fd1_socket") return ArgPredicate::Fd1Socket;
  if (name == "fd1_file") return ArgPredicate::Fd1File;
  if (name == "fd1_std") return ArgPredicate::Fd1Std;
  return std::nullopt;
}

inline bool predicate_holds(ArgPredicate pred, const CanonicalSyscallState& state) {
  if (pred == ArgPredicate::Always) return true;
  if (state.args.empty() || state.args[0].kind != ValueKind::Fd) return false;
  FdClass cls = state.args[0].fd_class;
  switch (pred) {
    case ArgPredicate::Fd1Socket: return cls == FdClass::Socket;
    case ArgPredicate::Fd1File: return cls == FdClass::File;
    case ArgPredicate::Fd1Std: return cls == FdClass::Std;
    case ArgPredicate::Always: return true;
  }
  return false;
}

struct PolicyRule {
  ArgPredicate predicate = ArgPredicate::Always;
  SensitivityClass sensitivity = SensitivityClass::High;
  ReplicationClass replication = ReplicationClass::ReplicateIO;
  bool static_read = false;  // eligible for the permissive-filesystem bypass
};

class PolicyTable {
 public:
  void add_rule(SyscallId id, PolicyRule rule) {
    auto& rules = rules_[id];
    if (rule.predicate == ArgPredicate::Always) {
      rules.push_back(rule);  // bare rows match last
    } else {
      rules.insert(rules.begin(), rule);
    }
  }

  // Every canonical id must have an unconditional row; classification is a
  // total function over the supported enumeration.
  void validate() const {
    for (SyscallId id : all_syscall_ids()) {
      auto it = rules_.find(id);
      bool has_bare = false;
      if (it != rules_.end())
        for (const auto& rule : it->second)
          if (rule.predicate == ArgPredicate::Always) has_bare = true;
      if (!has_bare)
        throw PolicyFileError("policy table has no unconditional row for " +
                              std::string(syscall_id_name(id)));
      if (it != rules_.end())
        for (const auto& rule : it->second)
          if (rule.replication == ReplicationClass::CachedImmutable &&
              !syscall_signature(id).args.empty())
            throw PolicyFileError(
                std::string(syscall_id_name(id)) +
                ": cached replication only fits calls reading immutable "
                "process state");
    }
  }

  const PolicyRule& rule_for(SyscallId id,
                             const CanonicalSyscallState& state) const {
    auto it = rules_.find(id);
    if (it == rules_.end())
      throw PolicyFileError("no policy rule for " +
                            std::string(syscall_id_name(id)));
    for (const auto& rule : it->second)
      if (predicate_holds(rule.predicate, state)) return rule;
    throw PolicyFileError("no matching policy rule for " +
                          std::string(syscall_id_name(id)));
  }

 private:
  std::map<SyscallId, std::vector<PolicyRule>> rules_;
};

// Security sensitivity by id and declared argument predicates only; pure and
// deterministic.
inline SensitivityClass classify_sensitivity(const PolicyTable& table,
                                             SyscallId id,
                                             const CanonicalSyscallState& state) {
  return table.rule_for(id, state).sensitivity;
}

// Replication strategy. With the permissive-filesystem optimization enabled,
// read-class rows targeting a verified static descriptor bypass replication
// entirely; with it disabled the table class applies unchanged.
inline ReplicationClass classify_replication(const PolicyTable& table,
                                             SyscallId id,
                                             const CanonicalSyscallState& state,
                                             const StaticFileOracle& manifest,
                                             bool pfa_enabled) {
  const PolicyRule& rule = table.rule_for(id, state);
  if (pfa_enabled && rule.static_read && !state.args.empty() &&
      state.args[0].kind == ValueKind::Fd &&
      state.args[0].fd_class == FdClass::File &&
      manifest.verified_static(state.args[0].int_value)) {
    return ReplicationClass::LocalExecute;
  }
  return rule.replication;
}

// --- table file loading ----------------------------------------------------
//
//   ID[@predicate]  sensitivity  replication  [static_read]
//
inline PolicyTable load_policy_table_from(const SectionedFile& doc,
                                          const std::string& origin) {
  PolicyTable table;
  for (const auto& [section, lines] : doc.sections) {
    if (!section.empty())
      throw PolicyFileError(origin + ": unexpected section [" + section + "]");
    for (const auto& line : lines) {
      auto toks = split_ws(line.text);
      if (toks.size() < 3)
        throw PolicyFileError(origin + ":" + std::to_string(line.number) +
                              ": expected ID sensitivity replication");
      PolicyRule rule;
      std::string id_tok = toks[0];
      if (auto at = id_tok.find('@'); at != std::string::npos) {
        auto pred = predicate_from_name(id_tok.substr(at + 1));
        if (!pred)
          throw PolicyFileError(origin + ":" + std::to_string(line.number) +
                                ": unknown predicate " + id_tok.substr(at + 1));
        rule.predicate = *pred;
        id_tok = id_tok.substr(0, at);
      }
      auto id = syscall_id_from_name(id_tok);
      if (!id)
        throw PolicyFileError(origin + ":" + std::to_string(line.number) +
                              ": unknown canonical id " + id_tok);
      if (toks[1] == "high") rule.sensitivity = SensitivityClass::High;
      else if (toks[1] == "moderate") rule.sensitivity = SensitivityClass::Moderate;
      else if (toks[1] == "none") rule.sensitivity = SensitivityClass::None;
      else
        throw PolicyFileError(origin + ":" + std::to_string(line.number) +
                              ": unknown sensitivity " + toks[1]);
      if (toks[2] == "io") rule.replication = ReplicationClass::ReplicateIO;
      else if (toks[2] == "mutable") rule.replication = ReplicationClass::ReplicateMutableState;
      else if (toks[2] == "local") rule.replication = ReplicationClass::LocalExecute;
      else if (toks[2] == "cached") rule.replication = ReplicationClass::CachedImmutable;
      else
        throw PolicyFileError(origin + ":" + std::to_string(line.number) +
                              ": unknown replication class " + toks[2]);
      for (std::size_t i = 3; i < toks.size(); ++i) {
        if (toks[i] == "static_read") rule.static_read = true;
        else
          throw PolicyFileError(origin + ":" + std::to_string(line.number) +
                                ": unknown option " + toks[i]);
      }
      table.add_rule(*id, rule);
    }
  }
  table.validate();
  return table;
}

inline PolicyTable load_policy_table(const std::string& path) {
  return load_policy_table_from(parse_sectioned_file(path), path);
}

}  // namespace nvx
