// Scenario configuration files: the operator-facing format listing variants
// (platform descriptor, roles, host endpoints), the logical program script,
// the staged file tree, scripted network input, optimization flags, and
// optional injected faults.
//
//   [scenario]
//   name = demo
//   transport = mem | tcp
//   pfa = on
//   acc = on
//   app_root = /app
//   policy = ../policy/default.policy
//
//   [files]
//   /app/cfg = "port=8080"
//   /app/blob = hex:00010203
//
//   [net]
//   inbound = "GET / HTTP/1.1"
//
//   [program]
//   open f0 /app/cfg rdonly
//   read f0 64
//   ...
//
//   [variant.v0]
//   platform = ../abi/x86_64.abi
//   role = leader
//   endpoint = 127.0.0.1:7400
//
//   [fault]            # optional, repeatable
//   variant = v1
//   ordinal = 1
//   kind = flip_payload_byte
//
#pragma once

#include <filesystem>

#include "nvx/scenario.hpp"

namespace nvx {

namespace detail {

// Tokenizer for program lines: whitespace-separated words, double-quoted
// strings (kept as single tokens), and hex:... byte literals.
inline std::vector<std::string> tokenize_program_line(const std::string& line,
                                                      const std::string& where) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    if (std::isspace(static_cast<unsigned char>(line[i]))) {
      ++i;
      continue;
    }
    if (line[i] == '"') {
      std::size_t end = line.find('"', i + 1);
      if (end == std::string::npos)
        throw ConfigError(where + ": unterminated string literal");
      out.push_back(line.substr(i, end - i + 1));
      i = end + 1;
      continue;
    }
    std::size_t end = i;
    while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end])))
      ++end;
    out.push_back(line.substr(i, end - i));
    i = end;
  }
  return out;
}

inline Bytes parse_payload(const std::string& tok, const std::string& where) {
  if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"')
    return to_bytes(tok.substr(1, tok.size() - 2));
  if (tok.rfind("hex:", 0) == 0) {
    std::string hex = tok.substr(4);
    if (hex.size() % 2 != 0) throw ConfigError(where + ": odd hex literal");
    Bytes out;
    for (std::size_t i = 0; i < hex.size(); i += 2)
      out.push_back(static_cast<std::uint8_t>(
          std::stoul(hex.substr(i, 2), nullptr, 16)));
    return out;
  }
  throw ConfigError(where + ": expected \"string\" or hex:... payload, got " + tok);
}

inline FlagSet parse_open_flags(const std::string& tok, const std::string& where) {
  FlagSet out;
  if (tok == "-" || tok == "rdonly") return out;
  static const std::map<std::string, std::string> names = {
      {"wronly", "WRONLY"},       {"rdwr", "RDWR"},
      {"creat", "CREAT"},         {"excl", "EXCL"},
      {"trunc", "TRUNC"},         {"append", "APPEND"},
      {"nonblock", "NONBLOCK"},   {"directory", "DIRECTORY"},
      {"nofollow", "NOFOLLOW"},   {"direct", "DIRECT"},
      {"largefile", "LARGEFILE"}, {"cloexec", "CLOEXEC"},
  };
  for (const auto& part : split_on(tok, ',')) {
    if (part == "rdonly") continue;
    auto it = names.find(part);
    if (it == names.end())
      throw ConfigError(where + ": unknown open flag " + part);
    out.insert(it->second);
  }
  return out;
}

class SlotNames {
 public:
  int resolve(const std::string& name, bool may_create, const std::string& where) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    if (!may_create)
      throw ConfigError(where + ": descriptor slot " + name +
                        " used before being bound");
    int id = static_cast<int>(ids_.size());
    ids_[name] = id;
    return id;
  }

 private:
  std::map<std::string, int> ids_;
};

inline Intent parse_intent(const std::vector<std::string>& toks,
                           SlotNames& slots, const std::string& where) {
  const std::string& op = toks[0];
  auto need = [&](std::size_t n) {
    if (toks.size() < n + 1)
      throw ConfigError(where + ": " + op + " needs " + std::to_string(n) +
                        " arguments");
  };
  Intent out;
  if (op == "open") {
    need(2);
    out.op = OpCode::Open;
    out.out_slot = slots.resolve(toks[1], true, where);
    out.path = toks[2];
    if (toks.size() > 3) out.flags = parse_open_flags(toks[3], where);
    if (toks.size() > 4 && toks[4].find('=') == std::string::npos)
      out.b = parse_int(toks[4]);
    // trailing options: open_on=<platform> renders the legacy form there
    for (std::size_t i = 3; i < toks.size(); ++i) {
      if (toks[i].rfind("open_on=", 0) == 0)
        out.overrides["open_style:" + toks[i].substr(8)] = "open";
    }
  } else if (op == "read" || op == "recvfrom") {
    need(2);
    out.op = op == "read" ? OpCode::Read : OpCode::Recvfrom;
    out.slot = slots.resolve(toks[1], false, where);
    out.a = parse_int(toks[2]);
  } else if (op == "pread") {
    need(3);
    out.op = OpCode::Pread;
    out.slot = slots.resolve(toks[1], false, where);
    out.a = parse_int(toks[2]);
    out.b = parse_int(toks[3]);
  } else if (op == "write" || op == "sendto") {
    need(2);
    out.op = op == "write" ? OpCode::Write : OpCode::Sendto;
    out.slot = slots.resolve(toks[1], false, where);
    out.payload = parse_payload(toks[2], where);
    for (std::size_t i = 3; i < toks.size(); ++i)
      if (toks[i].rfind("ptr=", 0) == 0)
        out.ptr_value = parse_uint(toks[i].substr(4));
  } else if (op == "close" || op == "fstat" || op == "listen") {
    need(1);
    out.op = op == "close" ? OpCode::Close
             : op == "fstat" ? OpCode::Fstat
                             : OpCode::Listen;
    out.slot = slots.resolve(toks[1], false, where);
    if (op == "listen" && toks.size() > 2) out.a = parse_int(toks[2]);
  } else if (op == "lseek") {
    need(3);
    out.op = OpCode::Lseek;
    out.slot = slots.resolve(toks[1], false, where);
    out.a = parse_int(toks[2]);
    out.b = parse_int(toks[3]);
  } else if (op == "dup") {
    need(2);
    out.op = OpCode::Dup;
    out.slot = slots.resolve(toks[1], false, where);
    out.out_slot = slots.resolve(toks[2], true, where);
  } else if (op == "getcwd") {
    out.op = OpCode::Getcwd;
    if (toks.size() > 1) out.a = parse_int(toks[1]);
  } else if (op == "getpid") {
    out.op = OpCode::Getpid;
  } else if (op == "getppid") {
    out.op = OpCode::Getppid;
  } else if (op == "getuid") {
    out.op = OpCode::Getuid;
  } else if (op == "getgid") {
    out.op = OpCode::Getgid;
  } else if (op == "sched_yield") {
    out.op = OpCode::SchedYield;
  } else if (op == "nanosleep") {
    need(2);
    out.op = OpCode::Nanosleep;
    out.a = parse_int(toks[1]);
    out.b = parse_int(toks[2]);
  } else if (op == "brk") {
    need(1);
    out.op = OpCode::Brk;
    out.a = parse_int(toks[1]);
  } else if (op == "mmap_anon") {
    need(1);
    out.op = OpCode::MmapAnon;
    out.a = parse_int(toks[1]);
  } else if (op == "munmap") {
    need(1);
    out.op = OpCode::Munmap;
    out.a = parse_int(toks[1]);
  } else if (op == "mprotect") {
    need(1);
    out.op = OpCode::Mprotect;
    out.a = parse_int(toks[1]);
  } else if (op == "socket") {
    need(1);
    out.op = OpCode::Socket;
    out.out_slot = slots.resolve(toks[1], true, where);
  } else if (op == "bind" || op == "connect") {
    need(2);
    out.op = op == "bind" ? OpCode::Bind : OpCode::Connect;
    out.slot = slots.resolve(toks[1], false, where);
    out.a = parse_int(toks[2]);
  } else if (op == "accept") {
    need(2);
    out.op = OpCode::Accept;
    out.slot = slots.resolve(toks[1], false, where);
    out.out_slot = slots.resolve(toks[2], true, where);
  } else if (op == "gettimeofday") {
    out.op = OpCode::Gettimeofday;
  } else if (op == "clock_gettime") {
    out.op = OpCode::ClockGettime;
  } else if (op == "exit_group") {
    out.op = OpCode::ExitGroup;
    if (toks.size() > 1) out.a = parse_int(toks[1]);
  } else {
    throw ConfigError(where + ": unknown operation " + op);
  }
  return out;
}

inline Endpoint parse_endpoint(const std::string& value, const std::string& where) {
  auto colon = value.rfind(':');
  if (colon == std::string::npos)
    throw ConfigError(where + ": endpoint must be host:port");
  Endpoint ep;
  ep.host = value.substr(0, colon);
  ep.port = static_cast<std::uint16_t>(parse_uint(value.substr(colon + 1)));
  return ep;
}

}  // namespace detail

struct LoadedScenario {
  ScenarioConfig config;
  ScenarioRuntime runtime;
};

// Parses a scenario configuration file; platform descriptor and policy table
// paths resolve relative to the config file's directory.
inline LoadedScenario load_scenario_file(const std::string& path) {
  namespace fs = std::filesystem;
  auto doc = parse_sectioned_file(path);
  fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& rel) {
    fs::path p(rel);
    return p.is_absolute() ? p.string() : (base / p).string();
  };

  LoadedScenario out;
  ScenarioConfig& config = out.config;
  bool have_policy = false;
  detail::SlotNames slots;
  FaultSpec* current_fault = nullptr;
  std::vector<FaultSpec> faults;

  for (const auto& [section, lines] : doc.sections) {
    std::string where = path + " [" + section + "]";
    if (section.empty()) {
      if (!lines.empty())
        throw ConfigError(path + ": content before any section");
    } else if (section == "scenario") {
      for (const auto& line : lines) {
        auto kv = split_kv(line.text);
        if (!kv) throw ConfigError(where + ": expected key = value");
        const auto& [key, value] = *kv;
        if (key == "name") config.name = value;
        else if (key == "transport") {
          auto kind = transport_from_name(value);
          if (!kind) throw ConfigError(where + ": unknown transport " + value);
          config.transport = *kind;
        } else if (key == "pfa") config.mode.pfa_enabled = value == "on";
        else if (key == "acc") config.mode.acc_enabled = value == "on";
        else if (key == "app_root") config.app_root = value;
        else if (key == "policy") {
          out.runtime.policy = load_policy_table(resolve(value));
          have_policy = true;
        } else throw ConfigError(where + ": unknown key " + key);
      }
    } else if (section == "files") {
      for (const auto& line : lines) {
        auto kv = split_kv(line.text);
        if (!kv) throw ConfigError(where + ": expected path = payload");
        config.files[kv->first] = detail::parse_payload(kv->second, where);
      }
    } else if (section == "net") {
      for (const auto& line : lines) {
        auto kv = split_kv(line.text);
        if (!kv || kv->first != "inbound")
          throw ConfigError(where + ": expected inbound = payload");
        config.net_inbound.push_back(detail::parse_payload(kv->second, where));
      }
    } else if (section == "program") {
      config.program.name = config.name;
      for (const auto& line : lines) {
        auto toks = detail::tokenize_program_line(
            line.text, path + ":" + std::to_string(line.number));
        if (toks.empty()) continue;
        config.program.intents.push_back(detail::parse_intent(
            toks, slots, path + ":" + std::to_string(line.number)));
      }
    } else if (section.rfind("variant.", 0) == 0) {
      VariantConfig variant;
      variant.name = section.substr(8);
      for (const auto& line : lines) {
        auto kv = split_kv(line.text);
        if (!kv) throw ConfigError(where + ": expected key = value");
        const auto& [key, value] = *kv;
        if (key == "platform") {
          PlatformSpec spec = load_platform_spec(resolve(value));
          variant.platform = spec.name;
          out.runtime.platforms.emplace(spec.name, std::move(spec));
        } else if (key == "role") {
          if (value == "leader") variant.role = Role::Leader;
          else if (value == "follower") variant.role = Role::Follower;
          else throw ConfigError(where + ": role must be leader or follower");
        } else if (key == "endpoint") {
          variant.endpoint = detail::parse_endpoint(value, where);
        } else if (key == "fd_base") {
          variant.fd_base = parse_int(value);
        } else if (key == "open_style") {
          variant.open_style = value;
        } else {
          throw ConfigError(where + ": unknown key " + key);
        }
      }
      if (variant.platform.empty())
        throw ConfigError(where + ": variant needs a platform descriptor");
      config.variants.push_back(std::move(variant));
    } else if (section == "fault") {
      faults.emplace_back();
      current_fault = &faults.back();
      for (const auto& line : lines) {
        auto kv = split_kv(line.text);
        if (!kv) throw ConfigError(where + ": expected key = value");
        const auto& [key, value] = *kv;
        if (key == "variant") current_fault->variant = value;
        else if (key == "ordinal") current_fault->ordinal = parse_uint(value);
        else if (key == "kind") {
          if (value == "flip_payload_byte")
            current_fault->kind = FaultSpec::Kind::FlipPayloadByte;
          else if (value == "flip_flag_bit")
            current_fault->kind = FaultSpec::Kind::FlipFlagBit;
          else if (value == "patch_pointer_low_byte")
            current_fault->kind = FaultSpec::Kind::PatchPointerLowByte;
          else
            throw ConfigError(where + ": unknown fault kind " + value);
        } else if (key == "byte_offset") {
          current_fault->byte_offset = parse_uint(value);
        } else if (key == "raw_arg_index") {
          current_fault->raw_arg_index = static_cast<int>(parse_uint(value));
        } else if (key == "flag_bit") {
          current_fault->flag_bit = parse_uint(value);
        } else {
          throw ConfigError(where + ": unknown key " + key);
        }
      }
    } else {
      throw ConfigError(path + ": unknown section [" + section + "]");
    }
  }

  if (!have_policy)
    throw ConfigError(path + ": [scenario] must name a policy table");
  for (const auto& fault : faults) config.faults.push_back(fault);
  return out;
}

}  // namespace nvx
