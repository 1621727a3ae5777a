// Scenario building blocks: the virtual filesystem with its static-file
// manifest, the external side-effect ledger, logical syscall programs and
// their per-ABI rendering, the per-variant virtual kernel, and fault
// injection.

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvx/canonical.hpp"
#include "nvx/monitor.hpp"
#include "nvx/platform.hpp"
#include "nvx/policy.hpp"

namespace nvx {

// --- virtual filesystem ----------------------------------------------------

// One variant machine's file tree. Every variant starts from an identical
// copy, mirroring the assumption that application files match across hosts
// when the system boots.
class FsContext {
 public:
  void put_file(const std::string& path, Bytes content) {
    files_[path] = std::move(content);
    add_parents(path);
  }

  void put_dir(const std::string& path) { dirs_.insert(path); }

  bool is_file(const std::string& path) const { return files_.count(path) > 0; }
  bool is_dir(const std::string& path) const { return dirs_.count(path) > 0; }

  const Bytes* content(const std::string& path) const {
    auto it = files_.find(path);
    return it == files_.end() ? nullptr : &it->second;
  }

  void truncate(const std::string& path) { files_[path].clear(); }

  // Overwrites/extends at the byte offset, zero-filling any gap.
  void write_at(const std::string& path, std::size_t offset, const Bytes& data) {
    Bytes& content = files_[path];
    if (content.size() < offset + data.size())
      content.resize(offset + data.size(), 0);
    std::copy(data.begin(), data.end(),
              content.begin() + static_cast<std::ptrdiff_t>(offset));
    add_parents(path);
  }

  const std::map<std::string, Bytes>& files() const { return files_; }

 private:
  void add_parents(const std::string& path) {
    std::string dir = path;
    while (true) {
      auto slash = dir.rfind('/');
      if (slash == std::string::npos || slash == 0) break;
      dir = dir.substr(0, slash);
      dirs_.insert(dir);
    }
    dirs_.insert("/");
  }

  std::map<std::string, Bytes> files_;
  std::set<std::string> dirs_;
};

// Startup content digests plus the monotonically growing written-file set.
// A file is a verified static file while its digest still matches the
// startup capture and nothing has opened it for writing.
class StaticFileManifest {
 public:
  static StaticFileManifest capture(const FsContext& fs) {
    StaticFileManifest m;
    for (const auto& [path, content] : fs.files())
      m.startup_digests_[path] = sha256_hex(content);
    return m;
  }

  void mark_written(const std::string& path) { written_.insert(path); }
  bool written(const std::string& path) const { return written_.count(path) > 0; }

  bool verified_static(const std::string& path, const FsContext& fs) const {
    if (written_.count(path)) return false;
    auto it = startup_digests_.find(path);
    if (it == startup_digests_.end()) return false;
    const Bytes* content = fs.content(path);
    return content && sha256_hex(*content) == it->second;
  }

  std::size_t written_count() const { return written_.size(); }

 private:
  std::map<std::string, std::string> startup_digests_;
  std::set<std::string> written_;
};

// Bridges the policy layer's descriptor-keyed question to the manifest.
class ManifestOracle final : public StaticFileOracle {
 public:
  ManifestOracle(const StaticFileManifest* manifest, const FsContext* fs,
                 const FdTranslation* fdmap)
      : manifest_(manifest), fs_(fs), fdmap_(fdmap) {}

  bool verified_static(std::int64_t canon_fd) const override {
    const FdInfo* info = fdmap_->info(canon_fd);
    if (!info || info->cls != FdClass::File) return false;
    return manifest_->verified_static(info->path, *fs_);
  }

 private:
  const StaticFileManifest* manifest_;
  const FsContext* fs_;
  const FdTranslation* fdmap_;
};

// --- side-effect ledger ----------------------------------------------------

enum class EffectKind : std::uint8_t { NetSend, NetRecv, FileWrite, FsMutation };

inline std::string_view effect_kind_name(EffectKind k) {
  switch (k) {
    case EffectKind::NetSend: return "net-send";
    case EffectKind::NetRecv: return "net-recv";
    case EffectKind::FileWrite: return "file-write";
    case EffectKind::FsMutation: return "fs-mutation";
  }
  return "?";
}

struct LedgerRecord {
  std::size_t seq = 0;
  std::string origin;  // variant name
  EffectKind kind = EffectKind::NetSend;
  std::string target;  // path, "socket", ...
  std::string payload_digest;
};

// Append-only record of externally observable effects, owned by the scenario
// runner behind a serialized interface.
class SideEffectLedger {
 public:
  void append(const std::string& origin, EffectKind kind,
              const std::string& target, const Bytes& payload) {
    std::lock_guard lock(mu_);
    records_.push_back(
        {records_.size(), origin, kind, target, sha256_hex(payload)});
  }

  std::vector<LedgerRecord> snapshot() const {
    std::lock_guard lock(mu_);
    return records_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<LedgerRecord> records_;
};

// --- logical programs --------------------------------------------------------

enum class OpCode : std::uint8_t {
  Open, Read, Pread, Write, Close, Fstat, Lseek, Dup, Getcwd,
  Getpid, Getppid, Getuid, Getgid, SchedYield, Nanosleep, Brk,
  MmapAnon, Munmap, Mprotect, Socket, Bind, Listen, Accept, Connect,
  Recvfrom, Sendto, Gettimeofday, ClockGettime, ExitGroup,
};

// One logical syscall intent. Slot numbers are program-level descriptor
// handles: `out_slot` binds the descriptor a call returns, `slot` references
// one bound earlier. Per-platform overrides model benign ABI divergence such
// as choosing legacy open over openat on platforms that have both.
struct Intent {
  OpCode op = OpCode::SchedYield;
  int slot = -1;
  int out_slot = -1;
  std::string path;
  FlagSet flags;
  std::int64_t a = 0, b = 0;  // count/offset/mode/port/whence/code...
  Bytes payload;
  std::uint64_t ptr_value = 0;  // scripted code pointer embedded in payload
  // key "open_style:<platform-name>" -> "open" selects the legacy rendering
  std::map<std::string, std::string> overrides;
};

struct LogicalProgram {
  std::string name;
  std::vector<Intent> intents;
};

struct UnrenderableIntentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BadTriggerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- fault injection -----------------------------------------------------

// A fault mutates exactly one variant's rendered stream, modeling an exploit
// succeeding on one ISA while the others stay healthy.
struct FaultSpec {
  enum class Kind : std::uint8_t {
    FlipPayloadByte,      // XOR one byte of a captured payload buffer
    SubstituteIntent,     // replace the intent at the trigger ordinal
    FlipFlagBit,          // XOR one bit of a raw flags argument
    ExtraSyscall,         // insert an additional intent at the ordinal
    PatchPointerLowByte,  // rewrite the low byte of a scripted code pointer
  };

  std::string variant;
  std::size_t ordinal = 0;
  Kind kind = Kind::FlipPayloadByte;
  std::size_t byte_offset = 0;   // FlipPayloadByte
  int raw_arg_index = 2;         // FlipFlagBit: 0-based raw argument position
  std::uint64_t flag_bit = 0x1;  // FlipFlagBit
  Intent replacement;            // SubstituteIntent / ExtraSyscall
};

// Applies intent-level faults, producing the per-variant program actually run.
inline std::vector<Intent> program_for_variant(
    const LogicalProgram& program, const std::vector<FaultSpec>& faults,
    const std::string& variant) {
  std::vector<Intent> intents = program.intents;
  for (const auto& fault : faults) {
    if (fault.variant != variant) continue;
    if (fault.ordinal >= program.intents.size())
      throw BadTriggerError("fault ordinal " + std::to_string(fault.ordinal) +
                            " beyond program length");
    if (fault.kind == FaultSpec::Kind::SubstituteIntent) {
      intents[fault.ordinal] = fault.replacement;
    } else if (fault.kind == FaultSpec::Kind::ExtraSyscall) {
      intents.insert(intents.begin() + static_cast<std::ptrdiff_t>(fault.ordinal),
                     fault.replacement);
    }
  }
  return intents;
}

// Applies event-level faults to one rendered entry event.
inline void mutate_event(RawSyscallEvent& event, const FaultSpec& fault) {
  switch (fault.kind) {
    case FaultSpec::Kind::FlipPayloadByte:
    case FaultSpec::Kind::PatchPointerLowByte: {
      for (auto& [pos, buf] : event.captured_buffers) {
        if (buf.empty()) continue;
        std::size_t at = fault.kind == FaultSpec::Kind::PatchPointerLowByte
                             ? 0  // scripted pointers sit at the payload head
                             : fault.byte_offset % buf.size();
        buf[at] ^= fault.kind == FaultSpec::Kind::PatchPointerLowByte
                       ? 0x5a
                       : 0x01;
        break;
      }
      break;
    }
    case FaultSpec::Kind::FlipFlagBit: {
      if (static_cast<std::size_t>(fault.raw_arg_index) < event.args.size())
        event.args[static_cast<std::size_t>(fault.raw_arg_index)] ^= fault.flag_bit;
      break;
    }
    case FaultSpec::Kind::SubstituteIntent:
    case FaultSpec::Kind::ExtraSyscall:
      break;  // handled at the intent level
  }
}

// --- the virtual kernel ------------------------------------------------------

// What one executed call produced, in logical (platform-free) terms. The
// renderer turns this into the variant's native observation.
struct LogicalOutcome {
  std::int64_t value = 0;
  std::optional<std::string> error;      // canonical errno name
  std::optional<Bytes> out_bytes;        // read/getcwd/recvfrom data
  std::optional<CanonValue> out_shadow;  // stat/timeval/timespec record
  bool is_new_fd = false;                // value is a freshly assigned raw fd
  FdInfo new_fd_info;
};

struct KernelConfig {
  std::string variant;
  std::int64_t fd_base = 3;
  std::int64_t pid = 1000, ppid = 999, uid = 1000, gid = 1000;
  std::int64_t clock_base = 1700000000;
  std::string cwd = "/app";
  std::string app_root = "/app";
  // Followers create/truncate files in their own private tree when opening
  // for writing; those local mutations are not externally observable and stay
  // out of the ledger. Actual I/O (writes, sends, receives) always records,
  // so a follower wrongly executing an observable call still shows up.
  bool record_fs_mutations = true;
};

// Deterministic scripted stand-in for one variant's OS: its own file tree
// copy, descriptor table, clock, and the scripted external network peer.
class VirtualKernel {
 public:
  VirtualKernel(KernelConfig cfg, FsContext fs, std::deque<Bytes> net_inbound,
                SideEffectLedger* ledger)
      : cfg_(std::move(cfg)), fs_(std::move(fs)),
        net_inbound_(std::move(net_inbound)), ledger_(ledger),
        next_fd_(cfg_.fd_base) {}

  const FsContext& fs() const { return fs_; }
  const KernelConfig& config() const { return cfg_; }

  struct OpenFile {
    std::string path;
    std::int64_t offset = 0;
    bool writable = false;
    bool append = false;
    FdClass cls = FdClass::File;
  };

  const OpenFile* open_file(std::int64_t fd) const {
    auto it = fds_.find(fd);
    return it == fds_.end() ? nullptr : &it->second;
  }

  // Binds a descriptor the variant observed through replication, so later
  // local calls (close, reads under the filesystem bypass) resolve it.
  void adopt_fd(std::int64_t fd, const FdInfo& info) {
    fds_[fd] = OpenFile{info.path, 0, false, false, info.cls};
  }

  void advance_offset(std::int64_t fd, std::int64_t delta) {
    auto it = fds_.find(fd);
    if (it != fds_.end()) it->second.offset += delta;
  }

  void set_offset(std::int64_t fd, std::int64_t offset) {
    auto it = fds_.find(fd);
    if (it != fds_.end()) it->second.offset = offset;
  }

  LogicalOutcome execute(const Intent& intent,
                         const std::map<int, std::int64_t>& slot_fds) {
    switch (intent.op) {
      case OpCode::Open: return do_open(intent);
      case OpCode::Read: return do_read(fd_for(intent, slot_fds), intent.a, true);
      case OpCode::Pread: return do_pread(fd_for(intent, slot_fds), intent.a, intent.b);
      case OpCode::Write: return do_write(fd_for(intent, slot_fds), intent.payload);
      case OpCode::Sendto: return do_send(fd_for(intent, slot_fds), intent);
      case OpCode::Recvfrom: return do_recv(fd_for(intent, slot_fds), intent.a);
      case OpCode::Close: return do_close(fd_for(intent, slot_fds));
      case OpCode::Fstat: return do_fstat(fd_for(intent, slot_fds));
      case OpCode::Lseek: return do_lseek(fd_for(intent, slot_fds), intent.a, intent.b);
      case OpCode::Dup: return do_dup(fd_for(intent, slot_fds));
      case OpCode::Getcwd: return out_bytes_result(to_bytes(cfg_.cwd));
      case OpCode::Getpid: return int_result(cfg_.pid);
      case OpCode::Getppid: return int_result(cfg_.ppid);
      case OpCode::Getuid: return int_result(cfg_.uid);
      case OpCode::Getgid: return int_result(cfg_.gid);
      case OpCode::SchedYield: return int_result(0);
      case OpCode::Nanosleep:
        clock_step_ += intent.a * 1000 + intent.b / 1000000;
        return int_result(0);
      case OpCode::Brk:
        brk_ += intent.a;
        return int_result(static_cast<std::int64_t>(brk_));
      case OpCode::MmapAnon:
        ++maps_;
        return int_result(static_cast<std::int64_t>(0x20000000 + 0x100000 * maps_));
      case OpCode::Munmap:
        if (maps_ > 0) --maps_;
        return int_result(0);
      case OpCode::Mprotect: return int_result(0);
      case OpCode::Socket: return do_socket();
      case OpCode::Bind: return int_result(0);
      case OpCode::Listen: return int_result(0);
      case OpCode::Accept: return do_accept(fd_for(intent, slot_fds));
      case OpCode::Connect: return int_result(0);
      case OpCode::Gettimeofday: return do_time(false);
      case OpCode::ClockGettime: return do_time(true);
      case OpCode::ExitGroup: return int_result(0);
    }
    throw UnrenderableIntentError("unhandled opcode");
  }

 private:
  static LogicalOutcome int_result(std::int64_t v) {
    LogicalOutcome out;
    out.value = v;
    return out;
  }

  static LogicalOutcome err_result(const std::string& name) {
    LogicalOutcome out;
    out.error = name;
    return out;
  }

  static LogicalOutcome out_bytes_result(Bytes b) {
    LogicalOutcome out;
    out.value = static_cast<std::int64_t>(b.size());
    out.out_bytes = std::move(b);
    return out;
  }

  std::int64_t fd_for(const Intent& intent,
                      const std::map<int, std::int64_t>& slot_fds) const {
    auto it = slot_fds.find(intent.slot);
    if (it == slot_fds.end())
      throw UnrenderableIntentError("intent references unbound slot " +
                                    std::to_string(intent.slot));
    return it->second;
  }

  LogicalOutcome do_open(const Intent& intent) {
    std::string path;
    try {
      path = normalize_path(cfg_.cwd, intent.path, cfg_.app_root);
    } catch (const PathEscapeError&) {
      return err_result("ACCES");
    }
    bool want_dir = intent.flags.count("DIRECTORY") > 0;
    bool creat = intent.flags.count("CREAT") > 0;
    bool trunc = intent.flags.count("TRUNC") > 0;
    bool writable = intent.flags.count("WRONLY") > 0 || intent.flags.count("RDWR") > 0;

    if (want_dir || fs_.is_dir(path)) {
      if (!fs_.is_dir(path)) return err_result("NOENT");
      std::int64_t fd = next_fd_++;
      fds_[fd] = OpenFile{path, 0, false, false, FdClass::Dir};
      LogicalOutcome out = int_result(fd);
      out.is_new_fd = true;
      out.new_fd_info = {path, FdClass::Dir};
      return out;
    }
    if (!fs_.is_file(path)) {
      if (!creat) return err_result("NOENT");
      fs_.put_file(path, {});
      if (cfg_.record_fs_mutations)
        ledger_->append(cfg_.variant, EffectKind::FsMutation, path, {});
    } else if (trunc) {
      fs_.truncate(path);
      if (cfg_.record_fs_mutations)
        ledger_->append(cfg_.variant, EffectKind::FsMutation, path, {});
    }
    std::int64_t fd = next_fd_++;
    fds_[fd] = OpenFile{path, 0, writable, intent.flags.count("APPEND") > 0,
                        FdClass::File};
    LogicalOutcome out = int_result(fd);
    out.is_new_fd = true;
    out.new_fd_info = {path, FdClass::File};
    return out;
  }

  LogicalOutcome do_read(std::int64_t fd, std::int64_t count, bool advance) {
    auto it = fds_.find(fd);
    if (it == fds_.end()) return err_result("BADF");
    OpenFile& f = it->second;
    if (f.cls == FdClass::Socket) return do_recv(fd, count);
    const Bytes* content = fs_.content(f.path);
    if (!content) return err_result("IO");
    std::int64_t avail =
        std::max<std::int64_t>(0, static_cast<std::int64_t>(content->size()) - f.offset);
    std::int64_t n = std::min(count, avail);
    Bytes data(content->begin() + f.offset, content->begin() + f.offset + n);
    if (advance) f.offset += n;
    return out_bytes_result(std::move(data));
  }

  LogicalOutcome do_pread(std::int64_t fd, std::int64_t count, std::int64_t off) {
    auto it = fds_.find(fd);
    if (it == fds_.end()) return err_result("BADF");
    const Bytes* content = fs_.content(it->second.path);
    if (!content) return err_result("IO");
    std::int64_t size = static_cast<std::int64_t>(content->size());
    std::int64_t start = std::min(off, size);
    std::int64_t n = std::min(count, size - start);
    return out_bytes_result(
        Bytes(content->begin() + start, content->begin() + start + n));
  }

  LogicalOutcome do_write(std::int64_t fd, const Bytes& payload) {
    auto it = fds_.find(fd);
    if (it == fds_.end()) return err_result("BADF");
    OpenFile& f = it->second;
    if (f.cls == FdClass::Socket) {
      ledger_->append(cfg_.variant, EffectKind::NetSend, "socket", payload);
      return int_result(static_cast<std::int64_t>(payload.size()));
    }
    if (f.cls == FdClass::Std) {
      ledger_->append(cfg_.variant, EffectKind::NetSend, "stdout", payload);
      return int_result(static_cast<std::int64_t>(payload.size()));
    }
    if (!f.writable) return err_result("BADF");
    std::size_t at = f.append && fs_.content(f.path)
                         ? fs_.content(f.path)->size()
                         : static_cast<std::size_t>(f.offset);
    fs_.write_at(f.path, at, payload);
    f.offset = static_cast<std::int64_t>(at + payload.size());
    ledger_->append(cfg_.variant, EffectKind::FileWrite, f.path, payload);
    return int_result(static_cast<std::int64_t>(payload.size()));
  }

  LogicalOutcome do_send(std::int64_t fd, const Intent& intent) {
    auto it = fds_.find(fd);
    if (it == fds_.end()) return err_result("BADF");
    if (it->second.cls != FdClass::Socket) return err_result("NOTSOCK");
    ledger_->append(cfg_.variant, EffectKind::NetSend, "socket", intent.payload);
    return int_result(static_cast<std::int64_t>(intent.payload.size()));
  }

  LogicalOutcome do_recv(std::int64_t fd, std::int64_t count) {
    auto it = fds_.find(fd);
    if (it == fds_.end()) return err_result("BADF");
    if (net_inbound_.empty()) return err_result("AGAIN");
    Bytes data = std::move(net_inbound_.front());
    net_inbound_.pop_front();
    if (static_cast<std::int64_t>(data.size()) > count)
      data.resize(static_cast<std::size_t>(count));
    ledger_->append(cfg_.variant, EffectKind::NetRecv, "socket", data);
    return out_bytes_result(std::move(data));
  }

  LogicalOutcome do_close(std::int64_t fd) {
    if (fds_.erase(fd) == 0) return err_result("BADF");
    return int_result(0);
  }

  LogicalOutcome do_fstat(std::int64_t fd) {
    auto it = fds_.find(fd);
    if (it == fds_.end()) return err_result("BADF");
    const OpenFile& f = it->second;
    std::int64_t size = 0;
    if (const Bytes* content = fs_.content(f.path))
      size = static_cast<std::int64_t>(content->size());
    LogicalOutcome out = int_result(0);
    out.out_shadow = make_stat_shadow(f.path, size);
    return out;
  }

  LogicalOutcome do_lseek(std::int64_t fd, std::int64_t off, std::int64_t whence) {
    auto it = fds_.find(fd);
    if (it == fds_.end()) return err_result("BADF");
    OpenFile& f = it->second;
    std::int64_t size = 0;
    if (const Bytes* content = fs_.content(f.path))
      size = static_cast<std::int64_t>(content->size());
    std::int64_t target = whence == 0 ? off : whence == 1 ? f.offset + off : size + off;
    if (target < 0) return err_result("INVAL");
    f.offset = target;
    return int_result(target);
  }

  LogicalOutcome do_dup(std::int64_t fd) {
    auto it = fds_.find(fd);
    if (it == fds_.end()) return err_result("BADF");
    std::int64_t nfd = next_fd_++;
    fds_[nfd] = it->second;
    LogicalOutcome out = int_result(nfd);
    out.is_new_fd = true;
    out.new_fd_info = {it->second.path, it->second.cls};
    return out;
  }

  LogicalOutcome do_socket() {
    std::int64_t fd = next_fd_++;
    fds_[fd] = OpenFile{"", 0, true, false, FdClass::Socket};
    LogicalOutcome out = int_result(fd);
    out.is_new_fd = true;
    out.new_fd_info = {"", FdClass::Socket};
    return out;
  }

  LogicalOutcome do_accept(std::int64_t fd) {
    auto it = fds_.find(fd);
    if (it == fds_.end()) return err_result("BADF");
    if (it->second.cls != FdClass::Socket) return err_result("NOTSOCK");
    std::int64_t nfd = next_fd_++;
    fds_[nfd] = OpenFile{"", 0, true, false, FdClass::Socket};
    ledger_->append(cfg_.variant, EffectKind::NetRecv, "accept", {});
    LogicalOutcome out = int_result(nfd);
    out.is_new_fd = true;
    out.new_fd_info = {"", FdClass::Socket};
    return out;
  }

  LogicalOutcome do_time(bool nanos) {
    ++clock_step_;
    std::int64_t sec = cfg_.clock_base + clock_step_ / 1000;
    std::int64_t sub = (clock_step_ * 137) % 1000000;
    std::vector<std::pair<std::string, CanonValue>> fields;
    fields.emplace_back("sec", CanonValue::make_int(sec));
    fields.emplace_back(nanos ? "nsec" : "usec",
                        CanonValue::make_int(nanos ? sub * 1000 : sub));
    LogicalOutcome out = int_result(0);
    out.out_shadow = CanonValue::make_shadow(std::move(fields));
    return out;
  }

  // Deterministic metadata: inode and times are properties of the staged
  // tree, identical in every variant's copy (the variant clock never leaks
  // into file metadata).
  CanonValue make_stat_shadow(const std::string& path, std::int64_t size) const {
    constexpr std::int64_t kTreeEpoch = 1690000000;
    Bytes digest = sha256(to_bytes(path));
    std::int64_t ino = 0;
    for (int i = 0; i < 4; ++i) ino = (ino << 8) | digest[static_cast<std::size_t>(i)];
    ino &= 0x7fffffff;
    std::vector<std::pair<std::string, CanonValue>> fields;
    fields.emplace_back("dev", CanonValue::make_int(9));
    fields.emplace_back("ino", CanonValue::make_int(ino));
    fields.emplace_back("mode", CanonValue::make_int(0100644));
    fields.emplace_back("nlink", CanonValue::make_int(1));
    fields.emplace_back("uid", CanonValue::make_int(1000));
    fields.emplace_back("gid", CanonValue::make_int(1000));
    fields.emplace_back("size", CanonValue::make_int(size));
    fields.emplace_back("blksize", CanonValue::make_int(512));
    fields.emplace_back("blocks", CanonValue::make_int((size + 511) / 512));
    fields.emplace_back("atime", CanonValue::make_int(kTreeEpoch));
    fields.emplace_back("mtime", CanonValue::make_int(kTreeEpoch));
    fields.emplace_back("ctime", CanonValue::make_int(kTreeEpoch));
    return CanonValue::make_shadow(std::move(fields));
  }

  KernelConfig cfg_;
  FsContext fs_;
  std::deque<Bytes> net_inbound_;
  SideEffectLedger* ledger_;
  std::map<std::int64_t, OpenFile> fds_;
  std::int64_t next_fd_;
  std::int64_t clock_step_ = 0;
  std::uint64_t brk_ = 0x08000000;
  int maps_ = 0;
};

// --- per-ABI rendering -----------------------------------------------------

struct RenderContext {
  const PlatformSpec* platform = nullptr;
  const StructRegistry* structs = nullptr;
  std::map<int, std::int64_t> slot_fds;  // logical slot -> variant raw fd
  std::uint64_t addr_base = 0x10000;     // fake VA base (address-diverse)
  int mapped_slots = 0;
};

namespace detail {

inline SyscallId op_syscall(OpCode op) {
  switch (op) {
    case OpCode::Open: return SyscallId::OPENAT;
    case OpCode::Read: return SyscallId::READ;
    case OpCode::Pread: return SyscallId::PREAD;
    case OpCode::Write: return SyscallId::WRITE;
    case OpCode::Close: return SyscallId::CLOSE;
    case OpCode::Fstat: return SyscallId::FSTAT;
    case OpCode::Lseek: return SyscallId::LSEEK;
    case OpCode::Dup: return SyscallId::DUP;
    case OpCode::Getcwd: return SyscallId::GETCWD;
    case OpCode::Getpid: return SyscallId::GETPID;
    case OpCode::Getppid: return SyscallId::GETPPID;
    case OpCode::Getuid: return SyscallId::GETUID;
    case OpCode::Getgid: return SyscallId::GETGID;
    case OpCode::SchedYield: return SyscallId::SCHED_YIELD;
    case OpCode::Nanosleep: return SyscallId::NANOSLEEP;
    case OpCode::Brk: return SyscallId::BRK;
    case OpCode::MmapAnon: return SyscallId::MMAP_ANON;
    case OpCode::Munmap: return SyscallId::MUNMAP;
    case OpCode::Mprotect: return SyscallId::MPROTECT;
    case OpCode::Socket: return SyscallId::SOCKET;
    case OpCode::Bind: return SyscallId::BIND;
    case OpCode::Listen: return SyscallId::LISTEN;
    case OpCode::Accept: return SyscallId::ACCEPT;
    case OpCode::Connect: return SyscallId::CONNECT;
    case OpCode::Recvfrom: return SyscallId::RECVFROM;
    case OpCode::Sendto: return SyscallId::SENDTO;
    case OpCode::Gettimeofday: return SyscallId::GETTIMEOFDAY;
    case OpCode::ClockGettime: return SyscallId::CLOCK_GETTIME;
    case OpCode::ExitGroup: return SyscallId::EXIT_GROUP;
  }
  throw UnrenderableIntentError("unknown opcode");
}

inline std::uint64_t raw_number_or_throw(const PlatformSpec& platform,
                                         SyscallId id) {
  auto raw = platform.raw_number_for(id);
  if (!raw)
    throw UnrenderableIntentError(std::string(syscall_id_name(id)) +
                                  " is not renderable on " + platform.name);
  return *raw;
}

inline std::int64_t raw_fd(const RenderContext& ctx, int slot) {
  auto it = ctx.slot_fds.find(slot);
  if (it == ctx.slot_fds.end())
    throw UnrenderableIntentError("unbound slot " + std::to_string(slot));
  return it->second;
}

inline Bytes native_sockaddr(const RenderContext& ctx, std::int64_t port) {
  std::vector<std::pair<std::string, CanonValue>> fields;
  fields.emplace_back("family", CanonValue::make_int(2));  // AF_INET
  fields.emplace_back("port", CanonValue::make_int(port));
  fields.emplace_back("addr", CanonValue::make_int(0x7f000001));
  fields.emplace_back("zero", CanonValue::make_buffer(Bytes(8, 0)));
  return write_shadow(*ctx.platform, ctx.structs->at("sockaddr_in"),
                      CanonValue::make_shadow(std::move(fields)));
}

inline Bytes native_timespec(const RenderContext& ctx, std::int64_t sec,
                             std::int64_t nsec) {
  std::vector<std::pair<std::string, CanonValue>> fields;
  fields.emplace_back("sec", CanonValue::make_int(sec));
  fields.emplace_back("nsec", CanonValue::make_int(nsec));
  return write_shadow(*ctx.platform, ctx.structs->at("timespec"),
                      CanonValue::make_shadow(std::move(fields)));
}

}  // namespace detail

// Renders one intent into the platform-local entry event: platform syscall
// numbers, raw flag encodings, native struct layouts, platform-specific
// descriptor values, and fake (variant-specific) buffer addresses.
inline RawSyscallEvent render_entry(const Intent& intent, RenderContext& ctx) {
  const PlatformSpec& plat = *ctx.platform;
  RawSyscallEvent ev;
  ev.platform = &plat;
  ev.direction = Direction::Entry;
  std::uint64_t addr = ctx.addr_base + 0x1000;

  auto flags_raw = [&](SyscallId id, int pos, const FlagSet& flags) {
    return denormalize_flags(plat, id, pos, flags);
  };

  switch (intent.op) {
    case OpCode::Open: {
      bool legacy = false;
      auto style = intent.overrides.find("open_style:" + plat.name);
      if (style != intent.overrides.end() && style->second == "open")
        legacy = plat.folded_open_number().has_value();
      if (legacy) {
        ev.raw_number = *plat.folded_open_number();
        ev.args = {addr, flags_raw(SyscallId::OPENAT, 3, intent.flags),
                   static_cast<std::uint64_t>(intent.b)};
        ev.captured_buffers[0] = to_bytes(intent.path);
      } else {
        ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::OPENAT);
        ev.args = {static_cast<std::uint64_t>(plat.at_fdcwd), addr,
                   flags_raw(SyscallId::OPENAT, 3, intent.flags),
                   static_cast<std::uint64_t>(intent.b)};
        ev.captured_buffers[1] = to_bytes(intent.path);
      }
      break;
    }
    case OpCode::Read:
    case OpCode::Recvfrom: {
      SyscallId id = detail::op_syscall(intent.op);
      ev.raw_number = detail::raw_number_or_throw(plat, id);
      std::uint64_t fd =
          static_cast<std::uint64_t>(detail::raw_fd(ctx, intent.slot));
      if (intent.op == OpCode::Read) {
        ev.args = {fd, addr, static_cast<std::uint64_t>(intent.a)};
      } else {
        ev.args = {fd, addr, static_cast<std::uint64_t>(intent.a),
                   flags_raw(SyscallId::RECVFROM, 4, intent.flags), 0, 0};
      }
      break;
    }
    case OpCode::Pread: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::PREAD);
      ev.args = {static_cast<std::uint64_t>(detail::raw_fd(ctx, intent.slot)),
                 addr, static_cast<std::uint64_t>(intent.a),
                 static_cast<std::uint64_t>(intent.b)};
      break;
    }
    case OpCode::Write: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::WRITE);
      ev.args = {static_cast<std::uint64_t>(detail::raw_fd(ctx, intent.slot)),
                 addr, intent.payload.size()};
      ev.captured_buffers[1] = intent.payload;
      break;
    }
    case OpCode::Sendto: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::SENDTO);
      Bytes payload = intent.payload;
      if (intent.ptr_value != 0) {
        // Scripted code pointer at the payload head, in native byte order.
        Bytes ptr(8, 0);
        bool big = plat.endianness == Endianness::Big;
        write_scalar(ptr, 0, 8, big, intent.ptr_value);
        payload.insert(payload.begin(), ptr.begin(), ptr.end());
      }
      ev.args = {static_cast<std::uint64_t>(detail::raw_fd(ctx, intent.slot)),
                 addr, payload.size(),
                 flags_raw(SyscallId::SENDTO, 4, intent.flags), 0, 0};
      ev.captured_buffers[1] = std::move(payload);
      break;
    }
    case OpCode::Close:
    case OpCode::Dup: {
      ev.raw_number = detail::raw_number_or_throw(plat, detail::op_syscall(intent.op));
      ev.args = {static_cast<std::uint64_t>(detail::raw_fd(ctx, intent.slot))};
      break;
    }
    case OpCode::Fstat: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::FSTAT);
      ev.args = {static_cast<std::uint64_t>(detail::raw_fd(ctx, intent.slot)), addr};
      break;
    }
    case OpCode::Lseek: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::LSEEK);
      ev.args = {static_cast<std::uint64_t>(detail::raw_fd(ctx, intent.slot)),
                 static_cast<std::uint64_t>(intent.a),
                 static_cast<std::uint64_t>(intent.b)};
      break;
    }
    case OpCode::Getcwd: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::GETCWD);
      ev.args = {addr, static_cast<std::uint64_t>(intent.a ? intent.a : 512)};
      break;
    }
    case OpCode::Getpid:
    case OpCode::Getppid:
    case OpCode::Getuid:
    case OpCode::Getgid:
    case OpCode::SchedYield: {
      ev.raw_number = detail::raw_number_or_throw(plat, detail::op_syscall(intent.op));
      break;
    }
    case OpCode::Nanosleep: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::NANOSLEEP);
      ev.args = {addr, 0};
      ev.captured_buffers[0] = detail::native_timespec(ctx, intent.a, intent.b);
      break;
    }
    case OpCode::Brk: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::BRK);
      ev.args = {intent.a == 0 ? 0 : ctx.addr_base + static_cast<std::uint64_t>(intent.a)};
      break;
    }
    case OpCode::MmapAnon: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::MMAP_ANON);
      ev.args = {0, static_cast<std::uint64_t>(intent.a),
                 flags_raw(SyscallId::MMAP_ANON, 3, {"PROT_READ", "PROT_WRITE"}),
                 flags_raw(SyscallId::MMAP_ANON, 4, {"MAP_ANON", "MAP_PRIVATE"}),
                 static_cast<std::uint64_t>(-1), 0};
      break;
    }
    case OpCode::Munmap:
    case OpCode::Mprotect: {
      ev.raw_number = detail::raw_number_or_throw(plat, detail::op_syscall(intent.op));
      std::uint64_t map_addr = ctx.addr_base + 0x200000;
      if (intent.op == OpCode::Munmap) {
        ev.args = {map_addr, static_cast<std::uint64_t>(intent.a)};
      } else {
        ev.args = {map_addr, static_cast<std::uint64_t>(intent.a),
                   flags_raw(SyscallId::MPROTECT, 3, {"PROT_READ"})};
      }
      break;
    }
    case OpCode::Socket: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::SOCKET);
      ev.args = {2, 1, 0};  // AF_INET, SOCK_STREAM
      break;
    }
    case OpCode::Bind:
    case OpCode::Connect: {
      ev.raw_number = detail::raw_number_or_throw(plat, detail::op_syscall(intent.op));
      Bytes sa = detail::native_sockaddr(ctx, intent.a);
      ev.args = {static_cast<std::uint64_t>(detail::raw_fd(ctx, intent.slot)),
                 addr, sa.size()};
      ev.captured_buffers[1] = std::move(sa);
      break;
    }
    case OpCode::Listen: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::LISTEN);
      ev.args = {static_cast<std::uint64_t>(detail::raw_fd(ctx, intent.slot)),
                 static_cast<std::uint64_t>(intent.a ? intent.a : 16)};
      break;
    }
    case OpCode::Accept: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::ACCEPT);
      ev.args = {static_cast<std::uint64_t>(detail::raw_fd(ctx, intent.slot)), 0, 0};
      break;
    }
    case OpCode::Gettimeofday: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::GETTIMEOFDAY);
      ev.args = {addr, 0};
      break;
    }
    case OpCode::ClockGettime: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::CLOCK_GETTIME);
      ev.args = {0, addr};
      break;
    }
    case OpCode::ExitGroup: {
      ev.raw_number = detail::raw_number_or_throw(plat, SyscallId::EXIT_GROUP);
      ev.args = {static_cast<std::uint64_t>(intent.a)};
      break;
    }
  }
  return ev;
}

// Renders the native exit observation for an executed call: errno encoding,
// output buffers, and native struct images.
inline RawSyscallEvent render_exit(const Intent& intent,
                                   const RawSyscallEvent& entry,
                                   const LogicalOutcome& outcome,
                                   RenderContext& ctx) {
  const PlatformSpec& plat = *ctx.platform;
  RawSyscallEvent ev = entry;
  ev.direction = Direction::Exit;
  ev.captured_buffers.clear();

  bool failed = outcome.error.has_value();
  if (failed) {
    std::int64_t raw_errno = 5;  // IO fallback
    for (const auto& [raw, name] : plat.errno_table)
      if (name == *outcome.error) {
        raw_errno = raw;
        break;
      }
    ev.raw_result = -raw_errno;
  } else {
    ev.raw_result = outcome.value;
  }

  // Input buffers stay attached at exit; output buffers exist only when the
  // call succeeded and actually produced them.
  SyscallId id = detail::op_syscall(intent.op);
  const SyscallSig& sig = syscall_signature(id);
  bool folded = intent.op == OpCode::Open &&
                lookup_canonical_id(plat, entry.raw_number).fold_open;
  int shift = folded ? -1 : 0;
  for (std::size_t pos = 0; pos < sig.args.size(); ++pos) {
    int raw_pos = static_cast<int>(pos) + shift;
    if (raw_pos < 0) continue;
    const ArgSpec& spec = sig.args[pos];
    if (!failed && spec.kind == ArgKind::OutBuf && outcome.out_bytes) {
      ev.captured_buffers[raw_pos] = *outcome.out_bytes;
    } else if (!failed && spec.kind == ArgKind::OutShadow && outcome.out_shadow) {
      ev.captured_buffers[raw_pos] = write_shadow(
          plat, ctx.structs->at(spec.struct_name), *outcome.out_shadow);
    } else if (spec.kind == ArgKind::InBuf || spec.kind == ArgKind::PathBuf ||
               spec.kind == ArgKind::InShadow) {
      auto it = entry.captured_buffers.find(raw_pos);
      if (it != entry.captured_buffers.end())
        ev.captured_buffers[raw_pos] = it->second;
    }
  }
  return ev;
}

// Native, monitor-free rendering of a whole program: what this variant would
// emit running standalone. Exercises all four expected-divergence categories
// without any cross-checking machinery.
inline std::vector<RawSyscallEvent> render_variant(
    const LogicalProgram& program, const PlatformSpec& platform,
    const StructRegistry& structs, const FsContext& initial_fs,
    const std::deque<Bytes>& net_inbound, KernelConfig kernel_cfg) {
  SideEffectLedger scratch_ledger;
  VirtualKernel kernel(kernel_cfg, initial_fs, net_inbound, &scratch_ledger);
  RenderContext ctx;
  ctx.platform = &platform;
  ctx.structs = &structs;
  ctx.addr_base = 0x10000 + (std::hash<std::string>{}(platform.name) & 0xff) * 0x10000;

  std::vector<RawSyscallEvent> events;
  for (const auto& intent : program.intents) {
    RawSyscallEvent entry = render_entry(intent, ctx);
    events.push_back(entry);
    if (intent.op == OpCode::ExitGroup) break;
    LogicalOutcome outcome = kernel.execute(intent, ctx.slot_fds);
    if (!outcome.error && outcome.is_new_fd && intent.out_slot >= 0)
      ctx.slot_fds[intent.out_slot] = outcome.value;
    events.push_back(render_exit(intent, entry, outcome, ctx));
  }
  return events;
}

}  // namespace nvx
