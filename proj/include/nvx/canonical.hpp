// Conversion of platform-local syscall events into the platform-independent
// states that monitors compare: syscall-number mapping, legacy-open folding,
// path unification, flag normalization, shadow-struct conversion, descriptor
// translation, and the deterministic byte serialization embedded in STATE
// messages.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvx/bytes.hpp"
#include "nvx/platform.hpp"

namespace nvx {

enum class Direction : std::uint8_t { Entry, Exit };

// Canonical descriptor id for the AT_FDCWD token. Variant-local AT_FDCWD
// values map here, as do dirfd arguments once a path has been fully
// resolved.
inline constexpr std::int64_t kCanonAtCwd = -100;

enum class FdClass : std::uint8_t { Std, File, Dir, Socket, Unknown };

inline std::string_view fd_class_name(FdClass c) {
  switch (c) {
    case FdClass::Std: return "std";
    case FdClass::File: return "file";
    case FdClass::Dir: return "dir";
    case FdClass::Socket: return "socket";
    case FdClass::Unknown: return "unknown";
  }
  return "?";
}

// --- raw events ------------------------------------------------------------

struct RawSyscallEvent {
  const PlatformSpec* platform = nullptr;
  std::uint64_t raw_number = 0;
  std::vector<std::uint64_t> args;       // raw register values, arg 1 first
  std::map<int, Bytes> captured_buffers; // keyed by 0-based position in args
  Direction direction = Direction::Entry;
  std::optional<std::int64_t> raw_result;  // exit events only
};

// --- canonical values ----------------------------------------------------

enum class ValueKind : std::uint8_t {
  Int,
  Flags,
  Path,
  Fd,
  Buffer,
  Shadow,
  PtrTag,
};

// Tagged canonical value. Shadow values carry named fields in definition
// order; pointer-typed data is reduced to a null/non-null tag so no virtual
// address ever reaches a comparison.
struct CanonValue {
  ValueKind kind = ValueKind::Int;
  std::int64_t int_value = 0;   // Int; Fd canonical id
  FdClass fd_class = FdClass::Unknown;
  FlagSet flags;
  std::string text;             // Path
  Bytes bytes;                  // Buffer
  std::vector<std::pair<std::string, CanonValue>> fields;  // Shadow
  bool nonnull = false;         // PtrTag

  static CanonValue make_int(std::int64_t v) {
    CanonValue out;
    out.kind = ValueKind::Int;
    out.int_value = v;
    return out;
  }
  static CanonValue make_flags(FlagSet f) {
    CanonValue out;
    out.kind = ValueKind::Flags;
    out.flags = std::move(f);
    return out;
  }
  static CanonValue make_path(std::string p) {
    CanonValue out;
    out.kind = ValueKind::Path;
    out.text = std::move(p);
    return out;
  }
  static CanonValue make_fd(std::int64_t id, FdClass cls) {
    CanonValue out;
    out.kind = ValueKind::Fd;
    out.int_value = id;
    out.fd_class = cls;
    return out;
  }
  static CanonValue make_buffer(Bytes b) {
    CanonValue out;
    out.kind = ValueKind::Buffer;
    out.bytes = std::move(b);
    return out;
  }
  static CanonValue make_ptr(bool nonnull) {
    CanonValue out;
    out.kind = ValueKind::PtrTag;
    out.nonnull = nonnull;
    return out;
  }
  static CanonValue make_shadow(
      std::vector<std::pair<std::string, CanonValue>> fields) {
    CanonValue out;
    out.kind = ValueKind::Shadow;
    out.fields = std::move(fields);
    return out;
  }
};

// --- canonical results -----------------------------------------------------

enum class ResultKind : std::uint8_t { Int, Fd, Ptr, None };

struct CanonResult {
  bool is_error = false;
  std::string errno_name;       // when is_error
  ResultKind kind = ResultKind::Int;
  std::int64_t value = 0;       // Int: plain; Fd: canonical id; Ptr: 0/1

  static CanonResult ok_int(std::int64_t v) {
    return CanonResult{false, "", ResultKind::Int, v};
  }
  static CanonResult ok_fd(std::int64_t canon) {
    return CanonResult{false, "", ResultKind::Fd, canon};
  }
  static CanonResult ok_ptr(bool nonnull) {
    return CanonResult{false, "", ResultKind::Ptr, nonnull ? 1 : 0};
  }
  static CanonResult err(std::string name) {
    return CanonResult{true, std::move(name), ResultKind::Int, 0};
  }
};

struct CanonicalSyscallState {
  SyscallId id = SyscallId::READ;
  Direction direction = Direction::Entry;
  std::vector<CanonValue> args;
  std::optional<CanonResult> result;  // exit states only
};

// --- verdicts ----------------------------------------------------------------

enum class DivergenceReason : std::uint8_t {
  SyscallIdMismatch,
  ArgCountMismatch,
  ValueMismatch,
  BufferMismatch,
  UnknownSyscall,
  UnknownFlags,
};

inline std::string_view divergence_reason_name(DivergenceReason r) {
  switch (r) {
    case DivergenceReason::SyscallIdMismatch: return "SyscallIdMismatch";
    case DivergenceReason::ArgCountMismatch: return "ArgCountMismatch";
    case DivergenceReason::ValueMismatch: return "ValueMismatch";
    case DivergenceReason::BufferMismatch: return "BufferMismatch";
    case DivergenceReason::UnknownSyscall: return "UnknownSyscall";
    case DivergenceReason::UnknownFlags: return "UnknownFlags";
  }
  return "?";
}

inline std::optional<DivergenceReason> divergence_reason_from_name(
    std::string_view name) {
  for (auto r : {DivergenceReason::SyscallIdMismatch,
                 DivergenceReason::ArgCountMismatch,
                 DivergenceReason::ValueMismatch,
                 DivergenceReason::BufferMismatch,
                 DivergenceReason::UnknownSyscall,
                 DivergenceReason::UnknownFlags}) {
    if (divergence_reason_name(r) == name) return r;
  }
  return std::nullopt;
}

struct Divergence {
  DivergenceReason reason;
  int arg_pos = 0;                 // 1-based argument position; 0 when n/a
  std::int64_t buffer_offset = -1; // first differing byte, BufferMismatch only
  std::string detail;
};

struct Verdict {
  std::optional<Divergence> divergence;

  bool match() const { return !divergence.has_value(); }
  static Verdict matched() { return Verdict{}; }
  static Verdict diverged(Divergence d) { return Verdict{std::move(d)}; }
};

// --- errors ------------------------------------------------------------------

struct CanonicalizationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PathEscapeError : CanonicalizationError {
  explicit PathEscapeError(const std::string& path)
      : CanonicalizationError("path escapes application root: " + path) {}
};

struct ShadowBufferError : CanonicalizationError {
  using CanonicalizationError::CanonicalizationError;
};

// Maps a canonicalization failure onto the machine-readable divergence that
// monitors report.
inline Divergence divergence_from_exception(const std::exception& e) {
  if (auto* unknown = dynamic_cast<const UnknownSyscallError*>(&e))
    return {DivergenceReason::UnknownSyscall, 0, -1, unknown->what()};
  if (auto* flags = dynamic_cast<const UnknownFlagBitsError*>(&e))
    return {DivergenceReason::UnknownFlags, 0, -1, flags->what()};
  return {DivergenceReason::ValueMismatch, 0, -1, e.what()};
}

// --- descriptor translation ----------------------------------------------

struct FdInfo {
  std::string path;  // empty for non-filesystem descriptors
  FdClass cls = FdClass::Unknown;
};

// Variant-local descriptor numbers -> canonical descriptor ids. Canonical
// ids are assigned in program order of successful opens; 0,1,2 are the
// preassigned stdio descriptors. Owned by exactly one monitor and mutated
// only between syscall events.
class FdTranslation {
 public:
  FdTranslation() {
    for (std::int64_t fd = 0; fd < 3; ++fd) {
      raw_to_canon_[fd] = fd;
      info_[fd] = {"", FdClass::Std};
    }
  }

  std::int64_t register_open(std::int64_t raw_fd, FdInfo info) {
    std::int64_t canon = next_++;
    raw_to_canon_[raw_fd] = canon;
    info_[canon] = std::move(info);
    return canon;
  }

  // Binds a replicated descriptor: the variant observes the canonical id
  // itself, so raw == canon from that variant's point of view.
  void register_injected(std::int64_t canon, FdInfo info) {
    raw_to_canon_[canon] = canon;
    info_[canon] = std::move(info);
    next_ = std::max(next_, canon + 1);
  }

  void close_raw(std::int64_t raw_fd) {
    auto it = raw_to_canon_.find(raw_fd);
    if (it == raw_to_canon_.end()) return;
    info_.erase(it->second);
    raw_to_canon_.erase(it);
  }

  std::optional<std::int64_t> canon_of(std::int64_t raw_fd) const {
    auto it = raw_to_canon_.find(raw_fd);
    if (it == raw_to_canon_.end()) return std::nullopt;
    return it->second;
  }

  const FdInfo* info(std::int64_t canon) const {
    auto it = info_.find(canon);
    return it == info_.end() ? nullptr : &it->second;
  }

  std::int64_t next_canonical() const { return next_; }

 private:
  std::map<std::int64_t, std::int64_t> raw_to_canon_;
  std::map<std::int64_t, FdInfo> info_;
  std::int64_t next_ = 3;
};

// --- syscall signatures ------------------------------------------------------

enum class ArgKind : std::uint8_t {
  Int,       // plain integer, compared as i64
  Fd,        // descriptor, translated through FdTranslation
  DirFd,     // descriptor or AT_FDCWD, resolved during path unification
  PathBuf,   // NUL-free pathname bytes in captured_buffers
  Flags,     // bitmask, normalized through the platform flag table
  InBuf,     // input payload captured at entry
  OutBuf,    // output buffer: pointer tag at entry, content bytes at exit
  InShadow,  // native-layout struct captured at entry
  OutShadow, // native-layout struct captured at exit
  Ptr,       // pointer compared as null/non-null only
};

struct ArgSpec {
  ArgKind kind;
  const char* struct_name = nullptr;  // InShadow/OutShadow
};

struct SyscallSig {
  std::vector<ArgSpec> args;
  ResultKind result = ResultKind::Int;
};

// Canonical argument schema per syscall. Positions are canonical (OPENAT
// form); legacy open events are shifted into this shape during folding.
inline const SyscallSig& syscall_signature(SyscallId id) {
  static const std::map<SyscallId, SyscallSig> sigs = [] {
    std::map<SyscallId, SyscallSig> m;
    m[SyscallId::READ] = {{{ArgKind::Fd}, {ArgKind::OutBuf}, {ArgKind::Int}},
                          ResultKind::Int};
    m[SyscallId::WRITE] = {{{ArgKind::Fd}, {ArgKind::InBuf}, {ArgKind::Int}},
                           ResultKind::Int};
    m[SyscallId::PREAD] = {{{ArgKind::Fd}, {ArgKind::OutBuf}, {ArgKind::Int},
                            {ArgKind::Int}},
                           ResultKind::Int};
    m[SyscallId::OPENAT] = {{{ArgKind::DirFd}, {ArgKind::PathBuf},
                             {ArgKind::Flags}, {ArgKind::Int}},
                            ResultKind::Fd};
    m[SyscallId::CLOSE] = {{{ArgKind::Fd}}, ResultKind::Int};
    m[SyscallId::FSTAT] = {{{ArgKind::Fd}, {ArgKind::OutShadow, "stat"}},
                           ResultKind::Int};
    m[SyscallId::LSEEK] = {{{ArgKind::Fd}, {ArgKind::Int}, {ArgKind::Int}},
                           ResultKind::Int};
    m[SyscallId::DUP] = {{{ArgKind::Fd}}, ResultKind::Fd};
    m[SyscallId::GETCWD] = {{{ArgKind::OutBuf}, {ArgKind::Int}},
                            ResultKind::Int};
    m[SyscallId::GETPID] = {{}, ResultKind::Int};
    m[SyscallId::GETPPID] = {{}, ResultKind::Int};
    m[SyscallId::GETUID] = {{}, ResultKind::Int};
    m[SyscallId::GETGID] = {{}, ResultKind::Int};
    m[SyscallId::SCHED_YIELD] = {{}, ResultKind::Int};
    m[SyscallId::NANOSLEEP] = {{{ArgKind::InShadow, "timespec"}, {ArgKind::Ptr}},
                               ResultKind::Int};
    m[SyscallId::BRK] = {{{ArgKind::Ptr}}, ResultKind::Ptr};
    m[SyscallId::MMAP_ANON] = {{{ArgKind::Ptr}, {ArgKind::Int}, {ArgKind::Flags},
                                {ArgKind::Flags}, {ArgKind::Int}, {ArgKind::Int}},
                               ResultKind::Ptr};
    m[SyscallId::MUNMAP] = {{{ArgKind::Ptr}, {ArgKind::Int}}, ResultKind::Int};
    m[SyscallId::MPROTECT] = {{{ArgKind::Ptr}, {ArgKind::Int}, {ArgKind::Flags}},
                              ResultKind::Int};
    m[SyscallId::SOCKET] = {{{ArgKind::Int}, {ArgKind::Int}, {ArgKind::Int}},
                            ResultKind::Fd};
    m[SyscallId::BIND] = {{{ArgKind::Fd}, {ArgKind::InShadow, "sockaddr_in"},
                           {ArgKind::Int}},
                          ResultKind::Int};
    m[SyscallId::LISTEN] = {{{ArgKind::Fd}, {ArgKind::Int}}, ResultKind::Int};
    m[SyscallId::ACCEPT] = {{{ArgKind::Fd}, {ArgKind::Ptr}, {ArgKind::Ptr}},
                            ResultKind::Fd};
    m[SyscallId::CONNECT] = {{{ArgKind::Fd}, {ArgKind::InShadow, "sockaddr_in"},
                              {ArgKind::Int}},
                             ResultKind::Int};
    m[SyscallId::RECVFROM] = {{{ArgKind::Fd}, {ArgKind::OutBuf}, {ArgKind::Int},
                               {ArgKind::Flags}, {ArgKind::Ptr}, {ArgKind::Ptr}},
                              ResultKind::Int};
    m[SyscallId::SENDTO] = {{{ArgKind::Fd}, {ArgKind::InBuf}, {ArgKind::Int},
                             {ArgKind::Flags}, {ArgKind::Ptr}, {ArgKind::Int}},
                            ResultKind::Int};
    m[SyscallId::GETTIMEOFDAY] = {{{ArgKind::OutShadow, "timeval"}, {ArgKind::Ptr}},
                                  ResultKind::Int};
    m[SyscallId::CLOCK_GETTIME] = {{{ArgKind::Int}, {ArgKind::OutShadow, "timespec"}},
                                   ResultKind::Int};
    m[SyscallId::EXIT_GROUP] = {{{ArgKind::Int}}, ResultKind::None};
    return m;
  }();
  return sigs.at(id);
}

// --- shadow structs -------------------------------------------------------

using StructRegistry = std::map<std::string, StructDef>;

// Struct shapes referenced by the syscall signatures. Field types are
// abstract (long/ulong/ptr), so each platform's metrics decide the native
// byte image; be16/be32 fields keep network byte order on every platform.
inline StructRegistry default_struct_registry() {
  StructRegistry reg;
  reg["stat"] = StructDef{
      "stat",
      {{"dev", PrimType::ULong},   {"ino", PrimType::ULong},
       {"mode", PrimType::U32},    {"nlink", PrimType::ULong},
       {"uid", PrimType::U32},     {"gid", PrimType::U32},
       {"size", PrimType::Long},   {"blksize", PrimType::Long},
       {"blocks", PrimType::Long}, {"atime", PrimType::Long},
       {"mtime", PrimType::Long},  {"ctime", PrimType::Long}}};
  reg["timeval"] = StructDef{
      "timeval", {{"sec", PrimType::Long}, {"usec", PrimType::Long}}};
  reg["timespec"] = StructDef{
      "timespec", {{"sec", PrimType::Long}, {"nsec", PrimType::Long}}};
  reg["sockaddr_in"] = StructDef{"sockaddr_in",
                                 {{"family", PrimType::U16},
                                  {"port", PrimType::Be16},
                                  {"addr", PrimType::Be32},
                                  {"zero", PrimType::U8, 8}}};
  return reg;
}

inline std::uint64_t read_scalar(const Bytes& buf, std::size_t offset,
                                 std::uint32_t size, bool big_endian) {
  std::uint64_t v = 0;
  for (std::uint32_t i = 0; i < size; ++i) {
    std::size_t at = big_endian ? offset + size - 1 - i : offset + i;
    v |= static_cast<std::uint64_t>(buf[at]) << (8 * i);
  }
  return v;
}

inline void write_scalar(Bytes& buf, std::size_t offset, std::uint32_t size,
                         bool big_endian, std::uint64_t v) {
  for (std::uint32_t i = 0; i < size; ++i) {
    std::size_t at = big_endian ? offset + size - 1 - i : offset + i;
    buf[at] = static_cast<std::uint8_t>(v >> (8 * i));
  }
}

inline std::int64_t sign_extend(std::uint64_t v, std::uint32_t size) {
  if (size >= 8) return static_cast<std::int64_t>(v);
  std::uint64_t sign_bit = 1ull << (8 * size - 1);
  if (v & sign_bit) v |= ~((sign_bit << 1) - 1);
  return static_cast<std::int64_t>(v);
}

// Re-reads a native-layout struct image into the platform-independent
// shadow form: scalars widened to i64 per the platform byte order, pointers
// reduced to null/non-null, arrays re-encoded element-wise little-endian.
inline CanonValue read_shadow(const PlatformSpec& platform, const StructDef& def,
                              const Bytes& native) {
  StructLayout layout = compute_struct_layout(platform, def);
  if (native.size() < layout.size)
    throw ShadowBufferError("native buffer for " + def.name + " is " +
                            std::to_string(native.size()) + " bytes, layout needs " +
                            std::to_string(layout.size));
  bool big = platform.endianness == Endianness::Big;
  std::vector<std::pair<std::string, CanonValue>> fields;
  for (std::size_t i = 0; i < def.fields.size(); ++i) {
    const FieldDef& f = def.fields[i];
    const TypeMetrics& m = platform.metrics_for(f.type);
    std::size_t offset = layout.offsets[i];
    bool field_big = big;
    if (f.type == PrimType::Be16 || f.type == PrimType::Be32) field_big = true;
    if (f.type == PrimType::Ptr) {
      std::uint64_t v = read_scalar(native, offset, m.size, big);
      fields.emplace_back(f.name, CanonValue::make_ptr(v != 0));
    } else if (f.array_len > 1) {
      Bytes normalized;
      normalized.reserve(f.array_len * m.size);
      for (std::uint32_t e = 0; e < f.array_len; ++e) {
        std::uint64_t v =
            read_scalar(native, offset + e * m.size, m.size, field_big);
        for (std::uint32_t b = 0; b < m.size; ++b)
          normalized.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
      }
      fields.emplace_back(f.name, CanonValue::make_buffer(std::move(normalized)));
    } else {
      std::uint64_t v = read_scalar(native, offset, m.size, field_big);
      std::int64_t iv = prim_is_signed(f.type)
                            ? sign_extend(v, m.size)
                            : static_cast<std::int64_t>(v);
      fields.emplace_back(f.name, CanonValue::make_int(iv));
    }
  }
  return CanonValue::make_shadow(std::move(fields));
}

// Inverse of read_shadow: renders a shadow value into the native byte image
// of the given platform. Pointer fields become 0 or 1 (any non-null marker
// works, concrete addresses are never reconstructed).
inline Bytes write_shadow(const PlatformSpec& platform, const StructDef& def,
                          const CanonValue& shadow) {
  if (shadow.kind != ValueKind::Shadow)
    throw ShadowBufferError("expected shadow value for " + def.name);
  if (shadow.fields.size() != def.fields.size())
    throw ShadowBufferError("field count mismatch for " + def.name);
  StructLayout layout = compute_struct_layout(platform, def);
  Bytes native(layout.size, 0);
  bool big = platform.endianness == Endianness::Big;
  for (std::size_t i = 0; i < def.fields.size(); ++i) {
    const FieldDef& f = def.fields[i];
    const TypeMetrics& m = platform.metrics_for(f.type);
    const CanonValue& v = shadow.fields[i].second;
    std::size_t offset = layout.offsets[i];
    bool field_big = big;
    if (f.type == PrimType::Be16 || f.type == PrimType::Be32) field_big = true;
    if (f.type == PrimType::Ptr) {
      write_scalar(native, offset, m.size, big, v.nonnull ? 1 : 0);
    } else if (f.array_len > 1) {
      if (v.kind != ValueKind::Buffer || v.bytes.size() != f.array_len * m.size)
        throw ShadowBufferError("array field " + f.name + " has wrong shape");
      for (std::uint32_t e = 0; e < f.array_len; ++e) {
        std::uint64_t elem = 0;
        for (std::uint32_t b = 0; b < m.size; ++b)
          elem |= static_cast<std::uint64_t>(v.bytes[e * m.size + b]) << (8 * b);
        write_scalar(native, offset + e * m.size, m.size, field_big, elem);
      }
    } else {
      write_scalar(native, offset, m.size, field_big,
                   static_cast<std::uint64_t>(v.int_value));
    }
  }
  return native;
}

// --- path unification ------------------------------------------------------

// Lexical normalization: absolute, no ".", "..", or duplicate separators.
inline std::string normalize_path(const std::string& base_dir,
                                  const std::string& path,
                                  const std::string& app_root) {
  std::string joined = path;
  if (path.empty() || path[0] != '/') joined = base_dir + "/" + path;
  std::vector<std::string> parts;
  for (const auto& seg : split_on(joined, '/')) {
    if (seg.empty() || seg == ".") continue;
    if (seg == "..") {
      if (parts.empty()) throw PathEscapeError(path);
      parts.pop_back();
      continue;
    }
    parts.push_back(seg);
  }
  std::string out;
  for (const auto& seg : parts) out += "/" + seg;
  if (out.empty()) out = "/";
  if (out != app_root && out.rfind(app_root + "/", 0) != 0)
    throw PathEscapeError(path);
  return out;
}

// --- canonicalization ----------------------------------------------------

// Everything canonicalize needs from its environment: the variant's working
// directory, the configured application root, the shadow struct registry and
// the monitor-owned descriptor translation.
struct CanonContext {
  std::string app_root = "/app";
  std::string cwd = "/app";
  const StructRegistry* structs = nullptr;
  FdTranslation* fdmap = nullptr;
};

namespace detail {

inline const Bytes& captured_or_throw(const RawSyscallEvent& event, int raw_pos,
                                      const char* what) {
  auto it = event.captured_buffers.find(raw_pos);
  if (it == event.captured_buffers.end())
    throw CanonicalizationError(std::string("missing captured buffer for ") +
                                what + " at arg " + std::to_string(raw_pos + 1));
  return it->second;
}

inline const StructDef& struct_or_throw(const CanonContext& ctx,
                                        const char* name) {
  if (ctx.structs == nullptr)
    throw CanonicalizationError("no struct registry configured");
  auto it = ctx.structs->find(name);
  if (it == ctx.structs->end())
    throw CanonicalizationError(std::string("unregistered shadow struct ") + name);
  return it->second;
}

}  // namespace detail

// Transforms a platform-local event into the generic platform-independent
// state compared across variants. Legacy open events are rewritten into
// OPENAT form; pathnames are fully resolved; flags and struct buffers are
// normalized per the platform tables.
inline CanonicalSyscallState canonicalize(const RawSyscallEvent& event,
                                          const CanonContext& ctx) {
  const PlatformSpec& platform = *event.platform;
  SyscallEntry entry = lookup_canonical_id(platform, event.raw_number);
  const SyscallSig& sig = syscall_signature(entry.id);

  CanonicalSyscallState state;
  state.id = entry.id;
  state.direction = event.direction;

  // Legacy open lacks the dirfd argument; shift raw positions so the rest of
  // the loop sees canonical OPENAT positions.
  int raw_shift = entry.fold_open ? -1 : 0;

  std::string resolved_dir = ctx.cwd;  // directory pathnames resolve against
  for (std::size_t pos = 0; pos < sig.args.size(); ++pos) {
    const ArgSpec& spec = sig.args[pos];
    int raw_pos = static_cast<int>(pos) + raw_shift;

    if (spec.kind == ArgKind::DirFd && entry.fold_open) {
      // Injected dirfd for folded open: path resolution starts at the cwd.
      state.args.push_back(CanonValue::make_fd(kCanonAtCwd, FdClass::Dir));
      continue;
    }

    if (raw_pos < 0 || raw_pos >= static_cast<int>(event.args.size()))
      throw CanonicalizationError(
          std::string(syscall_id_name(entry.id)) + ": missing argument " +
          std::to_string(pos + 1));
    std::uint64_t raw = event.args[static_cast<std::size_t>(raw_pos)];
    std::int64_t sraw = static_cast<std::int64_t>(raw);

    switch (spec.kind) {
      case ArgKind::Int:
        state.args.push_back(CanonValue::make_int(sraw));
        break;
      case ArgKind::Fd: {
        if (ctx.fdmap) {
          if (auto canon = ctx.fdmap->canon_of(sraw)) {
            const FdInfo* info = ctx.fdmap->info(*canon);
            state.args.push_back(CanonValue::make_fd(
                *canon, info ? info->cls : FdClass::Unknown));
            break;
          }
        }
        // Descriptors that were never registered compare by raw value; a
        // variant passing a bogus fd diverges on this value, which is the
        // honest outcome.
        state.args.push_back(CanonValue::make_fd(sraw, FdClass::Unknown));
        break;
      }
      case ArgKind::DirFd: {
        if (sraw == platform.at_fdcwd) {
          state.args.push_back(CanonValue::make_fd(kCanonAtCwd, FdClass::Dir));
        } else if (ctx.fdmap) {
          auto canon = ctx.fdmap->canon_of(sraw);
          if (!canon)
            throw CanonicalizationError("dirfd " + std::to_string(sraw) +
                                        " is not an open descriptor");
          const FdInfo* info = ctx.fdmap->info(*canon);
          if (!info || info->cls != FdClass::Dir)
            throw CanonicalizationError("dirfd " + std::to_string(sraw) +
                                        " does not name a directory");
          resolved_dir = info->path;
          // The pathname below becomes absolute, so the directory argument
          // canonicalizes to the cwd token on every platform.
          state.args.push_back(CanonValue::make_fd(kCanonAtCwd, FdClass::Dir));
        } else {
          state.args.push_back(CanonValue::make_fd(sraw, FdClass::Unknown));
        }
        break;
      }
      case ArgKind::PathBuf: {
        const Bytes& raw_path =
            detail::captured_or_throw(event, raw_pos, "pathname");
        std::string path(raw_path.begin(), raw_path.end());
        state.args.push_back(CanonValue::make_path(
            normalize_path(resolved_dir, path, ctx.app_root)));
        break;
      }
      case ArgKind::Flags: {
        state.args.push_back(CanonValue::make_flags(normalize_flags(
            platform, entry.id, static_cast<int>(pos) + 1, raw)));
        break;
      }
      case ArgKind::InBuf: {
        state.args.push_back(CanonValue::make_buffer(
            detail::captured_or_throw(event, raw_pos, "payload")));
        break;
      }
      case ArgKind::OutBuf: {
        // At exit the buffer holds produced output; failed calls produce
        // none and the argument stays a pointer tag, as at entry.
        auto it = event.captured_buffers.find(raw_pos);
        if (event.direction == Direction::Entry ||
            it == event.captured_buffers.end()) {
          state.args.push_back(CanonValue::make_ptr(raw != 0));
        } else {
          state.args.push_back(CanonValue::make_buffer(it->second));
        }
        break;
      }
      case ArgKind::InShadow: {
        const StructDef& def = detail::struct_or_throw(ctx, spec.struct_name);
        state.args.push_back(read_shadow(
            platform, def, detail::captured_or_throw(event, raw_pos, "struct")));
        break;
      }
      case ArgKind::OutShadow: {
        auto it = event.captured_buffers.find(raw_pos);
        if (event.direction == Direction::Entry ||
            it == event.captured_buffers.end()) {
          state.args.push_back(CanonValue::make_ptr(raw != 0));
        } else {
          const StructDef& def = detail::struct_or_throw(ctx, spec.struct_name);
          state.args.push_back(read_shadow(platform, def, it->second));
        }
        break;
      }
      case ArgKind::Ptr:
        state.args.push_back(CanonValue::make_ptr(raw != 0));
        break;
    }
  }

  if (event.direction == Direction::Exit) {
    if (!event.raw_result)
      throw CanonicalizationError("exit event without raw result");
    std::int64_t rv = *event.raw_result;
    if (sig.result == ResultKind::None) {
      // EXIT_GROUP never produces an observable result.
    } else if (rv < 0 && sig.result != ResultKind::Ptr) {
      auto it = platform.errno_table.find(-rv);
      state.result = CanonResult::err(
          it != platform.errno_table.end() ? it->second
                                           : "E" + std::to_string(-rv));
    } else {
      switch (sig.result) {
        case ResultKind::Int:
          state.result = CanonResult::ok_int(rv);
          break;
        case ResultKind::Fd: {
          std::int64_t canon = rv;
          if (ctx.fdmap) {
            if (auto c = ctx.fdmap->canon_of(rv)) canon = *c;
          }
          state.result = CanonResult::ok_fd(canon);
          break;
        }
        case ResultKind::Ptr:
          // MAP_FAILED style sentinels count as errors.
          if (rv == -1) {
            state.result = CanonResult::err("NOMEM");
          } else {
            state.result = CanonResult::ok_ptr(rv != 0);
          }
          break;
        case ResultKind::None:
          break;
      }
    }
  } else if (event.raw_result) {
    throw CanonicalizationError("entry event carries a result");
  }

  return state;
}

// --- serialization -----------------------------------------------------

namespace detail {

inline void serialize_value(Bytes& out, const CanonValue& v) {
  put_u8(out, static_cast<std::uint8_t>(v.kind));
  switch (v.kind) {
    case ValueKind::Int:
      put_i64le(out, v.int_value);
      break;
    case ValueKind::Flags:
      put_u32le(out, static_cast<std::uint32_t>(v.flags.size()));
      for (const auto& flag : v.flags) put_lp_string(out, flag);  // sorted set
      break;
    case ValueKind::Path:
      put_lp_string(out, v.text);
      break;
    case ValueKind::Fd:
      put_i64le(out, v.int_value);
      put_u8(out, static_cast<std::uint8_t>(v.fd_class));
      break;
    case ValueKind::Buffer:
      put_lp_bytes(out, v.bytes);
      break;
    case ValueKind::Shadow:
      put_u32le(out, static_cast<std::uint32_t>(v.fields.size()));
      for (const auto& [name, field] : v.fields) {
        put_lp_string(out, name);
        serialize_value(out, field);
      }
      break;
    case ValueKind::PtrTag:
      put_u8(out, v.nonnull ? 1 : 0);
      break;
  }
}

inline CanonValue deserialize_value(ByteReader& in) {
  CanonValue v;
  v.kind = static_cast<ValueKind>(in.u8());
  switch (v.kind) {
    case ValueKind::Int:
      v.int_value = in.i64le();
      break;
    case ValueKind::Flags: {
      std::uint32_t n = in.u32le();
      for (std::uint32_t i = 0; i < n; ++i) v.flags.insert(in.lp_string());
      break;
    }
    case ValueKind::Path:
      v.text = in.lp_string();
      break;
    case ValueKind::Fd:
      v.int_value = in.i64le();
      v.fd_class = static_cast<FdClass>(in.u8());
      break;
    case ValueKind::Buffer:
      v.bytes = in.lp_bytes();
      break;
    case ValueKind::Shadow: {
      std::uint32_t n = in.u32le();
      for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = in.lp_string();
        v.fields.emplace_back(std::move(name), deserialize_value(in));
      }
      break;
    }
    case ValueKind::PtrTag:
      v.nonnull = in.u8() != 0;
      break;
    default:
      throw std::runtime_error("bad value tag in serialized state");
  }
  return v;
}

inline void serialize_result(Bytes& out, const CanonResult& r) {
  put_u8(out, r.is_error ? 1 : 0);
  if (r.is_error) {
    put_lp_string(out, r.errno_name);
  } else {
    put_u8(out, static_cast<std::uint8_t>(r.kind));
    put_i64le(out, r.value);
  }
}

inline CanonResult deserialize_result(ByteReader& in) {
  CanonResult r;
  r.is_error = in.u8() != 0;
  if (r.is_error) {
    r.errno_name = in.lp_string();
  } else {
    r.kind = static_cast<ResultKind>(in.u8());
    r.value = in.i64le();
  }
  return r;
}

}  // namespace detail

// Deterministic, platform-of-origin-independent encoding: fixed little-endian
// widths, length-prefixed byte strings, flags in sorted order, shadow fields
// in definition order. Equal states produce equal bytes and vice versa.
inline Bytes serialize_state(const CanonicalSyscallState& state) {
  Bytes out;
  put_u8(out, state.direction == Direction::Entry ? 0 : 1);
  put_u16le(out, static_cast<std::uint16_t>(state.id));
  put_u32le(out, static_cast<std::uint32_t>(state.args.size()));
  for (const auto& arg : state.args) detail::serialize_value(out, arg);
  put_u8(out, state.result ? 1 : 0);
  if (state.result) detail::serialize_result(out, *state.result);
  return out;
}

inline CanonicalSyscallState deserialize_state(const Bytes& bytes) {
  ByteReader in{bytes};
  CanonicalSyscallState state;
  state.direction = in.u8() == 0 ? Direction::Entry : Direction::Exit;
  state.id = static_cast<SyscallId>(in.u16le());
  std::uint32_t nargs = in.u32le();
  for (std::uint32_t i = 0; i < nargs; ++i)
    state.args.push_back(detail::deserialize_value(in));
  if (in.u8() != 0) state.result = detail::deserialize_result(in);
  return state;
}

// --- deep equivalence ------------------------------------------------------

namespace detail {

inline std::optional<std::size_t> first_byte_diff(const Bytes& a, const Bytes& b) {
  std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i)
    if (a[i] != b[i]) return i;
  if (a.size() != b.size()) return n;
  return std::nullopt;
}

// Compares one canonical value; fills reason/offset for the enclosing arg.
inline std::optional<Divergence> compare_value(const CanonValue& a,
                                               const CanonValue& b, int arg_pos,
                                               const std::string& where) {
  if (a.kind != b.kind)
    return Divergence{DivergenceReason::ValueMismatch, arg_pos, -1,
                      where + ": kind differs"};
  switch (a.kind) {
    case ValueKind::Int:
      if (a.int_value != b.int_value)
        return Divergence{DivergenceReason::ValueMismatch, arg_pos, -1,
                          where + ": " + std::to_string(a.int_value) + " vs " +
                              std::to_string(b.int_value)};
      break;
    case ValueKind::Flags:
      if (a.flags != b.flags)
        return Divergence{DivergenceReason::ValueMismatch, arg_pos, -1,
                          where + ": flag sets differ"};
      break;
    case ValueKind::Path:
      if (a.text != b.text)
        return Divergence{DivergenceReason::ValueMismatch, arg_pos, -1,
                          where + ": " + a.text + " vs " + b.text};
      break;
    case ValueKind::Fd:
      if (a.int_value != b.int_value || a.fd_class != b.fd_class)
        return Divergence{DivergenceReason::ValueMismatch, arg_pos, -1,
                          where + ": descriptor identity differs"};
      break;
    case ValueKind::Buffer:
      if (auto off = first_byte_diff(a.bytes, b.bytes))
        return Divergence{DivergenceReason::BufferMismatch, arg_pos,
                          static_cast<std::int64_t>(*off), where};
      break;
    case ValueKind::Shadow: {
      if (a.fields.size() != b.fields.size())
        return Divergence{DivergenceReason::ValueMismatch, arg_pos, -1,
                          where + ": field count differs"};
      for (std::size_t i = 0; i < a.fields.size(); ++i) {
        if (a.fields[i].first != b.fields[i].first)
          return Divergence{DivergenceReason::ValueMismatch, arg_pos, -1,
                            where + ": field name differs"};
        if (auto d = compare_value(a.fields[i].second, b.fields[i].second,
                                   arg_pos, where + "." + a.fields[i].first))
          return d;
      }
      break;
    }
    case ValueKind::PtrTag:
      if (a.nonnull != b.nonnull)
        return Divergence{DivergenceReason::ValueMismatch, arg_pos, -1,
                          where + ": pointer tag differs"};
      break;
  }
  return std::nullopt;
}

}  // namespace detail

// Match iff the serialized encodings are identical; a divergence names the
// first differing component. Argument positions are reported 1-based.
inline Verdict deep_equivalent(const CanonicalSyscallState& a,
                               const CanonicalSyscallState& b) {
  if (a.direction != b.direction)
    throw std::logic_error("deep_equivalent requires matching directions");
  if (a.id != b.id)
    return Verdict::diverged(
        {DivergenceReason::SyscallIdMismatch, 0, -1,
         std::string(syscall_id_name(a.id)) + " vs " +
             std::string(syscall_id_name(b.id))});
  if (a.args.size() != b.args.size())
    return Verdict::diverged({DivergenceReason::ArgCountMismatch, 0, -1,
                              std::to_string(a.args.size()) + " vs " +
                                  std::to_string(b.args.size())});
  for (std::size_t i = 0; i < a.args.size(); ++i) {
    int pos = static_cast<int>(i) + 1;
    if (auto d = detail::compare_value(a.args[i], b.args[i], pos,
                                       "arg " + std::to_string(pos)))
      return Verdict::diverged(std::move(*d));
  }
  bool has_a = a.result.has_value(), has_b = b.result.has_value();
  if (has_a != has_b)
    return Verdict::diverged(
        {DivergenceReason::ValueMismatch, 0, -1, "result presence differs"});
  if (has_a) {
    const CanonResult& ra = *a.result;
    const CanonResult& rb = *b.result;
    if (ra.is_error != rb.is_error || ra.errno_name != rb.errno_name ||
        (!ra.is_error && (ra.kind != rb.kind || ra.value != rb.value)))
      return Verdict::diverged(
          {DivergenceReason::ValueMismatch, 0, -1, "result differs"});
  }
  return Verdict::matched();
}

}  // namespace nvx
