// ABI descriptors and per-platform lookups: syscall number mapping, flag
// normalization tables, primitive type metrics, struct layout computation,
// and calling-convention register roles.
//
// Descriptors are plain data files (see data/abi/*.abi) loaded once and
// immutable afterwards; they are safe to share read-only across monitor
// threads.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nvx/bytes.hpp"

namespace nvx {

// Platform-independent syscall identity. Closed enumeration: legacy open has
// no canonical id of its own, it is folded into OPENAT (the descriptor marks
// the raw number with fold_open and canonicalization rewrites the state).
enum class SyscallId : std::uint16_t {
  READ,
  WRITE,
  PREAD,
  OPENAT,
  CLOSE,
  FSTAT,
  LSEEK,
  DUP,
  GETCWD,
  GETPID,
  GETPPID,
  GETUID,
  GETGID,
  SCHED_YIELD,
  NANOSLEEP,
  BRK,
  MMAP_ANON,
  MUNMAP,
  MPROTECT,
  SOCKET,
  BIND,
  LISTEN,
  ACCEPT,
  CONNECT,
  RECVFROM,
  SENDTO,
  GETTIMEOFDAY,
  CLOCK_GETTIME,
  EXIT_GROUP,
};

inline constexpr std::array<std::pair<SyscallId, std::string_view>, 29>
    kSyscallIdNames{{
        {SyscallId::READ, "READ"},
        {SyscallId::WRITE, "WRITE"},
        {SyscallId::PREAD, "PREAD"},
        {SyscallId::OPENAT, "OPENAT"},
        {SyscallId::CLOSE, "CLOSE"},
        {SyscallId::FSTAT, "FSTAT"},
        {SyscallId::LSEEK, "LSEEK"},
        {SyscallId::DUP, "DUP"},
        {SyscallId::GETCWD, "GETCWD"},
        {SyscallId::GETPID, "GETPID"},
        {SyscallId::GETPPID, "GETPPID"},
        {SyscallId::GETUID, "GETUID"},
        {SyscallId::GETGID, "GETGID"},
        {SyscallId::SCHED_YIELD, "SCHED_YIELD"},
        {SyscallId::NANOSLEEP, "NANOSLEEP"},
        {SyscallId::BRK, "BRK"},
        {SyscallId::MMAP_ANON, "MMAP_ANON"},
        {SyscallId::MUNMAP, "MUNMAP"},
        {SyscallId::MPROTECT, "MPROTECT"},
        {SyscallId::SOCKET, "SOCKET"},
        {SyscallId::BIND, "BIND"},
        {SyscallId::LISTEN, "LISTEN"},
        {SyscallId::ACCEPT, "ACCEPT"},
        {SyscallId::CONNECT, "CONNECT"},
        {SyscallId::RECVFROM, "RECVFROM"},
        {SyscallId::SENDTO, "SENDTO"},
        {SyscallId::GETTIMEOFDAY, "GETTIMEOFDAY"},
        {SyscallId::CLOCK_GETTIME, "CLOCK_GETTIME"},
        {SyscallId::EXIT_GROUP, "EXIT_GROUP"},
    }};

inline std::string_view syscall_id_name(SyscallId id) {
  for (const auto& [sid, name] : kSyscallIdNames)
    if (sid == id) return name;
  return "?";
}

inline std::optional<SyscallId> syscall_id_from_name(std::string_view name) {
  for (const auto& [sid, n] : kSyscallIdNames)
    if (n == name) return sid;
  return std::nullopt;
}

inline std::vector<SyscallId> all_syscall_ids() {
  std::vector<SyscallId> out;
  out.reserve(kSyscallIdNames.size());
  for (const auto& [sid, name] : kSyscallIdNames) out.push_back(sid);
  return out;
}

enum class Endianness : std::uint8_t { Little, Big };

// Abstract field types understood by the layout engine. be16/be32 are
// fixed-byte-order carriers (network-order wire fields such as sockaddr
// ports); they share the size and alignment of their unsigned width.
enum class PrimType : std::uint8_t {
  U8,
  I8,
  U16,
  I16,
  U32,
  I32,
  U64,
  I64,
  Long,
  ULong,
  Ptr,
  Be16,
  Be32,
};

inline constexpr std::array<std::pair<PrimType, std::string_view>, 13>
    kPrimTypeNames{{
        {PrimType::U8, "u8"},
        {PrimType::I8, "i8"},
        {PrimType::U16, "u16"},
        {PrimType::I16, "i16"},
        {PrimType::U32, "u32"},
        {PrimType::I32, "i32"},
        {PrimType::U64, "u64"},
        {PrimType::I64, "i64"},
        {PrimType::Long, "long"},
        {PrimType::ULong, "ulong"},
        {PrimType::Ptr, "ptr"},
        {PrimType::Be16, "be16"},
        {PrimType::Be32, "be32"},
    }};

inline std::string_view prim_type_name(PrimType t) {
  for (const auto& [pt, name] : kPrimTypeNames)
    if (pt == t) return name;
  return "?";
}

inline std::optional<PrimType> prim_type_from_name(std::string_view name) {
  for (const auto& [pt, n] : kPrimTypeNames)
    if (n == name) return pt;
  return std::nullopt;
}

inline bool prim_is_signed(PrimType t) {
  return t == PrimType::I8 || t == PrimType::I16 || t == PrimType::I32 ||
         t == PrimType::I64 || t == PrimType::Long;
}

struct TypeMetrics {
  std::uint32_t size = 0;
  std::uint32_t align = 0;
};

// --- errors ------------------------------------------------------------------

struct UnknownSyscallError : std::runtime_error {
  std::uint64_t raw_number;
  explicit UnknownSyscallError(std::uint64_t raw)
      : std::runtime_error("unknown raw syscall number " + std::to_string(raw)),
        raw_number(raw) {}
};

struct UnknownFlagBitsError : std::runtime_error {
  std::uint64_t residue;
  UnknownFlagBitsError(std::uint64_t res, const std::string& ctx)
      : std::runtime_error("flag bits without table entry: 0x" + [&] {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%llx", (unsigned long long)res);
          return std::string(buf);
        }() + " (" + ctx + ")"),
        residue(res) {}
};

struct UnknownTypeError : std::runtime_error {
  explicit UnknownTypeError(const std::string& what)
      : std::runtime_error("no type metrics for " + what) {}
};

struct MismatchedDefError : std::runtime_error {
  explicit MismatchedDefError(const std::string& what)
      : std::runtime_error("layouts derive from different defs: " + what) {}
};

struct BadStructDefError : std::runtime_error {
  explicit BadStructDefError(const std::string& what)
      : std::runtime_error("bad struct definition: " + what) {}
};

struct AbiFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- struct definitions --------------------------------------------------

struct FieldDef {
  std::string name;
  PrimType type;
  std::uint32_t array_len = 1;  // 1 for scalars; must be >= 1
};

// Ordered plain-field struct. Bitfields, unions and packed layouts are not
// representable; validate() rejects the degenerate cases that would break
// the layout rules (zero-length arrays, duplicate names).
struct StructDef {
  std::string name;
  std::vector<FieldDef> fields;

  void validate() const {
    std::set<std::string> seen;
    if (fields.empty()) throw BadStructDefError(name + ": no fields");
    for (const auto& f : fields) {
      if (f.array_len == 0)
        throw BadStructDefError(name + "." + f.name + ": zero-length array");
      if (!seen.insert(f.name).second)
        throw BadStructDefError(name + "." + f.name + ": duplicate field");
    }
  }
};

struct StructLayout {
  std::string def_name;
  std::vector<std::uint32_t> offsets;   // one per field, strictly increasing
  std::vector<std::uint32_t> field_sizes;
  std::uint32_t size = 0;
  std::uint32_t align = 1;
};

struct FieldDiff {
  std::size_t field_index;
  std::uint32_t offset_a, offset_b;
  std::uint32_t size_a, size_b;
};

struct LayoutDiff {
  std::vector<FieldDiff> fields;
  std::int64_t total_size_delta = 0;  // size_b - size_a

  bool empty() const { return fields.empty() && total_size_delta == 0; }
};

// --- canonical flags ----------------------------------------------------

using FlagSet = std::set<std::string>;  // ordered; serialization relies on it

struct SyscallEntry {
  SyscallId id;
  bool fold_open = false;  // raw number is legacy open; canonicalization folds it
};

// --- the descriptor ----------------------------------------------------------

struct SyscallConvention {
  std::string number_reg;
  std::vector<std::string> arg_regs;  // args 1..7
  std::string result_reg;
};

struct CallConvention {
  std::vector<std::string> arg_regs;  // "stack" marks stack-passed positions
  std::string result_reg;
};

class PlatformSpec {
 public:
  std::string name;
  Endianness endianness = Endianness::Little;
  std::uint32_t pointer_width = 8;
  std::int64_t at_fdcwd = -100;

  std::map<std::uint64_t, SyscallEntry> syscall_table;
  // keyed by (canonical id, 1-based canonical argument position)
  std::map<std::pair<SyscallId, int>, std::map<std::uint64_t, std::string>>
      flag_tables;
  std::map<PrimType, TypeMetrics> type_metrics;
  CallConvention call_conv;
  SyscallConvention syscall_conv;
  // raw errno value -> canonical errno name; defaulted to the shared Linux
  // numbering when the descriptor has no [errnos] section.
  std::map<std::int64_t, std::string> errno_table;

  const TypeMetrics& metrics_for(PrimType t) const {
    auto it = type_metrics.find(t);
    if (it == type_metrics.end())
      throw UnknownTypeError(std::string(prim_type_name(t)));
    return it->second;
  }

  std::optional<std::uint64_t> raw_number_for(SyscallId id) const {
    for (const auto& [raw, entry] : syscall_table)
      if (entry.id == id && !entry.fold_open) return raw;
    return std::nullopt;
  }

  std::optional<std::uint64_t> folded_open_number() const {
    for (const auto& [raw, entry] : syscall_table)
      if (entry.fold_open) return raw;
    return std::nullopt;
  }

  // Stable content digest; exchanged in HELLO and quoted in reports.
  Bytes digest() const {
    Bytes blob;
    put_lp_string(blob, name);
    put_u8(blob, endianness == Endianness::Little ? 0 : 1);
    put_u32le(blob, pointer_width);
    put_i64le(blob, at_fdcwd);
    for (const auto& [raw, entry] : syscall_table) {
      put_u64le(blob, raw);
      put_u16le(blob, static_cast<std::uint16_t>(entry.id));
      put_u8(blob, entry.fold_open ? 1 : 0);
    }
    for (const auto& [key, table] : flag_tables) {
      put_u16le(blob, static_cast<std::uint16_t>(key.first));
      put_u32le(blob, static_cast<std::uint32_t>(key.second));
      for (const auto& [bit, flag] : table) {
        put_u64le(blob, bit);
        put_lp_string(blob, flag);
      }
    }
    for (const auto& [t, m] : type_metrics) {
      put_u8(blob, static_cast<std::uint8_t>(t));
      put_u32le(blob, m.size);
      put_u32le(blob, m.align);
    }
    return sha256(blob);
  }

  void validate() const {
    // No two raw numbers may resolve to the same (id, fold) meaning.
    std::set<std::pair<SyscallId, bool>> seen;
    for (const auto& [raw, entry] : syscall_table) {
      if (!seen.insert({entry.id, entry.fold_open}).second)
        throw AbiFileError(name + ": duplicate mapping for " +
                           std::string(syscall_id_name(entry.id)));
      if (entry.fold_open && entry.id != SyscallId::OPENAT)
        throw AbiFileError(name + ": fold_open only applies to OPENAT");
    }
    for (const auto& [t, m] : type_metrics) {
      if (m.align == 0 || (m.align & (m.align - 1)) != 0)
        throw AbiFileError(name + ": alignment of " +
                           std::string(prim_type_name(t)) +
                           " is not a power of two");
      if (m.size % m.align != 0)
        throw AbiFileError(name + ": alignment of " +
                           std::string(prim_type_name(t)) +
                           " does not divide its size");
    }
    auto ptr_it = type_metrics.find(PrimType::Ptr);
    if (ptr_it != type_metrics.end() &&
        (ptr_it->second.size != pointer_width ||
         ptr_it->second.align != pointer_width))
      throw AbiFileError(name + ": ptr metrics disagree with pointer_width");
    // The syscall number register must be dedicated: not an argument register.
    for (const auto& reg : syscall_conv.arg_regs)
      if (reg == syscall_conv.number_reg)
        throw AbiFileError(name + ": syscall number register " +
                           syscall_conv.number_reg + " doubles as an argument");
  }
};

// --- operations ---------------------------------------------------

// Raw platform syscall number -> canonical identity. Numbers marked
// fold_open come back with fold_open set so that canonicalization rewrites
// the state into OPENAT form.
inline SyscallEntry lookup_canonical_id(const PlatformSpec& platform,
                                        std::uint64_t raw_number) {
  auto it = platform.syscall_table.find(raw_number);
  if (it == platform.syscall_table.end()) throw UnknownSyscallError(raw_number);
  return it->second;
}

// Raw bitmask -> canonical flag set via the (id, arg) table. Bits with no
// table entry are reported, never dropped.
inline FlagSet normalize_flags(const PlatformSpec& platform, SyscallId id,
                               int arg_index, std::uint64_t raw) {
  auto table_it = platform.flag_tables.find({id, arg_index});
  if (table_it == platform.flag_tables.end())
    throw AbiFileError(platform.name + ": no flag table for " +
                       std::string(syscall_id_name(id)) + " arg " +
                       std::to_string(arg_index));
  FlagSet out;
  std::uint64_t residue = raw;
  for (const auto& [bit, flag] : table_it->second) {
    if (raw & bit) {
      out.insert(flag);
      residue &= ~bit;
    }
  }
  if (residue != 0)
    throw UnknownFlagBitsError(
        residue, platform.name + " " + std::string(syscall_id_name(id)) +
                     " arg " + std::to_string(arg_index));
  return out;
}

inline std::uint64_t denormalize_flags(const PlatformSpec& platform,
                                       SyscallId id, int arg_index,
                                       const FlagSet& flags) {
  auto table_it = platform.flag_tables.find({id, arg_index});
  if (table_it == platform.flag_tables.end())
    throw AbiFileError(platform.name + ": no flag table for " +
                       std::string(syscall_id_name(id)));
  std::uint64_t raw = 0;
  for (const auto& flag : flags) {
    bool found = false;
    for (const auto& [bit, name] : table_it->second) {
      if (name == flag) {
        raw |= bit;
        found = true;
        break;
      }
    }
    if (!found)
      throw AbiFileError(platform.name + ": no raw encoding for flag " + flag);
  }
  return raw;
}

inline std::uint32_t round_up(std::uint32_t v, std::uint32_t align) {
  return (v + align - 1) / align * align;
}

// Standard C layout: each field at the next offset rounded up to its
// alignment, struct alignment = max field alignment, size rounded up to the
// struct alignment.
inline StructLayout compute_struct_layout(const PlatformSpec& platform,
                                          const StructDef& def) {
  def.validate();
  StructLayout layout;
  layout.def_name = def.name;
  std::uint32_t offset = 0;
  std::uint32_t max_align = 1;
  for (const auto& field : def.fields) {
    const TypeMetrics& m = platform.metrics_for(field.type);
    offset = round_up(offset, m.align);
    layout.offsets.push_back(offset);
    std::uint32_t fsize = m.size * field.array_len;
    layout.field_sizes.push_back(fsize);
    offset += fsize;
    max_align = std::max(max_align, m.align);
  }
  layout.align = max_align;
  layout.size = round_up(offset, max_align);
  return layout;
}

// Field-by-field offset/size comparison of two layouts of the same def.
inline LayoutDiff layout_diverges(const StructLayout& a, const StructLayout& b) {
  if (a.offsets.size() != b.offsets.size())
    throw MismatchedDefError(a.def_name + " vs " + b.def_name);
  LayoutDiff diff;
  for (std::size_t i = 0; i < a.offsets.size(); ++i) {
    if (a.offsets[i] != b.offsets[i] || a.field_sizes[i] != b.field_sizes[i])
      diff.fields.push_back({i, a.offsets[i], b.offsets[i], a.field_sizes[i],
                             b.field_sizes[i]});
  }
  diff.total_size_delta =
      static_cast<std::int64_t>(b.size) - static_cast<std::int64_t>(a.size);
  return diff;
}

// --- shared Linux errno numbering (descriptor [errnos] overrides) -----------

inline const std::map<std::int64_t, std::string>& default_errno_table() {
  static const std::map<std::int64_t, std::string> table = {
      {1, "PERM"},    {2, "NOENT"},    {4, "INTR"},     {5, "IO"},
      {9, "BADF"},    {11, "AGAIN"},   {12, "NOMEM"},   {13, "ACCES"},
      {14, "FAULT"},  {17, "EXIST"},   {20, "NOTDIR"},  {21, "ISDIR"},
      {22, "INVAL"},  {23, "NFILE"},   {24, "MFILE"},   {28, "NOSPC"},
      {29, "SPIPE"},  {30, "ROFS"},    {32, "PIPE"},    {34, "RANGE"},
      {38, "NOSYS"},  {88, "NOTSOCK"}, {104, "CONNRESET"}, {107, "NOTCONN"},
      {110, "TIMEDOUT"},
  };
  return table;
}

// --- descriptor file loading -----------------------------------------------

inline PlatformSpec load_platform_spec_from(const SectionedFile& doc,
                                            const std::string& origin) {
  PlatformSpec spec;
  spec.errno_table = default_errno_table();

  auto fail = [&](int line, const std::string& msg) -> void {
    throw AbiFileError(origin + ":" + std::to_string(line) + ": " + msg);
  };

  bool have_platform = false;
  for (const auto& [section, lines] : doc.sections) {
    if (section.empty()) {
      if (!lines.empty()) fail(lines.front().number, "content before any section");
      continue;
    }
    if (section == "platform") {
      have_platform = true;
      for (const auto& line : lines) {
        auto kv = split_kv(line.text);
        if (!kv) fail(line.number, "expected key = value");
        const auto& [key, value] = *kv;
        if (key == "name") {
          spec.name = value;
        } else if (key == "endianness") {
          if (value == "little") spec.endianness = Endianness::Little;
          else if (value == "big") spec.endianness = Endianness::Big;
          else fail(line.number, "endianness must be little or big");
        } else if (key == "pointer_width") {
          spec.pointer_width = static_cast<std::uint32_t>(parse_uint(value));
        } else if (key == "at_fdcwd") {
          spec.at_fdcwd = parse_int(value);
        } else {
          fail(line.number, "unknown platform key " + key);
        }
      }
    } else if (section == "syscalls") {
      for (const auto& line : lines) {
        auto kv = split_kv(line.text);
        if (!kv) fail(line.number, "expected raw = ID");
        std::uint64_t raw = parse_uint(kv->first);
        auto toks = split_ws(kv->second);
        if (toks.empty()) fail(line.number, "missing canonical id");
        auto id = syscall_id_from_name(toks[0]);
        if (!id) fail(line.number, "unknown canonical id " + toks[0]);
        bool fold = toks.size() > 1 && toks[1] == "fold_open";
        if (toks.size() > 1 && !fold)
          fail(line.number, "unknown modifier " + toks[1]);
        if (!spec.syscall_table.emplace(raw, SyscallEntry{*id, fold}).second)
          fail(line.number, "duplicate raw number");
      }
    } else if (section.rfind("flags.", 0) == 0) {
      auto parts = split_on(section, '.');
      if (parts.size() != 3)
        fail(lines.empty() ? 0 : lines.front().number,
             "flag section must be flags.<ID>.<argidx>");
      auto id = syscall_id_from_name(parts[1]);
      if (!id) throw AbiFileError(origin + ": unknown id in section " + section);
      int argidx = static_cast<int>(parse_uint(parts[2]));
      auto& table = spec.flag_tables[{*id, argidx}];
      for (const auto& line : lines) {
        auto kv = split_kv(line.text);
        if (!kv) fail(line.number, "expected bit = FLAG");
        std::uint64_t bit = parse_uint(kv->first);
        if (bit == 0 || (bit & (bit - 1)) != 0)
          fail(line.number, "flag key must be a single bit");
        if (!table.emplace(bit, kv->second).second)
          fail(line.number, "duplicate flag bit");
      }
    } else if (section == "types") {
      for (const auto& line : lines) {
        auto kv = split_kv(line.text);
        if (!kv) fail(line.number, "expected type = size align");
        auto ty = prim_type_from_name(kv->first);
        if (!ty) fail(line.number, "unknown primitive type " + kv->first);
        auto toks = split_ws(kv->second);
        if (toks.size() != 2) fail(line.number, "expected size and alignment");
        spec.type_metrics[*ty] = {
            static_cast<std::uint32_t>(parse_uint(toks[0])),
            static_cast<std::uint32_t>(parse_uint(toks[1]))};
      }
    } else if (section == "conventions") {
      for (const auto& line : lines) {
        auto kv = split_kv(line.text);
        if (!kv) fail(line.number, "expected key = registers");
        auto regs = split_ws(kv->second);
        if (kv->first == "call_args") spec.call_conv.arg_regs = regs;
        else if (kv->first == "call_result") spec.call_conv.result_reg = kv->second;
        else if (kv->first == "syscall_num") spec.syscall_conv.number_reg = kv->second;
        else if (kv->first == "syscall_args") spec.syscall_conv.arg_regs = regs;
        else if (kv->first == "syscall_result") spec.syscall_conv.result_reg = kv->second;
        else fail(line.number, "unknown convention key " + kv->first);
      }
    } else if (section == "errnos") {
      spec.errno_table.clear();
      for (const auto& line : lines) {
        auto kv = split_kv(line.text);
        if (!kv) fail(line.number, "expected raw = NAME");
        spec.errno_table[parse_int(kv->first)] = kv->second;
      }
    } else {
      throw AbiFileError(origin + ": unknown section [" + section + "]");
    }
  }
  if (!have_platform || spec.name.empty())
    throw AbiFileError(origin + ": missing [platform] section with a name");
  if (spec.type_metrics.empty())
    throw AbiFileError(origin + ": missing [types] section");
  spec.validate();
  return spec;
}

inline PlatformSpec load_platform_spec(const std::string& path) {
  return load_platform_spec_from(parse_sectioned_file(path), path);
}

// --- struct definition corpus loading ---------------------------------------

inline std::vector<StructDef> load_struct_defs_from(const SectionedFile& doc,
                                                    const std::string& origin) {
  std::vector<StructDef> defs;
  for (const auto& [section, lines] : doc.sections) {
    if (section.empty()) continue;
    auto toks = split_ws(section);
    if (toks.size() != 2 || toks[0] != "struct")
      throw BadStructDefError(origin + ": section [" + section +
                              "] is not a struct header");
    StructDef def;
    def.name = toks[1];
    for (const auto& line : lines) {
      auto parts = split_ws(line.text);
      if (parts.size() < 2 || parts.size() > 3)
        throw BadStructDefError(origin + ":" + std::to_string(line.number) +
                                ": expected <name> <type> [count]");
      auto ty = prim_type_from_name(parts[1]);
      if (!ty)
        throw BadStructDefError(origin + ":" + std::to_string(line.number) +
                                ": unknown type " + parts[1]);
      std::uint32_t count =
          parts.size() == 3 ? static_cast<std::uint32_t>(parse_uint(parts[2])) : 1;
      def.fields.push_back({parts[0], *ty, count});
    }
    def.validate();
    defs.push_back(std::move(def));
  }
  return defs;
}

inline std::vector<StructDef> load_struct_defs(const std::string& path) {
  return load_struct_defs_from(parse_sectioned_file(path), path);
}

}  // namespace nvx
