#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "nvx/platform.hpp"

#include <filesystem>
#include <random>
#include <sstream>

using namespace nvx;

namespace {

std::string data_path(const std::string& rel) {
  return std::string(NVX_DATA_DIR) + "/" + rel;
}

PlatformSpec load_fixture(const std::string& name) {
  return load_platform_spec(data_path("abi/" + name + ".abi"));
}

PlatformSpec minimal_platform(std::uint32_t ptr_width) {
  std::istringstream in(
      "[platform]\n"
      "name = test\n"
      "endianness = little\n"
      "pointer_width = " + std::to_string(ptr_width) + "\n"
      "[syscalls]\n"
      "0 = READ\n"
      "[types]\n"
      "u8 = 1 1\n"
      "i8 = 1 1\n"
      "u16 = 2 2\n"
      "i16 = 2 2\n"
      "u32 = 4 4\n"
      "i32 = 4 4\n"
      "u64 = 8 8\n"
      "i64 = 8 8\n"
      "long = " + std::to_string(ptr_width) + " " + std::to_string(ptr_width) + "\n"
      "ulong = " + std::to_string(ptr_width) + " " + std::to_string(ptr_width) + "\n"
      "ptr = " + std::to_string(ptr_width) + " " + std::to_string(ptr_width) + "\n"
      "be16 = 2 2\n"
      "be32 = 4 4\n"
      "[conventions]\n"
      "syscall_num = n\n"
      "syscall_args = a b c\n"
      "syscall_result = a\n");
  return load_platform_spec_from(parse_sectioned_text(in, "<inline>"), "<inline>");
}

struct ExpectedLayout {
  std::vector<std::uint32_t> offsets;
  std::uint32_t size = 0;
  std::uint32_t align = 0;
};

std::map<std::string, ExpectedLayout> load_expected_offsets(const std::string& abi) {
  auto doc = parse_sectioned_file(data_path("structs/expected/" + abi + ".offsets"));
  std::map<std::string, ExpectedLayout> out;
  for (const auto& [section, lines] : doc.sections) {
    if (section.empty()) continue;
    auto toks = split_ws(section);
    REQUIRE(toks.size() == 2);
    ExpectedLayout exp;
    for (const auto& line : lines) {
      auto parts = split_ws(line.text);
      REQUIRE(parts.size() == 2);
      if (parts[0] == "__size") exp.size = static_cast<std::uint32_t>(parse_uint(parts[1]));
      else if (parts[0] == "__align") exp.align = static_cast<std::uint32_t>(parse_uint(parts[1]));
      else exp.offsets.push_back(static_cast<std::uint32_t>(parse_uint(parts[1])));
    }
    out[toks[1]] = exp;
  }
  return out;
}

}  // namespace

TEST_CASE("raw syscall numbers map to canonical identities") {
  auto x86 = load_fixture("x86_64");
  auto i386 = load_fixture("i386");
  auto arm = load_fixture("armv7_eabi");

  CHECK(lookup_canonical_id(x86, 0).id == SyscallId::READ);
  CHECK(lookup_canonical_id(i386, 3).id == SyscallId::READ);
  CHECK(lookup_canonical_id(arm, 0x900003).id == SyscallId::READ);

  CHECK(lookup_canonical_id(x86, 0).fold_open == false);
  CHECK(lookup_canonical_id(x86, 2).id == SyscallId::OPENAT);
  CHECK(lookup_canonical_id(x86, 2).fold_open == true);
  CHECK(lookup_canonical_id(arm, 0x900005).fold_open == true);
}

TEST_CASE("unsupported raw numbers raise UnknownSyscall") {
  auto x86 = load_fixture("x86_64");
  CHECK_THROWS_AS(lookup_canonical_id(x86, 9999), UnknownSyscallError);
  try {
    lookup_canonical_id(x86, 9999);
  } catch (const UnknownSyscallError& e) {
    CHECK(e.raw_number == 9999);
  }
}

TEST_CASE("armv8 has no legacy open") {
  auto arm64 = load_fixture("armv8");
  CHECK(!arm64.folded_open_number().has_value());
  CHECK(lookup_canonical_id(arm64, 56).id == SyscallId::OPENAT);
}

TEST_CASE("fixture tables agree with the recorded kernel-header dumps") {
  for (const std::string name : {"x86_64", "i386", "armv7_eabi", "armv8"}) {
    auto spec = load_fixture(name);
    auto doc = parse_sectioned_file(data_path("abi/reference/" + name + ".sysnums"));
    std::uint64_t base = 0;
    std::size_t checked = 0;
    for (const auto& [section, lines] : doc.sections) {
      for (const auto& line : lines) {
        auto toks = split_ws(line.text);
        if (toks[0] == "base") {
          base = parse_uint(toks[1]);
          continue;
        }
        REQUIRE(toks.size() >= 3);
        std::uint64_t raw = base + parse_uint(toks[1]);
        auto id = syscall_id_from_name(toks[2]);
        REQUIRE(id.has_value());
        auto entry = lookup_canonical_id(spec, raw);
        CHECK(entry.id == *id);
        CHECK(entry.fold_open == (toks.size() > 3 && toks[3] == "fold"));
        ++checked;
      }
    }
    CHECK(checked == spec.syscall_table.size());
  }
}

TEST_CASE("reverse lookup round-trips for every canonical id") {
  for (const std::string name : {"x86_64", "i386", "armv7_eabi", "armv8"}) {
    auto spec = load_fixture(name);
    for (SyscallId id : all_syscall_ids()) {
      auto raw = spec.raw_number_for(id);
      if (!raw) continue;
      CHECK(lookup_canonical_id(spec, *raw).id == id);
      CHECK(lookup_canonical_id(spec, *raw).fold_open == false);
    }
  }
}

TEST_CASE("flag normalization follows the table") {
  PlatformSpec plat_a = minimal_platform(8);
  plat_a.flag_tables[{SyscallId::OPENAT, 3}] = {{0x400, "APPEND"}};
  PlatformSpec plat_b = minimal_platform(8);
  plat_b.flag_tables[{SyscallId::OPENAT, 3}] = {{0x2000, "APPEND"}};

  CHECK(normalize_flags(plat_a, SyscallId::OPENAT, 3, 0x400) == FlagSet{"APPEND"});
  CHECK(normalize_flags(plat_b, SyscallId::OPENAT, 3, 0x2000) == FlagSet{"APPEND"});
  CHECK(normalize_flags(plat_a, SyscallId::OPENAT, 3, 0x0) == FlagSet{});
}

TEST_CASE("unmapped flag bits are reported, not dropped") {
  PlatformSpec plat = minimal_platform(8);
  plat.flag_tables[{SyscallId::OPENAT, 3}] = {{0x400, "APPEND"}};
  CHECK_THROWS_AS(normalize_flags(plat, SyscallId::OPENAT, 3, 0x401),
                  UnknownFlagBitsError);
  try {
    normalize_flags(plat, SyscallId::OPENAT, 3, 0x401);
  } catch (const UnknownFlagBitsError& e) {
    CHECK(e.residue == 0x1);
  }
}

TEST_CASE("flag normalization is monotone in the raw bit set") {
  auto x86 = load_fixture("x86_64");
  const auto& table = x86.flag_tables.at({SyscallId::OPENAT, 3});
  std::vector<std::uint64_t> bits;
  for (const auto& [bit, name] : table) bits.push_back(bit);

  std::mt19937_64 rng(20240917);
  for (int trial = 0; trial < 200; ++trial) {
    std::uint64_t raw = 0;
    for (auto bit : bits)
      if (rng() & 1) raw |= bit;
    std::uint64_t sub = raw;
    for (auto bit : bits)
      if ((sub & bit) && (rng() & 1)) sub &= ~bit;
    auto full = normalize_flags(x86, SyscallId::OPENAT, 3, raw);
    auto part = normalize_flags(x86, SyscallId::OPENAT, 3, sub);
    for (const auto& flag : part) CHECK(full.count(flag) == 1);
  }
}

TEST_CASE("single byte struct occupies one byte everywhere") {
  StructDef def{"b", {{"a", PrimType::U8}}};
  for (const std::string name : {"x86_64", "i386", "armv7_eabi", "armv8"}) {
    auto layout = compute_struct_layout(load_fixture(name), def);
    CHECK(layout.offsets == std::vector<std::uint32_t>{0});
    CHECK(layout.size == 1);
    CHECK(layout.align == 1);
  }
}

TEST_CASE("byte-then-pointer layout tracks the pointer width") {
  StructDef def{"bp", {{"a", PrimType::U8}, {"p", PrimType::Ptr}}};

  auto wide = compute_struct_layout(minimal_platform(8), def);
  CHECK(wide.offsets == std::vector<std::uint32_t>{0, 8});
  CHECK(wide.size == 16);

  auto narrow = compute_struct_layout(minimal_platform(4), def);
  CHECK(narrow.offsets == std::vector<std::uint32_t>{0, 4});
  CHECK(narrow.size == 8);

  auto diff = layout_diverges(wide, narrow);
  REQUIRE(diff.fields.size() == 1);
  CHECK(diff.fields[0].field_index == 1);
  CHECK(diff.fields[0].offset_a == 8);
  CHECK(diff.fields[0].offset_b == 4);
  CHECK(diff.total_size_delta == -8);
}

TEST_CASE("u32+u16 struct pads its tail") {
  StructDef def{"wu", {{"a", PrimType::U32}, {"b", PrimType::U16}}};
  auto layout = compute_struct_layout(minimal_platform(8), def);
  CHECK(layout.offsets == std::vector<std::uint32_t>{0, 4});
  CHECK(layout.size == 8);
}

TEST_CASE("layout engine matches the reference compiler on the corpus") {
  auto defs = load_struct_defs(data_path("structs/corpus.defs"));
  REQUIRE(defs.size() == 30);
  for (const std::string abi : {"x86_64", "i386", "armv7_eabi"}) {
    auto spec = load_fixture(abi);
    auto expected = load_expected_offsets(abi);
    REQUIRE(expected.size() == defs.size());
    for (const auto& def : defs) {
      auto layout = compute_struct_layout(spec, def);
      const auto& exp = expected.at(def.name);
      CHECK_MESSAGE(layout.offsets == exp.offsets, abi << " " << def.name);
      CHECK_MESSAGE(layout.size == exp.size, abi << " " << def.name);
      CHECK_MESSAGE(layout.align == exp.align, abi << " " << def.name);
    }
  }
}

TEST_CASE("identical layouts produce an empty diff") {
  StructDef def{"same", {{"a", PrimType::U8}, {"b", PrimType::U8}}};
  auto a = compute_struct_layout(minimal_platform(8), def);
  auto b = compute_struct_layout(minimal_platform(4), def);
  CHECK(layout_diverges(a, b).empty());
}

TEST_CASE("layout diff rejects defs of different arity") {
  StructDef d1{"one", {{"a", PrimType::U8}}};
  StructDef d2{"two", {{"a", PrimType::U8}, {"b", PrimType::U8}}};
  auto p = minimal_platform(8);
  CHECK_THROWS_AS(
      layout_diverges(compute_struct_layout(p, d1), compute_struct_layout(p, d2)),
      MismatchedDefError);
}

TEST_CASE("layout computation is deterministic") {
  auto defs = load_struct_defs(data_path("structs/corpus.defs"));
  auto spec = load_fixture("armv7_eabi");
  for (const auto& def : defs) {
    auto a = compute_struct_layout(spec, def);
    auto b = compute_struct_layout(spec, def);
    CHECK(a.offsets == b.offsets);
    CHECK(a.size == b.size);
  }
}

TEST_CASE("pointer after a smaller field diverges whenever widths differ") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    StructDef def{"t", {}};
    // Random small-field prefix, then a pointer.
    int prefix = 1 + static_cast<int>(rng() % 3);
    for (int i = 0; i < prefix; ++i) {
      PrimType small[] = {PrimType::U8, PrimType::I8, PrimType::U16};
      def.fields.push_back({"f" + std::to_string(i), small[rng() % 3]});
    }
    def.fields.push_back({"p", PrimType::Ptr});
    auto wide = compute_struct_layout(minimal_platform(8), def);
    auto narrow = compute_struct_layout(minimal_platform(4), def);
    CHECK(!layout_diverges(wide, narrow).empty());
  }
}

TEST_CASE("struct definitions reject degenerate shapes") {
  StructDef zero_len{"z", {{"a", PrimType::U8, 0}}};
  CHECK_THROWS_AS(zero_len.validate(), BadStructDefError);
  StructDef dup_name{"d", {{"a", PrimType::U8}, {"a", PrimType::U16}}};
  CHECK_THROWS_AS(dup_name.validate(), BadStructDefError);
  StructDef no_fields{"e", {}};
  CHECK_THROWS_AS(no_fields.validate(), BadStructDefError);
}

TEST_CASE("descriptor validation rejects broken tables") {
  auto spec = minimal_platform(8);

  SUBCASE("two raw numbers for one meaning") {
    spec.syscall_table[7] = {SyscallId::READ, false};
    CHECK_THROWS_AS(spec.validate(), AbiFileError);
  }
  SUBCASE("non power-of-two alignment") {
    spec.type_metrics[PrimType::U32] = {4, 3};
    CHECK_THROWS_AS(spec.validate(), AbiFileError);
  }
  SUBCASE("alignment must divide size") {
    spec.type_metrics[PrimType::U32] = {4, 8};
    CHECK_THROWS_AS(spec.validate(), AbiFileError);
  }
  SUBCASE("syscall number register must be dedicated") {
    spec.syscall_conv.arg_regs.push_back(spec.syscall_conv.number_reg);
    CHECK_THROWS_AS(spec.validate(), AbiFileError);
  }
}

TEST_CASE("every fixture passes validation and digests are stable") {
  for (const std::string name : {"x86_64", "i386", "armv7_eabi", "armv8"}) {
    auto a = load_fixture(name);
    auto b = load_fixture(name);
    CHECK(a.digest() == b.digest());
    CHECK(!a.digest().empty());
  }
  CHECK(load_fixture("x86_64").digest() != load_fixture("armv7_eabi").digest());
}

TEST_CASE("hex and decimal integers parse in descriptor files") {
  CHECK(parse_int("0x900003") == 0x900003);
  CHECK(parse_int("257") == 257);
  CHECK(parse_int("-100") == -100);
  CHECK_THROWS(parse_int("0x90zz"));
}
