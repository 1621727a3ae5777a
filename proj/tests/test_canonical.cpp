#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "nvx/canonical.hpp"

#include <random>

using namespace nvx;

namespace {

std::string data_path(const std::string& rel) {
  return std::string(NVX_DATA_DIR) + "/" + rel;
}

const PlatformSpec& fixture(const std::string& name) {
  static std::map<std::string, PlatformSpec> cache;
  auto it = cache.find(name);
  if (it == cache.end())
    it = cache.emplace(name, load_platform_spec(data_path("abi/" + name + ".abi")))
             .first;
  return it->second;
}

struct TestEnv {
  StructRegistry structs = default_struct_registry();
  FdTranslation fdmap;
  CanonContext ctx;

  TestEnv() {
    ctx.app_root = "/app";
    ctx.cwd = "/app";
    ctx.structs = &structs;
    ctx.fdmap = &fdmap;
  }
};

RawSyscallEvent write_entry(const PlatformSpec& plat, std::uint64_t fd,
                            const std::string& payload) {
  RawSyscallEvent ev;
  ev.platform = &plat;
  ev.raw_number = *plat.raw_number_for(SyscallId::WRITE);
  ev.args = {fd, 0x7f0000001000ull, payload.size()};
  ev.captured_buffers[1] = to_bytes(payload);
  return ev;
}

// Builds the native byte image of the shadow "stat" record used across the
// FSTAT tests.
CanonValue logical_stat() {
  std::vector<std::pair<std::string, CanonValue>> fields;
  fields.emplace_back("dev", CanonValue::make_int(9));
  fields.emplace_back("ino", CanonValue::make_int(0x51f2));
  fields.emplace_back("mode", CanonValue::make_int(0100644));
  fields.emplace_back("nlink", CanonValue::make_int(1));
  fields.emplace_back("uid", CanonValue::make_int(1000));
  fields.emplace_back("gid", CanonValue::make_int(1000));
  fields.emplace_back("size", CanonValue::make_int(4096));
  fields.emplace_back("blksize", CanonValue::make_int(512));
  fields.emplace_back("blocks", CanonValue::make_int(8));
  fields.emplace_back("atime", CanonValue::make_int(1700000000));
  fields.emplace_back("mtime", CanonValue::make_int(1700000000));
  fields.emplace_back("ctime", CanonValue::make_int(1700000000));
  return CanonValue::make_shadow(std::move(fields));
}

}  // namespace

TEST_CASE("legacy open folds into OPENAT with a resolved path") {
  TestEnv env;
  const auto& x86 = fixture("x86_64");
  RawSyscallEvent ev;
  ev.platform = &x86;
  ev.raw_number = 2;  // sys_open
  ev.args = {0x1000, 0x0, 0};
  ev.captured_buffers[0] = to_bytes("/app/./cfg");

  auto state = canonicalize(ev, env.ctx);
  CHECK(state.id == SyscallId::OPENAT);
  REQUIRE(state.args.size() == 4);
  CHECK(state.args[0].kind == ValueKind::Fd);
  CHECK(state.args[0].int_value == kCanonAtCwd);
  CHECK(state.args[1].kind == ValueKind::Path);
  CHECK(state.args[1].text == "/app/cfg");
  CHECK(state.args[2].kind == ValueKind::Flags);
  CHECK(state.args[2].flags.empty());
}

TEST_CASE("relative openat paths resolve against the dirfd directory") {
  TestEnv env;
  const auto& arm64 = fixture("armv8");
  // Simulate an earlier open of "/app" as a directory with raw fd 3.
  env.fdmap.register_open(3, {"/app", FdClass::Dir});

  RawSyscallEvent ev;
  ev.platform = &arm64;
  ev.raw_number = 56;  // openat
  ev.args = {3, 0x2000, 0, 0};
  ev.captured_buffers[1] = to_bytes("cfg");

  auto state = canonicalize(ev, env.ctx);
  CHECK(state.args[1].text == "/app/cfg");
  CHECK(state.args[0].int_value == kCanonAtCwd);
}

TEST_CASE("openat with the platform AT_FDCWD token resolves against the cwd") {
  TestEnv env;
  env.ctx.cwd = "/app/sub";
  const auto& x86 = fixture("x86_64");
  RawSyscallEvent ev;
  ev.platform = &x86;
  ev.raw_number = 257;
  ev.args = {static_cast<std::uint64_t>(x86.at_fdcwd), 0x2000, 0, 0};
  ev.captured_buffers[1] = to_bytes("data//file.txt");
  auto state = canonicalize(ev, env.ctx);
  CHECK(state.args[1].text == "/app/sub/data/file.txt");
}

TEST_CASE("path escape outside the application root is rejected") {
  TestEnv env;
  const auto& x86 = fixture("x86_64");
  RawSyscallEvent ev;
  ev.platform = &x86;
  ev.raw_number = 257;
  ev.args = {static_cast<std::uint64_t>(x86.at_fdcwd), 0x2000, 0, 0};
  ev.captured_buffers[1] = to_bytes("../../etc/passwd");
  CHECK_THROWS_AS(canonicalize(ev, env.ctx), PathEscapeError);
}

TEST_CASE("divergent flag encodings normalize to one canonical set") {
  TestEnv env_a, env_b;
  const auto& x86 = fixture("x86_64");
  const auto& arm = fixture("armv7_eabi");

  // O_DIRECTORY: 0x10000 on x86-64, 0x4000 on ARM.
  RawSyscallEvent ev_x86;
  ev_x86.platform = &x86;
  ev_x86.raw_number = 257;
  ev_x86.args = {static_cast<std::uint64_t>(x86.at_fdcwd), 0x2000, 0x10000, 0};
  ev_x86.captured_buffers[1] = to_bytes("sub");

  RawSyscallEvent ev_arm;
  ev_arm.platform = &arm;
  ev_arm.raw_number = 0x900142;
  ev_arm.args = {static_cast<std::uint64_t>(arm.at_fdcwd), 0x2000, 0x4000, 0};
  ev_arm.captured_buffers[1] = to_bytes("sub");

  auto sa = canonicalize(ev_x86, env_a.ctx);
  auto sb = canonicalize(ev_arm, env_b.ctx);
  CHECK(sa.args[2].flags == FlagSet{"DIRECTORY"});
  CHECK(deep_equivalent(sa, sb).match());
}

TEST_CASE("native stat images from two ABIs produce one shadow struct") {
  const auto& x86 = fixture("x86_64");
  const auto& arm = fixture("armv7_eabi");
  auto reg = default_struct_registry();
  const StructDef& def = reg.at("stat");

  CanonValue logical = logical_stat();
  Bytes native_x86 = write_shadow(x86, def, logical);
  Bytes native_arm = write_shadow(arm, def, logical);
  CHECK(native_x86.size() != native_arm.size());  // layouts genuinely differ

  TestEnv env_a, env_b;
  env_a.fdmap.register_open(3, {"/app/cfg", FdClass::File});
  env_b.fdmap.register_open(9, {"/app/cfg", FdClass::File});

  RawSyscallEvent ex;
  ex.platform = &x86;
  ex.raw_number = 5;  // fstat
  ex.args = {3, 0x4000};
  ex.direction = Direction::Exit;
  ex.raw_result = 0;
  ex.captured_buffers[1] = native_x86;

  RawSyscallEvent ea;
  ea.platform = &arm;
  ea.raw_number = 0x90006c;
  ea.args = {9, 0x4000};
  ea.direction = Direction::Exit;
  ea.raw_result = 0;
  ea.captured_buffers[1] = native_arm;

  auto sa = canonicalize(ex, env_a.ctx);
  auto sb = canonicalize(ea, env_b.ctx);
  CHECK(sa.args[1].kind == ValueKind::Shadow);
  CHECK(deep_equivalent(sa, sb).match());
  CHECK(serialize_state(sa) == serialize_state(sb));
}

TEST_CASE("big-endian platforms read shadow scalars correctly") {
  auto doc = parse_sectioned_file(data_path("abi/armv7_eabi.abi"));
  PlatformSpec be = load_platform_spec_from(doc, "armv7_eabi");
  be.name = "armv7_be";
  be.endianness = Endianness::Big;

  auto reg = default_struct_registry();
  const StructDef& def = reg.at("timeval");
  std::vector<std::pair<std::string, CanonValue>> fields;
  fields.emplace_back("sec", CanonValue::make_int(0x1122));
  fields.emplace_back("usec", CanonValue::make_int(7));
  CanonValue logical = CanonValue::make_shadow(std::move(fields));

  Bytes native_le = write_shadow(fixture("armv7_eabi"), def, logical);
  Bytes native_be = write_shadow(be, def, logical);
  CHECK(native_le != native_be);
  CHECK(read_shadow(be, def, native_be).fields[0].second.int_value == 0x1122);

  // Network-order fields stay byte-identical regardless of host order.
  const StructDef& sa_def = reg.at("sockaddr_in");
  std::vector<std::pair<std::string, CanonValue>> sa_fields;
  sa_fields.emplace_back("family", CanonValue::make_int(2));
  sa_fields.emplace_back("port", CanonValue::make_int(8080));
  sa_fields.emplace_back("addr", CanonValue::make_int(0x7f000001));
  sa_fields.emplace_back("zero", CanonValue::make_buffer(Bytes(8, 0)));
  CanonValue sa_logical = CanonValue::make_shadow(std::move(sa_fields));
  Bytes sa_le = write_shadow(fixture("armv7_eabi"), sa_def, sa_logical);
  Bytes sa_be = write_shadow(be, sa_def, sa_logical);
  // family is host-order (differs); port/addr are network-order (same bytes).
  CHECK(sa_le[2] == sa_be[2]);
  CHECK(sa_le[3] == sa_be[3]);
  auto back = read_shadow(be, sa_def, sa_be);
  CHECK(back.fields[1].second.int_value == 8080);
}

TEST_CASE("serialization is deterministic and injective on buffer bytes") {
  TestEnv env;
  const auto& x86 = fixture("x86_64");
  auto s1 = canonicalize(write_entry(x86, 1, "AAAA"), env.ctx);
  auto s2 = canonicalize(write_entry(x86, 1, "AAAA"), env.ctx);
  auto s3 = canonicalize(write_entry(x86, 1, "AABA"), env.ctx);

  CHECK(serialize_state(s1) == serialize_state(s2));
  CHECK(serialize_state(s1) != serialize_state(s3));
}

TEST_CASE("deep equivalence matches identical states") {
  TestEnv env;
  const auto& x86 = fixture("x86_64");
  auto a = canonicalize(write_entry(x86, 1, "hello"), env.ctx);
  auto b = canonicalize(write_entry(x86, 1, "hello"), env.ctx);
  CHECK(deep_equivalent(a, b).match());
}

TEST_CASE("different canonical ids diverge with SyscallIdMismatch") {
  TestEnv env;
  const auto& x86 = fixture("x86_64");

  RawSyscallEvent rd;
  rd.platform = &x86;
  rd.raw_number = 0;  // read (entry: out buffer is a pointer tag)
  rd.args = {0, 0x1000, 16};

  auto a = canonicalize(rd, env.ctx);
  auto b = canonicalize(write_entry(x86, 0, "xxxxxxxxxxxxxxxx"), env.ctx);
  auto verdict = deep_equivalent(a, b);
  REQUIRE(!verdict.match());
  CHECK(verdict.divergence->reason == DivergenceReason::SyscallIdMismatch);
}

TEST_CASE("payload byte flip reports the arg position and offset") {
  TestEnv env;
  const auto& x86 = fixture("x86_64");
  auto a = canonicalize(write_entry(x86, 1, "AAAA"), env.ctx);
  auto b = canonicalize(write_entry(x86, 1, "AABA"), env.ctx);
  auto verdict = deep_equivalent(a, b);
  REQUIRE(!verdict.match());
  CHECK(verdict.divergence->reason == DivergenceReason::BufferMismatch);
  CHECK(verdict.divergence->arg_pos == 2);
  CHECK(verdict.divergence->buffer_offset == 2);
}

TEST_CASE("deep equivalence is an equivalence relation") {
  TestEnv env;
  const auto& x86 = fixture("x86_64");
  auto a = canonicalize(write_entry(x86, 1, "p1"), env.ctx);
  auto b = canonicalize(write_entry(x86, 1, "p1"), env.ctx);
  auto c = canonicalize(write_entry(x86, 1, "p1"), env.ctx);

  CHECK(deep_equivalent(a, a).match());  // reflexive
  CHECK(deep_equivalent(a, b).match() == deep_equivalent(b, a).match());
  if (deep_equivalent(a, b).match() && deep_equivalent(b, c).match())
    CHECK(deep_equivalent(a, c).match());
}

TEST_CASE("a verdict always agrees with serialized byte equality") {
  TestEnv env;
  const auto& x86 = fixture("x86_64");
  const auto& arm = fixture("armv7_eabi");
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    std::string pa(1 + rng() % 8, 'x');
    std::string pb = pa;
    if (rng() % 2) pb[rng() % pb.size()] ^= 1;
    const PlatformSpec& plat_b = (rng() % 2) ? x86 : arm;
    TestEnv env_b;
    auto a = canonicalize(write_entry(x86, 1, pa), env.ctx);
    auto b = canonicalize(write_entry(plat_b, 1, pb), env_b.ctx);
    CHECK(deep_equivalent(a, b).match() ==
          (serialize_state(a) == serialize_state(b)));
  }
}

TEST_CASE("canonicalization of an already canonical rendering is stable") {
  // Same-platform round trip: canonicalizing the same event twice compares
  // identically to itself.
  TestEnv env1, env2;
  const auto& x86 = fixture("x86_64");
  auto a = canonicalize(write_entry(x86, 1, "idem"), env1.ctx);
  auto b = canonicalize(write_entry(x86, 1, "idem"), env2.ctx);
  CHECK(deep_equivalent(a, b).match());
  CHECK(serialize_state(deserialize_state(serialize_state(a))) ==
        serialize_state(a));
}

TEST_CASE("serialized states survive a decode/encode round trip") {
  TestEnv env;
  const auto& arm = fixture("armv7_eabi");
  auto reg = default_struct_registry();
  Bytes native = write_shadow(arm, reg.at("stat"), logical_stat());

  env.fdmap.register_open(5, {"/app/cfg", FdClass::File});
  RawSyscallEvent ev;
  ev.platform = &arm;
  ev.raw_number = 0x90006c;
  ev.args = {5, 0x4000};
  ev.direction = Direction::Exit;
  ev.raw_result = 0;
  ev.captured_buffers[1] = native;

  auto state = canonicalize(ev, env.ctx);
  auto round = deserialize_state(serialize_state(state));
  CHECK(deep_equivalent(state, round).match());
}

TEST_CASE("negative results canonicalize to named errors") {
  TestEnv env;
  const auto& x86 = fixture("x86_64");
  RawSyscallEvent ev = write_entry(x86, 1, "zz");
  ev.direction = Direction::Exit;
  ev.raw_result = -2;  // ENOENT
  auto state = canonicalize(ev, env.ctx);
  REQUIRE(state.result.has_value());
  CHECK(state.result->is_error);
  CHECK(state.result->errno_name == "NOENT");
}

TEST_CASE("successful fd results translate to canonical descriptor ids") {
  TestEnv env;
  const auto& x86 = fixture("x86_64");
  std::int64_t canon = env.fdmap.register_open(17, {"/app/cfg", FdClass::File});
  CHECK(canon == 3);  // first open after the stdio preassignment

  RawSyscallEvent ev;
  ev.platform = &x86;
  ev.raw_number = 257;
  ev.args = {static_cast<std::uint64_t>(x86.at_fdcwd), 0x2000, 0, 0};
  ev.captured_buffers[1] = to_bytes("cfg");
  ev.direction = Direction::Exit;
  ev.raw_result = 17;

  auto state = canonicalize(ev, env.ctx);
  REQUIRE(state.result.has_value());
  CHECK(state.result->kind == ResultKind::Fd);
  CHECK(state.result->value == 3);
}

TEST_CASE("descriptor ids assigned in program order match across variants") {
  FdTranslation fda, fdb;
  // Variant A's kernel hands out 3,4,5; variant B's kernel hands out 10,11,12.
  for (int i = 0; i < 3; ++i) {
    auto ca = fda.register_open(3 + i, {"/app/f" + std::to_string(i), FdClass::File});
    auto cb = fdb.register_open(10 + i, {"/app/f" + std::to_string(i), FdClass::File});
    CHECK(ca == cb);
  }
  CHECK(*fda.canon_of(4) == *fdb.canon_of(11));
}

TEST_CASE("pointer arguments never carry address bits") {
  TestEnv env;
  const auto& x86 = fixture("x86_64");
  RawSyscallEvent a;
  a.platform = &x86;
  a.raw_number = 12;  // brk
  a.args = {0x55555000};
  RawSyscallEvent b = a;
  b.args = {0x7f1234560000ull};

  auto sa = canonicalize(a, env.ctx);
  auto sb = canonicalize(b, env.ctx);
  CHECK(sa.args[0].kind == ValueKind::PtrTag);
  CHECK(deep_equivalent(sa, sb).match());  // both non-null, addresses gone

  b.args = {0};
  auto snull = canonicalize(b, env.ctx);
  CHECK(!deep_equivalent(sa, snull).match());
}

TEST_CASE("canonicalization propagates unknown syscalls and flags") {
  TestEnv env;
  const auto& x86 = fixture("x86_64");

  RawSyscallEvent bad;
  bad.platform = &x86;
  bad.raw_number = 4242;
  CHECK_THROWS_AS(canonicalize(bad, env.ctx), UnknownSyscallError);

  RawSyscallEvent flags;
  flags.platform = &x86;
  flags.raw_number = 257;
  flags.args = {static_cast<std::uint64_t>(x86.at_fdcwd), 0x2000, 0x400000, 0};
  flags.captured_buffers[1] = to_bytes("cfg");
  CHECK_THROWS_AS(canonicalize(flags, env.ctx), UnknownFlagBitsError);

  CHECK(divergence_from_exception(UnknownSyscallError(4242)).reason ==
        DivergenceReason::UnknownSyscall);
  CHECK(divergence_from_exception(UnknownFlagBitsError(0x400000, "ctx")).reason ==
        DivergenceReason::UnknownFlags);
}
