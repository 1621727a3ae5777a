#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "nvx/policy.hpp"

#include <sstream>

using namespace nvx;

namespace {

std::string data_path(const std::string& rel) {
  return std::string(NVX_DATA_DIR) + "/" + rel;
}

const PolicyTable& default_table() {
  static PolicyTable table = load_policy_table(data_path("policy/default.policy"));
  return table;
}

CanonicalSyscallState state_for(SyscallId id) {
  CanonicalSyscallState s;
  s.id = id;
  return s;
}

CanonicalSyscallState state_with_fd(SyscallId id, std::int64_t canon, FdClass cls) {
  CanonicalSyscallState s;
  s.id = id;
  s.args.push_back(CanonValue::make_fd(canon, cls));
  return s;
}

// Static-file oracle over an explicit set of verified descriptors.
struct FixedStatics final : StaticFileOracle {
  std::set<std::int64_t> verified;
  bool verified_static(std::int64_t canon_fd) const override {
    return verified.count(canon_fd) > 0;
  }
};

}  // namespace

TEST_CASE("prose-documented classifications hold") {
  const auto& table = default_table();

  CHECK(classify_sensitivity(table, SyscallId::SCHED_YIELD,
                             state_for(SyscallId::SCHED_YIELD)) ==
        SensitivityClass::None);
  CHECK(classify_sensitivity(table, SyscallId::READ,
                             state_with_fd(SyscallId::READ, 3, FdClass::File)) ==
        SensitivityClass::Moderate);
  CHECK(classify_sensitivity(table, SyscallId::EXIT_GROUP,
                             state_for(SyscallId::EXIT_GROUP)) ==
        SensitivityClass::High);
}

TEST_CASE("replication classes for the documented rows") {
  const auto& table = default_table();
  NoStaticFiles none;

  CHECK(classify_replication(table, SyscallId::SENDTO,
                             state_with_fd(SyscallId::SENDTO, 4, FdClass::Socket),
                             none, true) == ReplicationClass::ReplicateIO);
  CHECK(classify_replication(table, SyscallId::GETPID,
                             state_for(SyscallId::GETPID), none, true) ==
        ReplicationClass::CachedImmutable);
  CHECK(classify_replication(table, SyscallId::GETPPID,
                             state_for(SyscallId::GETPPID), none, false) ==
        ReplicationClass::CachedImmutable);
  CHECK(classify_replication(table, SyscallId::SCHED_YIELD,
                             state_for(SyscallId::SCHED_YIELD), none, true) ==
        ReplicationClass::LocalExecute);
  CHECK(classify_replication(table, SyscallId::GETTIMEOFDAY,
                             state_for(SyscallId::GETTIMEOFDAY), none, true) ==
        ReplicationClass::ReplicateMutableState);
}

TEST_CASE("static file reads bypass replication only under the optimization") {
  const auto& table = default_table();
  FixedStatics statics;
  statics.verified.insert(3);

  auto read_static = state_with_fd(SyscallId::READ, 3, FdClass::File);
  CHECK(classify_replication(table, SyscallId::READ, read_static, statics, true) ==
        ReplicationClass::LocalExecute);
  CHECK(classify_replication(table, SyscallId::READ, read_static, statics, false) ==
        ReplicationClass::ReplicateIO);

  // Same call against an unverified descriptor keeps its table class.
  auto read_other = state_with_fd(SyscallId::READ, 7, FdClass::File);
  CHECK(classify_replication(table, SyscallId::READ, read_other, statics, true) ==
        ReplicationClass::ReplicateIO);

  // Socket reads are never static files.
  auto read_sock = state_with_fd(SyscallId::READ, 3, FdClass::Socket);
  CHECK(classify_replication(table, SyscallId::READ, read_sock, statics, true) ==
        ReplicationClass::ReplicateIO);

  // FSTAT and LSEEK carry the same static-read eligibility.
  CHECK(classify_replication(table, SyscallId::FSTAT,
                             state_with_fd(SyscallId::FSTAT, 3, FdClass::File),
                             statics, true) == ReplicationClass::LocalExecute);
  CHECK(classify_replication(table, SyscallId::LSEEK,
                             state_with_fd(SyscallId::LSEEK, 3, FdClass::File),
                             statics, true) == ReplicationClass::LocalExecute);
}

TEST_CASE("a written file stops being classified as locally executable") {
  const auto& table = default_table();
  FixedStatics statics;
  statics.verified.insert(3);
  auto read_state = state_with_fd(SyscallId::READ, 3, FdClass::File);
  CHECK(classify_replication(table, SyscallId::READ, read_state, statics, true) ==
        ReplicationClass::LocalExecute);
  statics.verified.erase(3);  // manifest drops it once written
  CHECK(classify_replication(table, SyscallId::READ, read_state, statics, true) ==
        ReplicationClass::ReplicateIO);
}

TEST_CASE("classification is total over the supported enumeration") {
  const auto& table = default_table();
  NoStaticFiles none;
  for (SyscallId id : all_syscall_ids()) {
    auto s = state_for(id);
    CHECK_NOTHROW(classify_sensitivity(table, id, s));
    CHECK_NOTHROW(classify_replication(table, id, s, none, true));
    CHECK_NOTHROW(classify_replication(table, id, s, none, false));
  }
}

TEST_CASE("disabling the filesystem optimization restores the table class") {
  const auto& table = default_table();
  FixedStatics statics;
  for (std::int64_t fd = 0; fd < 16; ++fd) statics.verified.insert(fd);
  NoStaticFiles none;
  for (SyscallId id : all_syscall_ids()) {
    for (FdClass cls : {FdClass::File, FdClass::Socket, FdClass::Std}) {
      auto s = state_with_fd(id, 3, cls);
      auto off = classify_replication(table, id, s, statics, false);
      auto baseline = classify_replication(table, id, s, none, true);
      // With the optimization off the result is exactly the table class; any
      // LocalExecute seen then is an inherently local row, not a bypass.
      CHECK(off == baseline);
    }
  }
}

TEST_CASE("argument predicates pick specialized rows") {
  std::istringstream policy(
      "WRITE@fd1_socket high io\n"
      "WRITE@fd1_std moderate io\n"
      "WRITE moderate io\n"
      "READ moderate io static_read\n"
      "PREAD moderate io\n"
      "OPENAT high local\n"
      "CLOSE moderate local\n"
      "FSTAT moderate mutable\n"
      "LSEEK moderate mutable\n"
      "DUP moderate mutable\n"
      "GETCWD moderate local\n"
      "GETPID none cached\n"
      "GETPPID none cached\n"
      "GETUID none cached\n"
      "GETGID none cached\n"
      "SCHED_YIELD none local\n"
      "NANOSLEEP moderate local\n"
      "BRK moderate local\n"
      "MMAP_ANON high local\n"
      "MUNMAP high local\n"
      "MPROTECT high local\n"
      "SOCKET high mutable\n"
      "BIND high io\n"
      "LISTEN high io\n"
      "CONNECT high io\n"
      "ACCEPT high io\n"
      "RECVFROM high io\n"
      "SENDTO high io\n"
      "GETTIMEOFDAY moderate mutable\n"
      "CLOCK_GETTIME moderate mutable\n"
      "EXIT_GROUP high local\n");
  auto table = load_policy_table_from(parse_sectioned_text(policy, "<inline>"),
                                      "<inline>");

  CHECK(classify_sensitivity(table, SyscallId::WRITE,
                             state_with_fd(SyscallId::WRITE, 4, FdClass::Socket)) ==
        SensitivityClass::High);
  CHECK(classify_sensitivity(table, SyscallId::WRITE,
                             state_with_fd(SyscallId::WRITE, 1, FdClass::Std)) ==
        SensitivityClass::Moderate);
  CHECK(classify_sensitivity(table, SyscallId::WRITE,
                             state_with_fd(SyscallId::WRITE, 5, FdClass::File)) ==
        SensitivityClass::Moderate);  // bare row
}

TEST_CASE("table validation rejects incomplete or ill-typed tables") {
  std::istringstream missing("READ moderate io\n");
  CHECK_THROWS_AS(
      load_policy_table_from(parse_sectioned_text(missing, "<m>"), "<m>"),
      PolicyFileError);

  std::istringstream bad_class("READ moderate turbo\n");
  CHECK_THROWS_AS(
      load_policy_table_from(parse_sectioned_text(bad_class, "<b>"), "<b>"),
      PolicyFileError);

  // cached replication on a call with arguments is rejected
  std::ostringstream full;
  for (SyscallId id : all_syscall_ids()) {
    if (id == SyscallId::READ) full << "READ none cached\n";
    else full << syscall_id_name(id) << " high io\n";
  }
  std::istringstream cached_read(full.str());
  CHECK_THROWS_AS(
      load_policy_table_from(parse_sectioned_text(cached_read, "<c>"), "<c>"),
      PolicyFileError);
}

TEST_CASE("classification is pure") {
  const auto& table = default_table();
  NoStaticFiles none;
  auto s = state_with_fd(SyscallId::READ, 3, FdClass::File);
  for (int i = 0; i < 10; ++i) {
    CHECK(classify_sensitivity(table, SyscallId::READ, s) ==
          SensitivityClass::Moderate);
    CHECK(classify_replication(table, SyscallId::READ, s, none, true) ==
          ReplicationClass::ReplicateIO);
  }
}
