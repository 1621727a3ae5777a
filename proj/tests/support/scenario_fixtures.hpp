// Shared scenario-building helpers for the harness, monitor, and acceptance
// suites: fixture platform loading, program builders, and the benign
// two-platform corpus.

#pragma once

#include <string>

#include "nvx/scenario.hpp"

namespace nvx::testing {

inline std::string data_path(const std::string& rel) {
  return std::string(NVX_DATA_DIR) + "/" + rel;
}

inline ScenarioRuntime make_runtime() {
  ScenarioRuntime runtime;
  runtime.policy = load_policy_table(data_path("policy/default.policy"));
  for (const char* name : {"x86_64", "i386", "armv7_eabi", "armv8"}) {
    runtime.platforms.emplace(
        name, load_platform_spec(data_path("abi/" + std::string(name) + ".abi")));
  }
  return runtime;
}

// Program-building helpers.

inline Intent op_open(int out_slot, const std::string& path, FlagSet flags = {},
                      std::int64_t mode = 0) {
  Intent i;
  i.op = OpCode::Open;
  i.out_slot = out_slot;
  i.path = path;
  i.flags = std::move(flags);
  i.b = mode;
  return i;
}

inline Intent op_read(int slot, std::int64_t count) {
  Intent i;
  i.op = OpCode::Read;
  i.slot = slot;
  i.a = count;
  return i;
}

inline Intent op_pread(int slot, std::int64_t count, std::int64_t off) {
  Intent i;
  i.op = OpCode::Pread;
  i.slot = slot;
  i.a = count;
  i.b = off;
  return i;
}

inline Intent op_write(int slot, const std::string& payload) {
  Intent i;
  i.op = OpCode::Write;
  i.slot = slot;
  i.payload = to_bytes(payload);
  return i;
}

inline Intent op_close(int slot) {
  Intent i;
  i.op = OpCode::Close;
  i.slot = slot;
  return i;
}

inline Intent op_fstat(int slot) {
  Intent i;
  i.op = OpCode::Fstat;
  i.slot = slot;
  return i;
}

inline Intent op_lseek(int slot, std::int64_t off, std::int64_t whence) {
  Intent i;
  i.op = OpCode::Lseek;
  i.slot = slot;
  i.a = off;
  i.b = whence;
  return i;
}

inline Intent op_dup(int slot, int out_slot) {
  Intent i;
  i.op = OpCode::Dup;
  i.slot = slot;
  i.out_slot = out_slot;
  return i;
}

inline Intent op_simple(OpCode op) {
  Intent i;
  i.op = op;
  return i;
}

inline Intent op_nanosleep(std::int64_t sec, std::int64_t nsec) {
  Intent i;
  i.op = OpCode::Nanosleep;
  i.a = sec;
  i.b = nsec;
  return i;
}

inline Intent op_socket(int out_slot) {
  Intent i;
  i.op = OpCode::Socket;
  i.out_slot = out_slot;
  return i;
}

inline Intent op_bind(int slot, std::int64_t port) {
  Intent i;
  i.op = OpCode::Bind;
  i.slot = slot;
  i.a = port;
  return i;
}

inline Intent op_listen(int slot) {
  Intent i;
  i.op = OpCode::Listen;
  i.slot = slot;
  return i;
}

inline Intent op_accept(int slot, int out_slot) {
  Intent i;
  i.op = OpCode::Accept;
  i.slot = slot;
  i.out_slot = out_slot;
  return i;
}

inline Intent op_connect(int slot, std::int64_t port) {
  Intent i;
  i.op = OpCode::Connect;
  i.slot = slot;
  i.a = port;
  return i;
}

inline Intent op_recvfrom(int slot, std::int64_t count) {
  Intent i;
  i.op = OpCode::Recvfrom;
  i.slot = slot;
  i.a = count;
  return i;
}

inline Intent op_sendto(int slot, const std::string& payload,
                        std::uint64_t ptr_value = 0) {
  Intent i;
  i.op = OpCode::Sendto;
  i.slot = slot;
  i.payload = to_bytes(payload);
  i.ptr_value = ptr_value;
  return i;
}

inline Intent op_exit(std::int64_t code = 0) {
  Intent i;
  i.op = OpCode::ExitGroup;
  i.a = code;
  return i;
}

inline Intent op_mmap(std::int64_t len) {
  Intent i;
  i.op = OpCode::MmapAnon;
  i.a = len;
  return i;
}

inline Intent op_munmap(std::int64_t len) {
  Intent i;
  i.op = OpCode::Munmap;
  i.a = len;
  return i;
}

inline Intent op_brk(std::int64_t delta) {
  Intent i;
  i.op = OpCode::Brk;
  i.a = delta;
  return i;
}

// A two-variant scenario shell over the x86-64 and ARMv7 descriptors.
inline ScenarioConfig two_platform_scenario(const std::string& name) {
  ScenarioConfig config;
  config.name = name;
  config.app_root = "/app";
  config.files["/app/cfg"] = to_bytes("port=8080\nworkers=4\n# fixture config\n");
  config.files["/app/static/index.html"] =
      to_bytes("<html><body>fixture page used by the read benchmarks"
               "</body></html>\n");
  config.files["/app/data.bin"] = [] {
    Bytes b(1024);
    for (std::size_t i = 0; i < b.size(); ++i)
      b[i] = static_cast<std::uint8_t>(i * 131 + 7);
    return b;
  }();
  config.net_inbound.push_back(to_bytes("GET / HTTP/1.1\r\n\r\n"));
  config.net_inbound.push_back(to_bytes("GET /cfg HTTP/1.1\r\n\r\n"));
  config.net_inbound.push_back(to_bytes("QUIT\r\n"));

  VariantConfig leader;
  leader.name = "v0";
  leader.platform = "x86_64";
  leader.role = Role::Leader;
  VariantConfig follower;
  follower.name = "v1";
  follower.platform = "armv7_eabi";
  follower.role = Role::Follower;
  config.variants = {leader, follower};
  return config;
}

// The benign corpus: >= 20 two-platform scenarios collectively exercising
// every expected-divergence category (syscall numbering, flag encodings,
// struct layouts, legacy-open folding).
inline std::vector<ScenarioConfig> benign_corpus() {
  std::vector<ScenarioConfig> corpus;
  auto add = [&](const std::string& name, std::vector<Intent> intents) {
    ScenarioConfig config = two_platform_scenario(name);
    config.program = {name, std::move(intents)};
    corpus.push_back(std::move(config));
  };

  // 1: plain static read (syscall-number category: every call differs).
  add("read-static", {op_open(0, "/app/cfg"), op_read(0, 64), op_close(0),
                      op_exit()});
  // 2: legacy open on x86-64 vs openat elsewhere (open-vs-openat category).
  {
    ScenarioConfig config = two_platform_scenario("open-style-divergence");
    Intent open = op_open(0, "/app/cfg");
    open.overrides["open_style:x86_64"] = "open";
    config.program = {"open-style-divergence",
                      {open, op_read(0, 32), op_close(0), op_exit()}};
    corpus.push_back(std::move(config));
  }
  // 3: flag-layout divergence (DIRECTORY bit differs across the two ABIs).
  add("open-directory-flags",
      {op_open(0, "/app/static", {"DIRECTORY"}), op_close(0), op_exit()});
  // 4: struct-layout divergence via fstat's shadow struct.
  add("fstat-shadow", {op_open(0, "/app/cfg"), op_fstat(0), op_close(0),
                       op_exit()});
  // 5: timeval shadow (long-width divergence) through replicated time.
  add("time-replication",
      {op_simple(OpCode::Gettimeofday), op_simple(OpCode::ClockGettime),
       op_exit()});
  // 6: immutable state caching.
  add("getpid-cache",
      {op_simple(OpCode::Getpid), op_simple(OpCode::Getpid),
       op_simple(OpCode::Getppid), op_simple(OpCode::Getppid), op_exit()});
  // 7: unchecked scheduling call.
  add("sched-yield", {op_simple(OpCode::SchedYield), op_simple(OpCode::SchedYield),
                      op_exit()});
  // 8: cwd without replication.
  add("getcwd-local", {op_simple(OpCode::Getcwd), op_simple(OpCode::Getcwd),
                       op_exit()});
  // 9: file write replication plus de-static-ing.
  add("write-then-read",
      {op_open(0, "/app/log", {"WRONLY", "CREAT"}), op_write(0, "entry-1\n"),
       op_close(0), op_open(1, "/app/log"), op_read(1, 64), op_close(1),
       op_exit()});
  // 10: socket server accepting one request.
  add("server-accept",
      {op_socket(0), op_bind(0, 8080), op_listen(0), op_accept(0, 1),
       op_recvfrom(1, 128), op_sendto(1, "HTTP/1.1 200 OK\r\n\r\n"),
       op_close(1), op_close(0), op_exit()});
  // 11: client connect/send/recv.
  add("client-roundtrip",
      {op_socket(0), op_connect(0, 9000), op_sendto(0, "ping"),
       op_recvfrom(0, 64), op_close(0), op_exit()});
  // 12: pread does not move the cursor.
  add("pread-static",
      {op_open(0, "/app/data.bin"), op_pread(0, 100, 32), op_read(0, 16),
       op_close(0), op_exit()});
  // 13: lseek on a static file.
  add("lseek-read",
      {op_open(0, "/app/data.bin"), op_lseek(0, 512, 0), op_read(0, 64),
       op_close(0), op_exit()});
  // 14: dup and use both descriptors.
  add("dup-read", {op_open(0, "/app/cfg"), op_dup(0, 1), op_read(1, 8),
                   op_close(0), op_close(1), op_exit()});
  // 15: memory management locals.
  add("memory-ops", {op_mmap(4096), op_brk(4096), op_munmap(4096),
                     op_simple(OpCode::Mprotect), op_exit()});
  // 16: nanosleep's input shadow struct.
  add("nanosleep-shadow", {op_nanosleep(0, 250000000), op_nanosleep(1, 0),
                           op_exit()});
  // 17: mixed static reads under repeated fstat (bypass-heavy).
  add("fstat-read-loop",
      {op_open(0, "/app/static/index.html"), op_fstat(0), op_read(0, 32),
       op_fstat(0), op_read(0, 32), op_close(0), op_exit()});
  // 18: append mode write.
  add("append-write",
      {op_open(0, "/app/log2", {"WRONLY", "CREAT", "APPEND"}),
       op_write(0, "a"), op_write(0, "b"), op_close(0), op_exit()});
  // 19: identity calls cold and warm.
  add("identity-calls",
      {op_simple(OpCode::Getuid), op_simple(OpCode::Getgid),
       op_simple(OpCode::Getuid), op_simple(OpCode::Getgid), op_exit()});
  // 20: nonexistent file error replication.
  add("enoent-error", {op_open(0, "/app/missing"), op_exit()});
  // 21: everything at once.
  add("kitchen-sink",
      {op_open(0, "/app/cfg"), op_fstat(0), op_read(0, 16),
       op_simple(OpCode::Getpid), op_socket(1), op_connect(1, 7070),
       op_sendto(1, "hello"), op_recvfrom(1, 32), op_simple(OpCode::Getcwd),
       op_simple(OpCode::Gettimeofday), op_close(1), op_close(0),
       op_simple(OpCode::SchedYield), op_exit()});
  // 22: pointer-bearing payload (survives benignly when unpatched).
  add("pointer-payload",
      {op_socket(0), op_connect(0, 7071), op_sendto(0, "ptr:", 0x400f00),
       op_close(0), op_exit()});

  return corpus;
}

}  // namespace nvx::testing
