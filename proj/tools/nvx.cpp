// Command-line front end: runs scenarios from configuration files, analyzes
// cross-ISA gadget survivability from address dumps, and reports struct
// layout diversity between two ABI descriptors.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "nvx/config.hpp"
#include "nvx/gadgets.hpp"
#include "nvx/scenario.hpp"

namespace {

void write_report(const std::string& path, const std::string& text) {
  if (path.empty()) return;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report to " + path);
  out << text;
}

int run_command(const std::string& config_path, const std::string& transport,
                const std::string& pfa, const std::string& acc,
                const std::string& report_path, const std::string& daemon) {
  nvx::LoadedScenario loaded = nvx::load_scenario_file(config_path);
  if (!transport.empty()) {
    auto kind = nvx::transport_from_name(transport);
    if (!kind) throw nvx::ConfigError("unknown transport " + transport);
    loaded.config.transport = *kind;
  }
  if (!pfa.empty()) loaded.config.mode.pfa_enabled = pfa == "on";
  if (!acc.empty()) loaded.config.mode.acc_enabled = acc == "on";

  nvx::ScenarioReport report =
      daemon.empty() ? nvx::run_scenario(loaded.config, loaded.runtime)
                     : nvx::run_party(loaded.config, loaded.runtime, daemon);
  std::string text = report.to_text();
  std::cout << text;
  write_report(report_path, text);
  switch (report.status) {
    case nvx::ScenarioStatus::Ok: return 0;
    case nvx::ScenarioStatus::Aborted: return 2;
    case nvx::ScenarioStatus::Error: return 1;
  }
  return 1;
}

int gadgets_command(const std::string& ptrs_a, const std::string& gadgets_a,
                    const std::string& ptrs_b, const std::string& gadgets_b,
                    const std::string& strategy, unsigned align_a,
                    unsigned align_b, const std::string& report_path) {
  auto pa = nvx::load_code_pointers(ptrs_a);
  auto ga = nvx::load_gadgets(gadgets_a, align_a);
  auto pb = nvx::load_code_pointers(ptrs_b);
  auto gb = nvx::load_gadgets(gadgets_b, align_b);
  nvx::PatchStrategy s = strategy == "partial"
                             ? nvx::PatchStrategy::PartialPointerOverwrite
                             : nvx::PatchStrategy::OffsetOverwrite;
  auto report = nvx::build_survivability_report(pa, ga, pb, gb, s, align_b);
  std::string text = report.to_text();
  std::cout << text;
  write_report(report_path, text);
  return 0;
}

int structdiff_command(const std::string& defs_path, const std::string& abi_a,
                       const std::string& abi_b, const std::string& report_path) {
  auto defs = nvx::load_struct_defs(defs_path);
  auto plat_a = nvx::load_platform_spec(abi_a);
  auto plat_b = nvx::load_platform_spec(abi_b);
  auto report = nvx::layout_diversity_report(defs, plat_a, plat_b);
  std::string text = report.to_text();
  std::cout << text;
  write_report(report_path, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heterogeneous multi-variant execution simulator and analyzer"};
  app.require_subcommand(1);

  // run
  std::string config_path, transport, pfa, acc, report_path, daemon;
  auto* run = app.add_subcommand("run", "run a scenario from a config file");
  run->add_option("--config", config_path, "scenario configuration file")
      ->required();
  run->add_option("--transport", transport, "mem|tcp (overrides the config)");
  run->add_option("--pfa", pfa, "on|off: permissive filesystem access");
  run->add_option("--acc", acc, "on|off: asynchronous cross-checking");
  run->add_option("--report", report_path, "write the report to this path");
  run->add_option("--daemon", daemon,
                  "run only the named variant in this process (tcp transport; "
                  "start every party separately)");

  // gadgets
  std::string ptrs_a, gadgets_a, ptrs_b, gadgets_b, strategy = "offset";
  std::string gadget_report;
  unsigned align_a = 1, align_b = 4;
  auto* gadgets =
      app.add_subcommand("gadgets", "cross-ISA gadget survivability analysis");
  gadgets->add_option("--ptrs-a", ptrs_a, "code pointer dump, binary A")->required();
  gadgets->add_option("--gadgets-a", gadgets_a, "gadget dump, binary A")->required();
  gadgets->add_option("--ptrs-b", ptrs_b, "code pointer dump, binary B")->required();
  gadgets->add_option("--gadgets-b", gadgets_b, "gadget dump, binary B")->required();
  gadgets->add_option("--strategy", strategy, "offset|partial")
      ->check(CLI::IsMember({"offset", "partial"}));
  gadgets->add_option("--align-a", align_a, "instruction alignment of binary A");
  gadgets->add_option("--align-b", align_b,
                      "instruction alignment of binary B (filter)");
  gadgets->add_option("--report", gadget_report, "write the report to this path");

  // structdiff
  std::string defs_path, abi_a, abi_b, struct_report;
  auto* structdiff = app.add_subcommand(
      "structdiff", "struct layout diversity between two ABI descriptors");
  structdiff->add_option("--defs", defs_path, "struct definition corpus")->required();
  structdiff->add_option("--abi-a", abi_a, "first ABI descriptor")->required();
  structdiff->add_option("--abi-b", abi_b, "second ABI descriptor")->required();
  structdiff->add_option("--report", struct_report, "write the report to this path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return run_command(config_path, transport, pfa, acc, report_path, daemon);
    if (gadgets->parsed())
      return gadgets_command(ptrs_a, gadgets_a, ptrs_b, gadgets_b, strategy,
                             align_a, align_b, gadget_report);
    if (structdiff->parsed())
      return structdiff_command(defs_path, abi_a, abi_b, struct_report);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
