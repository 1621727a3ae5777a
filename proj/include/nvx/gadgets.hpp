// Offline cross-ISA analysis of position-independent code-reuse gadgets:
// which gadgets stay reachable from the same code pointer under an offset
// overwrite or a partial (low-byte) pointer overwrite in *both* binaries,
// what semantics the survivors have, and how struct layouts diversify
// between the two ABIs. Inputs are text dumps of addresses produced by an
// external disassembly pipeline; no binary parsing happens here.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nvx/bytes.hpp"
#include "nvx/platform.hpp"

namespace nvx {

// --- inputs --------------------------------------------------------------

// Code pointers an attacker could patch. Labels are symbolic identities
// shared across binaries (the same return site / address-taken function);
// pairing across binaries is by label.
struct CodePointer {
  std::string label;
  std::uint64_t address = 0;
};

struct CodePointerSet {
  std::vector<CodePointer> entries;

  void validate() const {
    std::set<std::string> seen;
    for (const auto& p : entries)
      if (!seen.insert(p.label).second)
        throw std::runtime_error("duplicate code pointer label " + p.label);
  }
};

enum class GadgetTag : std::uint8_t {
  LoadsSyscallNumReg,
  LoadsArg1,
  LoadsArg2,
  LoadsArg3,
  Other,
};

inline std::string_view gadget_tag_name(GadgetTag t) {
  switch (t) {
    case GadgetTag::LoadsSyscallNumReg: return "loads_syscall_num_reg";
    case GadgetTag::LoadsArg1: return "loads_arg1";
    case GadgetTag::LoadsArg2: return "loads_arg2";
    case GadgetTag::LoadsArg3: return "loads_arg3";
    case GadgetTag::Other: return "other";
  }
  return "?";
}

inline std::optional<GadgetTag> gadget_tag_from_name(std::string_view name) {
  for (GadgetTag t : {GadgetTag::LoadsSyscallNumReg, GadgetTag::LoadsArg1,
                      GadgetTag::LoadsArg2, GadgetTag::LoadsArg3,
                      GadgetTag::Other})
    if (gadget_tag_name(t) == name) return t;
  return std::nullopt;
}

struct Gadget {
  std::uint64_t address = 0;
  std::set<GadgetTag> tags;
};

// One binary's gadget list; semantic tags follow that binary's own calling
// conventions. The alignment granularity is the ISA instruction granularity
// (1 for x86-64, 4 for ARM in ARM state).
struct GadgetSet {
  std::vector<Gadget> entries;
  std::uint32_t alignment = 1;

  const Gadget* at_address(std::uint64_t addr) const {
    for (const auto& g : entries)
      if (g.address == addr) return &g;
    return nullptr;
  }
};

// --- reachability ------------------------------------------------------------

enum class PatchStrategy : std::uint8_t { OffsetOverwrite, PartialPointerOverwrite };

inline std::string_view strategy_name(PatchStrategy s) {
  return s == PatchStrategy::OffsetOverwrite ? "offset" : "partial";
}

// Offset overwrite: the attacker corrupts an offset later added to a legal
// code pointer, so every gadget is reachable; the signed delta is recorded.
// label -> (offset -> gadget address)
using OffsetReach = std::map<std::string, std::map<std::int64_t, std::uint64_t>>;

inline OffsetReach reachable_by_offset(const CodePointerSet& ptrs,
                                       const GadgetSet& gadgets) {
  OffsetReach out;
  for (const auto& p : ptrs.entries) {
    auto& reach = out[p.label];
    for (const auto& g : gadgets.entries) {
      std::int64_t offset = static_cast<std::int64_t>(g.address) -
                            static_cast<std::int64_t>(p.address);
      reach.emplace(offset, g.address);
    }
  }
  return out;
}

// Partial pointer overwrite: only the 8 least significant bits of the
// pointer can change, so a gadget is reachable iff it shares all the higher
// bits. label -> (low byte -> gadget address)
using PartialReach =
    std::map<std::string, std::map<std::uint8_t, std::uint64_t>>;

inline PartialReach reachable_by_partial_overwrite(const CodePointerSet& ptrs,
                                                   const GadgetSet& gadgets) {
  PartialReach out;
  for (const auto& p : ptrs.entries) {
    auto& reach = out[p.label];
    for (const auto& g : gadgets.entries) {
      if ((g.address >> 8) == (p.address >> 8))
        reach.emplace(static_cast<std::uint8_t>(g.address & 0xff), g.address);
    }
  }
  return out;
}

// --- surviving intersection --------------------------------------------------

// One cross-binary survivor: the A-side gadget, the B-side gadget reached by
// the identical patch, and the patch parameter itself.
struct SurvivingPair {
  std::uint64_t a_address = 0;
  std::uint64_t b_address = 0;
  std::int64_t offset = 0;      // offset strategy
  std::uint8_t low_byte = 0;    // partial strategy
};

struct SurvivingSets {
  PatchStrategy strategy = PatchStrategy::OffsetOverwrite;
  std::map<std::string, std::vector<SurvivingPair>> by_label;
  std::size_t unpaired_labels = 0;  // labels missing on one side, excluded
};

// An A-side gadget survives iff the same patch value reaches a gadget in the
// B binary from the label-paired pointer, and the B-side address (and, for
// offset patches, the offset itself) respects B's instruction alignment —
// a misaligned target would fault instead of executing.
inline SurvivingSets surviving_intersection(const OffsetReach& reach_a,
                                            const OffsetReach& reach_b,
                                            std::uint32_t align_b) {
  SurvivingSets out;
  out.strategy = PatchStrategy::OffsetOverwrite;
  for (const auto& [label, a_side] : reach_a) {
    auto b_it = reach_b.find(label);
    if (b_it == reach_b.end()) {
      ++out.unpaired_labels;
      continue;
    }
    auto& pairs = out.by_label[label];
    for (const auto& [offset, a_addr] : a_side) {
      auto match = b_it->second.find(offset);
      if (match == b_it->second.end()) continue;
      if (align_b > 1) {
        if (match->second % align_b != 0) continue;
        if (offset % static_cast<std::int64_t>(align_b) != 0) continue;
      }
      pairs.push_back({a_addr, match->second, offset, 0});
    }
  }
  for (const auto& [label, b_side] : reach_b)
    if (reach_a.find(label) == reach_a.end()) ++out.unpaired_labels;
  return out;
}

inline SurvivingSets surviving_intersection(const PartialReach& reach_a,
                                            const PartialReach& reach_b,
                                            std::uint32_t align_b) {
  SurvivingSets out;
  out.strategy = PatchStrategy::PartialPointerOverwrite;
  for (const auto& [label, a_side] : reach_a) {
    auto b_it = reach_b.find(label);
    if (b_it == reach_b.end()) {
      ++out.unpaired_labels;
      continue;
    }
    auto& pairs = out.by_label[label];
    for (const auto& [low, a_addr] : a_side) {
      auto match = b_it->second.find(low);
      if (match == b_it->second.end()) continue;
      if (align_b > 1 && match->second % align_b != 0) continue;
      pairs.push_back({a_addr, match->second, 0, low});
    }
  }
  for (const auto& [label, b_side] : reach_b)
    if (reach_a.find(label) == reach_a.end()) ++out.unpaired_labels;
  return out;
}

// --- semantics filtering ------------------------------------------------

// Counts the surviving pairs where BOTH sides carry the tag: a chain step is
// only useful cross-ISA when the gadget loads the equivalent register in
// each binary's own conventions.
inline std::map<std::string, std::size_t> classify_semantics_filter(
    const SurvivingSets& surviving, const GadgetSet& gadgets_a,
    const GadgetSet& gadgets_b, GadgetTag tag) {
  std::map<std::string, std::size_t> out;
  for (const auto& [label, pairs] : surviving.by_label) {
    std::size_t count = 0;
    for (const auto& pair : pairs) {
      const Gadget* ga = gadgets_a.at_address(pair.a_address);
      const Gadget* gb = gadgets_b.at_address(pair.b_address);
      if (ga && gb && ga->tags.count(tag) && gb->tags.count(tag)) ++count;
    }
    out[label] = count;
  }
  return out;
}

// --- the full report -----------------------------------------------------

struct LabelSurvival {
  std::string label;
  std::size_t reachable_a = 0;
  std::size_t reachable_b = 0;
  std::size_t surviving = 0;
  std::map<GadgetTag, std::size_t> by_tag;
};

struct SurvivabilityReport {
  PatchStrategy strategy = PatchStrategy::OffsetOverwrite;
  std::uint32_t align_b = 1;
  std::vector<LabelSurvival> per_label;
  std::size_t unpaired_labels = 0;
  double reachable_a_mean = 0.0;
  double surviving_mean = 0.0;
  double survival_ratio = 0.0;  // surviving_mean / reachable_a_mean
  std::map<GadgetTag, double> tag_means;

  std::string to_text() const {
    std::ostringstream out;
    out << "[summary]\n";
    out << "strategy = " << strategy_name(strategy) << "\n";
    out << "align_b = " << align_b << "\n";
    out << "pointers_paired = " << per_label.size() << "\n";
    out << "pointers_unpaired = " << unpaired_labels << "\n";
    out << "reachable_a_mean = " << reachable_a_mean << "\n";
    out << "surviving_mean = " << surviving_mean << "\n";
    out << "survival_ratio = " << survival_ratio << "\n";
    for (const auto& [tag, mean] : tag_means)
      out << "surviving_" << gadget_tag_name(tag) << "_mean = " << mean << "\n";
    out << "\n[per_pointer]\n";
    out << "# label reachable_a surviving";
    for (GadgetTag t : {GadgetTag::LoadsSyscallNumReg, GadgetTag::LoadsArg1,
                        GadgetTag::LoadsArg2, GadgetTag::LoadsArg3})
      out << " " << gadget_tag_name(t);
    out << "\n";
    for (const auto& row : per_label) {
      out << row.label << " " << row.reachable_a << " " << row.surviving;
      for (GadgetTag t : {GadgetTag::LoadsSyscallNumReg, GadgetTag::LoadsArg1,
                          GadgetTag::LoadsArg2, GadgetTag::LoadsArg3}) {
        auto it = row.by_tag.find(t);
        out << " " << (it == row.by_tag.end() ? 0 : it->second);
      }
      out << "\n";
    }
    return out.str();
  }
};

inline SurvivabilityReport build_survivability_report(
    const CodePointerSet& ptrs_a, const GadgetSet& gadgets_a,
    const CodePointerSet& ptrs_b, const GadgetSet& gadgets_b,
    PatchStrategy strategy, std::uint32_t align_b) {
  ptrs_a.validate();
  ptrs_b.validate();

  SurvivabilityReport report;
  report.strategy = strategy;
  report.align_b = align_b;

  SurvivingSets surviving;
  std::map<std::string, std::size_t> reach_a_counts, reach_b_counts;
  if (strategy == PatchStrategy::OffsetOverwrite) {
    OffsetReach ra = reachable_by_offset(ptrs_a, gadgets_a);
    OffsetReach rb = reachable_by_offset(ptrs_b, gadgets_b);
    for (const auto& [label, reach] : ra) reach_a_counts[label] = reach.size();
    for (const auto& [label, reach] : rb) reach_b_counts[label] = reach.size();
    surviving = surviving_intersection(ra, rb, align_b);
  } else {
    PartialReach ra = reachable_by_partial_overwrite(ptrs_a, gadgets_a);
    PartialReach rb = reachable_by_partial_overwrite(ptrs_b, gadgets_b);
    for (const auto& [label, reach] : ra) reach_a_counts[label] = reach.size();
    for (const auto& [label, reach] : rb) reach_b_counts[label] = reach.size();
    surviving = surviving_intersection(ra, rb, align_b);
  }
  report.unpaired_labels = surviving.unpaired_labels;

  const GadgetTag tags[] = {GadgetTag::LoadsSyscallNumReg, GadgetTag::LoadsArg1,
                            GadgetTag::LoadsArg2, GadgetTag::LoadsArg3};
  std::map<GadgetTag, std::map<std::string, std::size_t>> tag_counts;
  for (GadgetTag t : tags)
    tag_counts[t] = classify_semantics_filter(surviving, gadgets_a, gadgets_b, t);

  double sum_reach = 0.0, sum_surv = 0.0;
  std::map<GadgetTag, double> tag_sums;
  for (const auto& [label, pairs] : surviving.by_label) {
    LabelSurvival row;
    row.label = label;
    row.reachable_a = reach_a_counts[label];
    row.reachable_b = reach_b_counts[label];
    // Distinct A-side gadgets that survive via at least one patch value.
    std::set<std::uint64_t> distinct_a;
    for (const auto& pair : pairs) distinct_a.insert(pair.a_address);
    row.surviving = distinct_a.size();
    for (GadgetTag t : tags) row.by_tag[t] = tag_counts[t][label];
    sum_reach += static_cast<double>(row.reachable_a);
    sum_surv += static_cast<double>(row.surviving);
    for (GadgetTag t : tags) tag_sums[t] += static_cast<double>(row.by_tag[t]);
    report.per_label.push_back(std::move(row));
  }
  std::size_t n = report.per_label.size();
  if (n > 0) {
    report.reachable_a_mean = sum_reach / static_cast<double>(n);
    report.surviving_mean = sum_surv / static_cast<double>(n);
    for (GadgetTag t : tags)
      report.tag_means[t] = tag_sums[t] / static_cast<double>(n);
    report.survival_ratio =
        report.reachable_a_mean > 0
            ? report.surviving_mean / report.reachable_a_mean
            : 0.0;
  }
  return report;
}

// --- struct layout diversity ---------------------------------------------

struct StructDiversityRow {
  std::string name;
  bool diverges = false;
  LayoutDiff diff;
  StructLayout layout_a, layout_b;
};

struct LayoutDiversityReport {
  std::size_t diverging = 0;
  std::size_t total = 0;
  std::vector<StructDiversityRow> rows;

  std::string to_text() const {
    std::ostringstream out;
    out << "[summary]\n";
    out << "diverging = " << diverging << "\n";
    out << "total = " << total << "\n";
    out << "\n[structs]\n";
    for (const auto& row : rows) {
      out << row.name << (row.diverges ? " diverges" : " identical");
      if (row.diverges) {
        out << " fields";
        for (const auto& f : row.diff.fields) out << " " << f.field_index;
        out << " size " << row.layout_a.size << "->" << row.layout_b.size;
      }
      out << "\n";
    }
    return out.str();
  }
};

inline LayoutDiversityReport layout_diversity_report(
    const std::vector<StructDef>& defs, const PlatformSpec& platform_a,
    const PlatformSpec& platform_b) {
  LayoutDiversityReport report;
  report.total = defs.size();
  for (const auto& def : defs) {
    StructDiversityRow row;
    row.name = def.name;
    row.layout_a = compute_struct_layout(platform_a, def);
    row.layout_b = compute_struct_layout(platform_b, def);
    row.diff = layout_diverges(row.layout_a, row.layout_b);
    row.diverges = !row.diff.empty();
    if (row.diverges) ++report.diverging;
    report.rows.push_back(std::move(row));
  }
  return report;
}

// --- input file parsing ------------------------------------------------------
//
// Pointer dumps:  <label> <address>
// Gadget dumps:   <address> [tag,tag,...]     (missing tags mean "other")
//
inline CodePointerSet load_code_pointers(const std::string& path) {
  CodePointerSet out;
  auto doc = parse_sectioned_file(path);
  for (const auto& [section, lines] : doc.sections) {
    for (const auto& line : lines) {
      auto toks = split_ws(line.text);
      if (toks.size() != 2)
        throw std::runtime_error(path + ":" + std::to_string(line.number) +
                                 ": expected <label> <address>");
      out.entries.push_back({toks[0], parse_uint(toks[1])});
    }
  }
  out.validate();
  return out;
}

inline GadgetSet load_gadgets(const std::string& path, std::uint32_t alignment) {
  GadgetSet out;
  out.alignment = alignment;
  auto doc = parse_sectioned_file(path);
  std::set<std::uint64_t> seen;
  for (const auto& [section, lines] : doc.sections) {
    for (const auto& line : lines) {
      auto toks = split_ws(line.text);
      if (toks.empty()) continue;
      Gadget g;
      g.address = parse_uint(toks[0]);
      if (toks.size() > 1) {
        for (const auto& name : split_on(toks[1], ',')) {
          auto tag = gadget_tag_from_name(name);
          if (!tag)
            throw std::runtime_error(path + ":" + std::to_string(line.number) +
                                     ": unknown tag " + name);
          g.tags.insert(*tag);
        }
      }
      if (g.tags.empty()) g.tags.insert(GadgetTag::Other);
      if (!seen.insert(g.address).second) continue;  // de-duplicate
      out.entries.push_back(std::move(g));
    }
  }
  return out;
}

}  // namespace nvx
