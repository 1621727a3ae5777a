// Brute-force reference for the gadget survivability computation: a direct
// quadratic/cubic scan over (pointer, gadgetA, gadgetB) triples, written
// against the definitions and fully independent of the analyzer's indexed
// implementation.

#pragma once

#include <map>
#include <set>
#include <string>

#include "nvx/gadgets.hpp"

namespace nvx::testing {

struct OracleCounts {
  std::map<std::string, std::size_t> surviving;  // distinct A gadgets
  std::map<std::string, std::map<GadgetTag, std::size_t>> by_tag;
  std::size_t unpaired = 0;
};

inline OracleCounts brute_force_survivors(const CodePointerSet& ptrs_a,
                                          const GadgetSet& gadgets_a,
                                          const CodePointerSet& ptrs_b,
                                          const GadgetSet& gadgets_b,
                                          PatchStrategy strategy,
                                          std::uint32_t align_b) {
  OracleCounts out;
  const GadgetTag tags[] = {GadgetTag::LoadsSyscallNumReg, GadgetTag::LoadsArg1,
                            GadgetTag::LoadsArg2, GadgetTag::LoadsArg3};

  std::map<std::string, std::uint64_t> b_ptrs;
  for (const auto& p : ptrs_b.entries) b_ptrs[p.label] = p.address;

  std::set<std::string> a_labels;
  for (const auto& pa : ptrs_a.entries) {
    a_labels.insert(pa.label);
    auto pb = b_ptrs.find(pa.label);
    if (pb == b_ptrs.end()) {
      ++out.unpaired;
      continue;
    }
    std::set<std::uint64_t> distinct;
    std::map<GadgetTag, std::size_t> tag_counts;
    for (const auto& ga : gadgets_a.entries) {
      bool a_reaches = true;
      if (strategy == PatchStrategy::PartialPointerOverwrite)
        a_reaches = (ga.address >> 8) == (pa.address >> 8);
      if (!a_reaches) continue;
      for (const auto& gb : gadgets_b.entries) {
        bool same_patch;
        if (strategy == PatchStrategy::OffsetOverwrite) {
          std::int64_t da = static_cast<std::int64_t>(ga.address) -
                            static_cast<std::int64_t>(pa.address);
          std::int64_t db = static_cast<std::int64_t>(gb.address) -
                            static_cast<std::int64_t>(pb->second);
          same_patch = da == db;
          if (same_patch && align_b > 1 &&
              (gb.address % align_b != 0 ||
               da % static_cast<std::int64_t>(align_b) != 0))
            same_patch = false;
        } else {
          bool b_reaches = (gb.address >> 8) == (pb->second >> 8);
          same_patch = b_reaches && (ga.address & 0xff) == (gb.address & 0xff);
          if (same_patch && align_b > 1 && gb.address % align_b != 0)
            same_patch = false;
        }
        if (!same_patch) continue;
        distinct.insert(ga.address);
        for (GadgetTag t : tags)
          if (ga.tags.count(t) && gb.tags.count(t)) ++tag_counts[t];
      }
    }
    out.surviving[pa.label] = distinct.size();
    out.by_tag[pa.label] = tag_counts;
  }
  for (const auto& pb : ptrs_b.entries)
    if (!a_labels.count(pb.label)) ++out.unpaired;
  return out;
}

}  // namespace nvx::testing
