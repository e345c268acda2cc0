// Copyright 2026 The Northcape Emulator Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <vector>

#include "northcape/cmt.hpp"
#include "northcape/common.hpp"
#include "northcape/resolver.hpp"
#include "northcape/token.hpp"

namespace northcape {

struct NtlbConfig {
  uint32_t l1i_entries = 16;
  uint32_t l1d_entries = 32;
  uint32_t l2_entries = 512;
  uint32_t l2_assoc = 8;
  // Test hook: skips the global stale taint so the differential fuzzer can
  // demonstrate that a missing invalidation is caught.
  bool defeat_taint_for_testing = false;
};

struct CacheStats {
  uint64_t l1_hits = 0;
  uint64_t l1_misses = 0;
  uint64_t l2_hits = 0;
  uint64_t l2_misses = 0;
  uint64_t stale_revalidations = 0;
  uint64_t invalidations = 0;
};

/// How a committed operation affects the caches: ops that can only touch the
/// named entries evict exactly those; lock, revoke and unlock can invalidate
/// arbitrary overlapping capabilities, so they invalidate L1 entirely and
/// taint every L2 line as potentially stale.
enum class CommitEffect : uint8_t { EvictTouched, GlobalTaint };

/// Two-level capability-resolution cache. L1 (per CPU, split I/D) maps
/// (id, nonce) to a finished resolution; L2 (shared) maps ids to CMT entries
/// plus the effective window validated for entering at that entry.
class Ntlb {
 public:
  Ntlb(const NtlbConfig& cfg, const Cmt& cmt, PhysRange cmt_region)
      : cfg_(cfg), cmt_(cmt), resolver_(cmt, cmt_region) {
    uint32_t sets = cfg_.l2_assoc == 0
                        ? 1
                        : std::max<uint32_t>(1, cfg_.l2_entries / cfg_.l2_assoc);
    l2_sets_.resize(sets);
    for (auto& set : l2_sets_) set.resize(std::max<uint32_t>(1, cfg_.l2_assoc));
    l2_cursor_.assign(sets, 0);
  }

  /// Registers a CPU's pair of L1s. DMA ports have no L1 and hit L2 only.
  void add_cpu(DeviceId dev) {
    l1s_.emplace(dev, CpuL1{L1{cfg_.l1i_entries}, L1{cfg_.l1d_entries}});
  }

  Result<ResolutionResult, Fault> cached_resolve(CapabilityToken t,
                                                 const AccessContext& ctx) {
    auto dec = decode_token(t);
    if (!dec.ok()) return Fault::Malformed;
    const DecodedToken& d = dec.value();

    L1* l1 = l1_for(ctx);
    if (l1 != nullptr) {
      if (const L1Entry* e = l1->find(d.id, d.nonce)) {
        ++stats_.l1_hits;
        return result_from_l1(*e, ctx);
      }
      ++stats_.l1_misses;
    }

    auto res = l2_resolve(t, d, ctx);
    if (res.ok() && l1 != nullptr) {
      const ResolutionResult& r = res.value();
      l1->insert(L1Entry{d.id, d.nonce, r.window_base, r.window_len, r.perms,
                         r.restriction, r.chain_depth});
    }
    return res;
  }

  /// Called by the operations module after every committed operation.
  void notify_op_commit(CommitEffect effect, std::span<const CapId> touched) {
    for (CapId id : touched) {
      for (auto& [dev, cpu] : l1s_) {
        stats_.invalidations += cpu.instr.evict_id(id);
        stats_.invalidations += cpu.data.evict_id(id);
      }
      if (L2Line* line = l2_find(id)) {
        line->valid = false;
        ++stats_.invalidations;
      }
    }
    if (effect == CommitEffect::GlobalTaint) {
      if (cfg_.defeat_taint_for_testing) return;
      for (auto& [dev, cpu] : l1s_) {
        stats_.invalidations += cpu.instr.clear();
        stats_.invalidations += cpu.data.clear();
      }
      for (auto& set : l2_sets_) {
        for (auto& line : set) {
          if (line.valid) line.stale = true;
        }
      }
    }
  }

  const CacheStats& stats() const { return stats_; }

  /// True if `id` currently occupies a valid L2 line (occupancy probe).
  bool l2_contains(CapId id) const {
    return const_cast<Ntlb*>(this)->l2_find(id) != nullptr;
  }

  uint32_t l2_valid_lines() const {
    uint32_t n = 0;
    for (const auto& set : l2_sets_) {
      for (const auto& line : set) n += line.valid ? 1 : 0;
    }
    return n;
  }

  std::string stats_dump() const {
    std::ostringstream os;
    os << "ntlb.l1_hits=" << stats_.l1_hits << "\n";
    os << "ntlb.l1_misses=" << stats_.l1_misses << "\n";
    os << "ntlb.l2_hits=" << stats_.l2_hits << "\n";
    os << "ntlb.l2_misses=" << stats_.l2_misses << "\n";
    os << "ntlb.stale_revalidations=" << stats_.stale_revalidations << "\n";
    os << "ntlb.invalidations=" << stats_.invalidations << "\n";
    return os.str();
  }

 private:
  struct L1Entry {
    CapId id = 0;
    Nonce nonce = 0;
    PhysAddr base = 0;
    uint64_t len = 0;
    Permissions perms;
    Restriction restriction;
    uint32_t depth = 0;
  };

  // Fully associative, round-robin replacement.
  struct L1 {
    explicit L1(uint32_t n) : lines(std::max<uint32_t>(1, n)) {}

    const L1Entry* find(CapId id, Nonce nonce) const {
      for (const auto& l : lines) {
        if (l && l->id == id && l->nonce == nonce) return &*l;
      }
      return nullptr;
    }

    void insert(const L1Entry& e) {
      for (auto& l : lines) {  // refresh in place
        if (l && l->id == e.id && l->nonce == e.nonce) {
          *l = e;
          return;
        }
      }
      for (auto& l : lines) {
        if (!l) {
          l = e;
          return;
        }
      }
      lines[cursor] = e;
      cursor = (cursor + 1) % lines.size();
    }

    uint64_t evict_id(CapId id) {
      uint64_t n = 0;
      for (auto& l : lines) {
        if (l && l->id == id) {
          l.reset();
          ++n;
        }
      }
      return n;
    }

    uint64_t clear() {
      uint64_t n = 0;
      for (auto& l : lines) {
        if (l) {
          l.reset();
          ++n;
        }
      }
      return n;
    }

    std::vector<std::optional<L1Entry>> lines;
    size_t cursor = 0;
  };

  struct CpuL1 {
    L1 instr;
    L1 data;
  };

  struct L2Line {
    bool valid = false;
    bool speculative = false;
    bool stale = false;
    CapId id = 0;
    CmtEntry entry;
    PhysAddr eff_base = 0;  // window for an access entering at this entry
    uint64_t eff_len = 0;
  };

  L1* l1_for(const AccessContext& ctx) {
    if (!ctx.device_is_cpu) return nullptr;
    auto it = l1s_.find(ctx.device);
    if (it == l1s_.end()) return nullptr;
    return ctx.is_fetch ? &it->second.instr : &it->second.data;
  }

  Result<ResolutionResult, Fault> result_from_l1(const L1Entry& e,
                                                 const AccessContext& ctx) {
    CmtEntry shim;
    shim.perms = e.perms;
    shim.restriction = e.restriction;
    if (auto f = detail::entered_gate_pre(shim, ctx)) return *f;
    if (auto f = detail::entered_gate_post(shim, ctx)) return *f;
    ResolutionResult r;
    r.window_base = e.base;
    r.window_len = e.len;
    r.perms = e.perms;
    r.restriction = e.restriction;
    if (e.restriction.kind == RestrictionKind::DeviceInterpreted) {
      r.device_payload = e.restriction.raw;
    }
    r.chain_depth = e.depth;
    return r;
  }

  uint32_t l2_set_of(CapId id) const {
    return static_cast<uint32_t>(id % l2_sets_.size());
  }

  L2Line* l2_find(CapId id) {
    for (auto& line : l2_sets_[l2_set_of(id)]) {
      if (line.valid && line.id == id) return &line;
    }
    return nullptr;
  }

  L2Line* l2_insert(CapId id) {
    auto& set = l2_sets_[l2_set_of(id)];
    for (auto& line : set) {
      if (line.valid && line.id == id) return &line;
    }
    for (auto& line : set) {
      if (!line.valid) return &line;
    }
    uint32_t victim = l2_cursor_[l2_set_of(id)];
    l2_cursor_[l2_set_of(id)] = (victim + 1) % set.size();
    return &set[victim];
  }

  /// The L2-backed path. A non-stale, non-speculative hit on the entered id
  /// skips the ancestor walk; a stale hit forces a full walk that either
  /// revalidates or evicts; a miss does the full walk and populates the
  /// cache for cacheable (CT) entries.
  Result<ResolutionResult, Fault> l2_resolve(CapabilityToken t,
                                             const DecodedToken& d,
                                             const AccessContext& ctx) {
    L2Line* hit = l2_find(d.id);
    if (hit != nullptr) {
      ++stats_.l2_hits;
    } else {
      ++stats_.l2_misses;
    }

    bool revalidating = false;
    if (hit != nullptr && !hit->stale && !hit->speculative &&
        hit->entry.kind != CapKind::LockHolder) {
      // Fast skip: ancestors were validated when this line was filled and
      // have not changed since (any change evicts or taints).
      const CmtEntry& e = hit->entry;
      if (e.nonce != d.nonce) return Fault::InvalidToken;
      if (auto f = detail::entered_gate_pre(e, ctx)) return *f;
      if (e.kind == CapKind::Direct && e.locked_by) return Fault::Locked;
      if (auto f = detail::entered_gate_post(e, ctx)) return *f;
      ResolutionResult r;
      r.window_base = hit->eff_base;
      r.window_len = hit->eff_len;
      r.perms = e.perms;
      r.restriction = e.restriction;
      if (e.restriction.kind == RestrictionKind::DeviceInterpreted) {
        r.device_payload = e.restriction.raw;
      }
      r.chain_depth = 1;
      return r;
    }
    if (hit != nullptr && hit->stale) revalidating = true;

    // Full walk. Chain entries are read through L2 (bytes in valid lines are
    // always current because ops evict what they touch); CMT misses are
    // inserted speculatively and either committed or rolled back below.
    std::vector<CapId> speculative_ids;
    auto lookup = [&](CapId id) -> std::optional<CmtEntry> {
      if (L2Line* line = l2_find(id)) return line->entry;
      std::optional<CmtEntry> e = cmt_.lookup(id);
      if (e && e->perms.cacheable_tlb()) {
        L2Line* line = l2_insert(id);
        line->valid = true;
        line->speculative = true;
        line->stale = false;
        line->id = id;
        line->entry = *e;
        line->eff_base = 0;
        line->eff_len = 0;
        speculative_ids.push_back(id);
      }
      return e;
    };

    auto walked = detail::walk(lookup, t, ctx);
    if (!walked.ok()) {
      for (CapId id : speculative_ids) {
        if (L2Line* line = l2_find(id)) line->valid = false;
      }
      if (revalidating) {
        // Re-find: the walk's insertions may have recycled the hit line.
        if (L2Line* line = l2_find(d.id)) line->valid = false;
      }
      return walked.error();
    }

    const WalkOutcome& out = walked.value();
    if (out.has_lock_holder) {
      // Chains through a lock holder are never cached: a later hit on an
      // intermediate entry would bypass the lock gate.
      for (CapId id : speculative_ids) {
        if (L2Line* line = l2_find(id)) line->valid = false;
      }
    } else {
      for (const ChainMember& m : out.chain) {
        if (!m.entry.perms.cacheable_tlb()) continue;
        L2Line* line = l2_insert(m.entry.id);
        line->valid = true;
        line->speculative = false;
        line->stale = false;
        line->id = m.entry.id;
        line->entry = m.entry;
        line->eff_base = m.eff_base;
        line->eff_len = m.eff_len;
      }
      if (revalidating) ++stats_.stale_revalidations;
    }
    return out.result;
  }

  NtlbConfig cfg_;
  const Cmt& cmt_;
  Resolver resolver_;
  std::map<DeviceId, CpuL1> l1s_;
  std::vector<std::vector<L2Line>> l2_sets_;
  std::vector<uint32_t> l2_cursor_;
  CacheStats stats_;
};

}  // namespace northcape
