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

#include <optional>
#include <vector>

#include "northcape/cmt.hpp"
#include "northcape/common.hpp"
#include "northcape/token.hpp"

namespace northcape {

/// Who is accessing: which bus port, under which subsystem identity, in
/// which interrupt regime, and how.
struct AccessContext {
  DeviceId device = 0;
  SubsystemId subsystem = 0;
  Regime regime = Regime::Normal;
  AccessKind access = AccessKind::Read;
  bool is_fetch = false;
  bool device_is_cpu = true;
};

struct ResolutionResult {
  PhysAddr window_base = 0;
  uint64_t window_len = 0;
  Permissions perms;
  Restriction restriction;
  std::optional<uint64_t> device_payload;
  uint32_t chain_depth = 0;
};

struct PhysRange {
  PhysAddr base = 0;
  uint64_t len = 0;

  bool overlaps(PhysAddr b, uint64_t l) const {
    return len != 0 && l != 0 && b < base + len && base < b + l;
  }
};

/// Maximum parent-chain length. The operations cannot create cycles, but the
/// resolver must terminate on corrupted tables during fuzzing.
inline constexpr uint32_t kMaxChainDepth = 32;

/// One chain member as seen by a resolution, carrying the effective window
/// an access *entering* at this entry would get (own bounds intersected with
/// all ancestors; a lock-holder inherits its parent's window). Consumed by
/// the NTLB insertion policy.
struct ChainMember {
  CmtEntry entry;
  PhysAddr eff_base = 0;
  uint64_t eff_len = 0;
};

struct WalkOutcome {
  ResolutionResult result;
  // chain[0] is the entered entry, chain.back() the direct capability.
  std::vector<ChainMember> chain;
  bool has_lock_holder = false;
};

namespace detail {

/// Applies the per-access gates that depend only on the entered entry and
/// the context: restriction (step 3), interrupt regime (step 6), permission
/// (step 7). Steps 4/5 happen in the chain walk between 3 and 6.
inline std::optional<Fault> entered_gate_pre(const CmtEntry& e,
                                             const AccessContext& ctx) {
  const Restriction& r = e.restriction;
  if (r.kind == RestrictionKind::SubsystemIdBound) {
    if (ctx.device != r.device || ctx.subsystem != r.subsystem) {
      return Fault::RestrictionViolation;
    }
  } else if (r.kind == RestrictionKind::SubsystemIdSet) {
    // Implies subsystem_id_bound for data accesses; fetches are gated by the
    // entry-point rule instead.
    if (!ctx.is_fetch && ctx.access != AccessKind::Meta &&
        ctx.subsystem != r.subsystem) {
      return Fault::RestrictionViolation;
    }
  }
  return std::nullopt;
}

inline std::optional<Fault> entered_gate_post(const CmtEntry& e,
                                              const AccessContext& ctx) {
  if (ctx.access == AccessKind::Meta) return std::nullopt;
  if (ctx.regime == Regime::Irq && ctx.device_is_cpu &&
      !e.perms.irq_accessible()) {
    return Fault::IrqInaccessible;
  }
  bool ok = true;
  switch (ctx.access) {
    case AccessKind::Read: ok = e.perms.r(); break;
    case AccessKind::Write: ok = e.perms.w(); break;
    case AccessKind::Execute: ok = e.perms.x(); break;
    case AccessKind::Meta: break;
  }
  if (!ok) return Fault::PermissionDenied;
  return std::nullopt;
}

/// Full resolution with a pluggable CMT entry source. `lookup` is any
/// callable CapId -> std::optional<CmtEntry>.
template <typename Lookup>
Result<WalkOutcome, Fault> walk(Lookup&& lookup, CapabilityToken token,
                                const AccessContext& ctx,
                                bool apply_lock_gate = true) {
  // (1) decode
  auto dec = decode_token(token);
  if (!dec.ok()) return Fault::Malformed;
  const DecodedToken& d = dec.value();

  // (2) entered entry, nonce check
  std::optional<CmtEntry> entered = lookup(d.id);
  if (!entered || entered->nonce != d.nonce) return Fault::InvalidToken;

  // (3) restriction gate on the entered entry only
  if (auto f = entered_gate_pre(*entered, ctx)) return *f;

  // (4) parent chain to the direct capability
  WalkOutcome out;
  out.chain.push_back({*entered, 0, 0});
  const CmtEntry* cur = &out.chain.back().entry;
  uint32_t depth = 1;
  while (cur->kind != CapKind::Direct) {
    if (++depth > kMaxChainDepth) return Fault::InvalidParent;
    auto pdec = decode_token(cur->parent);
    if (!pdec.ok()) return Fault::InvalidParent;
    std::optional<CmtEntry> parent = lookup(pdec.value().id);
    if (!parent || parent->nonce != pdec.value().nonce) {
      return Fault::InvalidParent;
    }
    out.chain.push_back({*parent, 0, 0});
    cur = &out.chain.back().entry;
  }

  // Effective windows, folded from the direct entry upward.
  for (size_t i = out.chain.size(); i-- > 0;) {
    ChainMember& m = out.chain[i];
    if (i + 1 == out.chain.size()) {
      m.eff_base = m.entry.base;
      m.eff_len = m.entry.length;
      continue;
    }
    const ChainMember& up = out.chain[i + 1];
    if (m.entry.kind == CapKind::LockHolder) {
      m.eff_base = up.eff_base;
      m.eff_len = up.eff_len;
      out.has_lock_holder = true;
    } else {
      PhysAddr lo = std::max(m.entry.base, up.eff_base);
      PhysAddr hi = std::min(m.entry.base + m.entry.length,
                             up.eff_base + up.eff_len);
      m.eff_base = lo;
      m.eff_len = hi > lo ? hi - lo : 0;
    }
  }

  // (5) lock gate: a locked direct is reachable only through its current
  // lock holder; a stale lock holder in the chain invalidates it.
  const CmtEntry& direct = out.chain.back().entry;
  bool through_holder = false;
  for (const ChainMember& m : out.chain) {
    if (m.entry.kind != CapKind::LockHolder) continue;
    if (!direct.locked_by || *direct.locked_by != m.entry.id) {
      return Fault::InvalidParent;
    }
    through_holder = true;
  }
  if (apply_lock_gate && direct.locked_by && !through_holder) {
    return Fault::Locked;
  }

  // (6) + (7)
  if (auto f = entered_gate_post(out.chain.front().entry, ctx)) return *f;

  const ChainMember& front = out.chain.front();
  if (front.eff_len == 0) return Fault::OutOfBounds;

  out.result.window_base = front.eff_base;
  out.result.window_len = front.eff_len;
  out.result.perms = front.entry.perms;
  out.result.restriction = front.entry.restriction;
  if (front.entry.restriction.kind == RestrictionKind::DeviceInterpreted) {
    out.result.device_payload = front.entry.restriction.raw;
  }
  out.result.chain_depth = depth;
  return out;
}

}  // namespace detail

enum class FetchClass : uint8_t { PlainFetch, SubsystemCall };

struct EntryPointOutcome {
  FetchClass kind = FetchClass::PlainFetch;
  SubsystemId target = 0;  // SubsystemCall only
  ResolutionResult resolution;
};

/// The uncached reference path over a CMT.
class Resolver {
 public:
  Resolver(const Cmt& cmt, PhysRange cmt_region)
      : cmt_(cmt), cmt_region_(cmt_region) {}

  Result<ResolutionResult, Fault> resolve(CapabilityToken t,
                                          const AccessContext& ctx) const {
    auto r = detail::walk([this](CapId id) { return cmt_.lookup(id); }, t, ctx);
    if (!r.ok()) return r.error();
    return r.value().result;
  }

  /// Resolution plus the byte-range checks: the access must fit the window
  /// and must not touch the CMT's reserved region.
  Result<PhysRange, Fault> translate(CapabilityToken t,
                                     const AccessContext& ctx,
                                     uint64_t len) const {
    auto r = resolve(t, ctx);
    if (!r.ok()) return r.error();
    return finish_translate(r.value(), token_offset(t), len, cmt_region_);
  }

  Result<EntryPointOutcome, Fault> check_entry_point(
      CapabilityToken t, const AccessContext& ctx) const {
    auto r = resolve(t, ctx);
    if (!r.ok()) return r.error();
    return classify_entry_point(r.value(), token_offset(t), ctx);
  }

  const PhysRange& cmt_region() const { return cmt_region_; }

  static Result<PhysRange, Fault> finish_translate(const ResolutionResult& res,
                                                   uint64_t offset,
                                                   uint64_t len,
                                                   const PhysRange& reserved) {
    PhysAddr p = res.window_base + offset;
    if (offset >= res.window_len || len > res.window_len - offset) {
      return Fault::OutOfBounds;
    }
    if (reserved.overlaps(p, len)) return Fault::CmtOverlap;
    return PhysRange{p, len};
  }

  static Result<EntryPointOutcome, Fault> classify_entry_point(
      const ResolutionResult& res, uint64_t offset, const AccessContext& ctx) {
    EntryPointOutcome out;
    out.resolution = res;
    if (res.restriction.kind == RestrictionKind::SubsystemIdSet &&
        res.restriction.subsystem != ctx.subsystem) {
      if (offset != 0) return Fault::NotEntryPoint;
      out.kind = FetchClass::SubsystemCall;
      out.target = res.restriction.subsystem;
      return out;
    }
    out.kind = FetchClass::PlainFetch;
    return out;
  }

 private:
  const Cmt& cmt_;
  PhysRange cmt_region_;
};

}  // namespace northcape
