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

#include <array>
#include <optional>
#include <vector>

#include "northcape/cmt.hpp"
#include "northcape/common.hpp"
#include "northcape/ntlb.hpp"
#include "northcape/resolver.hpp"
#include "northcape/rng.hpp"
#include "northcape/token.hpp"

namespace northcape {

// Opcode numbers are part of the port interface; see docs/ops-port.md.
enum class Opcode : uint8_t {
  Create = 1,
  Merge = 2,
  Derive = 3,
  Clone = 4,
  Lock = 5,
  Drop = 6,
  Revoke = 7,
  Inspect = 8,
  Restrict = 9,
};

inline const char* opcode_name(Opcode op) {
  switch (op) {
    case Opcode::Create: return "create";
    case Opcode::Merge: return "merge";
    case Opcode::Derive: return "derive";
    case Opcode::Clone: return "clone";
    case Opcode::Lock: return "lock";
    case Opcode::Drop: return "drop";
    case Opcode::Revoke: return "revoke";
    case Opcode::Inspect: return "inspect";
    case Opcode::Restrict: return "restrict";
  }
  return "?";
}

enum class OpStatus : uint8_t {
  Ok = 0,
  // Port protocol
  PortLocked,
  ForeignRead,
  NoPendingResult,
  // Operation-specific refusals
  NotDirect,
  NotDroppable,
  LockedInput,
  HasChildren,
  BadLength,
  BadBounds,
  NotAdjacent,
  PermissionEscalation,
  RestrictionForgery,
  NotLockable,
  AlreadyLocked,
  TableFull,
  // Resolution faults surfaced through the port
  Malformed,
  InvalidToken,
  InvalidParent,
  RestrictionViolation,
  Locked,
  OutOfBounds,
};

inline const char* op_status_name(OpStatus s) {
  switch (s) {
    case OpStatus::Ok: return "Ok";
    case OpStatus::PortLocked: return "PortLocked";
    case OpStatus::ForeignRead: return "ForeignRead";
    case OpStatus::NoPendingResult: return "NoPendingResult";
    case OpStatus::NotDirect: return "NotDirect";
    case OpStatus::NotDroppable: return "NotDroppable";
    case OpStatus::LockedInput: return "LockedInput";
    case OpStatus::HasChildren: return "HasChildren";
    case OpStatus::BadLength: return "BadLength";
    case OpStatus::BadBounds: return "BadBounds";
    case OpStatus::NotAdjacent: return "NotAdjacent";
    case OpStatus::PermissionEscalation: return "PermissionEscalation";
    case OpStatus::RestrictionForgery: return "RestrictionForgery";
    case OpStatus::NotLockable: return "NotLockable";
    case OpStatus::AlreadyLocked: return "AlreadyLocked";
    case OpStatus::TableFull: return "TableFull";
    case OpStatus::Malformed: return "Malformed";
    case OpStatus::InvalidToken: return "InvalidToken";
    case OpStatus::InvalidParent: return "InvalidParent";
    case OpStatus::RestrictionViolation: return "RestrictionViolation";
    case OpStatus::Locked: return "Locked";
    case OpStatus::OutOfBounds: return "OutOfBounds";
  }
  return "?";
}

inline OpStatus op_status_from_fault(Fault f) {
  switch (f) {
    case Fault::Malformed: return OpStatus::Malformed;
    case Fault::InvalidToken: return OpStatus::InvalidToken;
    case Fault::InvalidParent: return OpStatus::InvalidParent;
    case Fault::RestrictionViolation: return OpStatus::RestrictionViolation;
    case Fault::Locked: return OpStatus::Locked;
    case Fault::OutOfBounds: return OpStatus::OutOfBounds;
    default: return OpStatus::InvalidToken;
  }
}

/// Register image of one operation request: input tokens c_a/c_b plus the
/// l, o, r, p, o+, l- parameters from the operation set.
struct OpRequest {
  Opcode op = Opcode::Inspect;
  CapabilityToken a{0};
  CapabilityToken b{0};
  uint64_t len = 0;
  uint64_t off = 0;
  Restriction r;
  Permissions p;
  uint64_t off_plus = 0;
  uint64_t len_minus = 0;
};

struct OpResult {
  OpStatus status = OpStatus::Ok;
  CapabilityToken out{0};    // primary output token
  CapabilityToken out2{0};   // create: surviving c_a' (0 when consumed)
  bool flag = false;         // drop / restrict boolean result
  // inspect outputs
  PhysAddr base = 0;
  uint64_t length = 0;
  Restriction restriction;
  Permissions perms;
  bool partial = false;  // inspect on a set-subsystem-id capability
  uint64_t cmt_accesses = 0;
};

enum class PortBank : uint8_t { Normal = 0, Irq = 1 };

/// The capability operations module: executes the operation set against the
/// CMT, zeroes memory on revoke, notifies the NTLB about every commit, and
/// models the dual-bank MMIO port with per-bank locking.
class OpsModule {
 public:
  OpsModule(Cmt& cmt, Ntlb& ntlb, std::vector<uint8_t>& memory,
            uint64_t trng_k0, uint64_t trng_k1)
      : cmt_(cmt), ntlb_(ntlb), mem_(memory), trng_(trng_k0, trng_k1) {}

  // ---- MMIO-style port protocol -------------------------------------

  StatusResult<OpStatus> port_begin(DeviceId dev, SubsystemId sub,
                                    PortBank bank) {
    Bank& b = banks_[size_t(bank)];
    if (b.owner && *b.owner != std::pair{dev, sub}) return OpStatus::PortLocked;
    b.owner = {dev, sub};
    return Unit{};
  }

  /// Submits a request on an owned bank. IRQ-bank requests other than
  /// inspect wait until the normal bank is idle; they never touch the normal
  /// bank's registers.
  StatusResult<OpStatus> port_submit(DeviceId dev, SubsystemId sub,
                                     PortBank bank, const OpRequest& req,
                                     Regime regime) {
    Bank& b = banks_[size_t(bank)];
    if (!b.owner || *b.owner != std::pair{dev, sub}) return OpStatus::PortLocked;
    if (b.output) return OpStatus::PortLocked;  // previous result unread
    AccessContext ctx;
    ctx.device = dev;
    ctx.subsystem = sub;
    ctx.regime = regime;
    ctx.access = AccessKind::Meta;
    if (bank == PortBank::Irq && req.op != Opcode::Inspect &&
        normal_bank_busy()) {
      b.queued = req;
      b.queued_ctx = ctx;
      return Unit{};
    }
    b.output = execute(req, ctx);
    return Unit{};
  }

  /// Reads and clears the output, releasing the bank. Non-owners get a zero
  /// response and the pending output stays untouched.
  OpResult port_read_result(DeviceId dev, SubsystemId sub, PortBank bank) {
    Bank& b = banks_[size_t(bank)];
    if (!b.owner || *b.owner != std::pair{dev, sub}) {
      OpResult zero;
      zero.status = OpStatus::ForeignRead;
      return zero;
    }
    if (!b.output) {
      if (b.queued) {
        OpResult zero;
        zero.status = OpStatus::NoPendingResult;  // still queued
        return zero;
      }
      OpResult zero;
      zero.status = OpStatus::NoPendingResult;
      return zero;
    }
    OpResult out = *b.output;
    b.output.reset();
    b.owner.reset();
    pump_irq_queue();
    return out;
  }

  bool bank_locked(PortBank bank) const {
    return banks_[size_t(bank)].owner.has_value();
  }

  /// TRNG register: a fresh 64-bit value per read, never repeating.
  uint64_t read_random() { return trng_.next(); }

  uint64_t ops_committed() const { return ops_committed_; }

  // ---- Operation semantics ------------------------------------------

  OpResult execute(const OpRequest& req, const AccessContext& ctx) {
    uint64_t before = cmt_.table_reads() + cmt_.table_writes();
    OpResult res;
    switch (req.op) {
      case Opcode::Create: res = do_create(req, ctx); break;
      case Opcode::Merge: res = do_merge(req, ctx); break;
      case Opcode::Derive: res = do_derive(req, ctx, false); break;
      case Opcode::Clone: res = do_derive(req, ctx, true); break;
      case Opcode::Lock: res = do_lock(req, ctx); break;
      case Opcode::Drop: res = do_drop(req, ctx); break;
      case Opcode::Revoke: res = do_revoke(req, ctx); break;
      case Opcode::Inspect: res = do_inspect(req, ctx); break;
      case Opcode::Restrict: res = do_restrict(req, ctx); break;
    }
    res.cmt_accesses = cmt_.table_reads() + cmt_.table_writes() - before;
    if (res.status == OpStatus::Ok) ++ops_committed_;
    return res;
  }

 private:
  struct Bank {
    std::optional<std::pair<DeviceId, SubsystemId>> owner;
    std::optional<OpResult> output;
    std::optional<OpRequest> queued;
    AccessContext queued_ctx;
  };

  bool normal_bank_busy() const {
    const Bank& n = banks_[size_t(PortBank::Normal)];
    return n.owner.has_value() || n.output.has_value();
  }

  void pump_irq_queue() {
    Bank& irq = banks_[size_t(PortBank::Irq)];
    if (irq.queued && !normal_bank_busy()) {
      OpRequest req = *irq.queued;
      irq.queued.reset();
      irq.output = execute(req, irq.queued_ctx);
    }
  }

  // Metadata resolution used by most operations: full walk without the
  // permission/regime gates; the lock gate is optional per operation.
  Result<WalkOutcome, Fault> meta_resolve(CapabilityToken t,
                                          const AccessContext& ctx,
                                          bool lock_gate = true) {
    AccessContext mctx = ctx;
    mctx.access = AccessKind::Meta;
    mctx.is_fetch = false;
    return detail::walk([this](CapId id) { return cmt_.lookup(id); }, t, mctx,
                        lock_gate);
  }

  /// Callers may mint SubsystemIdSet restrictions only for their own
  /// subsystem id; subsystem 0 may mint arbitrary ones.
  bool restriction_forgery(const Restriction& r, const AccessContext& ctx) {
    return r.kind == RestrictionKind::SubsystemIdSet && ctx.subsystem != 0 &&
           r.subsystem != ctx.subsystem;
  }

  void commit(CommitEffect effect, std::initializer_list<CapId> touched) {
    std::vector<CapId> ids(touched);
    ntlb_.notify_op_commit(effect, ids);
  }

  OpResult result_fault(Fault f) {
    OpResult r;
    r.status = op_status_from_fault(f);
    return r;
  }

  OpResult result_status(OpStatus s) {
    OpResult r;
    r.status = s;
    return r;
  }

  OpResult do_create(const OpRequest& req, const AccessContext& ctx) {
    auto w = meta_resolve(req.a, ctx);
    if (!w.ok()) return result_fault(w.error());
    CmtEntry e = w.value().chain.front().entry;
    if (e.kind != CapKind::Direct) return result_status(OpStatus::NotDirect);
    if (e.locked_by) return result_status(OpStatus::LockedInput);
    if (e.refcount != 0) return result_status(OpStatus::HasChildren);
    if (req.len == 0 || req.len > e.length) {
      return result_status(OpStatus::BadLength);
    }
    if (!req.p.subset_of(e.perms)) {
      return result_status(OpStatus::PermissionEscalation);
    }
    if (req.r.rank() < e.restriction.rank() ||
        restriction_forgery(req.r, ctx)) {
      return result_status(OpStatus::RestrictionForgery);
    }

    CmtEntry piece;
    piece.kind = CapKind::Direct;
    piece.base = e.base;
    piece.length = req.len;
    piece.perms = req.p;
    piece.restriction = req.r;
    const OffsetType& ot = offset_type_for_length(req.len);
    auto alloc = cmt_.allocate(ot, piece);
    if (!alloc.ok()) return result_status(OpStatus::TableFull);
    const CmtEntry& nb = alloc.value();

    OpResult res;
    res.out = encode_token(ot, nb.nonce, nb.id, 0).value();
    if (req.len == e.length) {
      cmt_.remove(e.id);
      res.out2 = CapabilityToken{0};
    } else {
      e.base += req.len;
      e.length -= req.len;
      cmt_.update(e.id, e);
      res.out2 = req.a;
    }
    commit(CommitEffect::EvictTouched, {e.id, nb.id});
    return res;
  }

  OpResult do_merge(const OpRequest& req, const AccessContext& ctx) {
    auto wa = meta_resolve(req.a, ctx);
    if (!wa.ok()) return result_fault(wa.error());
    auto wb = meta_resolve(req.b, ctx);
    if (!wb.ok()) return result_fault(wb.error());
    CmtEntry a = wa.value().chain.front().entry;
    CmtEntry b = wb.value().chain.front().entry;
    if (a.kind != CapKind::Direct || b.kind != CapKind::Direct) {
      return result_status(OpStatus::NotDirect);
    }
    if (a.locked_by || b.locked_by) return result_status(OpStatus::LockedInput);
    if (a.refcount != 0 || b.refcount != 0) {
      return result_status(OpStatus::HasChildren);
    }
    const CmtEntry* lo = &a;
    const CmtEntry* hi = &b;
    if (lo->base > hi->base) std::swap(lo, hi);
    if (lo->base + lo->length != hi->base) {
      return result_status(OpStatus::NotAdjacent);
    }
    if (restriction_forgery(req.r, ctx)) {
      return result_status(OpStatus::RestrictionForgery);
    }

    CmtEntry merged;
    merged.kind = CapKind::Direct;
    merged.base = lo->base;
    merged.length = lo->length + hi->length;
    merged.perms = req.p;
    merged.restriction = req.r;
    const OffsetType& ot = offset_type_for_length(merged.length);
    // Free the inputs first so a nearly-full table can still merge.
    CmtEntry a_copy = a, b_copy = b;
    cmt_.remove(a.id);
    cmt_.remove(b.id);
    auto alloc = cmt_.allocate(ot, merged);
    if (!alloc.ok()) {
      cmt_.reinstall(a_copy);
      cmt_.reinstall(b_copy);
      return result_status(OpStatus::TableFull);
    }
    OpResult res;
    res.out =
        encode_token(ot, alloc.value().nonce, alloc.value().id, 0).value();
    commit(CommitEffect::EvictTouched, {a.id, b.id, alloc.value().id});
    return res;
  }

  OpResult do_derive(const OpRequest& req, const AccessContext& ctx,
                     bool clone) {
    auto w = meta_resolve(req.a, ctx);
    if (!w.ok()) return result_fault(w.error());
    const ChainMember& front = w.value().chain.front();
    if (front.entry.kind == CapKind::LockHolder) {
      return result_status(OpStatus::BadBounds);
    }
    uint64_t off = clone ? 0 : req.off;
    uint64_t len = clone ? front.eff_len : req.len;
    if (len == 0 || off > front.eff_len || len > front.eff_len - off) {
      return result_status(OpStatus::BadBounds);
    }
    if (!req.p.subset_of(front.entry.perms)) {
      return result_status(OpStatus::PermissionEscalation);
    }
    if (restriction_forgery(req.r, ctx)) {
      return result_status(OpStatus::RestrictionForgery);
    }

    CmtEntry child;
    child.kind = CapKind::Indirect;
    child.base = front.eff_base + off;
    child.length = len;
    child.perms = req.p;
    child.restriction = req.r;
    child.parent = req.a;
    const OffsetType& ot = offset_type_for_length(len);
    auto alloc = cmt_.allocate(ot, child);
    if (!alloc.ok()) return result_status(OpStatus::TableFull);

    CmtEntry parent = front.entry;
    parent.refcount += 1;
    cmt_.update(parent.id, parent);

    OpResult res;
    res.out =
        encode_token(ot, alloc.value().nonce, alloc.value().id, 0).value();
    commit(CommitEffect::EvictTouched, {parent.id, alloc.value().id});
    return res;
  }

  OpResult do_lock(const OpRequest& req, const AccessContext& ctx) {
    auto w = meta_resolve(req.a, ctx);
    if (!w.ok()) return result_fault(w.error());
    const WalkOutcome& out = w.value();
    const ChainMember& front = out.chain.front();
    CmtEntry direct = out.chain.back().entry;
    if (!direct.perms.lockable()) return result_status(OpStatus::NotLockable);
    if (direct.locked_by) return result_status(OpStatus::AlreadyLocked);
    if (!req.p.subset_of(front.entry.perms)) {
      return result_status(OpStatus::PermissionEscalation);
    }
    if (req.r.rank() < front.entry.restriction.rank() ||
        restriction_forgery(req.r, ctx)) {
      return result_status(OpStatus::RestrictionForgery);
    }

    CmtEntry holder;
    holder.kind = CapKind::LockHolder;
    holder.base = 0;
    holder.length = 0;
    holder.perms = req.p;
    holder.restriction = req.r;
    holder.parent = req.a;
    const OffsetType& ot = offset_type_for_length(front.eff_len);
    auto alloc = cmt_.allocate(ot, holder);
    if (!alloc.ok()) return result_status(OpStatus::TableFull);

    CmtEntry parent = front.entry;
    parent.refcount += 1;
    cmt_.update(parent.id, parent);
    if (direct.id == parent.id) direct = parent;
    direct.locked_by = alloc.value().id;
    cmt_.update(direct.id, direct);

    OpResult res;
    res.out =
        encode_token(ot, alloc.value().nonce, alloc.value().id, 0).value();
    commit(CommitEffect::GlobalTaint,
           {parent.id, direct.id, alloc.value().id});
    return res;
  }

  OpResult do_drop(const OpRequest& req, const AccessContext& ctx) {
    // Nonce and restriction gates only: drop must work on orphans whose
    // parents are dead and on capabilities under a foreign lock.
    auto dec = decode_token(req.a);
    if (!dec.ok()) return result_fault(Fault::Malformed);
    std::optional<CmtEntry> e = cmt_.lookup(dec.value().id);
    if (!e || e->nonce != dec.value().nonce) {
      return result_fault(Fault::InvalidToken);
    }
    AccessContext mctx = ctx;
    mctx.access = AccessKind::Meta;
    if (auto f = detail::entered_gate_pre(*e, mctx)) return result_fault(*f);
    if (e->kind == CapKind::Direct) {
      return result_status(OpStatus::NotDroppable);
    }

    OpResult res;
    if (e->refcount != 0) {
      res.flag = false;
      commit(CommitEffect::EvictTouched, {});
      return res;
    }

    std::vector<CapId> touched{e->id};
    CommitEffect effect = CommitEffect::EvictTouched;

    auto pdec = decode_token(e->parent);
    std::optional<CmtEntry> parent =
        pdec.ok() ? cmt_.lookup(pdec.value().id) : std::nullopt;
    bool parent_live = parent && parent->nonce == pdec.value().nonce;
    if (parent_live && parent->refcount > 0) {
      parent->refcount -= 1;
      cmt_.update(parent->id, *parent);
      touched.push_back(parent->id);
    }

    if (e->kind == CapKind::LockHolder) {
      // Unlock the direct capability at the end of the chain, if reachable.
      effect = CommitEffect::GlobalTaint;
      if (parent_live) {
        std::optional<CmtEntry> cur = parent;
        uint32_t depth = 0;
        while (cur && cur->kind != CapKind::Direct &&
               ++depth <= kMaxChainDepth) {
          auto cdec = decode_token(cur->parent);
          if (!cdec.ok()) {
            cur.reset();
            break;
          }
          std::optional<CmtEntry> next = cmt_.lookup(cdec.value().id);
          if (!next || next->nonce != cdec.value().nonce) {
            cur.reset();
            break;
          }
          cur = next;
        }
        if (cur && cur->kind == CapKind::Direct && cur->locked_by &&
            *cur->locked_by == e->id) {
          cur->locked_by.reset();
          cmt_.update(cur->id, *cur);
          touched.push_back(cur->id);
        }
      }
    }

    cmt_.remove(e->id);
    res.flag = true;
    ntlb_.notify_op_commit(effect, touched);
    return res;
  }

  OpResult do_revoke(const OpRequest& req, const AccessContext& ctx) {
    // Restriction + nonce gates; the lock gate does not apply (revoke works
    // on locked capabilities).
    auto dec = decode_token(req.a);
    if (!dec.ok()) return result_fault(Fault::Malformed);
    std::optional<CmtEntry> e = cmt_.lookup(dec.value().id);
    if (!e || e->nonce != dec.value().nonce) {
      return result_fault(Fault::InvalidToken);
    }
    AccessContext mctx = ctx;
    mctx.access = AccessKind::Meta;
    if (auto f = detail::entered_gate_pre(*e, mctx)) return result_fault(*f);
    if (e->kind != CapKind::Direct) return result_status(OpStatus::NotDirect);
    if (restriction_forgery(req.r, ctx)) {
      return result_status(OpStatus::RestrictionForgery);
    }

    CmtEntry fresh;
    fresh.kind = CapKind::Direct;
    fresh.base = e->base;
    fresh.length = e->length;
    fresh.perms = req.p;
    fresh.restriction = req.r;
    const OffsetType& ot = offset_type_for_length(fresh.length);

    CmtEntry old = *e;
    cmt_.remove(old.id);
    auto alloc = cmt_.allocate(ot, fresh);
    if (!alloc.ok()) {
      cmt_.reinstall(old);
      return result_status(OpStatus::TableFull);
    }
    // Zero the segment; children are orphaned by the entry removal.
    for (uint64_t i = 0; i < old.length && old.base + i < mem_.size(); ++i) {
      mem_[old.base + i] = 0;
    }
    OpResult res;
    res.out =
        encode_token(ot, alloc.value().nonce, alloc.value().id, 0).value();
    commit(CommitEffect::GlobalTaint, {old.id, alloc.value().id});
    return res;
  }

  OpResult do_inspect(const OpRequest& req, const AccessContext& ctx) {
    auto dec = decode_token(req.a);
    if (!dec.ok()) return result_fault(Fault::Malformed);
    std::optional<CmtEntry> e = cmt_.lookup(dec.value().id);
    if (!e || e->nonce != dec.value().nonce) {
      return result_fault(Fault::InvalidToken);
    }
    OpResult res;
    res.restriction = e->restriction;
    if (e->restriction.kind == RestrictionKind::SubsystemIdSet) {
      res.partial = true;
      res.perms = e->perms & Permissions::of(Permissions::kR | Permissions::kW |
                                             Permissions::kX | Permissions::kI);
      return res;
    }
    if (e->restriction.kind == RestrictionKind::SubsystemIdBound &&
        (e->restriction.device != ctx.device ||
         e->restriction.subsystem != ctx.subsystem)) {
      return result_fault(Fault::RestrictionViolation);
    }
    // Resolve recursively for bounds; locks do not obstruct metadata reads.
    auto w = meta_resolve(req.a, ctx, /*lock_gate=*/false);
    if (!w.ok()) return result_fault(w.error());
    const ChainMember& front = w.value().chain.front();
    res.base = front.eff_base;
    res.length = front.eff_len;
    res.perms = front.entry.perms;
    return res;
  }

  OpResult do_restrict(const OpRequest& req, const AccessContext& ctx) {
    auto w = meta_resolve(req.a, ctx);
    if (!w.ok()) return result_fault(w.error());
    CmtEntry e = w.value().chain.front().entry;

    bool changed = false;
    bool bounds_shrunk = false;

    Permissions new_perms = e.perms & req.p;
    if (e.kind != CapKind::Direct) {
      // The lockable bit is only droppable on direct capabilities.
      new_perms.bits |= e.perms.bits & Permissions::kL;
    }
    if (!(new_perms == e.perms)) {
      e.perms = new_perms;
      changed = true;
    }

    if (e.kind == CapKind::Indirect && (req.off_plus || req.len_minus)) {
      if (req.off_plus >= e.length || req.len_minus >= e.length) {
        return result_status(OpStatus::BadBounds);
      }
      uint64_t shrink = req.off_plus + req.len_minus;
      if (shrink >= e.length) {
        return result_status(OpStatus::BadBounds);
      }
      e.base += req.off_plus;
      e.length -= shrink;
      changed = true;
      bounds_shrunk = true;
    }

    if (req.r.kind != RestrictionKind::None &&
        e.restriction.kind == RestrictionKind::None) {
      if (restriction_forgery(req.r, ctx)) {
        return result_status(OpStatus::RestrictionForgery);
      }
      e.restriction = req.r;
      changed = true;
    }

    OpResult res;
    res.flag = changed;
    if (changed) {
      cmt_.update(e.id, e);
      // A bounds shrink on a capability with children changes descendants'
      // effective windows; that needs the global taint.
      CommitEffect eff = (bounds_shrunk && e.refcount > 0)
                             ? CommitEffect::GlobalTaint
                             : CommitEffect::EvictTouched;
      commit(eff, {e.id});
    }
    return res;
  }

  Cmt& cmt_;
  Ntlb& ntlb_;
  std::vector<uint8_t>& mem_;
  CounterStream trng_;
  std::array<Bank, 2> banks_;
  uint64_t ops_committed_ = 0;
};

}  // namespace northcape
