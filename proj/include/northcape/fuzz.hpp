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

#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "northcape/machine.hpp"
#include "northcape/rng.hpp"

namespace northcape {

struct FuzzWeights {
  uint32_t ops = 40;
  uint32_t accesses = 40;
  uint32_t lock_revoke = 10;
  uint32_t interrupts = 10;
};

struct FuzzConfig {
  uint64_t seed = 1;
  uint64_t steps = 100000;
  FuzzWeights weights;
  MachineConfig machine;  // geometry template; use_cache is overridden
  // Fault-injection hook for the mutation-testing sanity run: the cached
  // machine skips the global stale taint, which must diverge quickly.
  bool inject_skip_taint = false;
};

struct FuzzReport {
  bool diverged = false;
  uint64_t divergence_step = 0;
  std::string detail;
  uint64_t steps_run = 0;
  uint64_t ops_run = 0;
  uint64_t accesses_run = 0;
  uint64_t irqs_run = 0;
  CacheStats cached_stats;
  std::string cached_trace_tail;
  std::string oracle_trace_tail;

  std::string text() const {
    std::ostringstream os;
    os << "fuzz.steps=" << steps_run << "\n";
    os << "fuzz.ops=" << ops_run << "\n";
    os << "fuzz.accesses=" << accesses_run << "\n";
    os << "fuzz.interrupts=" << irqs_run << "\n";
    os << "fuzz.l1_hits=" << cached_stats.l1_hits << "\n";
    os << "fuzz.l1_misses=" << cached_stats.l1_misses << "\n";
    os << "fuzz.l2_hits=" << cached_stats.l2_hits << "\n";
    os << "fuzz.l2_misses=" << cached_stats.l2_misses << "\n";
    os << "fuzz.stale_revalidations=" << cached_stats.stale_revalidations
       << "\n";
    os << "fuzz.diverged=" << (diverged ? 1 : 0) << "\n";
    if (diverged) {
      os << "fuzz.divergence_step=" << divergence_step << "\n";
      os << "fuzz.detail=" << detail << "\n";
      os << "--- cached trace tail ---\n" << cached_trace_tail;
      os << "--- oracle trace tail ---\n" << oracle_trace_tail;
    }
    return os.str();
  }
};

/// Differential fuzzer: the same deterministic event stream is applied to a
/// cached machine and an uncached oracle clone; any difference in outcome
/// kind, produced tokens, or data is a divergence.
class DifferentialFuzzer {
 public:
  explicit DifferentialFuzzer(const FuzzConfig& cfg)
      : cfg_(cfg), rng_(cfg.seed ^ 0xF0220E) {
    MachineConfig cached_cfg = cfg.machine;
    cached_cfg.seed = cfg.seed;
    cached_cfg.use_cache = true;
    cached_cfg.ntlb.defeat_taint_for_testing = cfg.inject_skip_taint;
    MachineConfig oracle_cfg = cfg.machine;
    oracle_cfg.seed = cfg.seed;
    oracle_cfg.use_cache = false;
    oracle_cfg.ntlb.defeat_taint_for_testing = false;
    cached_ = std::make_unique<Machine>(cached_cfg);
    oracle_ = std::make_unique<Machine>(oracle_cfg);
    setup_topology(*cached_);
    setup_topology(*oracle_);
  }

  FuzzReport run() {
    FuzzReport rep;
    uint32_t total = cfg_.weights.ops + cfg_.weights.accesses +
                     cfg_.weights.lock_revoke + cfg_.weights.interrupts;
    if (total == 0) total = 1;
    for (uint64_t step = 0; step < cfg_.steps; ++step) {
      rep.steps_run = step + 1;
      uint64_t pick = rng_.below(total);
      bool ok;
      if (pick < cfg_.weights.ops) {
        ok = event_op(rep);
        ++rep.ops_run;
      } else if (pick < cfg_.weights.ops + cfg_.weights.accesses) {
        ok = event_access(rep);
        ++rep.accesses_run;
      } else if (pick <
                 cfg_.weights.ops + cfg_.weights.accesses +
                     cfg_.weights.lock_revoke) {
        ok = event_lock_revoke(rep);
        ++rep.ops_run;
      } else {
        ok = event_interrupt(rep);
        ++rep.irqs_run;
      }
      if (!ok) {
        rep.diverged = true;
        rep.divergence_step = step;
        rep.cached_trace_tail = trace_tail(*cached_);
        rep.oracle_trace_tail = trace_tail(*oracle_);
        break;
      }
    }
    rep.cached_stats = cached_->ntlb().stats();
    return rep;
  }

  Machine& cached_machine() { return *cached_; }
  Machine& oracle_machine() { return *oracle_; }

 private:
  static constexpr uint32_t kIsrSubsystem = 9;
  static constexpr uint32_t kStubSubsystem = 5;

  void setup_topology(Machine& m) {
    DeviceId cpu = m.add_cpu("cpu0");
    (void)cpu;
    m.add_dma("dma0", 7);

    // ISR entry and timer stub capabilities plus a vector table that points
    // at them, so interrupt events resolve.
    OpRequest rq;
    rq.op = Opcode::Create;
    rq.a = kRootToken;
    rq.len = 0x100;
    rq.p = perms_from_string("rxidt");
    rq.r = Restriction::id_set(0, kIsrSubsystem);
    OpResult isr = m.op(0, rq);
    rq.r = Restriction::id_set(0, kStubSubsystem);
    rq.p = perms_from_string("rxdt");
    OpResult stub = m.op(0, rq);

    PhysAddr vec = m.cmt_region().base - uint64_t{m.config().irq_causes} * 8;
    m.set_vector_base(vec);
    for (uint32_t cause = 0; cause < m.config().irq_causes; ++cause) {
      uint64_t tok =
          cause == m.config().timer_cause ? stub.out.raw : isr.out.raw;
      for (int i = 0; i < 8; ++i) {
        m.poke(vec + cause * 8 + i, uint8_t(tok >> (8 * i)));
      }
    }
    if (tokens_.empty()) {
      tokens_.push_back(kRootToken);
      tokens_.push_back(isr.out);
      tokens_.push_back(stub.out);
    }
  }

  std::string trace_tail(Machine& m) {
    const auto& t = m.trace();
    std::string out;
    size_t start = t.size() > 24 ? t.size() - 24 : 0;
    for (size_t i = start; i < t.size(); ++i) {
      out += t[i];
      out += '\n';
    }
    return out;
  }

  CapabilityToken pick_token() {
    // Occasionally test a forged or malformed token.
    if (rng_.chance(1, 12)) {
      CapabilityToken t = tokens_[rng_.below(tokens_.size())];
      auto dec = decode_token(t);
      if (dec.ok() && rng_.chance(3, 4)) {
        return encode_token(*dec.value().type,
                            Nonce(dec.value().nonce ^ (1 + rng_.below(0xFFFF))),
                            dec.value().id, dec.value().offset)
            .value();
      }
      return CapabilityToken{rng_.next()};
    }
    return tokens_[rng_.below(tokens_.size())];
  }

  // Accesses favor a small hot set so the caches see realistic reuse.
  CapabilityToken pick_access_token() {
    if (!hot_.empty() && rng_.chance(3, 5)) {
      return hot_[rng_.below(hot_.size())];
    }
    return pick_token();
  }

  void mark_hot(CapabilityToken t) {
    hot_.push_back(t);
    if (hot_.size() > 8) hot_.erase(hot_.begin());
  }

  void remember(CapabilityToken t) {
    tokens_.push_back(t);
    if (tokens_.size() > 96) {
      tokens_.erase(tokens_.begin() + 3 + rng_.below(tokens_.size() - 3));
    }
  }

  // Drop tokens that proved dead so the pool keeps mostly-live traffic.
  void forget(CapabilityToken t) {
    auto dec = decode_token(t);
    auto same_id = [&](CapabilityToken o) {
      auto od = decode_token(o);
      return dec.ok() && od.ok() && od.value().id == dec.value().id;
    };
    std::erase_if(hot_, same_id);
    if (tokens_.size() > 3) {
      for (size_t i = tokens_.size(); i-- > 3;) {
        if (same_id(tokens_[i])) tokens_.erase(tokens_.begin() + i);
      }
    }
  }

  DeviceId pick_device() { return rng_.chance(1, 5) ? 1 : 0; }

  bool same_op(const OpResult& a, const OpResult& b, FuzzReport& rep,
               const char* what) {
    if (a.status != b.status || a.out != b.out || a.out2 != b.out2 ||
        a.flag != b.flag || a.base != b.base || a.length != b.length) {
      rep.detail = std::string(what) + ": cached=" + op_status_name(a.status) +
                   "/" + token_to_hex(a.out) + " oracle=" +
                   op_status_name(b.status) + "/" + token_to_hex(b.out);
      return false;
    }
    return true;
  }

  bool event_op(FuzzReport& rep) {
    OpRequest req;
    const Opcode ops[] = {Opcode::Create, Opcode::Merge,  Opcode::Derive,
                          Opcode::Clone,  Opcode::Inspect, Opcode::Restrict,
                          Opcode::Drop};
    req.op = ops[rng_.below(std::size(ops))];
    req.a = pick_access_token();
    req.b = pick_token();
    req.len = 1 + rng_.below(0x200);
    req.off = rng_.below(0x40);
    req.off_plus = rng_.below(16);
    req.len_minus = rng_.below(16);
    req.p = random_perms();
    req.r = random_restriction();
    DeviceId dev = pick_device();
    OpResult a = cached_->op(dev, req);
    OpResult b = oracle_->op(dev, req);
    if (!same_op(a, b, rep, opcode_name(req.op))) return false;
    if (a.status == OpStatus::Ok && a.out.raw != 0) {
      remember(a.out);
      mark_hot(a.out);
    }
    return true;
  }

  bool event_access(FuzzReport& rep) {
    CapabilityToken t = pick_access_token();
    uint64_t off = rng_.chance(7, 10) ? rng_.below(8) : rng_.below(0x120);
    auto moved = with_offset(t, token_offset(t) + off);
    if (moved.ok()) t = moved.value();
    DeviceId dev = pick_device();
    uint32_t kind = uint32_t(rng_.below(3));
    if (kind == 2 && dev != 0) kind = 0;  // DMA ports do not fetch

    if (kind == 0) {
      uint64_t len = 1 + rng_.below(rng_.chance(4, 5) ? 8 : 64);
      auto a = cached_->mem_read(dev, t, len);
      auto b = oracle_->mem_read(dev, t, len);
      if (a.ok() != b.ok()) {
        rep.detail = "read ok-mismatch on " + token_to_hex(t);
        return false;
      }
      if (!a.ok()) {
        if (a.error() != b.error()) {
          rep.detail = std::string("read fault mismatch: cached=") +
                       fault_name(a.error()) + " oracle=" +
                       fault_name(b.error());
          return false;
        }
        return true;
      }
      if (a.value() != b.value()) {
        rep.detail = "read data mismatch on " + token_to_hex(t);
        return false;
      }
      return true;
    }
    if (kind == 1) {
      uint64_t len = 1 + rng_.below(rng_.chance(4, 5) ? 8 : 64);
      std::vector<uint8_t> bytes(len);
      for (auto& x : bytes) x = uint8_t(rng_.next());
      auto a = cached_->mem_write(dev, t, bytes);
      auto b = oracle_->mem_write(dev, t, bytes);
      if (a.ok() != b.ok() ||
          (!a.ok() && a.error() != b.error())) {
        rep.detail = "write outcome mismatch on " + token_to_hex(t);
        return false;
      }
      return true;
    }
    bool expect_call = rng_.chance(1, 4);
    auto a = cached_->fetch(dev, t, expect_call);
    auto b = oracle_->fetch(dev, t, expect_call);
    if (a.ok() != b.ok()) {
      rep.detail = "fetch ok-mismatch on " + token_to_hex(t);
      return false;
    }
    if (a.ok() && (a.value().kind != b.value().kind ||
                   a.value().subsystem != b.value().subsystem)) {
      rep.detail = "fetch outcome mismatch on " + token_to_hex(t);
      return false;
    }
    if (!a.ok() && a.error() != b.error()) {
      rep.detail = std::string("fetch fault mismatch: cached=") +
                   fault_name(a.error()) + " oracle=" + fault_name(b.error());
      return false;
    }
    return true;
  }

  bool event_lock_revoke(FuzzReport& rep) {
    OpRequest req;
    // Locks are released again fairly quickly so the pool does not converge
    // to an all-locked state where every access faults.
    if (!holders_.empty() && rng_.chance(2, 3)) {
      req.op = Opcode::Drop;
      req.a = holders_.back();
      holders_.pop_back();
    } else if (rng_.chance(1, 2)) {
      req.op = Opcode::Lock;
      req.a = pick_token();
    } else {
      req.op = Opcode::Revoke;
      req.a = pick_token();
    }
    req.p = random_perms();
    req.r = random_restriction();
    DeviceId dev = pick_device();
    OpResult a = cached_->op(dev, req);
    OpResult b = oracle_->op(dev, req);
    if (!same_op(a, b, rep, opcode_name(req.op))) return false;
    if (a.status == OpStatus::Ok && a.out.raw != 0) {
      remember(a.out);
      if (req.op == Opcode::Lock) holders_.push_back(a.out);
      if (req.op == Opcode::Revoke) mark_hot(a.out);
    }
    return true;
  }

  bool event_interrupt(FuzzReport& rep) {
    DeviceId cpu = 0;
    switch (rng_.below(4)) {
      case 0: {
        uint32_t cause = uint32_t(rng_.below(4));
        auto a = cached_->raise_interrupt(cpu, cause);
        auto b = oracle_->raise_interrupt(cpu, cause);
        bool same = a.ok() == b.ok() &&
                    (!a.ok() || a.value() == b.value());
        if (!same) {
          rep.detail = "interrupt outcome mismatch";
          return false;
        }
        break;
      }
      case 1: {
        auto a = cached_->mret(cpu);
        auto b = oracle_->mret(cpu);
        if (a.ok() != b.ok()) {
          rep.detail = "mret outcome mismatch";
          return false;
        }
        break;
      }
      case 2: {
        bool enable = rng_.chance(1, 2);
        cached_->set_irq_enable(cpu, enable);
        oracle_->set_irq_enable(cpu, enable);
        break;
      }
      default: {
        uint64_t v = rng_.next();
        unsigned reg = unsigned(rng_.below(32));
        cached_->reg_write(cpu, reg, v);
        oracle_->reg_write(cpu, reg, v);
        if (cached_->reg_read(cpu, reg) != oracle_->reg_read(cpu, reg)) {
          rep.detail = "register mismatch";
          return false;
        }
        break;
      }
    }
    return true;
  }

  Permissions random_perms() {
    // Bias toward capable, cacheable permissions so the caches see traffic.
    Permissions p = perms_from_string("rwdt");
    if (rng_.chance(1, 2)) p.bits |= Permissions::kX;
    if (rng_.chance(2, 3)) p.bits |= Permissions::kL;
    if (rng_.chance(1, 2)) p.bits |= Permissions::kI;
    if (rng_.chance(1, 8)) p.bits &= ~Permissions::kCT;
    return p;
  }

  Restriction random_restriction() {
    switch (rng_.below(8)) {
      case 0:
        return Restriction::bound(DeviceId(rng_.below(2)),
                                  SubsystemId(rng_.below(4)));
      case 1:
        return Restriction::device_interpreted(rng_.next());
      case 2:
        return Restriction::id_set(0, SubsystemId(rng_.below(4)));
      default:
        return Restriction::none();
    }
  }

  FuzzConfig cfg_;
  Rng rng_;
  std::unique_ptr<Machine> cached_;
  std::unique_ptr<Machine> oracle_;
  std::vector<CapabilityToken> tokens_;
  std::vector<CapabilityToken> hot_;
  std::vector<CapabilityToken> holders_;
};

inline FuzzReport run_fuzz(const FuzzConfig& cfg) {
  DifferentialFuzzer fuzzer(cfg);
  return fuzzer.run();
}

}  // namespace northcape
