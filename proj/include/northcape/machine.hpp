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

#include <cassert>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "northcape/cmt.hpp"
#include "northcape/common.hpp"
#include "northcape/ntlb.hpp"
#include "northcape/ops.hpp"
#include "northcape/resolver.hpp"
#include "northcape/rng.hpp"
#include "northcape/token.hpp"

namespace northcape {

enum class CpuRegime : uint8_t { Normal = 0, Irq = 1, Nmi = 2 };

inline const char* regime_name(CpuRegime r) {
  switch (r) {
    case CpuRegime::Normal: return "n";
    case CpuRegime::Irq: return "i";
    case CpuRegime::Nmi: return "m";
  }
  return "?";
}

inline Regime access_regime(CpuRegime r) {
  return r == CpuRegime::Normal ? Regime::Normal : Regime::Irq;
}

/// 32 general registers per regime; reads of slots whose uninit-mask bit is
/// set yield zero until the slot is written.
struct RegisterFile {
  std::array<uint64_t, 32> slots{};
  uint64_t uninit_mask = 0;

  uint64_t read(unsigned reg) const {
    if (reg >= slots.size()) return 0;
    if (uninit_mask & (uint64_t{1} << reg)) return 0;
    return slots[reg];
  }

  void write(unsigned reg, uint64_t value) {
    if (reg >= slots.size()) return;
    uninit_mask &= ~(uint64_t{1} << reg);
    slots[reg] = value;
  }
};

enum class DeviceKind : uint8_t { Cpu, Dma };

struct Device {
  DeviceId port = 0;
  DeviceKind kind = DeviceKind::Cpu;
  std::string name;
  // Per-regime state; DMA devices use index 0 only and never leave it.
  std::array<SubsystemId, 3> subsystem{0, 0, 0};
  std::array<RegisterFile, 3> regs;
  std::array<CapabilityToken, 3> pc{};
  CpuRegime regime = CpuRegime::Normal;
  // Saved when entering Irq/Nmi, restored by mret.
  std::array<CpuRegime, 3> entered_from{CpuRegime::Normal, CpuRegime::Normal,
                                        CpuRegime::Normal};
  std::array<CapabilityToken, 3> saved_epc{};
  std::array<bool, 3> irq_enable{true, false, false};
  std::vector<bool> nmi_mask;  // per cause, write-once
};

struct MachineConfig {
  uint64_t memory_size = uint64_t{1} << 20;
  uint32_t cmt_slots = uint32_t{1} << 13;
  uint32_t cmt_entry_bytes = 32;  // reserved-region sizing
  uint32_t irq_causes = 32;
  uint32_t timer_cause = 1;
  NtlbConfig ntlb;
  uint64_t seed = 1;
  bool use_cache = true;
};

enum class IrqOutcome : uint8_t { Taken, Masked };

enum class MachineError : uint8_t {
  NotInIrq,
  VectorFault,
  Halted,
  BadDevice,
  VectorBaseSet,
  NoVectorBase,
};

inline const char* machine_error_name(MachineError e) {
  switch (e) {
    case MachineError::NotInIrq: return "NotInIrq";
    case MachineError::VectorFault: return "VectorFault";
    case MachineError::Halted: return "Halted";
    case MachineError::BadDevice: return "BadDevice";
    case MachineError::VectorBaseSet: return "VectorBaseSet";
    case MachineError::NoVectorBase: return "NoVectorBase";
  }
  return "?";
}

struct FetchOutcome {
  FetchClass kind = FetchClass::PlainFetch;
  SubsystemId subsystem = 0;  // active subsystem after the fetch
};

/// The whole system: physical memory, the CMT with its reserved region at
/// the top of memory, the NTLB, the operations module, devices, and the
/// interrupt machinery. A single-threaded deterministic event processor.
class Machine {
 public:
  explicit Machine(const MachineConfig& cfg)
      : cfg_(cfg), mem_(cfg.memory_size, 0) {
    assert(cfg.memory_size <= (uint64_t{1} << 32));
    assert(cfg.cmt_slots <= (1u << 14));
    SeedSequence seeds(cfg.seed);
    uint64_t nk0 = seeds.next(), nk1 = seeds.next();
    uint64_t tk0 = seeds.next(), tk1 = seeds.next();
    uint64_t cmt_bytes = uint64_t{cfg.cmt_slots} * cfg.cmt_entry_bytes;
    assert(cmt_bytes < cfg.memory_size);
    cmt_region_ = PhysRange{cfg.memory_size - cmt_bytes, cmt_bytes};
    cmt_ = std::make_unique<Cmt>(CmtConfig{cfg.cmt_slots, 64}, nk0, nk1);
    cmt_->install_root(cfg.memory_size, Permissions::all());
    ntlb_ = std::make_unique<Ntlb>(cfg.ntlb, *cmt_, cmt_region_);
    resolver_ = std::make_unique<Resolver>(*cmt_, cmt_region_);
    ops_ = std::make_unique<OpsModule>(*cmt_, *ntlb_, mem_, tk0, tk1);
  }

  // ---- topology ------------------------------------------------------

  DeviceId add_cpu(const std::string& name) {
    Device d;
    d.port = static_cast<DeviceId>(devices_.size());
    d.kind = DeviceKind::Cpu;
    d.name = name;
    d.nmi_mask.assign(cfg_.irq_causes, false);
    devices_.push_back(d);
    ntlb_->add_cpu(d.port);
    return d.port;
  }

  DeviceId add_dma(const std::string& name, SubsystemId subsystem) {
    Device d;
    d.port = static_cast<DeviceId>(devices_.size());
    d.kind = DeviceKind::Dma;
    d.name = name;
    d.subsystem[0] = subsystem;
    devices_.push_back(d);
    return d.port;
  }

  Device& device(DeviceId id) { return devices_.at(id); }
  const Device& device(DeviceId id) const { return devices_.at(id); }
  size_t device_count() const { return devices_.size(); }

  // ---- protection plumbing -------------------------------------------

  AccessContext context_for(DeviceId dev, AccessKind access,
                            bool is_fetch) const {
    const Device& d = devices_.at(dev);
    AccessContext ctx;
    ctx.device = dev;
    ctx.subsystem = d.subsystem[size_t(d.regime)];
    ctx.regime = d.kind == DeviceKind::Cpu ? access_regime(d.regime)
                                           : Regime::Normal;
    ctx.access = access;
    ctx.is_fetch = is_fetch;
    ctx.device_is_cpu = d.kind == DeviceKind::Cpu;
    return ctx;
  }

  Result<ResolutionResult, Fault> resolve(CapabilityToken t,
                                          const AccessContext& ctx) {
    if (cfg_.use_cache) return ntlb_->cached_resolve(t, ctx);
    return resolver_->resolve(t, ctx);
  }

  Result<PhysRange, Fault> translate(CapabilityToken t,
                                     const AccessContext& ctx, uint64_t len) {
    auto r = resolve(t, ctx);
    if (!r.ok()) return r.error();
    return Resolver::finish_translate(r.value(), token_offset(t), len,
                                      cmt_region_);
  }

  // ---- bus accesses ---------------------------------------------------

  Result<std::vector<uint8_t>, Fault> mem_read(DeviceId dev,
                                               CapabilityToken t,
                                               uint64_t len) {
    AccessContext ctx = context_for(dev, AccessKind::Read, false);
    auto range = translate(t, ctx, len);
    if (!range.ok()) {
      trace_access("read", dev, t, fault_name(range.error()), len);
      return range.error();
    }
    std::vector<uint8_t> out(len);
    std::copy_n(mem_.begin() + range.value().base, len, out.begin());
    trace_access("read", dev, t, "ok", len);
    return out;
  }

  StatusResult<Fault> mem_write(DeviceId dev, CapabilityToken t,
                                std::span<const uint8_t> bytes) {
    AccessContext ctx = context_for(dev, AccessKind::Write, false);
    auto range = translate(t, ctx, bytes.size());
    if (!range.ok()) {
      trace_access("write", dev, t, fault_name(range.error()), bytes.size());
      return range.error();
    }
    std::copy(bytes.begin(), bytes.end(), mem_.begin() + range.value().base);
    trace_access("write", dev, t, "ok", bytes.size());
    return Unit{};
  }

  /// Instruction fetch. A fetch at offset 0 of a foreign set-subsystem-id
  /// capability is a subsystem call and atomically switches the active
  /// regime's subsystem id. With expect_call set, any plain-fetch outcome
  /// faults NotEntryPoint before taking effect.
  Result<FetchOutcome, Fault> fetch(DeviceId dev, CapabilityToken t,
                                    bool expect_call = false) {
    Device& d = devices_.at(dev);
    if (d.kind != DeviceKind::Cpu) return Fault::PermissionDenied;
    AccessContext ctx = context_for(dev, AccessKind::Execute, true);
    auto res = resolve(t, ctx);
    if (!res.ok()) {
      trace_access("fetch", dev, t, fault_name(res.error()), 0);
      return res.error();
    }
    auto ep = Resolver::classify_entry_point(res.value(), token_offset(t), ctx);
    if (!ep.ok()) {
      trace_access("fetch", dev, t, fault_name(ep.error()), 0);
      return ep.error();
    }
    FetchOutcome out;
    if (ep.value().kind == FetchClass::SubsystemCall) {
      d.subsystem[size_t(d.regime)] = ep.value().target;
      out.kind = FetchClass::SubsystemCall;
      out.subsystem = ep.value().target;
      d.pc[size_t(d.regime)] = t;
      trace_event("call", dev,
                  token_to_hex(t) + " -> sub=" +
                      std::to_string(ep.value().target));
      return out;
    }
    if (expect_call) {
      trace_access("fetch", dev, t, fault_name(Fault::NotEntryPoint), 0);
      return Fault::NotEntryPoint;
    }
    d.pc[size_t(d.regime)] = t;
    out.kind = FetchClass::PlainFetch;
    out.subsystem = d.subsystem[size_t(d.regime)];
    trace_access("fetch", dev, t, "ok", 0);
    return out;
  }

  // ---- interrupt machinery --------------------------------------------

  StatusResult<MachineError> set_vector_base(PhysAddr base) {
    if (vector_base_) return MachineError::VectorBaseSet;
    vector_base_ = base;
    return Unit{};
  }

  std::optional<PhysAddr> vector_base() const { return vector_base_; }

  void set_irq_enable(DeviceId dev, bool enable) {
    Device& d = devices_.at(dev);
    d.irq_enable[size_t(d.regime)] = enable;
    trace_event("irq_enable", dev, enable ? "on" : "off");
  }

  /// Marks a cause non-maskable. Write-once: never cleared.
  void set_nmi_mask(DeviceId dev, uint32_t cause) {
    Device& d = devices_.at(dev);
    if (cause < d.nmi_mask.size()) d.nmi_mask[cause] = true;
    trace_event("nmi_mask", dev, "cause=" + std::to_string(cause));
  }

  Result<IrqOutcome, MachineError> raise_interrupt(DeviceId dev,
                                                   uint32_t cause) {
    if (halted_) return MachineError::Halted;
    Device& d = devices_.at(dev);
    if (d.kind != DeviceKind::Cpu || cause >= cfg_.irq_causes) {
      return MachineError::BadDevice;
    }
    if (!vector_base_) return MachineError::NoVectorBase;

    bool nmi = d.nmi_mask[cause];
    bool timer = cause == cfg_.timer_cause;
    bool maskable_ok =
        d.regime == CpuRegime::Normal && d.irq_enable[size_t(CpuRegime::Normal)];
    if (nmi) {
      if (d.regime == CpuRegime::Nmi) {
        trace_event("irq", dev, "cause=" + std::to_string(cause) + " masked");
        return IrqOutcome::Masked;
      }
    } else if (!maskable_ok) {
      trace_event("irq", dev, "cause=" + std::to_string(cause) + " masked");
      return IrqOutcome::Masked;
    }

    CapabilityToken vec = read_vector_slot(cause);

    if (timer) {
      // Voluntary preemption: no regime or register-file switch; the stub
      // token is invoked on the normal regime's state.
      CpuRegime saved = d.regime;
      d.regime = CpuRegime::Normal;
      auto f = fetch(dev, vec);
      d.regime = saved;
      if (!f.ok()) {
        halted_ = true;
        trace_event("irq", dev, "timer vector-fault");
        return MachineError::VectorFault;
      }
      trace_event("irq", dev, "cause=" + std::to_string(cause) + " timer");
      return IrqOutcome::Taken;
    }

    CpuRegime target = nmi ? CpuRegime::Nmi : CpuRegime::Irq;
    CpuRegime prev = d.regime;
    d.entered_from[size_t(target)] = prev;
    d.saved_epc[size_t(target)] = d.pc[size_t(prev)];
    d.regime = target;
    auto f = fetch(dev, vec);
    if (!f.ok()) {
      halted_ = true;
      trace_event("irq", dev, "vector-fault");
      return MachineError::VectorFault;
    }
    trace_event("irq", dev,
                "cause=" + std::to_string(cause) +
                    (nmi ? " nmi-taken" : " taken"));
    return IrqOutcome::Taken;
  }

  StatusResult<MachineError> mret(DeviceId dev) {
    Device& d = devices_.at(dev);
    if (d.regime == CpuRegime::Normal) return MachineError::NotInIrq;
    CpuRegime from = d.regime;
    d.regime = d.entered_from[size_t(from)];
    trace_event("mret", dev,
                std::string(regime_name(from)) + "->" +
                    regime_name(d.regime) + " epc=" +
                    token_to_hex(d.saved_epc[size_t(from)]));
    return Unit{};
  }

  void zero_registers(DeviceId dev, uint64_t mask) {
    Device& d = devices_.at(dev);
    d.regs[size_t(d.regime)].uninit_mask = mask;
    trace_event("zero_regs", dev, "");
  }

  uint64_t reg_read(DeviceId dev, unsigned reg) {
    Device& d = devices_.at(dev);
    return d.regs[size_t(d.regime)].read(reg);
  }

  void reg_write(DeviceId dev, unsigned reg, uint64_t value) {
    Device& d = devices_.at(dev);
    d.regs[size_t(d.regime)].write(reg, value);
  }

  // ---- operations port -------------------------------------------------

  PortBank bank_for(DeviceId dev) const {
    const Device& d = devices_.at(dev);
    return d.regime == CpuRegime::Normal ? PortBank::Normal : PortBank::Irq;
  }

  /// Convenience wrapper: begin + submit + read on the device's current
  /// bank. Scenario steps and the allocator use this.
  OpResult op(DeviceId dev, const OpRequest& req) {
    Device& d = devices_.at(dev);
    SubsystemId sub = d.subsystem[size_t(d.regime)];
    PortBank bank = bank_for(dev);
    auto b = ops_->port_begin(dev, sub, bank);
    if (!b.ok()) {
      OpResult r;
      r.status = b.error();
      trace_op(dev, req, r);
      return r;
    }
    Regime regime = d.kind == DeviceKind::Cpu ? access_regime(d.regime)
                                              : Regime::Normal;
    auto s = ops_->port_submit(dev, sub, bank, req, regime);
    if (!s.ok()) {
      OpResult r;
      r.status = s.error();
      trace_op(dev, req, r);
      return r;
    }
    OpResult r = ops_->port_read_result(dev, sub, bank);
    trace_op(dev, req, r);
    return r;
  }

  OpsModule& ops() { return *ops_; }
  uint64_t read_random() { return ops_->read_random(); }

  // ---- introspection ----------------------------------------------------

  Cmt& cmt() { return *cmt_; }
  const Cmt& cmt() const { return *cmt_; }
  Ntlb& ntlb() { return *ntlb_; }
  const Ntlb& ntlb() const { return *ntlb_; }
  Resolver& resolver() { return *resolver_; }
  const PhysRange& cmt_region() const { return cmt_region_; }
  const MachineConfig& config() const { return cfg_; }
  bool halted() const { return halted_; }
  bool cache_enabled() const { return cfg_.use_cache; }

  std::span<const uint8_t> memory() const { return mem_; }
  /// Raw physical poke for test setup; not a modeled bus path.
  void poke(PhysAddr addr, uint8_t v) { mem_.at(addr) = v; }

  const std::vector<std::string>& trace() const { return trace_; }
  std::string trace_text() const {
    std::string out;
    for (const auto& l : trace_) {
      out += l;
      out += '\n';
    }
    return out;
  }

  std::string stats_dump() const {
    std::ostringstream os;
    os << "machine.events=" << seq_ << "\n";
    os << "machine.ops_committed=" << ops_->ops_committed() << "\n";
    os << cmt_->stats_dump();
    os << ntlb_->stats_dump();
    return os.str();
  }

  void trace_event(const std::string& kind, DeviceId dev,
                   const std::string& detail) {
    const Device& d = devices_.at(dev);
    std::ostringstream os;
    os << seq_++ << " " << kind << " " << d.name << "."
       << regime_name(d.regime) << " sub=" << d.subsystem[size_t(d.regime)];
    if (!detail.empty()) os << " " << detail;
    trace_.push_back(os.str());
  }

 private:
  CapabilityToken read_vector_slot(uint32_t cause) const {
    PhysAddr addr = *vector_base_ + uint64_t{cause} * 8;
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
      v = (v << 8) | (addr + i < mem_.size() ? mem_[addr + i] : 0);
    }
    return CapabilityToken{v};
  }

  void trace_access(const char* kind, DeviceId dev, CapabilityToken t,
                    const std::string& outcome, uint64_t len) {
    std::ostringstream os;
    os << token_to_hex(t) << " " << outcome;
    if (len != 0) os << " len=" << len;
    trace_event(kind, dev, os.str());
  }

  void trace_op(DeviceId dev, const OpRequest& req, const OpResult& r) {
    std::ostringstream os;
    os << opcode_name(req.op) << " " << token_to_hex(req.a) << " "
       << op_status_name(r.status);
    if (r.status == OpStatus::Ok && r.out.raw != 0) {
      os << " out=" << token_to_hex(r.out);
    }
    trace_event("op", dev, os.str());
  }

  MachineConfig cfg_;
  std::vector<uint8_t> mem_;
  PhysRange cmt_region_;
  std::unique_ptr<Cmt> cmt_;
  std::unique_ptr<Ntlb> ntlb_;
  std::unique_ptr<Resolver> resolver_;
  std::unique_ptr<OpsModule> ops_;
  std::vector<Device> devices_;
  std::optional<PhysAddr> vector_base_;
  bool halted_ = false;
  uint64_t seq_ = 0;
  std::vector<std::string> trace_;
};

}  // namespace northcape
