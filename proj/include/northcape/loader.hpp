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

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "northcape/machine.hpp"

namespace northcape {

enum class SegmentKind : uint8_t { Text, Data, Rodata, Bss };

inline const char* segment_kind_name(SegmentKind k) {
  switch (k) {
    case SegmentKind::Text: return "text";
    case SegmentKind::Data: return "data";
    case SegmentKind::Rodata: return "rodata";
    case SegmentKind::Bss: return "bss";
  }
  return "?";
}

struct Segment {
  SegmentKind kind = SegmentKind::Data;
  uint64_t size = 0;
  std::vector<uint8_t> bytes;  // initial contents; zero-filled to size
  Permissions perms;
};

struct Export {
  std::string symbol;
  SegmentKind segment = SegmentKind::Text;
  uint64_t offset = 0;
  bool is_call = true;
  uint64_t data_len = 0;  // data exports only
};

struct Fixup {
  SegmentKind segment = SegmentKind::Data;
  uint64_t offset = 0;  // 8-byte aligned token slot
  std::string symbol;
};

/// One relocatable subsystem image. MMIO imports encode their window in the
/// symbol name as mmio_<base>_<length>.
struct SubsystemImage {
  std::string name;
  std::vector<Segment> segments;
  std::vector<Export> exports;
  std::vector<std::string> imports;
  std::vector<Fixup> fixups;
  std::string init_symbol;  // optional exported call invoked at boot
  int init_priority = 100;
};

struct PoolConfig {
  uint32_t frames = 4;
  uint64_t stack_size = 512;
  uint64_t regset_size = 256;
};

struct BootConfig {
  std::vector<SubsystemImage> images;
  std::map<uint32_t, std::string> vector;  // cause -> "image.symbol"
  std::string heap_image;                  // receives the allocator heap
  uint64_t heap_bytes = 0;
  uint64_t scratch_bytes = 4096;  // loader-private region, revoked at trapdoor
  PoolConfig pools;
  std::string start;  // optional "image.symbol" fetched after trapdoor
  DeviceId loader_cpu = 0;
};

enum class BootError : uint8_t {
  ImportUnresolved,
  ImportCycle,
  OutOfMemory,
  TableFull,
  MachineNotAtReset,
  BadImage,
  OpFailed,
  FetchFailed,
};

inline const char* boot_error_name(BootError e) {
  switch (e) {
    case BootError::ImportUnresolved: return "ImportUnresolved";
    case BootError::ImportCycle: return "ImportCycle";
    case BootError::OutOfMemory: return "OutOfMemory";
    case BootError::TableFull: return "TableFull";
    case BootError::MachineNotAtReset: return "MachineNotAtReset";
    case BootError::BadImage: return "BadImage";
    case BootError::OpFailed: return "OpFailed";
    case BootError::FetchFailed: return "FetchFailed";
  }
  return "?";
}

enum class PoolError : uint8_t { PoolExhausted, DoubleRelease, BadIndex };

/// Fixed pool of stack frames and register-set buffers with a claim bitmap.
/// Claim picks the lowest free bit (count-trailing-zeros semantics).
struct StackPool {
  std::vector<CapabilityToken> frames;
  std::vector<CapabilityToken> regsets;
  uint64_t bitmap = 0;  // set bit = in use
  uint64_t claim_attempts = 0;

  Result<uint32_t, PoolError> claim(uint32_t spin_limit = 0) {
    for (uint32_t attempt = 0;; ++attempt) {
      ++claim_attempts;
      uint64_t mask = frames.empty()
                          ? 0
                          : (frames.size() >= 64
                                 ? ~uint64_t{0}
                                 : (uint64_t{1} << frames.size()) - 1);
      uint64_t free = ~bitmap & mask;
      if (free != 0) {
        uint32_t idx = static_cast<uint32_t>(std::countr_zero(free));
        bitmap |= uint64_t{1} << idx;
        return idx;
      }
      if (attempt >= spin_limit) return PoolError::PoolExhausted;
    }
  }

  StatusResult<PoolError> release(uint32_t idx) {
    if (idx >= frames.size()) return PoolError::BadIndex;
    uint64_t bit = uint64_t{1} << idx;
    if (!(bitmap & bit)) return PoolError::DoubleRelease;
    bitmap &= ~bit;
    return Unit{};
  }
};

struct LoadedSubsystem {
  std::string name;
  SubsystemId sid = 0;
  // Private capabilities delegated to this subsystem (all SubsystemIdBound).
  std::vector<std::pair<std::string, CapabilityToken>> private_tokens;
  // Public entry tokens (SubsystemIdSet) per exported call.
  std::vector<std::pair<std::string, CapabilityToken>> entry_tokens;
  CapabilityToken timer_token{0};
  StackPool pool;
};

/// Boot output: the symbol map scenario scripts use, the per-subsystem
/// capability sets, and the bookkeeping trapdoor needs.
struct SystemHandle {
  std::map<std::string, CapabilityToken> symbols;
  std::vector<LoadedSubsystem> subsystems;
  CapabilityToken heap_token{0};         // bound to the heap image, if any
  CapabilityToken trapdoor_heap{0};      // scratch region after trapdoor
  std::vector<CapabilityToken> loader_tokens;  // every subsystem-0 token
  bool trapdoor_done = false;

  // Loader-internal state needed by trapdoor.
  CapabilityToken scratch{0};
  std::vector<CapabilityToken> segment_directs;
  SubsystemId heap_sid = 0;

  const LoadedSubsystem* find(const std::string& name) const {
    for (const auto& s : subsystems) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }
};

/// The trusted loader. Relocates images into restricted capabilities, wires
/// imports to entry tokens and data windows, builds stack/register pools,
/// and finally destroys itself via trapdoor().
class Loader {
 public:
  static Result<SystemHandle, BootError> boot(Machine& m,
                                              const BootConfig& cfg) {
    Loader ld(m, cfg);
    auto r = ld.run();
    if (!r.ok()) return r.error();
    return ld.handle_;
  }

  /// Destroys the loader: revokes the scratch region (killing every
  /// set-subsystem-id-0 token), strips the segment directs and the root
  /// capability, and hands the freed region to the allocator heap.
  static StatusResult<BootError> trapdoor(Machine& m, SystemHandle& h,
                                          const BootConfig& cfg) {
    if (h.trapdoor_done) return Unit{};
    DeviceId cpu = cfg.loader_cpu;

    for (CapabilityToken d : h.segment_directs) {
      OpRequest rq;
      rq.op = Opcode::Restrict;
      rq.a = d;
      rq.p = Permissions::none();
      if (m.op(cpu, rq).status != OpStatus::Ok) return BootError::OpFailed;
    }

    OpRequest rv;
    rv.op = Opcode::Revoke;
    rv.a = h.scratch;
    if (h.heap_sid != 0) {
      rv.p = Permissions::of(Permissions::kR | Permissions::kW |
                             Permissions::kL | Permissions::kCD |
                             Permissions::kCT);
      rv.r = Restriction::bound(cpu, h.heap_sid);
    } else {
      rv.p = Permissions::none();
      rv.r = Restriction::bound(cpu, 0);
    }
    OpResult revoked = m.op(cpu, rv);
    if (revoked.status != OpStatus::Ok) return BootError::OpFailed;
    h.trapdoor_heap = revoked.out;

    OpRequest strip;
    strip.op = Opcode::Restrict;
    strip.a = kRootToken;
    strip.p = Permissions::none();
    if (m.op(cpu, strip).status != OpStatus::Ok) return BootError::OpFailed;

    h.trapdoor_done = true;
    m.trace_event("trapdoor", cpu, "");

    if (!cfg.start.empty()) {
      auto it = h.symbols.find(cfg.start);
      if (it == h.symbols.end()) return BootError::ImportUnresolved;
      if (!m.fetch(cpu, it->second).ok()) return BootError::FetchFailed;
    }
    return Unit{};
  }

 private:
  Loader(Machine& m, const BootConfig& cfg) : m_(m), cfg_(cfg) {}

  StatusResult<BootError> run() {
    DeviceId cpu = cfg_.loader_cpu;
    if (m_.device(cpu).subsystem[0] != 0) return BootError::MachineNotAtReset;
    if (auto root = m_.cmt().lookup(0); !root || root->base != 0) {
      return BootError::MachineNotAtReset;
    }
    if (auto e = validate_images(); !e.ok()) return e;
    if (auto e = topo_sort(); !e.ok()) return e;

    // Bind the root to the loader before anything else leaks.
    OpRequest bind;
    bind.op = Opcode::Restrict;
    bind.a = kRootToken;
    bind.p = Permissions::all();
    bind.r = Restriction::bound(cpu, 0);
    if (m_.op(cpu, bind).status != OpStatus::Ok) return BootError::OpFailed;
    record_loader_token(kRootToken);
    handle_.symbols["root"] = kRootToken;

    // Vector table region sits just below the CMT; everything else is
    // carved bottom-up from the root.
    vec_base_ = m_.cmt_region().base - uint64_t{m_.config().irq_causes} * 8;

    // Phase B: all creates from the root happen before any derive from it
    // (create requires a zero refcount).
    if (auto e = carve_regions(); !e.ok()) return e;
    // Phase C: per-image relocation in topological order.
    for (size_t idx : order_) {
      if (auto e = load_image(idx); !e.ok()) return e;
    }
    // Phase D: interrupt vector table.
    if (auto e = write_vector_table(); !e.ok()) return e;
    // Phase E: init calls, in load order.
    for (size_t idx : order_) {
      if (auto e = call_init(idx); !e.ok()) return e;
    }
    return Unit{};
  }

  StatusResult<BootError> validate_images() {
    std::set<std::string> names;
    std::set<std::string> export_names;
    for (const auto& img : cfg_.images) {
      if (img.name.empty() || !names.insert(img.name).second) {
        return BootError::BadImage;
      }
      for (const auto& ex : img.exports) {
        if (!export_names.insert(ex.symbol).second) return BootError::BadImage;
      }
      for (const auto& seg : img.segments) {
        if (seg.bytes.size() > seg.size) return BootError::BadImage;
      }
      for (const auto& fx : img.fixups) {
        if (fx.offset % 8 != 0) return BootError::BadImage;
        const Segment* seg = find_segment(img, fx.segment);
        if (seg == nullptr || fx.offset + 8 > seg->size) {
          return BootError::BadImage;
        }
      }
      for (const auto& ex : img.exports) {
        const Segment* seg = find_segment(img, ex.segment);
        if (seg == nullptr || ex.offset >= seg->size) return BootError::BadImage;
        if (!ex.is_call && ex.offset + ex.data_len > seg->size) {
          return BootError::BadImage;
        }
      }
    }
    return Unit{};
  }

  static const Segment* find_segment(const SubsystemImage& img,
                                     SegmentKind kind) {
    for (const auto& s : img.segments) {
      if (s.kind == kind) return &s;
    }
    return nullptr;
  }

  static bool is_mmio_symbol(const std::string& sym, uint64_t* base,
                             uint64_t* len) {
    if (sym.rfind("mmio_", 0) != 0) return false;
    size_t underscore = sym.find('_', 5);
    if (underscore == std::string::npos) return false;
    try {
      *base = std::stoull(sym.substr(5, underscore - 5));
      *len = std::stoull(sym.substr(underscore + 1));
    } catch (...) {
      return false;
    }
    return *len > 0;
  }

  /// Kahn's algorithm over import edges; among ready images the lowest
  /// init_priority (then name) loads first.
  StatusResult<BootError> topo_sort() {
    std::map<std::string, size_t> exporter;
    for (size_t i = 0; i < cfg_.images.size(); ++i) {
      for (const auto& ex : cfg_.images[i].exports) {
        exporter[ex.symbol] = i;
      }
    }
    std::vector<std::set<size_t>> deps(cfg_.images.size());
    for (size_t i = 0; i < cfg_.images.size(); ++i) {
      for (const auto& sym : cfg_.images[i].imports) {
        uint64_t b, l;
        if (is_mmio_symbol(sym, &b, &l)) continue;
        auto it = exporter.find(sym);
        if (it == exporter.end()) return BootError::ImportUnresolved;
        if (it->second != i) deps[i].insert(it->second);
      }
    }
    std::vector<bool> placed(cfg_.images.size(), false);
    while (order_.size() < cfg_.images.size()) {
      int best = -1;
      for (size_t i = 0; i < cfg_.images.size(); ++i) {
        if (placed[i]) continue;
        bool ready = true;
        for (size_t d : deps[i]) {
          if (!placed[d]) ready = false;
        }
        if (!ready) continue;
        if (best < 0 ||
            std::pair{cfg_.images[i].init_priority, cfg_.images[i].name} <
                std::pair{cfg_.images[best].init_priority,
                          cfg_.images[best].name}) {
          best = static_cast<int>(i);
        }
      }
      if (best < 0) return BootError::ImportCycle;
      placed[best] = true;
      order_.push_back(best);
    }
    return Unit{};
  }

  Result<CapabilityToken, BootError> carve(uint64_t len, Permissions p,
                                           Restriction r) {
    if (cursor_ + len > vec_base_) return BootError::OutOfMemory;
    OpRequest rq;
    rq.op = Opcode::Create;
    rq.a = kRootToken;
    rq.len = len;
    rq.p = p;
    rq.r = r;
    OpResult res = m_.op(cfg_.loader_cpu, rq);
    if (res.status == OpStatus::TableFull) return BootError::TableFull;
    if (res.status != OpStatus::Ok) return BootError::OpFailed;
    cursor_ += len;
    return res.out;
  }

  StatusResult<BootError> carve_regions() {
    DeviceId cpu = cfg_.loader_cpu;

    // Loader scratch, including the subsystem-call return trampoline.
    auto scratch = carve(std::max<uint64_t>(cfg_.scratch_bytes, 64),
                         Permissions::all(), Restriction::bound(cpu, 0));
    if (!scratch.ok()) return scratch.error();
    handle_.scratch = scratch.value();
    record_loader_token(handle_.scratch);

    // Subsystem ids in load order, monotonic from 1.
    SubsystemId next = 1;
    sids_.resize(cfg_.images.size());
    for (size_t idx : order_) sids_[idx] = next++;

    if (!cfg_.heap_image.empty()) {
      int hi = image_index(cfg_.heap_image);
      if (hi < 0) return BootError::BadImage;
      handle_.heap_sid = sids_[hi];
      if (cfg_.heap_bytes < 128) return BootError::BadImage;
      auto heap = carve(cfg_.heap_bytes,
                        Permissions::of(Permissions::kR | Permissions::kW |
                                        Permissions::kL | Permissions::kCD |
                                        Permissions::kCT),
                        Restriction::bound(cpu, handle_.heap_sid));
      if (!heap.ok()) return heap.error();
      handle_.heap_token = heap.value();
      handle_.symbols[cfg_.heap_image + ".heap"] = heap.value();
    }

    // Segment and pool directs for every image, in load order.
    seg_directs_.resize(cfg_.images.size());
    seg_bases_.resize(cfg_.images.size());
    pool_directs_.resize(cfg_.images.size());
    pool_bases_.resize(cfg_.images.size());
    for (size_t idx : order_) {
      const SubsystemImage& img = cfg_.images[idx];
      for (const auto& seg : img.segments) {
        uint64_t len = std::max<uint64_t>(align8(seg.size), 8);
        PhysAddr base = cursor_;
        auto d = carve(len, Permissions::all(), Restriction::bound(cpu, 0));
        if (!d.ok()) return d.error();
        seg_directs_[idx][size_t(seg.kind)] = d.value();
        seg_bases_[idx][size_t(seg.kind)] = base;
        handle_.segment_directs.push_back(d.value());
        record_loader_token(d.value());
      }
      uint64_t pool_len = uint64_t{cfg_.pools.frames} *
                          (cfg_.pools.stack_size + cfg_.pools.regset_size);
      if (pool_len > 0) {
        PhysAddr base = cursor_;
        auto d = carve(pool_len, Permissions::all(),
                       Restriction::bound(cpu, 0));
        if (!d.ok()) return d.error();
        pool_directs_[idx] = d.value();
        pool_bases_[idx] = base;
        handle_.segment_directs.push_back(d.value());
        record_loader_token(d.value());
      }
    }

    // The return trampoline: a set-subsystem-id-0 entry in the scratch
    // region. Revoking the scratch at trapdoor kills it.
    OpRequest dr;
    dr.op = Opcode::Derive;
    dr.a = handle_.scratch;
    dr.len = 16;
    dr.off = 0;
    dr.p = Permissions::of(Permissions::kR | Permissions::kX |
                           Permissions::kI | Permissions::kCD |
                           Permissions::kCT);
    dr.r = Restriction::id_set(cpu, 0);
    OpResult ret = m_.op(cpu, dr);
    if (ret.status != OpStatus::Ok) return BootError::OpFailed;
    return_token_ = ret.out;
    record_loader_token(return_token_);
    return Unit{};
  }

  StatusResult<BootError> load_image(size_t idx) {
    DeviceId cpu = cfg_.loader_cpu;
    const SubsystemImage& img = cfg_.images[idx];
    SubsystemId sid = sids_[idx];

    LoadedSubsystem out;
    out.name = img.name;
    out.sid = sid;

    // Copy initial bytes through the loader-held directs.
    for (const auto& seg : img.segments) {
      if (seg.bytes.empty()) continue;
      CapabilityToken d = seg_directs_[idx][size_t(seg.kind)];
      if (!m_.mem_write(cpu, d, seg.bytes).ok()) return BootError::OpFailed;
    }

    // Subsystem-bound views of each segment.
    for (const auto& seg : img.segments) {
      CapabilityToken d = seg_directs_[idx][size_t(seg.kind)];
      uint64_t len = std::max<uint64_t>(align8(seg.size), 8);
      Permissions p = seg.perms |
                      Permissions::of(Permissions::kCD | Permissions::kCT);
      auto view = derive_from(d, len, 0, p, Restriction::bound(cpu, sid));
      if (!view.ok()) return view.error();
      std::string label =
          img.name + "." + segment_kind_name(seg.kind);
      out.private_tokens.push_back({label, view.value()});
      handle_.symbols[label] = view.value();
    }

    // Entry tokens for exported calls, before fixups so a subsystem can
    // import its own entry points (timer-stub registration does).
    for (const auto& ex : img.exports) {
      if (!ex.is_call) continue;
      const Segment* seg = find_segment(img, ex.segment);
      CapabilityToken d = seg_directs_[idx][size_t(ex.segment)];
      uint64_t seg_len = std::max<uint64_t>(align8(seg->size), 8);
      Permissions p = Permissions::of(Permissions::kR | Permissions::kX |
                                      Permissions::kCD | Permissions::kCT) |
                      (seg->perms & Permissions::of(Permissions::kI));
      auto entry = derive_from(d, seg_len - ex.offset, ex.offset, p,
                               Restriction::id_set(cpu, sid));
      if (!entry.ok()) return entry.error();
      out.entry_tokens.push_back({ex.symbol, entry.value()});
      handle_.symbols[img.name + "." + ex.symbol] = entry.value();
    }

    // Resolve and write fixups: each import symbol lands in exactly one
    // 8-byte token slot.
    for (const auto& fx : img.fixups) {
      auto tok = resolve_symbol(fx.symbol, idx, sid);
      if (!tok.ok()) return tok.error();
      CapabilityToken d = seg_directs_[idx][size_t(fx.segment)];
      auto slot = with_offset(d, fx.offset);
      if (!slot.ok()) return BootError::BadImage;
      std::vector<uint8_t> bytes(8);
      for (int i = 0; i < 8; ++i) bytes[i] = uint8_t(tok.value().raw >> (8 * i));
      if (!m_.mem_write(cpu, slot.value(), bytes).ok()) {
        return BootError::OpFailed;
      }
      handle_.symbols[img.name + ".import." + fx.symbol] = tok.value();
    }

    // Stack and register-set pools.
    if (cfg_.pools.frames > 0) {
      CapabilityToken d = pool_directs_[idx];
      for (uint32_t f = 0; f < cfg_.pools.frames; ++f) {
        auto frame = derive_from(
            d, cfg_.pools.stack_size, uint64_t{f} * cfg_.pools.stack_size,
            Permissions::of(Permissions::kR | Permissions::kW |
                            Permissions::kI | Permissions::kCD |
                            Permissions::kCT),
            Restriction::bound(cpu, sid));
        if (!frame.ok()) return frame.error();
        out.pool.frames.push_back(frame.value());
        std::string label = img.name + ".stack" + std::to_string(f);
        out.private_tokens.push_back({label, frame.value()});
        handle_.symbols[label] = frame.value();
      }
      uint64_t reg_off = uint64_t{cfg_.pools.frames} * cfg_.pools.stack_size;
      for (uint32_t f = 0; f < cfg_.pools.frames; ++f) {
        auto rs = derive_from(
            d, cfg_.pools.regset_size,
            reg_off + uint64_t{f} * cfg_.pools.regset_size,
            Permissions::of(Permissions::kR | Permissions::kW |
                            Permissions::kI | Permissions::kCD |
                            Permissions::kCT),
            Restriction::bound(cpu, sid));
        if (!rs.ok()) return rs.error();
        out.pool.regsets.push_back(rs.value());
        std::string label = img.name + ".regset" + std::to_string(f);
        out.private_tokens.push_back({label, rs.value()});
        handle_.symbols[label] = rs.value();
      }
    }

    // Write-only, non-irq-accessible token onto the timer vector slot.
    uint64_t timer_slot = vec_base_ + uint64_t{m_.config().timer_cause} * 8;
    auto timer = derive_root_window(
        timer_slot, 8,
        Permissions::of(Permissions::kW | Permissions::kCD | Permissions::kCT),
        Restriction::bound(cpu, sid));
    if (!timer.ok()) return timer.error();
    out.timer_token = timer.value();
    std::string tlabel = img.name + ".timer";
    out.private_tokens.push_back({tlabel, timer.value()});
    handle_.symbols[tlabel] = timer.value();

    handle_.subsystems.push_back(std::move(out));
    return Unit{};
  }

  /// Entry token, derived data window, or MMIO window for one import.
  Result<CapabilityToken, BootError> resolve_symbol(const std::string& sym,
                                                    size_t importer,
                                                    SubsystemId importer_sid) {
    uint64_t mmio_base, mmio_len;
    DeviceId cpu = cfg_.loader_cpu;
    if (is_mmio_symbol(sym, &mmio_base, &mmio_len)) {
      auto win = derive_root_window(
          mmio_base, mmio_len,
          Permissions::of(Permissions::kR | Permissions::kW),
          Restriction::bound(cpu, importer_sid));
      if (!win.ok()) return win.error();
      handle_.symbols[cfg_.images[importer].name + "." + sym] = win.value();
      return win.value();
    }
    for (size_t i = 0; i < cfg_.images.size(); ++i) {
      for (const auto& ex : cfg_.images[i].exports) {
        if (ex.symbol != sym) continue;
        if (ex.is_call) {
          auto it = handle_.symbols.find(cfg_.images[i].name + "." + sym);
          if (it == handle_.symbols.end()) return BootError::ImportUnresolved;
          return it->second;
        }
        // Data import: a window of the declared length bound to the
        // importer.
        CapabilityToken d = seg_directs_[i][size_t(ex.segment)];
        const Segment* seg = find_segment(cfg_.images[i], ex.segment);
        Permissions p = (seg->perms &
                         Permissions::of(Permissions::kR | Permissions::kW |
                                         Permissions::kI)) |
                        Permissions::of(Permissions::kCD | Permissions::kCT);
        return derive_from(d, ex.data_len, ex.offset, p,
                           Restriction::bound(cpu, importer_sid));
      }
    }
    return BootError::ImportUnresolved;
  }

  StatusResult<BootError> write_vector_table() {
    if (!m_.vector_base()) {
      if (!m_.set_vector_base(vec_base_).ok()) return BootError::OpFailed;
    }
    for (const auto& [cause, symbol] : cfg_.vector) {
      if (cause >= m_.config().irq_causes) return BootError::BadImage;
      auto it = handle_.symbols.find(symbol);
      if (it == handle_.symbols.end()) return BootError::ImportUnresolved;
      if (auto e = write_root_u64(vec_base_ + uint64_t{cause} * 8,
                                  it->second.raw);
          !e.ok()) {
        return e;
      }
    }
    return Unit{};
  }

  StatusResult<BootError> call_init(size_t idx) {
    const SubsystemImage& img = cfg_.images[idx];
    if (img.init_symbol.empty()) return Unit{};
    auto it = handle_.symbols.find(img.name + "." + img.init_symbol);
    if (it == handle_.symbols.end()) return BootError::ImportUnresolved;
    DeviceId cpu = cfg_.loader_cpu;
    auto call = m_.fetch(cpu, it->second, true);
    if (!call.ok()) return BootError::FetchFailed;
    auto back = m_.fetch(cpu, return_token_, true);
    if (!back.ok()) return BootError::FetchFailed;
    return Unit{};
  }

  int image_index(const std::string& name) const {
    for (size_t i = 0; i < cfg_.images.size(); ++i) {
      if (cfg_.images[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  Result<CapabilityToken, BootError> derive_from(CapabilityToken parent,
                                                 uint64_t len, uint64_t off,
                                                 Permissions p,
                                                 Restriction r) {
    OpRequest rq;
    rq.op = Opcode::Derive;
    rq.a = parent;
    rq.len = len;
    rq.off = off;
    rq.p = p;
    rq.r = r;
    OpResult res = m_.op(cfg_.loader_cpu, rq);
    if (res.status == OpStatus::TableFull) return BootError::TableFull;
    if (res.status != OpStatus::Ok) return BootError::OpFailed;
    return res.out;
  }

  /// Derives a window at an absolute physical address from the root's
  /// remaining range (used for MMIO windows and timer-slot tokens).
  Result<CapabilityToken, BootError> derive_root_window(PhysAddr base,
                                                        uint64_t len,
                                                        Permissions p,
                                                        Restriction r) {
    if (base < cursor_ || base + len > m_.config().memory_size) {
      return BootError::ImportUnresolved;
    }
    return derive_from(kRootToken, len, base - cursor_, p, r);
  }

  StatusResult<BootError> write_root_u64(PhysAddr addr, uint64_t value) {
    auto slot = with_offset(kRootToken, addr - cursor_);
    if (!slot.ok()) return BootError::OpFailed;
    std::vector<uint8_t> bytes(8);
    for (int i = 0; i < 8; ++i) bytes[i] = uint8_t(value >> (8 * i));
    if (!m_.mem_write(cfg_.loader_cpu, slot.value(), bytes).ok()) {
      return BootError::OpFailed;
    }
    return Unit{};
  }

  void record_loader_token(CapabilityToken t) {
    handle_.loader_tokens.push_back(t);
  }

  static uint64_t align8(uint64_t v) { return (v + 7) & ~uint64_t{7}; }

  Machine& m_;
  const BootConfig& cfg_;
  SystemHandle handle_;
  std::vector<size_t> order_;
  std::vector<SubsystemId> sids_;
  std::vector<std::array<CapabilityToken, 4>> seg_directs_;
  std::vector<std::array<PhysAddr, 4>> seg_bases_;
  std::vector<CapabilityToken> pool_directs_;
  std::vector<PhysAddr> pool_bases_;
  CapabilityToken return_token_{0};
  PhysAddr cursor_ = 0;
  PhysAddr vec_base_ = 0;
};

}  // namespace northcape
