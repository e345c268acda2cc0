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

#include <json.hpp>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "northcape/allocator.hpp"
#include "northcape/loader.hpp"
#include "northcape/machine.hpp"

namespace northcape {

using nlohmann::json;

struct ScenarioError {
  std::string message;
};

struct RunOptions {
  bool no_cache = false;
  std::optional<uint64_t> seed;
  std::optional<uint32_t> l1_size;
  std::optional<uint32_t> l2_size;
  std::optional<uint32_t> l2_assoc;
  uint32_t spin_limit = 0;
};

struct RunOutcome {
  int exit_code = 0;  // 0 pass, 1 assert failed, 2 parse error
  std::string error;
  std::string trace;
  std::string stats;
};

namespace scenario_detail {

inline std::vector<uint8_t> parse_hex_bytes(const std::string& s) {
  std::vector<uint8_t> out;
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  for (size_t i = 0; i + 1 < s.size(); i += 2) {
    int hi = nibble(s[i]), lo = nibble(s[i + 1]);
    if (hi < 0 || lo < 0) throw ScenarioError{"bad hex string: " + s};
    out.push_back(uint8_t(hi << 4 | lo));
  }
  return out;
}

inline uint64_t parse_u64(const json& v, const char* what) {
  if (v.is_number_unsigned() || v.is_number_integer()) {
    return v.get<uint64_t>();
  }
  if (v.is_string()) {
    const std::string& s = v.get<std::string>();
    try {
      return std::stoull(s, nullptr, 0);
    } catch (...) {
    }
  }
  throw ScenarioError{std::string("expected number for ") + what};
}

inline SegmentKind parse_segment_kind(const std::string& s) {
  if (s == "text") return SegmentKind::Text;
  if (s == "data") return SegmentKind::Data;
  if (s == "rodata") return SegmentKind::Rodata;
  if (s == "bss") return SegmentKind::Bss;
  throw ScenarioError{"unknown segment kind: " + s};
}

}  // namespace scenario_detail

/// Parses one subsystem image manifest (see docs/image-format.md).
inline SubsystemImage parse_image(const json& doc) {
  using scenario_detail::parse_hex_bytes;
  using scenario_detail::parse_segment_kind;
  using scenario_detail::parse_u64;

  SubsystemImage img;
  img.name = doc.at("name").get<std::string>();
  if (doc.contains("init_priority")) {
    img.init_priority = doc["init_priority"].get<int>();
  }
  if (doc.contains("init")) img.init_symbol = doc["init"].get<std::string>();
  for (const json& s : doc.value("segments", json::array())) {
    Segment seg;
    seg.kind = parse_segment_kind(s.at("kind").get<std::string>());
    seg.size = parse_u64(s.at("size"), "segment size");
    seg.perms = perms_from_string(s.value("perms", "rw"));
    if (s.contains("bytes")) {
      seg.bytes = parse_hex_bytes(s["bytes"].get<std::string>());
    }
    img.segments.push_back(std::move(seg));
  }
  for (const json& e : doc.value("exports", json::array())) {
    Export ex;
    ex.symbol = e.at("symbol").get<std::string>();
    ex.segment = parse_segment_kind(e.value("segment", "text"));
    ex.offset = parse_u64(e.value("offset", json(0)), "export offset");
    ex.is_call = e.value("kind", "call") == std::string("call");
    if (!ex.is_call) ex.data_len = parse_u64(e.at("length"), "export length");
    img.exports.push_back(std::move(ex));
  }
  for (const json& i : doc.value("imports", json::array())) {
    img.imports.push_back(i.get<std::string>());
  }
  for (const json& f : doc.value("fixups", json::array())) {
    Fixup fx;
    fx.segment = parse_segment_kind(f.value("segment", "data"));
    fx.offset = parse_u64(f.at("offset"), "fixup offset");
    fx.symbol = f.at("symbol").get<std::string>();
    img.fixups.push_back(std::move(fx));
  }
  return img;
}

/// Executes one scenario script end to end. See docs/scenario-format.md for
/// the step vocabulary.
class ScenarioRunner {
 public:
  RunOutcome run(const json& doc, const RunOptions& opts) {
    RunOutcome out;
    try {
      build_machine(doc, opts);
      run_boot(doc);
      for (const json& step : doc.value("steps", json::array())) {
        ++step_index_;
        exec_step(step);
        if (failed_) break;
      }
    } catch (const ScenarioError& e) {
      out.exit_code = 2;
      out.error = e.message;
      return out;
    } catch (const json::exception& e) {
      out.exit_code = 2;
      out.error = e.what();
      return out;
    }
    out.exit_code = failed_ ? 1 : 0;
    out.error = fail_message_;
    out.trace = m_->trace_text();
    out.stats = collect_stats();
    return out;
  }

  Machine* machine() { return m_.get(); }

 private:
  void build_machine(const json& doc, const RunOptions& opts) {
    MachineConfig cfg;
    const json& c = doc.value("config", json::object());
    if (c.contains("memory_size")) {
      cfg.memory_size = scenario_detail::parse_u64(c["memory_size"], "memory_size");
    }
    if (c.contains("cmt_slots")) {
      cfg.cmt_slots = uint32_t(scenario_detail::parse_u64(c["cmt_slots"], "cmt_slots"));
    }
    if (c.contains("seed")) {
      cfg.seed = scenario_detail::parse_u64(c["seed"], "seed");
    }
    if (c.contains("timer_cause")) {
      cfg.timer_cause = uint32_t(scenario_detail::parse_u64(c["timer_cause"], "timer_cause"));
    }
    if (c.contains("irq_causes")) {
      cfg.irq_causes = uint32_t(scenario_detail::parse_u64(c["irq_causes"], "irq_causes"));
    }
    if (c.contains("l1i")) cfg.ntlb.l1i_entries = c["l1i"].get<uint32_t>();
    if (c.contains("l1d")) cfg.ntlb.l1d_entries = c["l1d"].get<uint32_t>();
    if (c.contains("l2")) cfg.ntlb.l2_entries = c["l2"].get<uint32_t>();
    if (c.contains("l2_assoc")) cfg.ntlb.l2_assoc = c["l2_assoc"].get<uint32_t>();
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.l1_size) {
      cfg.ntlb.l1i_entries = *opts.l1_size;
      cfg.ntlb.l1d_entries = *opts.l1_size;
    }
    if (opts.l2_size) cfg.ntlb.l2_entries = *opts.l2_size;
    if (opts.l2_assoc) cfg.ntlb.l2_assoc = *opts.l2_assoc;
    cfg.use_cache = !opts.no_cache;
    spin_limit_ = opts.spin_limit;

    m_ = std::make_unique<Machine>(cfg);
    tokens_["root"] = kRootToken;

    const json& devices = doc.value("devices", json::array());
    if (devices.empty()) {
      device_ids_["cpu0"] = m_->add_cpu("cpu0");
    }
    for (const json& d : devices) {
      std::string name = d.at("name").get<std::string>();
      std::string kind = d.value("kind", "cpu");
      if (kind == "cpu") {
        device_ids_[name] = m_->add_cpu(name);
      } else if (kind == "dma") {
        SubsystemId sub = uint32_t(
            scenario_detail::parse_u64(d.value("subsystem", json(0)), "subsystem"));
        device_ids_[name] = m_->add_dma(name, sub);
      } else {
        throw ScenarioError{"unknown device kind: " + kind};
      }
    }
  }

  void run_boot(const json& doc) {
    if (!doc.contains("boot")) return;
    const json& b = doc["boot"];
    boot_cfg_ = BootConfig{};
    for (const json& img : b.value("images", json::array())) {
      boot_cfg_.images.push_back(parse_image(img));
    }
    for (auto it = b.value("vector", json::object()).begin();
         it != b.value("vector", json::object()).end(); ++it) {
      boot_cfg_.vector[uint32_t(std::stoul(it.key()))] =
          it.value().get<std::string>();
    }
    if (b.contains("heap")) {
      boot_cfg_.heap_image = b["heap"].at("image").get<std::string>();
      boot_cfg_.heap_bytes =
          scenario_detail::parse_u64(b["heap"].at("bytes"), "heap bytes");
    }
    if (b.contains("scratch_bytes")) {
      boot_cfg_.scratch_bytes =
          scenario_detail::parse_u64(b["scratch_bytes"], "scratch_bytes");
    }
    if (b.contains("pool_frames")) {
      boot_cfg_.pools.frames = b["pool_frames"].get<uint32_t>();
    }
    if (b.contains("start")) boot_cfg_.start = b["start"].get<std::string>();

    auto h = Loader::boot(*m_, boot_cfg_);
    if (!h.ok()) {
      throw ScenarioError{std::string("boot failed: ") +
                          boot_error_name(h.error())};
    }
    sys_ = std::make_unique<SystemHandle>(h.value());
    for (const auto& [name, tok] : sys_->symbols) tokens_[name] = tok;

    if (b.value("trapdoor", false)) {
      auto t = Loader::trapdoor(*m_, *sys_, boot_cfg_);
      if (!t.ok()) {
        throw ScenarioError{std::string("trapdoor failed: ") +
                            boot_error_name(t.error())};
      }
    }
  }

  DeviceId dev_of(const json& step) {
    std::string name = step.value("dev", device_ids_.begin()->first);
    auto it = device_ids_.find(name);
    if (it == device_ids_.end()) {
      throw ScenarioError{"unknown device: " + name};
    }
    return it->second;
  }

  CapabilityToken token_of(const json& v) {
    if (v.is_object()) {
      CapabilityToken base = token_of(v.at("base"));
      uint64_t off = scenario_detail::parse_u64(v.value("offset", json(0)), "offset");
      auto t = with_offset(base, token_offset(base) + off);
      if (!t.ok()) throw ScenarioError{"token offset overflow"};
      return t.value();
    }
    std::string s = v.get<std::string>();
    if (!s.empty() && s[0] == '$') {
      auto it = tokens_.find(s.substr(1));
      if (it == tokens_.end()) throw ScenarioError{"unknown token: " + s};
      return it->second;
    }
    auto t = token_from_hex(s);
    if (!t) throw ScenarioError{"bad token literal: " + s};
    return *t;
  }

  CapabilityToken token_with_step_offset(const json& step) {
    CapabilityToken t = token_of(step.at("token"));
    if (step.contains("offset")) {
      uint64_t off = scenario_detail::parse_u64(step["offset"], "offset");
      auto moved = with_offset(t, token_offset(t) + off);
      if (!moved.ok()) throw ScenarioError{"token offset overflow"};
      t = moved.value();
    }
    return t;
  }

  Restriction restriction_of(const json& step) {
    if (!step.contains("restrict")) return Restriction::none();
    const json& r = step["restrict"];
    std::string kind = r.value("kind", "none");
    if (kind == "none") return Restriction::none();
    DeviceId dev = r.contains("device") ? dev_of_name(r["device"]) : 0;
    SubsystemId sub =
        uint32_t(scenario_detail::parse_u64(r.value("subsystem", json(0)), "subsystem"));
    if (kind == "bound") return Restriction::bound(dev, sub);
    if (kind == "idset") return Restriction::id_set(dev, sub);
    if (kind == "devint") {
      return Restriction::device_interpreted(
          scenario_detail::parse_u64(r.value("payload", json(0)), "payload"));
    }
    throw ScenarioError{"unknown restriction kind: " + kind};
  }

  DeviceId dev_of_name(const json& v) {
    std::string name = v.get<std::string>();
    auto it = device_ids_.find(name);
    if (it == device_ids_.end()) throw ScenarioError{"unknown device: " + name};
    return it->second;
  }

  static Opcode opcode_of(const std::string& s) {
    if (s == "create") return Opcode::Create;
    if (s == "merge") return Opcode::Merge;
    if (s == "derive") return Opcode::Derive;
    if (s == "clone") return Opcode::Clone;
    if (s == "lock") return Opcode::Lock;
    if (s == "drop") return Opcode::Drop;
    if (s == "revoke") return Opcode::Revoke;
    if (s == "inspect") return Opcode::Inspect;
    if (s == "restrict") return Opcode::Restrict;
    throw ScenarioError{"unknown opcode: " + s};
  }

  void exec_step(const json& step) {
    std::string what = step.at("do").get<std::string>();
    if (what == "op") return do_op(step);
    if (what == "read") return do_read(step);
    if (what == "write") return do_write(step);
    if (what == "fetch") return do_fetch(step);
    if (what == "interrupt") return do_interrupt(step);
    if (what == "mret") return do_mret(step);
    if (what == "zero_regs") return do_zero_regs(step);
    if (what == "reg_write") return do_reg_write(step);
    if (what == "reg_read") return do_reg_read(step);
    if (what == "irq_enable") return do_irq_enable(step);
    if (what == "nmi_mask") return do_nmi_mask(step);
    if (what == "set_subsystem") return do_set_subsystem(step);
    if (what == "read_random") return do_read_random(step);
    if (what == "heap_init") return do_heap_init(step);
    if (what == "malloc") return do_malloc(step);
    if (what == "free") return do_free(step);
    if (what == "reclaim") return do_reclaim(step);
    if (what == "pool_claim") return do_pool_claim(step);
    if (what == "pool_release") return do_pool_release(step);
    if (what == "assert") return do_assert(step);
    throw ScenarioError{"unknown step kind: " + what};
  }

  void do_op(const json& step) {
    OpRequest req;
    req.op = opcode_of(step.at("opcode").get<std::string>());
    req.a = token_of(step.at("a"));
    if (step.contains("b")) req.b = token_of(step["b"]);
    if (step.contains("len")) req.len = scenario_detail::parse_u64(step["len"], "len");
    if (step.contains("off")) req.off = scenario_detail::parse_u64(step["off"], "off");
    if (step.contains("off_plus")) {
      req.off_plus = scenario_detail::parse_u64(step["off_plus"], "off_plus");
    }
    if (step.contains("len_minus")) {
      req.len_minus = scenario_detail::parse_u64(step["len_minus"], "len_minus");
    }
    req.p = step.contains("perms")
                ? perms_from_string(step["perms"].get<std::string>())
                : Permissions::all();
    req.r = restriction_of(step);
    OpResult res = m_->op(dev_of(step), req);
    last_op_ = res;
    last_outcome_ = res.status == OpStatus::Ok
                        ? "ok"
                        : std::string("status:") + op_status_name(res.status);
    last_value_ = res.flag ? 1 : 0;
    if (res.status == OpStatus::Ok) {
      if (step.contains("save")) {
        tokens_[step["save"].get<std::string>()] = res.out;
      }
      if (step.contains("save2")) {
        tokens_[step["save2"].get<std::string>()] = res.out2;
      }
    }
  }

  void do_read(const json& step) {
    uint64_t len = scenario_detail::parse_u64(step.value("len", json(8)), "len");
    auto r = m_->mem_read(dev_of(step), token_with_step_offset(step), len);
    if (r.ok()) {
      last_outcome_ = "ok";
      last_bytes_ = r.value();
    } else {
      last_outcome_ = std::string("fault:") + fault_name(r.error());
      last_bytes_.clear();
    }
  }

  void do_write(const json& step) {
    std::vector<uint8_t> bytes;
    if (step.contains("bytes")) {
      bytes = scenario_detail::parse_hex_bytes(step["bytes"].get<std::string>());
    } else {
      uint64_t len = scenario_detail::parse_u64(step.value("len", json(8)), "len");
      uint8_t fill = uint8_t(scenario_detail::parse_u64(step.value("fill", json(0)), "fill"));
      bytes.assign(len, fill);
    }
    if (step.contains("token_value")) {
      CapabilityToken tv = token_of(step["token_value"]);
      bytes.resize(8);
      for (int i = 0; i < 8; ++i) bytes[i] = uint8_t(tv.raw >> (8 * i));
    }
    auto r = m_->mem_write(dev_of(step), token_with_step_offset(step), bytes);
    last_outcome_ =
        r.ok() ? "ok" : std::string("fault:") + fault_name(r.error());
  }

  void do_fetch(const json& step) {
    auto r = m_->fetch(dev_of(step), token_with_step_offset(step),
                       step.value("expect_call", false));
    if (r.ok()) {
      last_outcome_ = r.value().kind == FetchClass::SubsystemCall
                          ? "call"
                          : "plain";
      last_value_ = r.value().subsystem;
    } else {
      last_outcome_ = std::string("fault:") + fault_name(r.error());
    }
  }

  void do_interrupt(const json& step) {
    uint32_t cause = uint32_t(scenario_detail::parse_u64(step.at("cause"), "cause"));
    auto r = m_->raise_interrupt(dev_of(step), cause);
    if (r.ok()) {
      last_outcome_ = r.value() == IrqOutcome::Taken ? "taken" : "masked";
    } else {
      last_outcome_ = std::string("error:") + machine_error_name(r.error());
    }
  }

  void do_mret(const json& step) {
    auto r = m_->mret(dev_of(step));
    last_outcome_ =
        r.ok() ? "ok" : std::string("error:") + machine_error_name(r.error());
  }

  void do_zero_regs(const json& step) {
    m_->zero_registers(dev_of(step),
                       scenario_detail::parse_u64(step.value("mask", json("0xffffffffffffffff")),
                                 "mask"));
    last_outcome_ = "ok";
  }

  void do_reg_write(const json& step) {
    m_->reg_write(dev_of(step), uint32_t(scenario_detail::parse_u64(step.at("reg"), "reg")),
                  scenario_detail::parse_u64(step.at("value"), "value"));
    last_outcome_ = "ok";
  }

  void do_reg_read(const json& step) {
    last_value_ =
        m_->reg_read(dev_of(step), uint32_t(scenario_detail::parse_u64(step.at("reg"), "reg")));
    last_outcome_ = "ok";
  }

  void do_irq_enable(const json& step) {
    m_->set_irq_enable(dev_of(step), step.value("enable", true));
    last_outcome_ = "ok";
  }

  void do_nmi_mask(const json& step) {
    m_->set_nmi_mask(dev_of(step),
                     uint32_t(scenario_detail::parse_u64(step.at("cause"), "cause")));
    last_outcome_ = "ok";
  }

  void do_set_subsystem(const json& step) {
    Device& d = m_->device(dev_of(step));
    d.subsystem[size_t(d.regime)] =
        uint32_t(scenario_detail::parse_u64(step.at("subsystem"), "subsystem"));
    m_->trace_event("set_subsystem", d.port, "");
    last_outcome_ = "ok";
  }

  void do_read_random(const json& step) {
    (void)step;
    last_value_ = m_->read_random();
    last_outcome_ = "ok";
  }

  void ensure_heap(const json& step) {
    if (!heap_) heap_ = std::make_unique<HeapAllocator>(*m_, dev_of(step));
  }

  void do_heap_init(const json& step) {
    ensure_heap(step);
    auto r = heap_->heap_init(token_of(step.at("token")));
    last_outcome_ =
        r.ok() ? "ok" : std::string("error:") + alloc_error_name(r.error());
  }

  void do_malloc(const json& step) {
    ensure_heap(step);
    MallocOpts opts;
    opts.lockable = step.value("lockable", false);
    opts.zeroed = step.value("zeroed", false);
    auto r = heap_->malloc(scenario_detail::parse_u64(step.at("size"), "size"), opts);
    if (r.ok()) {
      last_outcome_ = "ok";
      if (step.contains("save")) {
        tokens_[step["save"].get<std::string>()] = r.value();
      }
    } else {
      last_outcome_ = std::string("error:") + alloc_error_name(r.error());
    }
  }

  void do_free(const json& step) {
    ensure_heap(step);
    auto r = heap_->free(token_of(step.at("token")));
    last_outcome_ =
        r.ok() ? "ok" : std::string("error:") + alloc_error_name(r.error());
  }

  void do_reclaim(const json& step) {
    ensure_heap(step);
    CapabilityToken indirect = token_of(step.at("token"));
    auto it = heap_->allocations().find(indirect.raw);
    if (it == heap_->allocations().end()) {
      last_outcome_ = std::string("error:") +
                      alloc_error_name(AllocError::UnknownToken);
      return;
    }
    auto r = heap_->reclaim(it->second.payload_direct);
    last_outcome_ =
        r.ok() ? "ok" : std::string("error:") + alloc_error_name(r.error());
  }

  LoadedSubsystem* subsystem_of(const json& step) {
    if (!sys_) throw ScenarioError{"no boot section"};
    std::string name = step.at("image").get<std::string>();
    for (auto& s : sys_->subsystems) {
      if (s.name == name) return &s;
    }
    throw ScenarioError{"unknown image: " + name};
  }

  void do_pool_claim(const json& step) {
    auto r = subsystem_of(step)->pool.claim(spin_limit_);
    if (r.ok()) {
      last_outcome_ = "ok";
      last_value_ = r.value();
    } else {
      last_outcome_ = "error:PoolExhausted";
    }
  }

  void do_pool_release(const json& step) {
    auto r = subsystem_of(step)->pool.release(
        uint32_t(scenario_detail::parse_u64(step.at("index"), "index")));
    last_outcome_ = r.ok() ? "ok"
                           : (r.error() == PoolError::DoubleRelease
                                  ? "error:DoubleRelease"
                                  : "error:BadIndex");
  }

  void do_assert(const json& step) {
    bool pass = true;
    std::string why;

    if (step.contains("outcome")) {
      std::string want = step["outcome"].get<std::string>();
      if (last_outcome_ != want) {
        pass = false;
        why = "outcome is '" + last_outcome_ + "', wanted '" + want + "'";
      }
    }
    if (pass && step.contains("value")) {
      uint64_t want = scenario_detail::parse_u64(step["value"], "value");
      if (last_value_ != want) {
        pass = false;
        why = "value is " + std::to_string(last_value_) + ", wanted " +
              std::to_string(want);
      }
    }
    if (pass && step.contains("bytes")) {
      auto want = scenario_detail::parse_hex_bytes(step["bytes"].get<std::string>());
      if (last_bytes_ != want) {
        pass = false;
        why = "read bytes differ";
      }
    }
    if (pass && step.contains("bytes_all")) {
      uint8_t want = uint8_t(scenario_detail::parse_u64(step["bytes_all"], "bytes_all"));
      for (uint8_t b : last_bytes_) {
        if (b != want) {
          pass = false;
          why = "read bytes not uniformly " + std::to_string(want);
          break;
        }
      }
    }
    if (pass && step.contains("mem")) {
      const json& mem = step["mem"];
      uint64_t addr = scenario_detail::parse_u64(mem.at("addr"), "addr");
      uint64_t len = scenario_detail::parse_u64(mem.value("len", json(1)), "len");
      uint8_t want = uint8_t(scenario_detail::parse_u64(mem.at("equals"), "equals"));
      for (uint64_t i = 0; i < len; ++i) {
        if (m_->memory()[addr + i] != want) {
          pass = false;
          why = "memory mismatch at " + std::to_string(addr + i);
          break;
        }
      }
    }
    if (pass && step.contains("subsystem")) {
      const json& s = step["subsystem"];
      Device& d = m_->device(dev_of_name(s.at("dev")));
      SubsystemId want = uint32_t(scenario_detail::parse_u64(s.at("equals"), "equals"));
      if (d.subsystem[size_t(d.regime)] != want) {
        pass = false;
        why = "active subsystem is " +
              std::to_string(d.subsystem[size_t(d.regime)]);
      }
    }
    if (pass && step.contains("regime")) {
      const json& s = step["regime"];
      Device& d = m_->device(dev_of_name(s.at("dev")));
      std::string want = s.at("equals").get<std::string>();
      std::string got = d.regime == CpuRegime::Normal
                            ? "normal"
                            : (d.regime == CpuRegime::Irq ? "irq" : "nmi");
      if (got != want) {
        pass = false;
        why = "regime is " + got;
      }
    }
    if (pass && step.contains("stats")) {
      std::string dump = collect_stats();
      for (auto it = step["stats"].begin(); it != step["stats"].end(); ++it) {
        uint64_t got = stat_value(dump, it.key());
        if (it.value().is_object()) {
          if (it.value().contains("min") &&
              got < scenario_detail::parse_u64(it.value()["min"], "min")) {
            pass = false;
          }
          if (it.value().contains("max") &&
              got > scenario_detail::parse_u64(it.value()["max"], "max")) {
            pass = false;
          }
        } else if (got != scenario_detail::parse_u64(it.value(), "stat")) {
          pass = false;
        }
        if (!pass) {
          why = "stat " + it.key() + " is " + std::to_string(got);
          break;
        }
      }
    }

    m_->trace_event("assert", dev_of(step),
                    pass ? "pass" : "FAIL " + why);
    if (!pass) {
      failed_ = true;
      fail_message_ =
          "assert failed at step " + std::to_string(step_index_) + ": " + why;
    }
  }

  uint64_t stat_value(const std::string& dump, const std::string& key) {
    std::istringstream in(dump);
    std::string line;
    while (std::getline(in, line)) {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      if (line.substr(0, eq) == key) {
        return std::stoull(line.substr(eq + 1));
      }
    }
    return 0;
  }

  std::string collect_stats() {
    std::string s = m_->stats_dump();
    if (heap_) s += heap_->stats_dump();
    return s;
  }

  std::unique_ptr<Machine> m_;
  std::unique_ptr<SystemHandle> sys_;
  std::unique_ptr<HeapAllocator> heap_;
  BootConfig boot_cfg_;
  std::map<std::string, DeviceId> device_ids_;
  std::map<std::string, CapabilityToken> tokens_;
  OpResult last_op_;
  std::string last_outcome_ = "none";
  uint64_t last_value_ = 0;
  std::vector<uint8_t> last_bytes_;
  uint32_t spin_limit_ = 0;
  size_t step_index_ = 0;
  bool failed_ = false;
  std::string fail_message_;
};

inline RunOutcome run_scenario_text(const std::string& text,
                                    const RunOptions& opts) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    RunOutcome out;
    out.exit_code = 2;
    out.error = e.what();
    return out;
  }
  ScenarioRunner runner;
  return runner.run(doc, opts);
}

}  // namespace northcape
