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

#include <doctest.h>

#include <vector>

#include "northcape/allocator.hpp"
#include "northcape/loader.hpp"

using namespace northcape;

namespace {

SubsystemImage make_image(const std::string& name, int prio = 100) {
  SubsystemImage img;
  img.name = name;
  img.init_priority = prio;
  Segment text;
  text.kind = SegmentKind::Text;
  text.size = 256;
  text.perms = perms_from_string("rxi");
  for (int i = 0; i < 16; ++i) text.bytes.push_back(uint8_t(0x90 + i));
  img.segments.push_back(text);
  Segment data;
  data.kind = SegmentKind::Data;
  data.size = 128;
  data.perms = perms_from_string("rw");
  img.segments.push_back(data);
  Export main_fn;
  main_fn.symbol = name + "_main";
  main_fn.segment = SegmentKind::Text;
  main_fn.offset = 0;
  main_fn.is_call = true;
  img.exports.push_back(main_fn);
  return img;
}

struct BootRig {
  Machine m{MachineConfig{}};
  DeviceId cpu;
  BootConfig cfg;

  BootRig() { cpu = m.add_cpu("cpu0"); }

  Result<SystemHandle, BootError> boot() { return Loader::boot(m, cfg); }
};

}  // namespace

TEST_CASE("loader: topological order and fixup wiring") {
  BootRig r;
  SubsystemImage a = make_image("aaa");
  SubsystemImage b = make_image("bbb");
  // b imports a's call; a token slot in b.data receives it.
  b.imports.push_back("aaa_main");
  Fixup fx;
  fx.segment = SegmentKind::Data;
  fx.offset = 0;
  fx.symbol = "aaa_main";
  b.fixups.push_back(fx);
  // Declaration order deliberately backwards.
  r.cfg.images = {b, a};

  auto h = r.boot();
  REQUIRE(h.ok());
  const SystemHandle& sys = h.value();

  // a loads first (exporter), so it gets sid 1.
  CHECK(sys.find("aaa")->sid == 1);
  CHECK(sys.find("bbb")->sid == 2);

  // The fixup slot contains a's entry token; readable via b's data view and
  // resolvable under b's identity.
  CapabilityToken slot_view = sys.symbols.at("bbb.data");
  r.m.device(r.cpu).subsystem[0] = 2;
  auto bytes = r.m.mem_read(r.cpu, slot_view, 8);
  REQUIRE(bytes.ok());
  uint64_t raw = 0;
  for (int i = 7; i >= 0; --i) raw = (raw << 8) | bytes.value()[i];
  CHECK(CapabilityToken{raw} == sys.symbols.at("aaa.aaa_main"));

  // Fetching it at offset 0 performs the subsystem call into a.
  auto call = r.m.fetch(r.cpu, CapabilityToken{raw}, true);
  REQUIRE(call.ok());
  CHECK(call.value().kind == FetchClass::SubsystemCall);
  CHECK(call.value().subsystem == 1);
}

TEST_CASE("loader: import cycles are refused") {
  BootRig r;
  SubsystemImage a = make_image("aaa");
  SubsystemImage b = make_image("bbb");
  a.imports.push_back("bbb_main");
  b.imports.push_back("aaa_main");
  r.cfg.images = {a, b};
  auto h = r.boot();
  REQUIRE(!h.ok());
  CHECK(h.error() == BootError::ImportCycle);
}

TEST_CASE("loader: unknown imports are refused") {
  BootRig r;
  SubsystemImage a = make_image("aaa");
  a.imports.push_back("nonexistent");
  r.cfg.images = {a};
  auto h = r.boot();
  REQUIRE(!h.ok());
  CHECK(h.error() == BootError::ImportUnresolved);
}

TEST_CASE("loader: mmio imports derive windows at the encoded address") {
  BootRig r;
  SubsystemImage a = make_image("drv");
  // A 64-byte window at 0x80000 (inside the root remainder, below the
  // vector region).
  a.imports.push_back("mmio_524288_64");
  Fixup fx;
  fx.segment = SegmentKind::Data;
  fx.offset = 8;
  fx.symbol = "mmio_524288_64";
  a.fixups.push_back(fx);
  r.cfg.images = {a};
  auto h = r.boot();
  REQUIRE(h.ok());

  CapabilityToken win = h.value().symbols.at("drv.import.mmio_524288_64");
  r.m.device(r.cpu).subsystem[0] = 1;
  // 64 bytes at 0xC0000 exactly.
  REQUIRE(r.m.mem_write(r.cpu, win, std::vector<uint8_t>(64, 0x5C)).ok());
  CHECK(r.m.memory()[524288] == 0x5C);
  CHECK(r.m.memory()[524288 + 63] == 0x5C);
  auto over = r.m.mem_write(r.cpu, win, std::vector<uint8_t>(65, 0));
  REQUIRE(!over.ok());
}

TEST_CASE("loader: segments are isolated between subsystems") {
  BootRig r;
  r.cfg.images = {make_image("one"), make_image("two")};
  auto h = r.boot();
  REQUIRE(h.ok());
  const SystemHandle& sys = h.value();

  // Subsystem 2 cannot use any of subsystem 1's private tokens.
  r.m.device(r.cpu).subsystem[0] = sys.find("two")->sid;
  for (const auto& [name, tok] : sys.find("one")->private_tokens) {
    auto res = r.m.mem_read(r.cpu, tok, 1);
    REQUIRE(!res.ok());
    CHECK(res.error() == Fault::RestrictionViolation);
  }
  // And vice versa.
  r.m.device(r.cpu).subsystem[0] = sys.find("one")->sid;
  for (const auto& [name, tok] : sys.find("two")->private_tokens) {
    CHECK(!r.m.mem_read(r.cpu, tok, 1).ok());
  }
  // Each subsystem can use its own segment views.
  CHECK(r.m.mem_read(r.cpu, sys.symbols.at("one.text"), 16).ok());
}

TEST_CASE("loader: init trampolines run in priority-within-topo order") {
  BootRig r;
  SubsystemImage a = make_image("aaa", 50);
  a.init_symbol = "aaa_main";
  SubsystemImage b = make_image("bbb", 10);
  b.init_symbol = "bbb_main";
  SubsystemImage c = make_image("ccc", 90);
  c.imports.push_back("bbb_main");  // c depends on b
  c.init_symbol = "ccc_main";
  r.cfg.images = {a, b, c};
  auto h = r.boot();
  REQUIRE(h.ok());
  // Load order: bbb (prio 10), aaa (prio 50), ccc (dependent).
  CHECK(h.value().find("bbb")->sid == 1);
  CHECK(h.value().find("aaa")->sid == 2);
  CHECK(h.value().find("ccc")->sid == 3);

  // The trace shows call/return pairs: into sid and back to 0.
  std::string trace = r.m.trace_text();
  CHECK(trace.find("-> sub=1") != std::string::npos);
  CHECK(trace.find("-> sub=0") != std::string::npos);
  // After boot the loader is back at subsystem 0.
  CHECK(r.m.device(r.cpu).subsystem[0] == 0);
}

TEST_CASE("loader: stack pools claim lowest free and detect exhaustion") {
  BootRig r;
  r.cfg.images = {make_image("app")};
  r.cfg.pools.frames = 4;
  auto h = r.boot();
  REQUIRE(h.ok());
  StackPool& pool = const_cast<LoadedSubsystem*>(h.value().find("app"))->pool;

  auto c0 = pool.claim();
  auto c1 = pool.claim();
  REQUIRE(c0.ok());
  REQUIRE(c1.ok());
  CHECK(c0.value() == 0);
  CHECK(c1.value() == 1);
  REQUIRE(pool.release(0).ok());
  auto c0b = pool.claim();
  REQUIRE(c0b.ok());
  CHECK(c0b.value() == 0);

  // Nested call chain app->other->app claims two distinct frames.
  auto n1 = pool.claim();
  REQUIRE(n1.ok());
  CHECK(n1.value() != c0b.value());

  // Exhaustion after N claims; spin limit just retries.
  pool.claim();
  auto exhausted = pool.claim(3);
  REQUIRE(!exhausted.ok());
  CHECK(exhausted.error() == PoolError::PoolExhausted);
  CHECK(pool.claim_attempts >= 4);

  auto dbl = pool.release(0);
  REQUIRE(dbl.ok());
  auto dbl2 = pool.release(0);
  REQUIRE(!dbl2.ok());
  CHECK(dbl2.error() == PoolError::DoubleRelease);

  // Frames are usable by the owning subsystem.
  r.m.device(r.cpu).subsystem[0] = 1;
  CHECK(r.m.mem_write(r.cpu, pool.frames[0],
                      std::vector<uint8_t>(16, 0xAB)).ok());
}

TEST_CASE("loader: trapdoor kills every subsystem-0 token") {
  BootRig r;
  SubsystemImage a = make_image("alloc");
  SubsystemImage b = make_image("app");
  b.imports.push_back("alloc_main");
  Fixup fx;
  fx.segment = SegmentKind::Data;
  fx.offset = 0;
  fx.symbol = "alloc_main";
  b.fixups.push_back(fx);
  a.init_symbol = "alloc_main";
  r.cfg.images = {a, b};
  r.cfg.heap_image = "alloc";
  r.cfg.heap_bytes = 0x10000;
  auto boot = r.boot();
  REQUIRE(boot.ok());
  SystemHandle sys = boot.value();

  REQUIRE(Loader::trapdoor(r.m, sys, r.cfg).ok());
  CHECK(sys.trapdoor_done);

  // Replaying every recorded subsystem-0 token under the loader's own
  // context yields faults only.
  r.m.device(r.cpu).subsystem[0] = 0;
  for (CapabilityToken t : sys.loader_tokens) {
    auto read = r.m.mem_read(r.cpu, t, 1);
    REQUIRE(!read.ok());
    auto exec = r.m.fetch(r.cpu, t);
    REQUIRE(!exec.ok());
  }

  // Derives from the root are refused (no permissions remain).
  OpRequest dr;
  dr.op = Opcode::Derive;
  dr.a = kRootToken;
  dr.len = 8;
  dr.off = 0;
  dr.p = Permissions::of(Permissions::kR);
  CHECK(r.m.op(r.cpu, dr).status == OpStatus::PermissionEscalation);

  // Subsystem entry tokens still work: the loaded set remains callable.
  auto call = r.m.fetch(r.cpu, sys.symbols.at("app.app_main"), true);
  REQUIRE(call.ok());
  CHECK(call.value().subsystem == sys.find("app")->sid);

  // Previously minted subsystem-bound capabilities still work too.
  r.m.device(r.cpu).subsystem[0] = sys.find("app")->sid;
  CHECK(r.m.mem_read(r.cpu, sys.symbols.at("app.text"), 16).ok());

  // The revoked scratch region became the allocator's heap.
  r.m.device(r.cpu).subsystem[0] = sys.find("alloc")->sid;
  HeapAllocator heap(r.m, r.cpu);
  REQUIRE(heap.heap_init(sys.heap_token).ok());
  REQUIRE(heap.heap_init(sys.trapdoor_heap).ok());
  CHECK(heap.heap_bytes() == 0x10000 + r.cfg.scratch_bytes);
  CHECK(heap.malloc(128).ok());

  // Idempotent.
  CHECK(Loader::trapdoor(r.m, sys, r.cfg).ok());
}

TEST_CASE("loader: timer tokens are write-only and subsystem-bound") {
  BootRig r;
  SubsystemImage app = make_image("app");
  r.cfg.images = {app};
  r.cfg.vector[3] = "app.app_main";
  r.cfg.vector[r.m.config().timer_cause] = "app.app_main";
  auto h = r.boot();
  REQUIRE(h.ok());
  CapabilityToken timer = h.value().symbols.at("app.timer");

  // The owning subsystem can re-register its stub (write), but not read.
  r.m.device(r.cpu).subsystem[0] = 1;
  CapabilityToken stub = h.value().symbols.at("app.app_main");
  std::vector<uint8_t> bytes(8);
  for (int i = 0; i < 8; ++i) bytes[i] = uint8_t(stub.raw >> (8 * i));
  REQUIRE(r.m.mem_write(r.cpu, timer, bytes).ok());
  auto rd = r.m.mem_read(r.cpu, timer, 8);
  REQUIRE(!rd.ok());
  CHECK(rd.error() == Fault::PermissionDenied);

  // Not IRQ-accessible: registering from an ISR is refused.
  REQUIRE(r.m.raise_interrupt(r.cpu, 3).ok());
  auto from_isr = r.m.mem_write(r.cpu, timer, bytes);
  REQUIRE(!from_isr.ok());
  CHECK(from_isr.error() == Fault::IrqInaccessible);
  REQUIRE(r.m.mret(r.cpu).ok());

  // A foreign subsystem cannot touch it.
  r.m.device(r.cpu).subsystem[0] = 99;
  CHECK(!r.m.mem_write(r.cpu, timer, bytes).ok());

  // The timer interrupt invokes the registered stub in the normal regime.
  r.m.device(r.cpu).subsystem[0] = 7;
  auto taken = r.m.raise_interrupt(r.cpu, r.m.config().timer_cause);
  REQUIRE(taken.ok());
  CHECK(taken.value() == IrqOutcome::Taken);
  CHECK(r.m.device(r.cpu).regime == CpuRegime::Normal);
  CHECK(r.m.device(r.cpu).subsystem[0] == 1);
}
