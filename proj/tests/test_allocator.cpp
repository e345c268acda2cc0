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

#include <algorithm>
#include <vector>

#include "northcape/allocator.hpp"
#include "northcape/rng.hpp"

using namespace northcape;

namespace {

struct Rig {
  Machine m;
  DeviceId cpu;
  HeapAllocator heap;
  CapabilityToken heap_cap{0};
  PhysAddr heap_base = 0;
  uint64_t heap_len = 0;

  explicit Rig(uint64_t heap_bytes = 1 << 20)
      : m(big_cfg()), cpu(m.add_cpu("cpu0")), heap(m, cpu) {
    OpRequest rq;
    rq.op = Opcode::Create;
    rq.a = kRootToken;
    rq.len = heap_bytes;
    rq.p = Permissions::all();
    auto r = m.op(cpu, rq);
    REQUIRE(r.status == OpStatus::Ok);
    heap_cap = r.out;
    heap_len = heap_bytes;
    OpRequest ins;
    ins.op = Opcode::Inspect;
    ins.a = heap_cap;
    heap_base = m.op(cpu, ins).base;
  }

  static MachineConfig big_cfg() {
    MachineConfig cfg;
    cfg.memory_size = uint64_t{4} << 20;
    return cfg;
  }

  OpResult inspect(CapabilityToken t) {
    OpRequest rq;
    rq.op = Opcode::Inspect;
    rq.a = t;
    return m.op(cpu, rq);
  }

  // Oracle: interval sweep over all live payload windows.
  void check_no_overlap() {
    std::vector<std::pair<PhysAddr, PhysAddr>> spans;
    for (const auto& [key, a] : heap.allocations()) {
      auto info = inspect(a.payload_indirect);
      REQUIRE(info.status == OpStatus::Ok);
      spans.push_back({info.base, info.base + info.length});
    }
    std::sort(spans.begin(), spans.end());
    for (size_t i = 1; i < spans.size(); ++i) {
      CHECK(spans[i - 1].second <= spans[i].first);
    }
  }

  // Oracle: free bytes + allocated bytes = heap bytes, at every step.
  void check_conservation() {
    CHECK(heap.free_bytes() + heap.allocated_bytes() == heap.heap_bytes());
  }
};

}  // namespace

TEST_CASE("allocator: heap_init produces a single free chunk") {
  Rig r;
  REQUIRE(r.heap.heap_init(r.heap_cap).ok());
  CHECK(r.heap.free_chunk_count() == 1);
  CHECK(r.heap.free_bytes() == (1 << 20));
  CHECK(r.heap.largest_free() == (1 << 20));
  CHECK(r.heap.audit());
}

TEST_CASE("allocator: heap_init refuses indirect capabilities") {
  Rig r;
  OpRequest dr;
  dr.op = Opcode::Derive;
  dr.a = r.heap_cap;
  dr.len = 0x1000;
  dr.off = 0;
  dr.p = Permissions::all();
  auto ind = r.m.op(r.cpu, dr);
  REQUIRE(ind.status == OpStatus::Ok);
  auto res = r.heap.heap_init(ind.out);
  REQUIRE(!res.ok());
  CHECK(res.error() == AllocError::NotDirect);
}

TEST_CASE("allocator: malloc hands out exactly the requested size") {
  Rig r;
  REQUIRE(r.heap.heap_init(r.heap_cap).ok());
  auto p = r.heap.malloc(17);
  REQUIRE(p.ok());
  auto info = r.inspect(p.value());
  CHECK(info.status == OpStatus::Ok);
  CHECK(info.length == 17);
  r.check_conservation();
  CHECK(r.heap.audit());

  // Too large fails without disturbing the heap.
  uint64_t before = r.heap.free_bytes();
  auto huge = r.heap.malloc(uint64_t{2} << 20);
  REQUIRE(!huge.ok());
  CHECK(huge.error() == AllocError::OutOfMemory);
  CHECK(r.heap.free_bytes() == before);
}

TEST_CASE("allocator: writes through the hand-out stay in bounds") {
  Rig r;
  REQUIRE(r.heap.heap_init(r.heap_cap).ok());
  auto p = r.heap.malloc(32, {.lockable = false, .zeroed = true});
  REQUIRE(p.ok());
  std::vector<uint8_t> data(32, 0xEE);
  REQUIRE(r.m.mem_write(r.cpu, p.value(), data).ok());
  std::vector<uint8_t> more(33, 0xEE);
  auto fail = r.m.mem_write(r.cpu, p.value(), more);
  REQUIRE(!fail.ok());
  CHECK(fail.error() == Fault::OutOfBounds);
}

TEST_CASE("allocator: free coalesces neighbors") {
  Rig r;
  REQUIRE(r.heap.heap_init(r.heap_cap).ok());
  auto a = r.heap.malloc(100);
  auto b = r.heap.malloc(100);
  REQUIRE(a.ok());
  REQUIRE(b.ok());
  CHECK(r.heap.free_chunk_count() == 1);
  REQUIRE(r.heap.free(a.value()).ok());
  CHECK(r.heap.free_chunk_count() == 2);
  REQUIRE(r.heap.free(b.value()).ok());
  // a, b and the tail coalesce back into one chunk.
  CHECK(r.heap.free_chunk_count() == 1);
  CHECK(r.heap.free_bytes() == (1 << 20));
  CHECK(r.heap.audit());
}

TEST_CASE("allocator: freed memory is zeroed before reuse") {
  Rig r;
  REQUIRE(r.heap.heap_init(r.heap_cap).ok());
  auto a = r.heap.malloc(64);
  REQUIRE(a.ok());
  auto info = r.inspect(a.value());
  std::vector<uint8_t> secret(64, 0x55);
  REQUIRE(r.m.mem_write(r.cpu, a.value(), secret).ok());
  REQUIRE(r.heap.free(a.value()).ok());
  for (uint64_t i = 0; i < 64; ++i) {
    CHECK(r.m.memory()[info.base + i] == 0);
  }
}

TEST_CASE("allocator: free of unknown or shared hand-outs is refused") {
  Rig r;
  REQUIRE(r.heap.heap_init(r.heap_cap).ok());
  auto bogus = r.heap.free(CapabilityToken{0x12345});
  REQUIRE(!bogus.ok());
  CHECK(bogus.error() == AllocError::UnknownToken);

  auto a = r.heap.malloc(64);
  REQUIRE(a.ok());
  OpRequest dr;
  dr.op = Opcode::Derive;
  dr.a = a.value();
  dr.len = 8;
  dr.off = 0;
  dr.p = Permissions::of(Permissions::kR);
  auto child = r.m.op(r.cpu, dr);
  REQUIRE(child.status == OpStatus::Ok);
  auto shared = r.heap.free(a.value());
  REQUIRE(!shared.ok());
  CHECK(shared.error() == AllocError::FreeWhileShared);
  // Dropping the child clears the way.
  OpRequest drop;
  drop.op = Opcode::Drop;
  drop.a = child.out;
  REQUIRE(r.m.op(r.cpu, drop).flag);
  CHECK(r.heap.free(a.value()).ok());
}

TEST_CASE("allocator: lockable allocations can be locked by the client") {
  Rig r;
  REQUIRE(r.heap.heap_init(r.heap_cap).ok());
  auto a = r.heap.malloc(64, {.lockable = true, .zeroed = false});
  REQUIRE(a.ok());
  OpRequest lk;
  lk.op = Opcode::Lock;
  lk.a = a.value();
  lk.p = Permissions::of(Permissions::kR | Permissions::kW);
  auto l = r.m.op(r.cpu, lk);
  REQUIRE(l.status == OpStatus::Ok);
  // Not lockable by default.
  auto b = r.heap.malloc(64);
  REQUIRE(b.ok());
  lk.a = b.value();
  CHECK(r.m.op(r.cpu, lk).status == OpStatus::NotLockable);
  // Reclaim ignores the client's lock.
  auto rec = r.heap.allocations().find(a.value().raw)->second;
  CHECK(r.heap.reclaim(rec.payload_direct).ok());
  r.check_conservation();
}

TEST_CASE("allocator: reclaim after a crash returns all bytes and orphans") {
  Rig r;
  REQUIRE(r.heap.heap_init(r.heap_cap).ok());
  auto a = r.heap.malloc(256);
  REQUIRE(a.ok());
  // The "client" derives children and crashes.
  std::vector<CapabilityToken> kids;
  for (int i = 0; i < 3; ++i) {
    OpRequest dr;
    dr.op = Opcode::Derive;
    dr.a = a.value();
    dr.len = 16;
    dr.off = uint64_t(i) * 16;
    dr.p = Permissions::of(Permissions::kR | Permissions::kW);
    auto k = r.m.op(r.cpu, dr);
    REQUIRE(k.status == OpStatus::Ok);
    kids.push_back(k.out);
  }
  std::vector<uint8_t> secret(256, 0x77);
  REQUIRE(r.m.mem_write(r.cpu, a.value(), secret).ok());

  auto rec = r.heap.allocations().find(a.value().raw)->second;
  REQUIRE(r.heap.reclaim(rec.payload_direct).ok());

  // Bytes are back and zeroed; children fault.
  CHECK(r.heap.free_bytes() == (1 << 20));
  auto ctx = r.m.context_for(r.cpu, AccessKind::Read, false);
  for (auto k : kids) {
    auto res = r.m.resolve(k, ctx);
    REQUIRE(!res.ok());
    CHECK(res.error() == Fault::InvalidParent);
  }
  // Double reclaim is refused.
  auto again = r.heap.reclaim(rec.payload_direct);
  REQUIRE(!again.ok());
  CHECK(again.error() == AllocError::UnknownToken);
  CHECK(r.heap.audit());
}

TEST_CASE("allocator: random workload keeps invariants at every step") {
  Rig r;
  REQUIRE(r.heap.heap_init(r.heap_cap).ok());
  Rng rng(0xA110C);
  std::vector<CapabilityToken> live;
  for (int step = 0; step < 10000; ++step) {
    bool do_alloc = live.empty() || rng.chance(3, 5);
    if (do_alloc) {
      auto p = r.heap.malloc(1 + rng.below(2000));
      if (p.ok()) live.push_back(p.value());
    } else {
      size_t i = rng.below(live.size());
      REQUIRE(r.heap.free(live[i]).ok());
      live.erase(live.begin() + i);
    }
    r.check_conservation();
    if (step % 500 == 0) r.check_no_overlap();
  }
  r.check_no_overlap();
  CHECK(r.heap.audit());
  // Drain: exactly the initial chunk remains.
  for (auto t : live) REQUIRE(r.heap.free(t).ok());
  CHECK(r.heap.free_chunk_count() == 1);
  CHECK(r.heap.free_bytes() == (1 << 20));
}

TEST_CASE("allocator: local arena allocates and reuses chunks") {
  Rig r;
  REQUIRE(r.heap.heap_init(r.heap_cap).ok());
  auto arena_mem = r.heap.malloc(1024);
  REQUIRE(arena_mem.ok());
  LocalArena arena(r.m, r.cpu, arena_mem.value(), 128);
  CHECK(arena.free_chunks() == 8);

  auto a = arena.alloc(100);
  REQUIRE(a.ok());
  auto b = arena.alloc(128);
  REQUIRE(b.ok());
  CHECK(arena.free_chunks() == 6);

  // a occupies chunk 0; freeing and reallocating reuses it.
  auto a_info = r.inspect(a.value());
  REQUIRE(arena.free(a.value()).ok());
  auto c = arena.alloc(5);
  REQUIRE(c.ok());
  auto c_info = r.inspect(c.value());
  CHECK(c_info.base == a_info.base);
  CHECK(c_info.length == 5);

  auto too_big = arena.alloc(129);
  REQUIRE(!too_big.ok());
  CHECK(too_big.error() == AllocError::TooLarge);

  // Exhaust: 6 remaining chunks then ArenaFull.
  for (int i = 0; i < 6; ++i) REQUIRE(arena.alloc(1).ok());
  auto full = arena.alloc(1);
  REQUIRE(!full.ok());
  CHECK(full.error() == AllocError::ArenaFull);

  auto bogus = arena.free(CapabilityToken{0xF00});
  REQUIRE(!bogus.ok());
  CHECK(bogus.error() == AllocError::UnknownToken);
}
