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

#include <tuple>
#include <vector>

#include "northcape/machine.hpp"
#include "northcape/rng.hpp"

using namespace northcape;

namespace {

struct Sys {
  Machine m;
  DeviceId cpu;

  explicit Sys(NtlbConfig ntlb = NtlbConfig{}) : m(make_cfg(ntlb)) {
    cpu = m.add_cpu("cpu0");
  }

  static MachineConfig make_cfg(NtlbConfig ntlb) {
    MachineConfig cfg;
    cfg.ntlb = ntlb;
    return cfg;
  }

  OpResult op1(Opcode op, CapabilityToken a, uint64_t len = 0,
               uint64_t off = 0, Permissions p = Permissions::all(),
               Restriction r = Restriction::none()) {
    OpRequest req;
    req.op = op;
    req.a = a;
    req.len = len;
    req.off = off;
    req.p = p;
    req.r = r;
    return m.op(cpu, req);
  }

  AccessContext rd() { return m.context_for(cpu, AccessKind::Read, false); }

  // Both paths on the same machine state; resolve() is stateless.
  void check_equiv(CapabilityToken t, const AccessContext& ctx) {
    auto cached = m.ntlb().cached_resolve(t, ctx);
    auto plain = m.resolver().resolve(t, ctx);
    REQUIRE(cached.ok() == plain.ok());
    if (cached.ok()) {
      CHECK(cached.value().window_base == plain.value().window_base);
      CHECK(cached.value().window_len == plain.value().window_len);
      CHECK(cached.value().perms == plain.value().perms);
      CHECK(cached.value().restriction == plain.value().restriction);
    } else {
      CHECK(cached.error() == plain.error());
    }
  }
};

}  // namespace

TEST_CASE("ntlb: fresh machine has zeroed counters") {
  Sys s;
  const CacheStats& st = s.m.ntlb().stats();
  CHECK(st.l1_hits == 0);
  CHECK(st.l1_misses == 0);
  CHECK(st.l2_hits == 0);
  CHECK(st.l2_misses == 0);
  CHECK(st.stale_revalidations == 0);
}

TEST_CASE("ntlb: repeated access hits L1 with an identical result") {
  Sys s;
  auto d = s.op1(Opcode::Create, kRootToken, 0x100);
  REQUIRE(d.status == OpStatus::Ok);

  auto first = s.m.ntlb().cached_resolve(d.out, s.rd());
  REQUIRE(first.ok());
  uint64_t hits = s.m.ntlb().stats().l1_hits;
  auto second = s.m.ntlb().cached_resolve(d.out, s.rd());
  REQUIRE(second.ok());
  CHECK(s.m.ntlb().stats().l1_hits == hits + 1);
  CHECK(second.value().window_base == first.value().window_base);
  CHECK(second.value().window_len == first.value().window_len);

  // k accesses -> k-1 hits.
  Sys fresh;
  auto d2 = fresh.op1(Opcode::Create, kRootToken, 0x100);
  for (int i = 0; i < 10; ++i) {
    REQUIRE(fresh.m.ntlb().cached_resolve(d2.out, fresh.rd()).ok());
  }
  CHECK(fresh.m.ntlb().stats().l1_hits == 9);

  // N distinct first accesses -> N L1 misses.
  Sys multi;
  std::vector<CapabilityToken> toks;
  for (int i = 0; i < 8; ++i) {
    toks.push_back(multi.op1(Opcode::Create, kRootToken, 0x40).out);
  }
  uint64_t misses = multi.m.ntlb().stats().l1_misses;
  CHECK(misses == 0);
  for (auto t : toks) REQUIRE(multi.m.ntlb().cached_resolve(t, multi.rd()).ok());
  CHECK(multi.m.ntlb().stats().l1_misses == 8);
}

TEST_CASE("ntlb: wrong nonce misses L1 and faults like the resolver") {
  Sys s;
  auto d = s.op1(Opcode::Create, kRootToken, 0x100);
  REQUIRE(s.m.ntlb().cached_resolve(d.out, s.rd()).ok());
  auto dec = decode_token(d.out).value();
  CapabilityToken forged =
      encode_token(*dec.type, dec.nonce ^ 1, dec.id, 0).value();
  s.check_equiv(forged, s.rd());
}

TEST_CASE("ntlb: single-entry ops evict only their touched ids") {
  Sys s;
  auto a = s.op1(Opcode::Create, kRootToken, 0x100);
  auto b = s.op1(Opcode::Create, kRootToken, 0x100);
  REQUIRE(b.status == OpStatus::Ok);
  REQUIRE(s.m.ntlb().cached_resolve(a.out, s.rd()).ok());
  REQUIRE(s.m.ntlb().cached_resolve(b.out, s.rd()).ok());

  // restrict(a) evicts a's lines; b still hits.
  OpRequest req;
  req.op = Opcode::Restrict;
  req.a = a.out;
  req.p = Permissions::of(Permissions::kR | Permissions::kW | Permissions::kL |
                          Permissions::kI | Permissions::kCD |
                          Permissions::kCT);
  REQUIRE(s.m.op(s.cpu, req).status == OpStatus::Ok);

  uint64_t hits = s.m.ntlb().stats().l1_hits;
  uint64_t miss = s.m.ntlb().stats().l1_misses;
  REQUIRE(s.m.ntlb().cached_resolve(b.out, s.rd()).ok());
  CHECK(s.m.ntlb().stats().l1_hits == hits + 1);
  REQUIRE(s.m.ntlb().cached_resolve(a.out, s.rd()).ok());
  CHECK(s.m.ntlb().stats().l1_misses == miss + 1);
  s.check_equiv(a.out, s.rd());
}

TEST_CASE("ntlb: lock empties L1 and taints L2; revalidation counts") {
  Sys s;
  auto d = s.op1(Opcode::Create, kRootToken, 0x100);
  auto unrelated = s.op1(Opcode::Create, kRootToken, 0x100);
  REQUIRE(unrelated.status == OpStatus::Ok);
  REQUIRE(s.m.ntlb().cached_resolve(unrelated.out, s.rd()).ok());
  CHECK(s.m.ntlb().l2_contains(decode_token(unrelated.out).value().id));

  auto view = s.op1(Opcode::Derive, d.out, 0x40, 0x20);
  auto l = s.op1(Opcode::Lock, view.out);
  REQUIRE(l.status == OpStatus::Ok);

  // Next access to the unrelated capability revalidates and still succeeds.
  uint64_t reval = s.m.ntlb().stats().stale_revalidations;
  auto r = s.m.ntlb().cached_resolve(unrelated.out, s.rd());
  REQUIRE(r.ok());
  CHECK(s.m.ntlb().stats().stale_revalidations >= reval + 1);
  s.check_equiv(unrelated.out, s.rd());
}

TEST_CASE("ntlb: no stale success through caches across lock/revoke") {
  Sys s;
  auto d = s.op1(Opcode::Create, kRootToken, 0x100);
  auto sibling = s.op1(Opcode::Derive, d.out, 0x40, 0x00);
  auto view = s.op1(Opcode::Derive, d.out, 0x40, 0x20);
  REQUIRE(view.status == OpStatus::Ok);

  // Warm every path.
  REQUIRE(s.m.ntlb().cached_resolve(d.out, s.rd()).ok());
  REQUIRE(s.m.ntlb().cached_resolve(sibling.out, s.rd()).ok());
  REQUIRE(s.m.ntlb().cached_resolve(view.out, s.rd()).ok());

  auto l = s.op1(Opcode::Lock, view.out);
  REQUIRE(l.status == OpStatus::Ok);

  // Every overlapping non-holder path must fault Locked, cached or not.
  for (auto t : {d.out, sibling.out, view.out}) {
    auto r = s.m.ntlb().cached_resolve(t, s.rd());
    REQUIRE(!r.ok());
    CHECK(r.error() == Fault::Locked);
    s.check_equiv(t, s.rd());
  }
  // The holder works through the cache and can be warmed.
  REQUIRE(s.m.ntlb().cached_resolve(l.out, s.rd()).ok());
  REQUIRE(s.m.ntlb().cached_resolve(l.out, s.rd()).ok());

  // After warming the holder path, direct-entry accesses must still fault.
  for (auto t : {d.out, sibling.out, view.out}) {
    auto r = s.m.ntlb().cached_resolve(t, s.rd());
    REQUIRE(!r.ok());
    CHECK(r.error() == Fault::Locked);
  }

  // Unlock restores pre-lock outcomes.
  REQUIRE(s.op1(Opcode::Drop, l.out).flag);
  for (auto t : {d.out, sibling.out, view.out}) {
    CHECK(s.m.ntlb().cached_resolve(t, s.rd()).ok());
    s.check_equiv(t, s.rd());
  }

  // Revoke: warmed descendants never succeed afterwards.
  auto child = s.op1(Opcode::Derive, d.out, 0x20, 0x00);
  REQUIRE(s.m.ntlb().cached_resolve(child.out, s.rd()).ok());
  auto rv = s.op1(Opcode::Revoke, d.out);
  REQUIRE(rv.status == OpStatus::Ok);
  auto dead = s.m.ntlb().cached_resolve(child.out, s.rd());
  REQUIRE(!dead.ok());
  CHECK(dead.error() == Fault::InvalidParent);
  auto dead2 = s.m.ntlb().cached_resolve(d.out, s.rd());
  REQUIRE(!dead2.ok());
  CHECK(dead2.error() == Fault::InvalidToken);
}

TEST_CASE("ntlb: entries without cacheable_tlb never appear in L2") {
  Sys s;
  Permissions no_ct = Permissions::of(Permissions::kAll & ~Permissions::kCT);
  auto d = s.op1(Opcode::Create, kRootToken, 0x100, 0, no_ct);
  REQUIRE(d.status == OpStatus::Ok);
  for (int i = 0; i < 4; ++i) {
    REQUIRE(s.m.ntlb().cached_resolve(d.out, s.rd()).ok());
  }
  CHECK(!s.m.ntlb().l2_contains(decode_token(d.out).value().id));
  // Still correct through L1.
  s.check_equiv(d.out, s.rd());
}

TEST_CASE("ntlb: restrict shrink on a parent with children stays coherent") {
  Sys s;
  auto d = s.op1(Opcode::Create, kRootToken, 0x100);
  auto i1 = s.op1(Opcode::Derive, d.out, 0x100, 0);
  auto i2 = s.op1(Opcode::Derive, i1.out, 0x100, 0);
  REQUIRE(i2.status == OpStatus::Ok);

  // Warm the grandchild through both cache levels.
  REQUIRE(s.m.ntlb().cached_resolve(i2.out, s.rd()).ok());
  REQUIRE(s.m.ntlb().cached_resolve(i2.out, s.rd()).ok());

  // Shrink the middle capability; the grandchild's effective window changes.
  OpRequest req;
  req.op = Opcode::Restrict;
  req.a = i1.out;
  req.p = Permissions::all();
  req.off_plus = 0x50;
  req.len_minus = 0;
  REQUIRE(s.m.op(s.cpu, req).status == OpStatus::Ok);

  auto r = s.m.ntlb().cached_resolve(i2.out, s.rd());
  REQUIRE(r.ok());
  CHECK(r.value().window_base == 0x50);
  CHECK(r.value().window_len == 0xB0);
  s.check_equiv(i2.out, s.rd());
}

TEST_CASE("ntlb: equivalence over random traffic at many geometries") {
  std::vector<NtlbConfig> geometries;
  std::vector<std::tuple<uint32_t, uint32_t, uint32_t>> geos = {
      {1u, 1u, 1u}, {2u, 8u, 2u}, {16u, 512u, 8u}, {4u, 64u, 64u},
      {32u, 512u, 512u}};
  for (auto [l1, l2, assoc] : geos) {
    NtlbConfig c;
    c.l1i_entries = l1;
    c.l1d_entries = l1;
    c.l2_entries = l2;
    c.l2_assoc = assoc;
    geometries.push_back(c);
  }
  for (const NtlbConfig& geo : geometries) {
    Sys s(geo);
    Rng rng(0xD1CE + geo.l2_entries);
    std::vector<CapabilityToken> tokens{kRootToken};
    for (int step = 0; step < 3000; ++step) {
      CapabilityToken t = tokens[rng.below(tokens.size())];
      switch (rng.below(6)) {
        case 0: {
          auto r = s.op1(Opcode::Create, t, 1 + rng.below(0x80));
          if (r.status == OpStatus::Ok) tokens.push_back(r.out);
          break;
        }
        case 1: {
          auto r = s.op1(Opcode::Derive, t, 1 + rng.below(0x40),
                         rng.below(0x20));
          if (r.status == OpStatus::Ok) tokens.push_back(r.out);
          break;
        }
        case 2: {
          auto r = s.op1(Opcode::Lock, t);
          if (r.status == OpStatus::Ok) tokens.push_back(r.out);
          break;
        }
        case 3:
          s.op1(Opcode::Drop, t);
          break;
        case 4: {
          auto r = s.op1(Opcode::Revoke, t);
          if (r.status == OpStatus::Ok) tokens.push_back(r.out);
          break;
        }
        default:
          break;
      }
      // A couple of accesses, both paths compared.
      for (int a = 0; a < 2; ++a) {
        CapabilityToken at = tokens[rng.below(tokens.size())];
        AccessContext ctx = s.rd();
        ctx.access = rng.chance(1, 2) ? AccessKind::Read : AccessKind::Write;
        s.check_equiv(at, ctx);
      }
      if (tokens.size() > 64) {
        tokens.erase(tokens.begin() + 1 + rng.below(tokens.size() - 1));
      }
    }
  }
}

TEST_CASE("ntlb: l2 integrity invariant on non-stale hits") {
  // Sampled form: after random warm-up, every cached entered-resolution
  // equals a fresh resolver walk at that instant.
  Sys s;
  Rng rng(0xFACE);
  std::vector<CapabilityToken> tokens{kRootToken};
  for (int step = 0; step < 500; ++step) {
    CapabilityToken t = tokens[rng.below(tokens.size())];
    auto c = s.op1(Opcode::Create, t, 1 + rng.below(0x40));
    if (c.status == OpStatus::Ok) tokens.push_back(c.out);
    auto d = s.op1(Opcode::Derive, t, 1 + rng.below(0x20), rng.below(8));
    if (d.status == OpStatus::Ok) tokens.push_back(d.out);
    for (int a = 0; a < 3; ++a) {
      s.check_equiv(tokens[rng.below(tokens.size())], s.rd());
    }
  }
}
