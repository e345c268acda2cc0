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

#include <set>
#include <vector>

#include "northcape/cmt.hpp"
#include "northcape/rng.hpp"

using namespace northcape;

namespace {

Cmt make_cmt(uint32_t slots = 1u << 13) {
  return Cmt(CmtConfig{slots, 64}, 0x1111, 0x2222);
}

CmtEntry direct_entry(PhysAddr base, uint64_t len) {
  CmtEntry e;
  e.kind = CapKind::Direct;
  e.base = base;
  e.length = len;
  e.perms = Permissions::all();
  return e;
}

}  // namespace

TEST_CASE("cmt: nonce stream is deterministic under a fixed seed") {
  Cmt a = make_cmt();
  Cmt b = make_cmt();
  for (int i = 0; i < 1000; ++i) CHECK(a.next_nonce() == b.next_nonce());

  Cmt c(CmtConfig{1u << 13, 64}, 0x3333, 0x4444);
  int differing = 0;
  Cmt d = make_cmt();
  for (int i = 0; i < 16; ++i) {
    if (c.next_nonce() != d.next_nonce()) ++differing;
  }
  CHECK(differing >= 12);  // different seeds diverge essentially immediately
}

TEST_CASE("cmt: nonce frequencies are uniform within 5 sigma") {
  Cmt cmt = make_cmt();
  constexpr uint32_t kPerValue = 16;
  constexpr uint64_t kDraws = uint64_t{1} << 20;  // 2^16 * 16
  std::vector<uint32_t> freq(1 << 16, 0);
  for (uint64_t i = 0; i < kDraws; ++i) ++freq[cmt.next_nonce()];
  // sigma = sqrt(N * p * (1-p)) ~= 4, so 5 sigma is +-20 around 16 (the
  // lower bound is vacuous).
  uint32_t max_freq = 0;
  for (uint32_t f : freq) max_freq = std::max(max_freq, f);
  CHECK(max_freq <= kPerValue + 20);
}

TEST_CASE("cmt: linear probing allocation from the partition cursor") {
  Cmt cmt = make_cmt();
  auto a = cmt.allocate(kOffsetTypes[0], direct_entry(0, 64));
  REQUIRE(a.ok());
  CHECK(a.value().id == 0);

  auto b = cmt.allocate(kOffsetTypes[0], direct_entry(64, 64));
  REQUIRE(b.ok());
  CHECK(b.value().id == 1);

  // slots 0..k-1 occupied -> id k
  for (CapId want = 2; want < 10; ++want) {
    auto e = cmt.allocate(kOffsetTypes[0], direct_entry(want * 64, 64));
    REQUIRE(e.ok());
    CHECK(e.value().id == want);
  }
}

TEST_CASE("cmt: full table detected in at most row_count row reads") {
  Cmt cmt = make_cmt(256);  // 4 rows
  for (int i = 0; i < 256; ++i) {
    auto r = cmt.allocate(kOffsetTypes[0], direct_entry(i * 8, 8));
    REQUIRE(r.ok());
  }
  uint64_t before = cmt.row_reads();
  auto r = cmt.allocate(kOffsetTypes[0], direct_entry(0, 8));
  REQUIRE(!r.ok());
  CHECK(r.error() == CmtError::TableFull);
  CHECK(cmt.row_reads() - before <= cmt.row_count());
}

TEST_CASE("cmt: lookup reads exactly one slot") {
  Cmt cmt = make_cmt();
  cmt.install_root(uint64_t{1} << 20, Permissions::all());
  auto root = cmt.lookup(0);
  REQUIRE(root.has_value());
  CHECK(root->base == 0);
  CHECK(root->length == (uint64_t{1} << 20));

  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    uint64_t before = cmt.table_reads();
    (void)cmt.lookup(rng.below(kIdSpaceEnd));
    CHECK(cmt.table_reads() - before == 1);
  }
}

TEST_CASE("cmt: lookup misses on unallocated ids and foreign-type slots") {
  Cmt cmt = make_cmt();
  auto a = cmt.allocate(kOffsetTypes[0], direct_entry(0, 64));
  REQUIRE(a.ok());
  CHECK(!cmt.lookup(a.value().id + 1).has_value());
  // Same slot, different partition: stored id disambiguates.
  CHECK(!cmt.lookup((CapId{1} << 14) + a.value().id).has_value());
}

TEST_CASE("cmt: update and remove") {
  Cmt cmt = make_cmt();
  auto a = cmt.allocate(kOffsetTypes[0], direct_entry(0, 64));
  REQUIRE(a.ok());
  CapId id = a.value().id;

  CmtEntry e = *cmt.lookup(id);
  e.length = 32;
  REQUIRE(cmt.update(id, e).ok());
  CHECK(cmt.lookup(id)->length == 32);

  REQUIRE(cmt.remove(id).ok());
  CHECK(!cmt.lookup(id).has_value());
  auto again = cmt.remove(id);
  REQUIRE(!again.ok());
  CHECK(again.error() == CmtError::NotLive);
  auto up = cmt.update(id, e);
  REQUIRE(!up.ok());
}

TEST_CASE("cmt: occupancy equals bitmap popcount and ids never collide") {
  Cmt cmt = make_cmt(512);
  Rng rng(17);
  std::set<CapId> live;
  for (int step = 0; step < 4000; ++step) {
    if (rng.chance(3, 5) || live.empty()) {
      const OffsetType& ot = kOffsetTypes[rng.below(4)];
      auto r = cmt.allocate(ot, direct_entry(step * 8, 8));
      if (r.ok()) {
        CHECK(live.insert(r.value().id).second);  // no double allocation
      }
    } else {
      auto it = live.begin();
      std::advance(it, rng.below(live.size()));
      REQUIRE(cmt.remove(*it).ok());
      live.erase(it);
    }
    CHECK(cmt.occupancy() == cmt.bitmap_popcount());
    CHECK(cmt.occupancy() == live.size());
  }
}
