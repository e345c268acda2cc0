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

#include <map>
#include <optional>
#include <sstream>
#include <vector>

#include "northcape/machine.hpp"

namespace northcape {

enum class AllocError : uint8_t {
  NotDirect,
  OutOfMemory,
  TableFull,
  UnknownToken,
  FreeWhileShared,
  ArenaFull,
  TooLarge,
  OpFailed,
};

inline const char* alloc_error_name(AllocError e) {
  switch (e) {
    case AllocError::NotDirect: return "NotDirect";
    case AllocError::OutOfMemory: return "OutOfMemory";
    case AllocError::TableFull: return "TableFull";
    case AllocError::UnknownToken: return "UnknownToken";
    case AllocError::FreeWhileShared: return "FreeWhileShared";
    case AllocError::ArenaFull: return "ArenaFull";
    case AllocError::TooLarge: return "TooLarge";
    case AllocError::OpFailed: return "OpFailed";
  }
  return "?";
}

struct MallocOpts {
  bool lockable = false;
  bool zeroed = false;
};

/// The remote slab allocator. Holds only the direct capabilities it was
/// given and drives everything through the operations port and ordinary bus
/// accesses on its own device, so it runs as an unprivileged subsystem.
///
/// Layout of an allocation: [header chunk (64 B) | payload direct], with an
/// indirect capability of exactly the requested size handed out over the
/// payload. Free chunks are single directs starting with a free header.
/// Search indexes are mirrored in allocator-private maps; the in-segment
/// headers are authoritative for audits.
class HeapAllocator {
 public:
  static constexpr uint64_t kHeaderSize = 64;
  static constexpr uint64_t kMinChunk = 64;
  static constexpr uint64_t kWordAlign = 8;
  static constexpr uint64_t kFreeMagic = 0x4E43465245454843ull;   // "NCFREEHC"
  static constexpr uint64_t kAllocMagic = 0x4E43414C4C4F4343ull;  // "NCALLOCC"

  HeapAllocator(Machine& m, DeviceId dev) : m_(m), dev_(dev) {}

  /// Takes ownership of a direct capability as (additional) heap. The input
  /// entry is consumed by a full-length create; the allocator keeps the
  /// fresh direct.
  StatusResult<AllocError> heap_init(CapabilityToken direct) {
    OpResult info = inspect(direct);
    if (info.status != OpStatus::Ok || info.partial) {
      return AllocError::UnknownToken;
    }
    if (info.length < kHeaderSize + kMinChunk) return AllocError::OutOfMemory;
    OpRequest rq;
    rq.op = Opcode::Create;
    rq.a = direct;
    rq.len = info.length;
    rq.p = info.perms;
    rq.r = info.restriction;
    OpResult owned = m_.op(dev_, rq);
    if (owned.status == OpStatus::NotDirect) return AllocError::NotDirect;
    if (owned.status != OpStatus::Ok) return AllocError::OpFailed;
    if (chunk_perms_.bits == 0) {
      chunk_perms_ = info.perms;
      chunk_restriction_ = info.restriction;
    }
    heap_bytes_ += info.length;
    insert_free(owned.out, info.base, info.length);
    return Unit{};
  }

  Result<CapabilityToken, AllocError> malloc(uint64_t size, MallocOpts opts = {}) {
    if (size == 0) size = 1;
    uint64_t payload = std::max(align_up(size), kMinChunk);
    uint64_t need = kHeaderSize + payload;

    // Best-fit: smallest chunk that fits, lowest base on ties.
    auto it = free_by_size_.lower_bound({need, 0});
    if (it == free_by_size_.end()) return AllocError::OutOfMemory;
    FreeChunk chunk = it->second;
    erase_free(chunk);

    // Absorb remainders too small to become a chunk of their own.
    bool absorb = chunk.len - need < kHeaderSize + kMinChunk;
    if (absorb) payload = chunk.len - kHeaderSize;

    OpRequest rq;
    rq.op = Opcode::Create;
    rq.a = chunk.token;
    rq.len = kHeaderSize;
    rq.p = chunk_perms_;
    rq.r = chunk_restriction_;
    OpResult header = m_.op(dev_, rq);
    if (header.status != OpStatus::Ok) {
      insert_free(chunk.token, chunk.base, chunk.len);
      return status_of(header.status);
    }

    Permissions payload_perms = chunk_perms_;
    if (!opts.lockable) {
      payload_perms.bits &= ~Permissions::kL;
    }
    rq.a = chunk.token;  // rebased remainder
    rq.len = payload;
    rq.p = payload_perms;
    OpResult pay = m_.op(dev_, rq);
    if (pay.status != OpStatus::Ok) {
      // Roll back: merge the header back onto the remainder.
      OpResult back = merge2(header.out, chunk.token, chunk_perms_);
      if (back.status == OpStatus::Ok) {
        insert_free(back.out, chunk.base, chunk.len);
      }
      return status_of(pay.status);
    }

    if (!absorb) {
      // Tail survives under the old chunk token, rebased past the payload.
      insert_free(chunk.token, chunk.base + need, chunk.len - need);
    }

    OpRequest dr;
    dr.op = Opcode::Derive;
    dr.a = pay.out;
    dr.len = size;
    dr.off = 0;
    Permissions hand = payload_perms;
    hand.bits &= ~Permissions::kL;
    dr.p = hand;
    OpResult ind = m_.op(dev_, dr);
    if (ind.status != OpStatus::Ok) return status_of(ind.status);

    if (opts.zeroed) {
      std::vector<uint8_t> zeros(payload, 0);
      m_.mem_write(dev_, pay.out, zeros);
    }

    Allocation rec;
    rec.header = header.out;
    rec.payload_direct = pay.out;
    rec.payload_indirect = ind.out;
    rec.base = chunk.base;
    rec.payload_len = payload;
    rec.requested = size;
    write_alloc_header(rec);
    allocated_.emplace(ind.out.raw, rec);
    by_payload_.emplace(pay.out.raw, ind.out.raw);
    return ind.out;
  }

  StatusResult<AllocError> free(CapabilityToken indirect) {
    auto it = allocated_.find(indirect.raw);
    if (it == allocated_.end()) return AllocError::UnknownToken;
    Allocation rec = it->second;

    OpRequest dr;
    dr.op = Opcode::Drop;
    dr.a = indirect;
    OpResult dropped = m_.op(dev_, dr);
    if (dropped.status != OpStatus::Ok) return AllocError::OpFailed;
    if (!dropped.flag) return AllocError::FreeWhileShared;

    // Freed memory is overwritten before it returns to the pool.
    std::vector<uint8_t> zeros(rec.payload_len, 0);
    m_.mem_write(dev_, rec.payload_direct, zeros);

    release(rec);
    allocated_.erase(it);
    by_payload_.erase(rec.payload_direct.raw);
    return Unit{};
  }

  /// Crash recovery: revoke the payload direct (zeroing it and orphaning
  /// every client capability), then return the bytes to the pool.
  StatusResult<AllocError> reclaim(CapabilityToken payload_direct) {
    auto pit = by_payload_.find(payload_direct.raw);
    if (pit == by_payload_.end()) return AllocError::UnknownToken;
    Allocation rec = allocated_.find(pit->second)->second;

    OpRequest rv;
    rv.op = Opcode::Revoke;
    rv.a = rec.payload_direct;
    rv.p = chunk_perms_;
    rv.r = chunk_restriction_;
    OpResult fresh = m_.op(dev_, rv);
    if (fresh.status != OpStatus::Ok) return AllocError::OpFailed;

    // Reap the orphaned hand-out if the client left no children behind.
    OpRequest dr;
    dr.op = Opcode::Drop;
    dr.a = rec.payload_indirect;
    m_.op(dev_, dr);

    allocated_.erase(pit->second);
    by_payload_.erase(pit);
    rec.payload_direct = fresh.out;
    release(rec);
    return Unit{};
  }

  struct Allocation {
    CapabilityToken header{0};
    CapabilityToken payload_direct{0};
    CapabilityToken payload_indirect{0};
    PhysAddr base = 0;  // header base
    uint64_t payload_len = 0;
    uint64_t requested = 0;
  };

  const std::map<uint64_t, Allocation>& allocations() const {
    return allocated_;
  }

  uint64_t free_bytes() const {
    uint64_t n = 0;
    for (const auto& [base, c] : free_by_base_) n += c.len;
    return n;
  }

  uint64_t allocated_bytes() const {
    uint64_t n = 0;
    for (const auto& [k, a] : allocated_) n += kHeaderSize + a.payload_len;
    return n;
  }

  uint64_t heap_bytes() const { return heap_bytes_; }
  size_t free_chunk_count() const { return free_by_base_.size(); }

  uint64_t largest_free() const {
    if (free_by_size_.empty()) return 0;
    return free_by_size_.rbegin()->first.first;
  }

  std::string stats_dump() const {
    std::ostringstream os;
    os << "alloc.heap_bytes=" << heap_bytes_ << "\n";
    os << "alloc.free_bytes=" << free_bytes() << "\n";
    os << "alloc.free_chunks=" << free_chunk_count() << "\n";
    os << "alloc.largest_free=" << largest_free() << "\n";
    os << "alloc.live_allocations=" << allocated_.size() << "\n";
    return os.str();
  }

  /// Cross-checks the in-segment headers (authoritative) against the
  /// private maps. Returns false on any mismatch.
  bool audit() {
    for (const auto& [key, rec] : allocated_) {
      auto h = read_header(rec.header);
      if (!h) return false;
      if ((*h)[0] != kAllocMagic) return false;
      if ((*h)[1] != rec.payload_len) return false;
      if ((*h)[2] != rec.payload_direct.raw) return false;
      if ((*h)[3] != rec.payload_indirect.raw) return false;
      if ((*h)[4] != rec.requested) return false;
    }
    for (const auto& [base, c] : free_by_base_) {
      auto h = read_header(c.token);
      if (!h) return false;
      if ((*h)[0] != kFreeMagic) return false;
      if ((*h)[1] != c.len) return false;
      if ((*h)[2] != c.base) return false;
    }
    return true;
  }

 private:
  struct FreeChunk {
    CapabilityToken token{0};
    PhysAddr base = 0;
    uint64_t len = 0;
  };

  static uint64_t align_up(uint64_t v) {
    return (v + kWordAlign - 1) & ~(kWordAlign - 1);
  }

  AllocError status_of(OpStatus s) {
    return s == OpStatus::TableFull ? AllocError::TableFull
                                    : AllocError::OpFailed;
  }

  OpResult inspect(CapabilityToken t) {
    OpRequest rq;
    rq.op = Opcode::Inspect;
    rq.a = t;
    return m_.op(dev_, rq);
  }

  OpResult merge2(CapabilityToken a, CapabilityToken b, Permissions p) {
    OpRequest rq;
    rq.op = Opcode::Merge;
    rq.a = a;
    rq.b = b;
    rq.p = p;
    rq.r = chunk_restriction_;
    return m_.op(dev_, rq);
  }

  // Merge header and payload back into one chunk, coalesce with free
  // neighbors, and insert the result.
  void release(const Allocation& rec) {
    OpResult merged = merge2(rec.header, rec.payload_direct, chunk_perms_);
    if (merged.status != OpStatus::Ok) return;  // audit() will flag leaks
    FreeChunk cur{merged.out, rec.base, kHeaderSize + rec.payload_len};

    // One merge per side.
    auto next = free_by_base_.find(cur.base + cur.len);
    if (next != free_by_base_.end()) {
      FreeChunk n = next->second;
      OpResult r = merge2(cur.token, n.token, chunk_perms_);
      if (r.status == OpStatus::Ok) {
        erase_free(n);
        cur = FreeChunk{r.out, cur.base, cur.len + n.len};
      }
    }
    auto prev = free_by_base_.lower_bound(cur.base);
    if (prev != free_by_base_.begin()) {
      --prev;
      FreeChunk p = prev->second;
      if (p.base + p.len == cur.base) {
        OpResult r = merge2(p.token, cur.token, chunk_perms_);
        if (r.status == OpStatus::Ok) {
          erase_free(p);
          cur = FreeChunk{r.out, p.base, p.len + cur.len};
        }
      }
    }
    insert_free(cur.token, cur.base, cur.len);
  }

  void insert_free(CapabilityToken tok, PhysAddr base, uint64_t len) {
    FreeChunk c{tok, base, len};
    free_by_base_[base] = c;
    free_by_size_[{len, base}] = c;
    write_free_header(c);
  }

  void erase_free(const FreeChunk& c) {
    free_by_base_.erase(c.base);
    free_by_size_.erase({c.len, c.base});
  }

  void write_free_header(const FreeChunk& c) {
    write_header(c.token, {kFreeMagic, c.len, c.base, 0, 0});
  }

  void write_alloc_header(const Allocation& rec) {
    write_header(rec.header, {kAllocMagic, rec.payload_len,
                              rec.payload_direct.raw,
                              rec.payload_indirect.raw, rec.requested});
  }

  void write_header(CapabilityToken t, std::array<uint64_t, 5> words) {
    std::vector<uint8_t> bytes(kHeaderSize, 0);
    for (size_t w = 0; w < words.size(); ++w) {
      for (int i = 0; i < 8; ++i) {
        bytes[w * 8 + i] = uint8_t(words[w] >> (8 * i));
      }
    }
    m_.mem_write(dev_, t, bytes);
  }

  std::optional<std::array<uint64_t, 5>> read_header(CapabilityToken t) {
    auto bytes = m_.mem_read(dev_, t, kHeaderSize);
    if (!bytes.ok()) return std::nullopt;
    std::array<uint64_t, 5> words{};
    for (size_t w = 0; w < words.size(); ++w) {
      for (int i = 7; i >= 0; --i) {
        words[w] = (words[w] << 8) | bytes.value()[w * 8 + i];
      }
    }
    return words;
  }

  Machine& m_;
  DeviceId dev_;
  Permissions chunk_perms_;
  Restriction chunk_restriction_;
  uint64_t heap_bytes_ = 0;
  std::map<PhysAddr, FreeChunk> free_by_base_;
  std::map<std::pair<uint64_t, PhysAddr>, FreeChunk> free_by_size_;
  std::map<uint64_t, Allocation> allocated_;       // indirect token -> record
  std::map<uint64_t, uint64_t> by_payload_;        // payload token -> indirect
};

/// Per-subsystem arena: a capability over a contiguous region cut into
/// equal chunks tracked by a bitmap; allocation derives an exact-size
/// capability over the first free chunk.
class LocalArena {
 public:
  LocalArena(Machine& m, DeviceId dev, CapabilityToken arena,
             uint64_t chunk_size)
      : m_(m), dev_(dev), arena_(arena), chunk_size_(chunk_size) {
    OpRequest rq;
    rq.op = Opcode::Inspect;
    rq.a = arena;
    OpResult info = m_.op(dev_, rq);
    if (info.status == OpStatus::Ok && !info.partial && chunk_size > 0) {
      base_ = info.base;
      chunks_ = info.length / chunk_size;
    }
    used_.assign(chunks_, false);
  }

  Result<CapabilityToken, AllocError> alloc(uint64_t size) {
    if (size == 0) size = 1;
    if (size > chunk_size_) return AllocError::TooLarge;
    size_t i = 0;
    while (i < chunks_ && used_[i]) ++i;
    if (i == chunks_) return AllocError::ArenaFull;
    OpRequest rq;
    rq.op = Opcode::Derive;
    rq.a = arena_;
    rq.len = size;
    rq.off = i * chunk_size_;
    rq.p = hand_perms();
    OpResult r = m_.op(dev_, rq);
    if (r.status != OpStatus::Ok) return AllocError::OpFailed;
    used_[i] = true;
    return r.out;
  }

  StatusResult<AllocError> free(CapabilityToken t) {
    // Map the token back to its chunk via the inspected physical base.
    OpRequest rq;
    rq.op = Opcode::Inspect;
    rq.a = t;
    OpResult info = m_.op(dev_, rq);
    if (info.status != OpStatus::Ok || info.base < base_) {
      return AllocError::UnknownToken;
    }
    uint64_t rel = info.base - base_;
    uint64_t idx = rel / chunk_size_;
    if (idx >= chunks_ || rel % chunk_size_ != 0 || !used_[idx]) {
      return AllocError::UnknownToken;
    }
    OpRequest dr;
    dr.op = Opcode::Drop;
    dr.a = t;
    OpResult dropped = m_.op(dev_, dr);
    if (dropped.status != OpStatus::Ok) return AllocError::UnknownToken;
    if (!dropped.flag) return AllocError::FreeWhileShared;
    used_[idx] = false;  // no zeroing for local frees
    return Unit{};
  }

  size_t free_chunks() const {
    size_t n = 0;
    for (bool u : used_) n += u ? 0 : 1;
    return n;
  }

 private:
  Permissions hand_perms() const {
    return Permissions::of(Permissions::kR | Permissions::kW |
                           Permissions::kCD | Permissions::kCT);
  }

  Machine& m_;
  DeviceId dev_;
  CapabilityToken arena_;
  uint64_t chunk_size_;
  PhysAddr base_ = 0;
  size_t chunks_ = 0;
  std::vector<bool> used_;
};

}  // namespace northcape
