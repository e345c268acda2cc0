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
#include <array>
#include <bit>
#include <optional>
#include <sstream>
#include <vector>

#include "northcape/common.hpp"
#include "northcape/rng.hpp"
#include "northcape/token.hpp"

namespace northcape {

enum class CapKind : uint8_t { Direct, Indirect, LockHolder };

inline const char* cap_kind_name(CapKind k) {
  switch (k) {
    case CapKind::Direct: return "direct";
    case CapKind::Indirect: return "indirect";
    case CapKind::LockHolder: return "lockholder";
  }
  return "?";
}

/// One capability metadata record. Lock-holder entries carry no bounds of
/// their own (base = length = 0); their window is the parent's.
struct CmtEntry {
  CapKind kind = CapKind::Direct;
  Nonce nonce = 0;
  CapId id = 0;
  PhysAddr base = 0;
  uint64_t length = 0;
  Permissions perms;
  Restriction restriction;
  CapabilityToken parent{0};  // Indirect / LockHolder only
  uint32_t refcount = 0;
  std::optional<CapId> locked_by;  // Direct only

  bool operator==(const CmtEntry&) const = default;
};

enum class CmtError : uint8_t { TableFull, NotLive };

struct CmtConfig {
  uint32_t slot_count = 1u << 13;
  uint32_t row_width = 64;  // bitmap bits per row
};

/// The Capability Metadata Table: a direct-access table with one-slot
/// buckets. The slot of an id is id - id_base(type-of-id), so a lookup is a
/// single table read; allocation probes a free-slot bitmap row by row with a
/// per-offset-type resume cursor.
class Cmt {
 public:
  explicit Cmt(const CmtConfig& cfg, uint64_t nonce_key0, uint64_t nonce_key1)
      : cfg_(cfg),
        slots_(cfg.slot_count),
        live_(cfg.slot_count, false),
        rows_((cfg.slot_count + cfg.row_width - 1) / cfg.row_width),
        bitmap_(rows_, 0),
        nonce_stream_(nonce_key0, nonce_key1) {
    for (size_t i = 0; i < cursors_.size(); ++i) {
      cursors_[i] = row_of(kOffsetTypes[i].id_base % cfg_.slot_count);
    }
  }

  uint32_t slot_count() const { return cfg_.slot_count; }
  uint32_t row_count() const { return rows_; }

  /// Installs the well-known root entry covering [0, space_len) at id 0 with
  /// nonce 0. Called once at machine reset.
  void install_root(uint64_t space_len, Permissions perms) {
    CmtEntry e;
    e.kind = CapKind::Direct;
    e.id = 0;
    e.nonce = 0;
    e.base = 0;
    e.length = space_len;
    e.perms = perms;
    slots_[0] = e;
    set_live(0, true);
    ++type_live_[0];
    high_water_[0] = std::max(high_water_[0], type_live_[0]);
    ++table_writes_;
  }

  Nonce next_nonce() { return static_cast<Nonce>(nonce_stream_.next()); }

  /// Finds a free slot for `ot`, stamps `entry` with the resulting id and a
  /// fresh nonce, and stores it. Detects a full table after at most
  /// row_count row reads.
  Result<CmtEntry, CmtError> allocate(const OffsetType& ot, CmtEntry entry) {
    uint32_t start_row = cursors_[ot.code];
    for (uint32_t i = 0; i < rows_; ++i) {
      uint32_t row = (start_row + i) % rows_;
      ++row_reads_;
      uint64_t occupied = bitmap_[row];
      uint64_t mask = row_mask(row);
      uint64_t free = ~occupied & mask;
      if (free == 0) continue;
      uint32_t bit = static_cast<uint32_t>(std::countr_zero(free));
      uint32_t slot = row * cfg_.row_width + bit;
      CapId id = ot.id_base + slot;
      if (!id_in_partition(ot, id)) continue;  // tiny partitions only
      entry.id = id;
      entry.nonce = next_nonce();
      slots_[slot] = entry;
      set_live(slot, true);
      ++table_writes_;
      cursors_[ot.code] = row;
      ++type_live_[ot.code];
      high_water_[ot.code] = std::max(high_water_[ot.code], type_live_[ot.code]);
      return entry;
    }
    return CmtError::TableFull;
  }

  /// Exactly one table read per call.
  std::optional<CmtEntry> lookup(CapId id) const {
    ++table_reads_;
    const OffsetType* ot = offset_type_of_id(id);
    if (ot == nullptr) return std::nullopt;
    uint64_t slot = id - ot->id_base;
    if (slot >= cfg_.slot_count) return std::nullopt;
    if (!live_[slot]) return std::nullopt;
    const CmtEntry& e = *slots_[slot];
    if (e.id != id) return std::nullopt;
    return e;
  }

  StatusResult<CmtError> update(CapId id, const CmtEntry& entry) {
    int64_t slot = live_slot(id);
    if (slot < 0) return CmtError::NotLive;
    slots_[slot] = entry;
    ++table_writes_;
    return Unit{};
  }

  /// Re-installs a previously removed entry into its (free) slot. Used to
  /// roll back multi-entry operations that fail after freeing their inputs.
  void reinstall(const CmtEntry& entry) {
    const OffsetType* ot = offset_type_of_id(entry.id);
    uint64_t slot = entry.id - ot->id_base;
    slots_[slot] = entry;
    if (!live_[slot]) {
      set_live(static_cast<uint32_t>(slot), true);
      ++type_live_[ot->code];
    }
    ++table_writes_;
  }

  StatusResult<CmtError> remove(CapId id) {
    int64_t slot = live_slot(id);
    if (slot < 0) return CmtError::NotLive;
    slots_[slot].reset();
    set_live(static_cast<uint32_t>(slot), false);
    --type_live_[offset_type_of_id(id)->code];
    ++table_writes_;
    return Unit{};
  }

  uint32_t occupancy() const { return occupancy_; }
  uint64_t table_reads() const { return table_reads_; }
  uint64_t table_writes() const { return table_writes_; }
  uint64_t row_reads() const { return row_reads_; }

  uint32_t bitmap_popcount() const {
    uint32_t n = 0;
    for (uint64_t w : bitmap_) n += static_cast<uint32_t>(std::popcount(w));
    return n;
  }

  /// Every live entry, for sweeps and audits (test/instrumentation surface;
  /// not part of the modeled hardware interface).
  std::vector<CmtEntry> live_entries() const {
    std::vector<CmtEntry> out;
    for (uint32_t s = 0; s < cfg_.slot_count; ++s) {
      if (live_[s]) out.push_back(*slots_[s]);
    }
    return out;
  }

  std::string stats_dump() const {
    std::ostringstream os;
    os << "cmt.occupancy=" << occupancy_ << "\n";
    os << "cmt.bitmap_popcount=" << bitmap_popcount() << "\n";
    os << "cmt.table_reads=" << table_reads_ << "\n";
    os << "cmt.table_writes=" << table_writes_ << "\n";
    os << "cmt.row_reads=" << row_reads_ << "\n";
    for (const auto& ot : kOffsetTypes) {
      os << "cmt.high_water.offset" << int(ot.offset_bits) << "="
         << high_water_[ot.code] << "\n";
    }
    return os.str();
  }

 private:
  uint32_t row_of(uint64_t slot) const {
    return static_cast<uint32_t>(slot / cfg_.row_width);
  }

  // Bits beyond slot_count in the last row are treated as occupied.
  uint64_t row_mask(uint32_t row) const {
    uint64_t base = uint64_t(row) * cfg_.row_width;
    uint64_t valid = cfg_.slot_count > base
                         ? std::min<uint64_t>(cfg_.row_width,
                                              cfg_.slot_count - base)
                         : 0;
    if (valid >= 64) return ~uint64_t{0};
    return (uint64_t{1} << valid) - 1;
  }

  void set_live(uint32_t slot, bool v) {
    uint32_t row = slot / cfg_.row_width;
    uint64_t bit = uint64_t{1} << (slot % cfg_.row_width);
    bool was = bitmap_[row] & bit;
    if (v && !was) ++occupancy_;
    if (!v && was) --occupancy_;
    if (v) bitmap_[row] |= bit;
    else bitmap_[row] &= ~bit;
    live_[slot] = v;
  }

  int64_t live_slot(CapId id) const {
    const OffsetType* ot = offset_type_of_id(id);
    if (ot == nullptr) return -1;
    uint64_t slot = id - ot->id_base;
    if (slot >= cfg_.slot_count || !live_[slot]) return -1;
    if (slots_[slot]->id != id) return -1;
    return static_cast<int64_t>(slot);
  }

  CmtConfig cfg_;
  std::vector<std::optional<CmtEntry>> slots_;
  std::vector<bool> live_;
  uint32_t rows_;
  std::vector<uint64_t> bitmap_;
  std::array<uint32_t, 4> cursors_{};
  std::array<uint32_t, 4> type_live_{};
  std::array<uint32_t, 4> high_water_{};
  CounterStream nonce_stream_;
  uint32_t occupancy_ = 0;
  mutable uint64_t table_reads_ = 0;
  uint64_t table_writes_ = 0;
  mutable uint64_t row_reads_ = 0;
};

}  // namespace northcape
