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

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace northcape {

using PhysAddr = uint64_t;
using CapId = uint64_t;
using SubsystemId = uint32_t;
using DeviceId = uint16_t;
using Nonce = uint16_t;

/// Access permission bits of a capability. R/W/X mirror paging permissions;
/// L gates the lock operation, I gates use from interrupt regimes, CD/CT are
/// the data/TLB cacheability bits.
struct Permissions {
  uint8_t bits = 0;

  static constexpr uint8_t kR = 1 << 0;
  static constexpr uint8_t kW = 1 << 1;
  static constexpr uint8_t kX = 1 << 2;
  static constexpr uint8_t kL = 1 << 3;
  static constexpr uint8_t kI = 1 << 4;
  static constexpr uint8_t kCD = 1 << 5;
  static constexpr uint8_t kCT = 1 << 6;
  static constexpr uint8_t kAll = 0x7F;

  constexpr bool r() const { return bits & kR; }
  constexpr bool w() const { return bits & kW; }
  constexpr bool x() const { return bits & kX; }
  constexpr bool lockable() const { return bits & kL; }
  constexpr bool irq_accessible() const { return bits & kI; }
  constexpr bool cacheable_data() const { return bits & kCD; }
  constexpr bool cacheable_tlb() const { return bits & kCT; }

  constexpr bool subset_of(Permissions other) const {
    return (bits & ~other.bits) == 0;
  }
  constexpr Permissions operator&(Permissions o) const {
    return Permissions{static_cast<uint8_t>(bits & o.bits)};
  }
  constexpr Permissions operator|(Permissions o) const {
    return Permissions{static_cast<uint8_t>(bits | o.bits)};
  }
  constexpr bool operator==(const Permissions&) const = default;

  static constexpr Permissions none() { return Permissions{0}; }
  static constexpr Permissions all() { return Permissions{kAll}; }
  static constexpr Permissions of(uint8_t b) { return Permissions{b}; }
};

/// Parses permission strings like "rwxli" / "RW" (d = cacheable_data,
/// t = cacheable_tlb). Unknown letters are ignored.
inline Permissions perms_from_string(std::string_view s) {
  Permissions p;
  for (char c : s) {
    switch (c) {
      case 'r': case 'R': p.bits |= Permissions::kR; break;
      case 'w': case 'W': p.bits |= Permissions::kW; break;
      case 'x': case 'X': p.bits |= Permissions::kX; break;
      case 'l': case 'L': p.bits |= Permissions::kL; break;
      case 'i': case 'I': p.bits |= Permissions::kI; break;
      case 'd': case 'D': p.bits |= Permissions::kCD; break;
      case 't': case 'T': p.bits |= Permissions::kCT; break;
      default: break;
    }
  }
  return p;
}

inline std::string perms_to_string(Permissions p) {
  std::string s;
  if (p.r()) s += 'r';
  if (p.w()) s += 'w';
  if (p.x()) s += 'x';
  if (p.lockable()) s += 'l';
  if (p.irq_accessible()) s += 'i';
  if (p.cacheable_data()) s += 'd';
  if (p.cacheable_tlb()) s += 't';
  if (s.empty()) s = "-";
  return s;
}

enum class RestrictionKind : uint8_t {
  None = 0,
  DeviceInterpreted = 1,
  SubsystemIdBound = 2,
  SubsystemIdSet = 3,
};

/// Per-capability usage restriction. The two subsystem kinds carry a
/// (device, subsystem) pair packed as device(16) | subsystem(32) | zero(16);
/// DeviceInterpreted carries an opaque 64-bit payload forwarded to the device.
struct Restriction {
  RestrictionKind kind = RestrictionKind::None;
  DeviceId device = 0;
  SubsystemId subsystem = 0;
  uint64_t raw = 0;  // DeviceInterpreted payload only

  static constexpr Restriction none() { return Restriction{}; }
  static constexpr Restriction device_interpreted(uint64_t payload) {
    return Restriction{RestrictionKind::DeviceInterpreted, 0, 0, payload};
  }
  static constexpr Restriction bound(DeviceId d, SubsystemId s) {
    return Restriction{RestrictionKind::SubsystemIdBound, d, s, 0};
  }
  static constexpr Restriction id_set(DeviceId d, SubsystemId s) {
    return Restriction{RestrictionKind::SubsystemIdSet, d, s, 0};
  }

  constexpr uint64_t payload() const {
    if (kind == RestrictionKind::DeviceInterpreted) return raw;
    if (kind == RestrictionKind::None) return 0;
    return (uint64_t(device) << 48) | (uint64_t(subsystem) << 16);
  }

  /// Strictness ordering used by create: None < DeviceInterpreted <
  /// SubsystemIdBound/SubsystemIdSet.
  constexpr int rank() const {
    switch (kind) {
      case RestrictionKind::None: return 0;
      case RestrictionKind::DeviceInterpreted: return 1;
      default: return 2;
    }
  }

  constexpr bool operator==(const Restriction&) const = default;
};

inline std::string restriction_to_string(const Restriction& r) {
  switch (r.kind) {
    case RestrictionKind::None: return "none";
    case RestrictionKind::DeviceInterpreted:
      return "devint:" + std::to_string(r.raw);
    case RestrictionKind::SubsystemIdBound:
      return "bound:" + std::to_string(r.device) + ":" +
             std::to_string(r.subsystem);
    case RestrictionKind::SubsystemIdSet:
      return "idset:" + std::to_string(r.device) + ":" +
             std::to_string(r.subsystem);
  }
  return "?";
}

/// Fault kinds produced by token resolution and bus accesses.
enum class Fault : uint8_t {
  Malformed,
  InvalidToken,
  InvalidParent,
  RestrictionViolation,
  Locked,
  PermissionDenied,
  OutOfBounds,
  CmtOverlap,
  IrqInaccessible,
  NotEntryPoint,
};

inline const char* fault_name(Fault f) {
  switch (f) {
    case Fault::Malformed: return "Malformed";
    case Fault::InvalidToken: return "InvalidToken";
    case Fault::InvalidParent: return "InvalidParent";
    case Fault::RestrictionViolation: return "RestrictionViolation";
    case Fault::Locked: return "Locked";
    case Fault::PermissionDenied: return "PermissionDenied";
    case Fault::OutOfBounds: return "OutOfBounds";
    case Fault::CmtOverlap: return "CmtOverlap";
    case Fault::IrqInaccessible: return "IrqInaccessible";
    case Fault::NotEntryPoint: return "NotEntryPoint";
  }
  return "?";
}

enum class AccessKind : uint8_t { Read, Write, Execute, Meta };

/// Interrupt regime as seen by the protection checks. The machine's Nmi
/// regime maps onto Irq here.
enum class Regime : uint8_t { Normal, Irq };

/// Minimal value-or-error holder used on all fallible paths.
template <typename T, typename E>
class Result {
 public:
  Result(T v) : v_(std::move(v)) {}
  Result(E e) : v_(std::move(e)) {}

  bool ok() const { return std::holds_alternative<T>(v_); }
  explicit operator bool() const { return ok(); }

  const T& value() const { return std::get<T>(v_); }
  T& value() { return std::get<T>(v_); }
  const E& error() const { return std::get<E>(v_); }

 private:
  std::variant<T, E> v_;
};

struct Unit {};

template <typename E>
using StatusResult = Result<Unit, E>;

}  // namespace northcape
