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

#include <array>
#include <cstdio>
#include <optional>

#include "northcape/common.hpp"

namespace northcape {

/// One of the four token layouts. The 64-bit token is always
/// header(2) | nonce(16) | id(id_bits) | offset(offset_bits), MSB first;
/// capability IDs are partitioned by type so the header can be validated
/// against the ID.
struct OffsetType {
  uint8_t code;         // 2-bit header value
  uint8_t offset_bits;  // 8, 16, 24 or 32
  uint8_t id_bits;      // 38, 30, 22 or 14
  CapId id_base;        // first capability ID of this type's partition

  constexpr uint64_t max_offset() const {
    return (uint64_t{1} << offset_bits) - 1;
  }
  constexpr bool operator==(const OffsetType&) const = default;
};

inline constexpr std::array<OffsetType, 4> kOffsetTypes = {{
    {0, 32, 14, 0},
    {1, 24, 22, CapId{1} << 14},
    {2, 16, 30, CapId{1} << 22},
    {3, 8, 38, CapId{1} << 30},
}};

inline constexpr CapId kIdSpaceEnd = CapId{1} << 38;

constexpr CapId partition_end(const OffsetType& ot) {
  return ot.code == 3 ? kIdSpaceEnd : kOffsetTypes[ot.code + 1].id_base;
}

constexpr bool id_in_partition(const OffsetType& ot, CapId id) {
  return id >= ot.id_base && id < partition_end(ot);
}

/// Partition owning `id`, or nullptr when the id is outside the 38-bit space.
constexpr const OffsetType* offset_type_of_id(CapId id) {
  for (const auto& ot : kOffsetTypes) {
    if (id_in_partition(ot, id)) return &ot;
  }
  return nullptr;
}

/// Smallest offset type whose offset range covers a segment of `len` bytes.
constexpr const OffsetType& offset_type_for_length(uint64_t len) {
  for (int i = 3; i >= 0; --i) {
    if ((uint64_t{1} << kOffsetTypes[i].offset_bits) >= len) {
      return kOffsetTypes[i];
    }
  }
  return kOffsetTypes[0];
}

struct CapabilityToken {
  uint64_t raw = 0;
  constexpr bool operator==(const CapabilityToken&) const = default;
};

/// The all-zero root token: header 0, nonce 0, id 0 -- a naive 32-bit
/// physical address is a valid offset into it.
inline constexpr CapabilityToken kRootToken{0};

enum class TokenError : uint8_t { IdOutOfPartition, OffsetOverflow, Malformed };

inline const char* token_error_name(TokenError e) {
  switch (e) {
    case TokenError::IdOutOfPartition: return "IdOutOfPartition";
    case TokenError::OffsetOverflow: return "OffsetOverflow";
    case TokenError::Malformed: return "Malformed";
  }
  return "?";
}

struct DecodedToken {
  const OffsetType* type;
  Nonce nonce;
  CapId id;  // global id (field value + id_base)
  uint64_t offset;
};

inline Result<CapabilityToken, TokenError> encode_token(const OffsetType& ot,
                                                        Nonce nonce, CapId id,
                                                        uint64_t offset) {
  if (!id_in_partition(ot, id)) return TokenError::IdOutOfPartition;
  if (offset > ot.max_offset()) return TokenError::OffsetOverflow;
  uint64_t id_field = (id - ot.id_base) & ((uint64_t{1} << ot.id_bits) - 1);
  uint64_t raw = (uint64_t{ot.code} << 62) | (uint64_t{nonce} << 46) |
                 (id_field << ot.offset_bits) | offset;
  return CapabilityToken{raw};
}

inline Result<DecodedToken, TokenError> decode_token(CapabilityToken t) {
  const OffsetType& ot = kOffsetTypes[t.raw >> 62];
  Nonce nonce = static_cast<Nonce>((t.raw >> 46) & 0xFFFF);
  uint64_t id_field =
      (t.raw >> ot.offset_bits) & ((uint64_t{1} << ot.id_bits) - 1);
  CapId id = ot.id_base + id_field;
  if (!id_in_partition(ot, id)) return TokenError::Malformed;
  uint64_t offset = t.raw & ot.max_offset();
  return DecodedToken{&ot, nonce, id, offset};
}

/// Replaces the offset field, refusing values that would carry into the id.
inline Result<CapabilityToken, TokenError> with_offset(CapabilityToken t,
                                                       uint64_t new_offset) {
  const OffsetType& ot = kOffsetTypes[t.raw >> 62];
  if (new_offset > ot.max_offset()) return TokenError::OffsetOverflow;
  return CapabilityToken{(t.raw & ~ot.max_offset()) | new_offset};
}

inline uint64_t token_offset(CapabilityToken t) {
  return t.raw & kOffsetTypes[t.raw >> 62].max_offset();
}

inline std::string token_to_hex(CapabilityToken t) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "0x%016llx",
                static_cast<unsigned long long>(t.raw));
  return buf;
}

inline std::optional<CapabilityToken> token_from_hex(std::string_view s) {
  if (s.size() < 3 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X')) {
    return std::nullopt;
  }
  uint64_t v = 0;
  for (char c : s.substr(2)) {
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
    else return std::nullopt;
    v = (v << 4) | uint64_t(d);
  }
  return CapabilityToken{v};
}

}  // namespace northcape
