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

namespace northcape {

inline constexpr uint64_t kSplitMixGamma = 0x9E3779B97F4A7C15ull;

/// splitmix64 step; used both for seed derivation and as the ARX mixing core.
inline uint64_t splitmix64_next(uint64_t& state) {
  uint64_t z = (state += kSplitMixGamma);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline constexpr uint64_t arx_mix(uint64_t x) {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Keyed 64-bit bijection: add/xor key material around two ARX rounds. Each
/// stage is invertible, so the whole map is a permutation of 2^64.
struct KeyedPermutation {
  uint64_t k0 = 0;
  uint64_t k1 = 0;

  constexpr uint64_t apply(uint64_t x) const {
    x = arx_mix(x + k0);
    x = arx_mix(x ^ k1);
    return x;
  }
};

/// Counter-mode stream over a keyed permutation. Values never repeat within
/// 2^64 draws because the permutation is injective.
class CounterStream {
 public:
  CounterStream() = default;
  CounterStream(uint64_t k0, uint64_t k1) : perm_{k0, k1} {}

  uint64_t next() { return perm_.apply(counter_++); }
  uint64_t draws() const { return counter_; }

 private:
  KeyedPermutation perm_;
  uint64_t counter_ = 0;
};

/// Deterministic generator for fuzzing and tests. No libstdc++ distributions
/// are used anywhere so streams are identical across platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next() { return splitmix64_next(state_); }

  /// Uniform value in [0, n); n must be nonzero.
  uint64_t below(uint64_t n) { return next() % n; }

  /// Uniform value in [lo, hi].
  uint64_t range(uint64_t lo, uint64_t hi) { return lo + below(hi - lo + 1); }

  /// True with probability num/den.
  bool chance(uint64_t num, uint64_t den) { return below(den) < num; }

 private:
  uint64_t state_;
};

/// Derives independent sub-keys from one master seed.
struct SeedSequence {
  explicit SeedSequence(uint64_t seed) : state_(seed) {}
  uint64_t next() { return splitmix64_next(state_); }

 private:
  uint64_t state_;
};

}  // namespace northcape
