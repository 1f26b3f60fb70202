// Copyright 2026 The DBCL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DBCL_RNG_H_
#define DBCL_RNG_H_

#include <cstdint>
#include <optional>
#include <utility>

namespace dbcl {

// splitmix64 state. The protocol only relies on this generator, so equal
// states produce equal streams on every platform.
struct RngState {
  std::uint64_t state = 0;
  bool operator==(const RngState&) const = default;
};

// One splitmix64 step: returns the advanced state and the output word.
constexpr std::pair<RngState, std::uint64_t> rng_next(RngState r) {
  const std::uint64_t s = r.state + 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return {RngState{s}, z ^ (z >> 31)};
}

// Per-(round, layer) sketch seed. Server and clients evaluate this
// independently and must agree.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t round,
                                    std::uint64_t layer) {
  const std::uint64_t round_word = rng_next(RngState{root ^ (round + 1)}).second;
  return rng_next(RngState{round_word ^ ((layer + 1) * 0x9E3779B97F4A7C15ULL)}).second;
}

// Stateful convenience wrapper over rng_next.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_{seed} {}

  std::uint64_t next() {
    auto [s, out] = rng_next(state_);
    state_ = s;
    return out;
  }

  // Modulo reduction; bias is at most n / 2^64.
  std::uint64_t below(std::uint64_t n) { return next() % n; }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second variate is cached.
  double normal();

  RngState state() const { return state_; }

 private:
  RngState state_;
  std::optional<double> spare_;
};

}  // namespace dbcl

#endif  // DBCL_RNG_H_
