/*
 * Copyright 2026 NPE Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <random>

namespace npe {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

/// Named sub-streams of the single root seed. Every source of randomness in a
/// run draws from one of these, so components are independently reproducible.
enum class SeedStream : std::uint64_t {
  kSplit = 1,
  kInit = 2,
  kNegatives = 3,
  kShuffle = 4,
  kDropout = 5,
  kValidationNegatives = 6,
  kValidationContext = 7,
  kContext = 8,
};

constexpr std::uint64_t derive_seed(std::uint64_t root, SeedStream stream,
                                    std::uint64_t salt = 0) {
  return mix_seed(mix_seed(root, static_cast<std::uint64_t>(stream)), salt);
}

}  // namespace npe
