/*
 * Copyright 2026 The cryoclass Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
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

namespace cryoclass {

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Purposes keep the rotation, noise and phantom streams of one item apart.
enum class Stream : std::uint64_t { Rotation = 1, Noise = 2, Phantom = 3, Test = 4 };

/// Generator keyed by (seed, item index, purpose). Every image owns its own
/// stream, so parallel generation is reproducible regardless of scheduling.
inline std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t index, Stream purpose) {
    const std::uint64_t key = mix64(seed ^ mix64(index ^ mix64(static_cast<std::uint64_t>(purpose))));
    return std::mt19937_64(key);
}

} // namespace cryoclass
