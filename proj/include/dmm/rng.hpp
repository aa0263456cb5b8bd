#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace dmm {

/// All randomness flows through named mt19937_64 streams derived from one
/// master seed, so shuffling, observation noise and weight init stay
/// independent: consuming more draws from one stream never shifts another.
using Rng = std::mt19937_64;

/// Deterministic stream for (master seed, stream name).
Rng spawn_stream(std::uint64_t master_seed, std::string_view name);

/// Sub-stream keyed by extra indices (e.g. per-sequence noise, per-epoch eval).
Rng spawn_stream(std::uint64_t master_seed, std::string_view name, std::uint64_t a,
                 std::uint64_t b = 0);

/// Engine state as text, suitable for embedding in a checkpoint.
std::string rng_state_to_string(const Rng& rng);
Rng rng_state_from_string(const std::string& state);

/// One standard normal draw. A fresh distribution object is used per call so
/// the result is a pure function of the engine state — required for
/// checkpoint resume to be bitwise exact.
double draw_normal(Rng& rng);
/// Uniform draw from [0, 1).
double draw_uniform(Rng& rng);
std::uint64_t draw_u64(Rng& rng);

}  // namespace dmm
