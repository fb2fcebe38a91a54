#pragma once

#include <cmath>
#include <cstdint>

namespace sfcsplit {

/// Emulated time in integer nanoseconds. Integer ticks keep every latency
/// decomposition exact.
using SimTime = std::int64_t;

inline constexpr SimTime kNanosPerSecond = 1'000'000'000;
inline constexpr SimTime kNanosPerMilli = 1'000'000;
inline constexpr SimTime kNanosPerMicro = 1'000;

inline constexpr SimTime seconds(double s) { return static_cast<SimTime>(std::llround(s * 1e9)); }
inline constexpr double to_seconds(SimTime t) { return static_cast<double>(t) / 1e9; }
inline constexpr double to_millis(SimTime t) { return static_cast<double>(t) / 1e6; }

}  // namespace sfcsplit
