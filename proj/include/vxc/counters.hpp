#pragma once

#include <atomic>
#include <cstdint>

namespace vxc::counters {

// Instrumentation used by tests and trainer assertions. Atomics so that
// parallel evaluation sweeps stay race-free.

inline std::atomic<std::uint64_t>& cosine_branch_evals() {
    static std::atomic<std::uint64_t> c{0};
    return c;
}

inline std::atomic<std::uint64_t>& pearson_constant_warnings() {
    static std::atomic<std::uint64_t> c{0};
    return c;
}

inline std::atomic<std::uint64_t>& de_exclusion_checks() {
    static std::atomic<std::uint64_t> c{0};
    return c;
}

}  // namespace vxc::counters
