#pragma once

#include <cstdint>

namespace insnet {

// Machine-independent work counters. Wall-clock benchmarks are corroborated
// by these counts; attention_rows is the number of score-matrix rows
// materialized (per layer, per pass).
struct OpCounters {
    uint64_t attention_rows = 0;
    uint64_t tape_nodes = 0;

    void reset() { *this = OpCounters{}; }
};

inline OpCounters& counters() {
    thread_local OpCounters c;
    return c;
}

}  // namespace insnet
