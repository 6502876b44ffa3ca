#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Self-contained correctness properties over freshly built models, shared by
// the `verify` command (light sample counts) and the acceptance harness
// (criterion-scale counts). Every check runs in 64-bit precision and reports
// a one-line detail string alongside its outcome.

namespace insnet {

struct PropertyReport {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Offset compression equals the insertion-simulation oracle on every
// generation-form order of `exhaustive_n` positions plus `n_random` sampled
// orders of 3..max_n positions.
PropertyReport check_offset_compression(int64_t exhaustive_n, int64_t n_random,
                                        int64_t max_n, uint64_t seed);

// The identity order's offset matrix is exactly entry(i, j) = j - i.
PropertyReport check_l2r_identity_offsets(int64_t n);

// Single shared-pass sequence loss equals the per-step re-encoding loss
// (each step encoded from scratch, slots built by the aggregation head).
PropertyReport check_one_pass_likelihood(int64_t n_pairs, int64_t max_interior,
                                         uint64_t seed, double rel_tol);

// Central finite differences against tape gradients for sampled entries of
// every parameter array, condition encoder included.
PropertyReport check_gradients(int64_t entries_per_array, double h, double rel_tol,
                               uint64_t seed);

// Incremental decode caches match from-scratch re-encodings of the realized
// order after every insertion.
PropertyReport check_cache_consistency(int64_t n_decodes, int64_t max_insertions,
                                       uint64_t seed, double tol);

// With zero-initialized output heads the sequence loss is the closed-form
// uniform-choice value: sum of ln t over insertion steps, plus ln n for
// termination, plus (n-2) ln |V| for the interior tokens.
PropertyReport check_zero_head_loss(double tol);

// The full suite at command-line sample counts (a few seconds end to end).
std::vector<PropertyReport> default_property_suite();

}  // namespace insnet
