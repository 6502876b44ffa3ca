#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "insnet/errors.hpp"
#include "insnet/rng.hpp"
#include "insnet/tensor.hpp"

// Insertion orders and everything positional derived from them: offset
// compression, the brute-force insertion-simulation oracle, unshuffle maps,
// sinusoidal relative embeddings, attention masks, and order sampling.
//
// Orders are "generation form": condition slots first in natural order, then
// the BOS position, then the EOS position, then interior tokens in any order.

namespace insnet {

struct InsertionOrder {
    std::vector<int64_t> perm;  // perm[step] = final absolute position

    int64_t n() const { return static_cast<int64_t>(perm.size()); }

    // Throws ValueError unless perm is a bijection on {0..n-1}.
    void validate() const;

    // Generation-form check: first M steps are conditions 0..M-1, then BOS
    // (position M), then EOS (position n-1).
    bool is_generation_form(int64_t n_condition_slots) const;
};

// Lower-triangular matrix of signed directed distances in insertion-order
// coordinates. Row i is frozen at insertion step i; cells above the diagonal
// are invalid rather than holding a sentinel value.
struct OffsetMatrix {
    int64_t n = 0;
    std::vector<int32_t> entries;  // n*n row-major, invalid cells stay 0
    std::vector<uint8_t> valid;    // n*n

    bool is_valid(int64_t i, int64_t j) const {
        return i >= 0 && i < n && j >= 0 && j < n && valid[i * n + j];
    }

    int32_t at(int64_t i, int64_t j) const {
        if (!is_valid(i, j)) {
            throw IndexError("offset cell (" + std::to_string(i) + "," +
                             std::to_string(j) + ") is not valid");
        }
        return entries[i * n + j];
    }

    bool operator==(const OffsetMatrix&) const = default;
};

// Four-step offset compression: duplicate perm as rows, invalidate the strict
// upper triangle, replace valid entries by in-row rank, subtract the diagonal.
OffsetMatrix compress_offsets(const InsertionOrder& order);

// Independent oracle: simulates the insertions into a growing natural-order
// list and reads directed distances off the list at each step.
OffsetMatrix oracle_offsets(const InsertionOrder& order);

// For the first t insertion steps, maps natural-order rank -> insertion step
// holding that token. Applying it to perm sorts positions ascending.
std::vector<int64_t> unshuffle_map(const InsertionOrder& order, int64_t t);

// Fixed sinusoids indexed by signed offset. Row layout of the materialized
// table: row (offset + max_abs_offset) holds the embedding of `offset`.
class RelEmbeddingTable {
public:
    RelEmbeddingTable(int64_t d_model, int64_t max_abs_offset);

    std::vector<double> embedding(int64_t offset) const;

    int64_t d_model() const { return d_model_; }
    int64_t max_abs_offset() const { return max_abs_offset_; }
    int64_t rows() const { return 2 * max_abs_offset_ + 1; }

    // Row index into the materialized table for a signed offset.
    int64_t row_of(int64_t offset) const {
        if (offset < -max_abs_offset_ || offset > max_abs_offset_) {
            throw IndexError("relative offset " + std::to_string(offset) +
                             " exceeds table range " + std::to_string(max_abs_offset_));
        }
        return offset + max_abs_offset_;
    }

    template <typename T>
    Tensor<T> materialize() const {
        Tensor<T> t(Shape{rows(), d_model_});
        auto& v = t.val();
        for (int64_t o = -max_abs_offset_; o <= max_abs_offset_; ++o) {
            const auto e = embedding(o);
            for (int64_t k = 0; k < d_model_; ++k)
                v[(o + max_abs_offset_) * d_model_ + k] = static_cast<T>(e[k]);
        }
        return t;
    }

private:
    int64_t d_model_;
    int64_t max_abs_offset_;
};

// Lower-triangular-inclusive mask in insertion-order coordinates: step i
// attends to steps 0..i.
std::vector<uint8_t> attention_mask(int64_t t_total);

enum class OrderStrategy {
    l2r,
    uniform,
    keyword_first_l2r,
    keyword_first_uniform,
};

OrderStrategy order_strategy_from_string(const std::string& s);
std::string to_string(OrderStrategy s);

// Samples a generation-form order over n positions with n_condition_slots
// conditions. keyword positions (interior, strictly increasing) are required
// for the keyword_first_* strategies and inserted right after the sentinels.
InsertionOrder sample_order(OrderStrategy strategy, int64_t n,
                            int64_t n_condition_slots,
                            const std::vector<int64_t>& keyword_positions, Rng& rng);

}  // namespace insnet
