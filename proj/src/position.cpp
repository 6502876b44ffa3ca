#include "insnet/position.hpp"

#include <algorithm>
#include <cmath>

namespace insnet {

void InsertionOrder::validate() const {
    const int64_t len = n();
    if (len == 0) {
        throw ValueError("insertion order is empty");
    }
    std::vector<uint8_t> seen(static_cast<size_t>(len), 0);
    for (int64_t p : perm) {
        if (p < 0 || p >= len) {
            throw ValueError("insertion order entry " + std::to_string(p) +
                             " outside [0," + std::to_string(len) + ")");
        }
        if (seen[p]) {
            throw ValueError("insertion order repeats position " + std::to_string(p));
        }
        seen[p] = 1;
    }
}

bool InsertionOrder::is_generation_form(int64_t m) const {
    const int64_t len = n();
    if (len < m + 2) return false;
    for (int64_t k = 0; k < m; ++k)
        if (perm[k] != k) return false;
    return perm[m] == m && perm[m + 1] == len - 1;
}

OffsetMatrix compress_offsets(const InsertionOrder& order) {
    order.validate();
    const int64_t n = order.n();
    OffsetMatrix out;
    out.n = n;
    out.entries.assign(static_cast<size_t>(n * n), 0);
    out.valid.assign(static_cast<size_t>(n * n), 0);

    // Row i: the first i+1 positions of perm, each replaced by its in-row
    // rank, minus the rank of the diagonal element.
    std::vector<int64_t> sorted;
    sorted.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        sorted.insert(std::upper_bound(sorted.begin(), sorted.end(), order.perm[i]),
                      order.perm[i]);
        const auto rank = [&sorted](int64_t pos) {
            return static_cast<int64_t>(
                std::lower_bound(sorted.begin(), sorted.end(), pos) - sorted.begin());
        };
        const int64_t diag = rank(order.perm[i]);
        for (int64_t j = 0; j <= i; ++j) {
            out.entries[i * n + j] = static_cast<int32_t>(rank(order.perm[j]) - diag);
            out.valid[i * n + j] = 1;
        }
    }
    return out;
}

OffsetMatrix oracle_offsets(const InsertionOrder& order) {
    order.validate();
    const int64_t n = order.n();
    OffsetMatrix out;
    out.n = n;
    out.entries.assign(static_cast<size_t>(n * n), 0);
    out.valid.assign(static_cast<size_t>(n * n), 0);

    // Grow the context one insertion at a time; after inserting the step-i
    // token, row i holds current_index(token_j) - current_index(token_i).
    std::vector<int64_t> context;  // absolute positions, kept sorted
    context.reserve(static_cast<size_t>(n));
    std::vector<int64_t> index_now(static_cast<size_t>(n), -1);
    for (int64_t i = 0; i < n; ++i) {
        const int64_t pos = order.perm[i];
        context.insert(std::upper_bound(context.begin(), context.end(), pos), pos);
        for (size_t k = 0; k < context.size(); ++k) index_now[context[k]] = static_cast<int64_t>(k);
        const int64_t self = index_now[pos];
        for (int64_t j = 0; j <= i; ++j) {
            out.entries[i * n + j] =
                static_cast<int32_t>(index_now[order.perm[j]] - self);
            out.valid[i * n + j] = 1;
        }
    }
    return out;
}

std::vector<int64_t> unshuffle_map(const InsertionOrder& order, int64_t t) {
    order.validate();
    if (t < 1 || t > order.n()) {
        throw IndexError("unshuffle prefix length " + std::to_string(t) +
                         " outside [1," + std::to_string(order.n()) + "]");
    }
    std::vector<int64_t> steps(static_cast<size_t>(t));
    for (int64_t s = 0; s < t; ++s) steps[s] = s;
    std::sort(steps.begin(), steps.end(), [&order](int64_t a, int64_t b) {
        return order.perm[a] < order.perm[b];
    });
    return steps;
}

RelEmbeddingTable::RelEmbeddingTable(int64_t d_model, int64_t max_abs_offset)
    : d_model_(d_model), max_abs_offset_(max_abs_offset) {
    if (d_model <= 0 || d_model % 2 != 0) {
        throw ValueError("relative embedding width must be positive and even, got " +
                         std::to_string(d_model));
    }
    if (max_abs_offset < 1) {
        throw ValueError("max_abs_offset must be at least 1");
    }
}

std::vector<double> RelEmbeddingTable::embedding(int64_t offset) const {
    row_of(offset);  // range check
    std::vector<double> e(static_cast<size_t>(d_model_));
    for (int64_t k = 0; 2 * k < d_model_; ++k) {
        const double freq =
            std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(d_model_));
        const double x = static_cast<double>(offset) * freq;
        e[2 * k] = std::sin(x);
        e[2 * k + 1] = std::cos(x);
    }
    return e;
}

std::vector<uint8_t> attention_mask(int64_t t_total) {
    if (t_total < 1) {
        throw ValueError("attention mask needs at least one step");
    }
    std::vector<uint8_t> m(static_cast<size_t>(t_total * t_total), 0);
    for (int64_t i = 0; i < t_total; ++i)
        for (int64_t j = 0; j <= i; ++j) m[i * t_total + j] = 1;
    return m;
}

OrderStrategy order_strategy_from_string(const std::string& s) {
    if (s == "l2r") return OrderStrategy::l2r;
    if (s == "uniform") return OrderStrategy::uniform;
    if (s == "keyword_first_l2r") return OrderStrategy::keyword_first_l2r;
    if (s == "keyword_first_uniform") return OrderStrategy::keyword_first_uniform;
    throw ValueError("unknown order strategy: " + s);
}

std::string to_string(OrderStrategy s) {
    switch (s) {
        case OrderStrategy::l2r: return "l2r";
        case OrderStrategy::uniform: return "uniform";
        case OrderStrategy::keyword_first_l2r: return "keyword_first_l2r";
        case OrderStrategy::keyword_first_uniform: return "keyword_first_uniform";
    }
    throw ValueError("unknown order strategy value");
}

InsertionOrder sample_order(OrderStrategy strategy, int64_t n, int64_t m,
                            const std::vector<int64_t>& keyword_positions, Rng& rng) {
    if (m < 0 || n < m + 2) {
        throw ValueError("order needs n >= condition slots + 2 sentinels, got n=" +
                         std::to_string(n) + " m=" + std::to_string(m));
    }
    const bool keyword_mode = strategy == OrderStrategy::keyword_first_l2r ||
                              strategy == OrderStrategy::keyword_first_uniform;
    if (keyword_mode) {
        int64_t prev = -1;
        for (int64_t p : keyword_positions) {
            if (p <= m || p >= n - 1) {
                throw ValueError("keyword position " + std::to_string(p) +
                                 " is not interior");
            }
            if (p <= prev) {
                throw ValueError("keyword positions must be strictly increasing");
            }
            prev = p;
        }
    }

    InsertionOrder order;
    order.perm.reserve(static_cast<size_t>(n));
    for (int64_t k = 0; k < m; ++k) order.perm.push_back(k);
    order.perm.push_back(m);      // BOS
    order.perm.push_back(n - 1);  // EOS

    std::vector<int64_t> rest;
    if (keyword_mode) {
        for (int64_t p : keyword_positions) order.perm.push_back(p);
        std::vector<uint8_t> is_kw(static_cast<size_t>(n), 0);
        for (int64_t p : keyword_positions) is_kw[p] = 1;
        for (int64_t p = m + 1; p < n - 1; ++p)
            if (!is_kw[p]) rest.push_back(p);
    } else {
        for (int64_t p = m + 1; p < n - 1; ++p) rest.push_back(p);
    }
    if (strategy == OrderStrategy::uniform ||
        strategy == OrderStrategy::keyword_first_uniform) {
        rng.shuffle(rest);
    }
    order.perm.insert(order.perm.end(), rest.begin(), rest.end());
    order.validate();
    return order;
}

}  // namespace insnet
