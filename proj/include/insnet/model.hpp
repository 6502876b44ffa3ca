#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "insnet/counters.hpp"
#include "insnet/ops.hpp"
#include "insnet/position.hpp"
#include "insnet/tensor.hpp"

// The insertion-order sequence model: token embedding, stacked relative
// position attention layers, shallow slot aggregation with the latest-step
// remedy, position/token heads, and the single-pass sequence loss.

namespace insnet {

// Reserved token ids shared across the artifact.
inline constexpr int64_t kPad = 0;
inline constexpr int64_t kBos = 1;
inline constexpr int64_t kEos = 2;
inline constexpr int64_t kUnk = 3;

struct ModelConfig {
    int64_t vocab_size = 1000;
    int64_t d_model = 64;
    int64_t n_layers = 2;
    int64_t n_heads = 4;
    int64_t d_ff = 256;
    double dropout_p = 0.1;
    int64_t max_len = 192;
    int64_t n_condition_slots = 0;
    int64_t cond_input_dim = 0;  // >0 adds the condition encoder parameters

    int64_t d_head() const { return d_model / n_heads; }
    int64_t max_abs_offset() const { return 2 * (max_len + n_condition_slots); }

    void validate() const {
        if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) {
            throw ValueError("d_model must be a positive multiple of n_heads");
        }
        if (d_model % 2 != 0) {
            throw ValueError("d_model must be even for sinusoidal embeddings");
        }
        if (vocab_size < 4) {
            throw ValueError("vocabulary must cover the reserved ids");
        }
        if (n_layers < 1 || d_ff < 1) {
            throw ValueError("n_layers and d_ff must be positive");
        }
        if (max_len < 3 + n_condition_slots) {
            throw ValueError("max_len must fit sentinels plus condition slots");
        }
        if (dropout_p < 0.0 || dropout_p >= 1.0) {
            throw ValueError("dropout_p must be in [0,1)");
        }
        if (n_condition_slots < 0 || cond_input_dim < 0) {
            throw ValueError("condition extents must be nonnegative");
        }
    }
};

template <typename T>
struct StepDistributions {
    Tensor<T> position_logprobs;  // 1 x (slots+1); index 0 is termination
    Tensor<T> token_logprobs;     // slots x vocab
};

template <typename T>
struct SequenceLoss {
    Tensor<T> total;  // scalar, connected to the tape when one is active
    struct Step {
        int64_t t = 0;
        double position_nll = 0.0;
        double token_nll = 0.0;
        bool has_token = false;  // false for the final termination step
    };
    std::vector<Step> steps;
    double token_nll_sum = 0.0;
    int64_t token_steps = 0;
};

template <typename T>
class InsNetModel {
public:
    InsNetModel(const ModelConfig& cfg, uint64_t seed)
        : cfg_(cfg), rel_table_(cfg.d_model, cfg.max_abs_offset()) {
        cfg_.validate();
        Rng rng(seed);
        const int64_t d = cfg_.d_model;
        const T std = T(0.02);
        params_.add("embed.tokens", Shape{cfg_.vocab_size, d}, rng, std);
        for (int64_t l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            params_.add(p + "attn.W_q", Shape{d, d}, rng, std);
            params_.add(p + "attn.W_kE", Shape{d, d}, rng, std);
            params_.add(p + "attn.W_v", Shape{d, d}, rng, std);
            params_.add(p + "attn.W_kR", Shape{d, d}, rng, std);
            params_.add_const_fill(p + "attn.u", Shape{1, d}, T(0));
            params_.add_const_fill(p + "attn.v", Shape{1, d}, T(0));
            params_.add(p + "ffn.w1", Shape{d, cfg_.d_ff}, rng, std);
            params_.add_const_fill(p + "ffn.b1", Shape{1, cfg_.d_ff}, T(0));
            params_.add(p + "ffn.w2", Shape{cfg_.d_ff, d}, rng, std);
            params_.add_const_fill(p + "ffn.b2", Shape{1, d}, T(0));
            params_.add_const_fill(p + "ln1.gain", Shape{1, d}, T(1));
            params_.add_const_fill(p + "ln1.bias", Shape{1, d}, T(0));
            params_.add_const_fill(p + "ln2.gain", Shape{1, d}, T(1));
            params_.add_const_fill(p + "ln2.bias", Shape{1, d}, T(0));
        }
        params_.add("heads.slot.weight", Shape{3 * d, d}, rng, std);
        params_.add_const_fill("heads.slot.bias", Shape{1, d}, T(0));
        params_.add("heads.token.weight", Shape{d, cfg_.vocab_size}, rng, std);
        params_.add_const_fill("heads.token.bias", Shape{1, cfg_.vocab_size}, T(0));
        params_.add("heads.pos.weight", Shape{d, 1}, rng, std);
        params_.add("heads.term.weight", Shape{d, 1}, rng, std);
        if (cfg_.cond_input_dim > 0) {
            params_.add("cond.weight",
                        Shape{cfg_.cond_input_dim, cfg_.n_condition_slots * d}, rng, std);
            params_.add_const_fill("cond.bias", Shape{1, cfg_.n_condition_slots * d},
                                   T(0));
        }
        rel_matrix_ = rel_table_.template materialize<T>();
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const RelEmbeddingTable& rel_table() const { return rel_table_; }

    // Condition encoder: flattened scene intensities -> M condition vectors.
    Tensor<T> encode_condition(const std::vector<T>& flat_grid) const {
        if (cfg_.cond_input_dim <= 0) {
            throw StateError("model was built without a condition encoder");
        }
        if (static_cast<int64_t>(flat_grid.size()) != cfg_.cond_input_dim) {
            throw ShapeError("condition input size " + std::to_string(flat_grid.size()) +
                             " does not match configured " +
                             std::to_string(cfg_.cond_input_dim));
        }
        Tensor<T> x(Shape{1, cfg_.cond_input_dim}, flat_grid);
        auto h = ops::gelu(ops::add_rowvec(ops::matmul(x, params_.at("cond.weight")),
                                           params_.at("cond.bias")));
        return ops::reshape(h, Shape{cfg_.n_condition_slots, cfg_.d_model});
    }

    // Encode the first t insertion steps. step_ids[k] is the token inserted
    // at step k; the leading condition steps take rows of cond instead. The
    // offset matrix may describe a longer order; prefix stability makes its
    // top-left t x t block exactly the prefix's own matrix.
    Tensor<T> encode(const std::vector<int64_t>& step_ids, const OffsetMatrix& offsets,
                     int64_t t, const Tensor<T>* cond = nullptr,
                     Rng* dropout_rng = nullptr) const {
        const int64_t m = cfg_.n_condition_slots;
        if (t < 1 || t > static_cast<int64_t>(step_ids.size())) {
            throw ValueError("encode prefix length " + std::to_string(t) +
                             " outside the provided steps");
        }
        if (offsets.n < t) {
            throw ShapeError("offset matrix covers " + std::to_string(offsets.n) +
                             " steps, need " + std::to_string(t));
        }
        if (m > 0 && cond == nullptr) {
            throw ValueError("model expects condition vectors");
        }
        if (cond != nullptr && m > 0 &&
            (cond->rows() != m || cond->cols() != cfg_.d_model)) {
            throw ShapeError("condition block must be slots x d_model");
        }

        Tensor<T> h = build_input(step_ids, t, cond);
        auto [rsub, idx] = build_relative_index(offsets, t);
        auto mask = std::make_shared<const std::vector<uint8_t>>(attention_mask(t));

        const int64_t dh = cfg_.d_head();
        const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
        for (int64_t l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            auto q = ops::matmul(h, params_.at(p + "attn.W_q"));
            auto k = ops::matmul(h, params_.at(p + "attn.W_kE"));
            auto v = ops::matmul(h, params_.at(p + "attn.W_v"));
            auto pe = ops::matmul(rsub, params_.at(p + "attn.W_kR"));
            const auto& u = params_.at(p + "attn.u");
            const auto& vv = params_.at(p + "attn.v");
            std::vector<Tensor<T>> head_outs;
            head_outs.reserve(static_cast<size_t>(cfg_.n_heads));
            for (int64_t hd = 0; hd < cfg_.n_heads; ++hd) {
                auto qh = ops::slice_cols(q, hd * dh, dh);
                auto kh = ops::slice_cols(k, hd * dh, dh);
                auto vh = ops::slice_cols(v, hd * dh, dh);
                auto ph = ops::slice_cols(pe, hd * dh, dh);
                auto uh = ops::slice_cols(u, hd * dh, dh);
                auto vih = ops::slice_cols(vv, hd * dh, dh);
                // content and invariant-content scores against keys, plus
                // content and invariant scores against relative positions
                auto scores = ops::add(ops::matmul_nt(ops::add_rowvec(qh, uh), kh),
                                       ops::rel_scores(ops::add_rowvec(qh, vih), ph, idx));
                auto probs = ops::masked_softmax(ops::scale(scores, inv_sqrt_dh), mask);
                head_outs.push_back(ops::matmul(probs, vh));
            }
            auto attn = ops::concat_last_dim(head_outs);
            if (dropout_rng != nullptr && cfg_.dropout_p > 0.0) {
                attn = ops::dropout(attn, cfg_.dropout_p, *dropout_rng);
            }
            h = ops::layer_norm(ops::add(h, attn), params_.at(p + "ln1.gain"),
                                params_.at(p + "ln1.bias"), kLnEps);
            auto ff = ops::add_rowvec(
                ops::matmul(ops::gelu(ops::add_rowvec(ops::matmul(h, params_.at(p + "ffn.w1")),
                                                      params_.at(p + "ffn.b1"))),
                            params_.at(p + "ffn.w2")),
                params_.at(p + "ffn.b2"));
            if (dropout_rng != nullptr && cfg_.dropout_p > 0.0) {
                ff = ops::dropout(ff, cfg_.dropout_p, *dropout_rng);
            }
            h = ops::layer_norm(ops::add(h, ff), params_.at(p + "ln2.gain"),
                                params_.at(p + "ln2.bias"), kLnEps);
            counters().attention_rows += static_cast<uint64_t>(t);
        }
        return h;
    }

    // Slot representations for the t-1-step context plus the newest-step
    // vector. Slots live strictly between BOS and EOS; condition positions
    // never border a slot.
    std::pair<Tensor<T>, Tensor<T>> shallow_aggregate(const Tensor<T>& e,
                                                      const InsertionOrder& order,
                                                      int64_t t) const {
        const int64_t m = cfg_.n_condition_slots;
        if (t < m + 2) {
            throw StateError("slot aggregation needs BOS and EOS in context");
        }
        if (e.rows() < t) {
            throw ShapeError("encoded rows cover " + std::to_string(e.rows()) +
                             " steps, need " + std::to_string(t));
        }
        const auto seg = segment_steps(order, t);
        const int64_t n_slots = static_cast<int64_t>(seg.size()) - 1;
        std::vector<int64_t> left_ids(seg.begin(), seg.end() - 1);
        std::vector<int64_t> right_ids(seg.begin() + 1, seg.end());
        auto left = ops::gather_rows(e, left_ids);
        auto right = ops::gather_rows(e, right_ids);
        auto e_new = ops::gather_rows(e, {t - 1});
        auto e_new_rep =
            ops::gather_rows(e, std::vector<int64_t>(static_cast<size_t>(n_slots), t - 1));
        auto cat = ops::concat_last_dim({left, right, e_new_rep});
        auto slots = ops::add_rowvec(ops::matmul(cat, params_.at("heads.slot.weight")),
                                     params_.at("heads.slot.bias"));
        return {slots, e_new};
    }

    StepDistributions<T> step_distributions(const Tensor<T>& slots,
                                            const Tensor<T>& e_new) const {
        if (slots.rows() < 1) {
            throw ShapeError("need at least one slot");
        }
        auto term = ops::matmul(e_new, params_.at("heads.term.weight"));   // 1x1
        auto slot_logits = ops::matmul(slots, params_.at("heads.pos.weight"));
        auto logits = ops::reshape(ops::concat_rows({term, slot_logits}),
                                   Shape{1, slots.rows() + 1});
        StepDistributions<T> out;
        out.position_logprobs = ops::log_softmax(logits);
        out.token_logprobs = ops::log_softmax(
            ops::add_rowvec(ops::matmul(slots, params_.at("heads.token.weight")),
                            params_.at("heads.token.bias")));
        return out;
    }

    // Single-pass NLL of a natural-order sequence under one insertion order.
    // tokens excludes condition slots; order covers conditions + tokens.
    // Position logits are assembled from per-row scalar projections of the
    // slot head, so the quadratic slot enumeration costs O(1) per cell.
    SequenceLoss<T> sequence_loss(const std::vector<int64_t>& tokens,
                                  const InsertionOrder& order,
                                  const Tensor<T>* cond = nullptr,
                                  Rng* dropout_rng = nullptr) const {
        const int64_t m = cfg_.n_condition_slots;
        const int64_t n = order.n();
        if (static_cast<int64_t>(tokens.size()) != n - m) {
            throw ValueError("order length " + std::to_string(n) + " does not match " +
                             std::to_string(tokens.size()) + " tokens plus " +
                             std::to_string(m) + " condition slots");
        }
        if (!order.is_generation_form(m)) {
            throw ValueError("sequence loss requires a generation-form order");
        }
        if (n > cfg_.max_len + m) {
            throw ValueError("sequence exceeds configured max_len");
        }

        std::vector<int64_t> step_ids(static_cast<size_t>(n), kPad);
        for (int64_t k = 0; k < n; ++k) {
            if (order.perm[k] >= m) step_ids[k] = tokens[order.perm[k] - m];
        }
        auto offsets = compress_offsets(order);
        Tensor<T> e = encode(step_ids, offsets, n, cond, dropout_rng);

        // factored slot head: slot logit = aL[left] + aR[right] + aN[new] + c
        const auto& w_slot = params_.at("heads.slot.weight");
        const auto& w_pos = params_.at("heads.pos.weight");
        const int64_t d = cfg_.d_model;
        auto rows_of = [&](int64_t start) {
            std::vector<int64_t> ids(static_cast<size_t>(d));
            for (int64_t i = 0; i < d; ++i) ids[i] = start + i;
            return ops::gather_rows(w_slot, ids);
        };
        auto wl = ops::matmul(rows_of(0), w_pos);        // d x 1
        auto wr = ops::matmul(rows_of(d), w_pos);        // d x 1
        auto wn = ops::matmul(rows_of(2 * d), w_pos);    // d x 1
        auto kb = ops::matmul(params_.at("heads.slot.bias"), w_pos);  // 1x1
        auto a_left = ops::matmul(e, wl);                             // n x 1
        auto a_right = ops::matmul(e, wr);
        auto a_new = ops::matmul(e, wn);
        auto a_term = ops::matmul(e, params_.at("heads.term.weight"));

        SequenceLoss<T> out;
        out.total = Tensor<T>::scalar(T(0));

        auto position_loss = [&](int64_t t, int64_t target_index) {
            const auto seg = segment_steps(order, t);
            const int64_t n_slots = static_cast<int64_t>(seg.size()) - 1;
            std::vector<int64_t> left_ids(seg.begin(), seg.end() - 1);
            std::vector<int64_t> right_ids(seg.begin() + 1, seg.end());
            auto slot_vec = ops::add_scalar(
                ops::add_scalar(ops::add(ops::gather_rows(a_left, left_ids),
                                         ops::gather_rows(a_right, right_ids)),
                                ops::gather_rows(a_new, {t - 1})),
                kb);
            auto logits = ops::reshape(
                ops::concat_rows({ops::gather_rows(a_term, {t - 1}), slot_vec}),
                Shape{1, n_slots + 1});
            return ops::cross_entropy_from_logits(logits, target_index);
        };

        for (int64_t t = m + 2; t < n; ++t) {
            const int64_t p = order.perm[t];
            const auto seg = segment_steps(order, t);
            int64_t s = -1;
            for (size_t k = 0; k + 1 < seg.size(); ++k) {
                if (order.perm[seg[k]] < p && p < order.perm[seg[k + 1]]) {
                    s = static_cast<int64_t>(k);
                    break;
                }
            }
            if (s < 0) {
                throw ValueError("insertion position " + std::to_string(p) +
                                 " falls outside the sentinel segment");
            }
            auto pos_loss = position_loss(t, 1 + s);

            auto left = ops::gather_rows(e, {seg[s]});
            auto right = ops::gather_rows(e, {seg[s + 1]});
            auto e_new = ops::gather_rows(e, {t - 1});
            auto slot_rep = ops::add_rowvec(
                ops::matmul(ops::concat_last_dim({left, right, e_new}), w_slot),
                params_.at("heads.slot.bias"));
            auto tok_logits =
                ops::add_rowvec(ops::matmul(slot_rep, params_.at("heads.token.weight")),
                                params_.at("heads.token.bias"));
            auto tok_loss = ops::cross_entropy_from_logits(tok_logits, tokens[p - m]);

            out.steps.push_back({t, static_cast<double>(pos_loss.item()),
                                 static_cast<double>(tok_loss.item()), true});
            out.token_nll_sum += static_cast<double>(tok_loss.item());
            ++out.token_steps;
            out.total = ops::add(out.total, ops::add(pos_loss, tok_loss));
        }

        auto term_loss = position_loss(n, 0);
        out.steps.push_back({n, static_cast<double>(term_loss.item()), 0.0, false});
        out.total = ops::add(out.total, term_loss);
        return out;
    }

    // Steps holding the BOS..EOS segment positions among the first t
    // insertions, sorted by natural position.
    std::vector<int64_t> segment_steps(const InsertionOrder& order, int64_t t) const {
        const int64_t m = cfg_.n_condition_slots;
        auto map = unshuffle_map(order, t);
        return std::vector<int64_t>(map.begin() + m, map.end());
    }

    static constexpr T kLnEps = T(1e-5);

private:
    Tensor<T> build_input(const std::vector<int64_t>& step_ids, int64_t t,
                          const Tensor<T>* cond) const {
        const int64_t m = cfg_.n_condition_slots;
        const auto& embed = params_.at("embed.tokens");
        if (m == 0 || cond == nullptr) {
            return ops::embedding_lookup(
                embed, std::vector<int64_t>(step_ids.begin(), step_ids.begin() + t));
        }
        if (t <= m) {
            std::vector<int64_t> head(static_cast<size_t>(t));
            for (int64_t i = 0; i < t; ++i) head[i] = i;
            return ops::gather_rows(*cond, head);
        }
        return ops::concat_rows(
            {*cond, ops::embedding_lookup(
                        embed, std::vector<int64_t>(step_ids.begin() + m,
                                                    step_ids.begin() + t))});
    }

    // Distinct offsets in the prefix block are projected once; the index
    // table maps each valid (i,j) cell to its projected row.
    std::pair<Tensor<T>, std::shared_ptr<const std::vector<int32_t>>> build_relative_index(
        const OffsetMatrix& offsets, int64_t t) const {
        std::vector<int64_t> row_for_offset(
            static_cast<size_t>(2 * rel_table_.max_abs_offset() + 1), -1);
        std::vector<int64_t> distinct_rows;
        auto idx = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(t * t), -1);
        for (int64_t i = 0; i < t; ++i) {
            for (int64_t j = 0; j <= i; ++j) {
                const int64_t table_row = rel_table_.row_of(offsets.entries[i * offsets.n + j]);
                if (row_for_offset[table_row] < 0) {
                    row_for_offset[table_row] = static_cast<int64_t>(distinct_rows.size());
                    distinct_rows.push_back(table_row);
                }
                (*idx)[i * t + j] = static_cast<int32_t>(row_for_offset[table_row]);
            }
        }
        return {ops::gather_rows(rel_matrix_, distinct_rows),
                std::shared_ptr<const std::vector<int32_t>>(idx)};
    }

    ModelConfig cfg_;
    ParamStore<T> params_;
    RelEmbeddingTable rel_table_;
    Tensor<T> rel_matrix_;
};

}  // namespace insnet
