#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "insnet/counters.hpp"
#include "insnet/model.hpp"
#include "insnet/ops.hpp"
#include "insnet/position.hpp"
#include "insnet/tensor.hpp"

// Comparison models: IT-vanilla re-encodes the whole context after every
// insertion with absolute positions; L2R is a causal decoder with learned
// absolute positions. Both share diffmath and the InsNet layer sizes so
// timing differences isolate the algorithm, not the implementation.

namespace insnet {

// Standard multi-head self-attention stack (no relative terms), shared by
// both baselines. h is (t x d); the mask chooses causal vs bidirectional.
template <typename T>
Tensor<T> standard_encode(const ParamStore<T>& params, const ModelConfig& cfg,
                          Tensor<T> h,
                          const std::shared_ptr<const std::vector<uint8_t>>& mask,
                          Rng* dropout_rng) {
    const int64_t t = h.rows();
    const int64_t dh = cfg.d_head();
    const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        auto q = ops::matmul(h, params.at(p + "attn.W_q"));
        auto k = ops::matmul(h, params.at(p + "attn.W_k"));
        auto v = ops::matmul(h, params.at(p + "attn.W_v"));
        std::vector<Tensor<T>> head_outs;
        head_outs.reserve(static_cast<size_t>(cfg.n_heads));
        for (int64_t hd = 0; hd < cfg.n_heads; ++hd) {
            auto qh = ops::slice_cols(q, hd * dh, dh);
            auto kh = ops::slice_cols(k, hd * dh, dh);
            auto vh = ops::slice_cols(v, hd * dh, dh);
            auto probs = ops::masked_softmax(
                ops::scale(ops::matmul_nt(qh, kh), inv_sqrt_dh), mask);
            head_outs.push_back(ops::matmul(probs, vh));
        }
        auto attn = ops::concat_last_dim(head_outs);
        if (dropout_rng != nullptr && cfg.dropout_p > 0.0) {
            attn = ops::dropout(attn, cfg.dropout_p, *dropout_rng);
        }
        h = ops::layer_norm(ops::add(h, attn), params.at(p + "ln1.gain"),
                            params.at(p + "ln1.bias"), InsNetModel<T>::kLnEps);
        auto ff = ops::add_rowvec(
            ops::matmul(ops::gelu(ops::add_rowvec(ops::matmul(h, params.at(p + "ffn.w1")),
                                                  params.at(p + "ffn.b1"))),
                        params.at(p + "ffn.w2")),
            params.at(p + "ffn.b2"));
        if (dropout_rng != nullptr && cfg.dropout_p > 0.0) {
            ff = ops::dropout(ff, cfg.dropout_p, *dropout_rng);
        }
        h = ops::layer_norm(ops::add(h, ff), params.at(p + "ln2.gain"),
                            params.at(p + "ln2.bias"), InsNetModel<T>::kLnEps);
        counters().attention_rows += static_cast<uint64_t>(t);
    }
    return h;
}

inline std::shared_ptr<const std::vector<uint8_t>> full_mask(int64_t t) {
    return std::make_shared<const std::vector<uint8_t>>(static_cast<size_t>(t * t), 1);
}

inline std::shared_ptr<const std::vector<uint8_t>> causal_mask(int64_t t) {
    return std::make_shared<const std::vector<uint8_t>>(attention_mask(t));
}

// ---------------------------------------------------------------------------
// IT-vanilla: bidirectional encoder over the current natural-order context,
// rebuilt from scratch after every insertion.

template <typename T>
class ITVanillaModel {
public:
    ITVanillaModel(const ModelConfig& cfg, uint64_t seed)
        : cfg_(cfg), abs_table_(cfg.d_model, cfg.max_abs_offset()) {
        cfg_.validate();
        Rng rng(seed);
        const int64_t d = cfg_.d_model;
        const T std = T(0.02);
        params_.add("embed.tokens", Shape{cfg_.vocab_size, d}, rng, std);
        for (int64_t l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            params_.add(p + "attn.W_q", Shape{d, d}, rng, std);
            params_.add(p + "attn.W_k", Shape{d, d}, rng, std);
            params_.add(p + "attn.W_v", Shape{d, d}, rng, std);
            params_.add(p + "ffn.w1", Shape{d, cfg_.d_ff}, rng, std);
            params_.add_const_fill(p + "ffn.b1", Shape{1, cfg_.d_ff}, T(0));
            params_.add(p + "ffn.w2", Shape{cfg_.d_ff, d}, rng, std);
            params_.add_const_fill(p + "ffn.b2", Shape{1, d}, T(0));
            params_.add_const_fill(p + "ln1.gain", Shape{1, d}, T(1));
            params_.add_const_fill(p + "ln1.bias", Shape{1, d}, T(0));
            params_.add_const_fill(p + "ln2.gain", Shape{1, d}, T(1));
            params_.add_const_fill(p + "ln2.bias", Shape{1, d}, T(0));
        }
        params_.add("heads.slot.weight", Shape{2 * d, d}, rng, std);
        params_.add_const_fill("heads.slot.bias", Shape{1, d}, T(0));
        params_.add("heads.token.weight", Shape{d, cfg_.vocab_size}, rng, std);
        params_.add_const_fill("heads.token.bias", Shape{1, cfg_.vocab_size}, T(0));
        params_.add("heads.pos.weight", Shape{d, 1}, rng, std);
        params_.add("heads.term.weight", Shape{d, 1}, rng, std);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    // Full re-encode of the current context with absolute sinusoids at the
    // current (compacted) indices. No prefix stability, by construction.
    Tensor<T> encode_context(const std::vector<int64_t>& context_ids,
                             Rng* dropout_rng = nullptr) const {
        const int64_t t = static_cast<int64_t>(context_ids.size());
        if (t < 1) {
            throw ValueError("empty context");
        }
        auto x = ops::embedding_lookup(params_.at("embed.tokens"), context_ids);
        Tensor<T> pos(Shape{t, cfg_.d_model});
        for (int64_t i = 0; i < t; ++i) {
            const auto v = abs_table_.embedding(i);
            for (int64_t k = 0; k < cfg_.d_model; ++k)
                pos.val()[i * cfg_.d_model + k] = static_cast<T>(v[k]);
        }
        return standard_encode(params_, cfg_, ops::add(x, pos), full_mask(t),
                               dropout_rng);
    }

    // Position and token distributions over the t-1 interior slots of an
    // encoded context (termination at index 0, matching the main model).
    StepDistributions<T> step_distributions(const Tensor<T>& enc) const {
        const int64_t t = enc.rows();
        if (t < 2) {
            throw ValueError("context must hold at least the sentinels");
        }
        std::vector<int64_t> left_ids(static_cast<size_t>(t - 1));
        std::vector<int64_t> right_ids(static_cast<size_t>(t - 1));
        for (int64_t s = 0; s < t - 1; ++s) {
            left_ids[s] = s;
            right_ids[s] = s + 1;
        }
        auto slots = ops::add_rowvec(
            ops::matmul(ops::concat_last_dim({ops::gather_rows(enc, left_ids),
                                              ops::gather_rows(enc, right_ids)}),
                        params_.at("heads.slot.weight")),
            params_.at("heads.slot.bias"));
        auto pooled = ops::mean_rows(enc);
        auto term = ops::matmul(pooled, params_.at("heads.term.weight"));
        auto slot_logits = ops::matmul(slots, params_.at("heads.pos.weight"));
        StepDistributions<T> out;
        out.position_logprobs = ops::log_softmax(
            ops::reshape(ops::concat_rows({term, slot_logits}), Shape{1, t}));
        out.token_logprobs = ops::log_softmax(
            ops::add_rowvec(ops::matmul(slots, params_.at("heads.token.weight")),
                            params_.at("heads.token.bias")));
        return out;
    }

    // One insertion: -log p(slot) - log p(token | slot). slot_index is the
    // interior gap between context positions slot_index and slot_index+1.
    Tensor<T> step_loss(const std::vector<int64_t>& context_ids, int64_t slot_index,
                        int64_t token, Rng* dropout_rng = nullptr) const {
        const int64_t t = static_cast<int64_t>(context_ids.size());
        if (slot_index < 0 || slot_index >= t - 1) {
            throw IndexError("slot " + std::to_string(slot_index) +
                             " outside the " + std::to_string(t - 1) + " interior slots");
        }
        auto dist = step_distributions(encode_context(context_ids, dropout_rng));
        auto pos_nll = ops::scale(
            ops::reshape(ops::gather_rows(
                             ops::reshape(dist.position_logprobs, Shape{t, 1}),
                             {1 + slot_index}),
                         Shape{1}),
            T(-1));
        if (token < 0 || token >= cfg_.vocab_size) {
            throw IndexError("token id " + std::to_string(token) + " outside vocabulary");
        }
        auto tok_row = ops::gather_rows(dist.token_logprobs, {slot_index});
        auto tok_nll = ops::scale(
            ops::reshape(ops::slice_cols(tok_row, token, 1), Shape{1}), T(-1));
        return ops::add(pos_nll, tok_nll);
    }

    // Sum of step losses over the order plus the final termination step.
    // Performs one full re-encode per insertion; that cost is the point.
    SequenceLoss<T> sequence_loss(const std::vector<int64_t>& tokens,
                                  const InsertionOrder& order,
                                  Rng* dropout_rng = nullptr) const {
        const int64_t n = order.n();
        if (static_cast<int64_t>(tokens.size()) != n) {
            throw ValueError("order length does not match token count");
        }
        if (!order.is_generation_form(0)) {
            throw ValueError("sequence loss requires a generation-form order");
        }
        SequenceLoss<T> out;
        out.total = Tensor<T>::scalar(T(0));
        std::vector<int64_t> positions;  // sorted natural positions present
        positions.reserve(static_cast<size_t>(n));
        positions.push_back(order.perm[0]);
        positions.insert(std::upper_bound(positions.begin(), positions.end(),
                                          order.perm[1]),
                         order.perm[1]);
        for (int64_t t = 2; t < n; ++t) {
            const int64_t p = order.perm[t];
            int64_t s = -1;
            for (size_t k = 0; k + 1 < positions.size(); ++k) {
                if (positions[k] < p && p < positions[k + 1]) {
                    s = static_cast<int64_t>(k);
                    break;
                }
            }
            if (s < 0) {
                throw ValueError("insertion position " + std::to_string(p) +
                                 " falls outside the sentinel segment");
            }
            std::vector<int64_t> context_ids;
            context_ids.reserve(positions.size());
            for (int64_t q : positions) context_ids.push_back(tokens[q]);
            auto loss = step_loss(context_ids, s, tokens[p], dropout_rng);
            out.steps.push_back({t, 0.0, static_cast<double>(loss.item()), true});
            out.total = ops::add(out.total, loss);
            positions.insert(std::upper_bound(positions.begin(), positions.end(), p), p);
        }
        std::vector<int64_t> context_ids;
        for (int64_t q : positions) context_ids.push_back(tokens[q]);
        auto dist = step_distributions(encode_context(context_ids, dropout_rng));
        auto term_nll = ops::scale(
            ops::reshape(ops::gather_rows(
                             ops::reshape(dist.position_logprobs, Shape{n, 1}), {0}),
                         Shape{1}),
            T(-1));
        out.steps.push_back({n, static_cast<double>(term_nll.item()), 0.0, false});
        out.total = ops::add(out.total, term_nll);
        return out;
    }

private:
    ModelConfig cfg_;
    ParamStore<T> params_;
    RelEmbeddingTable abs_table_;  // reused as absolute sinusoids at index i
};

// ---------------------------------------------------------------------------
// L2R: causal decoder with learned absolute positions.

struct L2RDecodeResult {
    std::vector<int64_t> tokens;
    bool truncated = false;
};

template <typename T>
class L2RModel {
public:
    L2RModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        const int64_t d = cfg_.d_model;
        const T std = T(0.02);
        params_.add("embed.tokens", Shape{cfg_.vocab_size, d}, rng, std);
        params_.add("embed.pos", Shape{cfg_.max_len + cfg_.n_condition_slots, d}, rng,
                    std);
        for (int64_t l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            params_.add(p + "attn.W_q", Shape{d, d}, rng, std);
            params_.add(p + "attn.W_k", Shape{d, d}, rng, std);
            params_.add(p + "attn.W_v", Shape{d, d}, rng, std);
            params_.add(p + "ffn.w1", Shape{d, cfg_.d_ff}, rng, std);
            params_.add_const_fill(p + "ffn.b1", Shape{1, cfg_.d_ff}, T(0));
            params_.add(p + "ffn.w2", Shape{cfg_.d_ff, d}, rng, std);
            params_.add_const_fill(p + "ffn.b2", Shape{1, d}, T(0));
            params_.add_const_fill(p + "ln1.gain", Shape{1, d}, T(1));
            params_.add_const_fill(p + "ln1.bias", Shape{1, d}, T(0));
            params_.add_const_fill(p + "ln2.gain", Shape{1, d}, T(1));
            params_.add_const_fill(p + "ln2.bias", Shape{1, d}, T(0));
        }
        params_.add("heads.token.weight", Shape{d, cfg_.vocab_size}, rng, std);
        params_.add_const_fill("heads.token.bias", Shape{1, cfg_.vocab_size}, T(0));
        if (cfg_.cond_input_dim > 0) {
            params_.add("cond.weight",
                        Shape{cfg_.cond_input_dim, cfg_.n_condition_slots * d}, rng, std);
            params_.add_const_fill("cond.bias", Shape{1, cfg_.n_condition_slots * d},
                                   T(0));
        }
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    Tensor<T> encode_condition(const std::vector<T>& flat_grid) const {
        if (cfg_.cond_input_dim <= 0) {
            throw StateError("model was built without a condition encoder");
        }
        if (static_cast<int64_t>(flat_grid.size()) != cfg_.cond_input_dim) {
            throw ShapeError("condition input size mismatch");
        }
        Tensor<T> x(Shape{1, cfg_.cond_input_dim}, flat_grid);
        auto h = ops::gelu(ops::add_rowvec(ops::matmul(x, params_.at("cond.weight")),
                                           params_.at("cond.bias")));
        return ops::reshape(h, Shape{cfg_.n_condition_slots, cfg_.d_model});
    }

    // Per-row logits for the whole prefix. Condition rows (if any) occupy the
    // leading positions; token rows follow.
    Tensor<T> logits(const std::vector<int64_t>& tokens, const Tensor<T>* cond = nullptr,
                     Rng* dropout_rng = nullptr) const {
        const int64_t m = cond != nullptr ? cfg_.n_condition_slots : 0;
        const int64_t len = static_cast<int64_t>(tokens.size());
        if (len < 1) {
            throw ValueError("empty token sequence");
        }
        const int64_t total = m + len;
        if (total > cfg_.max_len + cfg_.n_condition_slots) {
            throw ValueError("sequence exceeds configured max_len");
        }
        auto x = ops::embedding_lookup(params_.at("embed.tokens"), tokens);
        if (cond != nullptr && m > 0) {
            x = ops::concat_rows({*cond, x});
        }
        std::vector<int64_t> pos_ids(static_cast<size_t>(total));
        for (int64_t i = 0; i < total; ++i) pos_ids[i] = i;
        auto h = standard_encode(params_, cfg_,
                                 ops::add(x, ops::gather_rows(params_.at("embed.pos"),
                                                              pos_ids)),
                                 causal_mask(total), dropout_rng);
        return ops::add_rowvec(ops::matmul(h, params_.at("heads.token.weight")),
                               params_.at("heads.token.bias"));
    }

    // Causal NLL: row m+k predicts tokens[k+1].
    SequenceLoss<T> sequence_loss(const std::vector<int64_t>& tokens,
                                  const Tensor<T>* cond = nullptr,
                                  Rng* dropout_rng = nullptr) const {
        if (tokens.size() < 2) {
            throw ValueError("need at least two tokens for next-token loss");
        }
        const int64_t m = cond != nullptr ? cfg_.n_condition_slots : 0;
        auto all = logits(tokens, cond, dropout_rng);
        SequenceLoss<T> out;
        out.total = Tensor<T>::scalar(T(0));
        for (int64_t k = 0; k + 1 < static_cast<int64_t>(tokens.size()); ++k) {
            auto row = ops::gather_rows(all, {m + k});
            auto nll = ops::cross_entropy_from_logits(row, tokens[k + 1]);
            out.steps.push_back({k, 0.0, static_cast<double>(nll.item()), true});
            out.token_nll_sum += static_cast<double>(nll.item());
            ++out.token_steps;
            out.total = ops::add(out.total, nll);
        }
        return out;
    }

    // Ancestral sampling continued from a prefix; temperature 0 is greedy.
    L2RDecodeResult decode(const std::vector<int64_t>& prefix, const Tensor<T>* cond,
                           int64_t max_total_len, double temperature, Rng& rng) const {
        if (prefix.empty()) {
            throw ValueError("decode needs a nonempty prefix");
        }
        if (max_total_len > cfg_.max_len) {
            throw ValueError("max_total_len exceeds configured max_len");
        }
        L2RDecodeResult out;
        out.tokens = prefix;
        while (static_cast<int64_t>(out.tokens.size()) < max_total_len) {
            auto all = logits(out.tokens, cond, nullptr);
            const int64_t last =
                (cond != nullptr ? cfg_.n_condition_slots : 0) +
                static_cast<int64_t>(out.tokens.size()) - 1;
            std::vector<T> row(static_cast<size_t>(cfg_.vocab_size));
            for (int64_t j = 0; j < cfg_.vocab_size; ++j)
                row[j] = all.val()[last * cfg_.vocab_size + j];
            int64_t next;
            if (temperature <= 0.0) {
                next = ops::argmax(row);
            } else {
                double mx = row[0];
                for (T v : row) mx = std::max(mx, static_cast<double>(v));
                std::vector<double> probs(row.size());
                double z = 0.0;
                for (size_t j = 0; j < row.size(); ++j) {
                    probs[j] = std::exp((static_cast<double>(row[j]) - mx) / temperature);
                    z += probs[j];
                }
                double r = rng.uniform() * z;
                next = static_cast<int64_t>(row.size()) - 1;
                for (size_t j = 0; j < probs.size(); ++j) {
                    r -= probs[j];
                    if (r <= 0.0) {
                        next = static_cast<int64_t>(j);
                        break;
                    }
                }
            }
            out.tokens.push_back(next);
            if (next == kEos) return out;
        }
        out.truncated = true;
        return out;
    }

private:
    ModelConfig cfg_;
    ParamStore<T> params_;
};

}  // namespace insnet
