#pragma once

#include <cmath>
#include <type_traits>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "insnet/datagen.hpp"
#include "insnet/model.hpp"

// Insertion-based generation with incremental per-layer caches. Each decode
// step appends exactly one cached row per layer (the new insertion), so the
// per-step cost is O(current length) attended rows instead of a re-encode.
// All math here is the raw value path of the model's encode — no tape.

namespace insnet {

enum class TerminationMode { free, forced_min_loglik };

struct DecodeControls {
    double position_temperature = 1.0;
    double token_temperature = 1.0;
    int64_t max_steps = 160;
    TerminationMode termination = TerminationMode::free;
    double theta_term = 0.0;  // used under forced_min_loglik
    bool greedy = false;

    void validate() const {
        if (position_temperature <= 0.0 || token_temperature <= 0.0) {
            throw ValueError("temperatures must be positive");
        }
        if (max_steps < 1) {
            throw ValueError("max_steps must be at least 1");
        }
    }
};

template <typename T>
struct DecodeState {
    // caches in insertion order; rows for committed steps are never touched
    std::vector<std::vector<std::vector<T>>> keys;  // [layer][step][d]
    std::vector<std::vector<std::vector<T>>> vals;  // [layer][step][d]
    std::vector<std::vector<T>> content;            // [step][d], final layer
    // per-step scalar projections of the factored position head
    std::vector<T> a_left, a_right, a_new, a_term;
    std::vector<int64_t> step_tokens;               // kPad for condition steps
    std::vector<int64_t> natural;                   // step ids in natural order
    std::vector<std::vector<int64_t>> offset_rows;  // offsets frozen per step
    std::vector<std::map<int64_t, std::vector<T>>> rel_cache;  // [layer][offset]
    std::vector<T> wl, wr, wn;  // slot-head blocks projected through pos head
    T kb = T(0);
    Rng rng{0};
    int64_t insertions = 0;  // post-init insertions, 1-based in the trace
    bool terminated = false;
    bool forced_stop = false;
    std::vector<std::string> trace;

    int64_t steps() const { return static_cast<int64_t>(content.size()); }
};

struct StepAction {
    bool terminated = false;
    int64_t slot = -1;   // interior slot index, 0 = leftmost
    int64_t token = -1;  // inserted token id
};

struct DecodeResult {
    std::vector<int64_t> tokens;  // interior tokens, sentinels stripped
    std::vector<std::string> trace;
    bool forced_stop = false;
};

namespace detail {

template <typename T>
void matvec(const std::vector<T>& x, const std::vector<T>& w, int64_t rows,
            int64_t cols, std::vector<T>& out) {
    out.assign(static_cast<size_t>(cols), T(0));
    for (int64_t i = 0; i < rows; ++i) {
        const T xi = x[static_cast<size_t>(i)];
        if (xi == T(0)) continue;
        const T* wr = w.data() + i * cols;
        for (int64_t j = 0; j < cols; ++j) out[static_cast<size_t>(j)] += xi * wr[j];
    }
}

template <typename T>
void layer_norm_row(std::vector<T>& x, const std::vector<T>& gain,
                    const std::vector<T>& bias, T eps) {
    const int64_t d = static_cast<int64_t>(x.size());
    T mean = T(0);
    for (T v : x) mean += v;
    mean /= static_cast<T>(d);
    T var = T(0);
    for (T v : x) {
        const T c = v - mean;
        var += c * c;
    }
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    for (int64_t j = 0; j < d; ++j) {
        x[static_cast<size_t>(j)] = (x[static_cast<size_t>(j)] - mean) * inv *
                                        gain[static_cast<size_t>(j)] +
                                    bias[static_cast<size_t>(j)];
    }
}

// Greedy pick over raw scores: strict > keeps the lowest index on ties.
template <typename T>
int64_t argmax_lowest(const std::vector<T>& scores) {
    int64_t best = 0;
    for (int64_t i = 1; i < static_cast<int64_t>(scores.size()); ++i) {
        if (scores[static_cast<size_t>(i)] > scores[static_cast<size_t>(best)]) best = i;
    }
    return best;
}

// log-softmax in double precision, shared by the theta test and sampling.
template <typename T>
std::vector<double> log_softmax_vec(const std::vector<T>& logits, double temp) {
    std::vector<double> out(logits.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = static_cast<double>(logits[i]) / temp;
        mx = std::max(mx, out[i]);
    }
    double sum = 0.0;
    for (double& v : out) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    for (double& v : out) v -= lse;
    return out;
}

inline int64_t sample_logprobs(const std::vector<double>& logprobs, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (size_t i = 0; i < logprobs.size(); ++i) {
        acc += std::exp(logprobs[i]);
        if (u < acc) return static_cast<int64_t>(i);
    }
    return static_cast<int64_t>(logprobs.size()) - 1;  // guard rounding
}

}  // namespace detail

// Appends one row to every layer cache: the attention math mirrors the
// model's encode for a single new query over the committed rows.
template <typename T>
void append_cached_row(const InsNetModel<T>& model, DecodeState<T>& state,
                       std::vector<T> x, std::vector<int64_t> offsets_row) {
    const auto& cfg = model.config();
    const auto& params = model.params();
    const int64_t d = cfg.d_model;
    const int64_t dh = cfg.d_head();
    const int64_t t = state.steps();  // the new row's step index
    if (static_cast<int64_t>(offsets_row.size()) != t + 1 || offsets_row.back() != 0) {
        throw ShapeError("offset row must cover prior steps and end at 0");
    }
    const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

    std::vector<T> q, k_new, v_new, scores, attn, h1, ff1, ff2, tmp;
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        detail::matvec(x, params.at(p + "attn.W_q").val(), d, d, q);
        detail::matvec(x, params.at(p + "attn.W_kE").val(), d, d, k_new);
        detail::matvec(x, params.at(p + "attn.W_v").val(), d, d, v_new);
        auto& keys = state.keys[static_cast<size_t>(l)];
        auto& vals = state.vals[static_cast<size_t>(l)];
        keys.push_back(k_new);
        vals.push_back(v_new);

        // project each distinct relative offset once per layer, then reuse
        auto& rel = state.rel_cache[static_cast<size_t>(l)];
        std::vector<const std::vector<T>*> p_rows(static_cast<size_t>(t + 1));
        for (int64_t j = 0; j <= t; ++j) {
            const int64_t off = offsets_row[static_cast<size_t>(j)];
            auto it = rel.find(off);
            if (it == rel.end()) {
                const auto emb = model.rel_table().embedding(off);
                std::vector<T> emb_t(emb.size());
                for (size_t i = 0; i < emb.size(); ++i) emb_t[i] = static_cast<T>(emb[i]);
                std::vector<T> proj;
                detail::matvec(emb_t, params.at(p + "attn.W_kR").val(), d, d, proj);
                it = rel.emplace(off, std::move(proj)).first;
            }
            p_rows[static_cast<size_t>(j)] = &it->second;
        }

        const auto& u = params.at(p + "attn.u").val();
        const auto& vv = params.at(p + "attn.v").val();
        attn.assign(static_cast<size_t>(d), T(0));
        scores.resize(static_cast<size_t>(t + 1));
        for (int64_t hd = 0; hd < cfg.n_heads; ++hd) {
            const int64_t base = hd * dh;
            for (int64_t j = 0; j <= t; ++j) {
                const auto& kj = keys[static_cast<size_t>(j)];
                const auto& pj = *p_rows[static_cast<size_t>(j)];
                T s = T(0);
                for (int64_t c = 0; c < dh; ++c) {
                    const size_t i = static_cast<size_t>(base + c);
                    s += (q[i] + u[i]) * kj[i] + (q[i] + vv[i]) * pj[i];
                }
                scores[static_cast<size_t>(j)] = s * inv_sqrt_dh;
            }
            T mx = scores[0];
            for (int64_t j = 1; j <= t; ++j)
                mx = std::max(mx, scores[static_cast<size_t>(j)]);
            T denom = T(0);
            for (int64_t j = 0; j <= t; ++j) {
                scores[static_cast<size_t>(j)] = std::exp(scores[static_cast<size_t>(j)] - mx);
                denom += scores[static_cast<size_t>(j)];
            }
            for (int64_t j = 0; j <= t; ++j) {
                const T w = scores[static_cast<size_t>(j)] / denom;
                const auto& vj = vals[static_cast<size_t>(j)];
                for (int64_t c = 0; c < dh; ++c)
                    attn[static_cast<size_t>(base + c)] += w * vj[static_cast<size_t>(base + c)];
            }
        }
        counters().attention_rows += static_cast<uint64_t>(t + 1);

        h1 = x;
        for (int64_t i = 0; i < d; ++i) h1[static_cast<size_t>(i)] += attn[static_cast<size_t>(i)];
        detail::layer_norm_row(h1, params.at(p + "ln1.gain").val(),
                               params.at(p + "ln1.bias").val(), InsNetModel<T>::kLnEps);

        detail::matvec(h1, params.at(p + "ffn.w1").val(), d, cfg.d_ff, ff1);
        const auto& b1 = params.at(p + "ffn.b1").val();
        const T inv_sqrt2 = T(0.70710678118654752440);
        for (int64_t i = 0; i < cfg.d_ff; ++i) {
            const T v = ff1[static_cast<size_t>(i)] + b1[static_cast<size_t>(i)];
            ff1[static_cast<size_t>(i)] =
                T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
        }
        detail::matvec(ff1, params.at(p + "ffn.w2").val(), cfg.d_ff, d, ff2);
        const auto& b2 = params.at(p + "ffn.b2").val();
        x = h1;
        for (int64_t i = 0; i < d; ++i)
            x[static_cast<size_t>(i)] += ff2[static_cast<size_t>(i)] + b2[static_cast<size_t>(i)];
        detail::layer_norm_row(x, params.at(p + "ln2.gain").val(),
                               params.at(p + "ln2.bias").val(), InsNetModel<T>::kLnEps);
    }

    const auto dot = [d](const std::vector<T>& a, const std::vector<T>& b) {
        T s = T(0);
        for (int64_t i = 0; i < d; ++i)
            s += a[static_cast<size_t>(i)] * b[static_cast<size_t>(i)];
        return s;
    };
    state.a_left.push_back(dot(x, state.wl));
    state.a_right.push_back(dot(x, state.wr));
    state.a_new.push_back(dot(x, state.wn));
    std::vector<T> wt(params.at("heads.term.weight").val());
    state.a_term.push_back(dot(x, wt));
    state.content.push_back(std::move(x));
    state.offset_rows.push_back(std::move(offsets_row));
}

// Commits one element at natural position `pos`, freezing its offset row
// (signed distances to every committed step in current coordinates).
template <typename T>
void commit_step(const InsNetModel<T>& model, DecodeState<T>& state,
                 std::vector<T> input_row, int64_t token, int64_t pos) {
    const int64_t t = state.steps();
    if (pos < 0 || pos > t) {
        throw IndexError("insertion position " + std::to_string(pos) +
                         " outside the current sequence");
    }
    state.natural.insert(state.natural.begin() + pos, t);
    std::vector<int64_t> offsets(static_cast<size_t>(t + 1), 0);
    for (int64_t idx = 0; idx < static_cast<int64_t>(state.natural.size()); ++idx) {
        offsets[static_cast<size_t>(state.natural[static_cast<size_t>(idx)])] = idx - pos;
    }
    append_cached_row(model, state, std::move(input_row), std::move(offsets));
    state.step_tokens.push_back(token);
}

// Conditions, BOS, EOS, then any keywords become the leading insertion
// steps; the caches afterwards equal a from-scratch encode of this prefix.
template <typename T>
DecodeState<T> init_state(const InsNetModel<T>& model,
                          const Tensor<std::type_identity_t<T>>* cond,
                          const std::vector<int64_t>& initial_tokens, uint64_t seed) {
    const auto& cfg = model.config();
    const int64_t m = cfg.n_condition_slots;
    const int64_t d = cfg.d_model;
    if (initial_tokens.size() < 2 || initial_tokens.front() != kBos ||
        initial_tokens.back() != kEos) {
        throw ValueError("initial tokens must run from BOS to EOS");
    }
    for (size_t i = 1; i + 1 < initial_tokens.size(); ++i) {
        if (initial_tokens[i] == kBos || initial_tokens[i] == kEos) {
            throw ValueError("sentinel inside the initial tokens");
        }
        if (initial_tokens[i] < 0 || initial_tokens[i] >= cfg.vocab_size) {
            throw IndexError("initial token id out of vocabulary");
        }
    }
    if (static_cast<int64_t>(initial_tokens.size()) > cfg.max_len) {
        throw ValueError("initial tokens exceed configured max_len");
    }
    if (m > 0 && cond == nullptr) {
        throw ValueError("model expects condition vectors");
    }
    if (cond != nullptr && m > 0 && (cond->rows() != m || cond->cols() != d)) {
        throw ShapeError("condition block must be slots x d_model");
    }

    DecodeState<T> state;
    state.rng = Rng(seed);
    state.keys.resize(static_cast<size_t>(cfg.n_layers));
    state.vals.resize(static_cast<size_t>(cfg.n_layers));
    state.rel_cache.resize(static_cast<size_t>(cfg.n_layers));

    // factored position head: d-row blocks of the slot weight through the
    // scalar position projection
    const auto& w_slot = model.params().at("heads.slot.weight").val();
    const auto& w_pos = model.params().at("heads.pos.weight").val();
    const auto& b_slot = model.params().at("heads.slot.bias").val();
    state.wl.assign(static_cast<size_t>(d), T(0));
    state.wr.assign(static_cast<size_t>(d), T(0));
    state.wn.assign(static_cast<size_t>(d), T(0));
    for (int64_t i = 0; i < d; ++i) {
        T sl = T(0), sr = T(0), sn = T(0);
        for (int64_t j = 0; j < d; ++j) {
            sl += w_slot[static_cast<size_t>(i * d + j)] * w_pos[static_cast<size_t>(j)];
            sr += w_slot[static_cast<size_t>((d + i) * d + j)] * w_pos[static_cast<size_t>(j)];
            sn += w_slot[static_cast<size_t>((2 * d + i) * d + j)] * w_pos[static_cast<size_t>(j)];
        }
        state.wl[static_cast<size_t>(i)] = sl;
        state.wr[static_cast<size_t>(i)] = sr;
        state.wn[static_cast<size_t>(i)] = sn;
    }
    state.kb = T(0);
    for (int64_t j = 0; j < d; ++j)
        state.kb += b_slot[static_cast<size_t>(j)] * w_pos[static_cast<size_t>(j)];

    const auto& embed = model.params().at("embed.tokens").val();
    const auto embed_row = [&](int64_t id) {
        return std::vector<T>(embed.begin() + id * d, embed.begin() + (id + 1) * d);
    };
    for (int64_t i = 0; i < m; ++i) {
        const auto& cv = cond->val();
        std::vector<T> row(cv.begin() + i * d, cv.begin() + (i + 1) * d);
        commit_step(model, state, std::move(row), kPad, i);
    }
    commit_step(model, state, embed_row(kBos), kBos, m);      // BOS
    commit_step(model, state, embed_row(kEos), kEos, m + 1);  // EOS
    for (size_t i = 1; i + 1 < initial_tokens.size(); ++i) {
        // keywords in left-to-right order, each left of EOS
        commit_step(model, state, embed_row(initial_tokens[i]), initial_tokens[i],
                    m + static_cast<int64_t>(i));
    }
    return state;
}

// The realized insertion order so far: step -> current natural position.
template <typename T>
InsertionOrder realized_order(const DecodeState<T>& state) {
    InsertionOrder order;
    order.perm.resize(state.natural.size());
    for (int64_t idx = 0; idx < static_cast<int64_t>(state.natural.size()); ++idx) {
        order.perm[static_cast<size_t>(state.natural[static_cast<size_t>(idx)])] = idx;
    }
    return order;
}

template <typename T>
std::string render_interior(const DecodeState<T>& state, int64_t m,
                            const Vocab* vocab) {
    std::string out;
    for (size_t idx = static_cast<size_t>(m) + 1; idx + 1 < state.natural.size(); ++idx) {
        const int64_t id = state.step_tokens[static_cast<size_t>(state.natural[idx])];
        if (!out.empty()) out += ' ';
        out += vocab != nullptr ? vocab->token_of(id) : std::to_string(id);
    }
    return out;
}

template <typename T>
StepAction decode_step(const InsNetModel<T>& model, DecodeState<T>& state,
                       const DecodeControls& controls, const Vocab* vocab = nullptr) {
    controls.validate();
    if (state.terminated) {
        throw StateError("decode state already terminated");
    }
    const auto& cfg = model.config();
    const int64_t m = cfg.n_condition_slots;
    const int64_t t = state.steps();
    const int64_t n_slots = t - m - 1;

    // position logits: termination first, then slots left to right
    std::vector<T> logits(static_cast<size_t>(n_slots + 1));
    logits[0] = state.a_term[static_cast<size_t>(t - 1)];
    for (int64_t s = 0; s < n_slots; ++s) {
        const int64_t left = state.natural[static_cast<size_t>(m + s)];
        const int64_t right = state.natural[static_cast<size_t>(m + s + 1)];
        logits[static_cast<size_t>(1 + s)] = state.a_left[static_cast<size_t>(left)] +
                                             state.a_right[static_cast<size_t>(right)] +
                                             state.a_new[static_cast<size_t>(t - 1)] +
                                             state.kb;
    }

    bool mask_termination = false;
    if (controls.termination == TerminationMode::forced_min_loglik) {
        const auto lp = detail::log_softmax_vec(logits, 1.0);
        mask_termination = lp[0] < controls.theta_term;
    }

    int64_t choice;
    if (mask_termination) {
        std::vector<T> slot_logits(logits.begin() + 1, logits.end());
        if (controls.greedy) {
            choice = 1 + detail::argmax_lowest(slot_logits);
        } else {
            const auto lp =
                detail::log_softmax_vec(slot_logits, controls.position_temperature);
            choice = 1 + detail::sample_logprobs(lp, state.rng);
        }
    } else if (controls.greedy) {
        choice = detail::argmax_lowest(logits);
    } else {
        const auto lp = detail::log_softmax_vec(logits, controls.position_temperature);
        choice = detail::sample_logprobs(lp, state.rng);
    }

    if (choice == 0) {
        state.terminated = true;
        state.trace.push_back("TERM");
        return {true, -1, -1};
    }
    const int64_t s = choice - 1;

    // token head only at the chosen slot
    const int64_t d = cfg.d_model;
    const int64_t left = state.natural[static_cast<size_t>(m + s)];
    const int64_t right = state.natural[static_cast<size_t>(m + s + 1)];
    std::vector<T> cat(static_cast<size_t>(3 * d));
    for (int64_t i = 0; i < d; ++i) {
        cat[static_cast<size_t>(i)] =
            state.content[static_cast<size_t>(left)][static_cast<size_t>(i)];
        cat[static_cast<size_t>(d + i)] =
            state.content[static_cast<size_t>(right)][static_cast<size_t>(i)];
        cat[static_cast<size_t>(2 * d + i)] =
            state.content[static_cast<size_t>(t - 1)][static_cast<size_t>(i)];
    }
    const auto& params = model.params();
    std::vector<T> rep;
    detail::matvec(cat, params.at("heads.slot.weight").val(), 3 * d, d, rep);
    const auto& sb = params.at("heads.slot.bias").val();
    for (int64_t i = 0; i < d; ++i) rep[static_cast<size_t>(i)] += sb[static_cast<size_t>(i)];
    std::vector<T> tok_logits;
    detail::matvec(rep, params.at("heads.token.weight").val(), d, cfg.vocab_size,
                   tok_logits);
    const auto& tb = params.at("heads.token.bias").val();
    for (int64_t i = 0; i < cfg.vocab_size; ++i)
        tok_logits[static_cast<size_t>(i)] += tb[static_cast<size_t>(i)];

    int64_t token;
    if (controls.greedy) {
        token = detail::argmax_lowest(tok_logits);
    } else {
        const auto lp = detail::log_softmax_vec(tok_logits, controls.token_temperature);
        token = detail::sample_logprobs(lp, state.rng);
    }

    const auto& embed = params.at("embed.tokens").val();
    std::vector<T> row(embed.begin() + token * d, embed.begin() + (token + 1) * d);
    commit_step(model, state, std::move(row), token, m + 1 + s);

    ++state.insertions;
    std::string line = std::to_string(state.insertions);
    line += '\t';
    line += std::to_string(s);
    line += '\t';
    line += vocab != nullptr ? vocab->token_of(token) : std::to_string(token);
    line += '\t';
    line += render_interior(state, m, vocab);
    state.trace.push_back(std::move(line));
    return {false, s, token};
}

template <typename T>
DecodeResult decode(const InsNetModel<T>& model,
                    const Tensor<std::type_identity_t<T>>* cond,
                    const std::vector<int64_t>& keywords, const DecodeControls& controls,
                    uint64_t seed, const Vocab* vocab = nullptr) {
    controls.validate();
    std::vector<int64_t> initial;
    initial.reserve(keywords.size() + 2);
    initial.push_back(kBos);
    initial.insert(initial.end(), keywords.begin(), keywords.end());
    initial.push_back(kEos);

    auto state = init_state(model, cond, initial, seed);
    const int64_t m = model.config().n_condition_slots;
    const int64_t room =
        model.config().max_len + m - state.steps();  // encode capacity left
    const int64_t budget = std::min(controls.max_steps, room);
    for (int64_t i = 0; i < budget && !state.terminated; ++i) {
        decode_step(model, state, controls, vocab);
    }
    DecodeResult out;
    if (!state.terminated) {
        state.terminated = true;
        out.forced_stop = true;
        state.trace.push_back("TERM\tforced");
    }
    for (size_t idx = static_cast<size_t>(m) + 1; idx + 1 < state.natural.size(); ++idx) {
        out.tokens.push_back(state.step_tokens[static_cast<size_t>(state.natural[idx])]);
    }
    out.trace = state.trace;
    return out;
}

// theta is the dev-set mean of the final-step termination log-probability
// under teacher-forced left-to-right orders; decoding with
// forced_min_loglik(theta) expands until the model is at least as sure
// about stopping as it typically was at true sequence ends.
template <typename T>
double calibrate_termination(const InsNetModel<T>& model,
                             const std::vector<Example>& dev) {
    if (dev.empty()) {
        throw ValueError("empty calibration set");
    }
    const auto& cfg = model.config();
    const int64_t m = cfg.n_condition_slots;
    Rng dummy(0);
    double sum = 0.0;
    for (const auto& ex : dev) {
        const int64_t n = m + static_cast<int64_t>(ex.ids.size());
        auto order = sample_order(OrderStrategy::l2r, n, m, {}, dummy);
        SequenceLoss<T> loss;
        if (ex.scene.has_value() && cfg.cond_input_dim > 0) {
            const auto g = render_scene(*ex.scene);
            std::vector<T> flat(g.data.begin(), g.data.end());
            auto cond = model.encode_condition(flat);
            loss = model.sequence_loss(ex.ids, order, &cond, nullptr);
        } else {
            loss = model.sequence_loss(ex.ids, order, nullptr, nullptr);
        }
        sum += -loss.steps.back().position_nll;
    }
    return sum / static_cast<double>(dev.size());
}

}  // namespace insnet
