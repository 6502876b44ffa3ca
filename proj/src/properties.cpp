#include "insnet/properties.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "insnet/decoding.hpp"
#include "insnet/model.hpp"
#include "insnet/position.hpp"

namespace insnet {

namespace {

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(3);
    out << v;
    return out.str();
}

std::vector<int64_t> random_tokens(int64_t n_interior, int64_t vocab, Rng& rng) {
    std::vector<int64_t> tokens{kBos};
    for (int64_t i = 0; i < n_interior; ++i) {
        tokens.push_back(4 + static_cast<int64_t>(
                                 rng.below(static_cast<uint64_t>(vocab - 4))));
    }
    tokens.push_back(kEos);
    return tokens;
}

// Stepwise loss with every prefix encoded from scratch and slots built by the
// aggregation head — no sharing with the single-pass factored path.
double stepwise_reencode_loss(const InsNetModel<double>& model,
                              const std::vector<int64_t>& tokens,
                              const InsertionOrder& order) {
    const int64_t m = model.config().n_condition_slots;
    const int64_t n = order.n();
    std::vector<int64_t> step_ids(static_cast<size_t>(n), kPad);
    for (int64_t k = 0; k < n; ++k) {
        if (order.perm[k] >= m) step_ids[k] = tokens[order.perm[k] - m];
    }
    const auto offsets = compress_offsets(order);

    double total = 0.0;
    for (int64_t t = m + 2; t <= n; ++t) {
        const auto e = model.encode(step_ids, offsets, t);
        const auto [slots, e_new] = model.shallow_aggregate(e, order, t);
        const auto dist = model.step_distributions(slots, e_new);
        if (t == n) {
            total -= static_cast<double>(dist.position_logprobs.val()[0]);
            break;
        }
        const int64_t p = order.perm[t];
        const auto seg = model.segment_steps(order, t);
        int64_t s = -1;
        for (size_t k = 0; k + 1 < seg.size(); ++k) {
            if (order.perm[seg[k]] < p && p < order.perm[seg[k + 1]]) {
                s = static_cast<int64_t>(k);
                break;
            }
        }
        if (s < 0) throw ValueError("insertion outside the sentinel segment");
        total -= static_cast<double>(dist.position_logprobs.val()[1 + s]);
        const int64_t vocab = model.config().vocab_size;
        total -= static_cast<double>(
            dist.token_logprobs.val()[s * vocab + tokens[p - m]]);
    }
    return total;
}

}  // namespace

PropertyReport check_offset_compression(int64_t exhaustive_n, int64_t n_random,
                                        int64_t max_n, uint64_t seed) {
    PropertyReport out{"offset-compression", false, ""};
    int64_t checked = 0;

    std::vector<int64_t> interior;
    for (int64_t p = 1; p + 1 < exhaustive_n; ++p) interior.push_back(p);
    std::sort(interior.begin(), interior.end());
    do {
        InsertionOrder order;
        order.perm.push_back(0);
        order.perm.push_back(exhaustive_n - 1);
        order.perm.insert(order.perm.end(), interior.begin(), interior.end());
        if (compress_offsets(order) != oracle_offsets(order)) {
            out.detail = "exhaustive mismatch after " + std::to_string(checked);
            return out;
        }
        ++checked;
    } while (std::next_permutation(interior.begin(), interior.end()));
    const int64_t exhaustive_count = checked;

    Rng rng(seed);
    for (int64_t k = 0; k < n_random; ++k) {
        const int64_t n =
            3 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(max_n - 2)));
        const auto order = sample_order(OrderStrategy::uniform, n, 0, {}, rng);
        if (compress_offsets(order) != oracle_offsets(order)) {
            out.detail = "random mismatch at n=" + std::to_string(n);
            return out;
        }
        ++checked;
    }
    out.pass = true;
    out.detail = std::to_string(exhaustive_count) + " exhaustive + " +
                 std::to_string(n_random) + " random orders agree";
    return out;
}

PropertyReport check_l2r_identity_offsets(int64_t n) {
    PropertyReport out{"l2r-identity-offsets", false, ""};
    InsertionOrder order;
    order.perm.resize(static_cast<size_t>(n));
    std::iota(order.perm.begin(), order.perm.end(), 0);
    const auto offsets = compress_offsets(order);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j <= i; ++j) {
            if (offsets.at(i, j) != j - i) {
                out.detail = "entry (" + std::to_string(i) + "," + std::to_string(j) +
                             ") is " + std::to_string(offsets.at(i, j));
                return out;
            }
        }
    }
    out.pass = true;
    out.detail = "identity order gives entry(i,j)=j-i up to n=" + std::to_string(n);
    return out;
}

PropertyReport check_one_pass_likelihood(int64_t n_pairs, int64_t max_interior,
                                         uint64_t seed, double rel_tol) {
    PropertyReport out{"one-pass-likelihood", false, ""};
    ModelConfig cfg;
    cfg.vocab_size = 24;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.d_ff = 32;
    cfg.dropout_p = 0.0;
    cfg.max_len = max_interior + 2;
    InsNetModel<double> model(cfg, seed ^ 0x5851f42d4c957f2dull);

    Rng rng(seed);
    double worst = 0.0;
    for (int64_t k = 0; k < n_pairs; ++k) {
        const int64_t n_interior =
            2 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(max_interior - 1)));
        const auto tokens = random_tokens(n_interior, cfg.vocab_size, rng);
        const auto order = sample_order(
            OrderStrategy::uniform, static_cast<int64_t>(tokens.size()), 0, {}, rng);
        const double one_pass =
            static_cast<double>(model.sequence_loss(tokens, order).total.item());
        const double stepwise = stepwise_reencode_loss(model, tokens, order);
        const double rel = std::abs(one_pass - stepwise) /
                           std::max(1.0, std::abs(one_pass));
        worst = std::max(worst, rel);
        if (rel >= rel_tol) {
            out.detail = "pair " + std::to_string(k) + " diverges: " + fmt(one_pass) +
                         " vs " + fmt(stepwise);
            return out;
        }
    }
    out.pass = true;
    out.detail = std::to_string(n_pairs) + " order pairs, worst rel diff " + fmt(worst);
    return out;
}

PropertyReport check_gradients(int64_t entries_per_array, double h, double rel_tol,
                               uint64_t seed) {
    PropertyReport out{"gradient-check", false, ""};
    ModelConfig cfg;
    cfg.vocab_size = 12;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.d_ff = 16;
    cfg.dropout_p = 0.0;
    cfg.max_len = 16;
    cfg.n_condition_slots = 2;
    cfg.cond_input_dim = 6;
    InsNetModel<double> model(cfg, seed ^ 0x2545f4914f6cdd1dull);

    Rng rng(seed);
    std::vector<double> grid(static_cast<size_t>(cfg.cond_input_dim));
    for (auto& g : grid) g = rng.uniform();
    const std::vector<int64_t> tokens{kBos, 5, 9, 4, kEos};
    const auto order = sample_order(OrderStrategy::uniform,
                                    cfg.n_condition_slots +
                                        static_cast<int64_t>(tokens.size()),
                                    cfg.n_condition_slots, {}, rng);

    auto loss_value = [&] {
        const auto cond = model.encode_condition(grid);
        return static_cast<double>(model.sequence_loss(tokens, order, &cond).total.item());
    };

    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        const auto cond = model.encode_condition(grid);
        auto loss = model.sequence_loss(tokens, order, &cond);
        tape.backward(loss.total);
    }

    double worst = 0.0;
    int64_t arrays = 0;
    for (auto& [name, unused] : model.params().all()) {
        auto& t = model.params().at(name);
        ++arrays;
        for (int64_t probe = 0; probe < entries_per_array; ++probe) {
            const int64_t i =
                static_cast<int64_t>(rng.below(static_cast<uint64_t>(t.numel())));
            const double keep = t.val()[i];
            t.val()[i] = keep + h;
            const double fp = loss_value();
            t.val()[i] = keep - h;
            const double fm = loss_value();
            t.val()[i] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double g = t.grad()[i];
            const double rel = std::abs(fd - g) / std::max({1.0, std::abs(fd), std::abs(g)});
            worst = std::max(worst, rel);
            if (rel >= rel_tol) {
                out.detail = name + "[" + std::to_string(i) + "]: tape " + fmt(g) +
                             " vs fd " + fmt(fd);
                return out;
            }
        }
    }
    out.pass = true;
    out.detail = std::to_string(arrays) + " arrays x " +
                 std::to_string(entries_per_array) + " entries, worst rel err " +
                 fmt(worst);
    return out;
}

PropertyReport check_cache_consistency(int64_t n_decodes, int64_t max_insertions,
                                       uint64_t seed, double tol) {
    PropertyReport out{"decode-cache", false, ""};
    ModelConfig cfg;
    cfg.vocab_size = 20;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.d_ff = 32;
    cfg.dropout_p = 0.0;
    cfg.max_len = max_insertions + 4;
    InsNetModel<double> model(cfg, seed ^ 0x9e3779b97f4a7c15ull);

    DecodeControls controls;
    controls.max_steps = max_insertions;

    double worst = 0.0;
    for (int64_t k = 0; k < n_decodes; ++k) {
        auto state = init_state<double>(model, nullptr, {kBos, kEos}, seed + 100 + k);
        while (!state.terminated &&
               state.insertions < controls.max_steps &&
               state.steps() < cfg.max_len) {
            decode_step(model, state, controls);
            const auto realized = realized_order(state);
            const auto offsets = compress_offsets(realized);
            const auto e = model.encode(state.step_tokens, offsets, state.steps());
            for (int64_t i = 0; i < state.steps(); ++i) {
                for (int64_t j = 0; j < cfg.d_model; ++j) {
                    const double diff = std::abs(
                        static_cast<double>(e.val()[i * cfg.d_model + j]) -
                        static_cast<double>(
                            state.content[static_cast<size_t>(i)]
                                         [static_cast<size_t>(j)]));
                    worst = std::max(worst, diff);
                }
            }
            if (worst >= tol) {
                out.detail = "decode " + std::to_string(k) + " drifts to " + fmt(worst) +
                             " at step " + std::to_string(state.steps());
                return out;
            }
        }
    }
    out.pass = true;
    out.detail = std::to_string(n_decodes) + " decodes, worst row diff " + fmt(worst);
    return out;
}

PropertyReport check_zero_head_loss(double tol) {
    PropertyReport out{"zero-head-loss", false, ""};
    ModelConfig cfg;
    cfg.vocab_size = 10;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.d_ff = 32;
    cfg.dropout_p = 0.0;
    cfg.max_len = 12;
    InsNetModel<double> model(cfg, 3);
    for (const char* name : {"heads.slot.weight", "heads.slot.bias",
                             "heads.token.weight", "heads.token.bias",
                             "heads.pos.weight", "heads.term.weight"}) {
        auto& t = model.params().at(name);
        std::fill(t.val().begin(), t.val().end(), 0.0);
    }

    const std::vector<int64_t> tokens{kBos, 5, 7, kEos};
    const int64_t n = static_cast<int64_t>(tokens.size());
    double expected = std::log(static_cast<double>(n));
    for (int64_t t = 2; t < n; ++t) expected += std::log(static_cast<double>(t));
    expected += static_cast<double>(n - 2) * std::log(static_cast<double>(cfg.vocab_size));

    double worst = 0.0;
    for (const InsertionOrder& order :
         {InsertionOrder{{0, 3, 1, 2}}, InsertionOrder{{0, 3, 2, 1}}}) {
        const double got =
            static_cast<double>(model.sequence_loss(tokens, order).total.item());
        worst = std::max(worst, std::abs(got - expected));
    }
    if (worst >= tol) {
        out.detail = "loss off the closed form by " + fmt(worst);
        return out;
    }
    out.pass = true;
    out.detail = "matches sum(ln t) + ln n + (n-2) ln V within " + fmt(worst);
    return out;
}

std::vector<PropertyReport> default_property_suite() {
    return {
        check_offset_compression(7, 2000, 32, 11),
        check_l2r_identity_offsets(16),
        check_one_pass_likelihood(8, 10, 12, 1e-6),
        check_gradients(3, 1e-5, 1e-4, 13),
        check_cache_consistency(5, 12, 14, 1e-9),
        check_zero_head_loss(1e-6),
    };
}

}  // namespace insnet
