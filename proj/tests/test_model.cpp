#include <cmath>
#include <vector>

#include <doctest.h>

#include "insnet/baselines.hpp"
#include "insnet/model.hpp"
#include "insnet/verify.hpp"

using namespace insnet;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.vocab_size = 15;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.dropout_p = 0.0;
    cfg.max_len = 24;
    return cfg;
}

std::vector<int64_t> random_sentence(int64_t interior, Rng& rng, int64_t vocab) {
    std::vector<int64_t> tokens{kBos};
    for (int64_t i = 0; i < interior; ++i)
        tokens.push_back(4 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(vocab - 4))));
    tokens.push_back(kEos);
    return tokens;
}

void zero_param(ParamStore<double>& params, const std::string& name) {
    auto& v = params.at(name).val();
    std::fill(v.begin(), v.end(), 0.0);
}

// Re-encode route: fresh encode per step, aggregated slots, materialized
// distributions. Shares no intermediate state with the single-pass loss.
double reencode_loss(const InsNetModel<double>& model, const std::vector<int64_t>& tokens,
                     const InsertionOrder& order, const Tensor<double>* cond) {
    const int64_t m = model.config().n_condition_slots;
    const int64_t n = order.n();
    std::vector<int64_t> step_ids(static_cast<size_t>(n), kPad);
    for (int64_t k = 0; k < n; ++k)
        if (order.perm[k] >= m) step_ids[k] = tokens[order.perm[k] - m];
    auto offsets = compress_offsets(order);

    double total = 0.0;
    for (int64_t t = m + 2; t <= n; ++t) {
        auto e = model.encode(step_ids, offsets, t, cond);
        auto [slots, e_new] = model.shallow_aggregate(e, order, t);
        auto dist = model.step_distributions(slots, e_new);
        if (t == n) {
            total -= dist.position_logprobs.val()[0];
            break;
        }
        const int64_t p = order.perm[t];
        auto seg = model.segment_steps(order, t);
        int64_t s = -1;
        for (size_t k = 0; k + 1 < seg.size(); ++k)
            if (order.perm[seg[k]] < p && p < order.perm[seg[k + 1]]) s = static_cast<int64_t>(k);
        REQUIRE(s >= 0);
        total -= dist.position_logprobs.val()[1 + s];
        total -= dist.token_logprobs.val()[s * model.config().vocab_size + tokens[p - m]];
    }
    return total;
}

}  // namespace

TEST_CASE("single token encode matches the independent reference") {
    auto cfg = small_config();
    InsNetModel<double> model(cfg, 7);
    std::vector<int64_t> ids{5};
    auto off = compress_offsets(InsertionOrder{{0}});
    auto e = model.encode(ids, off, 1);
    auto ref = refimpl::ref_encode(model.params(), cfg, ids, refimpl::identity_offsets(), 1);
    for (int64_t k = 0; k < cfg.d_model; ++k)
        CHECK(std::abs(e.val()[k] - ref[0][k]) < 1e-9);
}

TEST_CASE("encode rows are stable under prefix truncation") {
    auto cfg = small_config();
    InsNetModel<double> model(cfg, 11);
    Rng rng(3);
    auto tokens = random_sentence(8, rng, cfg.vocab_size);
    auto order = sample_order(OrderStrategy::uniform, 10, 0, {}, rng);
    std::vector<int64_t> step_ids(10);
    for (int64_t k = 0; k < 10; ++k) step_ids[k] = tokens[order.perm[k]];
    auto offsets = compress_offsets(order);
    auto full = model.encode(step_ids, offsets, 10);
    for (int64_t t : {1, 2, 5, 9}) {
        auto prefix = model.encode(step_ids, offsets, t);
        for (int64_t i = 0; i < t; ++i)
            for (int64_t k = 0; k < cfg.d_model; ++k)
                CHECK(std::abs(prefix.val()[i * cfg.d_model + k] -
                               full.val()[i * cfg.d_model + k]) < 1e-9);
    }
}

TEST_CASE("true identity order reproduces the reference causal encoder") {
    auto cfg = small_config();
    InsNetModel<double> model(cfg, 13);
    std::vector<int64_t> ids{kBos, 4, 9, 7, 12, kEos};
    InsertionOrder identity{{0, 1, 2, 3, 4, 5}};
    auto e = model.encode(ids, compress_offsets(identity), 6);
    auto ref = refimpl::ref_encode(model.params(), cfg, ids, refimpl::identity_offsets(), 6);
    for (int64_t i = 0; i < 6; ++i)
        for (int64_t k = 0; k < cfg.d_model; ++k)
            CHECK(std::abs(e.val()[i * cfg.d_model + k] - ref[i][k]) < 1e-9);
}

TEST_CASE("generation-form l2r offsets used by the reference match compression") {
    auto fn = refimpl::genform_l2r_offsets();
    for (int64_t n : {3, 5, 9}) {
        InsertionOrder o;
        o.perm = {0, n - 1};
        for (int64_t p = 1; p < n - 1; ++p) o.perm.push_back(p);
        auto m = compress_offsets(o);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j <= i; ++j) CHECK(m.at(i, j) == fn(i, j));
    }
}

TEST_CASE("smallest context aggregates one slot from the sentinels") {
    auto cfg = small_config();
    InsNetModel<double> model(cfg, 17);
    std::vector<int64_t> ids{kBos, kEos};
    InsertionOrder o{{0, 1}};
    auto e = model.encode(ids, compress_offsets(o), 2);
    auto [slots, e_new] = model.shallow_aggregate(e, o, 2);
    CHECK(slots.rows() == 1);
    // direct evaluation of slot_linear(E0 (+) E1 (+) E1)
    const auto& w = model.params().at("heads.slot.weight").val();
    const auto& b = model.params().at("heads.slot.bias").val();
    const int64_t d = cfg.d_model;
    for (int64_t out = 0; out < d; ++out) {
        double s = b[out];
        for (int64_t a = 0; a < d; ++a) {
            s += e.val()[a] * w[a * d + out];
            s += e.val()[d + a] * w[(d + a) * d + out];
            s += e.val()[d + a] * w[(2 * d + a) * d + out];
        }
        CHECK(std::abs(slots.val()[out] - s) < 1e-9);
    }
    CHECK(e_new.val() == std::vector<double>(e.val().begin() + d, e.val().end()));
    CHECK_THROWS_AS(model.shallow_aggregate(e, o, 1), StateError);
}

TEST_CASE("latest-step remedy propagates into every slot representation") {
    auto cfg = small_config();
    InsNetModel<double> model(cfg, 23);
    Rng rng(29);
    auto tokens = random_sentence(9, rng, cfg.vocab_size);
    auto order = sample_order(OrderStrategy::uniform, 11, 0, {}, rng);
    std::vector<int64_t> step_ids(11);
    for (int64_t k = 0; k < 11; ++k) step_ids[k] = tokens[order.perm[k]];
    auto offsets = compress_offsets(order);
    auto e = model.encode(step_ids, offsets, 11);

    const int64_t t0 = 9;
    auto [slots_a, e_new_a] = model.shallow_aggregate(e, order, t0);
    auto [slots_b, e_new_b] = model.shallow_aggregate(e, order, t0 + 1);
    // e_new changed between the steps
    bool e_new_changed = false;
    for (int64_t k = 0; k < cfg.d_model; ++k)
        e_new_changed |= std::abs(e_new_a.val()[k] - e_new_b.val()[k]) > 1e-12;
    REQUIRE(e_new_changed);
    // every surviving slot (same neighbor pair) still moves, via e_new
    auto seg_a = model.segment_steps(order, t0);
    auto seg_b = model.segment_steps(order, t0 + 1);
    int compared = 0;
    for (size_t sa = 0; sa + 1 < seg_a.size(); ++sa) {
        for (size_t sb = 0; sb + 1 < seg_b.size(); ++sb) {
            if (seg_a[sa] == seg_b[sb] && seg_a[sa + 1] == seg_b[sb + 1]) {
                double diff = 0.0;
                for (int64_t k = 0; k < cfg.d_model; ++k)
                    diff = std::max(diff,
                                    std::abs(slots_a.val()[sa * cfg.d_model + k] -
                                             slots_b.val()[sb * cfg.d_model + k]));
                CHECK(diff > 1e-12);
                ++compared;
            }
        }
    }
    CHECK(compared > 0);
}

TEST_CASE("step distributions normalize and zero heads are uniform") {
    auto cfg = small_config();
    InsNetModel<double> model(cfg, 31);
    Rng rng(37);
    auto tokens = random_sentence(7, rng, cfg.vocab_size);
    auto order = sample_order(OrderStrategy::uniform, 9, 0, {}, rng);
    std::vector<int64_t> step_ids(9);
    for (int64_t k = 0; k < 9; ++k) step_ids[k] = tokens[order.perm[k]];
    auto e = model.encode(step_ids, compress_offsets(order), 9);
    auto [slots, e_new] = model.shallow_aggregate(e, order, 9);
    auto dist = model.step_distributions(slots, e_new);

    double psum = 0.0;
    for (double lp : dist.position_logprobs.val()) psum += std::exp(lp);
    CHECK(psum == doctest::Approx(1.0).epsilon(1e-6));
    for (int64_t s = 0; s < slots.rows(); ++s) {
        double tsum = 0.0;
        for (int64_t j = 0; j < cfg.vocab_size; ++j)
            tsum += std::exp(dist.token_logprobs.val()[s * cfg.vocab_size + j]);
        CHECK(tsum == doctest::Approx(1.0).epsilon(1e-6));
    }

    zero_param(model.params(), "heads.pos.weight");
    zero_param(model.params(), "heads.term.weight");
    zero_param(model.params(), "heads.token.weight");
    zero_param(model.params(), "heads.token.bias");
    auto dist0 = model.step_distributions(slots, e_new);
    const int64_t options = slots.rows() + 1;
    for (double lp : dist0.position_logprobs.val())
        CHECK(lp == doctest::Approx(-std::log(static_cast<double>(options))).epsilon(1e-9));
    for (double lp : dist0.token_logprobs.val())
        CHECK(lp == doctest::Approx(-std::log(static_cast<double>(cfg.vocab_size)))
                        .epsilon(1e-9));
}

TEST_CASE("zero-head sequence loss matches the uniform analytic value") {
    auto cfg = small_config();
    cfg.vocab_size = 10;
    InsNetModel<double> model(cfg, 41);
    zero_param(model.params(), "heads.pos.weight");
    zero_param(model.params(), "heads.term.weight");
    zero_param(model.params(), "heads.token.weight");
    zero_param(model.params(), "heads.token.bias");

    std::vector<int64_t> tokens{kBos, 5, 8, kEos};
    Rng rng(1);
    auto order = sample_order(OrderStrategy::uniform, 4, 0, {}, rng);
    auto loss = model.sequence_loss(tokens, order);
    const double expect =
        std::log(2.0) + std::log(3.0) + std::log(4.0) + 2.0 * std::log(10.0);
    CHECK(loss.total.item() == doctest::Approx(expect).epsilon(1e-9));
    CHECK(loss.steps.size() == 3);
    CHECK(loss.token_steps == 2);
    CHECK_FALSE(loss.steps.back().has_token);
}

TEST_CASE("single pass loss equals the re-encode route on random orders") {
    auto cfg = small_config();
    InsNetModel<double> model(cfg, 43);
    Rng rng(47);
    for (int trial = 0; trial < 50; ++trial) {
        const int64_t interior = 1 + static_cast<int64_t>(rng.below(8));
        auto tokens = random_sentence(interior, rng, cfg.vocab_size);
        auto order =
            sample_order(OrderStrategy::uniform, interior + 2, 0, {}, rng);
        auto one_pass = model.sequence_loss(tokens, order);
        const double re = reencode_loss(model, tokens, order, nullptr);
        CHECK(std::abs(one_pass.total.item() - re) / std::abs(re) < 1e-6);
    }
}

TEST_CASE("identity-order token predictions equal the reference decoder") {
    auto cfg = small_config();
    InsNetModel<double> model(cfg, 53);
    Rng rng(59);
    for (int trial = 0; trial < 5; ++trial) {
        auto tokens = random_sentence(6, rng, cfg.vocab_size);
        const int64_t n = static_cast<int64_t>(tokens.size());
        Rng unused(0);
        auto order = sample_order(OrderStrategy::l2r, n, 0, {}, unused);
        auto loss = model.sequence_loss(tokens, order);
        auto ref = refimpl::ref_l2r_token_predictions(model.params(), cfg, tokens);
        REQUIRE(static_cast<int64_t>(ref.size()) == loss.token_steps);
        double ref_sum = 0.0;
        for (const auto& p : ref) ref_sum += p.nll;
        CHECK(std::abs(loss.token_nll_sum - ref_sum) / std::abs(ref_sum) < 1e-6);

        // argmax parity: greedy token choices agree step by step
        std::vector<int64_t> step_ids(static_cast<size_t>(n));
        for (int64_t k = 0; k < n; ++k) step_ids[k] = tokens[order.perm[k]];
        auto e = model.encode(step_ids, compress_offsets(order), n);
        for (int64_t t = 2; t < n; ++t) {
            auto [slots, e_new] = model.shallow_aggregate(e, order, t);
            auto dist = model.step_distributions(slots, e_new);
            const int64_t s_true = slots.rows() - 1;  // rightmost interior slot
            std::vector<double> row(static_cast<size_t>(cfg.vocab_size));
            for (int64_t j = 0; j < cfg.vocab_size; ++j)
                row[j] = dist.token_logprobs.val()[s_true * cfg.vocab_size + j];
            CHECK(ops::argmax(row) == ref[t - 2].argmax_id);
        }
    }
}

TEST_CASE("sequence loss validates orders and lengths") {
    auto cfg = small_config();
    InsNetModel<double> model(cfg, 61);
    std::vector<int64_t> tokens{kBos, 5, 6, kEos};
    CHECK_THROWS_AS(model.sequence_loss(tokens, InsertionOrder{{0, 1, 2, 3}}),
                    ValueError);  // EOS not second
    CHECK_THROWS_AS(model.sequence_loss(tokens, InsertionOrder{{0, 3, 1}}), ValueError);
    std::vector<int64_t> too_long(static_cast<size_t>(cfg.max_len) + 3, 5);
    too_long.front() = kBos;
    too_long.back() = kEos;
    Rng rng(2);
    auto big = sample_order(OrderStrategy::l2r,
                            static_cast<int64_t>(too_long.size()), 0, {}, rng);
    CHECK_THROWS_AS(model.sequence_loss(too_long, big), ValueError);
}

TEST_CASE("encode rejects offsets beyond the embedding table") {
    auto cfg = small_config();
    InsNetModel<double> model(cfg, 67);
    OffsetMatrix bad;
    bad.n = 2;
    bad.entries = {0, 0, 9999, 0};
    bad.valid = {1, 0, 1, 1};
    std::vector<int64_t> ids{kBos, kEos};
    CHECK_THROWS_AS(model.encode(ids, bad, 2), IndexError);
}

TEST_CASE("condition slots lead the context and require vectors") {
    auto cfg = small_config();
    cfg.n_condition_slots = 2;
    cfg.vocab_size = 10;
    InsNetModel<double> model(cfg, 71);
    std::vector<int64_t> tokens{kBos, 4, 7, kEos};
    Rng rng(3);
    auto order = sample_order(OrderStrategy::uniform, 6, 2, {}, rng);
    CHECK_THROWS_AS(model.sequence_loss(tokens, order), ValueError);

    Tensor<double> cond(Shape{2, cfg.d_model});
    Rng crng(5);
    for (auto& v : cond.val()) v = crng.normal() * 0.1;

    zero_param(model.params(), "heads.pos.weight");
    zero_param(model.params(), "heads.term.weight");
    zero_param(model.params(), "heads.token.weight");
    zero_param(model.params(), "heads.token.bias");
    auto loss = model.sequence_loss(tokens, order, &cond);
    const double expect =
        std::log(2.0) + std::log(3.0) + std::log(4.0) + 2.0 * std::log(10.0);
    CHECK(loss.total.item() == doctest::Approx(expect).epsilon(1e-9));

    // conditioning participates in the graph: gradient reaches cond
    InsNetModel<double> live(cfg, 73);
    cond.set_requires_grad(true);
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        auto l = live.sequence_loss(tokens, order, &cond);
        tape.backward(l.total);
    }
    double gsum = 0.0;
    for (double g : cond.grad()) gsum += std::abs(g);
    CHECK(gsum > 0.0);

    // one-pass equals re-encode with conditions too
    cond.set_requires_grad(false);
    auto lp = live.sequence_loss(tokens, order, &cond);
    const double re = reencode_loss(live, tokens, order, &cond);
    CHECK(std::abs(lp.total.item() - re) / std::abs(re) < 1e-6);
}

TEST_CASE("attention row counter tracks encode work") {
    auto cfg = small_config();
    InsNetModel<double> model(cfg, 79);
    std::vector<int64_t> ids{kBos, 5, 6, 7, kEos};
    InsertionOrder o{{0, 4, 1, 2, 3}};
    counters().reset();
    model.encode(ids, compress_offsets(o), 5);
    CHECK(counters().attention_rows ==
          static_cast<uint64_t>(5 * cfg.n_layers));
}

TEST_CASE("dropout perturbs the training loss but not evaluation") {
    auto cfg = small_config();
    cfg.dropout_p = 0.3;
    InsNetModel<double> model(cfg, 83);
    std::vector<int64_t> tokens{kBos, 4, 9, 6, kEos};
    Rng rng(7);
    auto order = sample_order(OrderStrategy::uniform, 5, 0, {}, rng);
    auto eval1 = model.sequence_loss(tokens, order);
    auto eval2 = model.sequence_loss(tokens, order);
    CHECK(eval1.total.item() == eval2.total.item());
    Rng drop(11);
    auto noisy = model.sequence_loss(tokens, order, nullptr, &drop);
    CHECK(noisy.total.item() != eval1.total.item());
}

TEST_CASE("every parameter gradient of the full model matches finite differences") {
    ModelConfig cfg;
    cfg.vocab_size = 12;
    cfg.d_model = 64;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_ff = 256;
    cfg.dropout_p = 0.0;
    cfg.max_len = 16;
    InsNetModel<double> model(cfg, 89);

    std::vector<int64_t> tokens{kBos, 5, 9, 4, 7, kEos};
    InsertionOrder order{{0, 5, 3, 1, 4, 2}};
    REQUIRE(order.n() == 6);

    auto loss_value = [&] { return model.sequence_loss(tokens, order).total.item(); };

    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        auto loss = model.sequence_loss(tokens, order);
        tape.backward(loss.total);
    }

    Rng pick(97);
    const double h = 1e-5;
    for (auto& [name, param] : model.params().all()) {
        auto& t = model.params().at(name);
        REQUIRE(!t.grad().empty());
        const int64_t count = t.numel();
        for (int probe = 0; probe < 20; ++probe) {
            const int64_t i = static_cast<int64_t>(pick.below(static_cast<uint64_t>(count)));
            const double keep = t.val()[i];
            t.val()[i] = keep + h;
            const double fp = loss_value();
            t.val()[i] = keep - h;
            const double fm = loss_value();
            t.val()[i] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double g = t.grad()[i];
            const double rel = std::abs(fd - g) / std::max({1.0, std::abs(fd), std::abs(g)});
            CHECK(rel < 1e-4);
        }
    }
}
