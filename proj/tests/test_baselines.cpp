#include <algorithm>
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
    cfg.vocab_size = 12;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.dropout_p = 0.0;
    cfg.max_len = 24;
    return cfg;
}

void zero_param(auto& params, const std::string& name) {
    auto& v = params.at(name).val();
    std::fill(v.begin(), v.end(), 0.0);
}

refimpl::Mat it_input(const ParamStore<double>& params, const ModelConfig& cfg,
                      const std::vector<int64_t>& ids) {
    const auto& embed = params.at("embed.tokens").val();
    refimpl::Mat h(ids.size(), std::vector<double>(static_cast<size_t>(cfg.d_model)));
    for (size_t i = 0; i < ids.size(); ++i) {
        const auto pos = refimpl::ref_sinusoid(static_cast<int64_t>(i), cfg.d_model);
        for (int64_t k = 0; k < cfg.d_model; ++k)
            h[i][static_cast<size_t>(k)] = embed[ids[i] * cfg.d_model + k] + pos[k];
    }
    return h;
}

// Hand-rolled insertion-transformer sequence loss: independent encoder,
// hand-built slot reps and softmaxes, explicit context bookkeeping.
double handrolled_it_loss(const ParamStore<double>& params, const ModelConfig& cfg,
                          const std::vector<int64_t>& tokens, const InsertionOrder& order) {
    const int64_t d = cfg.d_model;
    const auto& w_slot = params.at("heads.slot.weight").val();
    const auto& b_slot = params.at("heads.slot.bias").val();
    const auto& w_pos = params.at("heads.pos.weight").val();
    const auto& w_term = params.at("heads.term.weight").val();
    const auto& w_tok = params.at("heads.token.weight").val();
    const auto& b_tok = params.at("heads.token.bias").val();
    auto all = [](int64_t, int64_t) { return true; };

    auto slot_rep = [&](const refimpl::Mat& enc, size_t k) {
        std::vector<double> rep(static_cast<size_t>(d));
        for (int64_t o = 0; o < d; ++o) {
            double s = b_slot[o];
            for (int64_t a = 0; a < d; ++a) {
                s += enc[k][a] * w_slot[a * d + o];
                s += enc[k + 1][a] * w_slot[(d + a) * d + o];
            }
            rep[static_cast<size_t>(o)] = s;
        }
        return rep;
    };
    auto position_logprob = [&](const refimpl::Mat& enc, int64_t want) {
        std::vector<double> logits;
        double term = 0.0;
        for (size_t i = 0; i < enc.size(); ++i)
            for (int64_t a = 0; a < d; ++a) term += enc[i][a] / static_cast<double>(enc.size()) * w_term[a];
        logits.push_back(term);
        for (size_t k = 0; k + 1 < enc.size(); ++k) {
            auto rep = slot_rep(enc, k);
            double s = 0.0;
            for (int64_t a = 0; a < d; ++a) s += rep[a] * w_pos[a];
            logits.push_back(s);
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double v : logits) z += std::exp(v - mx);
        return logits[static_cast<size_t>(want)] - mx - std::log(z);
    };

    double loss = 0.0;
    std::vector<int64_t> positions{order.perm[0]};
    positions.insert(std::upper_bound(positions.begin(), positions.end(), order.perm[1]),
                     order.perm[1]);
    for (int64_t t = 2; t < order.n(); ++t) {
        const int64_t p = order.perm[t];
        std::vector<int64_t> ids;
        int64_t slot = -1;
        for (size_t k = 0; k < positions.size(); ++k) {
            ids.push_back(tokens[positions[k]]);
            if (k + 1 < positions.size() && positions[k] < p && p < positions[k + 1])
                slot = static_cast<int64_t>(k);
        }
        auto enc = refimpl::ref_standard_encode(params, cfg, it_input(params, cfg, ids), all);
        loss -= position_logprob(enc, 1 + slot);
        auto rep = slot_rep(enc, static_cast<size_t>(slot));
        std::vector<double> tl(static_cast<size_t>(cfg.vocab_size));
        for (int64_t j = 0; j < cfg.vocab_size; ++j) {
            double s = b_tok[j];
            for (int64_t a = 0; a < d; ++a) s += rep[a] * w_tok[a * cfg.vocab_size + j];
            tl[static_cast<size_t>(j)] = s;
        }
        const double mx = *std::max_element(tl.begin(), tl.end());
        double z = 0.0;
        for (double v : tl) z += std::exp(v - mx);
        loss -= tl[static_cast<size_t>(tokens[p])] - mx - std::log(z);
        positions.insert(std::upper_bound(positions.begin(), positions.end(), p), p);
    }
    std::vector<int64_t> ids;
    for (int64_t q : positions) ids.push_back(tokens[q]);
    auto enc = refimpl::ref_standard_encode(params, cfg, it_input(params, cfg, ids), all);
    loss -= position_logprob(enc, 0);
    return loss;
}

}  // namespace

TEST_CASE("insertion-transformer encoder matches the independent reference") {
    auto cfg = small_config();
    ITVanillaModel<double> model(cfg, 101);
    std::vector<int64_t> ids{kBos, 5, 9, 4, kEos};
    auto enc = model.encode_context(ids);
    auto ref = refimpl::ref_standard_encode(model.params(), cfg,
                                            it_input(model.params(), cfg, ids),
                                            [](int64_t, int64_t) { return true; });
    for (int64_t i = 0; i < 5; ++i)
        for (int64_t k = 0; k < cfg.d_model; ++k)
            CHECK(std::abs(enc.val()[i * cfg.d_model + k] - ref[i][k]) < 1e-9);
    CHECK_THROWS_AS(model.encode_context({}), ValueError);
}

TEST_CASE("insertion-transformer zero-head step loss is the uniform value") {
    auto cfg = small_config();
    cfg.vocab_size = 10;
    ITVanillaModel<double> model(cfg, 103);
    zero_param(model.params(), "heads.pos.weight");
    zero_param(model.params(), "heads.term.weight");
    zero_param(model.params(), "heads.token.weight");
    zero_param(model.params(), "heads.token.bias");
    auto loss = model.step_loss({kBos, kEos}, 0, 7);
    CHECK(loss.item() ==
          doctest::Approx(std::log(2.0) + std::log(10.0)).epsilon(1e-9));
    CHECK_THROWS_AS(model.step_loss({kBos, kEos}, 1, 7), IndexError);
    CHECK_THROWS_AS(model.step_loss({kBos, kEos}, -1, 7), IndexError);
    CHECK_THROWS_AS(model.step_loss({kBos, kEos}, 0, 10), IndexError);
}

TEST_CASE("inserting a token disturbs the encodings of existing positions") {
    auto cfg = small_config();
    ITVanillaModel<double> model(cfg, 107);
    auto before = model.encode_context({kBos, 7, kEos});
    auto after = model.encode_context({kBos, 7, 9, kEos});
    double diff = 0.0;
    for (int64_t i = 0; i < 2; ++i)  // BOS and the first token keep indices 0,1
        for (int64_t k = 0; k < cfg.d_model; ++k)
            diff = std::max(diff, std::abs(before.val()[i * cfg.d_model + k] -
                                           after.val()[i * cfg.d_model + k]));
    CHECK(diff > 1e-9);
}

TEST_CASE("insertion-transformer distributions normalize") {
    auto cfg = small_config();
    ITVanillaModel<double> model(cfg, 109);
    auto dist = model.step_distributions(model.encode_context({kBos, 6, 11, 4, kEos}));
    double psum = 0.0;
    for (double lp : dist.position_logprobs.val()) psum += std::exp(lp);
    CHECK(psum == doctest::Approx(1.0).epsilon(1e-6));
    for (int64_t s = 0; s < dist.token_logprobs.rows(); ++s) {
        double tsum = 0.0;
        for (int64_t j = 0; j < cfg.vocab_size; ++j)
            tsum += std::exp(dist.token_logprobs.val()[s * cfg.vocab_size + j]);
        CHECK(tsum == doctest::Approx(1.0).epsilon(1e-6));
    }
    // step_loss extracts exactly the two log-probabilities it should
    auto loss = model.step_loss({kBos, 6, 11, 4, kEos}, 2, 5);
    const double expect = -dist.position_logprobs.val()[3] -
                          dist.token_logprobs.val()[2 * cfg.vocab_size + 5];
    CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-12));
    CHECK_THROWS_AS(model.step_distributions(model.encode_context({kBos})), ValueError);
}

TEST_CASE("zero-head sequence losses of both step models share the analytic value") {
    auto cfg = small_config();
    cfg.vocab_size = 10;
    ITVanillaModel<double> it(cfg, 113);
    InsNetModel<double> ins(cfg, 127);
    for (auto* const name : {"heads.pos.weight", "heads.term.weight",
                             "heads.token.weight", "heads.token.bias"}) {
        zero_param(it.params(), name);
        zero_param(ins.params(), name);
    }
    std::vector<int64_t> tokens{kBos, 5, 8, kEos};
    Rng rng(4);
    auto order = sample_order(OrderStrategy::uniform, 4, 0, {}, rng);
    const double expect =
        std::log(2.0) + std::log(3.0) + std::log(4.0) + 2.0 * std::log(10.0);
    CHECK(it.sequence_loss(tokens, order).total.item() ==
          doctest::Approx(expect).epsilon(1e-9));
    CHECK(ins.sequence_loss(tokens, order).total.item() ==
          doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("insertion-transformer loss matches a hand-rolled enumeration of all orders") {
    ModelConfig cfg;
    cfg.vocab_size = 12;
    cfg.d_model = 8;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.dropout_p = 0.0;
    cfg.max_len = 12;
    ITVanillaModel<double> model(cfg, 131);
    std::vector<int64_t> tokens{kBos, 6, 9, 4, kEos};
    std::vector<int64_t> interior{1, 2, 3};
    int n_orders = 0;
    do {
        InsertionOrder order;
        order.perm = {0, 4, interior[0], interior[1], interior[2]};
        const double got = model.sequence_loss(tokens, order).total.item();
        const double want = handrolled_it_loss(model.params(), cfg, tokens, order);
        CHECK(std::abs(got - want) < 1e-8);
        ++n_orders;
    } while (std::next_permutation(interior.begin(), interior.end()));
    CHECK(n_orders == 6);
}

TEST_CASE("insertion-transformer re-encode counter grows with every step") {
    auto cfg = small_config();
    ITVanillaModel<double> model(cfg, 137);
    std::vector<int64_t> tokens{kBos, 5, 8, kEos};
    Rng rng(5);
    auto order = sample_order(OrderStrategy::l2r, 4, 0, {}, rng);
    counters().reset();
    model.sequence_loss(tokens, order);
    // contexts of sizes 2, 3 and the final 4, each re-encoded in full
    CHECK(counters().attention_rows ==
          static_cast<uint64_t>((2 + 3 + 4) * cfg.n_layers));
    CHECK_THROWS_AS(model.sequence_loss(tokens, InsertionOrder{{0, 1, 2, 3}}),
                    ValueError);
}

TEST_CASE("causal decoder matches the independent reference") {
    auto cfg = small_config();
    L2RModel<double> model(cfg, 139);
    std::vector<int64_t> tokens{kBos, 5, 9, 4, 7, kEos};
    auto got = model.logits(tokens);

    const auto& embed = model.params().at("embed.tokens").val();
    const auto& pos = model.params().at("embed.pos").val();
    refimpl::Mat h(tokens.size(), std::vector<double>(static_cast<size_t>(cfg.d_model)));
    for (size_t i = 0; i < tokens.size(); ++i)
        for (int64_t k = 0; k < cfg.d_model; ++k)
            h[i][static_cast<size_t>(k)] =
                embed[tokens[i] * cfg.d_model + k] + pos[static_cast<int64_t>(i) * cfg.d_model + k];
    auto enc = refimpl::ref_standard_encode(model.params(), cfg, h,
                                            [](int64_t i, int64_t j) { return j <= i; });
    auto ref = refimpl::ref_matmul(enc, model.params().at("heads.token.weight").val(),
                                   cfg.d_model, cfg.vocab_size);
    const auto& b = model.params().at("heads.token.bias").val();
    for (size_t i = 0; i < tokens.size(); ++i)
        for (int64_t j = 0; j < cfg.vocab_size; ++j)
            CHECK(std::abs(got.val()[static_cast<int64_t>(i) * cfg.vocab_size + j] -
                           (ref[i][static_cast<size_t>(j)] + b[j])) < 1e-9);
}

TEST_CASE("causal decoder with a zero token head scores uniformly") {
    auto cfg = small_config();
    cfg.vocab_size = 10;
    L2RModel<double> model(cfg, 149);
    zero_param(model.params(), "heads.token.weight");
    zero_param(model.params(), "heads.token.bias");
    std::vector<int64_t> tokens{kBos, 4, 6, 9, kEos};
    auto loss = model.sequence_loss(tokens);
    CHECK(loss.total.item() ==
          doctest::Approx(4.0 * std::log(10.0)).epsilon(1e-9));
    CHECK(loss.token_steps == 4);
    CHECK_THROWS_AS(model.sequence_loss({kBos}), ValueError);
}

TEST_CASE("causal decoder logits ignore suffix permutations") {
    auto cfg = small_config();
    L2RModel<double> model(cfg, 151);
    std::vector<int64_t> a{kBos, 5, 9, 4, 7, 11, 6, kEos};
    std::vector<int64_t> b = a;
    std::rotate(b.begin() + 5, b.begin() + 6, b.end());
    REQUIRE(a != b);
    auto la = model.logits(a);
    auto lb = model.logits(b);
    for (int64_t i = 0; i < 5; ++i)  // rows before the first perturbed position
        for (int64_t j = 0; j < cfg.vocab_size; ++j)
            CHECK(std::abs(la.val()[i * cfg.vocab_size + j] -
                           lb.val()[i * cfg.vocab_size + j]) < 1e-12);
    bool later_changed = false;
    for (int64_t j = 0; j < cfg.vocab_size; ++j)
        later_changed |= std::abs(la.val()[6 * cfg.vocab_size + j] -
                                  lb.val()[6 * cfg.vocab_size + j]) > 1e-9;
    CHECK(later_changed);
}

TEST_CASE("greedy decode stops at the end sentinel") {
    auto cfg = small_config();
    L2RModel<double> model(cfg, 157);
    auto& bias = model.params().at("heads.token.bias").val();
    bias[kEos] = 50.0;
    Rng rng(6);
    auto out = model.decode({kBos}, nullptr, 10, 0.0, rng);
    CHECK(out.tokens == std::vector<int64_t>{kBos, kEos});
    CHECK_FALSE(out.truncated);
}

TEST_CASE("decode reports truncation when the length budget runs out") {
    auto cfg = small_config();
    L2RModel<double> model(cfg, 163);
    auto& bias = model.params().at("heads.token.bias").val();
    bias[7] = 50.0;  // never emits EOS
    Rng rng(7);
    auto out = model.decode({kBos}, nullptr, 6, 0.0, rng);
    CHECK(out.truncated);
    CHECK(out.tokens.size() == 6);
    for (size_t i = 1; i < out.tokens.size(); ++i) CHECK(out.tokens[i] == 7);
    CHECK_THROWS_AS(model.decode({}, nullptr, 6, 0.0, rng), ValueError);
    CHECK_THROWS_AS(model.decode({kBos}, nullptr, cfg.max_len + 1, 0.0, rng),
                    ValueError);
}

TEST_CASE("sampling decode is deterministic for a fixed stream") {
    auto cfg = small_config();
    L2RModel<double> model(cfg, 167);
    Rng a(8), b(8);
    auto ra = model.decode({kBos, 5}, nullptr, 12, 0.8, a);
    auto rb = model.decode({kBos, 5}, nullptr, 12, 0.8, b);
    CHECK(ra.tokens == rb.tokens);
    CHECK(ra.truncated == rb.truncated);
}

TEST_CASE("causal decoder accepts a leading condition block") {
    auto cfg = small_config();
    cfg.n_condition_slots = 2;
    cfg.cond_input_dim = 6;
    L2RModel<double> model(cfg, 173);
    auto cond = model.encode_condition({0.1, -0.2, 0.3, 0.0, 0.5, -0.1});
    CHECK(cond.rows() == 2);
    CHECK(cond.cols() == cfg.d_model);
    CHECK_THROWS_AS(model.encode_condition({0.1}), ShapeError);

    std::vector<int64_t> tokens{kBos, 4, 9, kEos};
    auto with = model.sequence_loss(tokens, &cond);
    auto without = model.sequence_loss(tokens);
    CHECK(with.total.item() != without.total.item());
    CHECK(with.token_steps == 3);

    L2RModel<double> plain(small_config(), 179);
    CHECK_THROWS_AS(plain.encode_condition({0.1}), StateError);
}
