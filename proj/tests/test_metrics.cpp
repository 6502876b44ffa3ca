#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "insnet/metrics.hpp"

using namespace insnet;

namespace {

std::vector<int64_t> seq(std::initializer_list<int64_t> ids) { return ids; }

std::string temp_path(const std::string& name) {
    return "/tmp/insnet_metrics_" + name;
}

}  // namespace

TEST_CASE("bleu of an identical pair is 100 at every order") {
    const std::vector<std::vector<int64_t>> corpus = {seq({5, 6, 7, 8, 9})};
    for (int n = 1; n <= 4; ++n) {
        CHECK(corpus_bleu(corpus, corpus, n) == doctest::Approx(100.0).epsilon(1e-12));
    }
}

TEST_CASE("bleu hand-worked fixtures") {
    // repeated unigram: p1 clipped to 1/4, no bigram overlap at all
    CHECK(corpus_bleu({seq({1, 1, 1, 1})}, {seq({1, 2, 3, 4})}, 1) ==
          doctest::Approx(25.0).epsilon(1e-9));
    CHECK(corpus_bleu({seq({1, 1, 1, 1})}, {seq({1, 2, 3, 4})}, 2) == 0.0);

    // short exact prefix: all precisions 1, brevity penalty exp(1 - 4/3)
    const double bp = std::exp(1.0 - 4.0 / 3.0);
    CHECK(corpus_bleu({seq({1, 2, 3})}, {seq({1, 2, 3, 4})}, 1) ==
          doctest::Approx(100.0 * bp).epsilon(1e-9));
    CHECK(corpus_bleu({seq({1, 2, 3})}, {seq({1, 2, 3, 4})}, 2) ==
          doctest::Approx(100.0 * bp).epsilon(1e-9));

    // clipping with a long hypothesis: p1 = 2/3, p2 = 1/2, no penalty
    CHECK(corpus_bleu({seq({1, 2, 2})}, {seq({1, 2})}, 2) ==
          doctest::Approx(100.0 * std::sqrt(1.0 / 3.0)).epsilon(1e-9));

    // corpus pooling: counts pool across pairs before the precision ratio
    const std::vector<std::vector<int64_t>> hyps = {seq({1, 2}), seq({3})};
    const std::vector<std::vector<int64_t>> refs = {seq({1, 2}), seq({4})};
    CHECK(corpus_bleu(hyps, refs, 1) == doctest::Approx(100.0 * 2.0 / 3.0).epsilon(1e-9));
    CHECK(corpus_bleu(hyps, refs, 2) ==
          doctest::Approx(100.0 * std::sqrt(2.0 / 3.0)).epsilon(1e-9));
}

TEST_CASE("bleu input validation") {
    CHECK_THROWS_AS(corpus_bleu({}, {}, 1), ValueError);
    CHECK_THROWS_AS(corpus_bleu({seq({1})}, {seq({1}), seq({2})}, 1), ValueError);
    CHECK_THROWS_AS(corpus_bleu({seq({1})}, {seq({1})}, 0), ValueError);
    CHECK_THROWS_AS(corpus_bleu({seq({1})}, {seq({1})}, 5), ValueError);
}

TEST_CASE("in-order subsequence matching") {
    CHECK(in_order_subsequence(seq({}), seq({})));
    CHECK(in_order_subsequence(seq({2, 5}), seq({1, 2, 3, 5, 9})));
    CHECK(in_order_subsequence(seq({2, 2}), seq({2, 1, 2})));
    CHECK_FALSE(in_order_subsequence(seq({5, 2}), seq({1, 2, 3, 5, 9})));
    CHECK_FALSE(in_order_subsequence(seq({2, 2}), seq({2, 1, 3})));
    CHECK_FALSE(in_order_subsequence(seq({7}), seq({})));
}

TEST_CASE("incorporation rate counts fully ordered hits") {
    const std::vector<std::vector<int64_t>> kws = {seq({1, 2}), seq({4}), seq({9, 8})};
    const std::vector<std::vector<int64_t>> outs = {seq({0, 1, 5, 2}), seq({4}),
                                                    seq({8, 9})};
    CHECK(incorporation_rate(kws, outs) == doctest::Approx(2.0 / 3.0));
    CHECK_THROWS_AS(incorporation_rate({}, {}), ValueError);
    CHECK_THROWS_AS(incorporation_rate(kws, {seq({1})}), ValueError);
}

TEST_CASE("attribute accuracy against scenes") {
    std::vector<SceneSpec> scenes(4);
    scenes[0] = {ShapeKind::cube, 4, 0};      // red cube
    scenes[1] = {ShapeKind::sphere, 1, 0};    // blue sphere
    scenes[2] = {ShapeKind::cylinder, 6, 0};  // purple cylinder
    scenes[3] = {ShapeKind::cube, 0, 0};      // gray cube
    std::vector<Attributes> pred(4);
    pred[0] = {"red", "cube"};     // both right
    pred[1] = {"blue", "cube"};    // color only
    pred[2] = {"red", "cylinder"}; // shape only
    pred[3] = {"", ""};            // nothing extracted
    const auto s = attribute_scores(pred, scenes);
    CHECK(s.color_acc == doctest::Approx(0.5));
    CHECK(s.shape_acc == doctest::Approx(0.5));
    CHECK(s.joint_acc == doctest::Approx(0.25));
    CHECK_THROWS_AS(attribute_scores({}, {}), ValueError);
    CHECK_THROWS_AS(attribute_scores(pred, {scenes[0]}), ValueError);
}

TEST_CASE("metrics csv round trip and comparison") {
    std::vector<MetricRow> rows;
    rows.push_back({1, "train", "loss", 7.783224103452845, 0.125});
    rows.push_back({1, "train", "lr", 2e-6, 0.125});
    rows.push_back({200, "dev", "token_nll", -0.0001220703125, 3.5});
    const auto path = temp_path("roundtrip.csv");
    write_metrics_csv(path, rows);
    const auto back = read_metrics_csv(path);
    REQUIRE(back.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].iter == rows[i].iter);
        CHECK(back[i].split == rows[i].split);
        CHECK(back[i].metric == rows[i].metric);
        CHECK(back[i].value == rows[i].value);  // 17 digits round-trip doubles
        CHECK(back[i].wallclock_s == rows[i].wallclock_s);
    }

    auto other = rows;
    other[2].wallclock_s = 99.0;
    CHECK(metrics_equal_ignoring_wallclock(rows, other));
    other[1].value = 3e-6;
    CHECK_FALSE(metrics_equal_ignoring_wallclock(rows, other));
    other.pop_back();
    CHECK_FALSE(metrics_equal_ignoring_wallclock(rows, other));
    std::remove(path.c_str());
}

TEST_CASE("metrics csv rejects malformed files") {
    const auto bad_header = temp_path("bad_header.csv");
    {
        std::ofstream f(bad_header);
        f << "iteration,split,metric,value,wallclock_s\n";
    }
    CHECK_THROWS_AS(read_metrics_csv(bad_header), ValueError);

    const auto bad_row = temp_path("bad_row.csv");
    {
        std::ofstream f(bad_row);
        f << "iter,split,metric,value,wallclock_s\n";
        f << "1,train,loss,2.5,0.1\n";
        f << "two,train,loss,2.5,0.1\n";
    }
    CHECK_THROWS_WITH_AS(read_metrics_csv(bad_row),
                         doctest::Contains("line 3"), ValueError);
    CHECK_THROWS_AS(read_metrics_csv(temp_path("missing_file.csv")), IoError);
    std::remove(bad_header.c_str());
    std::remove(bad_row.c_str());
}
