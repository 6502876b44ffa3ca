#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "insnet/bench.hpp"

using namespace insnet;

namespace {

std::string temp_path(const std::string& name) {
    return "/tmp/insnet_bench_" + name;
}

BenchResult row(ModelKind k, int64_t len, double sec, uint64_t ops) {
    BenchResult r;
    r.kind = k;
    r.length = len;
    r.epoch_seconds_median = sec;
    r.ops_attention_rows = ops;
    return r;
}

// Tiny grid that keeps every cell under a few milliseconds.
BenchConfig tiny_config() {
    BenchConfig cfg;
    cfg.lengths = {4, 6, 8};
    cfg.kinds = {ModelKind::insnet, ModelKind::it_vanilla, ModelKind::l2r};
    cfg.seqs_per_length = 4;
    cfg.measured_epochs = 3;
    cfg.vocab_size = 16;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.d_ff = 16;
    cfg.batch_size = 4;
    cfg.max_len = 16;
    cfg.seed = 5;
    cfg.min_epoch_seconds = 1e-9;  // never replicate
    return cfg;
}

// One epoch of attention rows for `count` sequences of n tokens each
// (content length + sentinels), single layer.
uint64_t one_pass_rows(ModelKind kind, int64_t length, int64_t count) {
    const int64_t n = length + 2;
    if (kind == ModelKind::it_vanilla) {
        // one re-encode of t rows per insertion step plus the final
        // termination pass over all n rows
        int64_t per = n;
        for (int64_t t = 2; t < n; ++t) per += t;
        return static_cast<uint64_t>(count * per);
    }
    return static_cast<uint64_t>(count * n);  // single encode of the sequence
}

const BenchResult& cell(const std::vector<BenchResult>& rs, ModelKind k,
                        int64_t len) {
    for (const auto& r : rs) {
        if (r.kind == k && r.length == len) return r;
    }
    throw std::runtime_error("missing bench cell");
}

}  // namespace

TEST_CASE("scaling exponent recovers exact power laws") {
    std::vector<BenchResult> rs;
    for (int64_t len : {8, 16, 32, 64}) {
        const double L = static_cast<double>(len);
        rs.push_back(row(ModelKind::insnet, len, 3.0 * L, 0));
        rs.push_back(row(ModelKind::it_vanilla, len, 0.25 * L * L, 0));
        rs.push_back(
            row(ModelKind::l2r, len, 1.0, static_cast<uint64_t>(7 * len * len * len)));
    }
    CHECK(scaling_exponent(rs, ModelKind::insnet) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(scaling_exponent(rs, ModelKind::it_vanilla) ==
          doctest::Approx(2.0).epsilon(1e-12));
    CHECK(scaling_exponent(rs, ModelKind::l2r, true) ==
          doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("scaling exponent rejects degenerate inputs") {
    std::vector<BenchResult> rs = {row(ModelKind::insnet, 8, 1.0, 10)};
    CHECK_THROWS_AS(scaling_exponent(rs, ModelKind::insnet), ValueError);
    rs.push_back(row(ModelKind::insnet, 16, 0.0, 10));
    CHECK_THROWS_AS(scaling_exponent(rs, ModelKind::insnet), ValueError);
    CHECK_THROWS_AS(scaling_exponent(rs, ModelKind::l2r), ValueError);
}

TEST_CASE("bench csv round trip is exact") {
    std::vector<BenchResult> rs = {
        row(ModelKind::insnet, 20, 0.12345678901234567, 123456789ull),
        row(ModelKind::it_vanilla, 40, 7.0000000000000004e-3, 42ull),
        row(ModelKind::l2r, 80, 1.5, 0ull),
    };
    const std::string path = temp_path("round.csv");
    write_bench_csv(path, rs);
    const auto back = read_bench_csv(path);
    REQUIRE(back.size() == rs.size());
    for (size_t i = 0; i < rs.size(); ++i) {
        CHECK(back[i].kind == rs[i].kind);
        CHECK(back[i].length == rs[i].length);
        CHECK(back[i].epoch_seconds_median == rs[i].epoch_seconds_median);
        CHECK(back[i].ops_attention_rows == rs[i].ops_attention_rows);
    }
    std::remove(path.c_str());
}

TEST_CASE("bench csv rejects malformed files") {
    const std::string path = temp_path("bad.csv");
    {
        std::ofstream out(path);
        out << "model,length\n";
    }
    CHECK_THROWS_WITH_AS(read_bench_csv(path), doctest::Contains("header"),
                         ValueError);
    {
        std::ofstream out(path);
        out << "model,length,epoch_seconds_median,ops_attention_rows\n";
        out << "insnet,20,0.5,100\n";
        out << "insnet,twenty,0.5,100\n";
    }
    CHECK_THROWS_WITH_AS(read_bench_csv(path), doctest::Contains("line 3"),
                         ValueError);
    CHECK_THROWS_AS(read_bench_csv(temp_path("absent.csv")), IoError);
    std::remove(path.c_str());
}

TEST_CASE("tiny measurement grid matches the exact row-count oracle") {
    const auto cfg = tiny_config();
    const auto rs = run_bench(cfg);
    REQUIRE(rs.size() == cfg.kinds.size() * cfg.lengths.size());

    for (ModelKind k : cfg.kinds) {
        for (int64_t len : cfg.lengths) {
            const auto& r = cell(rs, k, len);
            CHECK(r.replicas == 1);
            CHECK(r.epoch_seconds_median > 0.0);
            CHECK(r.ops_attention_rows ==
                  one_pass_rows(k, len, cfg.seqs_per_length));
        }
    }

    // the stepwise re-encoder grows clearly faster than the single-pass models
    const double e_ins = scaling_exponent(rs, ModelKind::insnet, true);
    const double e_it = scaling_exponent(rs, ModelKind::it_vanilla, true);
    const double e_l2r = scaling_exponent(rs, ModelKind::l2r, true);
    CHECK(e_it > e_ins + 0.5);
    CHECK(e_l2r == doctest::Approx(e_ins).epsilon(1e-12));
}

TEST_CASE("replication changes timing resolution but not the reported rows") {
    auto slow = tiny_config();
    slow.kinds = {ModelKind::insnet};
    slow.min_epoch_seconds = 0.004;  // far above a tiny epoch: forces doubling
    const auto grown = run_bench(slow);

    auto fast = slow;
    fast.min_epoch_seconds = 1e-9;
    const auto flat = run_bench(fast);

    REQUIRE(grown.size() == flat.size());
    for (size_t i = 0; i < grown.size(); ++i) {
        CHECK(grown[i].ops_attention_rows == flat[i].ops_attention_rows);
        CHECK(grown[i].ops_attention_rows ==
              one_pass_rows(ModelKind::insnet, grown[i].length,
                            slow.seqs_per_length));
        CHECK(grown[i].epoch_seconds_median > 0.0);
        CHECK(grown[i].replicas >= flat[i].replicas);
    }
}

TEST_CASE("bench config validation") {
    auto cfg = tiny_config();
    cfg.lengths = {4, 6};
    CHECK_THROWS_AS(cfg.validate(), ValueError);
    cfg = tiny_config();
    cfg.lengths = {4, 8, 6};
    CHECK_THROWS_AS(cfg.validate(), ValueError);
    cfg = tiny_config();
    cfg.lengths = {4, 6, 15};  // 15 + sentinels exceeds max_len 16
    CHECK_THROWS_AS(cfg.validate(), ValueError);
    cfg = tiny_config();
    cfg.seqs_per_length = 5;  // not a batch multiple
    CHECK_THROWS_AS(cfg.validate(), ValueError);
    cfg = tiny_config();
    cfg.measured_epochs = 2;
    CHECK_THROWS_AS(cfg.validate(), ValueError);
    cfg = tiny_config();
    cfg.kinds.clear();
    CHECK_THROWS_AS(cfg.validate(), ValueError);
}

TEST_CASE("summary rendering is pure over its inputs") {
    std::vector<MetricRow> metrics = {
        {0, "insnet", "lm.token_nll", 2.3456789, 0.0},
        {0, "insnet", "lm.seq_nll", 94.5, 0.0},
        {0, "l2r", "lm.token_nll", 2.5, 0.0},
        {0, "insnet", "control.incorporation_pct", 100.0, 0.0},
        {0, "l2r", "control.incorporation_pct", 82.5, 0.0},
        {0, "insnet", "decode.theta_term", -0.75, 0.0},
    };
    std::vector<BenchResult> bench;
    for (int64_t len : {8, 16, 32}) {
        const double L = static_cast<double>(len);
        bench.push_back(row(ModelKind::insnet, len, 1e-3 * L, uint64_t(10 * len)));
        bench.push_back(
            row(ModelKind::it_vanilla, len, 1e-4 * L * L, uint64_t(len * len)));
    }

    const auto a = render_summary(metrics, bench);
    const auto b = render_summary(metrics, bench);
    CHECK(a == b);

    // re-rendering from persisted copies is byte-identical too
    const std::string mpath = temp_path("metrics.csv");
    const std::string bpath = temp_path("bench.csv");
    write_metrics_csv(mpath, metrics);
    write_bench_csv(bpath, bench);
    CHECK(render_summary(read_metrics_csv(mpath), read_bench_csv(bpath)) == a);
    std::remove(mpath.c_str());
    std::remove(bpath.c_str());

    CHECK(a.find("## Language modeling") != std::string::npos);
    CHECK(a.find("## Constrained generation") != std::string::npos);
    CHECK(a.find("## Decoding") != std::string::npos);
    CHECK(a.find("## Efficiency") != std::string::npos);
    CHECK(a.find("| insnet |") != std::string::npos);
    CHECK(a.find("theta_term = -0.75") != std::string::npos);
    CHECK(a.find("Epoch-time ratio insnet/it_vanilla at length 32") !=
          std::string::npos);
    CHECK(a.find("## Attribute generalization") == std::string::npos);

    // sections without rows disappear entirely
    const auto lean = render_summary({}, bench);
    CHECK(lean.find("## Language modeling") == std::string::npos);
    CHECK(lean.find("## Efficiency") != std::string::npos);
}
