#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "insnet/config.hpp"
#include "insnet/datagen.hpp"

using namespace insnet;

namespace {

std::string temp_path(const std::string& name) {
    return "/tmp/insnet_config_" + name;
}

RunSettings settings_of(const std::vector<std::string>& lines) {
    ConfigMap map;
    for (const auto& line : lines) map.set_line(line, "test");
    return map.to_settings();
}

}  // namespace

TEST_CASE("empty map yields defaults") {
    const auto s = ConfigMap{}.to_settings();
    CHECK(s.task == TaskKind::story);
    CHECK(s.kind == ModelKind::insnet);
    CHECK(s.d_model == 64);
    CHECK(s.strategy == OrderStrategy::uniform);
    CHECK(s.theta_auto);
    CHECK_FALSE(s.forced_termination);
    CHECK(s.bench_lengths == std::vector<int64_t>{20, 40, 80, 160});
    s.validate();
}

TEST_CASE("file parsing skips comments and trims whitespace") {
    const std::string path = temp_path("parse.cfg");
    {
        std::ofstream out(path);
        out << "# run shape\n";
        out << "\n";
        out << "  model.d_model = 48  \n";
        out << "train.lr=1e-3\n";
        out << "order.strategy=keyword_first_l2r\n";
    }
    ConfigMap map;
    map.load_file(path);
    const auto s = map.to_settings();
    CHECK(s.d_model == 48);
    CHECK(s.lr == doctest::Approx(1e-3).epsilon(1e-15));
    CHECK(s.strategy == OrderStrategy::keyword_first_l2r);
    std::remove(path.c_str());
}

TEST_CASE("later assignments win") {
    ConfigMap map;
    map.set_line("model.d_model=32", "a");
    map.set_line("model.d_model=96", "b");
    CHECK(map.to_settings().d_model == 96);
}

TEST_CASE("unknown keys are rejected with the key named") {
    ConfigMap map;
    CHECK_THROWS_WITH_AS(map.set_line("model.dmodel=64", "cli"),
                         doctest::Contains("model.dmodel"), ValueError);
    CHECK_THROWS_AS(map.set_line("no_equals_sign", "file.cfg:3"), ValueError);
    CHECK_THROWS_WITH_AS(map.set_line("=5", "cli"), doctest::Contains("cli"),
                         ValueError);
}

TEST_CASE("malformed values name the offending key") {
    CHECK_THROWS_WITH_AS(settings_of({"model.d_model=abc"}),
                         doctest::Contains("model.d_model"), ValueError);
    CHECK_THROWS_WITH_AS(settings_of({"train.lr=fast"}),
                         doctest::Contains("train.lr"), ValueError);
    CHECK_THROWS_WITH_AS(settings_of({"decode.greedy=maybe"}),
                         doctest::Contains("decode.greedy"), ValueError);
    CHECK_THROWS_WITH_AS(settings_of({"bench.lengths=4,,8"}),
                         doctest::Contains("bench.lengths"), ValueError);
    CHECK_THROWS_WITH_AS(settings_of({"data.seed=-1"}),
                         doctest::Contains("data.seed"), ValueError);
    CHECK_THROWS_WITH_AS(settings_of({"model.kind=transformer"}),
                         doctest::Contains("transformer"), ValueError);
}

TEST_CASE("typed value parsers") {
    CHECK(parse_int("k", "-12") == -12);
    CHECK(parse_uint("k", "18446744073709551615") == 18446744073709551615ull);
    CHECK(parse_real("k", "2.5e-4") == doctest::Approx(2.5e-4).epsilon(1e-15));
    CHECK(parse_flag("k", "true"));
    CHECK_FALSE(parse_flag("k", "false"));
    CHECK(parse_int_list("k", "1, 2,3") == std::vector<int64_t>{1, 2, 3});
    CHECK_THROWS_AS(parse_int("k", "12x"), ValueError);
    CHECK_THROWS_AS(parse_int("k", ""), ValueError);
    CHECK_THROWS_AS(parse_uint("k", "-3"), ValueError);
    CHECK_THROWS_AS(parse_real("k", "1.2.3"), ValueError);
    CHECK_THROWS_AS(parse_int_list("k", ""), ValueError);
}

TEST_CASE("enumerated keys accept their full value sets") {
    CHECK(settings_of({"model.kind=it_vanilla"}).kind == ModelKind::it_vanilla);
    CHECK(settings_of({"model.kind=l2r"}).kind == ModelKind::l2r);
    CHECK(settings_of({"data.task=caption"}).task == TaskKind::caption);
    CHECK(settings_of({"data.task=random"}).task == TaskKind::random);
    CHECK(settings_of({"order.strategy=l2r"}).strategy == OrderStrategy::l2r);
    CHECK(settings_of({"order.strategy=keyword_first_uniform"}).strategy ==
          OrderStrategy::keyword_first_uniform);

    auto forced = settings_of({"decode.termination=forced"});
    CHECK(forced.forced_termination);
    auto theta = settings_of({"decode.theta=-1.5"});
    CHECK_FALSE(theta.theta_auto);
    CHECK(theta.theta == doctest::Approx(-1.5));
    CHECK(settings_of({"decode.theta=auto"}).theta_auto);
    CHECK_THROWS_AS(settings_of({"decode.termination=sometimes"}), ValueError);
}

TEST_CASE("validation rejects inconsistent settings") {
    CHECK_THROWS_AS(settings_of({"data.keyword_prefix=true"}).validate(),
                    ValueError);  // only the causal baseline reads the prefix
    CHECK_THROWS_AS(
        settings_of({"data.keyword_prefix=true", "model.kind=l2r",
                     "data.task=caption"})
            .validate(),
        ValueError);
    settings_of({"data.keyword_prefix=true", "model.kind=l2r",
                 "order.strategy=l2r"})
        .validate();

    CHECK_THROWS_AS(settings_of({"decode.temperature=0"}).validate(), ValueError);
    CHECK_THROWS_AS(settings_of({"bench.lengths=20,20,40"}).validate(), ValueError);
    CHECK_THROWS_AS(settings_of({"bench.lengths=20,40"}).validate(), ValueError);
    CHECK_THROWS_AS(settings_of({"bench.epochs=2"}).validate(), ValueError);
    CHECK_THROWS_AS(settings_of({"data.vocab_size=4"}).validate(), ValueError);
    CHECK_THROWS_AS(settings_of({"model.d_model=30"}).validate(),
                    ValueError);  // not divisible by the head count
}

TEST_CASE("conditioning follows the task") {
    const auto story = settings_of({"data.task=story"});
    CHECK(story.n_condition_slots() == 0);
    CHECK(story.cond_input_dim() == 0);

    const auto caption = settings_of({"data.task=caption"});
    CHECK(caption.n_condition_slots() == 4);
    CHECK(caption.cond_input_dim() == Grid::flat_size());

    const auto mc = caption.model_config(32);
    CHECK(mc.vocab_size == 32);
    CHECK(mc.n_condition_slots == 4);
    CHECK(mc.cond_input_dim == Grid::flat_size());
    CHECK(mc.d_model == 64);
}

TEST_CASE("train config carries the training keys") {
    const auto s = settings_of({"train.lr=5e-4", "train.warmup_iters=7",
                                "train.total_iters=99", "train.batch_size=8",
                                "train.weight_decay=0.01", "train.grad_clip_norm=2",
                                "train.seed=77", "train.eval_interval=11",
                                "order.strategy=keyword_first_uniform"});
    const auto t = s.train_config();
    CHECK(t.lr == doctest::Approx(5e-4));
    CHECK(t.warmup_iters == 7);
    CHECK(t.total_iters == 99);
    CHECK(t.batch_size == 8);
    CHECK(t.weight_decay == doctest::Approx(0.01));
    CHECK(t.grad_clip_norm == doctest::Approx(2.0));
    CHECK(t.seed == 77);
    CHECK(t.eval_interval == 11);
    CHECK(t.strategy == OrderStrategy::keyword_first_uniform);
}

TEST_CASE("resolved lines reproduce the settings exactly") {
    const auto s = settings_of({"data.task=caption", "model.kind=l2r",
                                "model.d_model=48", "train.lr=3.0000000000000001e-4",
                                "decode.theta=-0.125", "decode.termination=forced",
                                "bench.lengths=8,16,32", "decode.greedy=true"});
    ConfigMap again;
    for (const auto& line : resolved_lines(s)) again.set_line(line, "echo");
    const auto r = again.to_settings();

    CHECK(resolved_lines(r) == resolved_lines(s));
    CHECK(r.task == s.task);
    CHECK(r.kind == s.kind);
    CHECK(r.d_model == 48);
    CHECK(r.lr == s.lr);  // bit-exact through the 17-digit echo
    CHECK(r.theta == s.theta);
    CHECK_FALSE(r.theta_auto);
    CHECK(r.forced_termination);
    CHECK(r.greedy);
    CHECK(r.bench_lengths == std::vector<int64_t>{8, 16, 32});
}

TEST_CASE("resolved lines cover every key the parser accepts") {
    const auto lines = resolved_lines(RunSettings{});
    ConfigMap map;
    for (const auto& line : lines) map.set_line(line, "echo");
    CHECK(map.entries().size() == lines.size());
    // `theta=auto` round-trips through the sentinel spelling
    bool saw_theta = false;
    for (const auto& line : lines) {
        if (line.rfind("decode.theta=", 0) == 0) {
            saw_theta = true;
            CHECK(line == "decode.theta=auto");
        }
    }
    CHECK(saw_theta);
}
