#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "insnet/bench.hpp"
#include "insnet/config.hpp"
#include "insnet/datagen.hpp"
#include "insnet/decoding.hpp"
#include "insnet/metrics.hpp"
#include "insnet/training.hpp"
#include "insnet/properties.hpp"

namespace fs = std::filesystem;
using namespace insnet;

namespace {

// Flags shared by every subcommand; per-command flags live beside them.
struct CliArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::string seed;  // forwarded to the command's own seed key
    std::string data_dir;
    std::string ckpt_path;
    std::string resume_path;
    std::string keywords;
    std::string scene;
    std::string lengths;
    std::string split = "dev";
};

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y%m%d-%H%M%S");
    return out.str();
}

// Creates the run directory, timestamped under runs/ unless --out was given.
fs::path make_run_dir(const std::string& out_flag, const std::string& command) {
    if (!out_flag.empty()) {
        fs::create_directories(out_flag);
        return fs::path(out_flag);
    }
    const fs::path base = fs::path("runs") / (command + "-" + timestamp_utc());
    fs::path dir = base;
    for (int k = 2; fs::exists(dir); ++k) {
        dir = base;
        dir += "-" + std::to_string(k);
    }
    fs::create_directories(dir);
    return dir;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& line : lines) out << line << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

RunSettings build_settings(const CliArgs& args, const std::string& seed_key) {
    ConfigMap cm;
    // a dataset directory carries its own data.* contract; explicit settings win
    if (!args.data_dir.empty()) {
        const fs::path recorded = fs::path(args.data_dir) / "config.resolved";
        if (fs::exists(recorded)) {
            ConfigMap base;
            base.load_file(recorded.string());
            for (const auto& [key, value] : base.entries()) {
                if (key.rfind("data.", 0) == 0) {
                    cm.set_line(key + "=" + value, recorded.string());
                }
            }
        }
    }
    if (!args.config_path.empty()) cm.load_file(args.config_path);
    for (const auto& kv : args.overrides) cm.set_line(kv, "--set");
    // the constraint flags name their task directly
    if (!args.scene.empty()) cm.set_line("data.task=caption", "--scene");
    if (!args.keywords.empty() && args.scene.empty()) {
        cm.set_line("data.task=story", "--keywords");
    }
    if (!args.seed.empty()) cm.set_line(seed_key + "=" + args.seed, "--seed");
    if (!args.lengths.empty()) cm.set_line("bench.lengths=" + args.lengths, "--lengths");
    return cm.to_settings();
}

fs::path start_run(const CliArgs& args, const std::string& command,
                   const RunSettings& settings) {
    const fs::path dir = make_run_dir(args.out_dir, command);
    write_lines(dir / "config.resolved", resolved_lines(settings));
    std::cout << "run directory: " << dir.string() << '\n';
    return dir;
}

struct TaskData {
    const Vocab* vocab = nullptr;  // null for the uniform-random task
    std::vector<Example> train;
    std::vector<Example> dev;
    std::vector<Example> test;  // caption generalization split
};

int64_t task_vocab_size(const RunSettings& s) {
    switch (s.task) {
        case TaskKind::story:
            return story_vocab().size();
        case TaskKind::caption:
            return caption_vocab().size();
        default:
            return s.data_vocab_size;
    }
}

TaskData make_data(const RunSettings& s, const std::string& data_dir) {
    TaskData out;
    const bool load = !data_dir.empty();
    const fs::path dir(data_dir);
    switch (s.task) {
        case TaskKind::story: {
            out.vocab = &story_vocab();
            if (load) {
                out.train = load_story_dataset((dir / "train.txt").string(), *out.vocab);
                out.dev = load_story_dataset((dir / "dev.txt").string(), *out.vocab);
            } else {
                out.train = gen_toy_stories(s.n_train, s.data_seed).examples;
                out.dev = gen_toy_stories(s.n_dev, s.data_seed + 1).examples;
            }
            break;
        }
        case TaskKind::caption: {
            out.vocab = &caption_vocab();
            if (load) {
                out.train = load_caption_dataset((dir / "train.txt").string(), *out.vocab);
                out.dev = load_caption_dataset((dir / "dev.txt").string(), *out.vocab);
                out.test = load_caption_dataset((dir / "test.txt").string(), *out.vocab);
            } else {
                out.train = gen_cogent_caption(CaptionSplit::a_train, s.n_train, s.data_seed);
                out.dev = gen_cogent_caption(CaptionSplit::a_dev, s.n_dev, s.data_seed + 1);
                out.test = gen_cogent_caption(CaptionSplit::b_test, s.n_test, s.data_seed + 2);
            }
            break;
        }
        default: {
            if (load) {
                out.train = load_random_dataset((dir / "train.txt").string());
                out.dev = load_random_dataset((dir / "dev.txt").string());
            } else {
                out.train = gen_random_sequences(s.data_vocab_size, s.data_length,
                                                 s.n_train, s.data_seed);
                out.dev = gen_random_sequences(s.data_vocab_size, s.data_length,
                                               s.n_dev, s.data_seed + 1);
            }
            break;
        }
    }
    if (s.keyword_prefix) {
        const int64_t sep = story_vocab().id_of("<sep>");
        for (auto* split : {&out.train, &out.dev}) {
            for (auto& ex : *split) ex = keyword_prefix_example(ex, sep);
        }
    }
    return out;
}

DecodeControls make_controls(const RunSettings& s, double theta) {
    DecodeControls controls;
    controls.position_temperature = s.temperature;
    controls.token_temperature = s.temperature;
    controls.max_steps = s.max_steps;
    controls.greedy = s.greedy;
    controls.termination =
        s.forced_termination ? TerminationMode::forced_min_loglik : TerminationMode::free;
    controls.theta_term = theta;
    return controls;
}

std::vector<int64_t> keyword_ids(const Example& ex) {
    std::vector<int64_t> out;
    for (int64_t p : ex.keyword_positions) {
        out.push_back(ex.ids[static_cast<size_t>(p)]);
    }
    return out;
}

// Continues the causal baseline from a keyword prefix; returns the body after
// the separator with sentinels stripped.
std::vector<int64_t> l2r_keyword_body(L2RModel<float>& model,
                                      const std::vector<int64_t>& kws,
                                      double temperature, Rng& rng) {
    std::vector<int64_t> prefix{kBos};
    prefix.insert(prefix.end(), kws.begin(), kws.end());
    prefix.push_back(story_vocab().id_of("<sep>"));
    const auto res =
        model.decode(prefix, nullptr, model.config().max_len, temperature, rng);
    std::vector<int64_t> body(res.tokens.begin() +
                                  static_cast<int64_t>(prefix.size()),
                              res.tokens.end());
    while (!body.empty() && (body.back() == kEos || body.back() == kPad)) body.pop_back();
    return body;
}

std::vector<int64_t> interior_ids(const Example& ex) {
    return std::vector<int64_t>(ex.ids.begin() + 1, ex.ids.end() - 1);
}

// --- commands ---------------------------------------------------------------

int cmd_gen_data(const CliArgs& args) {
    const RunSettings s = build_settings(args, "data.seed");
    s.validate();
    const fs::path dir = start_run(args, "gen-data", s);
    const TaskData data = make_data(s, "");
    switch (s.task) {
        case TaskKind::story:
            save_story_dataset((dir / "train.txt").string(), data.train, *data.vocab);
            save_story_dataset((dir / "dev.txt").string(), data.dev, *data.vocab);
            break;
        case TaskKind::caption:
            save_caption_dataset((dir / "train.txt").string(), data.train, *data.vocab);
            save_caption_dataset((dir / "dev.txt").string(), data.dev, *data.vocab);
            save_caption_dataset((dir / "test.txt").string(), data.test, *data.vocab);
            break;
        default:
            save_random_dataset((dir / "train.txt").string(), data.train);
            save_random_dataset((dir / "dev.txt").string(), data.dev);
            break;
    }
    std::cout << "wrote " << data.train.size() << " train / " << data.dev.size()
              << " dev";
    if (!data.test.empty()) std::cout << " / " << data.test.size() << " test";
    std::cout << " examples for task " << task_name(s.task) << '\n';
    return 0;
}

int cmd_train(const CliArgs& args) {
    const RunSettings s = build_settings(args, "train.seed");
    s.validate();
    const fs::path dir = start_run(args, "train", s);
    const TaskData data = make_data(s, args.data_dir);

    Trainer<float> trainer(s.kind, s.model_config(task_vocab_size(s)), s.train_config());
    if (!args.resume_path.empty()) trainer.resume(args.resume_path);
    const auto rows = trainer.run(data.train, data.dev);
    write_metrics_csv((dir / "metrics.csv").string(), rows);
    trainer.save((dir / "checkpoint.bin").string());

    const auto stats = trainer.evaluate(data.dev);
    std::cout << "trained " << model_kind_name(s.kind) << " for "
              << trainer.iteration() << " iterations\n"
              << "dev token NLL " << stats.token_nll << ", sequence NLL "
              << stats.seq_nll << '\n'
              << "checkpoint: " << (dir / "checkpoint.bin").string() << '\n';
    return 0;
}

int cmd_eval(const CliArgs& args) {
    RunSettings s = build_settings(args, "decode.seed");
    if (args.ckpt_path.empty()) throw ValueError("eval needs --ckpt");
    if (args.split != "dev" && args.split != "test") {
        throw ValueError("--split must be dev or test");
    }
    auto trainer = Trainer<float>::from_checkpoint(args.ckpt_path);
    s.kind = trainer.kind();  // the checkpoint, not the config, fixes the model
    s.validate();
    const fs::path dir = start_run(args, "eval", s);
    const TaskData data = make_data(s, args.data_dir);
    if (trainer.model_config().vocab_size != task_vocab_size(s)) {
        throw ValueError("checkpoint vocabulary does not match data.task");
    }
    const std::vector<Example>* split = &data.dev;
    if (args.split == "test") {
        if (data.test.empty()) throw ValueError("task has no test split");
        split = &data.test;
    }
    const std::string model = model_kind_name(trainer.kind());
    const int64_t iter = trainer.iteration();
    std::vector<MetricRow> rows;

    const auto stats = trainer.evaluate(*split);
    rows.push_back({iter, model, "lm.token_nll", stats.token_nll, 0.0});
    rows.push_back({iter, model, "lm.seq_nll", stats.seq_nll, 0.0});
    rows.push_back({iter, model, "lm.interior_token_nll", stats.interior_token_nll, 0.0});

    // evaluation decodes always terminate freely; forced expansion is a
    // decode-command control
    RunSettings free_s = s;
    free_s.forced_termination = false;

    if (s.task == TaskKind::story &&
        (trainer.kind() == ModelKind::insnet ||
         (trainer.kind() == ModelKind::l2r && s.keyword_prefix))) {
        std::vector<std::vector<int64_t>> kws_list, bodies, refs;
        const auto controls = make_controls(free_s, 0.0);
        for (size_t i = 0; i < split->size(); ++i) {
            const auto& ex = (*split)[i];
            const auto kws = keyword_ids(ex);
            if (trainer.kind() == ModelKind::insnet) {
                const auto res = decode(*trainer.insnet(), nullptr, kws, controls,
                                        s.decode_seed + i, data.vocab);
                bodies.push_back(res.tokens);
                refs.push_back(interior_ids(ex));
            } else {
                // prefix examples carry the keyword copies; score the body
                Rng rng(s.decode_seed + i);
                const auto raw_kws = std::vector<int64_t>(
                    ex.ids.begin() + 1,
                    ex.ids.begin() + 1 + static_cast<int64_t>(kws.size()));
                bodies.push_back(l2r_keyword_body(*trainer.l2r(), raw_kws,
                                                  s.greedy ? 0.0 : s.temperature, rng));
                const auto body_ref = std::vector<int64_t>(
                    ex.ids.begin() + 2 + static_cast<int64_t>(kws.size()),
                    ex.ids.end() - 1);
                refs.push_back(body_ref);
                kws_list.push_back(raw_kws);
            }
            if (trainer.kind() == ModelKind::insnet) kws_list.push_back(kws);
        }
        rows.push_back({iter, model, "control.incorporation_pct",
                        100.0 * incorporation_rate(kws_list, bodies), 0.0});
        rows.push_back({iter, model, "control.bleu2", corpus_bleu(bodies, refs, 2), 0.0});
        rows.push_back({iter, model, "control.bleu4", corpus_bleu(bodies, refs, 4), 0.0});
    }

    if (s.task == TaskKind::caption && trainer.kind() != ModelKind::it_vanilla) {
        std::vector<Attributes> preds;
        std::vector<SceneSpec> scenes;
        const auto controls = make_controls(free_s, 0.0);
        for (size_t i = 0; i < split->size(); ++i) {
            const auto& ex = (*split)[i];
            if (!ex.scene.has_value()) {
                throw ValueError("caption example lacks a scene");
            }
            const auto grid = render_scene(*ex.scene);
            const std::vector<float> flat(grid.data.begin(), grid.data.end());
            if (trainer.kind() == ModelKind::insnet) {
                const auto cond = trainer.insnet()->encode_condition(flat);
                const auto res = decode(*trainer.insnet(), &cond, {}, controls,
                                        s.decode_seed + i, data.vocab);
                preds.push_back(extract_attributes(res.tokens, *data.vocab));
            } else {
                const auto cond = trainer.l2r()->encode_condition(flat);
                Rng rng(s.decode_seed + i);
                const auto res = trainer.l2r()->decode(
                    {kBos}, &cond, trainer.model_config().max_len,
                    s.greedy ? 0.0 : s.temperature, rng);
                preds.push_back(extract_attributes(res.tokens, *data.vocab));
            }
            scenes.push_back(*ex.scene);
        }
        const auto scores = attribute_scores(preds, scenes);
        rows.push_back({iter, model, "attr.color_acc", 100.0 * scores.color_acc, 0.0});
        rows.push_back({iter, model, "attr.shape_acc", 100.0 * scores.shape_acc, 0.0});
        rows.push_back({iter, model, "attr.joint_acc", 100.0 * scores.joint_acc, 0.0});
    }

    write_metrics_csv((dir / "metrics.csv").string(), rows);
    const std::string summary = render_summary(rows, {});
    std::ofstream(dir / "summary.md") << summary;
    std::cout << summary;
    return 0;
}

int cmd_decode(const CliArgs& args) {
    RunSettings s = build_settings(args, "decode.seed");
    if (args.ckpt_path.empty()) throw ValueError("decode needs --ckpt");
    auto trainer = Trainer<float>::from_checkpoint(args.ckpt_path);
    s.kind = trainer.kind();  // the checkpoint, not the config, fixes the model
    s.validate();
    const fs::path dir = start_run(args, "decode", s);
    const TaskData data = make_data(s, args.data_dir);
    if (trainer.model_config().vocab_size != task_vocab_size(s)) {
        throw ValueError("checkpoint vocabulary does not match data.task");
    }
    if (trainer.kind() == ModelKind::it_vanilla) {
        throw ValueError(
            "decoding is implemented for the insertion model and the causal baseline");
    }

    std::vector<int64_t> kws;
    if (!args.keywords.empty()) {
        if (s.task != TaskKind::story) {
            throw ValueError("--keywords applies to the story task");
        }
        for (int64_t id : story_vocab().encode(args.keywords)) {
            if (id < 4) throw ValueError("unknown keyword in '" + args.keywords + "'");
            kws.push_back(id);
        }
    }

    Tensor<float> cond;
    bool conditioned = false;
    if (!args.scene.empty()) {
        if (s.task != TaskKind::caption) {
            throw ValueError("--scene applies to the caption task");
        }
        std::istringstream in(args.scene);
        std::string color, shape;
        if (!(in >> color >> shape)) {
            throw ValueError("--scene needs '<color> <shape>'");
        }
        SceneSpec spec;
        spec.shape = shape_from_word(shape);
        spec.color = -1;
        for (size_t c = 0; c < kColorWords.size(); ++c) {
            if (color == kColorWords[c]) spec.color = static_cast<int>(c);
        }
        if (spec.color < 0) throw ValueError("unknown color '" + color + "'");
        spec.jitter_seed = s.decode_seed;
        const auto grid = render_scene(spec);
        const std::vector<float> flat(grid.data.begin(), grid.data.end());
        if (trainer.kind() == ModelKind::insnet) {
            cond = trainer.insnet()->encode_condition(flat);
        } else {
            cond = trainer.l2r()->encode_condition(flat);
        }
        conditioned = true;
    } else if (s.task == TaskKind::caption) {
        throw ValueError("the caption task needs --scene '<color> <shape>'");
    }

    const bool insertion = trainer.kind() == ModelKind::insnet;
    double theta = s.theta;
    if (s.forced_termination) {
        if (!insertion) {
            throw ValueError("forced termination applies to the insertion decoder");
        }
        if (s.theta_auto) theta = calibrate_termination(*trainer.insnet(), data.dev);
    }
    const auto controls = make_controls(s, theta);

    std::vector<MetricRow> rows;
    std::vector<std::string> rendered, trace_lines;
    std::vector<std::vector<int64_t>> kws_list, bodies;
    int64_t forced_stops = 0, min_len = -1;
    for (int64_t i = 0; i < s.n_samples; ++i) {
        std::vector<int64_t> body;
        if (insertion) {
            const auto res = decode(*trainer.insnet(), conditioned ? &cond : nullptr,
                                    kws, controls, s.decode_seed + i, data.vocab);
            body = res.tokens;
            trace_lines.push_back("# sample " + std::to_string(i));
            trace_lines.insert(trace_lines.end(), res.trace.begin(), res.trace.end());
            if (res.forced_stop) ++forced_stops;
        } else {
            Rng rng(s.decode_seed + i);
            if (!kws.empty()) {
                body = l2r_keyword_body(*trainer.l2r(), kws,
                                        s.greedy ? 0.0 : s.temperature, rng);
            } else {
                const auto res = trainer.l2r()->decode(
                    {kBos}, conditioned ? &cond : nullptr,
                    trainer.model_config().max_len,
                    s.greedy ? 0.0 : s.temperature, rng);
                body.assign(res.tokens.begin() + 1, res.tokens.end());
                while (!body.empty() && body.back() == kEos) body.pop_back();
            }
        }
        const int64_t len = static_cast<int64_t>(body.size());
        if (min_len < 0 || len < min_len) min_len = len;
        if (data.vocab != nullptr) {
            rendered.push_back(data.vocab->decode(body));
        } else {
            std::string ids;
            for (int64_t id : body) ids += (ids.empty() ? "" : " ") + std::to_string(id);
            rendered.push_back(ids);
        }
        if (!kws.empty()) {
            kws_list.push_back(kws);
            bodies.push_back(body);
        }
    }

    write_lines(dir / "decodes.txt", rendered);
    if (!trace_lines.empty()) write_lines(dir / "trace.txt", trace_lines);
    const std::string model = model_kind_name(trainer.kind());
    rows.push_back({trainer.iteration(), model, "decode.samples",
                    static_cast<double>(s.n_samples), 0.0});
    rows.push_back({trainer.iteration(), model, "decode.min_len",
                    static_cast<double>(min_len), 0.0});
    if (!kws.empty()) {
        rows.push_back({trainer.iteration(), model, "control.incorporation_pct",
                        100.0 * incorporation_rate(kws_list, bodies), 0.0});
    }
    if (s.forced_termination) {
        int64_t shortest = -1;
        for (const auto& ex : data.dev) {
            const int64_t len = static_cast<int64_t>(ex.ids.size()) - 2;
            if (shortest < 0 || len < shortest) shortest = len;
        }
        rows.push_back({trainer.iteration(), model, "decode.theta_term", theta, 0.0});
        rows.push_back({trainer.iteration(), model, "decode.shortest_dev_len",
                        static_cast<double>(shortest), 0.0});
        rows.push_back({trainer.iteration(), model, "decode.forced_stops",
                        static_cast<double>(forced_stops), 0.0});
    }
    write_metrics_csv((dir / "metrics.csv").string(), rows);

    for (size_t i = 0; i < rendered.size(); ++i) {
        std::cout << "[" << i << "] " << rendered[i] << '\n';
    }
    const std::string summary = render_summary(rows, {});
    std::ofstream(dir / "summary.md") << summary;
    std::cout << summary;
    return 0;
}

int cmd_bench(const CliArgs& args) {
    const RunSettings s = build_settings(args, "bench.seed");
    s.validate();
    const fs::path dir = start_run(args, "bench", s);
    BenchConfig cfg;
    cfg.lengths = s.bench_lengths;
    cfg.seqs_per_length = s.bench_seqs_per_length;
    cfg.measured_epochs = s.bench_epochs;
    cfg.vocab_size = s.bench_vocab_size;
    cfg.d_model = s.d_model;
    cfg.n_heads = s.n_heads;
    cfg.n_layers = s.n_layers;
    cfg.d_ff = s.d_ff;
    cfg.batch_size = s.bench_batch_size;
    cfg.max_len = s.max_len;
    cfg.seed = s.bench_seed;

    const auto results = run_bench(cfg);
    write_bench_csv((dir / "bench.csv").string(), results);
    for (const auto& r : results) {
        if (r.replicas > 1) {
            std::cout << "note: " << model_kind_name(r.kind) << " at length "
                      << r.length << " timed over x" << r.replicas
                      << " replicated data for timer resolution\n";
        }
    }

    // Machine-independent rows only, so reruns produce identical CSVs.
    std::vector<MetricRow> rows;
    for (ModelKind kind : cfg.kinds) {
        rows.push_back({0, model_kind_name(kind), "eff.ops_exponent",
                        scaling_exponent(results, kind, true), 0.0});
    }
    write_metrics_csv((dir / "metrics.csv").string(), rows);

    const std::string summary = render_summary(rows, results);
    std::ofstream(dir / "summary.md") << summary;
    std::cout << summary;
    return 0;
}

int cmd_verify(const CliArgs& args) {
    const RunSettings s = build_settings(args, "train.seed");
    s.validate();
    start_run(args, "verify", s);
    bool all = true;
    for (const auto& report : default_property_suite()) {
        std::cout << (report.pass ? "PASS " : "FAIL ") << report.name << " ("
                  << report.detail << ")\n";
        all = all && report.pass;
    }
    std::cout << (all ? "all properties hold\n" : "property failure\n");
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"insertion-based sequence modeling toolkit"};
    app.require_subcommand(1);
    CliArgs args;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", args.config_path, "config file of key=value lines");
        cmd->add_option("--set", args.overrides, "override, e.g. train.lr=1e-3")
            ->type_size(1)
            ->allow_extra_args(false);
        cmd->add_option("--out", args.out_dir, "run directory (default: timestamped)");
        cmd->add_option("--seed", args.seed, "seed for this command");
    };

    auto* gen = app.add_subcommand("gen-data", "write dataset files");
    add_common(gen);
    auto* train = app.add_subcommand("train", "train a model and checkpoint it");
    add_common(train);
    train->add_option("--data", args.data_dir, "load datasets written by gen-data");
    train->add_option("--resume", args.resume_path, "continue from a checkpoint");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval);
    eval->add_option("--ckpt", args.ckpt_path, "checkpoint to evaluate");
    eval->add_option("--data", args.data_dir, "load datasets written by gen-data");
    eval->add_option("--split", args.split, "dev or test");
    auto* dec = app.add_subcommand("decode", "generate from a checkpoint");
    add_common(dec);
    dec->add_option("--ckpt", args.ckpt_path, "checkpoint to decode from");
    dec->add_option("--data", args.data_dir, "load datasets written by gen-data");
    dec->add_option("--keywords", args.keywords, "story words to incorporate in order");
    dec->add_option("--scene", args.scene, "caption condition, e.g. 'red cube'");
    auto* bench = app.add_subcommand("bench", "epoch-time scaling benchmark");
    add_common(bench);
    bench->add_option("--lengths", args.lengths, "comma-separated sequence lengths");
    auto* verify = app.add_subcommand("verify", "run the correctness property suite");
    add_common(verify);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(args);
        if (train->parsed()) return cmd_train(args);
        if (eval->parsed()) return cmd_eval(args);
        if (dec->parsed()) return cmd_decode(args);
        if (bench->parsed()) return cmd_bench(args);
        return cmd_verify(args);
    } catch (const ValueError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
