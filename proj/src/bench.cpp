#include "insnet/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "insnet/counters.hpp"
#include "insnet/datagen.hpp"

namespace insnet {

namespace {

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(6);
    out << v;
    return out.str();
}

double median_of(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const size_t k = xs.size() / 2;
    if (xs.size() % 2 == 1) return xs[k];
    return 0.5 * (xs[k - 1] + xs[k]);
}

BenchResult bench_cell(const BenchConfig& cfg, ModelKind kind, int64_t length,
                       int64_t cell) {
    const uint64_t data_seed = cfg.seed + static_cast<uint64_t>(cell) * 7919u;
    const auto base =
        gen_random_sequences(cfg.vocab_size, length, cfg.seqs_per_length, data_seed);

    // Too-fast epochs are timed over a replicated dataset and divided back,
    // so the reported figures always describe one nominal epoch.
    for (int64_t replicas = 1;; replicas *= 2) {
        std::vector<Example> data;
        data.reserve(base.size() * static_cast<size_t>(replicas));
        for (int64_t r = 0; r < replicas; ++r) {
            data.insert(data.end(), base.begin(), base.end());
        }

        ModelConfig m;
        m.vocab_size = cfg.vocab_size;
        m.d_model = cfg.d_model;
        m.n_heads = cfg.n_heads;
        m.n_layers = cfg.n_layers;
        m.d_ff = cfg.d_ff;
        m.dropout_p = 0.0;
        m.max_len = cfg.max_len;

        const int64_t iters_per_epoch =
            static_cast<int64_t>(data.size()) / cfg.batch_size;
        TrainConfig t;
        t.lr = 1e-4;
        t.warmup_iters = 1;
        t.total_iters = (1 + cfg.measured_epochs) * iters_per_epoch;
        t.batch_size = cfg.batch_size;
        t.seed = data_seed ^ 0x9e3779b97f4a7c15ull;
        t.strategy = kind == ModelKind::l2r ? OrderStrategy::l2r : OrderStrategy::uniform;
        t.eval_interval = t.total_iters;
        Trainer<float> trainer(kind, m, t);

        trainer.run_epoch(data);  // warmup, untimed
        std::vector<double> seconds;
        uint64_t rows = 0;
        for (int64_t e = 0; e < cfg.measured_epochs; ++e) {
            counters().reset();
            const double t0 = monotonic_seconds();
            trainer.run_epoch(data);
            seconds.push_back(monotonic_seconds() - t0);
            rows = counters().attention_rows;
        }
        counters().reset();

        const double median = median_of(seconds);
        if (median >= cfg.min_epoch_seconds || replicas >= 1024) {
            BenchResult r;
            r.kind = kind;
            r.length = length;
            r.epoch_seconds_median = median / static_cast<double>(replicas);
            r.ops_attention_rows = rows / static_cast<uint64_t>(replicas);
            r.replicas = replicas;
            return r;
        }
    }
}

}  // namespace

void BenchConfig::validate() const {
    if (lengths.size() < 3) {
        throw ValueError("bench needs at least three grid lengths");
    }
    for (size_t i = 0; i < lengths.size(); ++i) {
        if (lengths[i] < 1) throw ValueError("bench lengths must be positive");
        if (i > 0 && lengths[i] <= lengths[i - 1]) {
            throw ValueError("bench lengths must be strictly increasing");
        }
        if (lengths[i] + 2 > max_len) {
            throw ValueError("bench length " + std::to_string(lengths[i]) +
                             " does not fit max_len " + std::to_string(max_len));
        }
    }
    if (kinds.empty()) {
        throw ValueError("bench needs at least one model kind");
    }
    if (seqs_per_length < 1 || batch_size < 1 ||
        seqs_per_length % batch_size != 0) {
        throw ValueError(
            "bench.seqs_per_length must be a positive multiple of the batch size");
    }
    if (measured_epochs < 3) {
        throw ValueError("bench needs at least three measured epochs");
    }
    if (min_epoch_seconds <= 0.0) {
        throw ValueError("bench timer floor must be positive");
    }
}

std::vector<BenchResult> run_bench(const BenchConfig& cfg) {
    cfg.validate();
    std::vector<BenchResult> out;
    int64_t cell = 0;
    for (ModelKind kind : cfg.kinds) {
        for (int64_t length : cfg.lengths) {
            out.push_back(bench_cell(cfg, kind, length, cell));
            ++cell;
        }
    }
    return out;
}

double scaling_exponent(const std::vector<BenchResult>& results, ModelKind kind,
                        bool use_ops) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : results) {
        if (r.kind != kind) continue;
        const double cost = use_ops ? static_cast<double>(r.ops_attention_rows)
                                    : r.epoch_seconds_median;
        if (cost <= 0.0) {
            throw ValueError("non-positive cost in benchmark results");
        }
        pts.emplace_back(std::log(static_cast<double>(r.length)), std::log(cost));
    }
    if (pts.size() < 2) {
        throw ValueError("scaling fit needs at least two lengths for " +
                         model_kind_name(kind));
    }
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : pts) {
        mx += x;
        my += y;
    }
    mx /= static_cast<double>(pts.size());
    my /= static_cast<double>(pts.size());
    double num = 0.0, den = 0.0;
    for (const auto& [x, y] : pts) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    return num / den;
}

void write_bench_csv(const std::string& path, const std::vector<BenchResult>& results) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "model,length,epoch_seconds_median,ops_attention_rows\n";
    out.precision(17);
    for (const auto& r : results) {
        out << model_kind_name(r.kind) << ',' << r.length << ','
            << r.epoch_seconds_median << ',' << r.ops_attention_rows << '\n';
    }
    if (!out) throw IoError("failed writing " + path);
}

std::vector<BenchResult> read_bench_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) ||
        line != "model,length,epoch_seconds_median,ops_attention_rows") {
        throw ValueError("bad benchmark CSV header in " + path);
    }
    std::vector<BenchResult> out;
    int64_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string kind, length, seconds, rows;
        if (!std::getline(row, kind, ',') || !std::getline(row, length, ',') ||
            !std::getline(row, seconds, ',') || !std::getline(row, rows)) {
            throw ValueError("bad benchmark CSV row at line " + std::to_string(lineno));
        }
        try {
            BenchResult r;
            r.kind = model_kind_from_name(kind);
            r.length = std::stoll(length);
            r.epoch_seconds_median = std::stod(seconds);
            r.ops_attention_rows = std::stoull(rows);
            out.push_back(r);
        } catch (const std::exception&) {
            throw ValueError("bad benchmark CSV row at line " + std::to_string(lineno));
        }
    }
    return out;
}

namespace {

// Ordered distinct split labels among rows of one section prefix.
std::vector<std::string> section_models(const std::vector<MetricRow>& metrics,
                                        const std::string& prefix) {
    std::vector<std::string> out;
    for (const auto& r : metrics) {
        if (r.metric.rfind(prefix, 0) != 0) continue;
        if (std::find(out.begin(), out.end(), r.split) == out.end()) {
            out.push_back(r.split);
        }
    }
    return out;
}

const MetricRow* find_row(const std::vector<MetricRow>& metrics,
                          const std::string& split, const std::string& metric) {
    for (const auto& r : metrics) {
        if (r.split == split && r.metric == metric) return &r;
    }
    return nullptr;
}

void quality_table(std::ostringstream& md, const std::vector<MetricRow>& metrics,
                   const std::string& title, const std::string& prefix,
                   const std::vector<std::pair<std::string, std::string>>& columns) {
    const auto models = section_models(metrics, prefix);
    if (models.empty()) return;
    md << "\n## " << title << "\n\n| model |";
    for (const auto& [name, label] : columns) md << ' ' << label << " |";
    md << "\n|---|";
    for (size_t i = 0; i < columns.size(); ++i) md << "---|";
    md << '\n';
    for (const auto& model : models) {
        md << "| " << model << " |";
        for (const auto& [name, label] : columns) {
            const auto* row = find_row(metrics, model, prefix + name);
            md << ' ' << (row != nullptr ? fmt(row->value) : "-") << " |";
        }
        md << '\n';
    }
}

void bullet_section(std::ostringstream& md, const std::vector<MetricRow>& metrics,
                    const std::string& title, const std::string& prefix) {
    const auto models = section_models(metrics, prefix);
    if (models.empty()) return;
    md << "\n## " << title << "\n\n";
    for (const auto& r : metrics) {
        if (r.metric.rfind(prefix, 0) != 0) continue;
        md << "- " << r.split << ": " << r.metric.substr(prefix.size()) << " = "
           << fmt(r.value) << '\n';
    }
}

}  // namespace

std::string render_summary(const std::vector<MetricRow>& metrics,
                           const std::vector<BenchResult>& bench) {
    std::ostringstream md;
    md << "# Run summary\n";
    quality_table(md, metrics, "Language modeling", "lm.",
                  {{"token_nll", "token NLL"},
                   {"seq_nll", "sequence NLL"},
                   {"interior_token_nll", "interior token NLL"}});
    quality_table(md, metrics, "Constrained generation", "control.",
                  {{"incorporation_pct", "incorporation %"},
                   {"bleu2", "BLEU-2"},
                   {"bleu4", "BLEU-4"}});
    quality_table(md, metrics, "Attribute generalization", "attr.",
                  {{"color_acc", "color %"},
                   {"shape_acc", "shape %"},
                   {"joint_acc", "joint %"}});
    bullet_section(md, metrics, "Decoding", "decode.");

    if (!bench.empty()) {
        md << "\n## Efficiency\n\n"
           << "| model | length | epoch seconds (median) | attention rows |\n"
           << "|---|---|---|---|\n";
        for (const auto& r : bench) {
            md << "| " << model_kind_name(r.kind) << " | " << r.length << " | "
               << fmt(r.epoch_seconds_median) << " | " << r.ops_attention_rows
               << " |\n";
        }
        std::vector<ModelKind> kinds;
        for (const auto& r : bench) {
            if (std::find(kinds.begin(), kinds.end(), r.kind) == kinds.end()) {
                kinds.push_back(r.kind);
            }
        }
        md << "\n| model | time exponent | ops exponent |\n|---|---|---|\n";
        for (ModelKind k : kinds) {
            md << "| " << model_kind_name(k) << " | "
               << fmt(scaling_exponent(bench, k, false)) << " | "
               << fmt(scaling_exponent(bench, k, true)) << " |\n";
        }
        const int64_t longest =
            std::max_element(bench.begin(), bench.end(),
                             [](const BenchResult& a, const BenchResult& b) {
                                 return a.length < b.length;
                             })
                ->length;
        const BenchResult* ins = nullptr;
        const BenchResult* it = nullptr;
        for (const auto& r : bench) {
            if (r.length != longest) continue;
            if (r.kind == ModelKind::insnet) ins = &r;
            if (r.kind == ModelKind::it_vanilla) it = &r;
        }
        if (ins != nullptr && it != nullptr) {
            md << "\nEpoch-time ratio insnet/it_vanilla at length " << longest
               << ": " << fmt(ins->epoch_seconds_median / it->epoch_seconds_median)
               << '\n';
        }
    }
    return md.str();
}

}  // namespace insnet
