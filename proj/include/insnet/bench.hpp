#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "insnet/metrics.hpp"
#include "insnet/training.hpp"

// Wall-clock scaling harness: trains each model kind for a fixed number of
// epochs on synthetic sequences at several lengths and fits log-log scaling
// exponents. Machine-independent attention-row counts are recorded alongside
// the timings so the wall-clock shape can be corroborated.

namespace insnet {

struct BenchConfig {
    std::vector<int64_t> lengths = {20, 40, 80, 160};
    std::vector<ModelKind> kinds = {ModelKind::insnet, ModelKind::it_vanilla,
                                    ModelKind::l2r};
    int64_t seqs_per_length = 12;
    int64_t measured_epochs = 3;  // after one untimed warmup epoch
    int64_t vocab_size = 256;
    int64_t d_model = 64;
    int64_t n_heads = 4;
    int64_t n_layers = 2;
    int64_t d_ff = 256;
    int64_t batch_size = 4;
    int64_t max_len = 192;
    uint64_t seed = 0;
    double min_epoch_seconds = 0.05;  // below this the dataset is replicated

    void validate() const;
};

// Per-cell measurement, normalized to one pass over the configured dataset:
// when the dataset was replicated for timer resolution, seconds and row
// counts are divided by the replica count.
struct BenchResult {
    ModelKind kind = ModelKind::insnet;
    int64_t length = 0;
    double epoch_seconds_median = 0.0;
    uint64_t ops_attention_rows = 0;
    int64_t replicas = 1;
};

std::vector<BenchResult> run_bench(const BenchConfig& cfg);

// Least-squares slope of log(cost) against log(length) over one kind's rows;
// cost is the epoch median, or the attention-row count with use_ops.
double scaling_exponent(const std::vector<BenchResult>& results, ModelKind kind,
                        bool use_ops = false);

// `model,length,epoch_seconds_median,ops_attention_rows` with a header row.
void write_bench_csv(const std::string& path, const std::vector<BenchResult>& results);
std::vector<BenchResult> read_bench_csv(const std::string& path);

// Markdown run report. Quality tables come from metric rows whose split
// column holds the model kind and whose names are section-dotted
// (lm.token_nll, control.incorporation_pct, attr.joint_acc, decode.*);
// the efficiency section comes from bench rows. Pure formatting: rendering
// the same rows again is byte-identical.
std::string render_summary(const std::vector<MetricRow>& metrics,
                           const std::vector<BenchResult>& bench);

}  // namespace insnet
