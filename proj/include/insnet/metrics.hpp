#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "insnet/datagen.hpp"

// Evaluation metrics and the metrics-log format shared by training, the
// CLI, and the benchmark harness.

namespace insnet {

// Corpus-level BLEU-N as a percentage: pooled clipped n-gram precisions
// with uniform 1/N weights and the standard brevity penalty. Hypotheses
// and references are id sequences without sentinels, paired by index.
double corpus_bleu(const std::vector<std::vector<int64_t>>& hyps,
                   const std::vector<std::vector<int64_t>>& refs, int max_n);

// Whether needle appears inside haystack as an in-order subsequence.
bool in_order_subsequence(const std::vector<int64_t>& needle,
                          const std::vector<int64_t>& haystack);

// Fraction of (keywords, output) pairs where all keywords were
// incorporated in order.
double incorporation_rate(const std::vector<std::vector<int64_t>>& keywords,
                          const std::vector<std::vector<int64_t>>& outputs);

struct AttrScores {
    double color_acc = 0.0;
    double shape_acc = 0.0;
    double joint_acc = 0.0;
};

// Attribute accuracies of predicted captions against their scenes.
AttrScores attribute_scores(const std::vector<Attributes>& predicted,
                            const std::vector<SceneSpec>& scenes);

struct MetricRow {
    int64_t iter = 0;
    std::string split;
    std::string metric;
    double value = 0.0;
    double wallclock_s = 0.0;
};

// CSV with the fixed header `iter,split,metric,value,wallclock_s`.
void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::string& path);

// Equality of everything except the wall-clock column, which is the only
// machine-dependent field of a seeded run.
bool metrics_equal_ignoring_wallclock(const std::vector<MetricRow>& a,
                                      const std::vector<MetricRow>& b);

}  // namespace insnet
