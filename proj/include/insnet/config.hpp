#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "insnet/errors.hpp"
#include "insnet/position.hpp"
#include "insnet/training.hpp"

// Line-oriented run configuration: dotted `key=value` pairs in UTF-8, blank
// lines and `#` comments ignored. The key set is closed — unknown keys are
// rejected at parse time so typos cannot silently fall back to defaults.

namespace insnet {

enum class TaskKind { story, caption, random };

const std::string& task_name(TaskKind t);
TaskKind task_from_name(const std::string& name);

// All tunables with their defaults. Every field corresponds to exactly one
// config key; `resolved_lines` echoes the full set back in key order.
struct RunSettings {
    TaskKind task = TaskKind::story;
    int64_t n_train = 512;
    int64_t n_dev = 128;
    int64_t n_test = 128;           // caption generalization split
    uint64_t data_seed = 0;
    int64_t data_vocab_size = 256;  // random task only
    int64_t data_length = 40;       // random task content tokens
    bool keyword_prefix = false;    // causal baseline: copy keywords before a separator

    ModelKind kind = ModelKind::insnet;
    int64_t d_model = 64;
    int64_t n_heads = 4;
    int64_t n_layers = 2;
    int64_t d_ff = 256;
    double dropout = 0.1;
    int64_t max_len = 192;

    double lr = 2e-4;
    int64_t warmup_iters = 100;
    int64_t total_iters = 3000;
    int64_t batch_size = 32;
    double weight_decay = 0.0;
    double grad_clip_norm = 1.0;
    uint64_t train_seed = 0;
    int64_t eval_interval = 200;
    OrderStrategy strategy = OrderStrategy::uniform;

    double temperature = 1.0;
    int64_t max_steps = 160;
    bool greedy = false;
    bool forced_termination = false;
    double theta = 0.0;       // only read when theta_auto is false
    bool theta_auto = true;   // calibrate the threshold on the dev set
    int64_t n_samples = 16;
    uint64_t decode_seed = 0;

    std::vector<int64_t> bench_lengths = {20, 40, 80, 160};
    int64_t bench_seqs_per_length = 12;
    int64_t bench_epochs = 3;  // measured epochs after one warmup
    int64_t bench_vocab_size = 256;
    int64_t bench_batch_size = 4;
    uint64_t bench_seed = 0;

    // Conditioning is a function of the task, not a tunable: caption runs get
    // four condition slots fed by the flattened scene grid.
    int64_t n_condition_slots() const;
    int64_t cond_input_dim() const;

    ModelConfig model_config(int64_t vocab_size) const;
    TrainConfig train_config() const;

    void validate() const;
};

// Parses `key=value` lines accumulated from a file and/or overrides; later
// assignments win. Throws ValueError naming the offending key or line.
class ConfigMap {
public:
    void load_file(const std::string& path);
    void set_line(const std::string& line, const std::string& where);

    RunSettings to_settings() const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

// The full key set with this settings object's values, one `key=value` per
// line in key order — writing these lines back reproduces the settings.
std::vector<std::string> resolved_lines(const RunSettings& s);

// Value parsers shared with command-line handling; all throw ValueError
// naming `key` on malformed input.
int64_t parse_int(const std::string& key, const std::string& value);
uint64_t parse_uint(const std::string& key, const std::string& value);
double parse_real(const std::string& key, const std::string& value);
bool parse_flag(const std::string& key, const std::string& value);
std::vector<int64_t> parse_int_list(const std::string& key, const std::string& value);

}  // namespace insnet
