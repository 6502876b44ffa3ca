#include "insnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "insnet/datagen.hpp"

namespace insnet {

namespace {

const std::vector<std::string> kTaskNames = {"story", "caption", "random"};

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string format_real(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace

const std::string& task_name(TaskKind t) {
    return kTaskNames[static_cast<size_t>(t)];
}

TaskKind task_from_name(const std::string& name) {
    for (size_t i = 0; i < kTaskNames.size(); ++i) {
        if (kTaskNames[i] == name) return static_cast<TaskKind>(i);
    }
    throw ValueError("unknown task '" + name + "'");
}

int64_t parse_int(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(value, &pos);
        if (pos != value.size()) throw ValueError("");
        return v;
    } catch (const std::exception&) {
        throw ValueError("key " + key + " needs an integer, got '" + value + "'");
    }
}

uint64_t parse_uint(const std::string& key, const std::string& value) {
    try {
        if (value.empty() || value[0] == '-') throw ValueError("");
        size_t pos = 0;
        const uint64_t v = std::stoull(value, &pos);
        if (pos != value.size()) throw ValueError("");
        return v;
    } catch (const std::exception&) {
        throw ValueError("key " + key + " needs a non-negative integer, got '" +
                         value + "'");
    }
}

double parse_real(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw ValueError("");
        return v;
    } catch (const std::exception&) {
        throw ValueError("key " + key + " needs a number, got '" + value + "'");
    }
}

bool parse_flag(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ValueError("key " + key + " needs true or false, got '" + value + "'");
}

std::vector<int64_t> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int64_t> out;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) out.push_back(parse_int(key, trim(item)));
    if (out.empty()) throw ValueError("key " + key + " needs a comma-separated list");
    return out;
}

int64_t RunSettings::n_condition_slots() const {
    return task == TaskKind::caption ? 4 : 0;
}

int64_t RunSettings::cond_input_dim() const {
    return task == TaskKind::caption ? Grid::flat_size() : 0;
}

ModelConfig RunSettings::model_config(int64_t vocab_size) const {
    ModelConfig m;
    m.vocab_size = vocab_size;
    m.d_model = d_model;
    m.n_heads = n_heads;
    m.n_layers = n_layers;
    m.d_ff = d_ff;
    m.dropout_p = dropout;
    m.max_len = max_len;
    m.n_condition_slots = n_condition_slots();
    m.cond_input_dim = cond_input_dim();
    return m;
}

TrainConfig RunSettings::train_config() const {
    TrainConfig t;
    t.lr = lr;
    t.warmup_iters = warmup_iters;
    t.total_iters = total_iters;
    t.batch_size = batch_size;
    t.weight_decay = weight_decay;
    t.grad_clip_norm = grad_clip_norm;
    t.seed = train_seed;
    t.strategy = strategy;
    t.eval_interval = eval_interval;
    return t;
}

void RunSettings::validate() const {
    if (n_train < 1 || n_dev < 1 || n_test < 1) {
        throw ValueError("dataset sizes must be positive");
    }
    if (data_vocab_size < 5) {
        throw ValueError("data.vocab_size must exceed the four reserved ids");
    }
    if (data_length < 1) {
        throw ValueError("data.length must be positive");
    }
    if (keyword_prefix && (kind != ModelKind::l2r || task != TaskKind::story)) {
        throw ValueError(
            "data.keyword_prefix is only meaningful for the causal baseline on the story task");
    }
    if (temperature <= 0.0) {
        throw ValueError("decode.temperature must be positive");
    }
    if (max_steps < 1 || n_samples < 1) {
        throw ValueError("decode.max_steps and decode.samples must be positive");
    }
    if (bench_lengths.size() < 3) {
        throw ValueError("bench.lengths needs at least three grid points");
    }
    for (size_t i = 0; i < bench_lengths.size(); ++i) {
        if (bench_lengths[i] < 1) throw ValueError("bench.lengths must be positive");
        if (i > 0 && bench_lengths[i] <= bench_lengths[i - 1]) {
            throw ValueError("bench.lengths must be strictly increasing");
        }
    }
    if (bench_seqs_per_length < 1 || bench_batch_size < 1) {
        throw ValueError("bench dataset and batch sizes must be positive");
    }
    if (bench_epochs < 3) {
        throw ValueError("bench.epochs needs at least three measured epochs");
    }
    model_config(4).validate();
    train_config().validate();
}

void ConfigMap::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        set_line(t, path + ":" + std::to_string(lineno));
    }
}

void ConfigMap::set_line(const std::string& line, const std::string& where) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
        throw ValueError("expected key=value at " + where + ", got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
        throw ValueError("empty key at " + where);
    }
    // the key set is closed: resolved_lines emits exactly the accepted keys
    static const std::set<std::string> known = [] {
        std::set<std::string> out;
        for (const auto& l : resolved_lines(RunSettings{})) {
            out.insert(l.substr(0, l.find('=')));
        }
        return out;
    }();
    if (known.find(key) == known.end()) {
        throw ValueError("unknown config key '" + key + "' at " + where);
    }
    entries_[key] = value;
}

RunSettings ConfigMap::to_settings() const {
    RunSettings s;
    for (const auto& [key, value] : entries_) {
        if (key == "data.task") {
            s.task = task_from_name(value);
        } else if (key == "data.n_train") {
            s.n_train = parse_int(key, value);
        } else if (key == "data.n_dev") {
            s.n_dev = parse_int(key, value);
        } else if (key == "data.n_test") {
            s.n_test = parse_int(key, value);
        } else if (key == "data.seed") {
            s.data_seed = parse_uint(key, value);
        } else if (key == "data.vocab_size") {
            s.data_vocab_size = parse_int(key, value);
        } else if (key == "data.length") {
            s.data_length = parse_int(key, value);
        } else if (key == "data.keyword_prefix") {
            s.keyword_prefix = parse_flag(key, value);
        } else if (key == "model.kind") {
            s.kind = model_kind_from_name(value);
        } else if (key == "model.d_model") {
            s.d_model = parse_int(key, value);
        } else if (key == "model.n_heads") {
            s.n_heads = parse_int(key, value);
        } else if (key == "model.n_layers") {
            s.n_layers = parse_int(key, value);
        } else if (key == "model.d_ff") {
            s.d_ff = parse_int(key, value);
        } else if (key == "model.dropout") {
            s.dropout = parse_real(key, value);
        } else if (key == "model.max_len") {
            s.max_len = parse_int(key, value);
        } else if (key == "train.lr") {
            s.lr = parse_real(key, value);
        } else if (key == "train.warmup_iters") {
            s.warmup_iters = parse_int(key, value);
        } else if (key == "train.total_iters") {
            s.total_iters = parse_int(key, value);
        } else if (key == "train.batch_size") {
            s.batch_size = parse_int(key, value);
        } else if (key == "train.weight_decay") {
            s.weight_decay = parse_real(key, value);
        } else if (key == "train.grad_clip_norm") {
            s.grad_clip_norm = parse_real(key, value);
        } else if (key == "train.seed") {
            s.train_seed = parse_uint(key, value);
        } else if (key == "train.eval_interval") {
            s.eval_interval = parse_int(key, value);
        } else if (key == "order.strategy") {
            s.strategy = order_strategy_from_string(value);
        } else if (key == "decode.temperature") {
            s.temperature = parse_real(key, value);
        } else if (key == "decode.max_steps") {
            s.max_steps = parse_int(key, value);
        } else if (key == "decode.greedy") {
            s.greedy = parse_flag(key, value);
        } else if (key == "decode.termination") {
            if (value == "free") {
                s.forced_termination = false;
            } else if (value == "forced") {
                s.forced_termination = true;
            } else {
                throw ValueError("key decode.termination needs free or forced, got '" +
                                 value + "'");
            }
        } else if (key == "decode.theta") {
            if (value == "auto") {
                s.theta_auto = true;
            } else {
                s.theta_auto = false;
                s.theta = parse_real(key, value);
            }
        } else if (key == "decode.samples") {
            s.n_samples = parse_int(key, value);
        } else if (key == "decode.seed") {
            s.decode_seed = parse_uint(key, value);
        } else if (key == "bench.lengths") {
            s.bench_lengths = parse_int_list(key, value);
        } else if (key == "bench.seqs_per_length") {
            s.bench_seqs_per_length = parse_int(key, value);
        } else if (key == "bench.epochs") {
            s.bench_epochs = parse_int(key, value);
        } else if (key == "bench.vocab_size") {
            s.bench_vocab_size = parse_int(key, value);
        } else if (key == "bench.batch_size") {
            s.bench_batch_size = parse_int(key, value);
        } else if (key == "bench.seed") {
            s.bench_seed = parse_uint(key, value);
        } else {
            throw ValueError("unknown config key '" + key + "'");
        }
    }
    return s;
}

std::vector<std::string> resolved_lines(const RunSettings& s) {
    std::vector<std::string> out;
    auto put = [&out](const std::string& key, const std::string& value) {
        out.push_back(key + "=" + value);
    };
    put("data.task", task_name(s.task));
    put("data.n_train", std::to_string(s.n_train));
    put("data.n_dev", std::to_string(s.n_dev));
    put("data.n_test", std::to_string(s.n_test));
    put("data.seed", std::to_string(s.data_seed));
    put("data.vocab_size", std::to_string(s.data_vocab_size));
    put("data.length", std::to_string(s.data_length));
    put("data.keyword_prefix", s.keyword_prefix ? "true" : "false");
    put("model.kind", model_kind_name(s.kind));
    put("model.d_model", std::to_string(s.d_model));
    put("model.n_heads", std::to_string(s.n_heads));
    put("model.n_layers", std::to_string(s.n_layers));
    put("model.d_ff", std::to_string(s.d_ff));
    put("model.dropout", format_real(s.dropout));
    put("model.max_len", std::to_string(s.max_len));
    put("train.lr", format_real(s.lr));
    put("train.warmup_iters", std::to_string(s.warmup_iters));
    put("train.total_iters", std::to_string(s.total_iters));
    put("train.batch_size", std::to_string(s.batch_size));
    put("train.weight_decay", format_real(s.weight_decay));
    put("train.grad_clip_norm", format_real(s.grad_clip_norm));
    put("train.seed", std::to_string(s.train_seed));
    put("train.eval_interval", std::to_string(s.eval_interval));
    put("order.strategy", to_string(s.strategy));
    put("decode.temperature", format_real(s.temperature));
    put("decode.max_steps", std::to_string(s.max_steps));
    put("decode.greedy", s.greedy ? "true" : "false");
    put("decode.termination", s.forced_termination ? "forced" : "free");
    put("decode.theta", s.theta_auto ? "auto" : format_real(s.theta));
    put("decode.samples", std::to_string(s.n_samples));
    put("decode.seed", std::to_string(s.decode_seed));
    {
        std::string joined;
        for (size_t i = 0; i < s.bench_lengths.size(); ++i) {
            if (i > 0) joined += ",";
            joined += std::to_string(s.bench_lengths[i]);
        }
        put("bench.lengths", joined);
    }
    put("bench.seqs_per_length", std::to_string(s.bench_seqs_per_length));
    put("bench.epochs", std::to_string(s.bench_epochs));
    put("bench.vocab_size", std::to_string(s.bench_vocab_size));
    put("bench.batch_size", std::to_string(s.bench_batch_size));
    put("bench.seed", std::to_string(s.bench_seed));
    return out;
}

}  // namespace insnet
