#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "insnet/baselines.hpp"
#include "insnet/datagen.hpp"
#include "insnet/metrics.hpp"
#include "insnet/model.hpp"
#include "insnet/tensor.hpp"

namespace insnet {

enum class ModelKind { insnet, it_vanilla, l2r };

inline const std::string& model_kind_name(ModelKind k) {
    static const std::array<std::string, 3> names = {"insnet", "it_vanilla", "l2r"};
    return names[static_cast<size_t>(k)];
}

inline ModelKind model_kind_from_name(const std::string& name) {
    for (int i = 0; i < 3; ++i)
        if (model_kind_name(static_cast<ModelKind>(i)) == name)
            return static_cast<ModelKind>(i);
    throw ValueError("unknown model kind: " + name);
}

struct TrainConfig {
    double lr = 2e-4;
    int64_t warmup_iters = 100;
    int64_t total_iters = 3000;
    int64_t batch_size = 32;
    double weight_decay = 0.0;
    double grad_clip_norm = 1.0;
    uint64_t seed = 0;
    OrderStrategy strategy = OrderStrategy::uniform;
    int64_t eval_interval = 200;

    void validate() const {
        if (warmup_iters < 1 || warmup_iters > total_iters) {
            throw ValueError("warmup_iters must lie in [1, total_iters]");
        }
        if (batch_size < 1) {
            throw ValueError("batch_size must be at least 1");
        }
        if (lr <= 0.0) {
            throw ValueError("learning rate must be positive");
        }
        if (eval_interval < 1) {
            throw ValueError("eval_interval must be at least 1");
        }
    }

    // Linear warmup to the peak at warmup_iters, then linear decay to zero
    // at total_iters. iter is 1-based.
    double lr_at(int64_t iter) const {
        if (iter <= warmup_iters)
            return lr * static_cast<double>(iter) / static_cast<double>(warmup_iters);
        if (warmup_iters == total_iters) return lr;
        return lr * (1.0 - static_cast<double>(iter - warmup_iters) /
                               static_cast<double>(total_iters - warmup_iters));
    }
};

template <typename T>
struct AdamState {
    std::map<std::string, std::vector<T>> m, v;
    int64_t step = 0;

    void init(const ParamStore<T>& params) {
        m.clear();
        v.clear();
        step = 0;
        for (const auto& [name, t] : params.all()) {
            m.emplace(name, std::vector<T>(static_cast<size_t>(t.numel()), T(0)));
            v.emplace(name, std::vector<T>(static_cast<size_t>(t.numel()), T(0)));
        }
    }
};

// Global-norm clip, decoupled weight decay, then the Adam update, over all
// parameters in name order. Gradients must already be populated.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr_t,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
               double weight_decay = 0.0, double clip = 0.0) {
    double sq_norm = 0.0;
    for (auto& [name, t] : params.all()) {
        auto& tensor = params.at(name);
        tensor.payload()->ensure_grad();
        for (T g : tensor.grad()) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw ValueError("non-finite gradient in " + name);
            }
            sq_norm += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    const double norm = std::sqrt(sq_norm);
    const double rescale = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;

    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (auto& [name, unused] : params.all()) {
        auto& tensor = params.at(name);
        auto& val = tensor.val();
        auto& grad = tensor.grad();
        auto& m = state.m.at(name);
        auto& v = state.v.at(name);
        for (size_t i = 0; i < val.size(); ++i) {
            const double g = static_cast<double>(grad[i]) * rescale;
            if (weight_decay > 0.0)
                val[i] -= static_cast<T>(lr_t * weight_decay * static_cast<double>(val[i]));
            const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
            const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            val[i] -= static_cast<T>(lr_t * (mi / bc1) /
                                     (std::sqrt(vi / bc2) + eps));
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoint file: INSN magic, version byte, key=value header block, then
// lexicographically ordered named arrays (little-endian fixed-width fields).

template <typename T>
struct Checkpoint {
    std::map<std::string, std::string> header;
    std::map<std::string, std::pair<Shape, std::vector<T>>> arrays;
};

namespace detail {

template <typename T>
constexpr const char* dtype_tag();
template <>
constexpr const char* dtype_tag<float>() {
    return "f32";
}
template <>
constexpr const char* dtype_tag<double>() {
    return "f64";
}

inline void write_u64(std::ofstream& f, uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), 8);
}

inline uint64_t read_u64(std::ifstream& f, const std::string& what) {
    uint64_t v = 0;
    if (!f.read(reinterpret_cast<char*>(&v), 8)) {
        throw IoError("unexpected end of file in " + what);
    }
    return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ckpt) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open for writing: " + path);
    }
    f.write("INSN", 4);
    const char version = 1;
    f.write(&version, 1);
    for (const auto& [k, v] : ckpt.header) f << k << '=' << v << '\n';
    f << '\n';
    for (const auto& [name, entry] : ckpt.arrays) {
        const auto& [shape, values] = entry;
        detail::write_u64(f, name.size());
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        f.write(detail::dtype_tag<T>(), 3);
        detail::write_u64(f, shape.size());
        for (int64_t e : shape) detail::write_u64(f, static_cast<uint64_t>(e));
        f.write(reinterpret_cast<const char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(T)));
    }
    if (!f) {
        throw IoError("write failed: " + path);
    }
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open for reading: " + path);
    }
    char magic[4];
    if (!f.read(magic, 4) || std::string(magic, 4) != "INSN") {
        throw IoError("bad magic in " + path);
    }
    char version = 0;
    if (!f.read(&version, 1) || version != 1) {
        throw IoError("unsupported checkpoint version in " + path);
    }
    Checkpoint<T> ckpt;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) break;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw IoError("malformed header line: " + line);
        }
        ckpt.header[line.substr(0, eq)] = line.substr(eq + 1);
    }
    while (f.peek() != std::ifstream::traits_type::eof()) {
        const uint64_t name_len = detail::read_u64(f, "array name length");
        if (name_len == 0 || name_len > 4096) {
            throw IoError("implausible name length " + std::to_string(name_len));
        }
        std::string name(name_len, '\0');
        if (!f.read(name.data(), static_cast<std::streamsize>(name_len))) {
            throw IoError("unexpected end of file in array name");
        }
        char tag[3];
        if (!f.read(tag, 3)) {
            throw IoError("unexpected end of file in dtype of " + name);
        }
        if (std::string(tag, 3) != detail::dtype_tag<T>()) {
            throw IoError("dtype mismatch for " + name);
        }
        const uint64_t rank = detail::read_u64(f, "rank of " + name);
        if (rank > 8) {
            throw IoError("implausible rank in " + name);
        }
        Shape shape;
        uint64_t count = 1;
        for (uint64_t r = 0; r < rank; ++r) {
            const uint64_t e = detail::read_u64(f, "extent of " + name);
            if (e == 0 || e > 100000000ULL || count > 100000000ULL / e) {
                throw IoError("implausible extent in " + name);
            }
            count *= e;
            shape.push_back(static_cast<int64_t>(e));
        }
        std::vector<T> values(count);
        if (!f.read(reinterpret_cast<char*>(values.data()),
                    static_cast<std::streamsize>(count * sizeof(T)))) {
            throw IoError("unexpected end of file in values of " + name);
        }
        ckpt.arrays.emplace(name, std::make_pair(std::move(shape), std::move(values)));
    }
    return ckpt;
}

// ---------------------------------------------------------------------------

struct EvalStats {
    double seq_nll = 0.0;            // mean total NLL per sequence
    double token_nll = 0.0;          // mean NLL per predicted token
    double interior_token_nll = 0.0; // token NLL over interior words only
    int64_t token_count = 0;
};

inline double monotonic_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

inline int configured_threads() {
    const char* env = std::getenv("INSNET_THREADS");
    if (env == nullptr) return 1;
    const int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

// One optimization context owning the model of the configured kind. The
// per-iteration RNG streams are derived from (seed, iteration), so a resumed
// run replays exactly the same data order, insertion orders, and dropout.
template <typename T>
class Trainer {
public:
    Trainer(ModelKind kind, const ModelConfig& mcfg, const TrainConfig& tcfg)
        : kind_(kind), mcfg_(mcfg), tcfg_(tcfg) {
        mcfg_.validate();
        tcfg_.validate();
        if (kind_ == ModelKind::l2r && tcfg_.strategy != OrderStrategy::l2r) {
            throw ValueError("the causal baseline only supports the l2r strategy");
        }
        switch (kind_) {
            case ModelKind::insnet:
                insnet_ = std::make_unique<InsNetModel<T>>(mcfg_, tcfg_.seed);
                break;
            case ModelKind::it_vanilla:
                if (mcfg_.n_condition_slots > 0) {
                    throw ValueError(
                        "the insertion-transformer baseline does not support conditions");
                }
                it_ = std::make_unique<ITVanillaModel<T>>(mcfg_, tcfg_.seed);
                break;
            case ModelKind::l2r:
                l2r_ = std::make_unique<L2RModel<T>>(mcfg_, tcfg_.seed);
                break;
        }
    }

    ModelKind kind() const { return kind_; }
    const ModelConfig& model_config() const { return mcfg_; }
    const TrainConfig& train_config() const { return tcfg_; }
    int64_t iteration() const { return iter_; }
    InsNetModel<T>* insnet() { return insnet_.get(); }
    ITVanillaModel<T>* it() { return it_.get(); }
    L2RModel<T>* l2r() { return l2r_.get(); }

    ParamStore<T>& params() {
        switch (kind_) {
            case ModelKind::insnet:
                return insnet_->params();
            case ModelKind::it_vanilla:
                return it_->params();
            default:
                return l2r_->params();
        }
    }
    const ParamStore<T>& params() const {
        return const_cast<Trainer*>(this)->params();
    }

    // Trains from the current iteration up to total_iters (or stop_at, for
    // checkpoint-and-resume runs), appending one loss/lr row pair per
    // iteration and dev rows on the eval schedule. The schedule always
    // follows total_iters, so a stopped run resumes bit-identically.
    std::vector<MetricRow> run(const std::vector<Example>& train_set,
                               const std::vector<Example>& dev_set,
                               int64_t stop_at = -1) {
        if (train_set.empty()) {
            throw ValueError("empty training set");
        }
        check_compat(train_set.front());
        if (adam_.m.empty()) adam_.init(params());
        const int64_t last =
            stop_at < 0 ? tcfg_.total_iters : std::min(stop_at, tcfg_.total_iters);

        std::vector<MetricRow> log;
        const double start = monotonic_seconds();
        const bool prefetch = configured_threads() >= 2;
        std::future<BatchData> pending;
        if (prefetch && iter_ < last)
            pending = std::async(std::launch::async,
                                 [this, &train_set, it = iter_ + 1] {
                                     return make_batch(train_set, it);
                                 });
        for (int64_t iter = iter_ + 1; iter <= last; ++iter) {
            BatchData batch = prefetch ? pending.get() : make_batch(train_set, iter);
            if (prefetch && iter + 1 <= last)
                pending = std::async(std::launch::async,
                                     [this, &train_set, it = iter + 1] {
                                         return make_batch(train_set, it);
                                     });
            const double loss = train_iteration(train_set, batch, iter);
            const double elapsed = monotonic_seconds() - start;
            log.push_back({iter, "train", "loss", loss, elapsed});
            log.push_back({iter, "train", "lr", tcfg_.lr_at(iter), elapsed});
            if (iter % tcfg_.eval_interval == 0 || iter == tcfg_.total_iters) {
                if (!dev_set.empty()) {
                    const auto stats = evaluate(dev_set);
                    const double t = monotonic_seconds() - start;
                    log.push_back({iter, "dev", "token_nll", stats.token_nll, t});
                    log.push_back({iter, "dev", "seq_nll", stats.seq_nll, t});
                }
            }
            iter_ = iter;
        }
        return log;
    }

    // Teacher-forced NLL without dropout; orders are the deterministic
    // left-to-right generation form so results are comparable across kinds.
    EvalStats evaluate(const std::vector<Example>& data) const {
        if (data.empty()) {
            throw ValueError("empty evaluation set");
        }
        EvalStats out;
        double token_sum = 0.0, interior_sum = 0.0;
        int64_t interior_count = 0;
        for (const auto& ex : data) {
            const auto loss = example_loss(ex, nullptr, nullptr, true);
            out.seq_nll += loss.total.item();
            token_sum += loss.token_nll_sum;
            out.token_count += loss.token_steps;
            if (kind_ == ModelKind::l2r) {
                // the final step predicts the end sentinel, which the
                // insertion models receive up front; drop it for parity
                for (size_t s = 0; s + 1 < loss.steps.size(); ++s) {
                    interior_sum += loss.steps[s].token_nll;
                    ++interior_count;
                }
            } else {
                for (const auto& st : loss.steps)
                    if (st.has_token) {
                        interior_sum += st.token_nll;
                        ++interior_count;
                    }
            }
        }
        out.seq_nll /= static_cast<double>(data.size());
        out.token_nll = out.token_count > 0 ? token_sum / static_cast<double>(out.token_count) : 0.0;
        out.interior_token_nll =
            interior_count > 0 ? interior_sum / static_cast<double>(interior_count) : 0.0;
        return out;
    }

    void save(const std::string& path) const {
        Checkpoint<T> ckpt;
        ckpt.header["kind"] = model_kind_name(kind_);
        ckpt.header["iter"] = std::to_string(iter_);
        ckpt.header["adam.step"] = std::to_string(adam_.step);
        ckpt.header["model.vocab_size"] = std::to_string(mcfg_.vocab_size);
        ckpt.header["model.d_model"] = std::to_string(mcfg_.d_model);
        ckpt.header["model.n_layers"] = std::to_string(mcfg_.n_layers);
        ckpt.header["model.n_heads"] = std::to_string(mcfg_.n_heads);
        ckpt.header["model.d_ff"] = std::to_string(mcfg_.d_ff);
        ckpt.header["model.max_len"] = std::to_string(mcfg_.max_len);
        ckpt.header["model.n_condition_slots"] = std::to_string(mcfg_.n_condition_slots);
        ckpt.header["model.cond_input_dim"] = std::to_string(mcfg_.cond_input_dim);
        ckpt.header["model.dropout"] = format_double(mcfg_.dropout_p);
        ckpt.header["train.lr"] = format_double(tcfg_.lr);
        ckpt.header["train.warmup_iters"] = std::to_string(tcfg_.warmup_iters);
        ckpt.header["train.total_iters"] = std::to_string(tcfg_.total_iters);
        ckpt.header["train.batch_size"] = std::to_string(tcfg_.batch_size);
        ckpt.header["train.weight_decay"] = format_double(tcfg_.weight_decay);
        ckpt.header["train.grad_clip_norm"] = format_double(tcfg_.grad_clip_norm);
        ckpt.header["train.seed"] = std::to_string(tcfg_.seed);
        ckpt.header["train.strategy"] = to_string(tcfg_.strategy);
        ckpt.header["train.eval_interval"] = std::to_string(tcfg_.eval_interval);
        for (const auto& [name, t] : params().all()) {
            ckpt.arrays.emplace(name, std::make_pair(t.shape(), t.val()));
            if (!adam_.m.empty()) {
                ckpt.arrays.emplace("opt.m." + name,
                                    std::make_pair(t.shape(), adam_.m.at(name)));
                ckpt.arrays.emplace("opt.v." + name,
                                    std::make_pair(t.shape(), adam_.v.at(name)));
            }
        }
        save_checkpoint(path, ckpt);
    }

    void resume(const std::string& path) {
        auto ckpt = load_checkpoint<T>(path);
        if (header_at(ckpt, "kind") != model_kind_name(kind_)) {
            throw ValueError("checkpoint kind " + header_at(ckpt, "kind") +
                             " does not match trainer kind " + model_kind_name(kind_));
        }
        for (const auto& [key, want] :
             std::initializer_list<std::pair<const char*, int64_t>>{
                 {"model.vocab_size", mcfg_.vocab_size},
                 {"model.d_model", mcfg_.d_model},
                 {"model.n_layers", mcfg_.n_layers},
                 {"model.n_heads", mcfg_.n_heads},
                 {"model.d_ff", mcfg_.d_ff},
                 {"model.n_condition_slots", mcfg_.n_condition_slots},
                 {"model.cond_input_dim", mcfg_.cond_input_dim}}) {
            if (std::stoll(header_at(ckpt, key)) != want) {
                throw ValueError("checkpoint mismatch on " + std::string(key));
            }
        }
        adam_.init(params());
        for (auto& [name, t] : params().all()) {
            auto& tensor = params().at(name);
            apply_array(ckpt, name, tensor.shape(), tensor.val());
            apply_array(ckpt, "opt.m." + name, tensor.shape(), adam_.m.at(name));
            apply_array(ckpt, "opt.v." + name, tensor.shape(), adam_.v.at(name));
        }
        iter_ = std::stoll(header_at(ckpt, "iter"));
        adam_.step = std::stoll(header_at(ckpt, "adam.step"));
    }

    // Rebuilds a trainer of the checkpointed kind and configuration, then
    // restores its parameters and optimizer state from the same file.
    static Trainer<T> from_checkpoint(const std::string& path) {
        const auto ckpt = load_checkpoint<T>(path);
        const ModelKind kind = model_kind_from_name(header_at(ckpt, "kind"));
        ModelConfig m;
        m.vocab_size = std::stoll(header_at(ckpt, "model.vocab_size"));
        m.d_model = std::stoll(header_at(ckpt, "model.d_model"));
        m.n_layers = std::stoll(header_at(ckpt, "model.n_layers"));
        m.n_heads = std::stoll(header_at(ckpt, "model.n_heads"));
        m.d_ff = std::stoll(header_at(ckpt, "model.d_ff"));
        m.max_len = std::stoll(header_at(ckpt, "model.max_len"));
        m.n_condition_slots = std::stoll(header_at(ckpt, "model.n_condition_slots"));
        m.cond_input_dim = std::stoll(header_at(ckpt, "model.cond_input_dim"));
        m.dropout_p = std::stod(header_at(ckpt, "model.dropout"));
        TrainConfig t;
        t.lr = std::stod(header_at(ckpt, "train.lr"));
        t.warmup_iters = std::stoll(header_at(ckpt, "train.warmup_iters"));
        t.total_iters = std::stoll(header_at(ckpt, "train.total_iters"));
        t.batch_size = std::stoll(header_at(ckpt, "train.batch_size"));
        t.weight_decay = std::stod(header_at(ckpt, "train.weight_decay"));
        t.grad_clip_norm = std::stod(header_at(ckpt, "train.grad_clip_norm"));
        t.seed = std::stoull(header_at(ckpt, "train.seed"));
        t.strategy = order_strategy_from_string(header_at(ckpt, "train.strategy"));
        t.eval_interval = std::stoll(header_at(ckpt, "train.eval_interval"));
        Trainer<T> out(kind, m, t);
        out.resume(path);
        return out;
    }

    // One optimizer pass over `data` in storage order (the benchmark path):
    // no evaluation or metric rows, and batches wrap at the tail so every
    // epoch runs the same iteration count. Iterations still advance the
    // per-iteration RNG streams and the learning-rate schedule, so the total
    // planned epochs must fit inside total_iters.
    void run_epoch(const std::vector<Example>& data) {
        if (data.empty()) {
            throw ValueError("empty training set");
        }
        check_compat(data.front());
        if (adam_.m.empty()) adam_.init(params());
        const int64_t n = static_cast<int64_t>(data.size());
        const int64_t iters = (n + tcfg_.batch_size - 1) / tcfg_.batch_size;
        if (iter_ + iters > tcfg_.total_iters) {
            throw ValueError("epoch would pass total_iters; raise train.total_iters");
        }
        for (int64_t k = 0; k < iters; ++k) {
            const int64_t iter = iter_ + 1;
            BatchData batch;
            batch.indices.resize(static_cast<size_t>(tcfg_.batch_size));
            batch.grids.resize(static_cast<size_t>(tcfg_.batch_size));
            for (int64_t b = 0; b < tcfg_.batch_size; ++b) {
                const int64_t idx = (k * tcfg_.batch_size + b) % n;
                batch.indices[static_cast<size_t>(b)] = idx;
                const auto& ex = data[static_cast<size_t>(idx)];
                if (ex.scene.has_value() && kind_ != ModelKind::it_vanilla &&
                    mcfg_.cond_input_dim > 0) {
                    const auto g = render_scene(*ex.scene);
                    batch.grids[static_cast<size_t>(b)].assign(g.data.begin(),
                                                               g.data.end());
                }
            }
            train_iteration(data, batch, iter);
            iter_ = iter;
        }
    }

    // Loss graph for one example under this trainer's kind. When `rng` is
    // null the order is the deterministic l2r form and dropout is off.
    SequenceLoss<T> example_loss(const Example& ex, const std::vector<T>* grid_flat,
                                 Rng* rng, bool eval_mode) const {
        const int64_t m = mcfg_.n_condition_slots;
        Rng fallback(0);
        Rng& order_rng = rng != nullptr ? *rng : fallback;
        const OrderStrategy strategy =
            rng != nullptr ? tcfg_.strategy : OrderStrategy::l2r;
        Rng* dropout = (!eval_mode && rng != nullptr && mcfg_.dropout_p > 0.0)
                           ? rng
                           : nullptr;
        std::vector<T> local_grid;
        const std::vector<T>* grid = grid_flat;
        if (grid == nullptr && ex.scene.has_value() && kind_ != ModelKind::it_vanilla &&
            mcfg_.cond_input_dim > 0) {
            const auto g = render_scene(*ex.scene);
            local_grid.assign(g.data.begin(), g.data.end());
            grid = &local_grid;
        }

        switch (kind_) {
            case ModelKind::insnet: {
                const int64_t n = m + static_cast<int64_t>(ex.ids.size());
                std::vector<int64_t> kws;
                for (int64_t p : ex.keyword_positions) kws.push_back(p + m);
                require_keywords(strategy, kws);
                auto order = sample_order(strategy, n, m, kws, order_rng);
                if (grid != nullptr) {
                    auto cond = insnet_->encode_condition(*grid);
                    return insnet_->sequence_loss(ex.ids, order, &cond, dropout);
                }
                return insnet_->sequence_loss(ex.ids, order, nullptr, dropout);
            }
            case ModelKind::it_vanilla: {
                if (ex.scene.has_value()) {
                    throw ValueError(
                        "the insertion-transformer baseline does not support conditions");
                }
                require_keywords(strategy, ex.keyword_positions);
                auto order = sample_order(strategy, static_cast<int64_t>(ex.ids.size()),
                                          0, ex.keyword_positions, order_rng);
                return it_->sequence_loss(ex.ids, order, dropout);
            }
            default: {
                if (grid != nullptr) {
                    auto cond = l2r_->encode_condition(*grid);
                    return l2r_->sequence_loss(ex.ids, &cond, dropout);
                }
                return l2r_->sequence_loss(ex.ids, nullptr, dropout);
            }
        }
    }

private:
    struct BatchData {
        std::vector<int64_t> indices;
        std::vector<std::vector<T>> grids;  // empty vector when no scene
    };

    static std::string format_double(double v) {
        std::ostringstream s;
        s.precision(17);
        s << v;
        return s.str();
    }

    static std::string header_at(const Checkpoint<T>& ckpt, const std::string& key) {
        auto it = ckpt.header.find(key);
        if (it == ckpt.header.end()) {
            throw ValueError("checkpoint header missing " + key);
        }
        return it->second;
    }

    static void apply_array(const Checkpoint<T>& ckpt, const std::string& name,
                            const Shape& shape, std::vector<T>& dst) {
        auto it = ckpt.arrays.find(name);
        if (it == ckpt.arrays.end()) {
            throw ValueError("checkpoint missing array " + name);
        }
        if (it->second.first != shape) {
            throw ValueError("checkpoint shape mismatch for " + name);
        }
        dst = it->second.second;
    }

    static void require_keywords(OrderStrategy strategy,
                                 const std::vector<int64_t>& kws) {
        const bool needs = strategy == OrderStrategy::keyword_first_l2r ||
                           strategy == OrderStrategy::keyword_first_uniform;
        if (needs && kws.empty()) {
            throw ValueError("keyword-first strategy requires keyword annotations");
        }
    }

    void check_compat(const Example& probe) const {
        if (kind_ == ModelKind::it_vanilla && probe.scene.has_value()) {
            throw ValueError(
                "the insertion-transformer baseline does not support conditions");
        }
        if (mcfg_.cond_input_dim > 0 && kind_ != ModelKind::it_vanilla &&
            !probe.scene.has_value()) {
            throw ValueError("model expects scene conditions but the dataset has none");
        }
        if (mcfg_.cond_input_dim == 0 && probe.scene.has_value() &&
            kind_ != ModelKind::it_vanilla) {
            throw ValueError("dataset provides scenes but the model has no condition encoder");
        }
    }

    BatchData make_batch(const std::vector<Example>& train_set, int64_t iter) const {
        Rng rng = Rng::from_seed_and_stream(tcfg_.seed, static_cast<uint64_t>(iter)).child(1);
        BatchData out;
        out.indices.resize(static_cast<size_t>(tcfg_.batch_size));
        out.grids.resize(static_cast<size_t>(tcfg_.batch_size));
        for (int64_t b = 0; b < tcfg_.batch_size; ++b) {
            const auto idx = rng.below(train_set.size());
            out.indices[static_cast<size_t>(b)] = static_cast<int64_t>(idx);
            const auto& ex = train_set[idx];
            if (ex.scene.has_value() && kind_ != ModelKind::it_vanilla &&
                mcfg_.cond_input_dim > 0) {
                const auto g = render_scene(*ex.scene);
                out.grids[static_cast<size_t>(b)].assign(g.data.begin(), g.data.end());
            }
        }
        return out;
    }

    double train_iteration(const std::vector<Example>& train_set, const BatchData& batch,
                           int64_t iter) {
        Rng step_rng =
            Rng::from_seed_and_stream(tcfg_.seed, static_cast<uint64_t>(iter)).child(2);
        params().zero_grads();
        double loss_sum = 0.0;
        for (int64_t b = 0; b < tcfg_.batch_size; ++b) {
            const auto& ex = train_set[static_cast<size_t>(batch.indices[static_cast<size_t>(b)])];
            const auto& grid = batch.grids[static_cast<size_t>(b)];
            Tape<T> tape;
            {
                TapeScope<T> scope(tape);
                auto loss = example_loss(ex, grid.empty() ? nullptr : &grid,
                                         &step_rng, false);
                tape.backward(loss.total);
                loss_sum += static_cast<double>(loss.total.item());
            }
        }
        if (!std::isfinite(loss_sum)) {
            throw ValueError("non-finite loss at iteration " + std::to_string(iter));
        }
        const T inv_b = T(1) / static_cast<T>(tcfg_.batch_size);
        for (auto& [name, unused] : params().all()) {
            for (auto& g : params().at(name).grad()) g *= inv_b;
        }
        adam_step(params(), adam_, tcfg_.lr_at(iter), 0.9, 0.999, 1e-8,
                  tcfg_.weight_decay, tcfg_.grad_clip_norm);
        return loss_sum / static_cast<double>(tcfg_.batch_size);
    }

    ModelKind kind_;
    ModelConfig mcfg_;
    TrainConfig tcfg_;
    int64_t iter_ = 0;
    AdamState<T> adam_;
    std::unique_ptr<InsNetModel<T>> insnet_;
    std::unique_ptr<ITVanillaModel<T>> it_;
    std::unique_ptr<L2RModel<T>> l2r_;
};

}  // namespace insnet
