#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "insnet/counters.hpp"
#include "insnet/errors.hpp"
#include "insnet/rng.hpp"

namespace insnet {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += "x";
    }
    return out + "]";
}

// Dense row-major array with a value buffer and a lazily allocated gradient
// buffer. Scalar type T selects the precision mode: float for training and
// benchmark runs, double for the verification suites.
template <typename T>
struct Payload {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool trainable = false;  // leaf parameter
    std::string name;

    void ensure_grad() {
        if (grad.empty()) grad.assign(val.size(), T(0));
    }
};

template <typename T>
class Tape;

// Value-semantic handle over a shared payload.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : p_(std::make_shared<Payload<T>>()) {
        p_->shape = std::move(shape);
        p_->val.assign(static_cast<size_t>(insnet::numel(p_->shape)), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : p_(std::make_shared<Payload<T>>()) {
        if (static_cast<int64_t>(data.size()) != insnet::numel(shape)) {
            throw ShapeError("tensor data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
        p_->shape = std::move(shape);
        p_->val = std::move(data);
    }

    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    bool defined() const { return p_ != nullptr; }
    const Shape& shape() const { return p_->shape; }
    int64_t size(size_t dim) const { return p_->shape.at(dim); }
    int64_t numel() const { return static_cast<int64_t>(p_->val.size()); }
    int64_t rows() const { return p_->shape.size() == 1 ? 1 : p_->shape[0]; }
    int64_t cols() const { return p_->shape.back(); }

    std::vector<T>& val() { return p_->val; }
    const std::vector<T>& val() const { return p_->val; }
    std::vector<T>& grad() { return p_->grad; }
    const std::vector<T>& grad() const { return p_->grad; }

    T item() const {
        if (p_->val.size() != 1) {
            throw ShapeError("item() on non-scalar tensor " + shape_str(p_->shape));
        }
        return p_->val[0];
    }

    bool requires_grad() const { return p_ && p_->requires_grad; }
    void set_requires_grad(bool b) { p_->requires_grad = b; }
    bool trainable() const { return p_ && p_->trainable; }
    void mark_trainable(const std::string& name) {
        p_->trainable = true;
        p_->requires_grad = true;
        p_->name = name;
    }
    const std::string& name() const { return p_->name; }

    std::shared_ptr<Payload<T>> payload() const { return p_; }

private:
    std::shared_ptr<Payload<T>> p_;
};

// Define-by-run operation record. Rebuilt per forward pass; backward()
// replays the closures exactly once in reverse order.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_fn) {
        ops_.push_back(std::move(backward_fn));
        counters().tape_nodes++;
    }

    size_t size() const { return ops_.size(); }

    void backward(Tensor<T> loss) {
        if (consumed_) {
            throw StateError("backward() called twice on the same tape");
        }
        if (loss.numel() != 1) {
            throw ShapeError("backward() requires a scalar loss, got " +
                             shape_str(loss.shape()));
        }
        if (!loss.requires_grad()) {
            throw StateError("loss is not connected to any trainable leaf");
        }
        consumed_ = true;
        loss.payload()->ensure_grad();
        loss.grad()[0] += T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            (*it)();
        }
    }

    static Tape*& current() {
        thread_local Tape* cur = nullptr;
        return cur;
    }

private:
    std::vector<std::function<void()>> ops_;
    bool consumed_ = false;
};

// RAII scope installing a tape as the recording target for the current
// execution context.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::current()) {
        Tape<T>::current() = &tape;
    }
    ~TapeScope() { Tape<T>::current() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* prev_;
};

// Named trainable leaves. std::map keeps lexicographic order, which is also
// the checkpoint serialization order.
template <typename T>
class ParamStore {
public:
    Tensor<T> add(const std::string& name, Shape shape, Rng& rng, T stddev) {
        Tensor<T> t(std::move(shape));
        if (stddev > T(0)) {
            for (auto& v : t.val()) v = static_cast<T>(rng.normal() * stddev);
        }
        t.mark_trainable(name);
        auto [it, inserted] = params_.emplace(name, t);
        if (!inserted) {
            throw ValueError("duplicate parameter name: " + name);
        }
        return t;
    }

    Tensor<T> add_const_fill(const std::string& name, Shape shape, T fill) {
        Tensor<T> t(std::move(shape), fill);
        t.mark_trainable(name);
        auto [it, inserted] = params_.emplace(name, t);
        if (!inserted) {
            throw ValueError("duplicate parameter name: " + name);
        }
        return t;
    }

    Tensor<T>& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) {
            throw ValueError("unknown parameter: " + name);
        }
        return it->second;
    }

    const Tensor<T>& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) {
            throw ValueError("unknown parameter: " + name);
        }
        return it->second;
    }

    const std::map<std::string, Tensor<T>>& all() const { return params_; }

    void zero_grads() {
        for (auto& [name, t] : params_) {
            auto& g = t.grad();
            std::fill(g.begin(), g.end(), T(0));
        }
    }

    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& [name, t] : params_) n += t.numel();
        return n;
    }

private:
    std::map<std::string, Tensor<T>> params_;
};

}  // namespace insnet
