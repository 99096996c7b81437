#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "nodulenet/errors.hpp"

namespace nodulenet {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

/// Dense row-major N-d array with an optional gradient buffer.
/// Copying a Tensor copies the handle; the storage is shared.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), {}, requires_grad, true);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        Tensor t(std::move(shape), std::move(values), requires_grad, false);
        if (static_cast<int64_t>(t.data().size()) != t.size())
            throw DimensionError("tensor data length " + std::to_string(t.data().size()) +
                                 " does not match shape " + shape_str(t.shape()));
        return t;
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    int64_t size() const { return numel(d_->shape); }
    int64_t rank() const { return static_cast<int64_t>(d_->shape.size()); }
    int64_t dim(size_t i) const { return d_->shape[i]; }

    std::vector<T>& data() { return d_->values; }
    const std::vector<T>& data() const { return d_->values; }
    T item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return d_->values[0];
    }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }

    bool has_grad() const { return !d_->grad.empty(); }
    /// Gradient buffer, allocated (zeroed) on first access.
    std::vector<T>& grad() {
        if (d_->grad.empty()) d_->grad.assign(d_->values.size(), T(0));
        return d_->grad;
    }
    const std::vector<T>& grad() const { return d_->grad; }
    void zero_grad() { d_->grad.clear(); }

    /// Identity of the underlying storage, for fan-out bookkeeping.
    const void* id() const { return d_.get(); }

private:
    struct Storage {
        Shape shape;
        std::vector<T> values;
        std::vector<T> grad; // empty until needed
        bool requires_grad = false;
    };

    Tensor(Shape shape, std::vector<T> values, bool rg, bool zero_fill)
        : d_(std::make_shared<Storage>()) {
        d_->shape = std::move(shape);
        for (int64_t d : d_->shape)
            if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(d_->shape));
        if (zero_fill)
            d_->values.assign(static_cast<size_t>(numel(d_->shape)), T(0));
        else
            d_->values = std::move(values);
        d_->requires_grad = rg;
    }

    std::shared_ptr<Storage> d_;
};

/// Reverse-mode tape: records backward closures in forward order and
/// replays them in reverse. One tape per forward/backward step.
template <typename T>
class Tape {
public:
    void record(std::function<void()> backward_fn) {
        ops_.push_back(std::move(backward_fn));
    }

    size_t size() const { return ops_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
    void backward(Tensor<T> loss) {
        if (loss.size() != 1)
            throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
        loss.grad()[0] = T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> ops_;
};

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op_name) {
    for (T v : t.data())
        if (!std::isfinite(static_cast<double>(v)))
            throw DomainError(std::string("non-finite value produced by ") + op_name);
}

} // namespace nodulenet
