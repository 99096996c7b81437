#pragma once

#include <functional>

#include "nodulenet/tensor.hpp"

namespace nodulenet {

/// f maps a point tensor to a scalar loss; a fresh tape is created per call
/// so f must build its whole graph from the given point.
template <typename T>
using TensorFn = std::function<Tensor<T>(Tape<T>&, Tensor<T>)>;

namespace detail {

/// Central-difference check over an explicit coordinate subset.
template <typename T>
double gradient_check_coords(const TensorFn<T>& f, Tensor<T> point, double epsilon,
                             const std::vector<int64_t>& coords) {
    if (epsilon <= 0 || epsilon > 1e-2)
        throw ContractError("gradient_check: epsilon must be in (0, 1e-2]");
    point.set_requires_grad(true);
    point.zero_grad();
    Tape<T> tape;
    Tensor<T> loss = f(tape, point);
    if (loss.size() != 1) throw ContractError("gradient_check: f must return a scalar");
    tape.backward(loss);
    std::vector<T> analytic = point.grad();

    double max_err = 0.0;
    for (int64_t i : coords) {
        const T saved = point.data()[i];
        point.data()[i] = saved + static_cast<T>(epsilon);
        Tape<T> tp;
        const double fp = static_cast<double>(f(tp, point).item());
        point.data()[i] = saved - static_cast<T>(epsilon);
        Tape<T> tm;
        const double fm = static_cast<double>(f(tm, point).item());
        point.data()[i] = saved;
        const double numeric = (fp - fm) / (2.0 * epsilon);
        const double err =
            std::abs(static_cast<double>(analytic[i]) - numeric) / std::max(1.0, std::abs(numeric));
        max_err = std::max(max_err, err);
    }
    point.zero_grad();
    return max_err;
}

} // namespace detail

/// Max over all coordinates of |analytic - central difference| / max(1, |cd|).
template <typename T>
double gradient_check(const TensorFn<T>& f, Tensor<T> point, double epsilon) {
    std::vector<int64_t> coords(point.size());
    for (int64_t i = 0; i < point.size(); ++i) coords[i] = i;
    return detail::gradient_check_coords(f, point, epsilon, coords);
}

/// Same check restricted to `count` deterministically sampled coordinates,
/// for points too large to sweep exhaustively.
template <typename T>
double gradient_check_sampled(const TensorFn<T>& f, Tensor<T> point, double epsilon, int count,
                              uint64_t seed) {
    std::vector<int64_t> coords;
    if (point.size() <= count) {
        coords.resize(point.size());
        for (int64_t i = 0; i < point.size(); ++i) coords[i] = i;
    } else {
        uint64_t s = seed;
        for (int i = 0; i < count; ++i) {
            s = s * 6364136223846793005ULL + 1442695040888963407ULL;
            coords.push_back(static_cast<int64_t>((s >> 17) % point.size()));
        }
    }
    return detail::gradient_check_coords(f, point, epsilon, coords);
}

} // namespace nodulenet
