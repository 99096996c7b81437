#pragma once

#include <algorithm>
#include <cmath>
#include <cblas.h>

#include "nodulenet/tensor.hpp"

namespace nodulenet {

namespace detail {

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

template <typename T>
bool grad_needed(std::initializer_list<Tensor<T>> inputs) {
    for (const auto& t : inputs)
        if (t.requires_grad()) return true;
    return false;
}

// Output of an op participates in the tape whenever any input does.
template <typename T>
Tensor<T> make_output(Shape shape, std::initializer_list<Tensor<T>> inputs) {
    return Tensor<T>::zeros(std::move(shape), grad_needed(inputs));
}

} // namespace detail

template <typename T>
Tensor<T> add(Tape<T>& tape, Tensor<T> a, Tensor<T> b) {
    detail::require_same_shape(a, b, "add");
    Tensor<T> y = detail::make_output(a.shape(), {a, b});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& yv = y.data();
    for (size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] + bv[i];
    if (y.requires_grad())
        tape.record([a, b, y]() mutable {
            const auto& go = y.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
    return y;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, Tensor<T> a, Tensor<T> b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<T> y = detail::make_output(a.shape(), {a, b});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& yv = y.data();
    for (size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] * bv[i];
    if (y.requires_grad())
        tape.record([a, b, y]() mutable {
            const auto& go = y.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a.data()[i];
            }
        });
    return y;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, Tensor<T> a, T c) {
    Tensor<T> y = detail::make_output(a.shape(), {a});
    const auto& av = a.data();
    auto& yv = y.data();
    for (size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] * c;
    if (y.requires_grad())
        tape.record([a, y, c]() mutable {
            const auto& go = y.grad();
            auto& ga = a.grad();
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
        });
    return y;
}

/// a[m,k] x b[k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(Tape<T>& tape, Tensor<T> a, Tensor<T> b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    const int m = static_cast<int>(a.dim(0)), k = static_cast<int>(a.dim(1)),
              n = static_cast<int>(b.dim(1));
    Tensor<T> y = detail::make_output<T>({m, n}, {a, b});
    detail::gemm(false, false, m, n, k, T(1), a.data().data(), k, b.data().data(), n, T(0),
                 y.data().data(), n);
    if (y.requires_grad())
        tape.record([a, b, y, m, n, k]() mutable {
            const T* go = y.grad().data();
            if (a.requires_grad())
                detail::gemm(false, true, m, k, n, T(1), go, n, b.data().data(), n, T(1),
                             a.grad().data(), k);
            if (b.requires_grad())
                detail::gemm(true, false, k, n, m, T(1), a.data().data(), k, go, n, T(1),
                             b.grad().data(), n);
        });
    return y;
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, Tensor<T> a, Shape new_shape) {
    if (numel(new_shape) != a.size())
        throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(new_shape) +
                             " changes element count");
    Tensor<T> y = detail::make_output(std::move(new_shape), {a});
    y.data() = a.data();
    if (y.requires_grad())
        tape.record([a, y]() mutable {
            const auto& go = y.grad();
            auto& ga = a.grad();
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        });
    return y;
}

/// Concatenate along `axis`; all other dimensions must agree.
template <typename T>
Tensor<T> concat(Tape<T>& tape, const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(s0.size()))
        throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(s0));
    Shape out = s0;
    out[axis] = 0;
    for (const auto& p : parts) {
        if (p.rank() != parts[0].rank())
            throw DimensionError("concat: rank mismatch");
        for (int d = 0; d < static_cast<int>(s0.size()); ++d)
            if (d != axis && p.dim(d) != s0[d])
                throw DimensionError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                     shape_str(s0) + " on axis " + std::to_string(d));
        out[axis] += p.dim(axis);
    }
    bool rg = false;
    for (const auto& p : parts) rg |= p.requires_grad();
    Tensor<T> y = Tensor<T>::zeros(out, rg);

    // outer = product of dims before axis, inner = product after.
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= s0[d];
    for (int d = axis + 1; d < static_cast<int>(s0.size()); ++d) inner *= s0[d];
    const int64_t out_row = out[axis] * inner;

    std::vector<int64_t> part_rows(parts.size());
    int64_t offset = 0;
    for (size_t i = 0; i < parts.size(); ++i) {
        part_rows[i] = parts[i].dim(axis) * inner;
        const T* src = parts[i].data().data();
        T* dst = y.data().data() + offset;
        for (int64_t o = 0; o < outer; ++o)
            std::copy(src + o * part_rows[i], src + (o + 1) * part_rows[i], dst + o * out_row);
        offset += part_rows[i];
    }
    std::vector<Tensor<T>> held = parts; // by-value copy keeps the handles alive and mutable
    if (rg)
        tape.record([parts = std::move(held), part_rows, y, outer, out_row]() mutable {
            const T* go = y.grad().data();
            int64_t offset = 0;
            for (size_t i = 0; i < parts.size(); ++i) {
                if (parts[i].requires_grad()) {
                    T* gp = parts[i].grad().data();
                    const int64_t rows = part_rows[i];
                    for (int64_t o = 0; o < outer; ++o)
                        for (int64_t r = 0; r < rows; ++r)
                            gp[o * rows + r] += go[o * out_row + offset + r];
                }
                offset += part_rows[i];
            }
        });
    return y;
}

template <typename T>
Tensor<T> reduce_sum(Tape<T>& tape, Tensor<T> a) {
    Tensor<T> y = detail::make_output<T>({1}, {a});
    T acc = 0;
    for (T v : a.data()) acc += v;
    y.data()[0] = acc;
    if (y.requires_grad())
        tape.record([a, y]() mutable {
            const T g = y.grad()[0];
            auto& ga = a.grad();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    return y;
}

template <typename T>
Tensor<T> reduce_mean(Tape<T>& tape, Tensor<T> a) {
    const T inv = T(1) / static_cast<T>(a.size());
    Tensor<T> y = detail::make_output<T>({1}, {a});
    T acc = 0;
    for (T v : a.data()) acc += v;
    y.data()[0] = acc * inv;
    if (y.requires_grad())
        tape.record([a, y, inv]() mutable {
            const T g = y.grad()[0] * inv;
            auto& ga = a.grad();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    return y;
}

/// Elementwise max; ties route the gradient to the first argument.
template <typename T>
Tensor<T> maximum(Tape<T>& tape, Tensor<T> a, Tensor<T> b) {
    detail::require_same_shape(a, b, "max");
    Tensor<T> y = detail::make_output(a.shape(), {a, b});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& yv = y.data();
    for (size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] >= bv[i] ? av[i] : bv[i];
    if (y.requires_grad())
        tape.record([a, b, y]() mutable {
            const auto& go = y.grad();
            for (size_t i = 0; i < go.size(); ++i) {
                if (a.data()[i] >= b.data()[i]) {
                    if (a.requires_grad()) a.grad()[i] += go[i];
                } else if (b.requires_grad()) {
                    b.grad()[i] += go[i];
                }
            }
        });
    return y;
}

namespace detail {

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_op(Tape<T>& tape, Tensor<T> a, FwdFn fwd, BwdFn bwd) {
    Tensor<T> y = make_output(a.shape(), {a});
    const auto& av = a.data();
    auto& yv = y.data();
    for (size_t i = 0; i < yv.size(); ++i) yv[i] = fwd(av[i]);
    if (y.requires_grad())
        tape.record([a, y, bwd]() mutable {
            const auto& go = y.grad();
            auto& ga = a.grad();
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bwd(a.data()[i], y.data()[i]);
        });
    return y;
}

} // namespace detail

template <typename T>
Tensor<T> relu(Tape<T>& tape, Tensor<T> a) {
    return detail::unary_op(
        tape, a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, Tensor<T> a) {
    return detail::unary_op(
        tape, a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> log_op(Tape<T>& tape, Tensor<T> a) {
    for (T v : a.data())
        if (v <= T(0)) throw DomainError("log of non-positive value");
    return detail::unary_op(
        tape, a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> exp_op(Tape<T>& tape, Tensor<T> a) {
    return detail::unary_op(
        tape, a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> square(Tape<T>& tape, Tensor<T> a) {
    return detail::unary_op(
        tape, a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> sqrt_op(Tape<T>& tape, Tensor<T> a) {
    for (T v : a.data())
        if (v < T(0)) throw DomainError("sqrt of negative value");
    return detail::unary_op(
        tape, a, [](T x) { return std::sqrt(x); },
        [](T, T y) { return y > T(0) ? T(1) / (T(2) * y) : T(0); });
}

/// x[b,in] * W[out,in]^T + bias[out] -> [b,out]
template <typename T>
Tensor<T> linear(Tape<T>& tape, Tensor<T> x, Tensor<T> w, Tensor<T> bias) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(w.shape()));
    if (bias.rank() != 1 || bias.dim(0) != w.dim(0))
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " vs weight " +
                             shape_str(w.shape()));
    const int b = static_cast<int>(x.dim(0)), in = static_cast<int>(x.dim(1)),
              out = static_cast<int>(w.dim(0));
    Tensor<T> y = detail::make_output<T>({b, out}, {x, w, bias});
    auto& yv = y.data();
    for (int i = 0; i < b; ++i)
        for (int o = 0; o < out; ++o) yv[i * out + o] = bias.data()[o];
    detail::gemm(false, true, b, out, in, T(1), x.data().data(), in, w.data().data(), in, T(1),
                 yv.data(), out);
    if (y.requires_grad())
        tape.record([x, w, bias, y, b, in, out]() mutable {
            const T* go = y.grad().data();
            if (x.requires_grad())
                detail::gemm(false, false, b, in, out, T(1), go, out, w.data().data(), in, T(1),
                             x.grad().data(), in);
            if (w.requires_grad())
                detail::gemm(true, false, out, in, b, T(1), go, out, x.data().data(), in, T(1),
                             w.grad().data(), in);
            if (bias.requires_grad()) {
                auto& gb = bias.grad();
                for (int i = 0; i < b; ++i)
                    for (int o = 0; o < out; ++o) gb[o] += go[i * out + o];
            }
        });
    return y;
}

/// [b,c,X,Y,Z] -> [b,c] mean over the spatial dimensions.
template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, Tensor<T> x) {
    if (x.rank() < 3)
        throw DimensionError("global_avg_pool expects [batch,channel,spatial...], got " +
                             shape_str(x.shape()));
    const int64_t b = x.dim(0), c = x.dim(1);
    int64_t vox = 1;
    for (int64_t d = 2; d < x.rank(); ++d) vox *= x.dim(d);
    const T inv = T(1) / static_cast<T>(vox);
    Tensor<T> y = detail::make_output<T>({b, c}, {x});
    const T* xv = x.data().data();
    auto& yv = y.data();
    for (int64_t i = 0; i < b * c; ++i) {
        T acc = 0;
        for (int64_t v = 0; v < vox; ++v) acc += xv[i * vox + v];
        yv[i] = acc * inv;
    }
    if (y.requires_grad())
        tape.record([x, y, b, c, vox, inv]() mutable {
            const T* go = y.grad().data();
            T* gx = x.grad().data();
            for (int64_t i = 0; i < b * c; ++i) {
                const T g = go[i] * inv;
                for (int64_t v = 0; v < vox; ++v) gx[i * vox + v] += g;
            }
        });
    return y;
}

} // namespace nodulenet
