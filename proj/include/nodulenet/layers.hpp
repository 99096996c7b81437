#pragma once

#include <random>

#include "nodulenet/kernels/conv3d.hpp"
#include "nodulenet/kernels/pool3d.hpp"
#include "nodulenet/ops.hpp"

namespace nodulenet {

enum class Mode { Train, Infer };

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Parameter values depend only on (seed, name), not on construction order.
inline std::mt19937_64 param_rng(uint64_t seed, const std::string& name) {
    return std::mt19937_64(splitmix64(seed ^ fnv1a(name)));
}

template <typename T>
void init_fan_in_uniform(Tensor<T>& t, int64_t fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (T& v : t.data()) v = static_cast<T>(dist(rng));
}

} // namespace detail

/// Same-padded 3x3x3 (or 1x1x1 for transitions) cross-correlation with bias.
template <typename T>
struct Conv3d {
    int64_t in_ch = 0, out_ch = 0;
    int64_t kx = 3, ky = 3, kz = 3;
    Tensor<T> weight; // [out, in, kx, ky, kz]
    Tensor<T> bias;   // [out]

    Conv3d() = default;
    Conv3d(int64_t in, int64_t out, uint64_t seed, const std::string& name, int64_t k = 3)
        : in_ch(in), out_ch(out), kx(k), ky(k), kz(k) {
        weight = Tensor<T>::zeros({out, in, kx, ky, kz}, true);
        bias = Tensor<T>::zeros({out}, true);
        auto rng = detail::param_rng(seed, name + "/weight");
        detail::init_fan_in_uniform(weight, in * kx * ky * kz, rng);
    }

    Tensor<T> forward(Tape<T>& tape, Tensor<T> x) const {
        if (x.rank() != 5)
            throw DimensionError("conv3d expects [b,c,X,Y,Z], got " + shape_str(x.shape()));
        if (x.dim(1) != in_ch)
            throw DimensionError("conv3d: input has " + std::to_string(x.dim(1)) +
                                 " channels, layer expects " + std::to_string(in_ch));
        kernels::Conv3dDims d{x.dim(0), in_ch, out_ch, x.dim(2), x.dim(3), x.dim(4), kx, ky, kz};
        Tensor<T> y = detail::make_output<T>({d.batch, out_ch, d.X, d.Y, d.Z}, {x, weight, bias});
        std::vector<T> col(static_cast<size_t>(d.col_rows()) * d.vox());
        kernels::conv3d_forward(x.data().data(), weight.data().data(), bias.data().data(),
                                y.data().data(), col.data(), d);
        if (y.requires_grad()) {
            Tensor<T> w = weight, b = bias;
            tape.record([x, w, b, y, d]() mutable {
                std::vector<T> col(static_cast<size_t>(d.col_rows()) * d.vox());
                kernels::conv3d_backward(x.data().data(), w.data().data(), y.grad().data(),
                                         x.requires_grad() ? x.grad().data() : nullptr,
                                         w.requires_grad() ? w.grad().data() : nullptr,
                                         b.requires_grad() ? b.grad().data() : nullptr,
                                         col.data(), d);
            });
        }
        return y;
    }
};

/// Window sizes 2x2x1 / 2x2x2, stride = window, floor division.
struct MaxPool3d {
    int64_t wx = 2, wy = 2, wz = 1;

    template <typename T>
    Tensor<T> forward(Tape<T>& tape, Tensor<T> x) const {
        if (x.rank() != 5)
            throw DimensionError("maxpool3d expects [b,c,X,Y,Z], got " + shape_str(x.shape()));
        kernels::Pool3dDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4), wx, wy, wz};
        if (d.ox() < 1 || d.oy() < 1 || d.oz() < 1)
            throw DimensionError("maxpool3d: input " + shape_str(x.shape()) +
                                 " shorter than window " + std::to_string(wx) + "x" +
                                 std::to_string(wy) + "x" + std::to_string(wz));
        Tensor<T> y = detail::make_output<T>({d.batch, d.ch, d.ox(), d.oy(), d.oz()}, {x});
        auto argmax = std::make_shared<std::vector<int64_t>>(
            static_cast<size_t>(d.batch * d.ch * d.out_vox()));
        kernels::maxpool3d_forward(x.data().data(), y.data().data(), argmax->data(), d);
        if (y.requires_grad())
            tape.record([x, y, argmax, d]() mutable {
                kernels::maxpool3d_backward(y.grad().data(), argmax->data(), x.grad().data(), d);
            });
        return y;
    }
};

/// Per-channel batch normalization over [b, spatial...].
/// Train mode uses biased batch statistics and updates the running ones;
/// a frozen layer behaves like inference regardless of the requested mode.
template <typename T>
struct BatchNorm3d {
    int64_t ch = 0;
    Tensor<T> gamma, beta;
    std::vector<double> running_mean, running_var;
    double epsilon = 1e-3;
    double momentum = 0.99;
    bool frozen = false;

    BatchNorm3d() = default;
    explicit BatchNorm3d(int64_t channels) : ch(channels) {
        gamma = Tensor<T>::full({channels}, T(1), true);
        beta = Tensor<T>::zeros({channels}, true);
        running_mean.assign(channels, 0.0);
        running_var.assign(channels, 1.0);
    }

    Tensor<T> forward(Tape<T>& tape, Tensor<T> x, Mode mode) {
        if (x.rank() < 3)
            throw DimensionError("batchnorm expects [b,c,spatial...], got " + shape_str(x.shape()));
        if (x.dim(1) != ch)
            throw DimensionError("batchnorm: " + std::to_string(x.dim(1)) + " channels vs layer " +
                                 std::to_string(ch));
        const bool train = mode == Mode::Train && !frozen;
        if (train && x.dim(0) < 2)
            throw ContractError("batchnorm train mode requires batch size >= 2");

        const int64_t b = x.dim(0);
        int64_t vox = 1;
        for (int64_t i = 2; i < x.rank(); ++i) vox *= x.dim(i);
        const int64_t n = b * vox;

        std::vector<double> mean(ch), invstd(ch);
        const T* xv = x.data().data();
        if (train) {
            for (int64_t c = 0; c < ch; ++c) {
                double s = 0, s2 = 0;
                for (int64_t i = 0; i < b; ++i) {
                    const T* p = xv + (i * ch + c) * vox;
                    for (int64_t v = 0; v < vox; ++v) {
                        s += p[v];
                        s2 += static_cast<double>(p[v]) * p[v];
                    }
                }
                const double m = s / n;
                const double var = std::max(0.0, s2 / n - m * m);
                mean[c] = m;
                invstd[c] = 1.0 / std::sqrt(var + epsilon);
                running_mean[c] = momentum * running_mean[c] + (1.0 - momentum) * m;
                running_var[c] = momentum * running_var[c] + (1.0 - momentum) * var;
            }
        } else {
            for (int64_t c = 0; c < ch; ++c) {
                mean[c] = running_mean[c];
                invstd[c] = 1.0 / std::sqrt(running_var[c] + epsilon);
            }
        }

        Tensor<T> y = detail::make_output<T>(x.shape(), {x, gamma, beta});
        auto xhat = std::make_shared<std::vector<T>>(x.data().size());
        T* yv = y.data().data();
        T* xh = xhat->data();
#pragma omp parallel for collapse(2) schedule(static)
        for (int64_t i = 0; i < b; ++i)
            for (int64_t c = 0; c < ch; ++c) {
                const T m = static_cast<T>(mean[c]);
                const T is = static_cast<T>(invstd[c]);
                const T g = gamma.data()[c];
                const T bt = beta.data()[c];
                const int64_t base = (i * ch + c) * vox;
                for (int64_t v = 0; v < vox; ++v) {
                    const T h = (xv[base + v] - m) * is;
                    xh[base + v] = h;
                    yv[base + v] = g * h + bt;
                }
            }

        if (y.requires_grad()) {
            Tensor<T> g = gamma, bt = beta;
            auto inv = std::make_shared<std::vector<double>>(invstd);
            const int64_t chn = ch;
            tape.record([x, g, bt, y, xhat, inv, b, chn, vox, n, train]() mutable {
                const T* go = y.grad().data();
                const T* xh = xhat->data();
                std::vector<double> sum_go(chn, 0.0), sum_go_xh(chn, 0.0);
                for (int64_t i = 0; i < b; ++i)
                    for (int64_t c = 0; c < chn; ++c) {
                        const int64_t base = (i * chn + c) * vox;
                        double s = 0, sx = 0;
                        for (int64_t v = 0; v < vox; ++v) {
                            s += go[base + v];
                            sx += static_cast<double>(go[base + v]) * xh[base + v];
                        }
                        sum_go[c] += s;
                        sum_go_xh[c] += sx;
                    }
                if (g.requires_grad())
                    for (int64_t c = 0; c < chn; ++c) g.grad()[c] += static_cast<T>(sum_go_xh[c]);
                if (bt.requires_grad())
                    for (int64_t c = 0; c < chn; ++c) bt.grad()[c] += static_cast<T>(sum_go[c]);
                if (x.requires_grad()) {
                    T* gx = x.grad().data();
                    for (int64_t i = 0; i < b; ++i)
                        for (int64_t c = 0; c < chn; ++c) {
                            const double scale = g.data()[c] * (*inv)[c];
                            const int64_t base = (i * chn + c) * vox;
                            if (train) {
                                const double mg = sum_go[c] / n;
                                const double mgx = sum_go_xh[c] / n;
                                for (int64_t v = 0; v < vox; ++v)
                                    gx[base + v] += static_cast<T>(
                                        scale * (go[base + v] - mg - xh[base + v] * mgx));
                            } else {
                                for (int64_t v = 0; v < vox; ++v)
                                    gx[base + v] += static_cast<T>(scale * go[base + v]);
                            }
                        }
                }
            });
        }
        return y;
    }
};

/// Dense layer y = x W^T + b.
template <typename T>
struct LinearLayer {
    int64_t in_features = 0, out_features = 0;
    Tensor<T> weight; // [out, in]
    Tensor<T> bias;   // [out]

    LinearLayer() = default;
    LinearLayer(int64_t in, int64_t out, uint64_t seed, const std::string& name)
        : in_features(in), out_features(out) {
        weight = Tensor<T>::zeros({out, in}, true);
        bias = Tensor<T>::zeros({out}, true);
        auto rng = detail::param_rng(seed, name + "/weight");
        detail::init_fan_in_uniform(weight, in, rng);
    }

    Tensor<T> forward(Tape<T>& tape, Tensor<T> x) const { return linear(tape, x, weight, bias); }
};

} // namespace nodulenet
