#pragma once

#include <cstdint>
#include <vector>
#include <cblas.h>

namespace nodulenet::kernels {

/// Geometry of one same-padded 3D cross-correlation.
/// Tensors are row-major [batch, channel, X, Y, Z]; kernels [out, in, kx, ky, kz]
/// with odd kernel dims and zero padding of k/2 per axis.
struct Conv3dDims {
    int64_t batch, cin, cout;
    int64_t X, Y, Z;
    int64_t kx, ky, kz;

    int64_t vox() const { return X * Y * Z; }
    int64_t ksize() const { return kx * ky * kz; }
    int64_t col_rows() const { return cin * ksize(); }
};

namespace detail {
inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
                n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
                n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
} // namespace detail

/// Literal nested-loop reference. Kept serial; the production path is
/// checked against it in the tests and timed against it in the benchmark.
template <typename T>
void conv3d_forward_reference(const T* x, const T* w, const T* bias, T* y, const Conv3dDims& d) {
    const int64_t px = d.kx / 2, py = d.ky / 2, pz = d.kz / 2;
    for (int64_t b = 0; b < d.batch; ++b)
        for (int64_t oc = 0; oc < d.cout; ++oc)
            for (int64_t ix = 0; ix < d.X; ++ix)
                for (int64_t iy = 0; iy < d.Y; ++iy)
                    for (int64_t iz = 0; iz < d.Z; ++iz) {
                        T acc = bias ? bias[oc] : T(0);
                        for (int64_t ic = 0; ic < d.cin; ++ic)
                            for (int64_t fx = 0; fx < d.kx; ++fx)
                                for (int64_t fy = 0; fy < d.ky; ++fy)
                                    for (int64_t fz = 0; fz < d.kz; ++fz) {
                                        const int64_t sx = ix + fx - px;
                                        const int64_t sy = iy + fy - py;
                                        const int64_t sz = iz + fz - pz;
                                        if (sx < 0 || sx >= d.X || sy < 0 || sy >= d.Y ||
                                            sz < 0 || sz >= d.Z)
                                            continue;
                                        acc += w[(((oc * d.cin + ic) * d.kx + fx) * d.ky + fy) *
                                                     d.kz + fz] *
                                               x[((b * d.cin + ic) * d.X + sx) * d.Y * d.Z +
                                                 sy * d.Z + sz];
                                    }
                        y[((b * d.cout + oc) * d.X + ix) * d.Y * d.Z + iy * d.Z + iz] = acc;
                    }
}

/// Pack one batch item into col[cin*k^3, X*Y*Z] for the GEMM formulation.
template <typename T>
void im2col(const T* x, T* col, const Conv3dDims& d) {
    const int64_t px = d.kx / 2, py = d.ky / 2, pz = d.kz / 2;
    const int64_t vox = d.vox();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t ic = 0; ic < d.cin; ++ic)
        for (int64_t fx = 0; fx < d.kx; ++fx)
            for (int64_t fy = 0; fy < d.ky; ++fy)
                for (int64_t fz = 0; fz < d.kz; ++fz) {
                    T* row = col + (((ic * d.kx + fx) * d.ky + fy) * d.kz + fz) * vox;
                    const T* src = x + ic * vox;
                    const int64_t dx = fx - px, dy = fy - py, dz = fz - pz;
                    for (int64_t ix = 0; ix < d.X; ++ix) {
                        const int64_t sx = ix + dx;
                        for (int64_t iy = 0; iy < d.Y; ++iy) {
                            const int64_t sy = iy + dy;
                            T* out = row + (ix * d.Y + iy) * d.Z;
                            if (sx < 0 || sx >= d.X || sy < 0 || sy >= d.Y) {
                                for (int64_t iz = 0; iz < d.Z; ++iz) out[iz] = T(0);
                                continue;
                            }
                            const T* in = src + (sx * d.Y + sy) * d.Z;
                            for (int64_t iz = 0; iz < d.Z; ++iz) {
                                const int64_t sz = iz + dz;
                                out[iz] = (sz < 0 || sz >= d.Z) ? T(0) : in[sz];
                            }
                        }
                    }
                }
}

/// Scatter-add of a col buffer back onto the (zero-initialized) input gradient.
template <typename T>
void col2im_accumulate(const T* col, T* gx, const Conv3dDims& d) {
    const int64_t px = d.kx / 2, py = d.ky / 2, pz = d.kz / 2;
    const int64_t vox = d.vox();
#pragma omp parallel for schedule(static)
    for (int64_t ic = 0; ic < d.cin; ++ic)
        for (int64_t fx = 0; fx < d.kx; ++fx)
            for (int64_t fy = 0; fy < d.ky; ++fy)
                for (int64_t fz = 0; fz < d.kz; ++fz) {
                    const T* row = col + (((ic * d.kx + fx) * d.ky + fy) * d.kz + fz) * vox;
                    T* dst = gx + ic * vox;
                    const int64_t dx = fx - px, dy = fy - py, dz = fz - pz;
                    for (int64_t ix = 0; ix < d.X; ++ix) {
                        const int64_t sx = ix + dx;
                        if (sx < 0 || sx >= d.X) continue;
                        for (int64_t iy = 0; iy < d.Y; ++iy) {
                            const int64_t sy = iy + dy;
                            if (sy < 0 || sy >= d.Y) continue;
                            const T* in = row + (ix * d.Y + iy) * d.Z;
                            T* out = dst + (sx * d.Y + sy) * d.Z;
                            for (int64_t iz = 0; iz < d.Z; ++iz) {
                                const int64_t sz = iz + dz;
                                if (sz >= 0 && sz < d.Z) out[sz] += in[iz];
                            }
                        }
                    }
                }
}

/// Production forward: per batch item, y[b] = W[cout, cin*k^3] * col + bias.
/// `col` must hold col_rows() * vox() elements of scratch.
template <typename T>
void conv3d_forward(const T* x, const T* w, const T* bias, T* y, T* col, const Conv3dDims& d) {
    const int64_t vox = d.vox();
    const int rows = static_cast<int>(d.col_rows());
    for (int64_t b = 0; b < d.batch; ++b) {
        im2col(x + b * d.cin * vox, col, d);
        T* yb = y + b * d.cout * vox;
        if (bias) {
#pragma omp parallel for schedule(static)
            for (int64_t oc = 0; oc < d.cout; ++oc)
                for (int64_t v = 0; v < vox; ++v) yb[oc * vox + v] = bias[oc];
        } else {
            std::fill(yb, yb + d.cout * vox, T(0));
        }
        detail::gemm(false, false, static_cast<int>(d.cout), static_cast<int>(vox), rows, T(1), w,
                     rows, col, static_cast<int>(vox), T(1), yb, static_cast<int>(vox));
    }
}

/// Accumulates into gx/gw/gb; any of them may be null to skip that input.
template <typename T>
void conv3d_backward(const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb, T* col,
                     const Conv3dDims& d) {
    const int64_t vox = d.vox();
    const int rows = static_cast<int>(d.col_rows());
    std::vector<T> dcol;
    if (gx) dcol.resize(static_cast<size_t>(rows) * vox);
    for (int64_t b = 0; b < d.batch; ++b) {
        const T* gyb = gy + b * d.cout * vox;
        if (gw || gx) im2col(x + b * d.cin * vox, col, d); // col reused by gw below
        if (gw)
            detail::gemm(false, true, static_cast<int>(d.cout), rows, static_cast<int>(vox), T(1),
                         gyb, static_cast<int>(vox), col, static_cast<int>(vox), T(1), gw, rows);
        if (gb) {
#pragma omp parallel for schedule(static)
            for (int64_t oc = 0; oc < d.cout; ++oc) {
                T acc = 0;
                for (int64_t v = 0; v < vox; ++v) acc += gyb[oc * vox + v];
                gb[oc] += acc;
            }
        }
        if (gx) {
            detail::gemm(true, false, rows, static_cast<int>(vox), static_cast<int>(d.cout), T(1),
                         w, rows, gyb, static_cast<int>(vox), T(0), dcol.data(),
                         static_cast<int>(vox));
            col2im_accumulate(dcol.data(), gx + b * d.cin * vox, d);
        }
    }
}

} // namespace nodulenet::kernels
