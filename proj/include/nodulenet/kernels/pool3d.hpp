#pragma once

#include <cstdint>

namespace nodulenet::kernels {

/// Non-overlapping 3D max pooling: stride equals window, floor division
/// discards trailing elements. Layout [batch, channel, X, Y, Z].
struct Pool3dDims {
    int64_t batch, ch;
    int64_t X, Y, Z;    // input spatial dims
    int64_t wx, wy, wz; // window = stride

    int64_t ox() const { return X / wx; }
    int64_t oy() const { return Y / wy; }
    int64_t oz() const { return Z / wz; }
    int64_t in_vox() const { return X * Y * Z; }
    int64_t out_vox() const { return ox() * oy() * oz(); }
};

/// Forward with argmax capture (first maximal element in scan order).
/// `argmax`, sized batch*ch*out_vox, stores input offsets within a (b,c) slab.
template <typename T>
void maxpool3d_forward(const T* x, T* y, int64_t* argmax, const Pool3dDims& d) {
    const int64_t ox = d.ox(), oy = d.oy(), oz = d.oz();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < d.batch; ++b)
        for (int64_t c = 0; c < d.ch; ++c) {
            const T* slab = x + (b * d.ch + c) * d.in_vox();
            T* out = y + (b * d.ch + c) * d.out_vox();
            int64_t* arg = argmax + (b * d.ch + c) * d.out_vox();
            for (int64_t px = 0; px < ox; ++px)
                for (int64_t py = 0; py < oy; ++py)
                    for (int64_t pz = 0; pz < oz; ++pz) {
                        T best{};
                        int64_t best_at = -1;
                        for (int64_t fx = 0; fx < d.wx; ++fx)
                            for (int64_t fy = 0; fy < d.wy; ++fy)
                                for (int64_t fz = 0; fz < d.wz; ++fz) {
                                    const int64_t at = (px * d.wx + fx) * d.Y * d.Z +
                                                       (py * d.wy + fy) * d.Z + (pz * d.wz + fz);
                                    if (best_at < 0 || slab[at] > best) {
                                        best = slab[at];
                                        best_at = at;
                                    }
                                }
                        const int64_t o = (px * oy + py) * oz + pz;
                        out[o] = best;
                        arg[o] = best_at;
                    }
        }
}

template <typename T>
void maxpool3d_backward(const T* gy, const int64_t* argmax, T* gx, const Pool3dDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < d.batch; ++b)
        for (int64_t c = 0; c < d.ch; ++c) {
            const T* go = gy + (b * d.ch + c) * d.out_vox();
            const int64_t* arg = argmax + (b * d.ch + c) * d.out_vox();
            T* gi = gx + (b * d.ch + c) * d.in_vox();
            for (int64_t o = 0; o < d.out_vox(); ++o) gi[arg[o]] += go[o];
        }
}

} // namespace nodulenet::kernels
