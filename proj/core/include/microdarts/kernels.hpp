#pragma once

// Raw numeric loops shared by the autodiff ops. Everything here is plain
// single-threaded code with a fixed accumulation order, so results are
// reproducible bit-for-bit for a given binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <vector>

#include "microdarts/errors.hpp"

namespace microdarts::kernels {

// Row-major C[M,N] (+)= A[M,K] * B[K,N]. The i-k-j order keeps the inner
// loop contiguous over B and C so the compiler can vectorize it.
template <typename T>
void gemm(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * n, T{0});
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<size_t>(i) * k;
        T* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T{0}) continue;
            const T* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] (+)= A^T[M,K] * B[K,N] with A stored as [K,M].
template <typename T>
void gemm_at(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * n, T{0});
    for (int p = 0; p < k; ++p) {
        const T* arow = a + static_cast<size_t>(p) * m;
        const T* brow = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const T av = arow[i];
            if (av == T{0}) continue;
            T* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] (+)= A[M,K] * B^T[K,N] with B stored as [N,K].
template <typename T>
void gemm_bt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<size_t>(i) * k;
        T* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + static_cast<size_t>(j) * k;
            T acc = accumulate ? crow[j] : T{0};
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

inline int conv_out_dim(int in, int kernel, int stride, int pad, int dilation) {
    const int eff = dilation * (kernel - 1) + 1;
    return (in + 2 * pad - eff) / stride + 1;
}

// Gathers conv patches of one image channel group into a [Cg*kh*kw, Ho*Wo]
// column matrix. Out-of-range taps are zero.
template <typename T>
void im2col(const T* x, int channels, int h, int w, int kernel, int stride, int pad,
            int dilation, int ho, int wo, T* col) {
    const size_t plane = static_cast<size_t>(ho) * wo;
    size_t row = 0;
    for (int c = 0; c < channels; ++c) {
        const T* xc = x + static_cast<size_t>(c) * h * w;
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx, ++row) {
                T* dst = col + row * plane;
                const int oy0 = ky * dilation - pad;
                const int ox0 = kx * dilation - pad;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + oy0;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, T{0});
                        dst += wo;
                        continue;
                    }
                    const T* src = xc + static_cast<size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + ox0;
                        *dst++ = (ix >= 0 && ix < w) ? src[ix] : T{0};
                    }
                }
            }
        }
    }
}

// Scatter-add of a column matrix back onto the input plane (adjoint of im2col).
template <typename T>
void col2im_add(const T* col, int channels, int h, int w, int kernel, int stride, int pad,
                int dilation, int ho, int wo, T* x) {
    const size_t plane = static_cast<size_t>(ho) * wo;
    size_t row = 0;
    for (int c = 0; c < channels; ++c) {
        T* xc = x + static_cast<size_t>(c) * h * w;
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx, ++row) {
                const T* src = col + row * plane;
                const int oy0 = ky * dilation - pad;
                const int ox0 = kx * dilation - pad;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + oy0;
                    if (iy < 0 || iy >= h) {
                        src += wo;
                        continue;
                    }
                    T* dst = xc + static_cast<size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + ox0;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                    src += wo;
                }
            }
        }
    }
}

struct ConvDims {
    int batch, c_in, h, w;
    int c_out, kernel, stride, pad, dilation, groups;
    int ho, wo;
};

inline ConvDims conv_dims(int batch, int c_in, int h, int w, int c_out, int kernel, int stride,
                          int pad, int dilation, int groups) {
    if (c_in % groups != 0 || c_out % groups != 0)
        throw StructuralError("conv: channels not divisible by groups");
    ConvDims d{batch, c_in, h, w, c_out, kernel, stride, pad, dilation, groups, 0, 0};
    d.ho = conv_out_dim(h, kernel, stride, pad, dilation);
    d.wo = conv_out_dim(w, kernel, stride, pad, dilation);
    if (d.ho <= 0 || d.wo <= 0) throw StructuralError("conv: empty output plane");
    return d;
}

// weight layout: [c_out, c_in/groups, kh, kw]; y: [batch, c_out, ho, wo].
template <typename T>
void conv2d_forward(const T* x, const T* weight, T* y, const ConvDims& d, std::vector<T>& col) {
    const int cg_in = d.c_in / d.groups;
    const int cg_out = d.c_out / d.groups;
    const int krows = cg_in * d.kernel * d.kernel;
    const size_t plane = static_cast<size_t>(d.ho) * d.wo;
    col.resize(static_cast<size_t>(krows) * plane);
    for (int b = 0; b < d.batch; ++b) {
        for (int g = 0; g < d.groups; ++g) {
            const T* xg = x + (static_cast<size_t>(b) * d.c_in + static_cast<size_t>(g) * cg_in) *
                                  d.h * d.w;
            T* yg = y + (static_cast<size_t>(b) * d.c_out + static_cast<size_t>(g) * cg_out) * plane;
            const T* wg = weight + static_cast<size_t>(g) * cg_out * krows;
            if (d.kernel == 1 && d.stride == 1 && d.pad == 0) {
                gemm(cg_out, static_cast<int>(plane), cg_in, wg, xg, yg, false);
            } else {
                im2col(xg, cg_in, d.h, d.w, d.kernel, d.stride, d.pad, d.dilation, d.ho, d.wo,
                       col.data());
                gemm(cg_out, static_cast<int>(plane), krows, wg, col.data(), yg, false);
            }
        }
    }
}

// dx += W^T dy (col2im); dw += dy col^T. Either output may be null.
template <typename T>
void conv2d_backward(const T* x, const T* weight, const T* dy, T* dx, T* dw, const ConvDims& d,
                     std::vector<T>& col) {
    const int cg_in = d.c_in / d.groups;
    const int cg_out = d.c_out / d.groups;
    const int krows = cg_in * d.kernel * d.kernel;
    const size_t plane = static_cast<size_t>(d.ho) * d.wo;
    const bool pointwise = d.kernel == 1 && d.stride == 1 && d.pad == 0;
    col.resize(static_cast<size_t>(krows) * plane);
    for (int b = 0; b < d.batch; ++b) {
        for (int g = 0; g < d.groups; ++g) {
            const size_t xoff =
                (static_cast<size_t>(b) * d.c_in + static_cast<size_t>(g) * cg_in) * d.h * d.w;
            const size_t yoff =
                (static_cast<size_t>(b) * d.c_out + static_cast<size_t>(g) * cg_out) * plane;
            const T* wg = weight + static_cast<size_t>(g) * cg_out * krows;
            const T* dyg = dy + yoff;
            if (dw) {
                T* dwg = dw + static_cast<size_t>(g) * cg_out * krows;
                if (pointwise) {
                    gemm_bt(cg_out, krows, static_cast<int>(plane), dyg, x + xoff, dwg, true);
                } else {
                    im2col(x + xoff, cg_in, d.h, d.w, d.kernel, d.stride, d.pad, d.dilation, d.ho,
                           d.wo, col.data());
                    gemm_bt(cg_out, krows, static_cast<int>(plane), dyg, col.data(), dwg, true);
                }
            }
            if (dx) {
                if (pointwise) {
                    gemm_at(cg_in, static_cast<int>(plane), cg_out, wg, dyg, dx + xoff, true);
                } else {
                    gemm_at(krows, static_cast<int>(plane), cg_out, wg, dyg, col.data(), false);
                    col2im_add(col.data(), cg_in, d.h, d.w, d.kernel, d.stride, d.pad, d.dilation,
                               d.ho, d.wo, dx + xoff);
                }
            }
        }
    }
}

struct PoolDims {
    int batch, channels, h, w, kernel, stride, pad, ho, wo;
};

inline PoolDims pool_dims(int batch, int channels, int h, int w, int kernel, int stride, int pad) {
    PoolDims d{batch, channels, h, w, kernel, stride, pad, 0, 0};
    d.ho = conv_out_dim(h, kernel, stride, pad, 1);
    d.wo = conv_out_dim(w, kernel, stride, pad, 1);
    if (d.ho <= 0 || d.wo <= 0) throw StructuralError("pool: empty output plane");
    return d;
}

// Max pool; records the argmax flat offset per output for the backward pass.
// Ties resolve to the first window cell in scan order.
template <typename T>
void max_pool_forward(const T* x, T* y, int32_t* argmax, const PoolDims& d) {
    const size_t in_plane = static_cast<size_t>(d.h) * d.w;
    const size_t out_plane = static_cast<size_t>(d.ho) * d.wo;
    for (int bc = 0; bc < d.batch * d.channels; ++bc) {
        const T* xp = x + bc * in_plane;
        T* yp = y + bc * out_plane;
        int32_t* ap = argmax + bc * out_plane;
        for (int oy = 0; oy < d.ho; ++oy) {
            for (int ox = 0; ox < d.wo; ++ox) {
                T best = -std::numeric_limits<T>::infinity();
                int32_t best_at = -1;
                for (int ky = 0; ky < d.kernel; ++ky) {
                    const int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int kx = 0; kx < d.kernel; ++kx) {
                        const int ix = ox * d.stride + kx - d.pad;
                        if (ix < 0 || ix >= d.w) continue;
                        const T v = xp[static_cast<size_t>(iy) * d.w + ix];
                        if (v > best) {
                            best = v;
                            best_at = static_cast<int32_t>(iy * d.w + ix);
                        }
                    }
                }
                yp[static_cast<size_t>(oy) * d.wo + ox] = best;
                ap[static_cast<size_t>(oy) * d.wo + ox] = best_at;
            }
        }
    }
}

template <typename T>
void max_pool_backward(const T* dy, const int32_t* argmax, T* dx, const PoolDims& d) {
    const size_t in_plane = static_cast<size_t>(d.h) * d.w;
    const size_t out_plane = static_cast<size_t>(d.ho) * d.wo;
    for (int bc = 0; bc < d.batch * d.channels; ++bc) {
        const T* dyp = dy + bc * out_plane;
        const int32_t* ap = argmax + bc * out_plane;
        T* dxp = dx + bc * in_plane;
        for (size_t i = 0; i < out_plane; ++i)
            if (ap[i] >= 0) dxp[ap[i]] += dyp[i];
    }
}

// Mean over the valid (non-padding) window cells.
template <typename T>
void avg_pool_forward(const T* x, T* y, const PoolDims& d) {
    const size_t in_plane = static_cast<size_t>(d.h) * d.w;
    const size_t out_plane = static_cast<size_t>(d.ho) * d.wo;
    for (int bc = 0; bc < d.batch * d.channels; ++bc) {
        const T* xp = x + bc * in_plane;
        T* yp = y + bc * out_plane;
        for (int oy = 0; oy < d.ho; ++oy) {
            for (int ox = 0; ox < d.wo; ++ox) {
                T sum{0};
                int count = 0;
                for (int ky = 0; ky < d.kernel; ++ky) {
                    const int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int kx = 0; kx < d.kernel; ++kx) {
                        const int ix = ox * d.stride + kx - d.pad;
                        if (ix < 0 || ix >= d.w) continue;
                        sum += xp[static_cast<size_t>(iy) * d.w + ix];
                        ++count;
                    }
                }
                yp[static_cast<size_t>(oy) * d.wo + ox] = sum / static_cast<T>(count);
            }
        }
    }
}

template <typename T>
void avg_pool_backward(const T* dy, T* dx, const PoolDims& d) {
    const size_t in_plane = static_cast<size_t>(d.h) * d.w;
    const size_t out_plane = static_cast<size_t>(d.ho) * d.wo;
    for (int bc = 0; bc < d.batch * d.channels; ++bc) {
        const T* dyp = dy + bc * out_plane;
        T* dxp = dx + bc * in_plane;
        for (int oy = 0; oy < d.ho; ++oy) {
            for (int ox = 0; ox < d.wo; ++ox) {
                int count = 0;
                for (int ky = 0; ky < d.kernel; ++ky) {
                    const int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int kx = 0; kx < d.kernel; ++kx) {
                        const int ix = ox * d.stride + kx - d.pad;
                        if (ix >= 0 && ix < d.w) ++count;
                    }
                }
                const T g = dyp[static_cast<size_t>(oy) * d.wo + ox] / static_cast<T>(count);
                for (int ky = 0; ky < d.kernel; ++ky) {
                    const int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int kx = 0; kx < d.kernel; ++kx) {
                        const int ix = ox * d.stride + kx - d.pad;
                        if (ix >= 0 && ix < d.w) dxp[static_cast<size_t>(iy) * d.w + ix] += g;
                    }
                }
            }
        }
    }
}

// Batch normalization without affine parameters: per channel over batch and
// spatial dims, biased variance. Saves 1/sqrt(var+eps) for backward.
template <typename T>
void static_bn_forward(const T* x, T* y, int batch, int channels, int h, int w, double eps,
                       T* inv_std_out) {
    const size_t plane = static_cast<size_t>(h) * w;
    const size_t stride_b = static_cast<size_t>(channels) * plane;
    const int64_t n = static_cast<int64_t>(batch) * plane;
    for (int c = 0; c < channels; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int b = 0; b < batch; ++b) {
            const T* xp = x + b * stride_b + c * plane;
            for (size_t i = 0; i < plane; ++i) {
                const double v = static_cast<double>(xp[i]);
                sum += v;
                sq += v * v;
            }
        }
        const double mean = sum / static_cast<double>(n);
        double var = sq / static_cast<double>(n) - mean * mean;
        if (var < 0.0) var = 0.0;  // numeric guard
        const double inv_std = 1.0 / std::sqrt(var + eps);
        inv_std_out[c] = static_cast<T>(inv_std);
        const T m = static_cast<T>(mean);
        const T is = static_cast<T>(inv_std);
        for (int b = 0; b < batch; ++b) {
            const T* xp = x + b * stride_b + c * plane;
            T* yp = y + b * stride_b + c * plane;
            for (size_t i = 0; i < plane; ++i) yp[i] = (xp[i] - m) * is;
        }
    }
}

// dx = inv_std * (dy - mean(dy) - xhat * mean(dy*xhat)), the exact adjoint of
// the biased-variance normalization. xhat is the forward output.
template <typename T>
void static_bn_backward(const T* xhat, const T* dy, const T* inv_std, T* dx, int batch,
                        int channels, int h, int w) {
    const size_t plane = static_cast<size_t>(h) * w;
    const size_t stride_b = static_cast<size_t>(channels) * plane;
    const int64_t n = static_cast<int64_t>(batch) * plane;
    for (int c = 0; c < channels; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < batch; ++b) {
            const T* dyp = dy + b * stride_b + c * plane;
            const T* xp = xhat + b * stride_b + c * plane;
            for (size_t i = 0; i < plane; ++i) {
                sum_dy += static_cast<double>(dyp[i]);
                sum_dy_xhat += static_cast<double>(dyp[i]) * static_cast<double>(xp[i]);
            }
        }
        const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(n));
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(n));
        const T is = inv_std[c];
        for (int b = 0; b < batch; ++b) {
            const T* dyp = dy + b * stride_b + c * plane;
            const T* xp = xhat + b * stride_b + c * plane;
            T* dxp = dx + b * stride_b + c * plane;
            for (size_t i = 0; i < plane; ++i)
                dxp[i] += is * (dyp[i] - mean_dy - xp[i] * mean_dy_xhat);
        }
    }
}

}  // namespace microdarts::kernels
