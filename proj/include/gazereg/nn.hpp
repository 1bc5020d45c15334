#pragma once

#include "gazereg/rng.hpp"
#include "gazereg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gazereg::nn {

enum class Mode { Train, Eval };

// Fixed-width SIMD lanes via the GCC/Clang vector extension. Lane order is
// part of the code, so results are bit-reproducible for a given build
// regardless of thread count.
template <typename T>
struct SimdVec {
    static constexpr int bytes = 32;
    typedef T type __attribute__((vector_size(bytes)));
    static constexpr int width = bytes / static_cast<int>(sizeof(T));
};

// ---------------------------------------------------------------------------
// Convolution: kernel 3, stride 1, zero padding p on both sides, no bias.
// All accumulation orders are fixed and independent of the thread count, so
// results are bit-reproducible.
// ---------------------------------------------------------------------------

struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int dilation = 1;
    int padding = 1;
};

inline std::int64_t conv1d_out_length(const ConvSpec& spec, std::int64_t in_length) {
    return in_length + 2 * spec.padding -
           static_cast<std::int64_t>(spec.dilation) * (spec.kernel - 1);
}

template <typename T>
void conv1d_validate(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec) {
    if (spec.stride != 1) {
        throw ArgumentError("conv1d supports stride 1 only");
    }
    if (spec.kernel < 1 || spec.dilation < 1 || spec.padding < 0) {
        throw ArgumentError("invalid conv spec");
    }
    if (x.rank() != 3 || x.dim(1) != spec.in_channels) {
        throw ShapeError("conv1d input must be (B, in_channels, L)");
    }
    if (w.rank() != 3 || w.dim(0) != spec.out_channels || w.dim(1) != spec.in_channels ||
        w.dim(2) != spec.kernel) {
        throw ShapeError("conv1d weight must be (out_channels, in_channels, kernel)");
    }
    if (conv1d_out_length(spec, x.dim(2)) < 1) {
        throw ShapeError("conv1d output would be empty");
    }
}

// out[b,o,t] = sum_c sum_j w[o,c,j] * x[b,c,t + j*d - p] (zero-padded).
template <typename T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec) {
    conv1d_validate(x, w, spec);
    const std::int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
    const std::int64_t O = spec.out_channels, K = spec.kernel;
    const std::int64_t d = spec.dilation, p = spec.padding;
    const std::int64_t Lo = conv1d_out_length(spec, L);
    Tensor<T> out({B, O, Lo});

    // Interior region where every tap is in bounds.
    const std::int64_t fuse_lo = std::min(Lo, p);
    const std::int64_t fuse_hi = std::max(fuse_lo, std::min(Lo, L + p - d * (K - 1)));
    constexpr std::int64_t CB = 8; // input-channel block, keeps the out row in registers longer

    const T* xd = x.data();
    const T* wd = w.data();
    T* od = out.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t o = 0; o < O; ++o) {
            T* __restrict orow = od + (b * O + o) * Lo;
            if (K == 3) {
                using V = typename SimdVec<T>::type;
                constexpr std::int64_t W = SimdVec<T>::width;
                std::int64_t c = 0;
                for (; c + CB <= C; c += CB) {
                    const T* __restrict xr[CB];
                    T w0[CB], w1[CB], w2[CB];
                    for (std::int64_t cc = 0; cc < CB; ++cc) {
                        xr[cc] = xd + (b * C + c + cc) * L - p;
                        const T* wrow = wd + (o * C + c + cc) * K;
                        w0[cc] = wrow[0];
                        w1[cc] = wrow[1];
                        w2[cc] = wrow[2];
                    }
                    std::int64_t t = fuse_lo;
                    for (; t + W <= fuse_hi; t += W) {
                        V acc;
                        std::memcpy(&acc, orow + t, sizeof(V));
                        for (std::int64_t cc = 0; cc < CB; ++cc) {
                            V x0, x1, x2;
                            std::memcpy(&x0, xr[cc] + t, sizeof(V));
                            std::memcpy(&x1, xr[cc] + t + d, sizeof(V));
                            std::memcpy(&x2, xr[cc] + t + 2 * d, sizeof(V));
                            acc += x0 * w0[cc] + x1 * w1[cc] + x2 * w2[cc];
                        }
                        std::memcpy(orow + t, &acc, sizeof(V));
                    }
                    for (; t < fuse_hi; ++t) {
                        T acc = orow[t];
                        for (std::int64_t cc = 0; cc < CB; ++cc) {
                            acc += w0[cc] * xr[cc][t] + w1[cc] * xr[cc][t + d] +
                                   w2[cc] * xr[cc][t + 2 * d];
                        }
                        orow[t] = acc;
                    }
                }
                for (; c < C; ++c) {
                    const T* __restrict xb = xd + (b * C + c) * L - p;
                    const T* wrow = wd + (o * C + c) * K;
                    const T w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
                    for (std::int64_t t = fuse_lo; t < fuse_hi; ++t) {
                        orow[t] += w0 * xb[t] + w1 * xb[t + d] + w2 * xb[t + 2 * d];
                    }
                }
            } else {
                for (std::int64_t c = 0; c < C; ++c) {
                    const T* xrow = xd + (b * C + c) * L;
                    const T* wrow = wd + (o * C + c) * K;
                    for (std::int64_t t = fuse_lo; t < fuse_hi; ++t) {
                        const T* xb = xrow + t - p;
                        T acc = orow[t];
                        for (std::int64_t j = 0; j < K; ++j) {
                            acc += wrow[j] * xb[j * d];
                        }
                        orow[t] = acc;
                    }
                }
            }
            // Edges: per-tap bounds, accumulated after the interior.
            for (std::int64_t c = 0; c < C; ++c) {
                const T* xrow = xd + (b * C + c) * L;
                const T* wrow = wd + (o * C + c) * K;
                for (std::int64_t j = 0; j < K; ++j) {
                    const std::int64_t off = j * d - p;
                    const T wv = wrow[j];
                    const std::int64_t t0 = std::max<std::int64_t>(0, -off);
                    const std::int64_t t1 = std::min(Lo, L - off);
                    for (std::int64_t t = t0; t < std::min(t1, fuse_lo); ++t) {
                        orow[t] += wv * xrow[t + off];
                    }
                    for (std::int64_t t = std::max(t0, fuse_hi); t < t1; ++t) {
                        orow[t] += wv * xrow[t + off];
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor<T> grad_x;
    Tensor<T> grad_w;
};

// Exact adjoints of conv1d_forward.
template <typename T>
ConvGrads<T> conv1d_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w,
                             const ConvSpec& spec) {
    conv1d_validate(x, w, spec);
    const std::int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
    const std::int64_t O = spec.out_channels, K = spec.kernel;
    const std::int64_t d = spec.dilation, p = spec.padding;
    const std::int64_t Lo = conv1d_out_length(spec, L);
    if (grad_out.rank() != 3 || grad_out.dim(0) != B || grad_out.dim(1) != O ||
        grad_out.dim(2) != Lo) {
        throw ShapeError("conv1d_backward: grad_out shape mismatch");
    }

    ConvGrads<T> grads{Tensor<T>({B, C, L}), Tensor<T>({O, C, K})};
    const T* xd = x.data();
    const T* wd = w.data();
    const T* gd = grad_out.data();

    // grad_x[b,c,t] = sum_o sum_j w[o,c,j] * grad_out[b,o,t + p - j*d]
    T* gx = grads.grad_x.data();
    const std::int64_t xfuse_lo = std::min(L, std::max<std::int64_t>(0, d * (K - 1) - p));
    const std::int64_t xfuse_hi = std::max(xfuse_lo, std::min(L, Lo - p));
    constexpr std::int64_t OB = 8; // output-channel block
#pragma omp parallel for schedule(static)
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
            T* __restrict gxrow = gx + (b * C + c) * L;
            if (K == 3) {
                using V = typename SimdVec<T>::type;
                constexpr std::int64_t W = SimdVec<T>::width;
                std::int64_t o = 0;
                for (; o + OB <= O; o += OB) {
                    const T* __restrict gr[OB];
                    T w0[OB], w1[OB], w2[OB];
                    for (std::int64_t oo = 0; oo < OB; ++oo) {
                        gr[oo] = gd + (b * O + o + oo) * Lo + p;
                        const T* wrow = wd + ((o + oo) * C + c) * K;
                        w0[oo] = wrow[0];
                        w1[oo] = wrow[1];
                        w2[oo] = wrow[2];
                    }
                    std::int64_t t = xfuse_lo;
                    for (; t + W <= xfuse_hi; t += W) {
                        V acc;
                        std::memcpy(&acc, gxrow + t, sizeof(V));
                        for (std::int64_t oo = 0; oo < OB; ++oo) {
                            V g0, g1, g2;
                            std::memcpy(&g0, gr[oo] + t, sizeof(V));
                            std::memcpy(&g1, gr[oo] + t - d, sizeof(V));
                            std::memcpy(&g2, gr[oo] + t - 2 * d, sizeof(V));
                            acc += g0 * w0[oo] + g1 * w1[oo] + g2 * w2[oo];
                        }
                        std::memcpy(gxrow + t, &acc, sizeof(V));
                    }
                    for (; t < xfuse_hi; ++t) {
                        T acc = gxrow[t];
                        for (std::int64_t oo = 0; oo < OB; ++oo) {
                            acc += w0[oo] * gr[oo][t] + w1[oo] * gr[oo][t - d] +
                                   w2[oo] * gr[oo][t - 2 * d];
                        }
                        gxrow[t] = acc;
                    }
                }
                for (; o < O; ++o) {
                    const T* __restrict gb = gd + (b * O + o) * Lo + p;
                    const T* wrow = wd + (o * C + c) * K;
                    const T w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
                    for (std::int64_t t = xfuse_lo; t < xfuse_hi; ++t) {
                        gxrow[t] += w0 * gb[t] + w1 * gb[t - d] + w2 * gb[t - 2 * d];
                    }
                }
            } else {
                for (std::int64_t o = 0; o < O; ++o) {
                    const T* grow = gd + (b * O + o) * Lo;
                    const T* wrow = wd + (o * C + c) * K;
                    for (std::int64_t t = xfuse_lo; t < xfuse_hi; ++t) {
                        T acc = gxrow[t];
                        for (std::int64_t j = 0; j < K; ++j) {
                            acc += wrow[j] * grow[t + p - j * d];
                        }
                        gxrow[t] = acc;
                    }
                }
            }
            for (std::int64_t o = 0; o < O; ++o) {
                const T* grow = gd + (b * O + o) * Lo;
                const T* wrow = wd + (o * C + c) * K;
                for (std::int64_t j = 0; j < K; ++j) {
                    const std::int64_t off = p - j * d;
                    const T wv = wrow[j];
                    const std::int64_t t0 = std::max<std::int64_t>(0, -off);
                    const std::int64_t t1 = std::min(L, Lo - off);
                    for (std::int64_t t = t0; t < std::min(t1, xfuse_lo); ++t) {
                        gxrow[t] += wv * grow[t + off];
                    }
                    for (std::int64_t t = std::max(t0, xfuse_hi); t < t1; ++t) {
                        gxrow[t] += wv * grow[t + off];
                    }
                }
            }
        }
    }

    // grad_w[o,c,j] = sum_b sum_t grad_out[b,o,t] * x[b,c,t + j*d - p].
    // c-outer so x streams through memory once per layer; explicitly
    // vectorized with a fixed lane order, so the sum is independent of the
    // thread count.
    T* gw = grads.grad_w.data();
    if (K == 3) {
        using V = typename SimdVec<T>::type;
        constexpr std::int64_t W = SimdVec<T>::width;
        const std::int64_t t_lo = std::min(Lo, std::max<std::int64_t>(0, p));
        const std::int64_t t_hi = std::max(t_lo, std::min(Lo, L + p - 2 * d));
#pragma omp parallel for schedule(static)
        for (std::int64_t c = 0; c < C; ++c) {
            for (std::int64_t o = 0; o < O; ++o) {
                V v0{}, v1{}, v2{};
                T s0{}, s1{}, s2{};
                for (std::int64_t b = 0; b < B; ++b) {
                    const T* __restrict grow = gd + (b * O + o) * Lo;
                    const T* __restrict xrow = xd + (b * C + c) * L - p;
                    std::int64_t t = t_lo;
                    for (; t + W <= t_hi; t += W) {
                        V g, x0, x1, x2;
                        std::memcpy(&g, grow + t, sizeof(V));
                        std::memcpy(&x0, xrow + t, sizeof(V));
                        std::memcpy(&x1, xrow + t + d, sizeof(V));
                        std::memcpy(&x2, xrow + t + 2 * d, sizeof(V));
                        v0 += g * x0;
                        v1 += g * x1;
                        v2 += g * x2;
                    }
                    for (; t < t_hi; ++t) {
                        const T g = grow[t];
                        s0 += g * xrow[t];
                        s1 += g * xrow[t + d];
                        s2 += g * xrow[t + 2 * d];
                    }
                    // edge taps outside the all-valid region
                    for (std::int64_t j = 0; j < 3; ++j) {
                        const std::int64_t off = j * d - p;
                        const std::int64_t e0 = std::max<std::int64_t>(0, -off);
                        const std::int64_t e1 = std::min(Lo, L - off);
                        T e{};
                        for (std::int64_t tt = e0; tt < std::min(e1, t_lo); ++tt) {
                            e += grow[tt] * xrow[tt + p + off];
                        }
                        for (std::int64_t tt = std::max(e0, t_hi); tt < e1; ++tt) {
                            e += grow[tt] * xrow[tt + p + off];
                        }
                        (j == 0 ? s0 : j == 1 ? s1 : s2) += e;
                    }
                }
                for (std::int64_t l = 0; l < W; ++l) {
                    s0 += v0[l];
                    s1 += v1[l];
                    s2 += v2[l];
                }
                gw[(o * C + c) * 3 + 0] = s0;
                gw[(o * C + c) * 3 + 1] = s1;
                gw[(o * C + c) * 3 + 2] = s2;
            }
        }
    } else {
#pragma omp parallel for schedule(static)
        for (std::int64_t o = 0; o < O; ++o) {
            for (std::int64_t c = 0; c < C; ++c) {
                for (std::int64_t j = 0; j < K; ++j) {
                    const std::int64_t off = j * d - p;
                    const std::int64_t t0 = std::max<std::int64_t>(0, -off);
                    const std::int64_t t1 = std::min(Lo, L - off);
                    T acc{};
                    for (std::int64_t b = 0; b < B; ++b) {
                        const T* __restrict grow = gd + (b * O + o) * Lo;
                        const T* __restrict xrow = xd + (b * C + c) * L + off;
                        for (std::int64_t t = t0; t < t1; ++t) {
                            acc += grow[t] * xrow[t];
                        }
                    }
                    gw[(o * C + c) * K + j] = acc;
                }
            }
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, time) per channel.
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
    Parameter<T> gamma;
    Parameter<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T momentum = static_cast<T>(0.1);
    T eps = static_cast<T>(1e-5);

    BatchNormState() = default;
    BatchNormState(const std::string& name, std::int64_t channels)
        : gamma(name + ".gamma", {channels}), beta(name + ".beta", {channels}),
          running_mean(static_cast<std::size_t>(channels), T{}),
          running_var(static_cast<std::size_t>(channels), static_cast<T>(1)) {
        gamma.value.fill(static_cast<T>(1));
    }

    std::int64_t channels() const { return gamma.value.numel(); }
};

template <typename T>
struct BatchNormCache {
    Tensor<T> xhat;
    std::vector<T> inv_std;
};

namespace detail {

// sum of row[0..n) with fixed lane order
template <typename T>
T vec_sum(const T* __restrict row, std::int64_t n) {
    using V = typename SimdVec<T>::type;
    constexpr std::int64_t W = SimdVec<T>::width;
    V v{};
    std::int64_t i = 0;
    for (; i + W <= n; i += W) {
        V x;
        std::memcpy(&x, row + i, sizeof(V));
        v += x;
    }
    T s{};
    for (; i < n; ++i) {
        s += row[i];
    }
    for (std::int64_t l = 0; l < W; ++l) {
        s += v[l];
    }
    return s;
}

// sum of (row - mu)^2
template <typename T>
T vec_sq_dev(const T* __restrict row, std::int64_t n, T mu) {
    using V = typename SimdVec<T>::type;
    constexpr std::int64_t W = SimdVec<T>::width;
    V v{};
    std::int64_t i = 0;
    for (; i + W <= n; i += W) {
        V x;
        std::memcpy(&x, row + i, sizeof(V));
        const V e = x - mu;
        v += e * e;
    }
    T s{};
    for (; i < n; ++i) {
        const T e = row[i] - mu;
        s += e * e;
    }
    for (std::int64_t l = 0; l < W; ++l) {
        s += v[l];
    }
    return s;
}

// sums of g and g*h in one pass
template <typename T>
void vec_sum_pair(const T* __restrict g, const T* __restrict h, std::int64_t n, T& sum_g,
                  T& sum_gh) {
    using V = typename SimdVec<T>::type;
    constexpr std::int64_t W = SimdVec<T>::width;
    V vg{}, vgh{};
    std::int64_t i = 0;
    for (; i + W <= n; i += W) {
        V a, b;
        std::memcpy(&a, g + i, sizeof(V));
        std::memcpy(&b, h + i, sizeof(V));
        vg += a;
        vgh += a * b;
    }
    T sg{}, sgh{};
    for (; i < n; ++i) {
        sg += g[i];
        sgh += g[i] * h[i];
    }
    for (std::int64_t l = 0; l < W; ++l) {
        sg += vg[l];
        sgh += vgh[l];
    }
    sum_g += sg;
    sum_gh += sgh;
}

} // namespace detail

// Train mode normalizes with batch statistics (biased variance) and updates
// running stats: running <- (1-momentum)*running + momentum*batch, with the
// unbiased variance estimate feeding running_var. Eval mode uses running
// stats only and mutates nothing.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormState<T>& state, Mode mode,
                            BatchNormCache<T>* cache = nullptr) {
    if (x.rank() != 3 || x.dim(1) != state.channels()) {
        throw ShapeError("batchnorm input must be (B, C, L) with C matching the state");
    }
    const std::int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
    Tensor<T> out = Tensor<T>::uninitialized({B, C, L});
    const T* xd = x.data();
    T* od = out.data();
    const T* gamma = state.gamma.value.data();
    const T* beta = state.beta.value.data();

    if (mode == Mode::Eval) {
#pragma omp parallel for schedule(static)
        for (std::int64_t c = 0; c < C; ++c) {
            const T scale = gamma[c] / std::sqrt(state.running_var[c] + state.eps);
            const T shift = beta[c] - state.running_mean[c] * scale;
            for (std::int64_t b = 0; b < B; ++b) {
                const T* __restrict xrow = xd + (b * C + c) * L;
                T* __restrict orow = od + (b * C + c) * L;
                for (std::int64_t t = 0; t < L; ++t) {
                    orow[t] = xrow[t] * scale + shift;
                }
            }
        }
        return out;
    }

    const std::int64_t n = B * L;
    if (n < 2) {
        throw StatisticsError("batchnorm train mode needs at least 2 values per channel");
    }
    std::vector<T> mean(static_cast<std::size_t>(C));
    std::vector<T> var(static_cast<std::size_t>(C));
    std::vector<T> inv_std(static_cast<std::size_t>(C));
    Tensor<T> xhat = Tensor<T>::uninitialized({B, C, L});
    T* hd = xhat.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < C; ++c) {
        T sum{};
        for (std::int64_t b = 0; b < B; ++b) {
            sum += detail::vec_sum(xd + (b * C + c) * L, L);
        }
        const T mu = sum / static_cast<T>(n);
        T sq{};
        for (std::int64_t b = 0; b < B; ++b) {
            sq += detail::vec_sq_dev(xd + (b * C + c) * L, L, mu);
        }
        const T v = sq / static_cast<T>(n);
        const T inv = static_cast<T>(1) / std::sqrt(v + state.eps);
        mean[c] = mu;
        var[c] = v;
        inv_std[c] = inv;
        const T g = gamma[c], be = beta[c];
        for (std::int64_t b = 0; b < B; ++b) {
            const T* __restrict xrow = xd + (b * C + c) * L;
            T* __restrict hrow = hd + (b * C + c) * L;
            T* __restrict orow = od + (b * C + c) * L;
            for (std::int64_t t = 0; t < L; ++t) {
                const T h = (xrow[t] - mu) * inv;
                hrow[t] = h;
                orow[t] = g * h + be;
            }
        }
    }
    const T unbias = static_cast<T>(n) / static_cast<T>(n - 1);
    for (std::int64_t c = 0; c < C; ++c) {
        state.running_mean[c] =
            (static_cast<T>(1) - state.momentum) * state.running_mean[c] + state.momentum * mean[c];
        state.running_var[c] = (static_cast<T>(1) - state.momentum) * state.running_var[c] +
                               state.momentum * var[c] * unbias;
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

template <typename T>
struct BatchNormGrads {
    Tensor<T> grad_x;
    std::vector<T> grad_gamma;
    std::vector<T> grad_beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache,
                                     const BatchNormState<T>& state) {
    const Tensor<T>& xhat = cache.xhat;
    if (!grad_out.same_shape(xhat)) {
        throw ShapeError("batchnorm_backward: grad_out shape mismatch");
    }
    const std::int64_t B = xhat.dim(0), C = xhat.dim(1), L = xhat.dim(2);
    const std::int64_t n = B * L;
    BatchNormGrads<T> grads{Tensor<T>::uninitialized({B, C, L}),
                            std::vector<T>(static_cast<std::size_t>(C)),
                            std::vector<T>(static_cast<std::size_t>(C))};
    const T* gd = grad_out.data();
    const T* hd = xhat.data();
    T* gx = grads.grad_x.data();
    const T* gamma = state.gamma.value.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < C; ++c) {
        T sum_g{};
        T sum_gh{};
        for (std::int64_t b = 0; b < B; ++b) {
            detail::vec_sum_pair(gd + (b * C + c) * L, hd + (b * C + c) * L, L, sum_g, sum_gh);
        }
        grads.grad_beta[c] = sum_g;
        grads.grad_gamma[c] = sum_gh;
        const T k = gamma[c] * cache.inv_std[c];
        const T mg = sum_g / static_cast<T>(n);
        const T mgh = sum_gh / static_cast<T>(n);
        for (std::int64_t b = 0; b < B; ++b) {
            const T* __restrict grow = gd + (b * C + c) * L;
            const T* __restrict hrow = hd + (b * C + c) * L;
            T* __restrict gxrow = gx + (b * C + c) * L;
            for (std::int64_t t = 0; t < L; ++t) {
                gxrow[t] = k * (grow[t] - mg - hrow[t] * mgh);
            }
        }
    }
    return grads;
}

// Channel-indexed view over a list of (B, C_i, L) tensors: the virtual
// concatenation a dense layer consumes, without materializing it.
template <typename T>
struct ChannelView {
    struct Channel {
        const T* base;             // row of batch item 0
        std::int64_t batch_stride; // elements between batch items
    };
    std::vector<Channel> channels;
    std::int64_t batch = 0;
    std::int64_t length = 0;

    static ChannelView over(const std::vector<const Tensor<T>*>& parts) {
        if (parts.empty()) {
            throw ArgumentError("ChannelView needs at least one input");
        }
        ChannelView view;
        view.batch = parts[0]->dim(0);
        view.length = parts[0]->dim(2);
        for (const auto* part : parts) {
            if (part->rank() != 3 || part->dim(0) != view.batch || part->dim(2) != view.length) {
                throw ShapeError("ChannelView: inputs must share batch and length");
            }
            const std::int64_t C = part->dim(1);
            for (std::int64_t c = 0; c < C; ++c) {
                view.channels.push_back({part->data() + c * view.length, C * view.length});
            }
        }
        return view;
    }
};

// BN followed by ReLU over the virtual concatenation, writing the fused
// result once. Semantics match batchnorm_forward + relu exactly.
template <typename T>
Tensor<T> bn_relu_forward(const ChannelView<T>& x, BatchNormState<T>& state, Mode mode,
                          BatchNormCache<T>* cache = nullptr) {
    const auto C = static_cast<std::int64_t>(x.channels.size());
    if (C != state.channels()) {
        throw ShapeError("bn_relu_forward: channel count mismatch");
    }
    const std::int64_t B = x.batch, L = x.length;
    Tensor<T> out = Tensor<T>::uninitialized({B, C, L});
    T* od = out.data();
    const T* gamma = state.gamma.value.data();
    const T* beta = state.beta.value.data();

    if (mode == Mode::Eval) {
#pragma omp parallel for schedule(static)
        for (std::int64_t c = 0; c < C; ++c) {
            const auto& ch = x.channels[static_cast<std::size_t>(c)];
            const T scale = gamma[c] / std::sqrt(state.running_var[c] + state.eps);
            const T shift = beta[c] - state.running_mean[c] * scale;
            for (std::int64_t b = 0; b < B; ++b) {
                const T* __restrict xrow = ch.base + b * ch.batch_stride;
                T* __restrict orow = od + (b * C + c) * L;
                for (std::int64_t t = 0; t < L; ++t) {
                    const T y = xrow[t] * scale + shift;
                    orow[t] = y > T{} ? y : T{};
                }
            }
        }
        return out;
    }

    const std::int64_t n = B * L;
    if (n < 2) {
        throw StatisticsError("batchnorm train mode needs at least 2 values per channel");
    }
    std::vector<T> mean(static_cast<std::size_t>(C));
    std::vector<T> var(static_cast<std::size_t>(C));
    std::vector<T> inv_std(static_cast<std::size_t>(C));
    Tensor<T> xhat = Tensor<T>::uninitialized({B, C, L});
    T* hd = xhat.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < C; ++c) {
        const auto& ch = x.channels[static_cast<std::size_t>(c)];
        T sum{};
        for (std::int64_t b = 0; b < B; ++b) {
            sum += detail::vec_sum(ch.base + b * ch.batch_stride, L);
        }
        const T mu = sum / static_cast<T>(n);
        T sq{};
        for (std::int64_t b = 0; b < B; ++b) {
            sq += detail::vec_sq_dev(ch.base + b * ch.batch_stride, L, mu);
        }
        const T v = sq / static_cast<T>(n);
        const T inv = static_cast<T>(1) / std::sqrt(v + state.eps);
        mean[c] = mu;
        var[c] = v;
        inv_std[c] = inv;
        const T g = gamma[c], be = beta[c];
        for (std::int64_t b = 0; b < B; ++b) {
            const T* __restrict xrow = ch.base + b * ch.batch_stride;
            T* __restrict hrow = hd + (b * C + c) * L;
            T* __restrict orow = od + (b * C + c) * L;
            for (std::int64_t t = 0; t < L; ++t) {
                const T h = (xrow[t] - mu) * inv;
                hrow[t] = h;
                const T y = g * h + be;
                orow[t] = y > T{} ? y : T{};
            }
        }
    }
    const T unbias = static_cast<T>(n) / static_cast<T>(n - 1);
    for (std::int64_t c = 0; c < C; ++c) {
        state.running_mean[c] =
            (static_cast<T>(1) - state.momentum) * state.running_mean[c] + state.momentum * mean[c];
        state.running_var[c] = (static_cast<T>(1) - state.momentum) * state.running_var[c] +
                               state.momentum * var[c] * unbias;
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

// Rebuilds relu(gamma * xhat + beta) from a Train-mode cache (the dense
// layer's conv input) so the forward pass doesn't have to keep it.
template <typename T>
Tensor<T> bn_relu_recompute(const BatchNormCache<T>& cache, const BatchNormState<T>& state) {
    const auto& xhat = cache.xhat;
    const std::int64_t B = xhat.dim(0), C = xhat.dim(1), L = xhat.dim(2);
    Tensor<T> out = Tensor<T>::uninitialized({B, C, L});
    const T* hd = xhat.data();
    T* od = out.data();
    const T* gamma = state.gamma.value.data();
    const T* beta = state.beta.value.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < C; ++c) {
        const T g = gamma[c], be = beta[c];
        for (std::int64_t b = 0; b < B; ++b) {
            const T* __restrict hrow = hd + (b * C + c) * L;
            T* __restrict orow = od + (b * C + c) * L;
            for (std::int64_t t = 0; t < L; ++t) {
                const T y = g * hrow[t] + be;
                orow[t] = y > T{} ? y : T{};
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise and pooling layers.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::uninitialized(x.shape());
    const T* xd = x.data();
    T* od = out.data();
    const std::int64_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        od[i] = xd[i] > T{} ? xd[i] : T{};
    }
    return out;
}

// Masks where the forward input was <= 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& x) {
    if (!grad_out.same_shape(x)) {
        throw ShapeError("relu_backward: shape mismatch");
    }
    Tensor<T> out = Tensor<T>::uninitialized(x.shape());
    const T* gd = grad_out.data();
    const T* xd = x.data();
    T* od = out.data();
    const std::int64_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        od[i] = xd[i] > T{} ? gd[i] : T{};
    }
    return out;
}

template <typename T>
Tensor<T> make_dropout_mask(const std::vector<std::int64_t>& shape, double rate,
                            std::mt19937_64& rng) {
    Tensor<T> mask = Tensor<T>::uninitialized(shape);
    T* md = mask.data();
    const std::int64_t n = mask.numel();
    for (std::int64_t i = 0; i < n; ++i) { // sequential: RNG order is part of the contract
        md[i] = uniform01(rng) < rate ? T{} : static_cast<T>(1);
    }
    return mask;
}

template <typename T>
Tensor<T> dropout_apply(const Tensor<T>& x, const Tensor<T>& mask, double rate) {
    if (!mask.same_shape(x)) {
        throw ShapeError("dropout mask shape mismatch");
    }
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> out = Tensor<T>::uninitialized(x.shape());
    const T* xd = x.data();
    const T* md = mask.data();
    T* od = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        od[i] = xd[i] * md[i] * scale;
    }
    return out;
}

// Inverted dropout: Train mode zeroes each element with probability `rate`
// and scales survivors by 1/(1-rate); Eval mode is the identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, std::mt19937_64& rng,
                  Tensor<T>* mask_out = nullptr) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ArgumentError("dropout rate must be in [0, 1)");
    }
    if (mode == Mode::Eval || rate == 0.0) {
        if (mask_out) {
            *mask_out = Tensor<T>(x.shape());
            mask_out->fill(static_cast<T>(1));
        }
        return x;
    }
    Tensor<T> mask = make_dropout_mask<T>(x.shape(), rate, rng);
    Tensor<T> out = dropout_apply(x, mask, rate);
    if (mask_out) {
        *mask_out = std::move(mask);
    }
    return out;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const Tensor<T>& mask, double rate) {
    return dropout_apply(grad_out, mask, rate);
}

// Concatenation along the channel axis; the first input occupies channels
// 0..C1-1.
template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& xs) {
    if (xs.empty()) {
        throw ArgumentError("concat_channels needs at least one input");
    }
    const std::int64_t B = xs[0]->dim(0), L = xs[0]->dim(2);
    std::int64_t total = 0;
    for (const auto* x : xs) {
        if (x->rank() != 3 || x->dim(0) != B || x->dim(2) != L) {
            throw ShapeError("concat_channels: inputs must share batch and length");
        }
        total += x->dim(1);
    }
    Tensor<T> out = Tensor<T>::uninitialized({B, total, L});
    T* od = out.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t b = 0; b < B; ++b) {
        std::int64_t c0 = 0;
        for (const auto* x : xs) {
            const std::int64_t C = x->dim(1);
            std::copy_n(x->data() + b * C * L, C * L, od + (b * total + c0) * L);
            c0 += C;
        }
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> concat_channels_backward(const Tensor<T>& grad_out,
                                                const std::vector<std::int64_t>& channel_counts) {
    const std::int64_t B = grad_out.dim(0), L = grad_out.dim(2);
    std::vector<Tensor<T>> grads;
    grads.reserve(channel_counts.size());
    std::int64_t total = 0;
    for (auto c : channel_counts) {
        grads.push_back(Tensor<T>::uninitialized({B, c, L}));
        total += c;
    }
    if (total != grad_out.dim(1)) {
        throw ShapeError("concat_channels_backward: channel counts do not sum to grad channels");
    }
    const T* gd = grad_out.data();
    for (std::int64_t b = 0; b < B; ++b) {
        std::int64_t c0 = 0;
        for (std::size_t i = 0; i < channel_counts.size(); ++i) {
            const std::int64_t C = channel_counts[i];
            std::copy_n(gd + (b * total + c0) * L, C * L, grads[i].data() + b * C * L);
            c0 += C;
        }
    }
    return grads;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.rank() != 3) {
        throw ShapeError("global_avg_pool input must be (B, C, L)");
    }
    const std::int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
    Tensor<T> out = Tensor<T>::uninitialized({B, C});
    const T* xd = x.data();
    T* od = out.data();
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
            const T* xrow = xd + (b * C + c) * L;
            T sum{};
            for (std::int64_t t = 0; t < L; ++t) {
                sum += xrow[t];
            }
            od[b * C + c] = sum / static_cast<T>(L);
        }
    }
    return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, std::int64_t length) {
    const std::int64_t B = grad_out.dim(0), C = grad_out.dim(1);
    Tensor<T> out = Tensor<T>::uninitialized({B, C, length});
    const T* gd = grad_out.data();
    T* od = out.data();
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
            const T g = gd[b * C + c] / static_cast<T>(length);
            T* orow = od + (b * C + c) * length;
            for (std::int64_t t = 0; t < length; ++t) {
                orow[t] = g;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fully connected layer (with bias), loss, optimizer.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1) || b.numel() != w.dim(0)) {
        throw ShapeError("linear_forward: expected x (B,F), w (O,F), b (O)");
    }
    const std::int64_t B = x.dim(0), F = x.dim(1), O = w.dim(0);
    Tensor<T> out = Tensor<T>::uninitialized({B, O});
    const T* xd = x.data();
    const T* wd = w.data();
    const T* bd = b.data();
    T* od = out.data();
    for (std::int64_t i = 0; i < B; ++i) {
        for (std::int64_t o = 0; o < O; ++o) {
            T acc = bd[o];
            const T* xrow = xd + i * F;
            const T* wrow = wd + o * F;
            for (std::int64_t f = 0; f < F; ++f) {
                acc += xrow[f] * wrow[f];
            }
            od[i * O + o] = acc;
        }
    }
    return out;
}

template <typename T>
struct LinearGrads {
    Tensor<T> grad_x;
    Tensor<T> grad_w;
    Tensor<T> grad_b;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w) {
    const std::int64_t B = x.dim(0), F = x.dim(1), O = w.dim(0);
    if (grad_out.rank() != 2 || grad_out.dim(0) != B || grad_out.dim(1) != O) {
        throw ShapeError("linear_backward: grad_out shape mismatch");
    }
    LinearGrads<T> grads{Tensor<T>({B, F}), Tensor<T>({O, F}), Tensor<T>({O})};
    const T* gd = grad_out.data();
    const T* xd = x.data();
    const T* wd = w.data();
    for (std::int64_t i = 0; i < B; ++i) {
        for (std::int64_t o = 0; o < O; ++o) {
            const T g = gd[i * O + o];
            grads.grad_b[o] += g;
            T* gw = grads.grad_w.data() + o * F;
            T* gx = grads.grad_x.data() + i * F;
            const T* xrow = xd + i * F;
            const T* wrow = wd + o * F;
            for (std::int64_t f = 0; f < F; ++f) {
                gw[f] += g * xrow[f];
                gx[f] += g * wrow[f];
            }
        }
    }
    return grads;
}

template <typename T>
struct SmoothL1Result {
    double loss = 0.0;
    Tensor<T> grad; // d loss / d pred
};

// Per element: 0.5*e^2/beta for |e| < beta, |e| - 0.5*beta otherwise;
// loss is the mean over all B*N elements.
template <typename T>
SmoothL1Result<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& target, double beta = 1.0) {
    if (!pred.same_shape(target)) {
        throw ShapeError("smooth_l1: pred/target shape mismatch");
    }
    if (!(beta > 0.0)) {
        throw ArgumentError("smooth_l1 beta must be positive");
    }
    const std::int64_t n = pred.numel();
    SmoothL1Result<T> result{0.0, Tensor<T>::uninitialized(pred.shape())};
    const T* pd = pred.data();
    const T* td = target.data();
    T* gd = result.grad.data();
    double loss = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double e = static_cast<double>(pd[i]) - static_cast<double>(td[i]);
        if (std::abs(e) < beta) {
            loss += 0.5 * e * e / beta;
            gd[i] = static_cast<T>(e / beta / static_cast<double>(n));
        } else {
            loss += std::abs(e) - 0.5 * beta;
            gd[i] = static_cast<T>((e > 0.0 ? 1.0 : -1.0) / static_cast<double>(n));
        }
    }
    result.loss = loss / static_cast<double>(n);
    return result;
}

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Bias-corrected Adam with decoupled weight decay applied first:
// value <- value * (1 - lr*wd), then the standard moment update.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const AdamConfig& cfg) {
    for (Parameter<T>* param : params) {
        param->step_count += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(param->step_count));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(param->step_count));
        const T decay = static_cast<T>(1.0 - cfg.lr * cfg.weight_decay);
        const std::int64_t n = param->value.numel();
        T* value = param->value.data();
        const T* grad = param->grad.data();
        T* m = param->m.data();
        T* v = param->v.data();
        for (std::int64_t i = 0; i < n; ++i) {
            value[i] *= decay;
            m[i] = static_cast<T>(cfg.beta1) * m[i] + static_cast<T>(1.0 - cfg.beta1) * grad[i];
            v[i] = static_cast<T>(cfg.beta2) * v[i] +
                   static_cast<T>(1.0 - cfg.beta2) * grad[i] * grad[i];
            const double mhat = static_cast<double>(m[i]) / bc1;
            const double vhat = static_cast<double>(v[i]) / bc2;
            value[i] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
void init_uniform_fanin(Tensor<T>& w, std::int64_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    T* wd = w.data();
    const std::int64_t n = w.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        wd[i] = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
    }
}

} // namespace gazereg::nn
