#pragma once

// Layer primitives over the tensor engine. Convolution is cross-correlation
// (no kernel flip). All layouts are NCHW-style: (batch, channels, time, freq).

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "mfmasc/tensor.hpp"

namespace mfmasc {

template <typename T>
struct Conv2dParams {
    Tensor<T> weight;  // (out_channels, in_channels, k_t, k_f)
    Tensor<T> bias;    // (out_channels)
    size_t stride_t = 1, stride_f = 1;
    size_t pad_t = 0, pad_f = 0;

    size_t out_channels() const { return weight.shape[0]; }
    size_t in_channels() const { return weight.shape[1]; }
    size_t k_t() const { return weight.shape[2]; }
    size_t k_f() const { return weight.shape[3]; }
};

template <typename T>
struct BatchNormParams {
    Tensor<T> gamma, beta;              // (channels)
    Tensor<T> running_mean, running_var;  // (channels), never tracked
    T eps = T(1e-5);
    T momentum = T(0.1);

    size_t channels() const { return gamma.shape[0]; }
};

template <typename T>
struct LinearParams {
    Tensor<T> weight;  // (out_dim, in_dim)
    Tensor<T> bias;    // (out_dim)
};

// Kaiming-uniform fan-in initialization (gain sqrt(2), max-style activations).
template <typename T, typename Rng>
Conv2dParams<T> make_conv2d(size_t out_c, size_t in_c, size_t kt, size_t kf, size_t st, size_t sf,
                            size_t pt, size_t pf, Rng& rng) {
    if (kt < 1 || kf < 1 || st < 1 || sf < 1)
        throw ContractViolation("conv2d params: kernel and stride extents must be >= 1");
    Conv2dParams<T> p;
    const T fan_in = static_cast<T>(in_c * kt * kf);
    const T bound = std::sqrt(T(6) / fan_in);
    p.weight = Tensor<T>::uniform({out_c, in_c, kt, kf}, rng, -bound, bound);
    const T bb = T(1) / std::sqrt(fan_in);
    p.bias = Tensor<T>::uniform({out_c}, rng, -bb, bb);
    p.stride_t = st;
    p.stride_f = sf;
    p.pad_t = pt;
    p.pad_f = pf;
    return p;
}

template <typename T, typename Rng>
LinearParams<T> make_linear(size_t out_d, size_t in_d, Rng& rng) {
    LinearParams<T> p;
    const T bound = std::sqrt(T(6) / static_cast<T>(in_d));
    p.weight = Tensor<T>::uniform({out_d, in_d}, rng, -bound, bound);
    const T bb = T(1) / std::sqrt(static_cast<T>(in_d));
    p.bias = Tensor<T>::uniform({out_d}, rng, -bb, bb);
    return p;
}

template <typename T>
BatchNormParams<T> make_batchnorm(size_t channels) {
    BatchNormParams<T> p;
    p.gamma = Tensor<T>::full({channels}, T(1));
    p.beta = Tensor<T>::zeros({channels});
    p.running_mean = Tensor<T>::zeros({channels});
    p.running_var = Tensor<T>::full({channels}, T(1));
    return p;
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

// col has (C*kt*kf) rows and (To*Fo) columns, row-major.
template <typename T>
void im2col(const T* x, size_t C, size_t Ti, size_t Fi, size_t kt, size_t kf, size_t st, size_t sf,
            long pt, long pf, size_t To, size_t Fo, T* col) {
    const size_t cols = To * Fo;
    size_t r = 0;
    for (size_t c = 0; c < C; ++c) {
        for (size_t i = 0; i < kt; ++i) {
            for (size_t j = 0; j < kf; ++j, ++r) {
                T* dst = col + r * cols;
                for (size_t to = 0; to < To; ++to) {
                    const long ti = static_cast<long>(to * st + i) - pt;
                    if (ti < 0 || ti >= static_cast<long>(Ti)) {
                        std::fill_n(dst + to * Fo, Fo, T(0));
                        continue;
                    }
                    const T* src = x + (c * Ti + static_cast<size_t>(ti)) * Fi;
                    for (size_t fo = 0; fo < Fo; ++fo) {
                        const long fi = static_cast<long>(fo * sf + j) - pf;
                        dst[to * Fo + fo] =
                            (fi < 0 || fi >= static_cast<long>(Fi)) ? T(0) : src[fi];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, size_t C, size_t Ti, size_t Fi, size_t kt, size_t kf, size_t st,
                size_t sf, long pt, long pf, size_t To, size_t Fo, T* x) {
    const size_t cols = To * Fo;
    size_t r = 0;
    for (size_t c = 0; c < C; ++c) {
        for (size_t i = 0; i < kt; ++i) {
            for (size_t j = 0; j < kf; ++j, ++r) {
                const T* src = col + r * cols;
                for (size_t to = 0; to < To; ++to) {
                    const long ti = static_cast<long>(to * st + i) - pt;
                    if (ti < 0 || ti >= static_cast<long>(Ti)) continue;
                    T* dst = x + (c * Ti + static_cast<size_t>(ti)) * Fi;
                    for (size_t fo = 0; fo < Fo; ++fo) {
                        const long fi = static_cast<long>(fo * sf + j) - pf;
                        if (fi >= 0 && fi < static_cast<long>(Fi)) dst[fi] += src[to * Fo + fo];
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dParams<T>& p) {
    if (x.rank() != 4)
        throw ContractViolation("conv2d: input must be (N,C,T,F), got " + shape_str(x.shape));
    const size_t N = x.shape[0], C = x.shape[1], Ti = x.shape[2], Fi = x.shape[3];
    if (C != p.in_channels())
        throw ContractViolation("conv2d: input has " + std::to_string(C) +
                                " channels, weight expects " + std::to_string(p.in_channels()));
    const size_t K = p.out_channels(), kt = p.k_t(), kf = p.k_f();
    const long nt = static_cast<long>(Ti + 2 * p.pad_t) - static_cast<long>(kt);
    const long nf = static_cast<long>(Fi + 2 * p.pad_f) - static_cast<long>(kf);
    if (nt < 0)
        throw ContractViolation("conv2d: degenerate time extent: input " + std::to_string(Ti) +
                                " + 2*" + std::to_string(p.pad_t) + " < kernel " +
                                std::to_string(kt));
    if (nf < 0)
        throw ContractViolation("conv2d: degenerate frequency extent: input " +
                                std::to_string(Fi) + " + 2*" + std::to_string(p.pad_f) +
                                " < kernel " + std::to_string(kf));
    const size_t To = static_cast<size_t>(nt) / p.stride_t + 1;
    const size_t Fo = static_cast<size_t>(nf) / p.stride_f + 1;

    const size_t rows = C * kt * kf;
    const size_t cols = To * Fo;
    Tensor<T> out({N, K, To, Fo});
    std::vector<T> col(rows * cols);
    for (size_t n = 0; n < N; ++n) {
        detail::im2col(x.ptr() + n * C * Ti * Fi, C, Ti, Fi, kt, kf, p.stride_t, p.stride_f,
                       static_cast<long>(p.pad_t), static_cast<long>(p.pad_f), To, Fo, col.data());
        T* o = out.ptr() + n * K * cols;
        detail::gemm(p.weight.ptr(), K, rows, false, col.data(), rows, cols, false, o);
        for (size_t k = 0; k < K; ++k) {
            const T b = p.bias[k];
            for (size_t i = 0; i < cols; ++i) o[k * cols + i] += b;
        }
    }

    Tape<T>* tp = result_tape(x, &p.weight);
    if (!tp && p.bias.tracked()) tp = p.bias.tape;
    if (tp) {
        const int nx = x.tracked() ? x.node : -1;
        const int nw = p.weight.tracked() ? p.weight.node : -1;
        const int nb = p.bias.tracked() ? p.bias.node : -1;
        Tensor<T> xd = x.detach(), wd = p.weight.detach();
        const size_t st = p.stride_t, sf = p.stride_f;
        const long pt = static_cast<long>(p.pad_t), pf = static_cast<long>(p.pad_f);
        tp->record(out, {nx, nw, nb}, [=](Tape<T>& t, const std::vector<T>& g) {
            std::vector<T> bcol(rows * cols);
            std::vector<T>* gw = nw >= 0 ? &t.grad_buf(nw) : nullptr;
            std::vector<T>* gx = nx >= 0 ? &t.grad_buf(nx) : nullptr;
            std::vector<T> gw_local;
            std::vector<T> gcol;
            if (nw >= 0) gw_local.resize(K * rows);
            if (nx >= 0) gcol.resize(rows * cols);
            for (size_t n = 0; n < N; ++n) {
                const T* gn = g.data() + n * K * cols;
                if (nw >= 0 || nx >= 0) {
                    if (nw >= 0) {
                        detail::im2col(xd.ptr() + n * C * Ti * Fi, C, Ti, Fi, kt, kf, st, sf, pt,
                                       pf, To, Fo, bcol.data());
                        detail::gemm(gn, K, cols, false, bcol.data(), rows, cols, true,
                                     gw_local.data());
                        for (size_t i = 0; i < gw->size(); ++i) (*gw)[i] += gw_local[i];
                    }
                    if (nx >= 0) {
                        detail::gemm(wd.ptr(), K, rows, true, gn, K, cols, false, gcol.data());
                        detail::col2im_add(gcol.data(), C, Ti, Fi, kt, kf, st, sf, pt, pf, To, Fo,
                                           gx->data() + n * C * Ti * Fi);
                    }
                }
                if (nb >= 0) {
                    std::vector<T>& gb = t.grad_buf(nb);
                    for (size_t k = 0; k < K; ++k) {
                        T acc = T(0);
                        for (size_t i = 0; i < cols; ++i) acc += gn[k * cols + i];
                        gb[k] += acc;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Max pooling

// ceil_mode pads with -inf conceptually; a window must still start inside
// the input, matching the usual framework convention.
inline size_t pool_out_extent(size_t n, size_t k, size_t s, bool ceil_mode) {
    if (n < k && !ceil_mode) throw ContractViolation("maxpool2d: extent smaller than kernel");
    size_t out;
    if (ceil_mode) {
        out = (n >= k ? (n - k + s - 1) / s : 0) + 1;
        if ((out - 1) * s >= n) --out;
    } else {
        out = (n - k) / s + 1;
    }
    if (out < 1) throw ContractViolation("maxpool2d: degenerate output extent");
    return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, size_t kt = 2, size_t kf = 2, size_t st = 2, size_t sf = 2,
                    bool ceil_mode = true) {
    if (x.rank() != 4)
        throw ContractViolation("maxpool2d: input must be (N,C,T,F), got " + shape_str(x.shape));
    const size_t N = x.shape[0], C = x.shape[1], Ti = x.shape[2], Fi = x.shape[3];
    const size_t To = pool_out_extent(Ti, kt, st, ceil_mode);
    const size_t Fo = pool_out_extent(Fi, kf, sf, ceil_mode);

    Tensor<T> out({N, C, To, Fo});
    std::vector<size_t> argmax(out.numel());
    const T* px = x.ptr();
    T* po = out.ptr();
    size_t oi = 0;
    for (size_t n = 0; n < N; ++n) {
        for (size_t c = 0; c < C; ++c) {
            const T* plane = px + (n * C + c) * Ti * Fi;
            for (size_t to = 0; to < To; ++to) {
                for (size_t fo = 0; fo < Fo; ++fo, ++oi) {
                    T best = -std::numeric_limits<T>::infinity();
                    size_t besti = 0;
                    for (size_t i = 0; i < kt; ++i) {
                        const size_t ti = to * st + i;
                        if (ti >= Ti) break;
                        for (size_t j = 0; j < kf; ++j) {
                            const size_t fi = fo * sf + j;
                            if (fi >= Fi) break;
                            const T v = plane[ti * Fi + fi];
                            if (v > best) {
                                best = v;
                                besti = (n * C + c) * Ti * Fi + ti * Fi + fi;
                            }
                        }
                    }
                    po[oi] = best;
                    argmax[oi] = besti;
                }
            }
        }
    }

    if (Tape<T>* tp = result_tape(x)) {
        const int nx = x.node;
        const size_t xn = x.numel();
        tp->record(out, {nx}, [=, am = std::move(argmax)](Tape<T>& t, const std::vector<T>& g) {
            std::vector<T>& gx = t.grad_buf(nx);
            (void)xn;
            for (size_t i = 0; i < g.size(); ++i) gx[am[i]] += g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch normalization

// Training mode normalizes by batch statistics (biased variance) and updates
// running stats as r <- (1-momentum)*r + momentum*batch. Inference uses the
// running stats. Params are passed mutably for the running-stat update.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormParams<T>& p, bool training) {
    if (x.rank() != 4)
        throw ContractViolation("batchnorm: input must be (N,C,T,F), got " + shape_str(x.shape));
    const size_t N = x.shape[0], C = x.shape[1], Ti = x.shape[2], Fi = x.shape[3];
    if (C != p.channels())
        throw ContractViolation("batchnorm: channel mismatch: input " + std::to_string(C) +
                                " vs params " + std::to_string(p.channels()));
    const size_t m = N * Ti * Fi;  // samples per channel
    const size_t plane = Ti * Fi;

    Tensor<T> out(x.shape);
    const T* px = x.ptr();
    T* po = out.ptr();

    std::vector<T> mean(C), inv_std(C);
    if (training) {
        if (m < 2)
            throw ContractViolation("batchnorm: training mode needs N*T*F >= 2, got " +
                                    std::to_string(m));
        for (size_t c = 0; c < C; ++c) {
            double acc = 0;
            for (size_t n = 0; n < N; ++n) {
                const T* q = px + (n * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) acc += q[i];
            }
            const double mu = acc / static_cast<double>(m);
            double var = 0;
            for (size_t n = 0; n < N; ++n) {
                const T* q = px + (n * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    const double d = q[i] - mu;
                    var += d * d;
                }
            }
            var /= static_cast<double>(m);
            mean[c] = static_cast<T>(mu);
            inv_std[c] = T(1) / std::sqrt(static_cast<T>(var) + p.eps);
            // unbiased variance feeds the running estimate
            const double uvar = var * static_cast<double>(m) / static_cast<double>(m - 1);
            p.running_mean[c] =
                (T(1) - p.momentum) * p.running_mean[c] + p.momentum * static_cast<T>(mu);
            p.running_var[c] =
                (T(1) - p.momentum) * p.running_var[c] + p.momentum * static_cast<T>(uvar);
        }
    } else {
        for (size_t c = 0; c < C; ++c) {
            mean[c] = p.running_mean[c];
            inv_std[c] = T(1) / std::sqrt(p.running_var[c] + p.eps);
        }
    }

    // Saved normalized activations for backward.
    std::vector<T> xhat(x.numel());
    for (size_t n = 0; n < N; ++n) {
        for (size_t c = 0; c < C; ++c) {
            const size_t base = (n * C + c) * plane;
            const T mu = mean[c], is = inv_std[c], ga = p.gamma[c], be = p.beta[c];
            for (size_t i = 0; i < plane; ++i) {
                const T xh = (px[base + i] - mu) * is;
                xhat[base + i] = xh;
                po[base + i] = ga * xh + be;
            }
        }
    }

    Tape<T>* tp = result_tape(x, &p.gamma);
    if (!tp && p.beta.tracked()) tp = p.beta.tape;
    if (tp) {
        const int nx = x.tracked() ? x.node : -1;
        const int ng = p.gamma.tracked() ? p.gamma.node : -1;
        const int nb = p.beta.tracked() ? p.beta.node : -1;
        Tensor<T> gamma = p.gamma.detach();
        tp->record(out, {nx, ng, nb},
                   [=, xh = std::move(xhat), is = std::move(inv_std)](Tape<T>& t,
                                                                      const std::vector<T>& g) {
                       for (size_t c = 0; c < C; ++c) {
                           double sg = 0, sgx = 0;
                           for (size_t n = 0; n < N; ++n) {
                               const size_t base = (n * C + c) * plane;
                               for (size_t i = 0; i < plane; ++i) {
                                   sg += g[base + i];
                                   sgx += g[base + i] * xh[base + i];
                               }
                           }
                           if (ng >= 0) t.grad_buf(ng)[c] += static_cast<T>(sgx);
                           if (nb >= 0) t.grad_buf(nb)[c] += static_cast<T>(sg);
                           if (nx >= 0) {
                               std::vector<T>& gx = t.grad_buf(nx);
                               const T ga = gamma[c];
                               if (training) {
                                   const T mg = static_cast<T>(sg / static_cast<double>(m));
                                   const T mgx = static_cast<T>(sgx / static_cast<double>(m));
                                   for (size_t n = 0; n < N; ++n) {
                                       const size_t base = (n * C + c) * plane;
                                       for (size_t i = 0; i < plane; ++i)
                                           gx[base + i] += ga * is[c] *
                                                           (g[base + i] - mg - xh[base + i] * mgx);
                                   }
                               } else {
                                   for (size_t n = 0; n < N; ++n) {
                                       const size_t base = (n * C + c) * plane;
                                       for (size_t i = 0; i < plane; ++i)
                                           gx[base + i] += ga * is[c] * g[base + i];
                                   }
                               }
                           }
                       }
                   });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fully connected

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
    if (x.rank() != 2)
        throw ContractViolation("linear: input must be (N,D), got " + shape_str(x.shape));
    const size_t N = x.shape[0], D = x.shape[1];
    const size_t O = p.weight.shape[0];
    if (D != p.weight.shape[1])
        throw ContractViolation("linear: input dim " + std::to_string(D) + " vs weight in_dim " +
                                std::to_string(p.weight.shape[1]));
    Tensor<T> out({N, O});
    detail::gemm(x.ptr(), N, D, false, p.weight.ptr(), O, D, true, out.ptr());
    for (size_t n = 0; n < N; ++n)
        for (size_t o = 0; o < O; ++o) out[n * O + o] += p.bias[o];

    Tape<T>* tp = result_tape(x, &p.weight);
    if (!tp && p.bias.tracked()) tp = p.bias.tape;
    if (tp) {
        const int nx = x.tracked() ? x.node : -1;
        const int nw = p.weight.tracked() ? p.weight.node : -1;
        const int nb = p.bias.tracked() ? p.bias.node : -1;
        Tensor<T> xd = x.detach(), wd = p.weight.detach();
        tp->record(out, {nx, nw, nb}, [=](Tape<T>& t, const std::vector<T>& g) {
            if (nx >= 0) {
                std::vector<T> gx(N * D);
                detail::gemm(g.data(), N, O, false, wd.ptr(), O, D, false, gx.data());
                t.accumulate(nx, gx.data(), gx.size());
            }
            if (nw >= 0) {
                std::vector<T> gw(O * D);
                detail::gemm(g.data(), N, O, true, xd.ptr(), N, D, false, gw.data());
                t.accumulate(nw, gw.data(), gw.size());
            }
            if (nb >= 0) {
                std::vector<T>& gb = t.grad_buf(nb);
                for (size_t n = 0; n < N; ++n)
                    for (size_t o = 0; o < O; ++o) gb[o] += g[n * O + o];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Max Feature Map: split channels (or features) into two halves and take the
// elementwise maximum; ties route the gradient to the first half.

template <typename T>
Tensor<T> mfm(const Tensor<T>& x) {
    if (x.rank() != 4 && x.rank() != 2)
        throw ContractViolation("mfm: input must be (N,2M,T,F) or (N,2M), got " +
                                shape_str(x.shape));
    const size_t ch = x.shape[1];
    if (ch % 2 != 0)
        throw ContractViolation("mfm: channel extent must be even, got " + std::to_string(ch));
    const size_t M = ch / 2;
    const size_t N = x.shape[0];
    const size_t plane = x.rank() == 4 ? x.shape[2] * x.shape[3] : 1;

    Shape os = x.shape;
    os[1] = M;
    Tensor<T> out(os);
    const T* px = x.ptr();
    T* po = out.ptr();
    for (size_t n = 0; n < N; ++n) {
        const T* a = px + n * ch * plane;
        const T* b = a + M * plane;
        T* o = po + n * M * plane;
        for (size_t i = 0; i < M * plane; ++i) o[i] = a[i] >= b[i] ? a[i] : b[i];
    }

    if (Tape<T>* tp = result_tape(x)) {
        const int nx = x.node;
        Tensor<T> xd = x.detach();
        tp->record(out, {nx}, [=](Tape<T>& t, const std::vector<T>& g) {
            std::vector<T>& gx = t.grad_buf(nx);
            const T* a = xd.ptr();
            for (size_t n = 0; n < N; ++n) {
                const size_t ab = n * ch * plane;
                const size_t bb = ab + M * plane;
                const size_t ob = n * M * plane;
                for (size_t i = 0; i < M * plane; ++i) {
                    if (a[ab + i] >= a[bb + i])
                        gx[ab + i] += g[ob + i];
                    else
                        gx[bb + i] += g[ob + i];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Classification head

// Row softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    if (x.rank() != 2)
        throw ContractViolation("softmax: input must be (N,C), got " + shape_str(x.shape));
    const size_t N = x.shape[0], C = x.shape[1];
    Tensor<T> out(x.shape);
    for (size_t n = 0; n < N; ++n) {
        const T* z = x.ptr() + n * C;
        T* y = out.ptr() + n * C;
        T m = z[0];
        for (size_t c = 1; c < C; ++c) m = std::max(m, z[c]);
        T s = T(0);
        for (size_t c = 0; c < C; ++c) {
            y[c] = std::exp(z[c] - m);
            s += y[c];
        }
        for (size_t c = 0; c < C; ++c) y[c] /= s;
    }

    if (Tape<T>* tp = result_tape(x)) {
        const int nx = x.node;
        Tensor<T> od = out.detach();
        tp->record(out, {nx}, [=](Tape<T>& t, const std::vector<T>& g) {
            std::vector<T> gx(N * C);
            for (size_t n = 0; n < N; ++n) {
                const T* y = od.ptr() + n * C;
                const T* gn = g.data() + n * C;
                T dot = T(0);
                for (size_t c = 0; c < C; ++c) dot += gn[c] * y[c];
                for (size_t c = 0; c < C; ++c) gx[n * C + c] = y[c] * (gn[c] - dot);
            }
            t.accumulate(nx, gx.data(), gx.size());
        });
    }
    return out;
}

// Mean over the batch of -sum_c target * log softmax(logits).
// Gradient w.r.t. logits is (softmax - target) / N.
template <typename T>
Tensor<T> cross_entropy_soft(const Tensor<T>& logits, const Tensor<T>& targets) {
    if (logits.rank() != 2 || logits.shape != targets.shape)
        throw ContractViolation("cross_entropy_soft: logits " + shape_str(logits.shape) +
                                " and targets " + shape_str(targets.shape) +
                                " must be equal (N,C)");
    const size_t N = logits.shape[0], C = logits.shape[1];
    for (size_t n = 0; n < N; ++n) {
        T rs = T(0);
        for (size_t c = 0; c < C; ++c) {
            const T t = targets[n * C + c];
            if (t < T(0))
                throw ContractViolation("cross_entropy_soft: negative target entry in row " +
                                        std::to_string(n));
            rs += t;
        }
        if (std::abs(rs - T(1)) > T(1e-5))
            throw ContractViolation("cross_entropy_soft: target row " + std::to_string(n) +
                                    " sums to " + std::to_string(static_cast<double>(rs)));
    }

    std::vector<T> probs(N * C);
    double total = 0;
    for (size_t n = 0; n < N; ++n) {
        const T* z = logits.ptr() + n * C;
        T m = z[0];
        for (size_t c = 1; c < C; ++c) m = std::max(m, z[c]);
        double s = 0;
        for (size_t c = 0; c < C; ++c) s += std::exp(static_cast<double>(z[c] - m));
        const double lse = static_cast<double>(m) + std::log(s);
        for (size_t c = 0; c < C; ++c) {
            probs[n * C + c] = static_cast<T>(std::exp(static_cast<double>(z[c]) - lse));
            total += static_cast<double>(targets[n * C + c]) *
                     (lse - static_cast<double>(z[c]));
        }
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(N)));

    if (Tape<T>* tp = result_tape(logits)) {
        const int nz = logits.node;
        Tensor<T> td = targets.detach();
        tp->record(out, {nz}, [=, pr = std::move(probs)](Tape<T>& t, const std::vector<T>& g) {
            const T scale = g[0] / static_cast<T>(N);
            std::vector<T> gz(N * C);
            for (size_t i = 0; i < N * C; ++i) gz[i] = scale * (pr[i] - td[i]);
            t.accumulate(nz, gz.data(), gz.size());
        });
    }
    return out;
}

}  // namespace mfmasc
