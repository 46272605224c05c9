#ifndef VC_NN_OPS_HPP
#define VC_NN_OPS_HPP

#include "vc/tensor.hpp"

namespace vc {

// c_out = ca*a + cb*b, one tape node instead of three
template <class T>
Tensor<T> lincomb(Tape<T>& tape, const Tensor<T>& a, T ca, const Tensor<T>& b, T cb) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("lincomb: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = ca * pa[i] + cb * pb[i];
    bool track = detail::any_grad<T>({&a, &b});
    detail::finish_op(tape, out, track, "lincomb");
    if (tape.recording() && track) {
        tape.push([da = a.ptr(), db = b.ptr(), o = out.ptr(), ca, cb, n] {
            if (da->requires_grad)
                for (int64_t i = 0; i < n; i++) da->grad[i] += ca * o->grad[i];
            if (db->requires_grad)
                for (int64_t i = 0; i < n; i++) db->grad[i] += cb * o->grad[i];
        });
    }
    return out;
}

// x [..., Din] -> [..., Dout] with weight [Dout, Din] and optional bias [Dout].
// Leading dims are flattened; rank-1 input gives rank-1 output.
template <class T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = Tensor<T>()) {
    if (w.rank() != 2) throw std::invalid_argument("linear: weight must be rank-2, got " + shape_str(w.shape()));
    int din = w.dim(1), dout = w.dim(0);
    if (x.rank() < 1 || x.shape().back() != din)
        throw std::invalid_argument("linear: input " + shape_str(x.shape()) + " does not end in " + std::to_string(din));
    bool has_b = b.defined();
    if (has_b && (b.rank() != 1 || b.dim(0) != dout))
        throw std::invalid_argument("linear: bias " + shape_str(b.shape()) + " != [" + std::to_string(dout) + "]");
    int64_t n = x.numel() / din;
    std::vector<int> oshape(x.shape());
    oshape.back() = dout;
    Tensor<T> out = Tensor<T>::zeros(oshape);
    const T* px = x.data();
    const T* pw = w.data();
    T* po = out.data();
    for (int64_t i = 0; i < n; i++) {
        const T* xr = px + i * din;
        T* orow = po + i * dout;
        for (int o = 0; o < dout; o++) {
            const T* wr = pw + (int64_t)o * din;
            T acc = has_b ? b.data()[o] : T(0);
            for (int k = 0; k < din; k++) acc += xr[k] * wr[k];
            orow[o] = acc;
        }
    }
    bool track = has_b ? detail::any_grad<T>({&x, &w, &b}) : detail::any_grad<T>({&x, &w});
    detail::finish_op(tape, out, track, "linear");
    if (tape.recording() && track) {
        auto bb = has_b ? b.ptr() : std::shared_ptr<TensorData<T>>();
        tape.push([dx = x.ptr(), dw = w.ptr(), bb, o = out.ptr(), n, din, dout] {
            for (int64_t i = 0; i < n; i++) {
                const T* og = o->grad.data() + i * dout;
                if (dx->requires_grad) {
                    T* xg = dx->grad.data() + i * din;
                    for (int oo = 0; oo < dout; oo++) {
                        T g = og[oo];
                        const T* wr = dw->val.data() + (int64_t)oo * din;
                        for (int k = 0; k < din; k++) xg[k] += g * wr[k];
                    }
                }
                if (dw->requires_grad) {
                    const T* xr = dx->val.data() + i * din;
                    for (int oo = 0; oo < dout; oo++) {
                        T g = og[oo];
                        T* wg = dw->grad.data() + (int64_t)oo * din;
                        for (int k = 0; k < din; k++) wg[k] += g * xr[k];
                    }
                }
                if (bb && bb->requires_grad)
                    for (int oo = 0; oo < dout; oo++) bb->grad[oo] += og[oo];
            }
        });
    }
    return out;
}

namespace detail {
inline int conv_lo(int pad, int tap, int stride) {
    int a = pad - tap;
    return a > 0 ? (a + stride - 1) / stride : 0;
}
inline int conv_hi(int extent, int pad, int tap, int stride, int out_extent) {
    int a = extent - 1 - tap + pad;
    int h = a >= 0 ? a / stride : -1;
    return h < out_extent - 1 ? h : out_extent - 1;
}
} // namespace detail

// x [N,C,H,W], w [K,C,kh,kw], optional bias [K]; zero padding
template <class T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = Tensor<T>(),
                 int stride = 1, int pad = 0) {
    if (x.rank() != 4) throw std::invalid_argument("conv2d: input must be rank-4, got " + shape_str(x.shape()));
    if (w.rank() != 4) throw std::invalid_argument("conv2d: weight must be rank-4, got " + shape_str(w.shape()));
    if (x.dim(1) != w.dim(1))
        throw std::invalid_argument("conv2d: input channels " + std::to_string(x.dim(1)) + " != weight channels " +
                                    std::to_string(w.dim(1)));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (pad < 0) throw std::invalid_argument("conv2d: negative padding");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (H + 2 * pad < kh || W + 2 * pad < kw)
        throw std::invalid_argument("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                                    shape_str(x.shape()));
    bool has_b = b.defined();
    if (has_b && (b.rank() != 1 || b.dim(0) != K))
        throw std::invalid_argument("conv2d: bias " + shape_str(b.shape()) + " != [" + std::to_string(K) + "]");
    int OH = (H + 2 * pad - kh) / stride + 1;
    int OW = (W + 2 * pad - kw) / stride + 1;
    Tensor<T> out = Tensor<T>::zeros({N, K, OH, OW});

    const T* px = x.data();
    const T* pw = w.data();
    T* po = out.data();
    int64_t xcs = (int64_t)H * W, xns = (int64_t)C * xcs;
    int64_t oks = (int64_t)OH * OW, ons = (int64_t)K * oks;
    for (int n = 0; n < N; n++) {
        for (int k = 0; k < K; k++) {
            T* oplane = po + n * ons + k * oks;
            if (has_b) {
                T bv = b.data()[k];
                for (int64_t i = 0; i < oks; i++) oplane[i] = bv;
            }
            for (int c = 0; c < C; c++) {
                const T* xplane = px + n * xns + c * xcs;
                const T* wker = pw + ((int64_t)k * C + c) * kh * kw;
                for (int i = 0; i < kh; i++) {
                    int oh_lo = detail::conv_lo(pad, i, stride);
                    int oh_hi = detail::conv_hi(H, pad, i, stride, OH);
                    for (int j = 0; j < kw; j++) {
                        T wv = wker[i * kw + j];
                        if (wv == T(0)) continue;
                        int ow_lo = detail::conv_lo(pad, j, stride);
                        int ow_hi = detail::conv_hi(W, pad, j, stride, OW);
                        for (int oh = oh_lo; oh <= oh_hi; oh++) {
                            const T* xrow = xplane + (int64_t)(oh * stride + i - pad) * W + (j - pad);
                            T* orow = oplane + (int64_t)oh * OW;
                            if (stride == 1) {
                                for (int ow = ow_lo; ow <= ow_hi; ow++) orow[ow] += wv * xrow[ow];
                            } else {
                                for (int ow = ow_lo; ow <= ow_hi; ow++) orow[ow] += wv * xrow[ow * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    bool track = has_b ? detail::any_grad<T>({&x, &w, &b}) : detail::any_grad<T>({&x, &w});
    detail::finish_op(tape, out, track, "conv2d");
    if (tape.recording() && track) {
        auto bb = has_b ? b.ptr() : std::shared_ptr<TensorData<T>>();
        tape.push([dx = x.ptr(), dw = w.ptr(), bb, o = out.ptr(), N, C, H, W, K, kh, kw, stride, pad, OH, OW] {
            int64_t xcs = (int64_t)H * W, xns = (int64_t)C * xcs;
            int64_t oks = (int64_t)OH * OW, ons = (int64_t)K * oks;
            for (int n = 0; n < N; n++) {
                for (int k = 0; k < K; k++) {
                    const T* gplane = o->grad.data() + n * ons + k * oks;
                    if (bb && bb->requires_grad) {
                        T acc = T(0);
                        for (int64_t i = 0; i < oks; i++) acc += gplane[i];
                        bb->grad[k] += acc;
                    }
                    for (int c = 0; c < C; c++) {
                        int64_t xoff = n * xns + c * xcs;
                        int64_t woff = ((int64_t)k * C + c) * kh * kw;
                        for (int i = 0; i < kh; i++) {
                            int oh_lo = detail::conv_lo(pad, i, stride);
                            int oh_hi = detail::conv_hi(H, pad, i, stride, OH);
                            for (int j = 0; j < kw; j++) {
                                int ow_lo = detail::conv_lo(pad, j, stride);
                                int ow_hi = detail::conv_hi(W, pad, j, stride, OW);
                                if (dw->requires_grad) {
                                    T acc = T(0);
                                    for (int oh = oh_lo; oh <= oh_hi; oh++) {
                                        const T* xrow =
                                            dx->val.data() + xoff + (int64_t)(oh * stride + i - pad) * W + (j - pad);
                                        const T* grow = gplane + (int64_t)oh * OW;
                                        if (stride == 1)
                                            for (int ow = ow_lo; ow <= ow_hi; ow++) acc += grow[ow] * xrow[ow];
                                        else
                                            for (int ow = ow_lo; ow <= ow_hi; ow++) acc += grow[ow] * xrow[ow * stride];
                                    }
                                    dw->grad[woff + i * kw + j] += acc;
                                }
                                if (dx->requires_grad) {
                                    T wv = dw->val[woff + i * kw + j];
                                    if (wv == T(0)) continue;
                                    for (int oh = oh_lo; oh <= oh_hi; oh++) {
                                        T* xrow =
                                            dx->grad.data() + xoff + (int64_t)(oh * stride + i - pad) * W + (j - pad);
                                        const T* grow = gplane + (int64_t)oh * OW;
                                        if (stride == 1)
                                            for (int ow = ow_lo; ow <= ow_hi; ow++) xrow[ow] += wv * grow[ow];
                                        else
                                            for (int ow = ow_lo; ow <= ow_hi; ow++) xrow[ow * stride] += wv * grow[ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Frame-axis convolution with a 3-tap kernel at every spatial site.
// x [F,C,H,W], w [K,C,3], optional bias [K]; frame axis zero padded by 1,
// so F is preserved and a single frame only sees the center tap.
template <class T>
Tensor<T> temporal_conv(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = Tensor<T>()) {
    if (x.rank() != 4) throw std::invalid_argument("temporal_conv: input must be rank-4, got " + shape_str(x.shape()));
    if (w.rank() != 3 || w.dim(2) != 3)
        throw std::invalid_argument("temporal_conv: weight must be [K,C,3], got " + shape_str(w.shape()));
    if (x.dim(1) != w.dim(1))
        throw std::invalid_argument("temporal_conv: input channels " + std::to_string(x.dim(1)) +
                                    " != weight channels " + std::to_string(w.dim(1)));
    int F = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (F < 1) throw std::invalid_argument("temporal_conv: no frames");
    int K = w.dim(0);
    bool has_b = b.defined();
    if (has_b && (b.rank() != 1 || b.dim(0) != K))
        throw std::invalid_argument("temporal_conv: bias " + shape_str(b.shape()) + " != [" + std::to_string(K) + "]");
    Tensor<T> out = Tensor<T>::zeros({F, K, H, W});
    int64_t S = (int64_t)H * W;
    const T* px = x.data();
    const T* pw = w.data();
    T* po = out.data();
    for (int f = 0; f < F; f++) {
        for (int k = 0; k < K; k++) {
            T* oplane = po + ((int64_t)f * K + k) * S;
            if (has_b) {
                T bv = b.data()[k];
                for (int64_t i = 0; i < S; i++) oplane[i] = bv;
            }
            for (int c = 0; c < C; c++) {
                for (int tap = 0; tap < 3; tap++) {
                    int ff = f + tap - 1;
                    if (ff < 0 || ff >= F) continue;
                    T wv = pw[((int64_t)k * C + c) * 3 + tap];
                    if (wv == T(0)) continue;
                    const T* xplane = px + ((int64_t)ff * C + c) * S;
                    for (int64_t i = 0; i < S; i++) oplane[i] += wv * xplane[i];
                }
            }
        }
    }
    bool track = has_b ? detail::any_grad<T>({&x, &w, &b}) : detail::any_grad<T>({&x, &w});
    detail::finish_op(tape, out, track, "temporal_conv");
    if (tape.recording() && track) {
        auto bb = has_b ? b.ptr() : std::shared_ptr<TensorData<T>>();
        tape.push([dx = x.ptr(), dw = w.ptr(), bb, o = out.ptr(), F, C, K, S] {
            for (int f = 0; f < F; f++) {
                for (int k = 0; k < K; k++) {
                    const T* gplane = o->grad.data() + ((int64_t)f * K + k) * S;
                    if (bb && bb->requires_grad) {
                        T acc = T(0);
                        for (int64_t i = 0; i < S; i++) acc += gplane[i];
                        bb->grad[k] += acc;
                    }
                    for (int c = 0; c < C; c++) {
                        for (int tap = 0; tap < 3; tap++) {
                            int ff = f + tap - 1;
                            if (ff < 0 || ff >= F) continue;
                            int64_t widx = ((int64_t)k * C + c) * 3 + tap;
                            if (dw->requires_grad) {
                                const T* xplane = dx->val.data() + ((int64_t)ff * C + c) * S;
                                T acc = T(0);
                                for (int64_t i = 0; i < S; i++) acc += gplane[i] * xplane[i];
                                dw->grad[widx] += acc;
                            }
                            if (dx->requires_grad) {
                                T wv = dw->val[widx];
                                if (wv == T(0)) continue;
                                T* xg = dx->grad.data() + ((int64_t)ff * C + c) * S;
                                for (int64_t i = 0; i < S; i++) xg[i] += wv * gplane[i];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// x [N,C,spatial...], per-(sample, group) normalization, affine per channel
template <class T>
Tensor<T> group_norm(Tape<T>& tape, const Tensor<T>& x, int groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    if (x.rank() < 2) throw std::invalid_argument("group_norm: input must have rank >= 2");
    int N = x.dim(0), C = x.dim(1);
    if (groups < 1 || C % groups != 0)
        throw std::invalid_argument("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                                    std::to_string(groups));
    if (gamma.numel() != C || beta.numel() != C)
        throw std::invalid_argument("group_norm: affine params must have " + std::to_string(C) + " channels");
    int64_t S = x.numel() / ((int64_t)N * C); // spatial extent per channel
    int cg = C / groups;
    int64_t m = (int64_t)cg * S; // elements per (sample, group)

    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto stats = std::make_shared<std::vector<T>>((size_t)N * groups * 2); // mean, inv_std pairs
    const T* px = x.data();
    T* po = out.data();
    for (int n = 0; n < N; n++) {
        for (int g = 0; g < groups; g++) {
            const T* base = px + ((int64_t)n * C + (int64_t)g * cg) * S;
            T mean = T(0);
            for (int64_t i = 0; i < m; i++) mean += base[i];
            mean /= T(m);
            T var = T(0);
            for (int64_t i = 0; i < m; i++) {
                T d = base[i] - mean;
                var += d * d;
            }
            var /= T(m);
            T inv = T(1) / std::sqrt(var + eps);
            (*stats)[((size_t)n * groups + g) * 2] = mean;
            (*stats)[((size_t)n * groups + g) * 2 + 1] = inv;
            T* ob = po + ((int64_t)n * C + (int64_t)g * cg) * S;
            for (int ci = 0; ci < cg; ci++) {
                int c = g * cg + ci;
                T ga = gamma.data()[c], be = beta.data()[c];
                const T* xr = base + (int64_t)ci * S;
                T* orow = ob + (int64_t)ci * S;
                for (int64_t i = 0; i < S; i++) orow[i] = (xr[i] - mean) * inv * ga + be;
            }
        }
    }
    bool track = detail::any_grad<T>({&x, &gamma, &beta});
    detail::finish_op(tape, out, track, "group_norm");
    if (tape.recording() && track) {
        tape.push([dx = x.ptr(), dg = gamma.ptr(), db = beta.ptr(), o = out.ptr(), stats, N, C, groups, cg, S, m] {
            for (int n = 0; n < N; n++) {
                for (int g = 0; g < groups; g++) {
                    T mean = (*stats)[((size_t)n * groups + g) * 2];
                    T inv = (*stats)[((size_t)n * groups + g) * 2 + 1];
                    int64_t off = ((int64_t)n * C + (int64_t)g * cg) * S;
                    const T* xb = dx->val.data() + off;
                    const T* gb = o->grad.data() + off;
                    // accumulate the two reduction terms of the norm backward
                    T sum_dxh = T(0), sum_dxh_xh = T(0);
                    for (int ci = 0; ci < cg; ci++) {
                        T ga = dg->val[g * cg + ci];
                        const T* xr = xb + (int64_t)ci * S;
                        const T* gr = gb + (int64_t)ci * S;
                        for (int64_t i = 0; i < S; i++) {
                            T xh = (xr[i] - mean) * inv;
                            T dxh = gr[i] * ga;
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh;
                        }
                    }
                    T inv_m = T(1) / T(m);
                    for (int ci = 0; ci < cg; ci++) {
                        int c = g * cg + ci;
                        T ga = dg->val[c];
                        const T* xr = xb + (int64_t)ci * S;
                        const T* gr = gb + (int64_t)ci * S;
                        T dga = T(0), dbe = T(0);
                        T* xg = dx->requires_grad ? dx->grad.data() + off + (int64_t)ci * S : nullptr;
                        for (int64_t i = 0; i < S; i++) {
                            T xh = (xr[i] - mean) * inv;
                            if (xg) {
                                T dxh = gr[i] * ga;
                                xg[i] += inv * (dxh - inv_m * sum_dxh - xh * inv_m * sum_dxh_xh);
                            }
                            dga += gr[i] * xh;
                            dbe += gr[i];
                        }
                        if (dg->requires_grad) dg->grad[c] += dga;
                        if (db->requires_grad) db->grad[c] += dbe;
                    }
                }
            }
        });
    }
    return out;
}

// Scaled dot-product attention, softmax over the key axis.
// q [L,D] or [B,L,D]; k,v rank matching q or rank-2/3 with batch 1 to share
// one key set across the query batch. v may have E != D.
template <class T>
Tensor<T> attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    bool batched = q.rank() == 3;
    if (q.rank() != 2 && q.rank() != 3)
        throw std::invalid_argument("attention: query must be rank-2 or rank-3, got " + shape_str(q.shape()));
    if (k.rank() != v.rank() || (k.rank() != 2 && k.rank() != 3))
        throw std::invalid_argument("attention: keys " + shape_str(k.shape()) + " / values " + shape_str(v.shape()) +
                                    " must both be rank-2 or rank-3");
    int B = batched ? q.dim(0) : 1;
    int L = q.dim(batched ? 1 : 0), D = q.dim(batched ? 2 : 1);
    int kvB = k.rank() == 3 ? k.dim(0) : 1;
    int M = k.dim(k.rank() == 3 ? 1 : 0), Dk = k.dim(k.rank() == 3 ? 2 : 1);
    int Mv = v.dim(v.rank() == 3 ? 1 : 0), E = v.dim(v.rank() == 3 ? 2 : 1);
    if (kvB != 1 && kvB != B)
        throw std::invalid_argument("attention: key batch " + std::to_string(kvB) + " incompatible with query batch " +
                                    std::to_string(B));
    if (Dk != D)
        throw std::invalid_argument("attention: query dim " + std::to_string(D) + " != key dim " + std::to_string(Dk));
    if (Mv != M)
        throw std::invalid_argument("attention: key count " + std::to_string(M) + " != value count " +
                                    std::to_string(Mv));
    if (M == 0) throw std::invalid_argument("attention: empty key set");

    std::vector<int> oshape = batched ? std::vector<int>{B, L, E} : std::vector<int>{L, E};
    Tensor<T> out = Tensor<T>::zeros(oshape);
    auto probs = std::make_shared<std::vector<T>>((size_t)B * L * M); // softmax rows kept for backward
    T inv_sqrt_d = T(1) / std::sqrt(T(D));

    const T* pq = q.data();
    const T* pk = k.data();
    const T* pv = v.data();
    T* po = out.data();
    for (int b = 0; b < B; b++) {
        const T* qb = pq + (int64_t)b * L * D;
        const T* kb = pk + (int64_t)(kvB == 1 ? 0 : b) * M * D;
        const T* vb = pv + (int64_t)(kvB == 1 ? 0 : b) * M * E;
        T* ob = po + (int64_t)b * L * E;
        T* pb = probs->data() + (size_t)b * L * M;
        for (int i = 0; i < L; i++) {
            const T* qr = qb + (int64_t)i * D;
            T* prow = pb + (int64_t)i * M;
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < M; j++) {
                const T* kr = kb + (int64_t)j * D;
                T s = T(0);
                for (int d = 0; d < D; d++) s += qr[d] * kr[d];
                s *= inv_sqrt_d;
                prow[j] = s;
                if (s > mx) mx = s;
            }
            T z = T(0);
            for (int j = 0; j < M; j++) {
                prow[j] = std::exp(prow[j] - mx);
                z += prow[j];
            }
            T invz = T(1) / z;
            T* orow = ob + (int64_t)i * E;
            for (int j = 0; j < M; j++) {
                prow[j] *= invz;
                const T* vr = vb + (int64_t)j * E;
                T p = prow[j];
                for (int e = 0; e < E; e++) orow[e] += p * vr[e];
            }
        }
    }
    bool track = detail::any_grad<T>({&q, &k, &v});
    detail::finish_op(tape, out, track, "attention");
    if (tape.recording() && track) {
        tape.push([dq = q.ptr(), dk = k.ptr(), dv = v.ptr(), o = out.ptr(), probs, B, L, M, D, E, kvB, inv_sqrt_d] {
            std::vector<T> dS((size_t)L * M);
            for (int b = 0; b < B; b++) {
                int64_t kvb = kvB == 1 ? 0 : b;
                const T* qb = dq->val.data() + (int64_t)b * L * D;
                const T* kb = dk->val.data() + kvb * M * D;
                const T* vb = dv->val.data() + kvb * M * E;
                const T* gb = o->grad.data() + (int64_t)b * L * E;
                const T* pb = probs->data() + (size_t)b * L * M;
                for (int i = 0; i < L; i++) {
                    const T* grow = gb + (int64_t)i * E;
                    const T* prow = pb + (int64_t)i * M;
                    T* dsrow = dS.data() + (int64_t)i * M;
                    // dP then dS = P o (dP - sum(dP o P))
                    T dot = T(0);
                    for (int j = 0; j < M; j++) {
                        const T* vr = vb + (int64_t)j * E;
                        T dp = T(0);
                        for (int e = 0; e < E; e++) dp += grow[e] * vr[e];
                        dsrow[j] = dp;
                        dot += dp * prow[j];
                    }
                    for (int j = 0; j < M; j++) dsrow[j] = prow[j] * (dsrow[j] - dot);
                    if (dv->requires_grad) {
                        T* vgb = dv->grad.data() + kvb * M * E;
                        for (int j = 0; j < M; j++) {
                            T p = prow[j];
                            if (p == T(0)) continue;
                            T* vg = vgb + (int64_t)j * E;
                            for (int e = 0; e < E; e++) vg[e] += p * grow[e];
                        }
                    }
                }
                if (dq->requires_grad) {
                    T* qg = dq->grad.data() + (int64_t)b * L * D;
                    for (int i = 0; i < L; i++) {
                        const T* dsrow = dS.data() + (int64_t)i * M;
                        T* qr = qg + (int64_t)i * D;
                        for (int j = 0; j < M; j++) {
                            T s = dsrow[j] * inv_sqrt_d;
                            const T* kr = kb + (int64_t)j * D;
                            for (int d = 0; d < D; d++) qr[d] += s * kr[d];
                        }
                    }
                }
                if (dk->requires_grad) {
                    T* kg = dk->grad.data() + kvb * M * D;
                    for (int i = 0; i < L; i++) {
                        const T* dsrow = dS.data() + (int64_t)i * M;
                        const T* qr = qb + (int64_t)i * D;
                        for (int j = 0; j < M; j++) {
                            T s = dsrow[j] * inv_sqrt_d;
                            T* kr = kg + (int64_t)j * D;
                            for (int d = 0; d < D; d++) kr[d] += s * qr[d];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// 2x2 average pooling, stride 2
template <class T>
Tensor<T> avg_pool2(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() != 4) throw std::invalid_argument("avg_pool2: input must be rank-4, got " + shape_str(x.shape()));
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 || W % 2)
        throw std::invalid_argument("avg_pool2: spatial extent " + shape_str(x.shape()) + " not even");
    int OH = H / 2, OW = W / 2;
    Tensor<T> out = Tensor<T>::zeros({N, C, OH, OW});
    const T* px = x.data();
    T* po = out.data();
    for (int64_t nc = 0; nc < (int64_t)N * C; nc++) {
        const T* xp = px + nc * H * W;
        T* op = po + nc * OH * OW;
        for (int oh = 0; oh < OH; oh++) {
            const T* r0 = xp + (int64_t)(2 * oh) * W;
            const T* r1 = r0 + W;
            T* orow = op + (int64_t)oh * OW;
            for (int ow = 0; ow < OW; ow++)
                orow[ow] = (r0[2 * ow] + r0[2 * ow + 1] + r1[2 * ow] + r1[2 * ow + 1]) * T(0.25);
        }
    }
    bool track = x.requires_grad();
    detail::finish_op(tape, out, track, "avg_pool2");
    if (tape.recording() && track) {
        tape.push([dx = x.ptr(), o = out.ptr(), N, C, H, W, OH, OW] {
            for (int64_t nc = 0; nc < (int64_t)N * C; nc++) {
                T* xg = dx->grad.data() + nc * H * W;
                const T* og = o->grad.data() + nc * OH * OW;
                for (int oh = 0; oh < OH; oh++) {
                    T* r0 = xg + (int64_t)(2 * oh) * W;
                    T* r1 = r0 + W;
                    const T* grow = og + (int64_t)oh * OW;
                    for (int ow = 0; ow < OW; ow++) {
                        T g = grow[ow] * T(0.25);
                        r0[2 * ow] += g;
                        r0[2 * ow + 1] += g;
                        r1[2 * ow] += g;
                        r1[2 * ow + 1] += g;
                    }
                }
            }
        });
    }
    return out;
}

// nearest-neighbor 2x upsample
template <class T>
Tensor<T> upsample_nearest2(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() != 4)
        throw std::invalid_argument("upsample_nearest2: input must be rank-4, got " + shape_str(x.shape()));
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> out = Tensor<T>::zeros({N, C, 2 * H, 2 * W});
    const T* px = x.data();
    T* po = out.data();
    for (int64_t nc = 0; nc < (int64_t)N * C; nc++) {
        const T* xp = px + nc * H * W;
        T* op = po + nc * 4 * H * W;
        for (int h = 0; h < H; h++) {
            const T* xr = xp + (int64_t)h * W;
            T* o0 = op + (int64_t)(2 * h) * 2 * W;
            T* o1 = o0 + 2 * W;
            for (int w = 0; w < W; w++) {
                T v = xr[w];
                o0[2 * w] = v;
                o0[2 * w + 1] = v;
                o1[2 * w] = v;
                o1[2 * w + 1] = v;
            }
        }
    }
    bool track = x.requires_grad();
    detail::finish_op(tape, out, track, "upsample_nearest2");
    if (tape.recording() && track) {
        tape.push([dx = x.ptr(), o = out.ptr(), N, C, H, W] {
            for (int64_t nc = 0; nc < (int64_t)N * C; nc++) {
                T* xg = dx->grad.data() + nc * H * W;
                const T* og = o->grad.data() + nc * 4 * H * W;
                for (int h = 0; h < H; h++) {
                    T* xr = xg + (int64_t)h * W;
                    const T* o0 = og + (int64_t)(2 * h) * 2 * W;
                    const T* o1 = o0 + 2 * W;
                    for (int w = 0; w < W; w++) xr[w] += o0[2 * w] + o0[2 * w + 1] + o1[2 * w] + o1[2 * w + 1];
                }
            }
        });
    }
    return out;
}

// broadcast-add a per-channel vector over [N,C,H,W]
template <class T>
Tensor<T> add_channel_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& v) {
    if (x.rank() != 4) throw std::invalid_argument("add_channel_bias: input must be rank-4");
    if (v.numel() != x.dim(1))
        throw std::invalid_argument("add_channel_bias: vector " + shape_str(v.shape()) + " != channels " +
                                    std::to_string(x.dim(1)));
    int N = x.dim(0), C = x.dim(1);
    int64_t S = (int64_t)x.dim(2) * x.dim(3);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    const T* pv = v.data();
    T* po = out.data();
    for (int n = 0; n < N; n++)
        for (int c = 0; c < C; c++) {
            T bv = pv[c];
            const T* xr = px + ((int64_t)n * C + c) * S;
            T* orow = po + ((int64_t)n * C + c) * S;
            for (int64_t i = 0; i < S; i++) orow[i] = xr[i] + bv;
        }
    bool track = detail::any_grad<T>({&x, &v});
    detail::finish_op(tape, out, track, "add_channel_bias");
    if (tape.recording() && track) {
        tape.push([dx = x.ptr(), dv = v.ptr(), o = out.ptr(), N, C, S] {
            for (int n = 0; n < N; n++)
                for (int c = 0; c < C; c++) {
                    const T* grow = o->grad.data() + ((int64_t)n * C + c) * S;
                    if (dx->requires_grad) {
                        T* xg = dx->grad.data() + ((int64_t)n * C + c) * S;
                        for (int64_t i = 0; i < S; i++) xg[i] += grow[i];
                    }
                    if (dv->requires_grad) {
                        T acc = T(0);
                        for (int64_t i = 0; i < S; i++) acc += grow[i];
                        dv->grad[c] += acc;
                    }
                }
        });
    }
    return out;
}

// table [V,D] indexed by ids; id -1 selects an all-zero row (null/pad token)
// and receives no gradient
template <class T>
Tensor<T> embedding(Tape<T>& tape, const Tensor<T>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw std::invalid_argument("embedding: table must be rank-2, got " + shape_str(table.shape()));
    int V = table.dim(0), D = table.dim(1);
    for (int id : ids)
        if (id < -1 || id >= V)
            throw std::invalid_argument("embedding: index " + std::to_string(id) + " out of range [0," +
                                        std::to_string(V) + ")");
    int L = (int)ids.size();
    Tensor<T> out = Tensor<T>::zeros({L, D});
    const T* pt = table.data();
    T* po = out.data();
    for (int l = 0; l < L; l++) {
        if (ids[l] < 0) continue;
        const T* row = pt + (int64_t)ids[l] * D;
        T* orow = po + (int64_t)l * D;
        for (int d = 0; d < D; d++) orow[d] = row[d];
    }
    bool track = table.requires_grad();
    detail::finish_op(tape, out, track, "embedding");
    if (tape.recording() && track) {
        tape.push([dt = table.ptr(), o = out.ptr(), ids, D] {
            for (size_t l = 0; l < ids.size(); l++) {
                if (ids[l] < 0) continue;
                T* tg = dt->grad.data() + (int64_t)ids[l] * D;
                const T* og = o->grad.data() + (int64_t)l * D;
                for (int d = 0; d < D; d++) tg[d] += og[d];
            }
        });
    }
    return out;
}

// timestep embedding: first half sin, second half cos over geometric
// frequencies max_period^(-i/half); t=0 gives sin=0, cos=1
template <class T>
Tensor<T> sinusoidal_embed(int64_t t, int dim, double max_period = 10000.0) {
    if (dim <= 0 || dim % 2 != 0)
        throw std::invalid_argument("sinusoidal_embed: dim " + std::to_string(dim) + " must be positive and even");
    int half = dim / 2;
    Tensor<T> out = Tensor<T>::zeros({dim});
    T* po = out.data();
    for (int i = 0; i < half; i++) {
        double freq = std::exp(-std::log(max_period) * double(i) / double(half));
        double a = double(t) * freq;
        po[i] = T(std::sin(a));
        po[half + i] = T(std::cos(a));
    }
    return out;
}

// ---- layout moves between frame grids and token sequences ----

// [N,C,H,W] -> [N, H*W, C]
template <class T>
Tensor<T> frames_to_tokens(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() != 4) throw std::invalid_argument("frames_to_tokens: input must be rank-4");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t S = (int64_t)H * W;
    Tensor<T> out = Tensor<T>::zeros({N, (int)S, C});
    const T* px = x.data();
    T* po = out.data();
    for (int n = 0; n < N; n++)
        for (int c = 0; c < C; c++) {
            const T* xp = px + ((int64_t)n * C + c) * S;
            T* op = po + (int64_t)n * S * C + c;
            for (int64_t s = 0; s < S; s++) op[s * C] = xp[s];
        }
    bool track = x.requires_grad();
    detail::finish_op(tape, out, track, "frames_to_tokens");
    if (tape.recording() && track) {
        tape.push([dx = x.ptr(), o = out.ptr(), N, C, S] {
            for (int n = 0; n < N; n++)
                for (int c = 0; c < C; c++) {
                    T* xg = dx->grad.data() + ((int64_t)n * C + c) * S;
                    const T* og = o->grad.data() + (int64_t)n * S * C + c;
                    for (int64_t s = 0; s < S; s++) xg[s] += og[s * C];
                }
        });
    }
    return out;
}

// [N, H*W, C] -> [N,C,H,W]
template <class T>
Tensor<T> tokens_to_frames(Tape<T>& tape, const Tensor<T>& x, int H, int W) {
    if (x.rank() != 3) throw std::invalid_argument("tokens_to_frames: input must be rank-3");
    int N = x.dim(0), C = x.dim(2);
    if (x.dim(1) != H * W)
        throw std::invalid_argument("tokens_to_frames: token count " + std::to_string(x.dim(1)) + " != " +
                                    std::to_string(H) + "x" + std::to_string(W));
    int64_t S = (int64_t)H * W;
    Tensor<T> out = Tensor<T>::zeros({N, C, H, W});
    const T* px = x.data();
    T* po = out.data();
    for (int n = 0; n < N; n++)
        for (int c = 0; c < C; c++) {
            const T* xp = px + (int64_t)n * S * C + c;
            T* op = po + ((int64_t)n * C + c) * S;
            for (int64_t s = 0; s < S; s++) op[s] = xp[s * C];
        }
    bool track = x.requires_grad();
    detail::finish_op(tape, out, track, "tokens_to_frames");
    if (tape.recording() && track) {
        tape.push([dx = x.ptr(), o = out.ptr(), N, C, S] {
            for (int n = 0; n < N; n++)
                for (int c = 0; c < C; c++) {
                    T* xg = dx->grad.data() + (int64_t)n * S * C + c;
                    const T* og = o->grad.data() + ((int64_t)n * C + c) * S;
                    for (int64_t s = 0; s < S; s++) xg[s * C] += og[s];
                }
        });
    }
    return out;
}

// [F,C,H,W] -> [H*W, F, C]: one token sequence over frames per spatial site
template <class T>
Tensor<T> frames_to_sites(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() != 4) throw std::invalid_argument("frames_to_sites: input must be rank-4");
    int F = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t S = (int64_t)H * W;
    Tensor<T> out = Tensor<T>::zeros({(int)S, F, C});
    const T* px = x.data();
    T* po = out.data();
    for (int f = 0; f < F; f++)
        for (int c = 0; c < C; c++) {
            const T* xp = px + ((int64_t)f * C + c) * S;
            T* op = po + (int64_t)f * C + c;
            for (int64_t s = 0; s < S; s++) op[s * F * C] = xp[s];
        }
    bool track = x.requires_grad();
    detail::finish_op(tape, out, track, "frames_to_sites");
    if (tape.recording() && track) {
        tape.push([dx = x.ptr(), o = out.ptr(), F, C, S] {
            for (int f = 0; f < F; f++)
                for (int c = 0; c < C; c++) {
                    T* xg = dx->grad.data() + ((int64_t)f * C + c) * S;
                    const T* og = o->grad.data() + (int64_t)f * C + c;
                    for (int64_t s = 0; s < S; s++) xg[s] += og[s * F * C];
                }
        });
    }
    return out;
}

// [H*W, F, C] -> [F,C,H,W]
template <class T>
Tensor<T> sites_to_frames(Tape<T>& tape, const Tensor<T>& x, int H, int W) {
    if (x.rank() != 3) throw std::invalid_argument("sites_to_frames: input must be rank-3");
    int F = x.dim(1), C = x.dim(2);
    if (x.dim(0) != H * W)
        throw std::invalid_argument("sites_to_frames: site count " + std::to_string(x.dim(0)) + " != " +
                                    std::to_string(H) + "x" + std::to_string(W));
    int64_t S = (int64_t)H * W;
    Tensor<T> out = Tensor<T>::zeros({F, C, H, W});
    const T* px = x.data();
    T* po = out.data();
    for (int f = 0; f < F; f++)
        for (int c = 0; c < C; c++) {
            const T* xp = px + (int64_t)f * C + c;
            T* op = po + ((int64_t)f * C + c) * S;
            for (int64_t s = 0; s < S; s++) op[s] = xp[s * F * C];
        }
    bool track = x.requires_grad();
    detail::finish_op(tape, out, track, "sites_to_frames");
    if (tape.recording() && track) {
        tape.push([dx = x.ptr(), o = out.ptr(), F, C, S] {
            for (int f = 0; f < F; f++)
                for (int c = 0; c < C; c++) {
                    T* xg = dx->grad.data() + (int64_t)f * C + c;
                    const T* og = o->grad.data() + ((int64_t)f * C + c) * S;
                    for (int64_t s = 0; s < S; s++) xg[s * F * C] += og[s];
                }
        });
    }
    return out;
}

} // namespace vc

#endif
