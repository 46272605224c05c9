#ifndef VC_STC_HPP
#define VC_STC_HPP

#include "vc/checkpoint.hpp"
#include "vc/init.hpp"
#include "vc/nn_ops.hpp"
#include "vc/video.hpp"

namespace vc {

// Spatio-temporal condition encoder. Each condition type owns an identical
// stack under its own parameters: two 3x3 convolutions and an average pool
// (strides arranged to land on the latent resolution), a temporal mixing
// layer that lets each spatial site look across frames, and a 1x1 projection
// to the fused channel count. The projection starts at zero, so a freshly
// added condition cannot disturb a model that was trained without it.
//
// Text and style do not go through this stack; they ride a token path
// (embedding table / patch embedding) consumed by the denoiser's
// cross-attention, and live here because they share the parameter store.

struct StcConfig {
    int factor = 4;        // spatial downsampling, must match the codec factor
    int width = 12;        // conv feature channels
    int c_fuse = 48;       // output channels, kept equal to the latent's
    bool temporal = true;  // false drops the cross-frame mixing (per-frame encoder)
    int text_vocab = 64;
    int token_dim = 64;
    int max_tokens = 8;
    int style_patch = 8;
};

namespace detail {
inline std::string stc_prefix(Cond type) { return std::string("stc/") + cond_name(type) + "/"; }

// Condition maps built by repeating one frame. Attention over identical
// frames returns each frame unchanged no matter the weights, so these types
// get no mixing layer: same function, no forever-gradient-free parameters.
inline bool frame_constant(Cond type) { return type == Cond::image || type == Cond::single_sketch; }

// factor = conv1 stride * conv2 stride * pool stride
inline void stc_strides(int factor, int& s1, int& s2, bool& pool) {
    switch (factor) {
        case 1: s1 = 1; s2 = 1; pool = false; return;
        case 2: s1 = 1; s2 = 1; pool = true; return;
        case 4: s1 = 2; s2 = 1; pool = true; return;
        case 8: s1 = 2; s2 = 2; pool = true; return;
    }
    throw std::invalid_argument("stc: unsupported downsampling factor " + std::to_string(factor));
}
} // namespace detail

template <class T>
void init_stc_params(ParamStore<T>& ps, const StcConfig& cfg, Cond type, Rng& rng) {
    const std::string p = detail::stc_prefix(type);
    const int cin = cond_channels(type), w = cfg.width;
    ps.add(p + "conv1_w", gaussian_init<T>({w, cin, 3, 3}, (int64_t)cin * 9, rng));
    ps.add(p + "conv1_b", Tensor<T>::zeros({w}));
    ps.add(p + "conv2_w", gaussian_init<T>({w, w, 3, 3}, (int64_t)w * 9, rng));
    ps.add(p + "conv2_b", Tensor<T>::zeros({w}));
    if (cfg.temporal && !detail::frame_constant(type)) {
        ps.add(p + "mix_q", gaussian_init<T>({w, w}, w, rng));
        ps.add(p + "mix_k", gaussian_init<T>({w, w}, w, rng));
    }
    ps.add(p + "proj_w", Tensor<T>::zeros({cfg.c_fuse, w, 1, 1}));
    ps.add(p + "proj_b", Tensor<T>::zeros({cfg.c_fuse}));
}

template <class T>
void init_token_params(ParamStore<T>& ps, const StcConfig& cfg, Rng& rng) {
    ps.add("cond/text/table", gaussian_init<T>({cfg.text_vocab, cfg.token_dim}, cfg.token_dim, rng));
    const int pdim = cfg.style_patch * cfg.style_patch * 3;
    ps.add("cond/style/w", gaussian_init<T>({cfg.token_dim, pdim}, pdim, rng));
    ps.add("cond/style/b", Tensor<T>::zeros({cfg.token_dim}));
}

// CondSeq buffer as a model input tensor
template <class T>
Tensor<T> cond_tensor(const CondSeq& seq, int frames, int height, int width) {
    if ((int64_t)seq.data.size() != (int64_t)frames * seq.channels * height * width)
        throw std::invalid_argument("stc: condition buffer does not match declared shape");
    Tensor<T> t = Tensor<T>::zeros({frames, seq.channels, height, width});
    for (int64_t i = 0; i < t.numel(); i++) t.at(i) = (T)seq.data[i];
    return t;
}

template <class T>
Tensor<T> stc_encode(Tape<T>& tape, ParamStore<T>& ps, const StcConfig& cfg, Cond type, const Tensor<T>& x) {
    if (x.rank() != 4) throw std::invalid_argument("stc: condition must be [F,C,H,W], got " + shape_str(x.shape()));
    if (x.dim(1) != cond_channels(type))
        throw std::invalid_argument(std::string("stc: ") + cond_name(type) + " expects " +
                                    std::to_string(cond_channels(type)) + " channels, got " +
                                    std::to_string(x.dim(1)));
    if (x.dim(2) % cfg.factor != 0 || x.dim(3) % cfg.factor != 0)
        throw std::invalid_argument("stc: input " + shape_str(x.shape()) + " not divisible by factor " +
                                    std::to_string(cfg.factor));
    int s1, s2;
    bool pool;
    detail::stc_strides(cfg.factor, s1, s2, pool);
    const std::string p = detail::stc_prefix(type);

    auto h = silu(tape, conv2d(tape, x, ps.at(p + "conv1_w"), ps.at(p + "conv1_b"), s1, 1));
    h = silu(tape, conv2d(tape, h, ps.at(p + "conv2_w"), ps.at(p + "conv2_b"), s2, 1));
    if (pool) h = avg_pool2(tape, h);

    if (cfg.temporal && !detail::frame_constant(type)) {
        // Per-site attention over frames. The values are the features
        // themselves (no value or output projection), so the result is a
        // convex recombination of frames: a one-frame sequence passes
        // through unchanged whatever the mixing weights say.
        auto sites = frames_to_sites(tape, h);
        auto q = linear(tape, sites, ps.at(p + "mix_q"));
        auto k = linear(tape, sites, ps.at(p + "mix_k"));
        auto mixed = attention(tape, q, k, sites);
        h = sites_to_frames(tape, mixed, h.dim(2), h.dim(3));
    }
    return conv2d(tape, h, ps.at(p + "proj_w"), ps.at(p + "proj_b"));
}

// Element-wise sum of the encoded conditions, concatenated after the latent
// channels. An empty list degrades to the unconditional input: the latent
// next to a zero block, exactly what dropped conditions contribute.
template <class T>
Tensor<T> stc_fuse(Tape<T>& tape, const StcConfig& cfg, const std::vector<Tensor<T>>& feats, const Tensor<T>& z) {
    if (z.rank() != 4) throw std::invalid_argument("fuse: latent must be [F,C,H,W], got " + shape_str(z.shape()));
    Tensor<T> sum;
    if (feats.empty()) {
        sum = Tensor<T>::zeros({z.dim(0), cfg.c_fuse, z.dim(2), z.dim(3)});
    } else {
        for (const auto& f : feats)
            if (f.shape() != feats[0].shape())
                throw std::invalid_argument("fuse: feature shapes differ, " + shape_str(f.shape()) + " vs " +
                                            shape_str(feats[0].shape()));
        if (feats[0].rank() != 4 || feats[0].dim(0) != z.dim(0) || feats[0].dim(2) != z.dim(2) ||
            feats[0].dim(3) != z.dim(3))
            throw std::invalid_argument("fuse: features " + shape_str(feats[0].shape()) + " do not align with latent " +
                                        shape_str(z.shape()));
        sum = feats[0];
        for (size_t i = 1; i < feats.size(); i++) sum = add(tape, sum, feats[i]);
    }
    return concat(tape, {z, sum}, 1);
}

// Token path: -1 ids hit the embedding's zero row, so an empty caption is
// the all-zero null sequence of the unconditional branch.
template <class T>
Tensor<T> embed_text(Tape<T>& tape, ParamStore<T>& ps, const std::vector<int>& ids) {
    return embedding(tape, ps.at("cond/text/table"), ids);
}

// Mean of non-overlapping patch embeddings, one style token.
template <class T>
Tensor<T> embed_style(Tape<T>& tape, ParamStore<T>& ps, const StcConfig& cfg, const std::vector<float>& rgb,
                      int height, int width) {
    const int P = cfg.style_patch;
    if (height % P != 0 || width % P != 0)
        throw std::invalid_argument("style: image " + std::to_string(height) + "x" + std::to_string(width) +
                                    " not divisible into " + std::to_string(P) + "-patches");
    if ((int64_t)rgb.size() != (int64_t)height * width * 3)
        throw std::invalid_argument("style: buffer does not match image size");
    const int gh = height / P, gw = width / P, pdim = P * P * 3;
    Tensor<T> patches = Tensor<T>::zeros({gh * gw, pdim});
    for (int py = 0; py < gh; py++)
        for (int px = 0; px < gw; px++) {
            T* dst = patches.data() + ((int64_t)py * gw + px) * pdim;
            for (int y = 0; y < P; y++)
                for (int x = 0; x < P; x++)
                    for (int c = 0; c < 3; c++)
                        dst[(y * P + x) * 3 + c] = (T)rgb[(((size_t)(py * P + y)) * width + px * P + x) * 3 + c];
        }
    auto emb = linear(tape, patches, ps.at("cond/style/w"), ps.at("cond/style/b"));
    return reshape(tape, mean_rows(tape, emb), {1, cfg.token_dim});
}

} // namespace vc

#endif
