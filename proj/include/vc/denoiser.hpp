#ifndef VC_DENOISER_HPP
#define VC_DENOISER_HPP

#include "vc/codec.hpp"
#include "vc/diffusion.hpp"
#include "vc/stc.hpp"

namespace vc {

// The noise predictor: a two-level UNet over latent frames where every
// position runs the same quartet of blocks: a spatial residual block fed by
// the timestep embedding, a stack of four per-pixel temporal convolutions,
// a spatial transformer (self-attention plus cross-attention to the
// text/style tokens), and a temporal transformer mixing frames per site.
// Residual branches that could perturb a fresh model (attention output
// projections, the last temporal conv) start at zero.

struct ModelConfig {
    int T = 1000;
    int factor = 4;      // codec factor; latent channels = 3 * factor^2
    int channels = 48;   // latent channel count
    int base = 16;       // level-0 width, level 1 doubles it
    int sin_dim = 128;   // sinusoidal timestep feature size
    int temb_dim = 128;  // timestep MLP width
    int groups = 4;      // group-norm groups
    // Test switch: temporal attention mixes nothing, each frame attends to
    // itself only. Makes the denoiser strictly per-frame when the temporal
    // convs are also neutralized.
    bool identity_attention = false;
    StcConfig stc;

    // keeps the latent-derived fields consistent with the factor
    void finalize() {
        channels = latent_channels(factor);
        stc.factor = factor;
        stc.c_fuse = channels;
    }
};

namespace detail {

struct BlockDims {
    const char* name;
    int win, w;
};

// down path, bottleneck, symmetric up path with skip concatenations
inline std::vector<BlockDims> block_plan(int base) {
    return {{"down0", base, base},
            {"down1", base, 2 * base},
            {"mid", 2 * base, 2 * base},
            {"up1", 4 * base, 2 * base},
            {"up0", 3 * base, base}};
}

template <class T>
void init_block(ParamStore<T>& ps, const std::string& p, int win, int w, const ModelConfig& cfg, Rng& rng) {
    ps.add(p + "res/gn1_g", Tensor<T>::full({win}, T(1)));
    ps.add(p + "res/gn1_b", Tensor<T>::zeros({win}));
    ps.add(p + "res/conv1_w", gaussian_init<T>({w, win, 3, 3}, (int64_t)win * 9, rng));
    ps.add(p + "res/conv1_b", Tensor<T>::zeros({w}));
    ps.add(p + "res/temb_w", gaussian_init<T>({w, cfg.temb_dim}, cfg.temb_dim, rng));
    ps.add(p + "res/temb_b", Tensor<T>::zeros({w}));
    ps.add(p + "res/gn2_g", Tensor<T>::full({w}, T(1)));
    ps.add(p + "res/gn2_b", Tensor<T>::zeros({w}));
    ps.add(p + "res/conv2_w", gaussian_init<T>({w, w, 1, 1}, w, rng));
    ps.add(p + "res/conv2_b", Tensor<T>::zeros({w}));
    if (win != w) ps.add(p + "res/skip_w", gaussian_init<T>({w, win, 1, 1}, win, rng));

    for (int i = 1; i <= 4; i++) {
        std::string n = p + "tconv/w" + std::to_string(i);
        ps.add(n, i == 4 ? Tensor<T>::zeros({w, w, 3}) : gaussian_init<T>({w, w, 3}, (int64_t)w * 3, rng));
        ps.add(p + "tconv/b" + std::to_string(i), Tensor<T>::zeros({w}));
    }

    ps.add(p + "sattn/gn1_g", Tensor<T>::full({w}, T(1)));
    ps.add(p + "sattn/gn1_b", Tensor<T>::zeros({w}));
    ps.add(p + "sattn/q_w", gaussian_init<T>({w, w}, w, rng));
    ps.add(p + "sattn/k_w", gaussian_init<T>({w, w}, w, rng));
    ps.add(p + "sattn/v_w", gaussian_init<T>({w, w}, w, rng));
    ps.add(p + "sattn/o_w", Tensor<T>::zeros({w, w}));
    ps.add(p + "sattn/gn2_g", Tensor<T>::full({w}, T(1)));
    ps.add(p + "sattn/gn2_b", Tensor<T>::zeros({w}));
    ps.add(p + "sattn/cq_w", gaussian_init<T>({w, w}, w, rng));
    ps.add(p + "sattn/ck_w", gaussian_init<T>({w, cfg.stc.token_dim}, cfg.stc.token_dim, rng));
    ps.add(p + "sattn/cv_w", gaussian_init<T>({w, cfg.stc.token_dim}, cfg.stc.token_dim, rng));
    ps.add(p + "sattn/co_w", Tensor<T>::zeros({w, w}));

    ps.add(p + "tattn/gn_g", Tensor<T>::full({w}, T(1)));
    ps.add(p + "tattn/gn_b", Tensor<T>::zeros({w}));
    ps.add(p + "tattn/q_w", gaussian_init<T>({w, w}, w, rng));
    ps.add(p + "tattn/k_w", gaussian_init<T>({w, w}, w, rng));
    ps.add(p + "tattn/v_w", gaussian_init<T>({w, w}, w, rng));
    ps.add(p + "tattn/o_w", Tensor<T>::zeros({w, w}));
}

// res -> temporal conv -> spatial transformer -> temporal transformer
template <class T>
Tensor<T> run_block(Tape<T>& tape, ParamStore<T>& ps, const ModelConfig& cfg, const std::string& p, Tensor<T> x,
                    const Tensor<T>& temb, const Tensor<T>& ctx) {
    const int g = cfg.groups;

    auto h = group_norm(tape, x, g, ps.at(p + "res/gn1_g"), ps.at(p + "res/gn1_b"));
    h = silu(tape, h);
    h = conv2d(tape, h, ps.at(p + "res/conv1_w"), ps.at(p + "res/conv1_b"), 1, 1);
    h = add_channel_bias(tape, h, linear(tape, temb, ps.at(p + "res/temb_w"), ps.at(p + "res/temb_b")));
    h = group_norm(tape, h, g, ps.at(p + "res/gn2_g"), ps.at(p + "res/gn2_b"));
    h = silu(tape, h);
    h = conv2d(tape, h, ps.at(p + "res/conv2_w"), ps.at(p + "res/conv2_b"));
    Tensor<T> skip = ps.has(p + "res/skip_w") ? conv2d(tape, x, ps.at(p + "res/skip_w")) : x;
    x = add(tape, skip, h);

    h = silu(tape, temporal_conv(tape, x, ps.at(p + "tconv/w1"), ps.at(p + "tconv/b1")));
    h = silu(tape, temporal_conv(tape, h, ps.at(p + "tconv/w2"), ps.at(p + "tconv/b2")));
    h = silu(tape, temporal_conv(tape, h, ps.at(p + "tconv/w3"), ps.at(p + "tconv/b3")));
    h = temporal_conv(tape, h, ps.at(p + "tconv/w4"), ps.at(p + "tconv/b4"));
    x = add(tape, x, h);

    const int H = x.dim(2), W = x.dim(3);
    h = group_norm(tape, x, g, ps.at(p + "sattn/gn1_g"), ps.at(p + "sattn/gn1_b"));
    auto tok = frames_to_tokens(tape, h);
    auto att = attention(tape, linear(tape, tok, ps.at(p + "sattn/q_w")), linear(tape, tok, ps.at(p + "sattn/k_w")),
                         linear(tape, tok, ps.at(p + "sattn/v_w")));
    x = add(tape, x, tokens_to_frames(tape, linear(tape, att, ps.at(p + "sattn/o_w")), H, W));

    h = group_norm(tape, x, g, ps.at(p + "sattn/gn2_g"), ps.at(p + "sattn/gn2_b"));
    tok = frames_to_tokens(tape, h);
    att = attention(tape, linear(tape, tok, ps.at(p + "sattn/cq_w")), linear(tape, ctx, ps.at(p + "sattn/ck_w")),
                    linear(tape, ctx, ps.at(p + "sattn/cv_w")));
    x = add(tape, x, tokens_to_frames(tape, linear(tape, att, ps.at(p + "sattn/co_w")), H, W));

    h = group_norm(tape, x, g, ps.at(p + "tattn/gn_g"), ps.at(p + "tattn/gn_b"));
    auto sites = frames_to_sites(tape, h);
    auto v = linear(tape, sites, ps.at(p + "tattn/v_w"));
    Tensor<T> mixed = cfg.identity_attention
                          ? v
                          : attention(tape, linear(tape, sites, ps.at(p + "tattn/q_w")),
                                      linear(tape, sites, ps.at(p + "tattn/k_w")), v);
    x = add(tape, x, sites_to_frames(tape, linear(tape, mixed, ps.at(p + "tattn/o_w")), H, W));
    return x;
}

} // namespace detail

template <class T>
void init_denoiser_params(ParamStore<T>& ps, const ModelConfig& cfg, Rng& rng) {
    if (cfg.channels != latent_channels(cfg.factor) || cfg.stc.c_fuse != cfg.channels ||
        cfg.stc.factor != cfg.factor)
        throw std::invalid_argument("model: config fields disagree with the codec factor, call finalize()");
    if (cfg.base % cfg.groups != 0)
        throw std::invalid_argument("model: base width " + std::to_string(cfg.base) + " not divisible into " +
                                    std::to_string(cfg.groups) + " groups");
    const int in_ch = cfg.channels + cfg.stc.c_fuse;
    ps.add("unet/in_w", gaussian_init<T>({cfg.base, in_ch, 1, 1}, in_ch, rng));
    ps.add("unet/in_b", Tensor<T>::zeros({cfg.base}));
    ps.add("unet/temb/w1", gaussian_init<T>({cfg.temb_dim, cfg.sin_dim}, cfg.sin_dim, rng));
    ps.add("unet/temb/b1", Tensor<T>::zeros({cfg.temb_dim}));
    ps.add("unet/temb/w2", gaussian_init<T>({cfg.temb_dim, cfg.temb_dim}, cfg.temb_dim, rng));
    ps.add("unet/temb/b2", Tensor<T>::zeros({cfg.temb_dim}));
    for (const auto& b : detail::block_plan(cfg.base))
        detail::init_block(ps, std::string("unet/") + b.name + "/", b.win, b.w, cfg, rng);
    ps.add("unet/out/gn_g", Tensor<T>::full({cfg.base}, T(1)));
    ps.add("unet/out/gn_b", Tensor<T>::zeros({cfg.base}));
    ps.add("unet/out/w", gaussian_init<T>({cfg.channels, cfg.base, 1, 1}, cfg.base, rng));
    ps.add("unet/out/b", Tensor<T>::zeros({cfg.channels}));
}

// fused: latent concatenated with the summed condition features [F,2c,h,w];
// ctx: cross-attention token rows [M, token_dim]
template <class T>
Tensor<T> denoise(Tape<T>& tape, ParamStore<T>& ps, const ModelConfig& cfg, const Tensor<T>& fused, int t,
                  const Tensor<T>& ctx) {
    if (t < 1 || t > cfg.T)
        throw std::invalid_argument("denoise: t " + std::to_string(t) + " outside [1," + std::to_string(cfg.T) + "]");
    if (fused.rank() != 4 || fused.dim(1) != cfg.channels + cfg.stc.c_fuse)
        throw std::invalid_argument("denoise: fused input " + shape_str(fused.shape()) + " does not carry " +
                                    std::to_string(cfg.channels + cfg.stc.c_fuse) + " channels");
    if (fused.dim(2) % 2 != 0 || fused.dim(3) % 2 != 0)
        throw std::invalid_argument("denoise: latent grid " + shape_str(fused.shape()) + " must be even to pool");
    if (ctx.rank() != 2 || ctx.dim(1) != cfg.stc.token_dim)
        throw std::invalid_argument("denoise: context " + shape_str(ctx.shape()) + " must be [M," +
                                    std::to_string(cfg.stc.token_dim) + "]");

    auto sin = sinusoidal_embed<T>(t, cfg.sin_dim);
    auto temb = silu(tape, linear(tape, sin, ps.at("unet/temb/w1"), ps.at("unet/temb/b1")));
    temb = linear(tape, temb, ps.at("unet/temb/w2"), ps.at("unet/temb/b2"));

    auto x = conv2d(tape, fused, ps.at("unet/in_w"), ps.at("unet/in_b"));
    auto d0 = detail::run_block(tape, ps, cfg, "unet/down0/", x, temb, ctx);
    auto d1 = detail::run_block(tape, ps, cfg, "unet/down1/", avg_pool2(tape, d0), temb, ctx);
    auto m = detail::run_block(tape, ps, cfg, "unet/mid/", d1, temb, ctx);
    auto u1 = detail::run_block(tape, ps, cfg, "unet/up1/", concat(tape, {m, d1}, 1), temb, ctx);
    auto u0 = detail::run_block(tape, ps, cfg, "unet/up0/", concat(tape, {upsample_nearest2(tape, u1), d0}, 1),
                                temb, ctx);
    auto out = silu(tape, group_norm(tape, u0, cfg.groups, ps.at("unet/out/gn_g"), ps.at("unet/out/gn_b")));
    return conv2d(tape, out, ps.at("unet/out/w"), ps.at("unet/out/b"));
}

// Builds the cross-attention token set for a condition set: the caption
// rows (the all-null sequence when no text is given) plus one style token.
template <class T>
Tensor<T> context_tokens(Tape<T>& tape, ParamStore<T>& ps, const ModelConfig& cfg, const ConditionSet& cond) {
    std::vector<int> ids = cond.has_text ? cond.text_ids : std::vector<int>(cfg.stc.max_tokens, -1);
    if ((int)ids.size() != cfg.stc.max_tokens)
        throw std::invalid_argument("context: expected " + std::to_string(cfg.stc.max_tokens) + " token ids, got " +
                                    std::to_string(ids.size()));
    auto ctx = embed_text(tape, ps, ids);
    if (cond.has_style)
        ctx = concat(tape, {ctx, embed_style(tape, ps, cfg.stc, cond.style_rgb, cond.height, cond.width)}, 0);
    return ctx;
}

// Full epsilon prediction: sequence conditions through their encoders into
// the fused input, text and style into the cross-attention context.
template <class T>
Tensor<T> model_epsilon(Tape<T>& tape, ParamStore<T>& ps, const ModelConfig& cfg, const Tensor<T>& z_t, int t,
                        const ConditionSet& cond) {
    std::vector<Tensor<T>> feats;
    for (const auto& [kind, seq] : cond.seqs) {
        auto x = cond_tensor<T>(seq, cond.frames, cond.height, cond.width);
        feats.push_back(stc_encode(tape, ps, cfg.stc, kind, x));
    }
    auto fused = stc_fuse(tape, cfg.stc, feats, z_t);
    return denoise(tape, ps, cfg, fused, t, context_tokens(tape, ps, cfg, cond));
}

// Guided prediction, always two evaluations. The arithmetic runs through
// (1-w)*e1 + w*e2 so that w = 0 and w = 1 return one branch exactly; when
// both evaluations agree bitwise the shared value is returned as is, which
// is what the extrapolation formula reduces to algebraically.
template <class T>
Tensor<T> cfg_epsilon(Tape<T>& tape, ParamStore<T>& ps, const ModelConfig& cfg, const Tensor<T>& z_t, int t,
                      const ConditionSet& c1, const ConditionSet& c2, double omega) {
    if (omega < 0) throw std::invalid_argument("guidance: omega must be >= 0");
    auto e1 = model_epsilon(tape, ps, cfg, z_t, t, c1);
    auto e2 = model_epsilon(tape, ps, cfg, z_t, t, c2);
    if (omega == 0.0) return e1;
    if (omega == 1.0) return e2;
    if (e1.vec() == e2.vec()) return e1;
    return lincomb(tape, e1, (T)(1.0 - omega), e2, (T)omega);
}

} // namespace vc

#endif
