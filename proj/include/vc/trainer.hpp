#ifndef VC_TRAINER_HPP
#define VC_TRAINER_HPP

#include <filesystem>
#include <functional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "vc/conditions.hpp"
#include "vc/denoiser.hpp"
#include "vc/optim.hpp"

namespace vc {

// Two-stage optimization. Stage 1 teaches the backbone text-to-video with
// the condition encoders frozen at initialization; stage 2 thaws them and
// trains compositionally, dropping random condition subsets per batch so
// the model stays usable under any combination at sampling time.

struct TrainConfig {
    int stage = 1;
    double lr = 5e-5;
    int steps = 3000;
    int batch = 8;
    double image_batch_prob = 0.25;  // chance a batch is single random frames
    double p_keep_all = 0.1;
    double p_drop_all = 0.1;
    double p_keep_each = 0.5;
    bool text_in_dropout = true;  // text rides the same triple via null tokens
    uint64_t seed = 0;
    std::string precision = "f32";
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int checkpoint_every = 1000;  // extra periodic saves; the end always saves
    bool warmup = false;  // reserved, currently rejected when set
    bool ema = false;     // reserved, currently rejected when set

    void validate() const {
        if (stage != 1 && stage != 2) throw std::invalid_argument("train: stage must be 1 or 2");
        for (double p : {image_batch_prob, p_keep_all, p_drop_all, p_keep_each})
            if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("train: probabilities must lie in [0,1]");
        if (p_keep_all + p_drop_all > 1.0)
            throw std::invalid_argument("train: p_keep_all + p_drop_all must not exceed 1");
        if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
        if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
        if (lr < 0.0) throw std::invalid_argument("train: learning rate must be >= 0");
        if (precision != "f32" && precision != "f64")
            throw std::invalid_argument("train: precision must be f32 or f64");
        if (warmup || ema) throw std::invalid_argument("train: warmup and ema are reserved and unimplemented");
    }
};

// Config-file form. Top-level JSON object with "train" and "model"
// sections; unknown keys are rejected so typos fail loudly.
TrainConfig train_config_from_json(const std::string& text);
ModelConfig model_config_from_json(const std::string& text);
std::string run_config_to_json(const ModelConfig& model, const TrainConfig& train);

// Per-batch condition subset. Text and style are gated individually
// because they enter through the token context, not the fused input.
struct DropoutMask {
    bool keep_text = true;
    bool keep_style = false;
    std::set<Cond> keep;
};

// Keep-all with p_keep_all, drop-all with p_drop_all, otherwise each entry
// independently with p_keep_each. One uniform draw picks the branch, so the
// marginal branch probabilities are exactly the configured triple.
inline DropoutMask sample_dropout_mask(const std::vector<Cond>& available, const TrainConfig& cfg, Rng& rng) {
    DropoutMask mask;
    const double u = rng.uniform();
    const int branch = u < cfg.p_keep_all ? 0 : u < cfg.p_keep_all + cfg.p_drop_all ? 1 : 2;
    for (Cond c : available) {
        bool keep = branch == 0 ? true : branch == 1 ? false : rng.uniform() < cfg.p_keep_each;
        if (keep) mask.keep.insert(c);
    }
    if (cfg.text_in_dropout)
        mask.keep_text = branch == 0 ? true : branch == 1 ? false : rng.uniform() < cfg.p_keep_each;
    else
        mask.keep_text = true;
    mask.keep_style = branch == 0 ? true : branch == 1 ? false : rng.uniform() < cfg.p_keep_each;
    return mask;
}

// One corpus clip plus everything condition extraction needs. The depth
// buffer is the layered ground-truth map ([F][H][W], near = 1); leave it
// empty when the source has none and the depth condition is skipped.
struct TrainSample {
    VideoClip clip;
    std::string caption;
    std::vector<int> text_ids;
    std::vector<float> depth;
};

using SampleLoader = std::function<TrainSample(int)>;

inline VideoClip slice_frame(const VideoClip& v, int f) {
    VideoClip out = VideoClip::blank(1, v.height, v.width);
    std::copy(v.frame(f), v.frame(f) + (size_t)v.height * v.width * 3, out.frame(0));
    return out;
}

// Extracts exactly the conditions the mask keeps. The tube-mask ratio is
// drawn here, so callers must hand in the step stream to stay reproducible.
inline ConditionSet build_condition_set(const TrainSample& sample, const DropoutMask& mask, const StcConfig& stc,
                                        Rng& rng, MatchParams mp = {}) {
    const VideoClip& clip = sample.clip;
    ConditionSet cs;
    cs.frames = clip.frames;
    cs.height = clip.height;
    cs.width = clip.width;
    if (mask.keep_text && !sample.text_ids.empty()) {
        cs.has_text = true;
        cs.text_ids = sample.text_ids;
        cs.text_ids.resize(stc.max_tokens, -1);
    }
    if (mask.keep_style) {
        cs.has_style = true;
        cs.style_rgb.assign(clip.frame(0), clip.frame(0) + (size_t)clip.height * clip.width * 3);
    }
    for (Cond kind : mask.keep) {
        switch (kind) {
            case Cond::motion:
                // a single-frame batch carries no transitions to match
                if (clip.frames >= 2) cs.put(kind, motion_condition(flow_from_video(clip, mp), mp.range));
                break;
            case Cond::depth:
                if (!sample.depth.empty())
                    cs.put(kind, depth_condition(clip.frames, clip.height, clip.width, sample.depth));
                break;
            case Cond::sketch:
                cs.put(kind, sketch_condition(clip));
                break;
            case Cond::mask: {
                auto tube = make_tube_mask(clip.height, clip.width, rng.uniform(0.25, 0.75), rng);
                cs.put(kind, mask_condition(clip, tube));
                break;
            }
            case Cond::image:
                cs.put(kind, image_condition(clip));
                break;
            case Cond::single_sketch:
                cs.put(kind, single_sketch_condition(clip));
                break;
        }
    }
    return cs;
}

template <class T>
struct TrainState {
    ModelConfig cfg;
    ParamStore<T> params;
    AdamW<T> opt;
    int64_t step = 0;  // completed steps of the current stage run
};

inline const std::vector<Cond>& all_condition_kinds() {
    static const std::vector<Cond> kinds = {Cond::motion, Cond::depth,  Cond::sketch,
                                            Cond::mask,   Cond::image, Cond::single_sketch};
    return kinds;
}

template <class T>
TrainState<T> init_train_state(ModelConfig cfg, uint64_t seed) {
    cfg.finalize();
    TrainState<T> st;
    st.cfg = cfg;
    Rng rng(derive_seed(seed, 101));
    init_denoiser_params(st.params, cfg, rng);
    for (Cond kind : all_condition_kinds()) init_stc_params(st.params, cfg.stc, kind, rng);
    init_token_params(st.params, cfg.stc, rng);
    return st;
}

template <class T>
void set_trainable_prefix(ParamStore<T>& ps, const std::string& prefix, bool on) {
    for (auto& [name, t] : ps.items)
        if (name.rfind(prefix, 0) == 0) t.set_requires_grad(on);
}

inline void append_model_config(std::vector<ArchiveEntry>& out, const ModelConfig& cfg) {
    auto scalar = [&](const char* name, double v) { out.push_back(to_entry(name, Tensor<double>::scalar(v))); };
    scalar("config/T", cfg.T);
    scalar("config/factor", cfg.factor);
    scalar("config/base", cfg.base);
    scalar("config/sin_dim", cfg.sin_dim);
    scalar("config/temb_dim", cfg.temb_dim);
    scalar("config/groups", cfg.groups);
    scalar("config/stc_width", cfg.stc.width);
    scalar("config/stc_temporal", cfg.stc.temporal ? 1 : 0);
    scalar("config/text_vocab", cfg.stc.text_vocab);
    scalar("config/token_dim", cfg.stc.token_dim);
    scalar("config/max_tokens", cfg.stc.max_tokens);
    scalar("config/style_patch", cfg.stc.style_patch);
}

inline ModelConfig read_model_config(const std::vector<ArchiveEntry>& entries) {
    auto scalar = [&](const std::string& name) {
        for (const auto& e : entries)
            if (e.name == name) return from_entry<double>(e).at(0);
        throw std::runtime_error("checkpoint: missing entry " + name);
    };
    ModelConfig cfg;
    cfg.T = (int)scalar("config/T");
    cfg.factor = (int)scalar("config/factor");
    cfg.base = (int)scalar("config/base");
    cfg.sin_dim = (int)scalar("config/sin_dim");
    cfg.temb_dim = (int)scalar("config/temb_dim");
    cfg.groups = (int)scalar("config/groups");
    cfg.stc.width = (int)scalar("config/stc_width");
    cfg.stc.temporal = scalar("config/stc_temporal") != 0;
    cfg.stc.text_vocab = (int)scalar("config/text_vocab");
    cfg.stc.token_dim = (int)scalar("config/token_dim");
    cfg.stc.max_tokens = (int)scalar("config/max_tokens");
    cfg.stc.style_patch = (int)scalar("config/style_patch");
    cfg.finalize();
    return cfg;
}

template <class T>
void save_train_state(const std::string& path, const TrainState<T>& st, int stage) {
    std::vector<ArchiveEntry> entries;
    append_params(entries, st.params);
    append_optimizer(entries, st.opt);
    append_model_config(entries, st.cfg);
    entries.push_back(to_entry("train/step", Tensor<double>::scalar((double)st.step)));
    entries.push_back(to_entry("train/stage", Tensor<double>::scalar((double)stage)));
    write_archive(path, std::move(entries));
}

template <class T>
TrainState<T> load_train_state(const std::string& path, int expect_stage) {
    auto entries = read_archive(path);
    TrainState<T> st = init_train_state<T>(read_model_config(entries), 0);
    load_params(entries, st.params);
    load_optimizer(entries, st.opt);
    for (const auto& e : entries) {
        if (e.name == "train/step") st.step = (int64_t)from_entry<double>(e).at(0);
        if (e.name == "train/stage" && expect_stage > 0 && (int)from_entry<double>(e).at(0) != expect_stage)
            throw std::runtime_error("checkpoint: " + path + " belongs to stage " +
                                     std::to_string((int)from_entry<double>(e).at(0)) + ", expected " +
                                     std::to_string(expect_stage));
    }
    return st;
}

// Parameters plus architecture only, for sampling and evaluation.
template <class T>
struct LoadedModel {
    ModelConfig cfg;
    ParamStore<T> params;
};

template <class T>
LoadedModel<T> load_model(const std::string& path) {
    auto entries = read_archive(path);
    LoadedModel<T> m{read_model_config(entries), {}};
    Rng rng(0);
    init_denoiser_params(m.params, m.cfg, rng);
    for (Cond kind : all_condition_kinds()) init_stc_params(m.params, m.cfg.stc, kind, rng);
    init_token_params(m.params, m.cfg.stc, rng);
    load_params(entries, m.params);
    return m;
}

struct RunResult {
    std::string checkpoint;
    std::vector<double> losses;                    // forward loss per executed step
    std::map<std::string, double> stc_grad_mass;   // accumulated |grad| per encoder parameter
    int64_t rejected = 0;
};

namespace detail {

inline void log_step(std::ostream* log, int64_t step, double loss, double lr, const DropoutMask& mask,
                     bool applied) {
    if (!log) return;
    *log << "{\"step\":" << step << ",\"loss\":" << loss << ",\"lr\":" << lr << ",\"applied\":"
         << (applied ? "true" : "false") << ",\"kept\":[";
    bool first = true;
    auto item = [&](const char* name) {
        *log << (first ? "\"" : ",\"") << name << "\"";
        first = false;
    };
    if (mask.keep_text) item("text");
    if (mask.keep_style) item("style");
    for (Cond c : mask.keep) item(cond_name(c));
    *log << "]}\n";
}

} // namespace detail

// The shared loop: picks a batch, extracts conditions, runs the noise
// prediction objective, backpropagates and updates. Resumes from st.step;
// every per-step random draw comes from a stream derived from (seed, stage,
// step), so a resumed run replays the uninterrupted one bit for bit.
template <class T>
RunResult train_run(TrainState<T>& st, const TrainConfig& cfg, const SampleLoader& load, int sample_count,
                    const std::string& out_dir, std::ostream* log) {
    cfg.validate();
    if (sample_count < 1) throw std::invalid_argument("train: corpus is empty");
    std::filesystem::create_directories(out_dir);
    auto ns = NoiseSchedule::linear(st.cfg.T);
    RunResult res;
    res.checkpoint = out_dir + "/stage" + std::to_string(cfg.stage) + ".vckp";

    for (int64_t step = st.step + 1; step <= cfg.steps; step++) {
        Rng rng(derive_seed(cfg.seed, (uint64_t)cfg.stage, (uint64_t)step));
        const bool image_batch = rng.uniform() < cfg.image_batch_prob;
        DropoutMask mask;  // stage 1: text only, encoders idle
        if (cfg.stage == 2) mask = sample_dropout_mask(all_condition_kinds(), cfg, rng);

        std::vector<Tensor<T>> z0s;
        std::vector<ConditionSet> conds;
        for (int b = 0; b < cfg.batch; b++) {
            TrainSample sample = load((int)rng.uniform_int(0, sample_count - 1));
            if (image_batch) {
                int f = (int)rng.uniform_int(0, sample.clip.frames - 1);
                sample.clip = slice_frame(sample.clip, f);
                if (!sample.depth.empty()) {
                    size_t plane = (size_t)sample.clip.height * sample.clip.width;
                    sample.depth = std::vector<float>(sample.depth.begin() + (size_t)f * plane,
                                                      sample.depth.begin() + (size_t)(f + 1) * plane);
                }
            }
            z0s.push_back(encode_video<T>(sample.clip, st.cfg.factor));
            conds.push_back(build_condition_set(sample, mask, st.cfg.stc, rng));
        }

        Tape<T> tape;
        auto loss = vldm_loss(tape, ns, z0s, [&](Tape<T>& tp, const Tensor<T>& z_t, int t, int i) {
            return model_epsilon(tp, st.params, st.cfg, z_t, t, conds[i]);
        }, rng);
        st.params.zero_grad();
        tape.backward(loss);

        if (cfg.stage == 2)
            for (auto& [name, p] : st.params.items) {
                if (name.rfind("stc/", 0) != 0 || !p.requires_grad()) continue;
                double& mass = res.stc_grad_mass[name];
                const T* g = p.grad();
                for (int64_t i = 0; i < p.numel(); i++) mass += std::abs((double)g[i]);
            }

        st.opt.lr = cfg.lr;
        st.opt.beta1 = cfg.beta1;
        st.opt.beta2 = cfg.beta2;
        st.opt.weight_decay = cfg.weight_decay;
        const bool applied = st.opt.step(st.params);
        if (!applied) res.rejected++;
        res.losses.push_back((double)loss.at(0));
        detail::log_step(log, step, (double)loss.at(0), cfg.lr, mask, applied);
        st.step = step;
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.steps)
            save_train_state(out_dir + "/stage" + std::to_string(cfg.stage) + "_step" + std::to_string(step) +
                                 ".vckp",
                             st, cfg.stage);
    }
    save_train_state(res.checkpoint, st, cfg.stage);

    // Compositional training must exercise every thawed encoder parameter;
    // a starved one means a condition branch silently never trained. Only
    // meaningful once the run has seen at least a corpus worth of clips.
    if (cfg.stage == 2 && (int64_t)cfg.steps * cfg.batch >= sample_count)
        for (const auto& [name, p] : st.params.items) {
            if (name.rfind("stc/", 0) != 0 || !p.requires_grad()) continue;
            auto it = res.stc_grad_mass.find(name);
            if (it == res.stc_grad_mass.end() || it->second == 0.0)
                throw std::runtime_error("train: encoder parameter " + name +
                                         " received no gradient over a full epoch");
        }
    return res;
}

// Stage 1: fresh parameters (or a stage-1 resume), condition encoders
// frozen, text-to-video objective only.
template <class T>
RunResult train_stage1(const ModelConfig& model, const TrainConfig& cfg, const SampleLoader& load, int sample_count,
                       const std::string& out_dir, std::ostream* log, const std::string& resume = "") {
    cfg.validate();
    if (cfg.stage != 1) throw std::invalid_argument("train: config stage must be 1");
    TrainState<T> st =
        resume.empty() ? init_train_state<T>(model, cfg.seed) : load_train_state<T>(resume, 1);
    set_trainable_prefix(st.params, "stc/", false);
    return train_run(st, cfg, load, sample_count, out_dir, log);
}

// Stage 2: starts from a stage-1 checkpoint with a fresh optimizer, thaws
// the encoders and trains compositionally. `model` decides the ablation
// variant; its architecture must agree with the checkpoint.
template <class T>
RunResult train_stage2(const ModelConfig& model, const TrainConfig& cfg, const SampleLoader& load, int sample_count,
                       const std::string& stage1_ckpt, const std::string& out_dir, std::ostream* log,
                       const std::string& resume = "") {
    cfg.validate();
    if (cfg.stage != 2) throw std::invalid_argument("train: config stage must be 2");
    TrainState<T> st;
    if (!resume.empty()) {
        st = load_train_state<T>(resume, 2);
    } else {
        auto entries = read_archive(stage1_ckpt);
        ModelConfig from_ckpt = read_model_config(entries);
        ModelConfig wanted = model;
        wanted.finalize();
        if (from_ckpt.factor != wanted.factor || from_ckpt.base != wanted.base ||
            from_ckpt.stc.width != wanted.stc.width || from_ckpt.stc.token_dim != wanted.stc.token_dim)
            throw std::runtime_error("train: stage-1 checkpoint architecture does not match the requested model");
        st = init_train_state<T>(wanted, cfg.seed);
        load_params(entries, st.params);
    }
    set_trainable_prefix(st.params, "stc/", true);
    return train_run(st, cfg, load, sample_count, out_dir, log);
}

} // namespace vc

#endif
