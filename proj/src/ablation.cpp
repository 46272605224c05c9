#include "vc/ablation.hpp"

#include <sstream>
#include <stdexcept>

#include "vc/codec.hpp"
#include "vc/corpus.hpp"
#include "vc/diffusion.hpp"
#include "vc/trainer.hpp"

namespace vc {

namespace {

struct EvalPrompt {
    TrainSample sample;
    std::vector<FlowField> reference;
};

// Canonical one-line form of everything that shapes the numbers. Hashed
// into the report so two printouts can be compared at a glance.
std::string describe(const std::vector<AblationRow>& rows, const AblationConfig& cfg) {
    std::ostringstream os;
    os << "eval=" << cfg.eval_root << " prompts=" << cfg.prompts << " steps=" << cfg.steps
       << " guidance=" << cfg.guidance << " seed=" << cfg.seed << " resamples=" << cfg.resamples
       << " coverage=" << cfg.coverage;
    for (const AblationRow& row : rows) {
        os << " | " << row.name << ":";
        for (const SeedCheckpoint& sc : row.checkpoints) os << " " << sc.seed << "@" << sc.path;
        for (Cond c : row.conditions) os << " +" << cond_name(c);
    }
    return os.str();
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / (double)v.size();
}

} // namespace

EvalReport run_ablation(const std::vector<AblationRow>& rows, const AblationConfig& cfg) {
    if (rows.empty()) throw std::invalid_argument("ablation: no rows to run");
    if (cfg.prompts < 1) throw std::invalid_argument("ablation: prompts must be >= 1");
    if (cfg.steps < 1) throw std::invalid_argument("ablation: steps must be >= 1");
    if (cfg.guidance < 0) throw std::invalid_argument("guidance: omega must be >= 0");
    if (cfg.resamples < 1) throw std::invalid_argument("ablation: resamples must be >= 1");
    if (!(cfg.coverage > 0.0 && cfg.coverage < 1.0))
        throw std::invalid_argument("ablation: coverage must lie in (0, 1)");

    Corpus corpus = open_corpus(cfg.eval_root);
    if ((int)corpus.entries.size() < cfg.prompts)
        throw std::runtime_error("ablation: corpus " + cfg.eval_root + " holds " +
                                 std::to_string(corpus.entries.size()) + " samples, need " +
                                 std::to_string(cfg.prompts));

    std::vector<EvalPrompt> prompts((size_t)cfg.prompts);
    for (int p = 0; p < cfg.prompts; p++) {
        prompts[p].sample = load_corpus_sample(corpus, p);
        prompts[p].reference = load_corpus_flow(corpus, p);
    }

    EvalReport rep;
    rep.config_hash = fnv1a_hex(describe(rows, cfg));
    rep.revision = VCGEN_REVISION;

    for (const AblationRow& row : rows) {
        EvalRow out;
        out.name = row.name;
        try {
            if (row.checkpoints.empty())
                throw std::runtime_error("ablation: row " + row.name + " lists no checkpoints");
            std::vector<double> fcs;
            std::vector<double> epes;
            for (const SeedCheckpoint& sc : row.checkpoints) {
                auto model = load_model<float>(sc.path);
                auto ns = NoiseSchedule::linear(model.cfg.T);
                for (int p = 0; p < cfg.prompts; p++) {
                    const EvalPrompt& ep = prompts[(size_t)p];
                    const VideoClip& ref = ep.sample.clip;
                    if (ref.height % model.cfg.factor != 0 || ref.width % model.cfg.factor != 0)
                        throw std::runtime_error("ablation: clip " + std::to_string(p) + " is " +
                                                 std::to_string(ref.width) + "x" + std::to_string(ref.height) +
                                                 ", not divisible by factor " + std::to_string(model.cfg.factor));

                    DropoutMask menu;
                    menu.keep_text = true;
                    menu.keep.insert(row.conditions.begin(), row.conditions.end());
                    Rng extract_rng(derive_seed(cfg.seed, 2, (uint64_t)p));
                    ConditionSet cond = build_condition_set(ep.sample, menu, model.cfg.stc, extract_rng);
                    ConditionSet uncond;
                    uncond.frames = ref.frames;
                    uncond.height = ref.height;
                    uncond.width = ref.width;

                    // one noise stream per prompt, shared by every row and
                    // checkpoint, so variant comparisons are paired
                    Rng noise_rng(derive_seed(cfg.seed, 1, (uint64_t)p));
                    std::vector<int> shape = {ref.frames, model.cfg.channels, ref.height / model.cfg.factor,
                                              ref.width / model.cfg.factor};
                    auto z = ddim_sample<float>(
                        ns, shape, cfg.steps,
                        [&](const Tensor<float>& z_t, int t) {
                            Tape<float> tape;
                            return cfg_epsilon(tape, model.params, model.cfg, z_t, t, uncond, cond, cfg.guidance);
                        },
                        noise_rng);
                    VideoClip video = decode_video(z, model.cfg.factor);
                    fcs.push_back(frame_consistency(video));
                    epes.push_back(end_point_error(flow_from_video(video), ep.reference));
                }
                out.seeds.push_back(sc.seed);
            }
            out.samples = (int)fcs.size();
            out.fc_mean = mean_of(fcs);
            Interval ci = bootstrap_ci(fcs, cfg.resamples, cfg.coverage, derive_seed(cfg.seed, 3));
            out.fc_lo = ci.lo;
            out.fc_hi = ci.hi;
            out.epe_mean = mean_of(epes);
            ci = bootstrap_ci(epes, cfg.resamples, cfg.coverage, derive_seed(cfg.seed, 4));
            out.epe_lo = ci.lo;
            out.epe_hi = ci.hi;
        } catch (const std::exception& e) {
            out = EvalRow{};
            out.name = row.name;
            out.error = e.what();
        }
        rep.rows.push_back(std::move(out));
    }
    return rep;
}

} // namespace vc
