#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "vc/trainer.hpp"

using vc::Cond;
using vc::Tensor;
using vc::TrainConfig;

namespace {

std::filesystem::path fresh_dir(const std::string& leaf) {
    auto dir = std::filesystem::temp_directory_path() / "vc_trainer_tests" / leaf;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

vc::ModelConfig tiny_model() {
    vc::ModelConfig cfg;
    cfg.factor = 2;
    cfg.base = 4;
    cfg.stc.width = 3;
    cfg.stc.text_vocab = 12;
    cfg.stc.token_dim = 8;
    cfg.stc.max_tokens = 4;
    cfg.stc.style_patch = 4;
    cfg.finalize();
    return cfg;
}

// 2-frame 16x16 clips: a 4x4 square on a dim background, one pixel of motion
// per frame, colors and positions varied by index. Frames must be larger than
// one matching block or the motion extractor sees nothing.
vc::TrainSample make_sample(int i) {
    vc::TrainSample s;
    s.clip = vc::VideoClip::blank(2, 16, 16, 0.1f);
    s.depth.assign(2 * 16 * 16, 0.f);
    const int x0 = 2 + i % 5, y0 = 2 + (i / 3) % 5;
    const float r = (i % 2) ? 0.9f : 0.2f, g = 0.5f, b = (i % 2) ? 0.2f : 0.9f;
    for (int f = 0; f < 2; f++)
        for (int dy = 0; dy < 4; dy++)
            for (int dx = 0; dx < 4; dx++) {
                int x = x0 + f + dx, y = y0 + dy;
                float* px = s.clip.frame(f) + ((size_t)y * 16 + x) * 3;
                px[0] = r;
                px[1] = g;
                px[2] = b;
                s.depth[(size_t)f * 256 + y * 16 + x] = 1.f;
            }
    s.caption = "square " + std::to_string(i);
    s.text_ids = {1 + i % 4, 5, 6 + i % 5, -1};
    return s;
}

const vc::SampleLoader tiny_loader = [](int i) { return make_sample(i); };

TrainConfig tiny_train(int stage, int steps, uint64_t seed) {
    TrainConfig cfg;
    cfg.stage = stage;
    cfg.steps = steps;
    cfg.batch = 2;
    cfg.lr = 1e-3;
    cfg.seed = seed;
    cfg.checkpoint_every = 0;
    return cfg;
}

} // namespace

TEST_CASE("one optimizer step moves a unit scalar by the learning rate") {
    vc::ParamStore<double> ps;
    ps.add("p", Tensor<double>::scalar(1.0));
    ps.at("p").grad()[0] = 1.0;
    vc::AdamW<double> opt;
    opt.lr = 0.1;
    opt.weight_decay = 0.0;
    CHECK(opt.step(ps));
    CHECK(ps.at("p").at(0) == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(opt.steps_taken == 1);
}

TEST_CASE("weight decay without gradients is a pure multiplicative shrink") {
    vc::ParamStore<double> ps;
    ps.add("w", Tensor<double>::from_data({2}, {1.0, -4.0}));
    vc::AdamW<double> opt;
    opt.lr = 0.1;
    opt.weight_decay = 0.01;
    CHECK(opt.step(ps));
    CHECK(ps.at("w").at(0) == doctest::Approx(1.0 * (1.0 - 0.001)).epsilon(1e-12));
    CHECK(ps.at("w").at(1) == doctest::Approx(-4.0 * (1.0 - 0.001)).epsilon(1e-12));

    opt.weight_decay = 0.0;
    auto before = ps.at("w").at(0);
    CHECK(opt.step(ps));
    CHECK(ps.at("w").at(0) == before);
}

TEST_CASE("a non-finite gradient rejects the whole step") {
    vc::ParamStore<float> ps;
    ps.add("a", Tensor<float>::scalar(1.f));
    ps.add("b", Tensor<float>::scalar(2.f));
    ps.at("a").grad()[0] = 1.f;
    ps.at("b").grad()[0] = std::nanf("");
    vc::AdamW<float> opt;
    opt.lr = 0.1;
    CHECK_FALSE(opt.step(ps));
    CHECK(ps.at("a").at(0) == 1.f);
    CHECK(ps.at("b").at(0) == 2.f);
    CHECK(opt.steps_taken == 0);
    CHECK(opt.steps_rejected == 1);

    ps.at("b").grad()[0] = 0.f;
    CHECK(opt.step(ps));
    CHECK(opt.steps_taken == 1);
}

TEST_CASE("frozen parameters are skipped entirely") {
    vc::ParamStore<float> ps;
    ps.add("live", Tensor<float>::scalar(1.f));
    ps.add("ice", Tensor<float>::scalar(1.f));
    ps.at("ice").set_requires_grad(false);
    ps.at("live").grad()[0] = 1.f;
    vc::AdamW<float> opt;
    opt.lr = 0.1;
    opt.weight_decay = 0.01;
    CHECK(opt.step(ps));
    CHECK(ps.at("ice").at(0) == 1.f);
    CHECK(ps.at("live").at(0) < 1.f);
    CHECK(opt.m.count("ice") == 0);
}

TEST_CASE("optimizer state survives the archive byte for byte") {
    vc::ParamStore<double> ps;
    ps.add("w", Tensor<double>::from_data({3}, {1.0, 2.0, 3.0}));
    vc::AdamW<double> opt;
    opt.lr = 0.01;
    for (int i = 0; i < 3; i++) {
        for (int j = 0; j < 3; j++) ps.at("w").grad()[j] = 0.1 * (i + 1) * (j + 1);
        CHECK(opt.step(ps));
    }
    std::vector<vc::ArchiveEntry> entries;
    vc::append_optimizer(entries, opt);
    vc::AdamW<double> back;
    vc::load_optimizer(entries, back);
    CHECK(back.steps_taken == 3);
    CHECK(back.m == opt.m);
    CHECK(back.v == opt.v);

    std::vector<vc::ArchiveEntry> empty;
    CHECK_THROWS_WITH_AS(vc::load_optimizer(empty, back), "checkpoint: missing entry opt/steps_taken",
                         std::runtime_error);
}

TEST_CASE("dropout branch frequencies match the configured triple") {
    TrainConfig cfg;
    cfg.stage = 2;
    std::vector<Cond> menu = {Cond::motion, Cond::depth, Cond::sketch};
    vc::Rng rng(2024);
    const int n = 100000;
    int all_kept = 0, all_dropped = 0, text_kept = 0;
    std::map<Cond, int> kept_count;
    for (int i = 0; i < n; i++) {
        auto mask = vc::sample_dropout_mask(menu, cfg, rng);
        if ((int)mask.keep.size() == 3) all_kept++;
        if (mask.keep.empty()) all_dropped++;
        if (mask.keep_text) text_kept++;
        for (Cond c : mask.keep) kept_count[c]++;
    }
    // outcome mass: the 0.1 branch plus the accidental 0.8 * 0.5^3 from the
    // independent branch
    const double corner = 0.1 + 0.8 * std::pow(0.5, 3);
    CHECK(std::abs((double)all_kept / n - corner) < 0.01);
    CHECK(std::abs((double)all_dropped / n - corner) < 0.01);
    // marginal keep: 0.1 + 0.8 * 0.5
    for (Cond c : menu) CHECK(std::abs((double)kept_count[c] / n - 0.5) < 0.01);
    CHECK(std::abs((double)text_kept / n - 0.5) < 0.01);

    auto none = vc::sample_dropout_mask({}, cfg, rng);
    CHECK(none.keep.empty());

    cfg.text_in_dropout = false;
    vc::Rng rng2(7);
    for (int i = 0; i < 50; i++) CHECK(vc::sample_dropout_mask(menu, cfg, rng2).keep_text);
}

TEST_CASE("training twice from one seed produces identical checkpoints") {
    auto model = tiny_model();
    auto cfg = tiny_train(1, 3, 11);
    auto run = [&](const std::string& leaf) {
        auto dir = fresh_dir(leaf);
        auto res = vc::train_stage1<float>(model, cfg, tiny_loader, 6, dir.string(), nullptr);
        return slurp(res.checkpoint);
    };
    CHECK(run("det_a") == run("det_b"));
}

TEST_CASE("zero learning rate leaves every parameter untouched") {
    auto model = tiny_model();
    auto cfg = tiny_train(1, 2, 3);
    cfg.lr = 0.0;
    auto dir = fresh_dir("lr0");
    auto res = vc::train_stage1<float>(model, cfg, tiny_loader, 6, dir.string(), nullptr);
    auto trained = vc::load_model<float>(res.checkpoint);
    auto init = vc::init_train_state<float>(model, cfg.seed);
    for (const auto& [name, t] : init.params.items) {
        const auto& other = trained.params.at(name);
        for (int64_t i = 0; i < t.numel(); i++) CHECK(t.at(i) == other.at(i));
    }
    CHECK(res.losses.size() == 2);
}

TEST_CASE("single-frame batches run the same graph") {
    auto model = tiny_model();
    auto cfg = tiny_train(1, 2, 4);
    cfg.image_batch_prob = 1.0;
    auto dir = fresh_dir("image_batch");
    auto res = vc::train_stage1<float>(model, cfg, tiny_loader, 6, dir.string(), nullptr);
    for (double l : res.losses) CHECK(std::isfinite(l));
}

TEST_CASE("an empty corpus is rejected") {
    auto model = tiny_model();
    auto cfg = tiny_train(1, 2, 4);
    auto dir = fresh_dir("empty");
    CHECK_THROWS_WITH_AS(vc::train_stage1<float>(model, cfg, tiny_loader, 0, dir.string(), nullptr),
                         "train: corpus is empty", std::invalid_argument);
}

TEST_CASE("stage one keeps the condition encoders at their initialization") {
    auto model = tiny_model();
    auto cfg = tiny_train(1, 3, 8);
    auto dir = fresh_dir("frozen");
    auto res = vc::train_stage1<float>(model, cfg, tiny_loader, 6, dir.string(), nullptr);
    auto trained = vc::load_model<float>(res.checkpoint);
    auto init = vc::init_train_state<float>(model, cfg.seed);
    bool backbone_moved = false;
    for (const auto& [name, t] : init.params.items) {
        const auto& other = trained.params.at(name);
        if (name.rfind("stc/", 0) == 0) {
            for (int64_t i = 0; i < t.numel(); i++) CHECK(t.at(i) == other.at(i));
        } else {
            for (int64_t i = 0; i < t.numel(); i++) backbone_moved = backbone_moved || t.at(i) != other.at(i);
        }
    }
    CHECK(backbone_moved);
}

TEST_CASE("stage two requires its starting checkpoint") {
    auto model = tiny_model();
    auto cfg = tiny_train(2, 2, 4);
    auto dir = fresh_dir("missing_s1");
    CHECK_THROWS_AS(vc::train_stage2<float>(model, cfg, tiny_loader, 6, (dir / "nope.vckp").string(), dir.string(),
                                            nullptr),
                    std::runtime_error);
}

TEST_CASE("stage two trains every condition branch") {
    auto model = tiny_model();
    auto dir = fresh_dir("stage2");
    auto s1 = vc::train_stage1<float>(model, tiny_train(1, 2, 21), tiny_loader, 4, dir.string(), nullptr);

    auto cfg = tiny_train(2, 4, 22);
    cfg.p_keep_all = 1.0;  // keep-all so every branch sees data
    cfg.p_drop_all = 0.0;
    std::ostringstream log;
    auto res = vc::train_stage2<float>(model, cfg, tiny_loader, 4, s1.checkpoint, dir.string(), &log);

    auto trained = vc::load_model<float>(res.checkpoint);
    for (Cond kind : vc::all_condition_kinds()) {
        std::string proj = std::string("stc/") + vc::cond_name(kind) + "/proj_w";
        bool moved = false;
        const auto& w = trained.params.at(proj);
        for (int64_t i = 0; i < w.numel(); i++) moved = moved || w.at(i) != 0.f;
        CHECK_MESSAGE(moved, proj, " never left zero");
    }
    for (const auto& [name, mass] : res.stc_grad_mass) CHECK_MESSAGE(mass > 0.0, name, " starved");
    CHECK(log.str().find("\"kept\":[\"text\",\"style\",\"motion\"") != std::string::npos);
}

TEST_CASE("an all-dropped batch reduces to the stage-one objective") {
    auto model = tiny_model();
    vc::Rng rng(3);
    auto sample = make_sample(2);

    vc::DropoutMask stage1_style;  // text only, nothing else
    stage1_style.keep_text = true;
    stage1_style.keep_style = false;
    TrainConfig cfg;
    cfg.stage = 2;
    cfg.p_keep_all = 0.0;
    cfg.p_drop_all = 1.0;
    cfg.text_in_dropout = false;  // the exemption flag: drop-all spares text
    auto dropped = vc::sample_dropout_mask(vc::all_condition_kinds(), cfg, rng);
    CHECK(dropped.keep.empty());
    CHECK(dropped.keep_text);
    CHECK_FALSE(dropped.keep_style);

    vc::Rng e1(9), e2(9);
    auto a = vc::build_condition_set(sample, stage1_style, model.stc, e1);
    auto b = vc::build_condition_set(sample, dropped, model.stc, e2);

    auto st = vc::init_train_state<float>(model, 77);
    auto ns = vc::NoiseSchedule::linear(model.T);
    auto z0 = vc::encode_video<float>(sample.clip, model.factor);
    auto run = [&](const vc::ConditionSet& cs) {
        vc::Tape<float> tape;
        vc::Rng draws(123);
        auto loss = vc::vldm_loss(tape, ns, std::vector<Tensor<float>>{z0},
                                  [&](vc::Tape<float>& tp, const Tensor<float>& z_t, int t, int) {
                                      return vc::model_epsilon(tp, st.params, st.cfg, z_t, t, cs);
                                  }, draws);
        st.params.zero_grad();
        tape.backward(loss);
        std::vector<float> grads;
        for (const auto& [name, p] : st.params.items)
            if (p.requires_grad()) grads.insert(grads.end(), p.grad(), p.grad() + p.numel());
        return std::pair<float, std::vector<float>>(loss.at(0), std::move(grads));
    };
    auto [la, ga] = run(a);
    auto [lb, gb] = run(b);
    CHECK(la == lb);
    CHECK(ga == gb);
}

TEST_CASE("an interrupted run resumes to the exact uninterrupted result") {
    auto model = tiny_model();
    auto dir_a = fresh_dir("resume_full");
    auto dir_b = fresh_dir("resume_split");
    auto s1a = vc::train_stage1<float>(model, tiny_train(1, 2, 31), tiny_loader, 5, dir_a.string(), nullptr);
    auto s1b = vc::train_stage1<float>(model, tiny_train(1, 2, 31), tiny_loader, 5, dir_b.string(), nullptr);

    // keep-all so the short runs cannot trip the gradient-starvation check;
    // the subject here is bit-exact resumption, not dropout
    auto full_cfg = tiny_train(2, 6, 32);
    full_cfg.p_keep_all = 1.0;
    full_cfg.p_drop_all = 0.0;
    auto full = vc::train_stage2<float>(model, full_cfg, tiny_loader, 5, s1a.checkpoint, dir_a.string(), nullptr);

    auto half_cfg = full_cfg;
    half_cfg.steps = 3;
    auto half = vc::train_stage2<float>(model, half_cfg, tiny_loader, 5, s1b.checkpoint, dir_b.string(), nullptr);
    auto rest = vc::train_stage2<float>(model, full_cfg, tiny_loader, 5, s1b.checkpoint, dir_b.string(), nullptr,
                                        half.checkpoint);

    CHECK(slurp(full.checkpoint) == slurp(rest.checkpoint));
}

TEST_CASE("config files round trip and reject unknown keys") {
    auto model = tiny_model();
    TrainConfig cfg = tiny_train(2, 40, 9);
    cfg.precision = "f64";
    auto text = vc::run_config_to_json(model, cfg);
    auto model2 = vc::model_config_from_json(text);
    auto cfg2 = vc::train_config_from_json(text);
    CHECK(model2.factor == model.factor);
    CHECK(model2.base == model.base);
    CHECK(model2.channels == model.channels);
    CHECK(model2.stc.width == model.stc.width);
    CHECK(cfg2.stage == 2);
    CHECK(cfg2.steps == 40);
    CHECK(cfg2.seed == 9);
    CHECK(cfg2.precision == "f64");

    CHECK_THROWS_WITH_AS(vc::train_config_from_json("{\"train\":{\"sage\":1}}"), "config: unknown key train.sage",
                         std::runtime_error);
    CHECK_THROWS_AS(vc::train_config_from_json("not json"), std::runtime_error);
    CHECK_THROWS_AS(vc::train_config_from_json("{\"train\":{\"stage\":3}}"), std::invalid_argument);
    CHECK_THROWS_AS(vc::train_config_from_json("{\"train\":{\"p_keep_all\":0.6,\"p_drop_all\":0.5}}"),
                    std::invalid_argument);
    CHECK_THROWS_AS(vc::train_config_from_json("{\"train\":{\"warmup\":true}}"), std::invalid_argument);
}

TEST_CASE("losses trend down over a short run on the tiny corpus") {
    auto model = tiny_model();
    auto cfg = tiny_train(1, 30, 13);
    cfg.batch = 3;
    cfg.lr = 2e-3;
    cfg.image_batch_prob = 0.0;
    auto dir = fresh_dir("descent");
    auto res = vc::train_stage1<float>(model, cfg, tiny_loader, 3, dir.string(), nullptr);
    double early = 0, late = 0;
    for (int i = 0; i < 5; i++) early += res.losses[i];
    for (int i = 25; i < 30; i++) late += res.losses[i];
    CHECK(late < early);
}
