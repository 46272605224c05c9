#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "test_support.hpp"
#include "vc/denoiser.hpp"
#include "vc/diffusion.hpp"

using vc::NoiseSchedule;
using vc::Tensor;

TEST_CASE("default schedule is monotone and ends almost fully noised") {
    auto ns = NoiseSchedule::linear();
    CHECK(ns.T == 1000);
    CHECK(ns.beta[1] == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(ns.beta[1000] == doctest::Approx(2e-2).epsilon(1e-12));
    for (int t = 1; t <= ns.T; t++) {
        CHECK(ns.beta[t] > 0.0);
        CHECK(ns.beta[t] < 1.0);
        if (t > 1) CHECK(ns.beta[t] > ns.beta[t - 1]);
        CHECK(ns.alpha_bar[t] < ns.alpha_bar[t - 1]);
        CHECK(ns.alpha_bar[t] > 0.0);
    }
    CHECK(ns.abar(0) == 1.0);
    CHECK(ns.abar(1000) < 0.01);

    CHECK_THROWS_AS(NoiseSchedule::linear(0), std::invalid_argument);
    CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.3, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(ns.abar(1001), std::invalid_argument);
    CHECK_THROWS_WITH_AS(ns.check_step(0), "schedule: t 0 outside [1,1000]", std::invalid_argument);
}

TEST_CASE("forward corruption has the scheduled mean and variance") {
    auto ns = NoiseSchedule::linear();
    vc::Rng rng(31);
    auto z0 = vct::randt<double>({2, 4}, rng);
    const int t = 400;
    const double ab = ns.abar(t);
    const int n = 20000;
    vc::Tape<double> tape;
    tape.set_recording(false);

    std::vector<double> mean(8, 0.0), sq(8, 0.0);
    for (int k = 0; k < n; k++) {
        auto eps = vc::gaussian_like<double>(z0.shape(), rng);
        auto zt = vc::q_sample(tape, ns, z0, t, eps);
        for (int i = 0; i < 8; i++) {
            double centered = zt.at(i) - std::sqrt(ab) * z0.at(i);
            mean[i] += centered;
            sq[i] += centered * centered;
        }
    }
    double pooled_var = 0.0;
    for (int i = 0; i < 8; i++) {
        mean[i] /= n;
        CHECK(std::abs(mean[i]) < 0.03);
        pooled_var += sq[i] / n - mean[i] * mean[i];
    }
    pooled_var /= 8.0;
    CHECK(pooled_var == doctest::Approx(1.0 - ab).epsilon(0.02));

    auto bad = vct::randt<double>({3}, rng);
    CHECK_THROWS_AS(vc::q_sample(tape, ns, z0, 400, bad), std::invalid_argument);
    CHECK_THROWS_AS(vc::q_sample(tape, ns, z0, 0, z0), std::invalid_argument);
}

TEST_CASE("a predictor that recovers the injected noise gets zero loss") {
    auto ns = NoiseSchedule::linear();
    vc::Rng rng(7);
    std::vector<Tensor<double>> z0s;
    for (int i = 0; i < 3; i++) z0s.push_back(vct::randt<double>({1, 3, 2, 2}, rng));
    vc::Tape<double> tape;
    tape.set_recording(false);

    vc::Rng draws(55);
    auto loss = vc::vldm_loss(tape, ns, z0s, [&](vc::Tape<double>& tp, const Tensor<double>& z_t, int t, int i) {
        // invert the corruption: eps = (z_t - sqrt(ab) z0) / sqrt(1 - ab)
        double ab = ns.abar(t);
        double s = 1.0 / std::sqrt(1.0 - ab);
        return vc::lincomb(tp, z_t, s, z0s[i], -std::sqrt(ab) * s);
    }, draws);
    CHECK(loss.numel() == 1);
    CHECK(std::abs(loss.at(0)) < 1e-12);
}

TEST_CASE("a predictor that returns zeros scores unit loss") {
    auto ns = NoiseSchedule::linear();
    vc::Rng rng(17);
    vc::Tape<double> tape;
    tape.set_recording(false);
    double total = 0.0;
    const int reps = 30;
    for (int r = 0; r < reps; r++) {
        std::vector<Tensor<double>> z0s;
        for (int i = 0; i < 4; i++) z0s.push_back(vct::randt<double>({2, 3, 4, 4}, rng));
        auto loss = vc::vldm_loss(tape, ns, z0s, [](vc::Tape<double>& tp, const Tensor<double>& z_t, int, int) {
            (void)tp;
            return Tensor<double>::zeros(z_t.shape());
        }, rng);
        total += loss.at(0);
    }
    CHECK(total / reps == doctest::Approx(1.0).epsilon(0.05));

    std::vector<Tensor<double>> empty;
    vc::Rng r2(1);
    CHECK_THROWS_WITH_AS(vc::vldm_loss(tape, ns, empty, [](vc::Tape<double>&, const Tensor<double>& z, int, int) {
        return z;
    }, r2), "loss: empty batch", std::invalid_argument);
}

TEST_CASE("one reverse step with the true noise restores the clean latent") {
    auto ns = NoiseSchedule::linear();
    vc::Rng rng(42);
    auto z0 = vct::randt<double>({2, 3, 4, 4}, rng);
    auto z_T = vc::gaussian_like<double>(z0.shape(), rng);
    const double ab = ns.abar(ns.T);
    auto eps_star = Tensor<double>::zeros(z0.shape());
    for (int64_t i = 0; i < z0.numel(); i++)
        eps_star.at(i) = (z_T.at(i) - std::sqrt(ab) * z0.at(i)) / std::sqrt(1.0 - ab);

    auto out = vc::ddim_sample_from(ns, z_T, 1, [&](const Tensor<double>&, int) { return eps_star; });
    for (int64_t i = 0; i < z0.numel(); i++) CHECK(out.at(i) == doctest::Approx(z0.at(i)).epsilon(1e-9));

    // the 32-bit walk stays inside the documented tolerance
    auto z0f = vct::randt<float>({2, 3, 4, 4}, rng);
    auto z_Tf = vc::gaussian_like<float>(z0f.shape(), rng);
    const float abf = (float)ab;
    auto epsf = Tensor<float>::zeros(z0f.shape());
    for (int64_t i = 0; i < z0f.numel(); i++)
        epsf.at(i) = (z_Tf.at(i) - std::sqrt(abf) * z0f.at(i)) / std::sqrt(1.f - abf);
    auto outf = vc::ddim_sample_from(ns, z_Tf, 1, [&](const Tensor<float>&, int) { return epsf; });
    for (int64_t i = 0; i < z0f.numel(); i++) CHECK(std::abs(outf.at(i) - z0f.at(i)) < 1e-4);
}

TEST_CASE("a state-independent prediction makes every step count agree") {
    auto ns = NoiseSchedule::linear();
    vc::Rng rng(9);
    auto z_T = vc::gaussian_like<double>({1, 3, 4, 4}, rng);
    auto c = vc::gaussian_like<double>(z_T.shape(), rng);
    auto fn = [&](const Tensor<double>&, int) { return c; };

    auto full = vc::ddim_sample_from(ns, z_T, 1000, fn);
    auto coarse = vc::ddim_sample_from(ns, z_T, 50, fn);
    auto tiny = vc::ddim_sample_from(ns, z_T, 4, fn);

    // closed form: the first update pins z0_hat and later steps preserve it
    const double abT = ns.abar(ns.T);
    for (int64_t i = 0; i < z_T.numel(); i++) {
        double z0_hat = (z_T.at(i) - std::sqrt(1.0 - abT) * c.at(i)) / std::sqrt(abT);
        CHECK(full.at(i) == doctest::Approx(z0_hat).epsilon(1e-9));
        CHECK(std::abs(full.at(i) - coarse.at(i)) < 1e-9);
        CHECK(std::abs(full.at(i) - tiny.at(i)) < 1e-9);
    }
}

TEST_CASE("sampler rejects step counts off the uniform grid") {
    auto ns = NoiseSchedule::linear();
    vc::Rng rng(3);
    auto fn = [](const Tensor<float>& z, int) { return Tensor<float>::zeros(z.shape()); };
    CHECK_THROWS_WITH_AS(vc::ddim_sample<float>(ns, {1, 2}, 0, fn, rng), "ddim: steps 0 outside [1,1000]",
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(vc::ddim_sample<float>(ns, {1, 2}, 7, fn, rng), "ddim: steps 7 does not divide T 1000",
                         std::invalid_argument);
    CHECK_THROWS_AS(vc::ddim_sample<float>(ns, {1, 2}, 2000, fn, rng), std::invalid_argument);
    auto bad = [](const Tensor<float>&, int) { return Tensor<float>::zeros({3}); };
    CHECK_THROWS_AS(vc::ddim_sample<float>(ns, {1, 2}, 10, bad, rng), std::invalid_argument);
}

TEST_CASE("sampling is reproducible from the seed alone") {
    auto ns = NoiseSchedule::linear();
    auto fn = [&](const Tensor<float>& z, int t) {
        auto e = Tensor<float>::zeros(z.shape());
        for (int64_t i = 0; i < z.numel(); i++) e.at(i) = 0.1f * z.at(i) + 0.001f * (float)t;
        return e;
    };
    vc::Rng a(1234), b(1234), c(77);
    auto ra = vc::ddim_sample<float>(ns, {2, 3, 2, 2}, 25, fn, a);
    auto rb = vc::ddim_sample<float>(ns, {2, 3, 2, 2}, 25, fn, b);
    auto rc = vc::ddim_sample<float>(ns, {2, 3, 2, 2}, 25, fn, c);
    bool differs = false;
    for (int64_t i = 0; i < ra.numel(); i++) {
        CHECK(ra.at(i) == rb.at(i));
        differs = differs || ra.at(i) != rc.at(i);
    }
    CHECK(differs);
}

TEST_CASE("guidance identities survive a complete sampling run") {
    vc::ModelConfig cfg;
    cfg.factor = 2;
    cfg.base = 4;
    cfg.stc.width = 3;
    cfg.stc.text_vocab = 12;
    cfg.stc.token_dim = 8;
    cfg.stc.max_tokens = 4;
    cfg.finalize();
    vc::ParamStore<float> ps;
    vc::Rng init(19);
    vc::init_denoiser_params(ps, cfg, init);
    vc::init_stc_params(ps, cfg.stc, vc::Cond::motion, init);
    vc::init_token_params(ps, cfg.stc, init);

    vc::ConditionSet c1;  // unconditional
    vc::ConditionSet c2;
    c2.frames = 2;
    c2.height = 8;
    c2.width = 8;
    vc::CondSeq seq;
    seq.channels = 2;
    seq.data.assign((size_t)2 * 2 * 64, 0.25f);
    c2.put(vc::Cond::motion, std::move(seq));
    c2.has_text = true;
    c2.text_ids = {2, 7, -1, -1};

    auto ns = NoiseSchedule::linear(cfg.T);
    vc::Rng noise(5);
    auto z_T = vc::gaussian_like<float>({2, cfg.channels, 4, 4}, noise);
    vc::Tape<float> tape;
    tape.set_recording(false);

    auto guided = [&](double omega) {
        return vc::ddim_sample_from(ns, z_T, 10, [&](const Tensor<float>& z, int t) {
            return vc::cfg_epsilon(tape, ps, cfg, z, t, c1, c2, omega);
        });
    };
    auto plain = [&](const vc::ConditionSet& c) {
        return vc::ddim_sample_from(ns, z_T, 10, [&](const Tensor<float>& z, int t) {
            return vc::model_epsilon(tape, ps, cfg, z, t, c);
        });
    };

    auto g0 = guided(0.0), g1 = guided(1.0);
    auto p1 = plain(c1), p2 = plain(c2);
    for (int64_t i = 0; i < z_T.numel(); i++) {
        CHECK(g0.at(i) == p1.at(i));
        CHECK(g1.at(i) == p2.at(i));
    }

    auto same_a = vc::ddim_sample_from(ns, z_T, 10, [&](const Tensor<float>& z, int t) {
        return vc::cfg_epsilon(tape, ps, cfg, z, t, c2, c2, 0.3);
    });
    auto same_b = vc::ddim_sample_from(ns, z_T, 10, [&](const Tensor<float>& z, int t) {
        return vc::cfg_epsilon(tape, ps, cfg, z, t, c2, c2, 7.5);
    });
    for (int64_t i = 0; i < z_T.numel(); i++) {
        CHECK(same_a.at(i) == same_b.at(i));
        CHECK(same_a.at(i) == p2.at(i));
    }
}
