#ifndef VC_DIFFUSION_HPP
#define VC_DIFFUSION_HPP

#include <cmath>
#include <functional>

#include "vc/nn_ops.hpp"
#include "vc/rng.hpp"
#include "vc/tensor.hpp"

namespace vc {

// Linear-beta noise schedule. Index 0 is a sentinel with alpha_bar = 1 (the
// clean-data limit), real timesteps run 1..T.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // [T+1], beta[0] unused
    std::vector<double> alpha_bar;  // [T+1], alpha_bar[0] = 1

    static NoiseSchedule linear(int T = 1000, double beta_lo = 1e-4, double beta_hi = 2e-2) {
        if (T < 1) throw std::invalid_argument("schedule: T must be >= 1");
        if (!(beta_lo > 0.0 && beta_hi < 1.0 && beta_lo <= beta_hi))
            throw std::invalid_argument("schedule: need 0 < beta_lo <= beta_hi < 1");
        NoiseSchedule s;
        s.T = T;
        s.beta.assign(T + 1, 0.0);
        s.alpha_bar.assign(T + 1, 1.0);
        for (int t = 1; t <= T; t++) {
            s.beta[t] = T == 1 ? beta_hi : beta_lo + (beta_hi - beta_lo) * (t - 1) / (double)(T - 1);
            s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
        }
        return s;
    }

    double abar(int t) const {
        if (t < 0 || t > T) throw std::invalid_argument("schedule: t " + std::to_string(t) + " outside [0," +
                                                        std::to_string(T) + "]");
        return alpha_bar[t];
    }

    void check_step(int t) const {
        if (t < 1 || t > T)
            throw std::invalid_argument("schedule: t " + std::to_string(t) + " outside [1," + std::to_string(T) + "]");
    }
};

template <class T>
Tensor<T> gaussian_like(const std::vector<int>& shape, Rng& rng) {
    Tensor<T> t = Tensor<T>::zeros(shape);
    for (int64_t i = 0; i < t.numel(); i++) t.at(i) = (T)rng.gaussian();
    return t;
}

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
template <class T>
Tensor<T> q_sample(Tape<T>& tape, const NoiseSchedule& ns, const Tensor<T>& z0, int t, const Tensor<T>& eps) {
    ns.check_step(t);
    if (eps.shape() != z0.shape())
        throw std::invalid_argument("q_sample: noise " + shape_str(eps.shape()) + " does not match z0 " +
                                    shape_str(z0.shape()));
    double ab = ns.abar(t);
    return lincomb(tape, z0, (T)std::sqrt(ab), eps, (T)std::sqrt(1.0 - ab));
}

// Mean squared error between the injected and the predicted noise, averaged
// over batch entries and elements. eps_fn(tape, z_t, t, i) must return the
// model's prediction for batch entry i; per-entry t and eps are drawn here
// so every entry trains on its own corruption level.
template <class T, class EpsFn>
Tensor<T> vldm_loss(Tape<T>& tape, const NoiseSchedule& ns, const std::vector<Tensor<T>>& z0s, EpsFn&& eps_fn,
                    Rng& rng) {
    if (z0s.empty()) throw std::invalid_argument("loss: empty batch");
    Tensor<T> acc;
    for (size_t i = 0; i < z0s.size(); i++) {
        int t = (int)rng.uniform_int(1, ns.T);
        Tensor<T> eps = gaussian_like<T>(z0s[i].shape(), rng);
        Tensor<T> z_t = q_sample(tape, ns, z0s[i], t, eps);
        Tensor<T> pred = eps_fn(tape, z_t, t, (int)i);
        if (pred.shape() != eps.shape())
            throw std::invalid_argument("loss: prediction " + shape_str(pred.shape()) + " does not match noise " +
                                        shape_str(eps.shape()));
        Tensor<T> d = sub(tape, pred, eps);
        Tensor<T> term = mean_all(tape, mul(tape, d, d));
        acc = i == 0 ? term : add(tape, acc, term);
    }
    return scale(tape, acc, (T)(1.0 / (double)z0s.size()));
}

// Deterministic DDIM over the uniform subsequence {T, T - T/steps, ..., 0}
// starting from a caller-supplied state at t = T. Each update reconstructs
// z0 from the guided prediction and renoises to the previous grid point;
// the final point is the sentinel t = 0 where alpha_bar = 1, which leaves
// the reconstruction itself.
template <class T, class EpsHat>
Tensor<T> ddim_sample_from(const NoiseSchedule& ns, const Tensor<T>& z_init, int steps, EpsHat&& eps_hat) {
    Tensor<T> z = Tensor<T>::from_data(z_init.shape(), z_init.vec());  // updates run in place
    if (steps < 1 || steps > ns.T)
        throw std::invalid_argument("ddim: steps " + std::to_string(steps) + " outside [1," + std::to_string(ns.T) +
                                    "]");
    if (ns.T % steps != 0)
        throw std::invalid_argument("ddim: steps " + std::to_string(steps) + " does not divide T " +
                                    std::to_string(ns.T));
    const int stride = ns.T / steps;
    for (int t = ns.T; t > 0; t -= stride) {
        const int t_prev = t - stride;
        Tensor<T> e = eps_hat(z, t);
        if (e.shape() != z.shape())
            throw std::invalid_argument("ddim: prediction " + shape_str(e.shape()) + " does not match state " +
                                        shape_str(z.shape()));
        const double ab = ns.abar(t), ab_prev = ns.abar(t_prev);
        const T inv_sqrt_ab = (T)(1.0 / std::sqrt(ab));
        const T noise_in = (T)std::sqrt(1.0 - ab);
        const T sig_out = (T)std::sqrt(ab_prev);
        const T noise_out = (T)std::sqrt(1.0 - ab_prev);
        T* pz = z.data();
        const T* pe = e.data();
        for (int64_t i = 0; i < z.numel(); i++) {
            T z0_hat = (pz[i] - noise_in * pe[i]) * inv_sqrt_ab;
            pz[i] = sig_out * z0_hat + noise_out * pe[i];
        }
    }
    return z;
}

// Same walk with the initial state drawn fresh from the unit gaussian.
template <class T, class EpsHat>
Tensor<T> ddim_sample(const NoiseSchedule& ns, const std::vector<int>& shape, int steps, EpsHat&& eps_hat,
                      Rng& rng) {
    return ddim_sample_from(ns, gaussian_like<T>(shape, rng), steps, eps_hat);
}

} // namespace vc

#endif
