#ifndef VC_OPTIM_HPP
#define VC_OPTIM_HPP

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vc/checkpoint.hpp"
#include "vc/tensor.hpp"

namespace vc {

// Bias-corrected adaptive moments with decoupled weight decay. Moments are
// kept in double regardless of the parameter precision so that a resumed
// run replays the same arithmetic as the uninterrupted one. Frozen
// parameters (requires_grad off) are skipped and get no moment slots until
// they thaw.
template <class T>
struct AdamW {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    int64_t steps_taken = 0;
    int64_t steps_rejected = 0;

    std::map<std::string, std::vector<double>> m, v;

    // One update over every trainable parameter. A non-finite gradient
    // anywhere rejects the whole step: parameters, moments and the counter
    // stay untouched and the caller is expected to log the event.
    bool step(ParamStore<T>& ps) {
        for (auto& [name, p] : ps.items) {
            if (!p.requires_grad()) continue;
            const T* g = p.grad();
            for (int64_t i = 0; i < p.numel(); i++)
                if (!std::isfinite((double)g[i])) {
                    steps_rejected++;
                    return false;
                }
        }
        steps_taken++;
        const double bc1 = 1.0 - std::pow(beta1, (double)steps_taken);
        const double bc2 = 1.0 - std::pow(beta2, (double)steps_taken);
        for (auto& [name, p] : ps.items) {
            if (!p.requires_grad()) continue;
            auto& pm = m[name];
            auto& pv = v[name];
            if ((int64_t)pm.size() != p.numel()) pm.assign(p.numel(), 0.0);
            if ((int64_t)pv.size() != p.numel()) pv.assign(p.numel(), 0.0);
            const T* g = p.grad();
            T* w = p.data();
            for (int64_t i = 0; i < p.numel(); i++) {
                const double gi = (double)g[i];
                pm[i] = beta1 * pm[i] + (1.0 - beta1) * gi;
                pv[i] = beta2 * pv[i] + (1.0 - beta2) * gi * gi;
                const double mhat = pm[i] / bc1;
                const double vhat = pv[i] / bc2;
                double wi = (double)w[i];
                wi -= lr * weight_decay * wi;
                wi -= lr * mhat / (std::sqrt(vhat) + eps);
                w[i] = (T)wi;
            }
        }
        return true;
    }
};

template <class T>
void append_optimizer(std::vector<ArchiveEntry>& out, const AdamW<T>& opt) {
    auto scalar = [&](const std::string& name, double value) {
        out.push_back(to_entry(name, Tensor<double>::scalar(value)));
    };
    scalar("opt/steps_taken", (double)opt.steps_taken);
    scalar("opt/steps_rejected", (double)opt.steps_rejected);
    for (const auto& [name, mo] : opt.m)
        out.push_back(to_entry("opt/m/" + name, Tensor<double>::from_data({(int)mo.size()}, mo)));
    for (const auto& [name, mo] : opt.v)
        out.push_back(to_entry("opt/v/" + name, Tensor<double>::from_data({(int)mo.size()}, mo)));
}

template <class T>
void load_optimizer(const std::vector<ArchiveEntry>& entries, AdamW<T>& opt) {
    opt.m.clear();
    opt.v.clear();
    bool saw_counter = false;
    for (const auto& e : entries) {
        if (e.name == "opt/steps_taken") {
            opt.steps_taken = (int64_t)from_entry<double>(e).at(0);
            saw_counter = true;
        } else if (e.name == "opt/steps_rejected") {
            opt.steps_rejected = (int64_t)from_entry<double>(e).at(0);
        } else if (e.name.rfind("opt/m/", 0) == 0) {
            opt.m[e.name.substr(6)] = from_entry<double>(e).vec();
        } else if (e.name.rfind("opt/v/", 0) == 0) {
            opt.v[e.name.substr(6)] = from_entry<double>(e).vec();
        }
    }
    if (!saw_counter) throw std::runtime_error("checkpoint: missing entry opt/steps_taken");
}

} // namespace vc

#endif
