#pragma once

// Finite-difference gradient checking utilities. Central differences are a
// valid derivative oracle only away from the rectifier/clamp kinks, so the
// instance generators resample until every pre-activation in the composed
// network keeps a safe margin from the nearest kink.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "safeset/actor_critic.hpp"
#include "safeset/nn.hpp"

namespace testsupport {

inline std::vector<double> finite_difference(std::vector<double>& params,
                                             const std::function<double()>& f) {
    std::vector<double> grad(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(params[i]));
        const double saved = params[i];
        params[i] = saved + h;
        const double hi = f();
        params[i] = saved - h;
        const double lo = f();
        params[i] = saved;
        grad[i] = (hi - lo) / (2.0 * h);
    }
    return grad;
}

inline double relative_error(std::span<const double> a, std::span<const double> fd) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - fd[i]) * (a[i] - fd[i]);
        na += a[i] * a[i];
        nb += fd[i] * fd[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

/// Smallest distance of any pre-activation to a rectifier or clamp kink.
inline double kink_margin(const safeset::Mlp& net, const safeset::MlpCache& cache) {
    double margin = std::numeric_limits<double>::infinity();
    const int L = net.num_layers();
    for (int l = 0; l + 1 < L; ++l)
        for (double z : cache.pre[l]) margin = std::min(margin, std::abs(z));
    for (double z : cache.pre[L - 1]) {
        switch (net.head()) {
            case safeset::Head::Clamp01:
                margin = std::min({margin, std::abs(z), std::abs(1.0 - z)});
                break;
            case safeset::Head::LogClamp:
                margin = std::min({margin, std::abs(z + 10.0), std::abs(6.0 - z)});
                break;
            case safeset::Head::Tanh:
                break;
        }
    }
    return margin;
}

inline std::vector<double> random_batch(int n, int dim, safeset::Rng& rng, double scale = 1.0) {
    std::vector<double> x(static_cast<std::size_t>(n) * dim);
    for (auto& v : x) v = rng.uniform(-scale, scale);
    return x;
}

struct ActorCheckInstance {
    safeset::Mlp actor, qv, qh;
    int n = 0;
    std::vector<double> s, cv, ct;
};

/// Draws an actor-objective instance whose composed forward pass keeps every
/// pre-activation at least `margin` away from a kink.
inline ActorCheckInstance make_actor_instance(safeset::Rng& rng, double margin = 1e-4) {
    using namespace safeset;
    for (;;) {
        ActorCheckInstance inst;
        inst.actor = Mlp({2, 8, 8, 1}, Head::Tanh);
        inst.actor.init_uniform(rng, 0.0, 0.5);
        inst.qv = Mlp({3, 8, 8, 1}, Head::Clamp01);
        inst.qv.init_uniform(rng, 0.5, 0.05);
        inst.qh = Mlp({3, 8, 8, 1}, Head::Clamp01);
        inst.qh.init_uniform(rng, 0.5, 0.05);
        inst.n = 5;
        inst.s = random_batch(inst.n, 2, rng, 0.8);
        inst.cv.resize(inst.n);
        inst.ct.resize(inst.n);
        for (int i = 0; i < inst.n; ++i) {
            inst.cv[i] = rng.uniform(0.5, 2.0);
            inst.ct[i] = rng.uniform(-0.5, 0.5);
        }

        MlpCache ca, cv_cache, ch_cache;
        inst.actor.forward(inst.s, inst.n, ca);
        const auto x =
            nndetail::concat_sa(inst.s, inst.actor.output(ca), inst.n, 2, 1);
        inst.qv.forward(x, inst.n, cv_cache);
        inst.qh.forward(x, inst.n, ch_cache);
        const double m = std::min({kink_margin(inst.actor, ca), kink_margin(inst.qv, cv_cache),
                                   kink_margin(inst.qh, ch_cache)});
        if (m > margin) return inst;
    }
}

struct CriticCheckInstance {
    safeset::Mlp net;
    int n = 0;
    std::vector<double> x, y;
};

inline CriticCheckInstance make_critic_instance(safeset::Rng& rng, double margin = 1e-4) {
    using namespace safeset;
    for (;;) {
        CriticCheckInstance inst;
        inst.net = Mlp({3, 8, 8, 1}, Head::Clamp01);
        inst.net.init_uniform(rng, 0.5, 0.05);
        inst.n = 6;
        inst.x = random_batch(inst.n, 3, rng, 0.8);
        inst.y.resize(inst.n);
        for (auto& v : inst.y) v = rng.uniform();
        MlpCache c;
        inst.net.forward(inst.x, inst.n, c);
        if (kink_margin(inst.net, c) > margin) return inst;
    }
}

struct MultiplierCheckInstance {
    safeset::Mlp mult;
    int n = 0;
    std::vector<double> s, residual;
};

inline MultiplierCheckInstance make_multiplier_instance(safeset::Rng& rng, double margin = 1e-4) {
    using namespace safeset;
    for (;;) {
        MultiplierCheckInstance inst;
        inst.mult = Mlp({2, 8, 8, 1}, Head::LogClamp);
        inst.mult.init_uniform(rng, 0.0, 0.5);
        inst.n = 6;
        inst.s = random_batch(inst.n, 2, rng, 0.8);
        inst.residual.resize(inst.n);
        for (auto& r : inst.residual) r = rng.uniform(-1.0, 1.0);
        MlpCache c;
        inst.mult.forward(inst.s, inst.n, c);
        if (kink_margin(inst.mult, c) > margin) return inst;
    }
}

inline double actor_instance_value(const ActorCheckInstance& inst) {
    using namespace safeset;
    MlpCache ca, cq;
    inst.actor.forward(inst.s, inst.n, ca);
    const auto x = nndetail::concat_sa(inst.s, inst.actor.output(ca), inst.n, 2, 1);
    double value = 0.0;
    inst.qv.forward(x, inst.n, cq);
    for (int i = 0; i < inst.n; ++i) value += inst.cv[i] * inst.qv.output(cq)[i] / inst.n;
    inst.qh.forward(x, inst.n, cq);
    for (int i = 0; i < inst.n; ++i) value += inst.ct[i] * inst.qh.output(cq)[i] / inst.n;
    return value;
}

}  // namespace testsupport
