#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "safeset/mdp.hpp"
#include "safeset/metrics.hpp"

namespace safeset {

struct DpOptions {
    double tol = 1e-10;
    long max_sweeps = 1'000'000;
};

/// Converged value table (the x = 1 slice) with the final sweep residual so
/// callers can assert convergence.
struct ValueTable {
    std::vector<double> values;
    double residual = 0.0;
    long sweeps = 0;
};

/// Expected discounted number of steps until the target or a terminal state
/// is first reached.
struct HittingTimeTable {
    std::vector<double> times;
    double residual = 0.0;
    long sweeps = 0;
};

namespace detail {

/// Policy-mixed sparse transition rows, one per state.
inline std::vector<std::vector<std::pair<int, double>>> mixed_rows(const FiniteMdp& mdp,
                                                                   const StochasticPolicy& policy) {
    std::vector<std::vector<std::pair<int, double>>> rows(mdp.num_states());
    std::vector<double> dense(mdp.num_states(), 0.0);
    std::vector<int> touched;
    for (int s = 0; s < mdp.num_states(); ++s) {
        touched.clear();
        for (int a = 0; a < mdp.num_actions(); ++a) {
            const double pa = policy.prob(s, a);
            if (pa == 0.0) continue;
            for (const auto& [t, p] : mdp.row(s, a)) {
                if (dense[t] == 0.0) touched.push_back(t);
                dense[t] += pa * p;
            }
        }
        std::sort(touched.begin(), touched.end());
        auto& row = rows[s];
        row.reserve(touched.size());
        for (int t : touched) {
            row.emplace_back(t, dense[t]);
            dense[t] = 0.0;
        }
    }
    return rows;
}

}  // namespace detail

/// Minimal probability of unsafety V*(s, 1) by Jacobi value iteration:
/// V = 1 on the target set, 0 on terminals, else min_a gamma * E[V(s')].
inline ValueTable optimal_unsafety(const FiniteMdp& mdp, const DpOptions& opts = {}) {
    if (opts.tol <= 0.0) throw std::invalid_argument("optimal_unsafety: tol must be positive");
    mdp.validate();

    const int S = mdp.num_states();
    std::vector<double> v(S, 0.0), next(S, 0.0);
    for (int s = 0; s < S; ++s)
        if (mdp.target(s) && !mdp.terminal(s)) v[s] = 1.0;

    ValueTable out;
    for (out.sweeps = 0; out.sweeps < opts.max_sweeps; ++out.sweeps) {
        double residual = 0.0;
        for (int s = 0; s < S; ++s) {
            double value;
            if (mdp.terminal(s)) {
                value = 0.0;
            } else if (mdp.target(s)) {
                value = 1.0;
            } else {
                value = std::numeric_limits<double>::infinity();
                for (int a = 0; a < mdp.num_actions(); ++a) {
                    double ev = 0.0;
                    for (const auto& [t, p] : mdp.row(s, a)) ev += p * v[t];
                    value = std::min(value, mdp.gamma() * ev);
                }
            }
            next[s] = value;
            residual = std::max(residual, std::abs(value - v[s]));
        }
        v.swap(next);
        out.residual = residual;
        if (residual < opts.tol) {
            ++out.sweeps;
            break;
        }
    }
    out.values = std::move(v);
    return out;
}

/// Probability of unsafety of a fixed policy (policy evaluation).
inline ValueTable policy_unsafety(const FiniteMdp& mdp, const StochasticPolicy& policy,
                                  const DpOptions& opts = {}) {
    if (opts.tol <= 0.0) throw std::invalid_argument("policy_unsafety: tol must be positive");
    mdp.validate();
    policy.validate();

    const int S = mdp.num_states();
    const auto rows = detail::mixed_rows(mdp, policy);
    std::vector<double> v(S, 0.0), next(S, 0.0);
    for (int s = 0; s < S; ++s)
        if (mdp.target(s) && !mdp.terminal(s)) v[s] = 1.0;

    ValueTable out;
    for (out.sweeps = 0; out.sweeps < opts.max_sweeps; ++out.sweeps) {
        double residual = 0.0;
        for (int s = 0; s < S; ++s) {
            double value;
            if (mdp.terminal(s)) {
                value = 0.0;
            } else if (mdp.target(s)) {
                value = 1.0;
            } else {
                double ev = 0.0;
                for (const auto& [t, p] : rows[s]) ev += p * v[t];
                value = mdp.gamma() * ev;
            }
            next[s] = value;
            residual = std::max(residual, std::abs(value - v[s]));
        }
        v.swap(next);
        out.residual = residual;
        if (residual < opts.tol) {
            ++out.sweeps;
            break;
        }
    }
    out.values = std::move(v);
    return out;
}

/// First-hitting time of a fixed policy: T = 0 on the target set and on
/// terminals, else 1 + gamma * E[T(s')].
inline HittingTimeTable policy_hitting_time(const FiniteMdp& mdp, const StochasticPolicy& policy,
                                            const DpOptions& opts = {}) {
    if (opts.tol <= 0.0) throw std::invalid_argument("policy_hitting_time: tol must be positive");
    mdp.validate();
    policy.validate();

    const int S = mdp.num_states();
    const auto rows = detail::mixed_rows(mdp, policy);
    std::vector<double> t(S, 0.0), next(S, 0.0);

    HittingTimeTable out;
    for (out.sweeps = 0; out.sweeps < opts.max_sweeps; ++out.sweeps) {
        double residual = 0.0;
        for (int s = 0; s < S; ++s) {
            double value;
            if (mdp.terminal(s) || mdp.target(s)) {
                value = 0.0;
            } else {
                double ev = 0.0;
                for (const auto& [tt, p] : rows[s]) ev += p * t[tt];
                value = 1.0 + mdp.gamma() * ev;
            }
            next[s] = value;
            residual = std::max(residual, std::abs(value - t[s]));
        }
        t.swap(next);
        out.residual = residual;
        if (residual < opts.tol) {
            ++out.sweeps;
            break;
        }
    }
    out.times = std::move(t);
    return out;
}

/// S(alpha) = { s : V(s) <= alpha }; ties at the threshold are included.
inline SafeSetEstimate safe_set(const ValueTable& values, double alpha,
                                SafeSetSource source = SafeSetSource::Oracle) {
    SafeSetEstimate est;
    est.alpha = alpha;
    est.source = source;
    est.member.resize(values.values.size(), 0);
    for (std::size_t i = 0; i < values.values.size(); ++i)
        est.member[i] = values.values[i] <= alpha ? 1 : 0;
    return est;
}

/// Exact state-action table for the unsafety probability induced by a state
/// value table: 1 on the target set, 0 on terminals, else gamma * E[V(s')|a].
inline std::vector<double> q_from_values(const FiniteMdp& mdp, std::span<const double> values) {
    if (static_cast<int>(values.size()) != mdp.num_states())
        throw std::invalid_argument("q_from_values: size mismatch");
    std::vector<double> q(static_cast<std::size_t>(mdp.num_states()) * mdp.num_actions(), 0.0);
    for (int s = 0; s < mdp.num_states(); ++s) {
        for (int a = 0; a < mdp.num_actions(); ++a) {
            double& cell = q[static_cast<std::size_t>(s) * mdp.num_actions() + a];
            if (mdp.terminal(s)) {
                cell = 0.0;
            } else if (mdp.target(s)) {
                cell = 1.0;
            } else {
                double ev = 0.0;
                for (const auto& [t, p] : mdp.row(s, a)) ev += p * values[t];
                cell = mdp.gamma() * ev;
            }
        }
    }
    return q;
}

/// Exact state-action hitting-time table induced by a state hitting-time
/// table: 0 on the target set and terminals, else 1 + gamma * E[T(s')|a].
inline std::vector<double> q_hitting_from_times(const FiniteMdp& mdp,
                                                std::span<const double> times) {
    if (static_cast<int>(times.size()) != mdp.num_states())
        throw std::invalid_argument("q_hitting_from_times: size mismatch");
    std::vector<double> q(static_cast<std::size_t>(mdp.num_states()) * mdp.num_actions(), 0.0);
    for (int s = 0; s < mdp.num_states(); ++s) {
        for (int a = 0; a < mdp.num_actions(); ++a) {
            double& cell = q[static_cast<std::size_t>(s) * mdp.num_actions() + a];
            if (mdp.terminal(s) || mdp.target(s)) {
                cell = 0.0;
            } else {
                double ev = 0.0;
                for (const auto& [t, p] : mdp.row(s, a)) ev += p * times[t];
                cell = 1.0 + mdp.gamma() * ev;
            }
        }
    }
    return q;
}

}  // namespace safeset
