#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "safeset/envs.hpp"
#include "safeset/mdp.hpp"
#include "safeset/metrics.hpp"
#include "safeset/oracle.hpp"
#include "safeset/policy_lp.hpp"
#include "safeset/rng.hpp"

namespace safeset {

/// Tabular estimates of the unsafety probability Q_V and the first-hitting
/// time Q_T, plus per-pair visit counts for the learning-rate schedule.
struct QTables {
    int num_states = 0;
    int num_actions = 0;
    std::vector<double> q_v;
    std::vector<double> q_t;
    std::vector<std::uint64_t> visits;

    QTables() = default;
    QTables(int S, int A)
        : num_states(S),
          num_actions(A),
          q_v(static_cast<std::size_t>(S) * A, 0.0),
          q_t(static_cast<std::size_t>(S) * A, 0.0),
          visits(static_cast<std::size_t>(S) * A, 0) {}

    /// Blank-slate initialization: unsafety estimated near 1 everywhere
    /// (uniform in [0.99, 1]) and hitting times at 0.
    static QTables pessimistic(int S, int A, Rng& rng) {
        QTables t(S, A);
        for (auto& v : t.q_v) v = rng.uniform(0.99, 1.0);
        return t;
    }

    std::size_t index(int s, int a) const {
        return static_cast<std::size_t>(s) * num_actions + a;
    }
    double qv(int s, int a) const { return q_v[index(s, a)]; }
    double qt(int s, int a) const { return q_t[index(s, a)]; }

    double expected_qv(int s, const StochasticPolicy& pi) const {
        double acc = 0.0;
        for (int a = 0; a < num_actions; ++a) acc += pi.prob(s, a) * qv(s, a);
        return acc;
    }
    double expected_qt(int s, const StochasticPolicy& pi) const {
        double acc = 0.0;
        for (int a = 0; a < num_actions; ++a) acc += pi.prob(s, a) * qt(s, a);
        return acc;
    }
};

/// Q-value view of the Lyapunov function: Q_L = Q_V + epsilon * Q_T.
struct LyapunovQ {
    const QTables* tables = nullptr;
    double epsilon = 0.0;

    double operator()(int s, int a) const {
        return tables->qv(s, a) + epsilon * tables->qt(s, a);
    }
};

/// One temporal-difference update of both Q-tables. On a target hit the row
/// of the identified target state is pinned (Q_V = 1, Q_T = 0); otherwise the
/// bootstrap is the policy expectation at the successor, discounted by gamma,
/// and zero when the successor is terminal (whose rows are also pinned to 0).
inline void q_update(QTables& tables, const TransitionSample& tr, const StochasticPolicy& policy,
                     double learning_rate, double gamma) {
    if (learning_rate <= 0.0 || learning_rate > 1.0)
        throw std::invalid_argument("q_update: learning rate outside (0, 1]");
    ++tables.visits[tables.index(tr.state, tr.action)];

    if (tr.target_hit) {
        for (int a = 0; a < tables.num_actions; ++a) {
            tables.q_v[tables.index(tr.state, a)] = 1.0;
            tables.q_t[tables.index(tr.state, a)] = 0.0;
        }
        return;
    }
    if (tr.next_terminal) {
        for (int a = 0; a < tables.num_actions; ++a) {
            tables.q_v[tables.index(tr.next_state, a)] = 0.0;
            tables.q_t[tables.index(tr.next_state, a)] = 0.0;
        }
    }

    const double next_v = tr.next_terminal ? 0.0 : tables.expected_qv(tr.next_state, policy);
    const double next_t = tr.next_terminal ? 0.0 : tables.expected_qt(tr.next_state, policy);
    double& qv = tables.q_v[tables.index(tr.state, tr.action)];
    double& qt = tables.q_t[tables.index(tr.state, tr.action)];
    qv = (1.0 - learning_rate) * qv + learning_rate * gamma * next_v;
    qt = (1.0 - learning_rate) * qt + learning_rate * (1.0 + gamma * next_t);
}

/// Auxiliary cost epsilon = min over the estimated safe set of
/// (alpha - V_hat) / T_hat. States with a zero hitting-time estimate and a
/// positive numerator would contribute +inf and are skipped; an empty (or
/// fully skipped) set yields the conservative epsilon = 0.
inline double auxiliary_cost(const QTables& tables, const StochasticPolicy& ss_policy,
                             double alpha) {
    if (alpha <= 0.0 || alpha >= 1.0)
        throw std::invalid_argument("auxiliary_cost: alpha outside (0, 1)");
    double eps = std::numeric_limits<double>::infinity();
    for (int s = 0; s < tables.num_states; ++s) {
        const double v_hat = tables.expected_qv(s, ss_policy);
        if (v_hat > alpha) continue;  // outside S_0
        const double num = alpha - v_hat;
        if (num <= 0.0) {
            eps = 0.0;
            continue;
        }
        const double t_hat = tables.expected_qt(s, ss_policy);
        if (t_hat <= 0.0) continue;
        eps = std::min(eps, num / t_hat);
    }
    return std::isfinite(eps) ? eps : 0.0;
}

namespace detail {

inline StochasticPolicy improve_policy(const QTables& tables, double epsilon,
                                       const StochasticPolicy& current,
                                       std::span<const char> frozen, LpSense sense) {
    if (epsilon < 0.0) throw std::invalid_argument("improve_policy: epsilon must be >= 0");
    StochasticPolicy out(tables.num_states, tables.num_actions);
    const LyapunovQ ql{&tables, epsilon};
    PolicyLp lp;
    lp.sense = sense;
    lp.objective.resize(tables.num_actions);
    lp.constraint_coeffs.resize(tables.num_actions);
    for (int s = 0; s < tables.num_states; ++s) {
        if (!frozen.empty() && frozen[s]) {
            out.set_row(s, current.row(s));
            continue;
        }
        double budget = epsilon;
        for (int a = 0; a < tables.num_actions; ++a) {
            lp.objective[a] = tables.qv(s, a);
            lp.constraint_coeffs[a] = ql(s, a);
            budget += current.prob(s, a) * lp.constraint_coeffs[a];
        }
        lp.budget = budget;
        const auto sol = solve_policy_lp(lp);
        out.set_row(s, sol.probs);
    }
    return out;
}

}  // namespace detail

/// Safest member of the L-induced policy set: per state, minimize the
/// expected Q_V subject to the Lyapunov budget. States flagged frozen
/// (identified target/terminal) keep the current row.
inline StochasticPolicy improve_ss_policy(const QTables& tables, double epsilon,
                                          const StochasticPolicy& current,
                                          std::span<const char> frozen = {}) {
    return detail::improve_policy(tables, epsilon, current, frozen, LpSense::Minimize);
}

/// Most aggressive member of the same set: identical feasible region with a
/// maximizing objective.
inline StochasticPolicy improve_exploratory_policy(const QTables& tables, double epsilon,
                                                   const StochasticPolicy& current,
                                                   std::span<const char> frozen = {}) {
    return detail::improve_policy(tables, epsilon, current, frozen, LpSense::Maximize);
}

/// Unconstrained improvement used by the baseline: per-state argmin of Q_V,
/// ties broken toward the lowest action index.
inline StochasticPolicy greedy_policy(const QTables& tables, const StochasticPolicy& current,
                                      std::span<const char> frozen = {}) {
    StochasticPolicy out(tables.num_states, tables.num_actions);
    std::vector<double> row(tables.num_actions, 0.0);
    for (int s = 0; s < tables.num_states; ++s) {
        if (!frozen.empty() && frozen[s]) {
            out.set_row(s, current.row(s));
            continue;
        }
        int best = 0;
        for (int a = 1; a < tables.num_actions; ++a)
            if (tables.qv(s, a) < tables.qv(s, best)) best = a;
        std::fill(row.begin(), row.end(), 0.0);
        row[best] = 1.0;
        out.set_row(s, row);
    }
    return out;
}

/// Estimated safe set from the tables: { s : sum_a pi_s(a|s) Q_V(s,a) <= alpha }.
inline SafeSetEstimate estimated_safe_set(const QTables& tables, const StochasticPolicy& ss_policy,
                                          double alpha) {
    SafeSetEstimate est;
    est.alpha = alpha;
    est.source = SafeSetSource::Tabular;
    est.member.resize(tables.num_states, 0);
    for (int s = 0; s < tables.num_states; ++s)
        est.member[s] = tables.expected_qv(s, ss_policy) <= alpha ? 1 : 0;
    return est;
}

struct TabularConfig {
    Algo algo = Algo::Lss;
    double alpha = 0.2;
    int iterations = 50;
    long steps_per_iter = 100000;
    double explore_noise = 0.05;  // epsilon-greedy weight, annealed to 0 by the final third
    double lr_exponent = 0.7;     // tau = 1 / (1 + visits)^exponent
    std::uint64_t seed = 0;
};

/// Snapshot taken after each policy improvement.
struct IterationState {
    StochasticPolicy ss_policy;
    StochasticPolicy exploratory_policy;
    QTables tables;
    double epsilon = 0.0;
    int iteration = 0;
};

struct TabularRunResult {
    std::vector<IterationState> history;  // iteration 0 (initial) .. iterations
    ExperimentRecord record;
};

/// Epsilon-greedy weight in effect while collecting data for iteration k.
inline double explore_weight(double initial, int k, int iterations) {
    const int cutoff = std::max(1, (2 * iterations) / 3);
    if (k >= cutoff) return 0.0;
    return initial * (1.0 - static_cast<double>(k) / cutoff);
}

/// Shared driver for baseline / LSS / ESS tabular Q-learning. Behavior
/// follows the exploratory policy for ESS and the SS-policy otherwise, both
/// with annealed epsilon-greedy noise on top; bootstraps always use the
/// SS-policy. Each iteration alternates steps_per_iter environment steps with
/// one full-sweep policy improvement and emits one metrics row.
inline TabularRunResult run_tabular(MdpSimulator sim, const SafeSetEstimate& truth,
                                    const TabularConfig& cfg, const std::string& env_name) {
    const FiniteMdp& mdp = sim.mdp();
    const int S = mdp.num_states();
    const int A = mdp.num_actions();

    Rng rng(cfg.seed);
    QTables tables = QTables::pessimistic(S, A, rng);
    StochasticPolicy ss = StochasticPolicy::uniform(S, A);
    StochasticPolicy expl = ss;
    std::vector<char> frozen(S, 0);  // identified target/terminal states
    EpisodeLog episodes;
    double epsilon = 0.0;

    TabularRunResult result;
    result.record.algo = algo_name(cfg.algo);
    result.record.env = env_name;
    result.record.seed = cfg.seed;
    result.record.alpha = cfg.alpha;

    long env_steps = 0;
    const auto emit = [&](int iteration) {
        const auto est = estimated_safe_set(tables, ss, cfg.alpha);
        MetricsRow row;
        row.iteration = iteration;
        row.env_steps = env_steps;
        row.r_c = ratio_correct(est, truth);
        row.r_fp = ratio_false_positive(est, truth, est.member.size());
        row.aes = episodes.average();
        row.epsilon = epsilon;
        result.record.rows.push_back(row);
        result.history.push_back({ss, expl, tables, epsilon, iteration});
    };

    sim.reset(rng);
    emit(0);

    for (int k = 0; k < cfg.iterations; ++k) {
        const double noise = explore_weight(cfg.explore_noise, k, cfg.iterations);
        const StochasticPolicy& behavior = cfg.algo == Algo::Ess ? expl : ss;

        for (long step = 0; step < cfg.steps_per_iter; ++step) {
            const int s = sim.state();
            const int a = (noise > 0.0 && rng.uniform() < noise) ? rng.uniform_int(A)
                                                                 : behavior.sample(s, rng);
            const auto r = sim.step(a, rng);
            const double tau =
                1.0 / std::pow(1.0 + static_cast<double>(tables.visits[tables.index(s, a)]),
                               cfg.lr_exponent);
            q_update(tables, {s, a, r.target_hit, r.next_state, r.done}, ss, tau, mdp.gamma());
            ++env_steps;

            if (r.target_hit) {
                frozen[s] = 1;
                episodes.push(false);
                sim.reset(rng);
            } else if (r.done) {
                frozen[r.next_state] = 1;
                episodes.push(true);
                sim.reset(rng);
            } else if (sim.episode_steps() >= sim.time_limit()) {
                episodes.push(true);  // stayed clear of the target until the limit
                sim.reset(rng);
            }
        }

        if (cfg.algo == Algo::Baseline) {
            epsilon = 0.0;
            ss = greedy_policy(tables, ss, frozen);
        } else {
            epsilon = auxiliary_cost(tables, ss, cfg.alpha);
            StochasticPolicy next_ss = improve_ss_policy(tables, epsilon, ss, frozen);
            if (cfg.algo == Algo::Ess)
                expl = improve_exploratory_policy(tables, epsilon, ss, frozen);
            ss = std::move(next_ss);
        }
        if (cfg.algo != Algo::Ess) expl = ss;
        emit(k + 1);
    }
    return result;
}

inline TabularRunResult run_lss(MdpSimulator sim, const SafeSetEstimate& truth, TabularConfig cfg,
                                const std::string& env_name) {
    cfg.algo = Algo::Lss;
    return run_tabular(std::move(sim), truth, cfg, env_name);
}

inline TabularRunResult run_ess(MdpSimulator sim, const SafeSetEstimate& truth, TabularConfig cfg,
                                const std::string& env_name) {
    cfg.algo = Algo::Ess;
    return run_tabular(std::move(sim), truth, cfg, env_name);
}

inline TabularRunResult run_baseline(MdpSimulator sim, const SafeSetEstimate& truth,
                                     TabularConfig cfg, const std::string& env_name) {
    cfg.algo = Algo::Baseline;
    return run_tabular(std::move(sim), truth, cfg, env_name);
}

}  // namespace safeset
