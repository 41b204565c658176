#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "safeset/envs.hpp"
#include "safeset/metrics.hpp"
#include "safeset/nn.hpp"
#include "safeset/replay.hpp"
#include "safeset/rng.hpp"

namespace safeset {

enum class EpsilonAgg { Min, Mean };

struct DeepConfig {
    Algo algo = Algo::Ess;
    double alpha = 0.2;
    long total_steps = 200000;
    long warmup_steps = 20000;  // critics-only prefix
    int batch = 128;
    long replay_capacity = 1'000'000;
    double unsafe_fraction = 0.2;
    double soft_tau = 5e-3;
    int hidden1 = 400;
    int hidden2 = 300;
    double lr_critic = 1e-4;
    double lr_actor = 1e-5;
    double lr_multiplier = 1e-6;
    long eval_every = 5000;  // gradient steps between metric rows
    long min_replay = 1000;
    int epsilon_ring_capacity = 100;
    EpsilonAgg epsilon_agg = EpsilonAgg::Min;
    double lambda_init = 1.0;  // initial multiplier value exp(log-head bias)
    std::uint64_t seed = 0;
};

/// Actors, critics (double Q_V plus the hitting-time critic), their target
/// copies, the log-multiplier heads and the auxiliary-cost memory. The
/// hitting-time critic predicts (1 - gamma) * Q_T in [0, 1]; hitting_scale()
/// converts back.
struct AgentBundle {
    Algo algo = Algo::Ess;
    int state_dim = 0;
    int action_dim = 0;
    double gamma = 1.0;

    Mlp ss_actor, ss_actor_target, expl_actor;
    Mlp critic_v1, critic_v2, critic_t;
    Mlp critic_v1_target, critic_v2_target, critic_t_target;
    Mlp mult_s, mult_e;

    Adam opt_ss_actor, opt_expl_actor, opt_v1, opt_v2, opt_t, opt_mult_s, opt_mult_e;

    std::deque<double> epsilon_ring;
    int epsilon_ring_capacity = 100;
    EpsilonAgg epsilon_agg = EpsilonAgg::Min;
    double epsilon = 0.0;

    double hitting_scale() const { return 1.0 / (1.0 - gamma); }
};

inline AgentBundle make_agent(int state_dim, int action_dim, double gamma, const DeepConfig& cfg,
                              Rng& rng) {
    if (gamma <= 0.0 || gamma >= 1.0)
        throw std::invalid_argument("make_agent: gamma must lie in (0, 1)");
    AgentBundle b;
    b.algo = cfg.algo;
    b.state_dim = state_dim;
    b.action_dim = action_dim;
    b.gamma = gamma;
    b.epsilon_ring_capacity = cfg.epsilon_ring_capacity;
    b.epsilon_agg = cfg.epsilon_agg;

    const std::vector<int> actor_sizes = {state_dim, cfg.hidden1, cfg.hidden2, action_dim};
    const std::vector<int> critic_sizes = {state_dim + action_dim, cfg.hidden1, cfg.hidden2, 1};
    const std::vector<int> mult_sizes = {state_dim, cfg.hidden1, cfg.hidden2, 1};

    b.ss_actor = Mlp(actor_sizes, Head::Tanh);
    b.ss_actor.init_uniform(rng);
    b.expl_actor = Mlp(actor_sizes, Head::Tanh);
    b.expl_actor.init_uniform(rng);

    // Q_V starts at exactly 1 everywhere: every layer's bias is set to 1 and
    // the final weights to 0, which keeps the clamped head on its inclusive
    // boundary where the gradient still flows (a random final layer can land
    // the whole input distribution past the clamp and never recover)
    b.critic_v1 = Mlp(critic_sizes, Head::Clamp01);
    b.critic_v1.init_uniform(rng, 1.0, 0.0);
    b.critic_v2 = Mlp(critic_sizes, Head::Clamp01);
    b.critic_v2.init_uniform(rng, 1.0, 0.0);
    b.critic_t = Mlp(critic_sizes, Head::Clamp01);
    b.critic_t.init_uniform(rng, 0.0, 0.0);

    const double log_lambda = std::clamp(std::log(cfg.lambda_init), -10.0, 6.0);
    b.mult_s = Mlp(mult_sizes, Head::LogClamp);
    b.mult_s.init_uniform(rng, 0.0, 0.0);
    b.mult_e = Mlp(mult_sizes, Head::LogClamp);
    b.mult_e.init_uniform(rng, 0.0, 0.0);
    // only the top bias carries the initial multiplier level
    b.mult_s.params().back() = log_lambda;
    b.mult_e.params().back() = log_lambda;

    b.ss_actor_target = b.ss_actor;
    b.critic_v1_target = b.critic_v1;
    b.critic_v2_target = b.critic_v2;
    b.critic_t_target = b.critic_t;

    b.opt_ss_actor = Adam(b.ss_actor.param_count(), cfg.lr_actor);
    b.opt_expl_actor = Adam(b.expl_actor.param_count(), cfg.lr_actor);
    b.opt_v1 = Adam(b.critic_v1.param_count(), cfg.lr_critic);
    b.opt_v2 = Adam(b.critic_v2.param_count(), cfg.lr_critic);
    b.opt_t = Adam(b.critic_t.param_count(), cfg.lr_critic);
    b.opt_mult_s = Adam(b.mult_s.param_count(), cfg.lr_multiplier);
    b.opt_mult_e = Adam(b.mult_e.param_count(), cfg.lr_multiplier);
    return b;
}

namespace nndetail {

inline std::vector<double> concat_sa(std::span<const double> s, std::span<const double> a, int n,
                                     int ds, int da) {
    std::vector<double> x(static_cast<std::size_t>(n) * (ds + da));
    for (int i = 0; i < n; ++i) {
        std::copy(s.begin() + static_cast<std::size_t>(i) * ds,
                  s.begin() + static_cast<std::size_t>(i + 1) * ds,
                  x.begin() + static_cast<std::size_t>(i) * (ds + da));
        std::copy(a.begin() + static_cast<std::size_t>(i) * da,
                  a.begin() + static_cast<std::size_t>(i + 1) * da,
                  x.begin() + static_cast<std::size_t>(i) * (ds + da) + ds);
    }
    return x;
}

inline std::vector<double> net_forward(const Mlp& net, std::span<const double> x, int n) {
    MlpCache cache;
    net.forward(x, n, cache);
    const auto out = net.output(cache);
    return {out.begin(), out.end()};
}

}  // namespace nndetail

/// Mean squared error of net(x) against targets, with the parameter gradient.
inline double mse_gradient(const Mlp& net, std::span<const double> x, int n,
                           std::span<const double> targets, std::vector<double>& grad) {
    if (targets.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("mse_gradient: target size mismatch");
    MlpCache cache;
    net.forward(x, n, cache);
    const auto out = net.output(cache);
    grad.assign(net.param_count(), 0.0);
    std::vector<double> dy(n);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double r = out[i] - targets[i];
        loss += r * r;
        dy[i] = 2.0 * r / n;
    }
    net.backward(cache, dy, grad);
    return loss / n;
}

/// Deterministic-policy-gradient surface shared by both actors:
///   F(theta) = mean_i [ cv_i * Q_v(s_i, a_theta(s_i)) + ct_i * H(s_i, a_theta(s_i)) ]
/// with frozen critics; H is the normalized hitting-time critic and may be
/// skipped by passing empty ct. Returns F and fills the actor gradient.
inline double actor_objective_gradient(const Mlp& actor, const Mlp& critic_v, const Mlp& critic_h,
                                       std::span<const double> states, int n,
                                       std::span<const double> cv, std::span<const double> ct,
                                       std::vector<double>& grad) {
    const int ds = actor.input_dim();
    const int da = actor.output_dim();

    MlpCache actor_cache;
    actor.forward(states, n, actor_cache);
    const auto actions = actor.output(actor_cache);
    const auto x = nndetail::concat_sa(states, actions, n, ds, da);

    std::vector<double> action_grad(static_cast<std::size_t>(n) * da, 0.0);
    std::vector<double> scratch;
    double value = 0.0;

    const auto add_critic = [&](const Mlp& critic, std::span<const double> coef) {
        MlpCache cache;
        critic.forward(x, n, cache);
        const auto q = critic.output(cache);
        std::vector<double> dy(n);
        for (int i = 0; i < n; ++i) {
            value += coef[i] * q[i] / n;
            dy[i] = coef[i] / n;
        }
        scratch.assign(critic.param_count(), 0.0);
        std::vector<double> input_grad;
        critic.backward(cache, dy, scratch, &input_grad);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < da; ++k)
                action_grad[static_cast<std::size_t>(i) * da + k] +=
                    input_grad[static_cast<std::size_t>(i) * (ds + da) + ds + k];
    };

    add_critic(critic_v, cv);
    if (!ct.empty()) add_critic(critic_h, ct);

    grad.assign(actor.param_count(), 0.0);
    actor.backward(actor_cache, action_grad, grad);
    return value;
}

/// Multiplier surface F(omega) = mean_i residual_i * exp(y_omega(s_i)).
inline double multiplier_objective_gradient(const Mlp& mult, std::span<const double> states, int n,
                                            std::span<const double> residuals,
                                            std::vector<double>& grad) {
    MlpCache cache;
    mult.forward(states, n, cache);
    const auto y = mult.output(cache);
    std::vector<double> dy(n);
    double value = 0.0;
    for (int i = 0; i < n; ++i) {
        const double lambda = std::exp(y[i]);
        value += residuals[i] * lambda / n;
        dy[i] = residuals[i] * lambda / n;
    }
    grad.assign(mult.param_count(), 0.0);
    mult.backward(cache, dy, grad);
    return value;
}

/// Regression targets for the critics:
///   y_V = 1_G(s) + 1_{G^c}(s) * gamma * min_j Q'_vj(s', a'),  a' ~ target actor
///   y_T = 1_{G^c}(s) * (1 + gamma * Q'_T(s', a'))
/// with zero bootstrap at terminal successors. Returned in real units.
inline std::pair<std::vector<double>, std::vector<double>> critic_targets(const Batch& batch,
                                                                          const AgentBundle& b) {
    const int n = batch.n;
    const auto a2 = nndetail::net_forward(b.ss_actor_target, batch.s2, n);
    const auto x2 = nndetail::concat_sa(batch.s2, a2, n, b.state_dim, b.action_dim);
    const auto q1 = nndetail::net_forward(b.critic_v1_target, x2, n);
    const auto q2 = nndetail::net_forward(b.critic_v2_target, x2, n);
    const auto h2 = nndetail::net_forward(b.critic_t_target, x2, n);

    std::vector<double> y_v(n), y_t(n);
    for (int i = 0; i < n; ++i) {
        if (batch.target_hit[i]) {
            y_v[i] = 1.0;
            y_t[i] = 0.0;
        } else if (batch.next_terminal[i]) {
            y_v[i] = 0.0;
            y_t[i] = 1.0;
        } else {
            y_v[i] = b.gamma * std::min(q1[i], q2[i]);
            y_t[i] = 1.0 + b.gamma * b.hitting_scale() * h2[i];
        }
    }
    return {std::move(y_v), std::move(y_t)};
}

/// One regression step per critic; returns the mean squared residuals of the
/// Q_V pair and of the (normalized) hitting critic.
inline std::pair<double, double> update_critics(const Batch& batch, AgentBundle& b) {
    const auto [y_v, y_t] = critic_targets(batch, b);
    const auto x = nndetail::concat_sa(batch.s, batch.a, batch.n, b.state_dim, b.action_dim);

    std::vector<double> grad;
    double loss_v = 0.0;
    loss_v += mse_gradient(b.critic_v1, x, batch.n, y_v, grad);
    b.opt_v1.step(b.critic_v1.params(), grad);
    loss_v += mse_gradient(b.critic_v2, x, batch.n, y_v, grad);
    b.opt_v2.step(b.critic_v2.params(), grad);

    std::vector<double> y_h(batch.n);
    for (int i = 0; i < batch.n; ++i) y_h[i] = (1.0 - b.gamma) * y_t[i];
    const double loss_t = mse_gradient(b.critic_t, x, batch.n, y_h, grad);
    b.opt_t.step(b.critic_t.params(), grad);

    return {loss_v / 2.0, loss_t};
}

namespace nndetail {

inline std::vector<double> lambda_values(const Mlp& mult, std::span<const double> states, int n) {
    auto y = net_forward(mult, states, n);
    for (double& v : y) v = std::exp(v);
    return y;
}

/// Q_L = Q_v1 + epsilon * Q_T evaluated batch-wise for given actions.
inline std::vector<double> lyapunov_q(const AgentBundle& b, std::span<const double> states,
                                      std::span<const double> actions, int n) {
    const auto x = concat_sa(states, actions, n, b.state_dim, b.action_dim);
    const auto qv = net_forward(b.critic_v1, x, n);
    const auto h = net_forward(b.critic_t, x, n);
    std::vector<double> ql(n);
    for (int i = 0; i < n; ++i) ql[i] = qv[i] + b.epsilon * b.hitting_scale() * h[i];
    return ql;
}

}  // namespace nndetail

/// Descent step on Q_V + lambda * Q_L through the SS-actor's own action
/// (lambda is identically zero for the baseline and for ESS). Returns the
/// gradient norm.
inline double update_ss_actor(const Batch& batch, AgentBundle& b) {
    const int n = batch.n;
    std::vector<double> cv(n, 1.0), ct;
    if (b.algo == Algo::Lss) {
        const auto lambda = nndetail::lambda_values(b.mult_s, batch.s, n);
        ct.resize(n);
        for (int i = 0; i < n; ++i) {
            cv[i] = 1.0 + lambda[i];
            ct[i] = lambda[i] * b.epsilon * b.hitting_scale();
        }
    }
    std::vector<double> grad;
    actor_objective_gradient(b.ss_actor, b.critic_v1, b.critic_t, batch.s, n, cv, ct, grad);
    b.opt_ss_actor.step(b.ss_actor.params(), grad);
    double norm = 0.0;
    for (double g : grad) norm += g * g;
    return std::sqrt(norm);
}

/// Ascent step on the state-dependent multiplier of the SS-actor:
/// residual_i = Q_L(s, a_new) - epsilon - Q_L(s, a_old). Returns the mean
/// multiplier value.
inline double update_ss_multiplier(const Batch& batch, AgentBundle& b,
                                   std::span<const double> a_old) {
    const int n = batch.n;
    const auto a_new = nndetail::net_forward(b.ss_actor, batch.s, n);
    const auto ql_new = nndetail::lyapunov_q(b, batch.s, a_new, n);
    const auto ql_old = nndetail::lyapunov_q(b, batch.s, a_old, n);
    std::vector<double> residual(n);
    for (int i = 0; i < n; ++i) residual[i] = ql_new[i] - b.epsilon - ql_old[i];

    std::vector<double> grad;
    multiplier_objective_gradient(b.mult_s, batch.s, n, residual, grad);
    for (double& g : grad) g = -g;  // ascent
    b.opt_mult_s.step(b.mult_s.params(), grad);

    const auto lambda = nndetail::lambda_values(b.mult_s, batch.s, n);
    double mean = 0.0;
    for (double l : lambda) mean += l / n;
    return mean;
}

/// Exploratory actor/multiplier updates: ascent on Q_V - lambda_e * Q_L for
/// the actor, then the multiplier residual Q_L(s, a_exp) - epsilon -
/// Q_L(s, a_ss). Returns the actor and multiplier gradient norms.
inline std::pair<double, double> update_exploratory(const Batch& batch, AgentBundle& b) {
    const int n = batch.n;
    const auto lambda = nndetail::lambda_values(b.mult_e, batch.s, n);
    std::vector<double> cv(n), ct(n);
    for (int i = 0; i < n; ++i) {
        cv[i] = 1.0 - lambda[i];
        ct[i] = -lambda[i] * b.epsilon * b.hitting_scale();
    }
    std::vector<double> grad;
    actor_objective_gradient(b.expl_actor, b.critic_v1, b.critic_t, batch.s, n, cv, ct, grad);
    for (double& g : grad) g = -g;  // ascent
    b.opt_expl_actor.step(b.expl_actor.params(), grad);
    double actor_norm = 0.0;
    for (double g : grad) actor_norm += g * g;

    const auto a_exp = nndetail::net_forward(b.expl_actor, batch.s, n);
    const auto a_ss = nndetail::net_forward(b.ss_actor, batch.s, n);
    const auto ql_exp = nndetail::lyapunov_q(b, batch.s, a_exp, n);
    const auto ql_ss = nndetail::lyapunov_q(b, batch.s, a_ss, n);
    std::vector<double> residual(n);
    for (int i = 0; i < n; ++i) residual[i] = ql_exp[i] - b.epsilon - ql_ss[i];
    multiplier_objective_gradient(b.mult_e, batch.s, n, residual, grad);
    for (double& g : grad) g = -g;
    b.opt_mult_e.step(b.mult_e.params(), grad);
    double mult_norm = 0.0;
    for (double g : grad) mult_norm += g * g;

    return {std::sqrt(actor_norm), std::sqrt(mult_norm)};
}

/// End-of-episode auxiliary-cost bookkeeping: the largest positive margin
/// alpha - V_hat over the trajectory's states (0 if no state clears alpha)
/// enters a 100-deep ring; epsilon = (1 - gamma) * aggregate(ring).
inline double estimate_epsilon(AgentBundle& b, std::span<const double> trajectory_states,
                               double alpha) {
    const int m = static_cast<int>(trajectory_states.size()) / b.state_dim;
    double margin = 0.0;
    if (m > 0) {
        const auto a = nndetail::net_forward(b.ss_actor, trajectory_states, m);
        const auto x = nndetail::concat_sa(trajectory_states, a, m, b.state_dim, b.action_dim);
        const auto q1 = nndetail::net_forward(b.critic_v1, x, m);
        const auto q2 = nndetail::net_forward(b.critic_v2, x, m);
        for (int i = 0; i < m; ++i) {
            const double v = std::min(q1[i], q2[i]);
            if (v <= alpha) margin = std::max(margin, alpha - v);
        }
    }
    if (static_cast<int>(b.epsilon_ring.size()) == b.epsilon_ring_capacity)
        b.epsilon_ring.pop_front();
    b.epsilon_ring.push_back(margin);

    double agg;
    if (b.epsilon_agg == EpsilonAgg::Min) {
        agg = *std::min_element(b.epsilon_ring.begin(), b.epsilon_ring.end());
    } else {
        agg = 0.0;
        for (double v : b.epsilon_ring) agg += v;
        agg /= static_cast<double>(b.epsilon_ring.size());
    }
    b.epsilon = (1.0 - b.gamma) * agg;
    return b.epsilon;
}

/// Chooses between the two actors (ESS only), applies OU noise and clamps to
/// the normalized action box. The SS-actor probability starts at 1 and
/// decays linearly to 0 at the half-way point; whenever AES drops below
/// 1 - alpha the SS-actor acts as the backup policy regardless of the
/// schedule.
inline std::vector<double> select_action(const AgentBundle& b, std::span<const double> state,
                                         long step, long total_steps, double aes, double alpha,
                                         OuNoise& noise, Rng& rng) {
    bool use_ss = true;
    if (b.algo == Algo::Ess && aes >= 1.0 - alpha) {
        const double p_ss =
            std::max(0.0, 1.0 - 2.0 * static_cast<double>(step) / static_cast<double>(total_steps));
        use_ss = rng.uniform() < p_ss;
    }
    const Mlp& actor = use_ss ? b.ss_actor : b.expl_actor;
    auto a = nndetail::net_forward(actor, state, 1);
    const auto ou = noise.step(rng);
    for (int k = 0; k < b.action_dim; ++k) a[k] = std::clamp(a[k] + ou[k], -1.0, 1.0);
    return a;
}

struct DeepRunResult {
    ExperimentRecord record;
    AgentBundle bundle;
};

/// Estimated safe set on an evaluation grid: membership by
/// min_j Q_vj(s, pi_s(s)) <= alpha.
inline SafeSetEstimate deep_safe_set(const AgentBundle& b, std::span<const double> grid_states,
                                     int count, double alpha) {
    const auto a = nndetail::net_forward(b.ss_actor, grid_states, count);
    const auto x = nndetail::concat_sa(grid_states, a, count, b.state_dim, b.action_dim);
    const auto q1 = nndetail::net_forward(b.critic_v1, x, count);
    const auto q2 = nndetail::net_forward(b.critic_v2, x, count);
    SafeSetEstimate est;
    est.alpha = alpha;
    est.source = SafeSetSource::Deep;
    est.member.resize(count, 0);
    for (int i = 0; i < count; ++i) est.member[i] = std::min(q1[i], q2[i]) <= alpha ? 1 : 0;
    return est;
}

/// Values min_j Q_vj(s, pi_s(s)) on an evaluation grid.
inline std::vector<double> deep_values(const AgentBundle& b, std::span<const double> grid_states,
                                       int count) {
    const auto a = nndetail::net_forward(b.ss_actor, grid_states, count);
    const auto x = nndetail::concat_sa(grid_states, a, count, b.state_dim, b.action_dim);
    const auto q1 = nndetail::net_forward(b.critic_v1, x, count);
    const auto q2 = nndetail::net_forward(b.critic_v2, x, count);
    std::vector<double> v(count);
    for (int i = 0; i < count; ++i) v[i] = std::min(q1[i], q2[i]);
    return v;
}

/// Actor-critic training loop on the continuous integrator. Episodes reset
/// on target entry; critics warm up alone before the actors join; metrics
/// are evaluated on the discretization grid against the supplied truth set.
inline DeepRunResult run_actor_critic(const Integrator& env, const SafeSetEstimate& truth_grid,
                                      const DeepConfig& cfg) {
    const IntegratorConfig& ecfg = env.config();
    const IntegratorGrid grid{ecfg};
    if (static_cast<int>(truth_grid.member.size()) != grid.points())
        throw std::invalid_argument("run_actor_critic: truth set does not match the grid");

    Rng init_rng(cfg.seed, 0), env_rng(cfg.seed, 1), action_rng(cfg.seed, 2),
        replay_rng(cfg.seed, 3);

    DeepRunResult result;
    result.bundle = make_agent(2, 1, ecfg.gamma, cfg, init_rng);
    AgentBundle& b = result.bundle;
    result.record.algo = algo_name(cfg.algo);
    result.record.env = "integrator-cont";
    result.record.seed = cfg.seed;
    result.record.alpha = cfg.alpha;

    ReplayBuffer replay(2, 1, cfg.replay_capacity);
    const auto next_terminal = [&env](std::span<const double> s) {
        return env.in_terminal({s[0], s[1]});
    };

    std::vector<double> grid_states(static_cast<std::size_t>(grid.points()) * 2);
    for (int i = 0; i < grid.points(); ++i) {
        const auto gs = grid.state_of(i);
        grid_states[2 * i] = gs.pos;
        grid_states[2 * i + 1] = gs.vel;
    }

    OuNoise noise(1);
    EpisodeLog episodes;
    long env_steps = 0;
    long grad_steps = 0;

    const auto emit = [&]() {
        const auto est = deep_safe_set(b, grid_states, grid.points(), cfg.alpha);
        MetricsRow row;
        row.iteration = grad_steps;
        row.env_steps = env_steps;
        row.r_c = ratio_correct(est, truth_grid);
        row.r_fp = ratio_false_positive(est, truth_grid, est.member.size());
        row.aes = episodes.average();
        row.epsilon = b.epsilon;
        result.record.rows.push_back(row);
    };

    IntegratorState s = env.sample_start(env_rng);
    std::vector<double> traj = {s.pos, s.vel};
    long ep_steps = 0;

    const auto end_episode = [&](bool safe) {
        episodes.push(safe);
        estimate_epsilon(b, traj, cfg.alpha);
        s = env.sample_start(env_rng);
        traj = {s.pos, s.vel};
        ep_steps = 0;
        noise.reset();
    };

    emit();
    for (long step = 0; step < cfg.total_steps; ++step) {
        const double state_buf[2] = {s.pos, s.vel};
        const auto a_norm = select_action(b, {state_buf, 2}, step, cfg.total_steps,
                                          episodes.average(), cfg.alpha, noise, action_rng);
        const auto r = env.step(s, ecfg.action_bound * a_norm[0], env_rng);
        const double next_buf[2] = {r.next_state.pos, r.next_state.vel};
        replay.push({state_buf, 2}, a_norm, r.target_hit, {next_buf, 2});
        ++env_steps;
        ++ep_steps;

        if (r.target_hit) {
            end_episode(false);
        } else if (r.done) {
            end_episode(true);
        } else if (ep_steps >= ecfg.time_limit) {
            end_episode(true);
        } else {
            s = r.next_state;
            traj.push_back(s.pos);
            traj.push_back(s.vel);
        }

        if (replay.size() < std::max<long>(cfg.min_replay, cfg.batch)) continue;
        const auto batch = replay.sample(cfg.batch, cfg.unsafe_fraction, replay_rng, next_terminal);
        update_critics(batch, b);
        if (step >= cfg.warmup_steps) {
            std::vector<double> a_old;
            if (cfg.algo == Algo::Lss)
                a_old = nndetail::net_forward(b.ss_actor, batch.s, batch.n);
            update_ss_actor(batch, b);
            if (cfg.algo == Algo::Lss) update_ss_multiplier(batch, b, a_old);
            if (cfg.algo == Algo::Ess) update_exploratory(batch, b);
        }
        soft_update(b.ss_actor_target, b.ss_actor, cfg.soft_tau);
        soft_update(b.critic_v1_target, b.critic_v1, cfg.soft_tau);
        soft_update(b.critic_v2_target, b.critic_v2, cfg.soft_tau);
        soft_update(b.critic_t_target, b.critic_t, cfg.soft_tau);
        ++grad_steps;
        if (grad_steps % cfg.eval_every == 0) emit();
    }
    if (result.record.rows.empty() || result.record.rows.back().iteration != grad_steps) emit();
    return result;
}

// ---------------------------------------------------------------------------
// Weight serialization (magic RSPECNN1)
// ---------------------------------------------------------------------------

namespace nndetail {

inline void write_net(std::ofstream& out, const Mlp& net) {
    const auto& sizes = net.sizes();
    const std::uint32_t n = static_cast<std::uint32_t>(sizes.size());
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    for (int s : sizes) {
        const std::int32_t v = s;
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    const std::uint8_t head = static_cast<std::uint8_t>(net.head());
    out.write(reinterpret_cast<const char*>(&head), sizeof(head));
    const std::uint64_t count = net.param_count();
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    out.write(reinterpret_cast<const char*>(net.params().data()),
              static_cast<std::streamsize>(count * sizeof(double)));
}

inline Mlp read_net(std::ifstream& in) {
    std::uint32_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    std::vector<int> sizes(n);
    for (auto& s : sizes) {
        std::int32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        s = v;
    }
    std::uint8_t head = 0;
    in.read(reinterpret_cast<char*>(&head), sizeof(head));
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    Mlp net(sizes, static_cast<Head>(head));
    if (net.param_count() != count) throw std::runtime_error("read_net: corrupt weight file");
    in.read(reinterpret_cast<char*>(net.params().data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    return net;
}

}  // namespace nndetail

inline void save_weights(const AgentBundle& b, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_weights: cannot open " + path);
    out.write("RSPECNN1", 8);
    const std::uint8_t algo = static_cast<std::uint8_t>(b.algo);
    out.write(reinterpret_cast<const char*>(&algo), sizeof(algo));
    const std::int32_t dims[2] = {b.state_dim, b.action_dim};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    out.write(reinterpret_cast<const char*>(&b.gamma), sizeof(b.gamma));
    out.write(reinterpret_cast<const char*>(&b.epsilon), sizeof(b.epsilon));
    for (const Mlp* net :
         {&b.ss_actor, &b.ss_actor_target, &b.expl_actor, &b.critic_v1, &b.critic_v2, &b.critic_t,
          &b.critic_v1_target, &b.critic_v2_target, &b.critic_t_target, &b.mult_s, &b.mult_e})
        nndetail::write_net(out, *net);
}

inline AgentBundle load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_weights: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::string(magic, 8) != "RSPECNN1")
        throw std::runtime_error("load_weights: bad magic in " + path);
    AgentBundle b;
    std::uint8_t algo = 0;
    in.read(reinterpret_cast<char*>(&algo), sizeof(algo));
    b.algo = static_cast<Algo>(algo);
    std::int32_t dims[2];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    b.state_dim = dims[0];
    b.action_dim = dims[1];
    in.read(reinterpret_cast<char*>(&b.gamma), sizeof(b.gamma));
    in.read(reinterpret_cast<char*>(&b.epsilon), sizeof(b.epsilon));
    for (Mlp* net :
         {&b.ss_actor, &b.ss_actor_target, &b.expl_actor, &b.critic_v1, &b.critic_v2, &b.critic_t,
          &b.critic_v1_target, &b.critic_v2_target, &b.critic_t_target, &b.mult_s, &b.mult_e})
        *net = nndetail::read_net(in);
    if (!in) throw std::runtime_error("load_weights: truncated file " + path);
    return b;
}

}  // namespace safeset
