#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "safeset/mdp.hpp"
#include "safeset/rng.hpp"

namespace safeset {

/// Randomized double integrator. The target set is the exterior of the
/// position/velocity box; the terminal set is a small box at the origin. With
/// probability perturb_prob the commanded acceleration u is replaced by
/// 0.5 * u / |u| (left unchanged at u = 0, where that expression is
/// undefined).
struct IntegratorConfig {
    double dt = 0.1;
    double action_bound = 0.5;
    double target_pos = 1.0;  // |position| beyond this is unsafe
    double target_vel = 0.5;
    double terminal_pos = 0.2;
    double terminal_vel = 3.75e-3;
    double perturb_prob = 0.5;
    int grid = 41;  // points per axis of the discretization
    double grid_pos = 1.2;
    double grid_vel = 0.6;
    int action_levels = 3;
    int time_limit = 1000;
    double gamma = 1.0 - 1e-4;
    // episode start box (uniform over grid points / the continuous box)
    double start_pos = 0.7;
    double start_vel = 0.35;
};

struct IntegratorState {
    double pos = 0.0;
    double vel = 0.0;
};

template <typename State>
struct StepResultT {
    State next_state{};
    bool target_hit = false;  // 1_G of the pre-step state
    bool done = false;        // 1_term of the next state
};

using IntegratorStepResult = StepResultT<IntegratorState>;

class Integrator {
public:
    explicit Integrator(const IntegratorConfig& cfg) : cfg_(cfg) {
        if (cfg.action_bound <= 0.0) throw std::invalid_argument("Integrator: action_bound <= 0");
        if (cfg.perturb_prob < 0.0 || cfg.perturb_prob > 1.0)
            throw std::invalid_argument("Integrator: perturb_prob outside [0,1]");
        if (cfg.terminal_pos > cfg.target_pos || cfg.terminal_vel > cfg.target_vel)
            throw std::invalid_argument("Integrator: terminal box must sit inside the safe box");
    }

    const IntegratorConfig& config() const { return cfg_; }

    bool in_target(const IntegratorState& s) const {
        return std::abs(s.pos) > cfg_.target_pos || std::abs(s.vel) > cfg_.target_vel;
    }

    bool in_terminal(const IntegratorState& s) const {
        return std::abs(s.pos) <= cfg_.terminal_pos && std::abs(s.vel) <= cfg_.terminal_vel;
    }

    /// The n-th of the equally spaced action levels spanning the admissible
    /// range, e.g. {-0.5, 0, 0.5} for three levels.
    double action_level(int n) const {
        return 2.0 * cfg_.action_bound * n / (cfg_.action_levels - 1) - cfg_.action_bound;
    }

    /// Euler step with the random acceleration perturbation.
    IntegratorStepResult step(const IntegratorState& s, double action, Rng& rng) const {
        if (std::abs(action) > cfg_.action_bound + 1e-12)
            throw std::invalid_argument("Integrator::step: action out of range");
        const bool perturb = rng.uniform() < cfg_.perturb_prob;
        return step_branch(s, action, perturb);
    }

    /// Deterministic branch of the dynamics; used by the discretizer to
    /// enumerate both perturbation outcomes exactly.
    IntegratorStepResult step_branch(const IntegratorState& s, double action, bool perturb) const {
        double applied = action;
        if (perturb && action != 0.0) applied = cfg_.action_bound * (action > 0.0 ? 1.0 : -1.0);
        IntegratorStepResult r;
        r.target_hit = in_target(s);
        r.next_state.pos = s.pos + cfg_.dt * s.vel;
        r.next_state.vel = s.vel + cfg_.dt * applied;
        r.done = in_terminal(r.next_state) && !r.target_hit;
        return r;
    }

    IntegratorState sample_start(Rng& rng) const {
        IntegratorState s;
        do {
            s.pos = rng.uniform(-cfg_.start_pos, cfg_.start_pos);
            s.vel = rng.uniform(-cfg_.start_vel, cfg_.start_vel);
        } while (in_terminal(s));
        return s;
    }

private:
    IntegratorConfig cfg_;
};

/// Grid geometry of the discretized integrator. State indices enumerate the
/// grid row-major (position major); one extra aggregated target state at the
/// end absorbs all off-grid mass.
struct IntegratorGrid {
    IntegratorConfig cfg;

    int points() const { return cfg.grid * cfg.grid; }
    int num_states() const { return points() + 1; }
    int super_state() const { return points(); }

    double pos_of(int i) const { return -cfg.grid_pos + 2.0 * cfg.grid_pos * i / (cfg.grid - 1); }
    double vel_of(int j) const { return -cfg.grid_vel + 2.0 * cfg.grid_vel * j / (cfg.grid - 1); }

    IntegratorState state_of(int index) const {
        return {pos_of(index / cfg.grid), vel_of(index % cfg.grid)};
    }

    /// Nearest grid index, or the aggregated target state if off-grid.
    int snap(const IntegratorState& s) const {
        const double step_p = 2.0 * cfg.grid_pos / (cfg.grid - 1);
        const double step_v = 2.0 * cfg.grid_vel / (cfg.grid - 1);
        const long i = std::lround((s.pos + cfg.grid_pos) / step_p);
        const long j = std::lround((s.vel + cfg.grid_vel) / step_v);
        if (i < 0 || i >= cfg.grid || j < 0 || j >= cfg.grid) return super_state();
        return static_cast<int>(i) * cfg.grid + static_cast<int>(j);
    }
};

/// Discretizes the randomized integrator onto the grid by exact enumeration
/// of the two perturbation branches with nearest-cell snapping. Terminal grid
/// cells are absorbing; the aggregated off-grid state is an absorbing target
/// state.
inline FiniteMdp discretize_integrator(const IntegratorConfig& cfg) {
    if (cfg.grid < 3) throw std::invalid_argument("discretize_integrator: grid must be >= 3");
    const Integrator env(cfg);
    const IntegratorGrid grid{cfg};

    FiniteMdp mdp(grid.num_states(), cfg.action_levels, cfg.gamma);
    for (int idx = 0; idx < grid.points(); ++idx) {
        const IntegratorState s = grid.state_of(idx);
        if (env.in_target(s)) mdp.set_target(idx);
        if (env.in_terminal(s) && !env.in_target(s)) mdp.set_terminal(idx);
    }
    mdp.set_target(grid.super_state());

    for (int idx = 0; idx < grid.points(); ++idx) {
        if (mdp.terminal(idx)) continue;
        const IntegratorState s = grid.state_of(idx);
        for (int a = 0; a < cfg.action_levels; ++a) {
            const double u = env.action_level(a);
            const auto perturbed = env.step_branch(s, u, true);
            const auto nominal = env.step_branch(s, u, false);
            mdp.add_transition(idx, a, grid.snap(perturbed.next_state), cfg.perturb_prob);
            mdp.add_transition(idx, a, grid.snap(nominal.next_state), 1.0 - cfg.perturb_prob);
        }
    }
    mdp.absorb_terminals();
    for (int a = 0; a < cfg.action_levels; ++a)
        mdp.add_transition(grid.super_state(), a, grid.super_state(), 1.0);
    mdp.validate();
    return mdp;
}

/// One-dimensional chain world: the leftmost state is a safe terminal, the
/// rightmost belongs to the target set, and moves are reversed with
/// probability slip_prob.
struct ChainWorldConfig {
    int num_states = 5;
    double slip_prob = 0.1;
    bool leftmost_terminal = true;
    bool rightmost_target = true;
    int time_limit = 200;
    double gamma = 1.0;
};

using ChainStepResult = StepResultT<int>;

inline FiniteMdp chain_world(const ChainWorldConfig& cfg) {
    if (cfg.num_states < 3) throw std::invalid_argument("chain_world: need at least 3 states");
    if (cfg.slip_prob < 0.0 || cfg.slip_prob >= 0.5)
        throw std::invalid_argument("chain_world: slip_prob outside [0, 0.5)");

    FiniteMdp mdp(cfg.num_states, 2, cfg.gamma);
    if (cfg.leftmost_terminal) mdp.set_terminal(0);
    if (cfg.rightmost_target) mdp.set_target(cfg.num_states - 1);

    for (int s = 0; s < cfg.num_states; ++s) {
        if (mdp.terminal(s)) continue;
        const int left = std::max(s - 1, 0);
        const int right = std::min(s + 1, cfg.num_states - 1);
        // action 0 = left, action 1 = right
        mdp.add_transition(s, 0, left, 1.0 - cfg.slip_prob);
        mdp.add_transition(s, 0, right, cfg.slip_prob);
        mdp.add_transition(s, 1, right, 1.0 - cfg.slip_prob);
        mdp.add_transition(s, 1, left, cfg.slip_prob);
    }
    mdp.absorb_terminals();
    mdp.validate();
    return mdp;
}

/// Single sampled move on the chain. Only interior states may step.
inline ChainStepResult chain_step(const ChainWorldConfig& cfg, int state, int action, Rng& rng) {
    const int last = cfg.num_states - 1;
    const bool is_terminal = cfg.leftmost_terminal && state == 0;
    const bool is_target = cfg.rightmost_target && state == last;
    if (is_terminal) throw std::invalid_argument("chain_step: stepping from a terminal state");
    if (is_target) throw std::invalid_argument("chain_step: stepping from a target state");
    if (state < 0 || state > last) throw std::invalid_argument("chain_step: state out of range");
    if (action != 0 && action != 1) throw std::invalid_argument("chain_step: unknown action");

    const bool slip = rng.uniform() < cfg.slip_prob;
    const int dir = (action == 1) != slip ? 1 : -1;
    ChainStepResult r;
    r.target_hit = false;
    r.next_state = std::clamp(state + dir, 0, last);
    r.done = cfg.leftmost_terminal && r.next_state == 0;
    return r;
}

/// Sampling front-end over a FiniteMdp used by the tabular learners: resets
/// uniformly over the supplied start states and reports the target flag of
/// the pre-step state plus the terminal flag of the successor.
class MdpSimulator {
public:
    MdpSimulator(const FiniteMdp& mdp, std::vector<int> start_states, int time_limit)
        : mdp_(&mdp), starts_(std::move(start_states)), time_limit_(time_limit) {
        if (starts_.empty()) throw std::invalid_argument("MdpSimulator: no start states");
        for (int s : starts_)
            if (mdp.target(s) || mdp.terminal(s))
                throw std::invalid_argument("MdpSimulator: start state in target/terminal set");
    }

    int state() const { return state_; }
    int episode_steps() const { return episode_steps_; }
    int time_limit() const { return time_limit_; }
    const FiniteMdp& mdp() const { return *mdp_; }

    void reset(Rng& rng) {
        state_ = starts_[rng.uniform_int(static_cast<int>(starts_.size()))];
        episode_steps_ = 0;
    }

    /// Steps the chain; truncation at the time limit is handled by the caller.
    StepResultT<int> step(int action, Rng& rng) {
        StepResultT<int> r;
        r.target_hit = mdp_->target(state_);
        r.next_state = mdp_->sample_next(state_, action, rng);
        r.done = mdp_->terminal(r.next_state) && !r.target_hit;
        state_ = r.next_state;
        ++episode_steps_;
        return r;
    }

private:
    const FiniteMdp* mdp_;
    std::vector<int> starts_;
    int time_limit_ = 0;
    int state_ = 0;
    int episode_steps_ = 0;
};

/// Grid states inside the integrator start box (excluding target/terminal).
inline std::vector<int> integrator_start_states(const FiniteMdp& mdp, const IntegratorGrid& grid) {
    std::vector<int> starts;
    for (int idx = 0; idx < grid.points(); ++idx) {
        const IntegratorState s = grid.state_of(idx);
        if (std::abs(s.pos) > grid.cfg.start_pos || std::abs(s.vel) > grid.cfg.start_vel) continue;
        if (mdp.target(idx) || mdp.terminal(idx)) continue;
        starts.push_back(idx);
    }
    return starts;
}

inline std::vector<int> chain_start_states(const FiniteMdp& mdp) {
    std::vector<int> starts;
    for (int s = 0; s < mdp.num_states(); ++s)
        if (!mdp.target(s) && !mdp.terminal(s)) starts.push_back(s);
    return starts;
}

}  // namespace safeset
