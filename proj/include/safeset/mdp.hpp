#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "safeset/rng.hpp"

namespace safeset {

constexpr double kRowSumTolerance = 1e-12;

/// Stage cost of the reachability formulation: d(s, x) = x * 1_G(s).
inline int stage_cost(bool in_target, int flag) { return in_target ? flag : 0; }

/// Safety-flag update: x' = x * 1_{G^c}(s). Once zero, stays zero.
inline int flag_step(bool in_target, int flag) { return in_target ? 0 : flag; }

/// Environment state paired with the binary safety flag.
struct AugmentedState {
    int state = 0;
    int flag = 1;  // 1 at every episode reset
};

/// Finite MDP with a target set (unsafe states), a terminal set and sparse
/// transition rows. Terminal states must be absorbing.
class FiniteMdp {
public:
    FiniteMdp() = default;
    FiniteMdp(int num_states, int num_actions, double gamma = 1.0)
        : num_states_(num_states),
          num_actions_(num_actions),
          gamma_(gamma),
          rows_(static_cast<std::size_t>(num_states) * num_actions),
          target_(num_states, 0),
          terminal_(num_states, 0) {
        if (num_states <= 0 || num_actions <= 0)
            throw std::invalid_argument("FiniteMdp: state/action counts must be positive");
        if (gamma <= 0.0 || gamma > 1.0)
            throw std::invalid_argument("FiniteMdp: gamma must lie in (0, 1]");
    }

    int num_states() const { return num_states_; }
    int num_actions() const { return num_actions_; }
    double gamma() const { return gamma_; }

    bool target(int s) const { return target_[s] != 0; }
    bool terminal(int s) const { return terminal_[s] != 0; }
    void set_target(int s, bool v = true) { target_[s] = v ? 1 : 0; }
    void set_terminal(int s, bool v = true) { terminal_[s] = v ? 1 : 0; }

    const std::vector<char>& target_mask() const { return target_; }
    const std::vector<char>& terminal_mask() const { return terminal_; }

    void add_transition(int s, int a, int next, double p) {
        if (p < 0.0) throw std::invalid_argument("add_transition: negative probability");
        if (p == 0.0) return;
        auto& row = rows_[index(s, a)];
        for (auto& [t, q] : row) {
            if (t == next) {
                q += p;
                return;
            }
        }
        row.emplace_back(next, p);
    }

    /// Sparse transition row for (s, a) as (next_state, probability) pairs.
    const std::vector<std::pair<int, double>>& row(int s, int a) const {
        return rows_[index(s, a)];
    }

    /// Makes every terminal state absorbing with mass one on itself.
    void absorb_terminals() {
        for (int s = 0; s < num_states_; ++s) {
            if (!terminal(s)) continue;
            for (int a = 0; a < num_actions_; ++a) rows_[index(s, a)] = {{s, 1.0}};
        }
    }

    /// Checks row stochasticity and absorbing terminals; throws on violation.
    void validate() const {
        for (int s = 0; s < num_states_; ++s) {
            for (int a = 0; a < num_actions_; ++a) {
                const auto& row = rows_[index(s, a)];
                double sum = 0.0;
                for (const auto& [t, p] : row) {
                    if (t < 0 || t >= num_states_)
                        throw std::invalid_argument("FiniteMdp: successor out of range");
                    if (p < 0.0) throw std::invalid_argument("FiniteMdp: negative probability");
                    sum += p;
                }
                if (std::abs(sum - 1.0) > kRowSumTolerance)
                    throw std::invalid_argument("FiniteMdp: row (" + std::to_string(s) + "," +
                                                std::to_string(a) + ") sums to " + std::to_string(sum));
                if (terminal(s) && !(row.size() == 1 && row.front().first == s))
                    throw std::invalid_argument("FiniteMdp: terminal state " + std::to_string(s) +
                                                " is not absorbing");
            }
        }
    }

    int sample_next(int s, int a, Rng& rng) const {
        const auto& row = rows_[index(s, a)];
        const double u = rng.uniform();
        double acc = 0.0;
        for (const auto& [t, p] : row) {
            acc += p;
            if (u < acc) return t;
        }
        return row.back().first;
    }

private:
    std::size_t index(int s, int a) const {
        return static_cast<std::size_t>(s) * num_actions_ + a;
    }

    int num_states_ = 0;
    int num_actions_ = 0;
    double gamma_ = 1.0;
    std::vector<std::vector<std::pair<int, double>>> rows_;
    std::vector<char> target_;
    std::vector<char> terminal_;
};

/// Per-state probability distribution over a finite action set.
class StochasticPolicy {
public:
    StochasticPolicy() = default;
    StochasticPolicy(int num_states, int num_actions)
        : num_states_(num_states),
          num_actions_(num_actions),
          probs_(static_cast<std::size_t>(num_states) * num_actions, 0.0) {}

    static StochasticPolicy uniform(int num_states, int num_actions) {
        StochasticPolicy p(num_states, num_actions);
        std::fill(p.probs_.begin(), p.probs_.end(), 1.0 / num_actions);
        return p;
    }

    static StochasticPolicy deterministic(int num_states, int num_actions,
                                          const std::vector<int>& actions) {
        StochasticPolicy p(num_states, num_actions);
        for (int s = 0; s < num_states; ++s) p.probs_[p.index(s, actions[s])] = 1.0;
        return p;
    }

    int num_states() const { return num_states_; }
    int num_actions() const { return num_actions_; }

    double prob(int s, int a) const { return probs_[index(s, a)]; }
    std::span<const double> row(int s) const {
        return {probs_.data() + index(s, 0), static_cast<std::size_t>(num_actions_)};
    }
    void set_row(int s, std::span<const double> row) {
        std::copy(row.begin(), row.end(), probs_.begin() + index(s, 0));
    }

    int sample(int s, Rng& rng) const { return rng.sample_discrete(row(s)); }

    void validate() const {
        for (int s = 0; s < num_states_; ++s) {
            double sum = 0.0;
            for (int a = 0; a < num_actions_; ++a) {
                if (prob(s, a) < 0.0) throw std::invalid_argument("StochasticPolicy: negative entry");
                sum += prob(s, a);
            }
            if (std::abs(sum - 1.0) > kRowSumTolerance)
                throw std::invalid_argument("StochasticPolicy: row " + std::to_string(s) +
                                            " sums to " + std::to_string(sum));
        }
    }

private:
    std::size_t index(int s, int a) const {
        return static_cast<std::size_t>(s) * num_actions_ + a;
    }

    int num_states_ = 0;
    int num_actions_ = 0;
    std::vector<double> probs_;
};

/// One environment transition as observed by a learner.
struct TransitionSample {
    int state = 0;
    int action = 0;
    bool target_hit = false;  // 1_G(state)
    int next_state = 0;
    bool next_terminal = false;
};

/// Episode roll-out. Episodes reset upon target entry, so at most the final
/// step carries target_hit.
struct Trajectory {
    std::vector<TransitionSample> steps;
    bool terminated = false;
    bool truncated = false;
};

/// One application of the stationary Bellman operator for the reachability
/// cost d(s,x) = x 1_G(s), restricted to the x = 1 slice (the x = 0 slice is
/// identically zero): terminal states map to 0, target states to 1, and all
/// other states to gamma times the policy-averaged successor expectation.
inline std::vector<double> bellman_apply(const FiniteMdp& mdp, const StochasticPolicy& policy,
                                         std::span<const double> values) {
    if (static_cast<int>(values.size()) != mdp.num_states())
        throw std::invalid_argument("bellman_apply: value table size mismatch");
    if (policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions())
        throw std::invalid_argument("bellman_apply: policy shape mismatch");

    std::vector<double> out(values.size(), 0.0);
    for (int s = 0; s < mdp.num_states(); ++s) {
        if (mdp.terminal(s)) {
            out[s] = 0.0;
            continue;
        }
        if (mdp.target(s)) {
            // d = 1 and the successor flag dies, so the bootstrap vanishes.
            out[s] = 1.0;
            continue;
        }
        double acc = 0.0;
        for (int a = 0; a < mdp.num_actions(); ++a) {
            const double pa = policy.prob(s, a);
            if (pa == 0.0) continue;
            double ev = 0.0;
            for (const auto& [t, p] : mdp.row(s, a)) ev += p * values[t];
            acc += pa * ev;
        }
        out[s] = mdp.gamma() * acc;
    }
    return out;
}

/// Serializes in the on-disk format: num_states, num_actions, sparse
/// transition quadruples, target/terminal state lists and gamma.
inline void save_mdp(const FiniteMdp& mdp, const std::string& path) {
    nlohmann::json j;
    j["num_states"] = mdp.num_states();
    j["num_actions"] = mdp.num_actions();
    j["gamma"] = mdp.gamma();
    auto transitions = nlohmann::json::array();
    for (int s = 0; s < mdp.num_states(); ++s)
        for (int a = 0; a < mdp.num_actions(); ++a)
            for (const auto& [t, p] : mdp.row(s, a))
                transitions.push_back({s, a, t, p});
    j["transitions"] = std::move(transitions);
    std::vector<int> target, terminal;
    for (int s = 0; s < mdp.num_states(); ++s) {
        if (mdp.target(s)) target.push_back(s);
        if (mdp.terminal(s)) terminal.push_back(s);
    }
    j["target"] = target;
    j["terminal"] = terminal;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_mdp: cannot open " + path);
    out << j.dump(1) << "\n";
}

inline FiniteMdp load_mdp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_mdp: cannot open " + path);
    nlohmann::json j;
    in >> j;

    FiniteMdp mdp(j.at("num_states").get<int>(), j.at("num_actions").get<int>(),
                  j.at("gamma").get<double>());
    for (const auto& t : j.at("transitions"))
        mdp.add_transition(t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>(),
                           t.at(3).get<double>());
    for (const auto& s : j.at("target")) mdp.set_target(s.get<int>());
    for (const auto& s : j.at("terminal")) mdp.set_terminal(s.get<int>());
    mdp.validate();
    return mdp;
}

}  // namespace safeset
