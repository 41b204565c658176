#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace safeset {

enum class LpSense { Minimize, Maximize };

/// Linear program over the probability simplex with one extra inequality:
///   opt  sum_a objective[a] * pi[a]
///   s.t. sum_a constraint_coeffs[a] * pi[a] <= budget,  pi in simplex.
struct PolicyLp {
    std::vector<double> objective;
    std::vector<double> constraint_coeffs;
    double budget = 0.0;
    LpSense sense = LpSense::Minimize;
};

struct PolicyLpSolution {
    std::vector<double> probs;
    double value = 0.0;
};

class LpInfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exact vertex solution of a PolicyLp. Basic solutions of this polytope have
/// support at most two: the feasible pure actions and, for each action pair,
/// the mixture that makes the constraint active. All candidates are
/// enumerated in index order and a strictly better value is required to
/// displace the incumbent, so ties resolve to the lowest action index and
/// then the lowest second-support index.
inline PolicyLpSolution solve_policy_lp(const PolicyLp& lp) {
    const int n = static_cast<int>(lp.objective.size());
    if (n == 0 || lp.constraint_coeffs.size() != lp.objective.size())
        throw std::invalid_argument("solve_policy_lp: malformed input");

    const double sign = lp.sense == LpSense::Minimize ? 1.0 : -1.0;
    double scale = std::abs(lp.budget);
    for (int a = 0; a < n; ++a) scale = std::max(scale, std::abs(lp.constraint_coeffs[a]));
    const double feas_tol = 5e-13 * std::max(1.0, scale);

    double best = std::numeric_limits<double>::infinity();
    int best_i = -1, best_j = -1;
    double best_w = 1.0;  // weight on best_i

    // Pure actions.
    for (int a = 0; a < n; ++a) {
        if (lp.constraint_coeffs[a] > lp.budget + feas_tol) continue;
        const double value = sign * lp.objective[a];
        if (value < best) {
            best = value;
            best_i = a;
            best_j = -1;
            best_w = 1.0;
        }
    }

    // Two-action mixtures with the constraint active.
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double gi = lp.constraint_coeffs[i];
            const double gj = lp.constraint_coeffs[j];
            if (gi == gj) continue;  // pures cover this direction
            double w = (lp.budget - gj) / (gi - gj);
            if (w < -1e-12 || w > 1.0 + 1e-12) continue;
            w = std::clamp(w, 0.0, 1.0);
            if (w * gi + (1.0 - w) * gj > lp.budget + feas_tol) continue;
            const double value = sign * (w * lp.objective[i] + (1.0 - w) * lp.objective[j]);
            if (value < best) {
                best = value;
                best_i = i;
                best_j = j;
                best_w = w;
            }
        }
    }

    if (best_i < 0)
        throw LpInfeasibleError("solve_policy_lp: budget below the smallest coefficient");

    PolicyLpSolution sol;
    sol.probs.assign(n, 0.0);
    sol.probs[best_i] = best_w;
    if (best_j >= 0) sol.probs[best_j] = 1.0 - best_w;
    sol.value = sign * best;
    return sol;
}

}  // namespace safeset
