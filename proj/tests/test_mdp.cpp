#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "safeset/mdp.hpp"
#include "safeset/oracle.hpp"
#include "support/oracles.hpp"

using namespace safeset;

namespace {

FiniteMdp three_state_split() {
    // 0 = safe terminal, 1 = target, 2 = interior with a 50/50 split
    FiniteMdp mdp(3, 1, 1.0);
    mdp.set_terminal(0);
    mdp.set_target(1);
    mdp.add_transition(1, 0, 1, 1.0);
    mdp.add_transition(2, 0, 0, 0.5);
    mdp.add_transition(2, 0, 1, 0.5);
    mdp.absorb_terminals();
    mdp.validate();
    return mdp;
}

FiniteMdp random_mdp(int S, int A, Rng& rng, double gamma = 1.0) {
    FiniteMdp mdp(S, A, gamma);
    mdp.set_terminal(0);
    mdp.set_target(S - 1);
    for (int s = 0; s < S; ++s) {
        if (mdp.terminal(s)) continue;
        for (int a = 0; a < A; ++a) {
            double total = 0.0;
            std::vector<double> w(S);
            for (int t = 0; t < S; ++t) total += w[t] = rng.uniform() + 1e-3;
            // exact renormalization so rows sum to 1 bit-for-bit
            double acc = 0.0;
            for (int t = 0; t < S - 1; ++t) {
                w[t] /= total;
                acc += w[t];
                mdp.add_transition(s, a, t, w[t]);
            }
            mdp.add_transition(s, a, S - 1, 1.0 - acc);
        }
    }
    mdp.absorb_terminals();
    return mdp;
}

}  // namespace

TEST_CASE("stage cost is x times the target indicator") {
    CHECK(stage_cost(true, 1) == 1);
    CHECK(stage_cost(false, 1) == 0);
    CHECK(stage_cost(true, 0) == 0);
    CHECK(stage_cost(false, 0) == 0);
}

TEST_CASE("flag update law") {
    CHECK(flag_step(false, 1) == 1);
    CHECK(flag_step(true, 1) == 0);
    CHECK(flag_step(true, 0) == 0);
    CHECK(flag_step(false, 0) == 0);  // idempotent once zero
}

TEST_CASE("flag is monotone non-increasing along any trajectory") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        int x = 1;
        for (int t = 0; t < 50; ++t) {
            const int next = flag_step(rng.uniform() < 0.3, x);
            CHECK(next <= x);
            x = next;
        }
    }
}

TEST_CASE("augmented state resets with flag one") {
    AugmentedState s;
    CHECK(s.flag == 1);
}

TEST_CASE("bellman operator boundary clauses") {
    const auto mdp = three_state_split();
    const auto pi = StochasticPolicy::uniform(3, 1);
    const std::vector<double> v = {0.25, 0.75, 0.5};
    const auto out = bellman_apply(mdp, pi, v);
    CHECK(out[0] == 0.0);  // terminal
    CHECK(out[1] == 1.0);  // target: d = 1 and the bootstrap runs over the dead flag
}

TEST_CASE("bellman operator one-step expectation on the split state") {
    const auto mdp = three_state_split();
    const auto pi = StochasticPolicy::uniform(3, 1);
    const std::vector<double> v = {0.0, 1.0, 0.0};
    const auto out = bellman_apply(mdp, pi, v);
    CHECK(out[2] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("bellman operator rejects mismatched tables") {
    const auto mdp = three_state_split();
    const auto pi = StochasticPolicy::uniform(3, 1);
    CHECK_THROWS_AS(bellman_apply(mdp, pi, std::vector<double>{0.0, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(bellman_apply(mdp, StochasticPolicy::uniform(2, 1), std::vector<double>(3, 0.0)),
                    std::invalid_argument);
}

TEST_CASE("bellman operator is monotone") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto mdp = random_mdp(5, 2, rng);
        const auto pi = StochasticPolicy::uniform(5, 2);
        std::vector<double> lo(5), hi(5);
        for (int s = 0; s < 5; ++s) {
            lo[s] = rng.uniform();
            hi[s] = lo[s] + rng.uniform() * (1.0 - lo[s]);
        }
        const auto tlo = bellman_apply(mdp, pi, lo);
        const auto thi = bellman_apply(mdp, pi, hi);
        for (int s = 0; s < 5; ++s) CHECK(tlo[s] <= thi[s] + 1e-15);
    }
}

TEST_CASE("bellman operator keeps values in the unit interval") {
    Rng rng(13);
    const auto mdp = random_mdp(6, 2, rng);
    const auto pi = StochasticPolicy::uniform(6, 2);
    std::vector<double> v(6);
    for (auto& x : v) x = rng.uniform();
    for (int k = 0; k < 100; ++k) {
        v = bellman_apply(mdp, pi, v);
        for (double x : v) {
            CHECK(x >= 0.0);
            CHECK(x <= 1.0);
        }
    }
}

TEST_CASE("iterated bellman operator converges to the policy value") {
    Rng rng(17);
    const auto mdp = random_mdp(6, 2, rng, 0.999);
    const auto pi = StochasticPolicy::uniform(6, 2);
    const auto reference = policy_unsafety(mdp, pi, {1e-13, 2'000'000});

    std::vector<double> v(6);
    for (auto& x : v) x = rng.uniform();  // arbitrary bounded start
    for (int k = 0; k < 60000; ++k) v = bellman_apply(mdp, pi, v);
    for (int s = 0; s < 6; ++s) CHECK(v[s] == Catch::Approx(reference.values[s]).margin(1e-9));
}

TEST_CASE("mdp validation catches broken inputs") {
    FiniteMdp bad(2, 1, 1.0);
    bad.add_transition(0, 0, 1, 0.6);
    bad.add_transition(1, 0, 1, 1.0);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);  // row sums to 0.6

    FiniteMdp leaky(2, 1, 1.0);
    leaky.set_terminal(0);
    leaky.add_transition(0, 0, 1, 1.0);  // terminal not absorbing
    leaky.add_transition(1, 0, 0, 1.0);
    CHECK_THROWS_AS(leaky.validate(), std::invalid_argument);

    CHECK_THROWS_AS(FiniteMdp(0, 1), std::invalid_argument);
    CHECK_THROWS_AS(FiniteMdp(1, 1, 1.5), std::invalid_argument);
}

TEST_CASE("mdp file round trip preserves the model") {
    Rng rng(23);
    const auto mdp = random_mdp(5, 3, rng, 0.97);
    const std::string path = "roundtrip_mdp.json";
    save_mdp(mdp, path);
    const auto back = load_mdp(path);

    CHECK(back.num_states() == mdp.num_states());
    CHECK(back.num_actions() == mdp.num_actions());
    CHECK(back.gamma() == mdp.gamma());
    for (int s = 0; s < 5; ++s) {
        CHECK(back.target(s) == mdp.target(s));
        CHECK(back.terminal(s) == mdp.terminal(s));
        for (int a = 0; a < 3; ++a) {
            const auto& lhs = mdp.row(s, a);
            const auto& rhs = back.row(s, a);
            REQUIRE(lhs.size() == rhs.size());
            for (std::size_t i = 0; i < lhs.size(); ++i) {
                CHECK(lhs[i].first == rhs[i].first);
                CHECK(lhs[i].second == Catch::Approx(rhs[i].second).margin(1e-15));
            }
        }
    }

    // the on-disk format keeps the documented key names
    std::ifstream in(path);
    nlohmann::json j;
    in >> j;
    for (const char* key : {"num_states", "num_actions", "transitions", "target", "terminal", "gamma"})
        CHECK(j.contains(key));
    std::remove(path.c_str());
}

TEST_CASE("policy rows validate and sample deterministically") {
    auto pi = StochasticPolicy::uniform(2, 3);
    pi.validate();
    const std::vector<double> bad = {0.5, 0.2, 0.2};
    pi.set_row(0, bad);
    CHECK_THROWS_AS(pi.validate(), std::invalid_argument);
}
