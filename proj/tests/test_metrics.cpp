#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "safeset/experiment.hpp"
#include "safeset/metrics.hpp"

using namespace safeset;

namespace {

SafeSetEstimate from_indices(std::size_t total, std::initializer_list<int> members) {
    SafeSetEstimate e;
    e.member.assign(total, 0);
    for (int i : members) e.member[i] = 1;
    return e;
}

}  // namespace

TEST_CASE("ratio of correct specification") {
    const auto truth = from_indices(10, {1, 2, 3});
    CHECK(ratio_correct(truth, truth) == 1.0);
    CHECK(ratio_correct(from_indices(10, {}), truth) == 0.0);
    CHECK(ratio_correct(from_indices(10, {2, 3, 4}), truth) == Catch::Approx(2.0 / 3.0));
    CHECK_THROWS_AS(ratio_correct(truth, from_indices(10, {})), std::invalid_argument);
}

TEST_CASE("ratio of false-positive specification") {
    const auto truth = from_indices(10, {1, 2, 3});
    CHECK(ratio_false_positive(from_indices(10, {1, 2}), truth, 10) == 0.0);
    CHECK(ratio_false_positive(from_indices(10, {2, 3, 4}), truth, 10) == Catch::Approx(0.1));
    SafeSetEstimate all;
    all.member.assign(10, 1);
    const auto half = from_indices(10, {0, 1, 2, 3, 4});
    CHECK(ratio_false_positive(all, half, 10) == Catch::Approx(0.5));
}

TEST_CASE("metrics stay within the unit interval") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        SafeSetEstimate a, b;
        a.member.resize(20);
        b.member.resize(20);
        bool any = false;
        for (int i = 0; i < 20; ++i) {
            a.member[i] = rng.uniform() < 0.5;
            b.member[i] = rng.uniform() < 0.5;
            any = any || b.member[i];
        }
        if (!any) b.member[0] = 1;
        const double rc = ratio_correct(a, b);
        const double rfp = ratio_false_positive(a, b, 20);
        CHECK(rc >= 0.0);
        CHECK(rc <= 1.0);
        CHECK(rfp >= 0.0);
        CHECK(rfp <= 1.0);
    }
}

TEST_CASE("thresholding the oracle against itself has no false positives") {
    SafeSetEstimate truth = from_indices(8, {0, 1, 5});
    CHECK(ratio_false_positive(truth, truth, 8) == 0.0);
}

TEST_CASE("episode log semantics") {
    EpisodeLog log;
    CHECK(log.empty());
    CHECK(log.average() == 1.0);

    for (int i = 0; i < 100; ++i) log.push(i % 2 == 0);
    CHECK(log.size() == 100);
    CHECK(log.average() == Catch::Approx(0.5));

    // ring keeps the latest 100
    for (int i = 0; i < 100; ++i) log.push(true);
    CHECK(log.average() == 1.0);

    EpisodeLog single;
    single.push(false);
    CHECK(single.average() == 0.0);
}

TEST_CASE("aggregation reduces to the raw series for one seed") {
    ExperimentRecord r;
    r.seed = 4;
    r.rows = {{0, 0, 0.5, 0.1, 1.0, 0.0}, {1, 100, 0.75, 0.05, 0.9, 0.01}};
    const auto agg = aggregate_records({r});
    REQUIRE(agg.size() == 8);
    CHECK(agg[0].metric == "r_c");
    CHECK(agg[0].mean == 0.5);
    CHECK(agg[0].lo == 0.5);
    CHECK(agg[0].hi == 0.5);
    CHECK(agg[4].iteration == 1);
    CHECK(agg[4].mean == 0.75);
}

TEST_CASE("aggregation is invariant to seed ordering") {
    ExperimentRecord a, b, c;
    a.seed = 0;
    b.seed = 1;
    c.seed = 2;
    a.rows = {{0, 0, 0.2, 0.0, 1.0, 0.0}};
    b.rows = {{0, 0, 0.4, 0.1, 0.8, 0.0}};
    c.rows = {{0, 0, 0.9, 0.2, 0.9, 0.1}};
    const auto fwd = aggregate_records({a, b, c});
    const auto rev = aggregate_records({c, a, b});
    REQUIRE(fwd.size() == rev.size());
    for (std::size_t i = 0; i < fwd.size(); ++i) {
        CHECK(fwd[i].mean == rev[i].mean);
        CHECK(fwd[i].lo == rev[i].lo);
        CHECK(fwd[i].hi == rev[i].hi);
    }
}

TEST_CASE("aggregate band is the sample standard deviation") {
    ExperimentRecord a, b;
    a.seed = 0;
    b.seed = 1;
    a.rows = {{0, 0, 0.2, 0.0, 1.0, 0.0}};
    b.rows = {{0, 0, 0.6, 0.0, 1.0, 0.0}};
    const auto agg = aggregate_records({a, b});
    const double sd = std::sqrt((0.04 + 0.04) / 1.0);  // n - 1 = 1
    CHECK(agg[0].mean == Catch::Approx(0.4));
    CHECK(agg[0].lo == Catch::Approx(0.4 - sd));
    CHECK(agg[0].hi == Catch::Approx(0.4 + sd));
}

TEST_CASE("csv round trips") {
    ExperimentRecord r;
    r.algo = "ess";
    r.env = "chain";
    r.seed = 9;
    r.rows = {{0, 0, 0.123456789, 0.01, 1.0, 0.0}, {1, 50, 0.987654321, 0.0, 0.98, 2e-3}};
    write_metrics_csv(r, "metrics_test.csv");
    std::ifstream in("metrics_test.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "iteration,env_steps,r_c,r_fp,aes,epsilon");
    std::string row;
    std::getline(in, row);
    CHECK(row == "0,0,0.123456789,0.01,1,0");
    std::remove("metrics_test.csv");

    const auto agg = aggregate_records({r});
    write_aggregate_csv(agg, "aggregate_test.csv");
    const auto back = read_aggregate_csv("aggregate_test.csv");
    REQUIRE(back.size() == agg.size());
    CHECK(back[3].metric == "epsilon");
    CHECK(back[3].mean == agg[3].mean);

    write_plot_csv(back, "r_c", "plot_test.csv");
    std::ifstream pin("plot_test.csv");
    std::getline(pin, header);
    CHECK(header == "iteration,env_steps,mean,lo,hi");
    CHECK_THROWS_AS(write_plot_csv(back, "nope", "plot_test.csv"), std::runtime_error);
    std::remove("aggregate_test.csv");
    std::remove("plot_test.csv");

    std::vector<SafeSetRow> rows = {{0, 0.0, 0.0, 0.25, 0}, {1, -1.2, 0.6, 0.0, 1}};
    write_safe_set_csv(rows, "safe_set_test.csv");
    const auto ss = read_safe_set_csv("safe_set_test.csv");
    REQUIRE(ss.size() == 2);
    CHECK(ss[1].coord0 == -1.2);
    CHECK(ss[1].in_safe_set == 1);
    std::remove("safe_set_test.csv");
}

TEST_CASE("qtables binary round trip") {
    Rng rng(5);
    QTablesFile f;
    f.tables = QTables::pessimistic(4, 2, rng);
    f.tables.visits[3] = 17;
    f.ss_policy = StochasticPolicy::uniform(4, 2);
    f.has_exploratory = true;
    f.exploratory = StochasticPolicy::deterministic(4, 2, {0, 1, 0, 1});
    f.epsilon = 0.025;
    f.iteration = 12;
    save_qtables(f, "qtables_test.bin");

    // magic header
    std::ifstream in("qtables_test.bin", std::ios::binary);
    char magic[8];
    in.read(magic, 8);
    CHECK(std::string(magic, 8) == "RSPECQT1");

    const auto back = load_qtables("qtables_test.bin");
    CHECK(back.tables.q_v == f.tables.q_v);
    CHECK(back.tables.visits == f.tables.visits);
    CHECK(back.has_exploratory);
    CHECK(back.exploratory.prob(1, 1) == 1.0);
    CHECK(back.epsilon == 0.025);
    CHECK(back.iteration == 12);
    std::remove("qtables_test.bin");
}

TEST_CASE("suite run on the chain produces aligned aggregates") {
    RunConfig cfg;
    cfg.mode = "tabular";
    cfg.env = "chain";
    cfg.algos = {"baseline", "ess"};
    cfg.alpha = 0.2;
    cfg.iters = 3;
    cfg.steps_per_iter = 1000;

    const auto out_dir = std::filesystem::temp_directory_path() / "safeset_suite_test";
    std::filesystem::remove_all(out_dir);
    const auto by_algo = run_suite(cfg, {0, 1}, out_dir.string(), 2);
    REQUIRE(by_algo.size() == 2);
    for (const auto& [algo, records] : by_algo) {
        CHECK(records.size() == 2);
        CHECK(std::filesystem::exists(out_dir / algo / "aggregate.csv"));
        CHECK(std::filesystem::exists(out_dir / algo / "seed0" / "metrics.csv"));
        CHECK(std::filesystem::exists(out_dir / algo / "seed1" / "qtables.bin"));
        CHECK(std::filesystem::exists(out_dir / algo / "seed0" / "safe_set.csv"));
    }

    // identical seeds => identical series regardless of scheduling
    const auto again = run_suite(cfg, {0, 1}, "", 1);
    for (const auto& [algo, records] : by_algo) {
        const auto& other = again.at(algo);
        for (std::size_t i = 0; i < records.size(); ++i) {
            REQUIRE(records[i].rows.size() == other[i].rows.size());
            for (std::size_t k = 0; k < records[i].rows.size(); ++k)
                CHECK(records[i].rows[k].r_c == other[i].rows[k].r_c);
        }
    }
    std::filesystem::remove_all(out_dir);
}
