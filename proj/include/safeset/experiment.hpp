#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "safeset/actor_critic.hpp"
#include "safeset/envs.hpp"
#include "safeset/metrics.hpp"
#include "safeset/oracle.hpp"
#include "safeset/tabular.hpp"

namespace safeset {

/// All floats in CSV outputs carry 9 significant digits.
inline std::string format_g9(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    return buf;
}

// ---------------------------------------------------------------------------
// metrics.csv
// ---------------------------------------------------------------------------

inline void write_metrics_csv(const ExperimentRecord& record, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
    out << "iteration,env_steps,r_c,r_fp,aes,epsilon\n";
    for (const auto& row : record.rows)
        out << row.iteration << ',' << row.env_steps << ',' << format_g9(row.r_c) << ','
            << format_g9(row.r_fp) << ',' << format_g9(row.aes) << ',' << format_g9(row.epsilon)
            << '\n';
}

// ---------------------------------------------------------------------------
// aggregate.csv (per-iteration mean and band across seeds)
// ---------------------------------------------------------------------------

struct AggregateRow {
    long iteration = 0;
    long env_steps = 0;
    std::string metric;
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

/// Mean plus/minus the sample standard deviation across seeds, one row per
/// (iteration, metric). Records are sorted by seed first so the reduction is
/// independent of submission order.
inline std::vector<AggregateRow> aggregate_records(std::vector<ExperimentRecord> records) {
    if (records.empty()) throw std::invalid_argument("aggregate_records: no records");
    std::sort(records.begin(), records.end(),
              [](const ExperimentRecord& a, const ExperimentRecord& b) { return a.seed < b.seed; });
    const std::size_t rows = records.front().rows.size();
    for (const auto& r : records)
        if (r.rows.size() != rows)
            throw std::invalid_argument("aggregate_records: unequal series lengths");

    const int n = static_cast<int>(records.size());
    std::vector<AggregateRow> out;
    const char* names[4] = {"r_c", "r_fp", "aes", "epsilon"};
    for (std::size_t i = 0; i < rows; ++i) {
        for (int m = 0; m < 4; ++m) {
            double mean = 0.0;
            for (const auto& r : records) {
                const auto& row = r.rows[i];
                const double v = m == 0 ? row.r_c : m == 1 ? row.r_fp : m == 2 ? row.aes
                                                                               : row.epsilon;
                mean += v;
            }
            mean /= n;
            double var = 0.0;
            for (const auto& r : records) {
                const auto& row = r.rows[i];
                const double v = m == 0 ? row.r_c : m == 1 ? row.r_fp : m == 2 ? row.aes
                                                                               : row.epsilon;
                var += (v - mean) * (v - mean);
            }
            const double sd = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
            AggregateRow a;
            a.iteration = records.front().rows[i].iteration;
            a.env_steps = records.front().rows[i].env_steps;
            a.metric = names[m];
            a.mean = mean;
            a.lo = mean - sd;
            a.hi = mean + sd;
            out.push_back(std::move(a));
        }
    }
    return out;
}

inline void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_aggregate_csv: cannot open " + path);
    out << "# band: mean +/- sample standard deviation across seeds\n";
    out << "iteration,env_steps,metric,mean,lo,hi\n";
    for (const auto& r : rows)
        out << r.iteration << ',' << r.env_steps << ',' << r.metric << ',' << format_g9(r.mean)
            << ',' << format_g9(r.lo) << ',' << format_g9(r.hi) << '\n';
}

inline std::vector<AggregateRow> read_aggregate_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_aggregate_csv: cannot open " + path);
    std::vector<AggregateRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("iteration", 0) == 0) continue;
        AggregateRow r;
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        r.iteration = std::stol(field);
        std::getline(ss, field, ',');
        r.env_steps = std::stol(field);
        std::getline(ss, r.metric, ',');
        std::getline(ss, field, ',');
        r.mean = std::stod(field);
        std::getline(ss, field, ',');
        r.lo = std::stod(field);
        std::getline(ss, field, ',');
        r.hi = std::stod(field);
        rows.push_back(std::move(r));
    }
    return rows;
}

/// Plot-ready data for one metric: iteration, env_steps, mean, lo, hi.
inline void write_plot_csv(const std::vector<AggregateRow>& rows, const std::string& metric,
                           const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_plot_csv: cannot open " + path);
    out << "iteration,env_steps,mean,lo,hi\n";
    bool any = false;
    for (const auto& r : rows) {
        if (r.metric != metric) continue;
        any = true;
        out << r.iteration << ',' << r.env_steps << ',' << format_g9(r.mean) << ','
            << format_g9(r.lo) << ',' << format_g9(r.hi) << '\n';
    }
    if (!any) throw std::runtime_error("write_plot_csv: metric not present: " + metric);
}

// ---------------------------------------------------------------------------
// safe_set.csv (oracle schema)
// ---------------------------------------------------------------------------

struct SafeSetRow {
    long state_index = 0;
    double coord0 = 0.0;
    double coord1 = 0.0;
    double v_star = 0.0;
    int in_safe_set = 0;
};

inline void write_safe_set_csv(const std::vector<SafeSetRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_safe_set_csv: cannot open " + path);
    out << "state_index,coord0,coord1,v_star,in_safe_set\n";
    for (const auto& r : rows)
        out << r.state_index << ',' << format_g9(r.coord0) << ',' << format_g9(r.coord1) << ','
            << format_g9(r.v_star) << ',' << r.in_safe_set << '\n';
}

inline std::vector<SafeSetRow> read_safe_set_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_safe_set_csv: cannot open " + path);
    std::vector<SafeSetRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line.rfind("state_index", 0) == 0) continue;
        SafeSetRow r;
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        r.state_index = std::stol(field);
        std::getline(ss, field, ',');
        r.coord0 = std::stod(field);
        std::getline(ss, field, ',');
        r.coord1 = std::stod(field);
        std::getline(ss, field, ',');
        r.v_star = std::stod(field);
        std::getline(ss, field, ',');
        r.in_safe_set = std::stoi(field);
        rows.push_back(r);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// qtables.bin (magic RSPECQT1)
// ---------------------------------------------------------------------------

struct QTablesFile {
    QTables tables;
    StochasticPolicy ss_policy;
    bool has_exploratory = false;
    StochasticPolicy exploratory;
    double epsilon = 0.0;
    long iteration = 0;
};

inline void save_qtables(const QTablesFile& f, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_qtables: cannot open " + path);
    out.write("RSPECQT1", 8);
    const std::int32_t dims[2] = {f.tables.num_states, f.tables.num_actions};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    const auto write_doubles = [&](const std::vector<double>& v) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    write_doubles(f.tables.q_v);
    write_doubles(f.tables.q_t);
    out.write(reinterpret_cast<const char*>(f.tables.visits.data()),
              static_cast<std::streamsize>(f.tables.visits.size() * sizeof(std::uint64_t)));
    std::vector<double> pol;
    for (int s = 0; s < f.tables.num_states; ++s)
        for (int a = 0; a < f.tables.num_actions; ++a) pol.push_back(f.ss_policy.prob(s, a));
    write_doubles(pol);
    const std::uint8_t has_expl = f.has_exploratory ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&has_expl), sizeof(has_expl));
    if (f.has_exploratory) {
        pol.clear();
        for (int s = 0; s < f.tables.num_states; ++s)
            for (int a = 0; a < f.tables.num_actions; ++a) pol.push_back(f.exploratory.prob(s, a));
        write_doubles(pol);
    }
    out.write(reinterpret_cast<const char*>(&f.epsilon), sizeof(f.epsilon));
    const std::int64_t iter = f.iteration;
    out.write(reinterpret_cast<const char*>(&iter), sizeof(iter));
}

inline QTablesFile load_qtables(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_qtables: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::string(magic, 8) != "RSPECQT1")
        throw std::runtime_error("load_qtables: bad magic in " + path);
    std::int32_t dims[2];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    QTablesFile f;
    f.tables = QTables(dims[0], dims[1]);
    const auto read_doubles = [&](std::vector<double>& v) {
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    read_doubles(f.tables.q_v);
    read_doubles(f.tables.q_t);
    in.read(reinterpret_cast<char*>(f.tables.visits.data()),
            static_cast<std::streamsize>(f.tables.visits.size() * sizeof(std::uint64_t)));
    std::vector<double> pol(static_cast<std::size_t>(dims[0]) * dims[1]);
    read_doubles(pol);
    f.ss_policy = StochasticPolicy(dims[0], dims[1]);
    for (int s = 0; s < dims[0]; ++s)
        f.ss_policy.set_row(s, {pol.data() + static_cast<std::size_t>(s) * dims[1],
                                static_cast<std::size_t>(dims[1])});
    std::uint8_t has_expl = 0;
    in.read(reinterpret_cast<char*>(&has_expl), sizeof(has_expl));
    f.has_exploratory = has_expl != 0;
    if (f.has_exploratory) {
        read_doubles(pol);
        f.exploratory = StochasticPolicy(dims[0], dims[1]);
        for (int s = 0; s < dims[0]; ++s)
            f.exploratory.set_row(s, {pol.data() + static_cast<std::size_t>(s) * dims[1],
                                      static_cast<std::size_t>(dims[1])});
    }
    in.read(reinterpret_cast<char*>(&f.epsilon), sizeof(f.epsilon));
    std::int64_t iter = 0;
    in.read(reinterpret_cast<char*>(&iter), sizeof(iter));
    f.iteration = iter;
    if (!in) throw std::runtime_error("load_qtables: truncated file " + path);
    return f;
}

// ---------------------------------------------------------------------------
// Experiment configuration and environment assembly
// ---------------------------------------------------------------------------

struct RunConfig {
    std::string mode = "tabular";  // tabular | deep
    std::string env = "chain";     // chain | integrator | integrator-cont
    std::vector<std::string> algos = {"baseline", "lss", "ess"};
    double alpha = 0.2;

    // tabular loop
    int iters = 50;
    long steps_per_iter = 100000;
    double explore_noise = 0.05;

    // deep loop
    long steps = 200000;
    long warmup_steps = -1;  // defaults to 10% of steps
    int batch = 128;
    int hidden1 = 400;
    int hidden2 = 300;
    long eval_every = 5000;
    double soft_tau = 5e-3;
    long replay_capacity = 1'000'000;
    std::string epsilon_agg = "min";

    // environment knobs (negative/zero means the env default)
    double dt = 0.1;
    int grid = 41;
    double slip_prob = 0.1;
    int chain_states = 5;
    int time_limit = 0;
    double gamma = 0.0;
    double start_pos = 0.0;  // integrator start box half-widths (0 = default)
    double start_vel = 0.0;

    std::uint64_t seed = 0;
};

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_run_config: cannot open " + path);
    nlohmann::json j;
    in >> j;
    RunConfig c;
    const auto get = [&j](const char* key, auto& slot) {
        if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
    };
    get("mode", c.mode);
    get("env", c.env);
    if (j.contains("algos")) c.algos = j.at("algos").get<std::vector<std::string>>();
    get("alpha", c.alpha);
    get("iters", c.iters);
    get("steps_per_iter", c.steps_per_iter);
    get("explore_noise", c.explore_noise);
    get("steps", c.steps);
    get("warmup_steps", c.warmup_steps);
    get("batch", c.batch);
    get("hidden1", c.hidden1);
    get("hidden2", c.hidden2);
    get("eval_every", c.eval_every);
    get("soft_tau", c.soft_tau);
    get("replay_capacity", c.replay_capacity);
    get("epsilon_agg", c.epsilon_agg);
    get("dt", c.dt);
    get("grid", c.grid);
    get("slip_prob", c.slip_prob);
    get("chain_states", c.chain_states);
    get("time_limit", c.time_limit);
    get("gamma", c.gamma);
    get("start_pos", c.start_pos);
    get("start_vel", c.start_vel);
    get("seed", c.seed);
    return c;
}

/// Environment, oracle ground truth and state coordinates assembled once per
/// experiment and shared across seeds.
struct EnvBundle {
    std::string name;
    FiniteMdp mdp;
    std::vector<int> start_states;
    int time_limit = 0;
    IntegratorConfig icfg;
    ChainWorldConfig ccfg;
    ValueTable vstar;        // over mdp states
    SafeSetEstimate truth;   // over mdp states
    SafeSetEstimate truth_grid;  // integrator grids: truth restricted to on-grid points

    bool is_integrator() const { return name != "chain"; }

    std::pair<double, double> coords(int s) const {
        if (!is_integrator()) return {static_cast<double>(s), 0.0};
        const IntegratorGrid grid{icfg};
        if (s >= grid.points())
            return {std::numeric_limits<double>::quiet_NaN(),
                    std::numeric_limits<double>::quiet_NaN()};
        const auto st = grid.state_of(s);
        return {st.pos, st.vel};
    }
};

inline EnvBundle make_env(const RunConfig& cfg) {
    EnvBundle env;
    env.name = cfg.env;
    if (cfg.env == "chain") {
        env.ccfg.num_states = cfg.chain_states;
        env.ccfg.slip_prob = cfg.slip_prob;
        if (cfg.time_limit > 0) env.ccfg.time_limit = cfg.time_limit;
        if (cfg.gamma > 0.0) env.ccfg.gamma = cfg.gamma;
        env.mdp = chain_world(env.ccfg);
        env.start_states = chain_start_states(env.mdp);
        env.time_limit = env.ccfg.time_limit;
    } else if (cfg.env == "integrator" || cfg.env == "integrator-cont") {
        env.icfg.dt = cfg.dt;
        env.icfg.grid = cfg.grid;
        if (cfg.env == "integrator-cont") {
            // compact starts: the continuous terminal box is tiny, so early
            // episodes must be able to stumble into it
            env.icfg.start_pos = 0.3;
            env.icfg.start_vel = 0.1;
        }
        if (cfg.time_limit > 0) env.icfg.time_limit = cfg.time_limit;
        if (cfg.gamma > 0.0) env.icfg.gamma = cfg.gamma;
        if (cfg.start_pos > 0.0) env.icfg.start_pos = cfg.start_pos;
        if (cfg.start_vel > 0.0) env.icfg.start_vel = cfg.start_vel;
        env.mdp = discretize_integrator(env.icfg);
        env.start_states = integrator_start_states(env.mdp, IntegratorGrid{env.icfg});
        env.time_limit = env.icfg.time_limit;
    } else {
        throw std::invalid_argument("make_env: unknown environment " + cfg.env);
    }

    env.vstar = optimal_unsafety(env.mdp, {1e-10, 1'000'000});
    env.truth = safe_set(env.vstar, cfg.alpha);
    if (env.is_integrator()) {
        const IntegratorGrid grid{env.icfg};
        env.truth_grid.alpha = cfg.alpha;
        env.truth_grid.source = SafeSetSource::Oracle;
        env.truth_grid.member.assign(env.truth.member.begin(),
                                     env.truth.member.begin() + grid.points());
    }
    return env;
}

/// Runs one (algo, seed) combination and, when out_dir is non-empty, writes
/// metrics.csv, the learned tables/weights and the estimated safe set there.
inline ExperimentRecord run_one(const EnvBundle& env, const RunConfig& cfg,
                                const std::string& algo, std::uint64_t seed,
                                const std::string& out_dir = {}) {
    namespace fs = std::filesystem;
    if (!out_dir.empty()) fs::create_directories(out_dir);

    ExperimentRecord record;
    if (cfg.mode == "tabular") {
        TabularConfig tc;
        tc.algo = algo_from_name(algo);
        tc.alpha = cfg.alpha;
        tc.iterations = cfg.iters;
        tc.steps_per_iter = cfg.steps_per_iter;
        tc.explore_noise = cfg.explore_noise;
        tc.seed = seed;
        auto result = run_tabular(MdpSimulator(env.mdp, env.start_states, env.time_limit),
                                  env.truth, tc, env.name);
        record = std::move(result.record);

        if (!out_dir.empty()) {
            const auto& last = result.history.back();
            QTablesFile qf;
            qf.tables = last.tables;
            qf.ss_policy = last.ss_policy;
            qf.has_exploratory = tc.algo == Algo::Ess;
            qf.exploratory = last.exploratory_policy;
            qf.epsilon = last.epsilon;
            qf.iteration = last.iteration;
            save_qtables(qf, (fs::path(out_dir) / "qtables.bin").string());

            const auto est = estimated_safe_set(last.tables, last.ss_policy, cfg.alpha);
            std::vector<SafeSetRow> rows;
            for (int s = 0; s < env.mdp.num_states(); ++s) {
                const auto [c0, c1] = env.coords(s);
                rows.push_back({s, c0, c1, last.tables.expected_qv(s, last.ss_policy),
                                est.member[s] ? 1 : 0});
            }
            write_safe_set_csv(rows, (fs::path(out_dir) / "safe_set.csv").string());
        }
    } else if (cfg.mode == "deep") {
        if (env.name != "integrator-cont")
            throw std::invalid_argument("run_one: deep mode requires env integrator-cont");
        DeepConfig dc;
        dc.algo = algo_from_name(algo);
        dc.alpha = cfg.alpha;
        dc.total_steps = cfg.steps;
        dc.warmup_steps = cfg.warmup_steps >= 0 ? cfg.warmup_steps : cfg.steps / 10;
        dc.batch = cfg.batch;
        dc.hidden1 = cfg.hidden1;
        dc.hidden2 = cfg.hidden2;
        dc.eval_every = cfg.eval_every;
        dc.soft_tau = cfg.soft_tau;
        dc.replay_capacity = cfg.replay_capacity;
        dc.epsilon_agg = cfg.epsilon_agg == "mean" ? EpsilonAgg::Mean : EpsilonAgg::Min;
        dc.seed = seed;
        auto result = run_actor_critic(Integrator(env.icfg), env.truth_grid, dc);
        record = std::move(result.record);

        if (!out_dir.empty()) {
            save_weights(result.bundle, (fs::path(out_dir) / "weights.bin").string());
            const IntegratorGrid grid{env.icfg};
            std::vector<double> grid_states(static_cast<std::size_t>(grid.points()) * 2);
            for (int i = 0; i < grid.points(); ++i) {
                const auto gs = grid.state_of(i);
                grid_states[2 * i] = gs.pos;
                grid_states[2 * i + 1] = gs.vel;
            }
            const auto values = deep_values(result.bundle, grid_states, grid.points());
            std::vector<SafeSetRow> rows;
            for (int s = 0; s < grid.points(); ++s) {
                const auto [c0, c1] = env.coords(s);
                rows.push_back({s, c0, c1, values[s], values[s] <= cfg.alpha ? 1 : 0});
            }
            write_safe_set_csv(rows, (fs::path(out_dir) / "safe_set.csv").string());
        }
    } else {
        throw std::invalid_argument("run_one: unknown mode " + cfg.mode);
    }

    if (!out_dir.empty())
        write_metrics_csv(record, (std::filesystem::path(out_dir) / "metrics.csv").string());
    return record;
}

/// Runs every (algo, seed) combination on a small worker pool, writes per-run
/// outputs under out_dir/<algo>/seed<k>/ and one aggregate.csv per algorithm.
/// A failed child run aborts the suite with the failing combination named.
inline std::map<std::string, std::vector<ExperimentRecord>> run_suite(
    const RunConfig& cfg, const std::vector<std::uint64_t>& seeds, const std::string& out_dir,
    int max_workers = 0) {
    namespace fs = std::filesystem;
    const EnvBundle env = make_env(cfg);

    struct Job {
        std::string algo;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto& algo : cfg.algos)
        for (const auto seed : seeds) jobs.push_back({algo, seed});

    const int workers = max_workers > 0
                            ? max_workers
                            : std::max(1u, std::thread::hardware_concurrency());
    std::map<std::string, std::vector<ExperimentRecord>> by_algo;
    for (std::size_t begin = 0; begin < jobs.size(); begin += workers) {
        const std::size_t end = std::min(jobs.size(), begin + workers);
        std::vector<std::future<ExperimentRecord>> futures;
        for (std::size_t i = begin; i < end; ++i) {
            const Job job = jobs[i];
            const std::string run_dir =
                out_dir.empty() ? std::string{}
                                : (fs::path(out_dir) / job.algo / ("seed" + std::to_string(job.seed)))
                                      .string();
            futures.push_back(std::async(std::launch::async, [&env, &cfg, job, run_dir] {
                return run_one(env, cfg, job.algo, job.seed, run_dir);
            }));
        }
        for (std::size_t i = begin; i < end; ++i) {
            try {
                by_algo[jobs[i].algo].push_back(futures[i - begin].get());
            } catch (const std::exception& e) {
                throw std::runtime_error("run_suite: child run failed (algo=" + jobs[i].algo +
                                         ", seed=" + std::to_string(jobs[i].seed) +
                                         "): " + e.what());
            }
        }
    }

    for (auto& [algo, records] : by_algo) {
        const auto agg = aggregate_records(records);
        if (!out_dir.empty())
            write_aggregate_csv(agg, (fs::path(out_dir) / algo / "aggregate.csv").string());
    }
    return by_algo;
}

}  // namespace safeset
