// Command-line front end: exact safe-set oracle, tabular/deep training runs,
// specification metrics, multi-seed suites and plot-data extraction.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "safeset/safeset.hpp"

namespace {

using namespace safeset;

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    const auto dots = text.find("..");
    if (dots != std::string::npos) {
        const std::uint64_t lo = std::stoull(text.substr(0, dots));
        const std::uint64_t hi = std::stoull(text.substr(dots + 2));
        for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
        return seeds;
    }
    std::stringstream ss(text);
    std::string field;
    while (std::getline(ss, field, ',')) seeds.push_back(std::stoull(field));
    if (seeds.empty()) throw CLI::ValidationError("--seeds", "no seeds given");
    return seeds;
}

int cmd_oracle(const std::string& mdp_path, const std::string& env_name, RunConfig cfg,
               double alpha, double tol, const std::string& out) {
    ValueTable vstar;
    std::vector<SafeSetRow> rows;
    if (!mdp_path.empty()) {
        const auto mdp = load_mdp(mdp_path);
        vstar = optimal_unsafety(mdp, {tol, 1'000'000});
        const auto set = safe_set(vstar, alpha);
        for (int s = 0; s < mdp.num_states(); ++s)
            rows.push_back({s, static_cast<double>(s), 0.0, vstar.values[s],
                            set.member[s] ? 1 : 0});
    } else {
        cfg.env = env_name;
        cfg.alpha = alpha;
        const auto env = make_env(cfg);
        const auto set = safe_set(env.vstar, alpha);
        for (int s = 0; s < env.mdp.num_states(); ++s) {
            const auto [c0, c1] = env.coords(s);
            rows.push_back({s, c0, c1, env.vstar.values[s], set.member[s] ? 1 : 0});
        }
        vstar = env.vstar;
    }
    write_safe_set_csv(rows, out);
    std::size_t count = 0;
    for (const auto& r : rows) count += r.in_safe_set;
    std::cout << "oracle: " << rows.size() << " states, |S*(" << alpha << ")| = " << count
              << ", residual " << format_g9(vstar.residual) << ", wrote " << out << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& algo, std::uint64_t seed,
              const std::string& out_dir) {
    const auto env = make_env(cfg);
    const auto record = run_one(env, cfg, algo, seed, out_dir);
    const auto& last = record.rows.back();
    std::cout << "train " << cfg.mode << "/" << algo << " on " << cfg.env << " seed " << seed
              << ": r_c " << format_g9(last.r_c) << ", r_fp " << format_g9(last.r_fp) << ", aes "
              << format_g9(last.aes) << " -> " << out_dir << "\n";
    return 0;
}

int cmd_metrics(const std::string& estimate_path, const std::string& truth_path,
                const std::string& out) {
    const auto est_rows = read_safe_set_csv(estimate_path);
    const auto truth_rows = read_safe_set_csv(truth_path);
    if (est_rows.size() != truth_rows.size())
        throw std::runtime_error("metrics: estimate and truth cover different state sets");

    SafeSetEstimate est, truth;
    est.member.resize(est_rows.size());
    truth.member.resize(truth_rows.size());
    for (std::size_t i = 0; i < est_rows.size(); ++i) {
        if (est_rows[i].state_index != truth_rows[i].state_index)
            throw std::runtime_error("metrics: state index mismatch between files");
        est.member[i] = est_rows[i].in_safe_set ? 1 : 0;
        truth.member[i] = truth_rows[i].in_safe_set ? 1 : 0;
    }

    nlohmann::json j;
    j["r_c"] = ratio_correct(est, truth);
    j["r_fp"] = ratio_false_positive(est, truth, truth.member.size());
    j["total_states"] = truth.member.size();
    j["truth_count"] = truth.count();
    j["estimate_count"] = est.count();
    std::ofstream fout(out);
    if (!fout) throw std::runtime_error("metrics: cannot open " + out);
    fout << j.dump(1) << "\n";
    std::cout << "metrics: r_c " << format_g9(j["r_c"].get<double>()) << ", r_fp "
              << format_g9(j["r_fp"].get<double>()) << " -> " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"safeset: probabilistic safe sets for MDPs via exact DP and safe RL"};
    app.require_subcommand(1);

    // shared flags filled per subcommand
    RunConfig cfg;
    std::string config_path, mdp_path, env_name = "chain", algo = "lss", out;
    std::string estimate_path, truth_path, seeds_text = "0", metric = "r_c", in_path;
    std::uint64_t seed = 0;
    double alpha = 0.2, tol = 1e-10;

    const auto add_env_flags = [&](CLI::App* cmd) {
        cmd->add_option("--dt", cfg.dt, "integrator time step");
        cmd->add_option("--grid", cfg.grid, "grid points per axis");
        cmd->add_option("--slip-prob", cfg.slip_prob, "chain slip probability");
        cmd->add_option("--chain-states", cfg.chain_states, "chain length");
        cmd->add_option("--time-limit", cfg.time_limit, "episode time limit (0 = env default)");
        cmd->add_option("--gamma", cfg.gamma, "discount factor (0 = env default)");
    };

    auto* oracle = app.add_subcommand("oracle", "exact maximal safe set via value iteration");
    oracle->add_option("--mdp", mdp_path, "serialized MDP file");
    oracle->add_option("--env", env_name, "built-in environment (chain | integrator)");
    oracle->add_option("--alpha", alpha, "unsafety tolerance")->capture_default_str();
    oracle->add_option("--tol", tol, "value-iteration stopping tolerance")->capture_default_str();
    oracle->add_option("--out", out, "output CSV")->default_val("safe_set.csv");
    add_env_flags(oracle);

    auto* train = app.add_subcommand("train", "single training run");
    train->add_option("--mode", cfg.mode, "tabular | deep")->capture_default_str();
    train->add_option("--algo", algo, "baseline | lss | ess")->capture_default_str();
    train->add_option("--env", cfg.env, "chain | integrator | integrator-cont")
        ->capture_default_str();
    train->add_option("--alpha", alpha, "unsafety tolerance")->capture_default_str();
    train->add_option("--iters", cfg.iters, "policy improvement iterations (tabular)")
        ->capture_default_str();
    train->add_option("--steps-per-iter", cfg.steps_per_iter, "environment steps per iteration")
        ->capture_default_str();
    train->add_option("--steps", cfg.steps, "total environment steps (deep)")
        ->capture_default_str();
    train->add_option("--warmup-steps", cfg.warmup_steps, "critic-only steps (deep, -1 = 10%)");
    train->add_option("--batch", cfg.batch, "minibatch size (deep)");
    train->add_option("--hidden1", cfg.hidden1, "first hidden width (deep)");
    train->add_option("--hidden2", cfg.hidden2, "second hidden width (deep)");
    train->add_option("--eval-every", cfg.eval_every, "gradient steps between metric rows (deep)");
    train->add_option("--epsilon-agg", cfg.epsilon_agg, "epsilon ring aggregation: min | mean");
    train->add_option("--seed", seed, "run seed")->capture_default_str();
    train->add_option("--out", out, "output directory")->required();
    train->add_option("--config", config_path, "JSON config file (flags override)");
    add_env_flags(train);

    auto* metrics = app.add_subcommand("metrics", "compare a safe-set estimate against a truth set");
    metrics->add_option("--estimate", estimate_path, "estimated safe_set.csv")->required();
    metrics->add_option("--truth", truth_path, "oracle safe_set.csv")->required();
    metrics->add_option("--out", out, "output JSON")->default_val("metrics.json");

    auto* suite = app.add_subcommand("suite", "multi-seed experiment suite with aggregation");
    suite->add_option("--config", config_path, "JSON suite config")->required();
    suite->add_option("--seeds", seeds_text, "seed range a..b or comma list")
        ->capture_default_str();
    suite->add_option("--out", out, "output directory")->required();

    auto* plotdata = app.add_subcommand("plotdata", "extract one metric from an aggregate CSV");
    plotdata->add_option("--in", in_path, "aggregate.csv")->required();
    plotdata->add_option("--metric", metric, "r_c | r_fp | aes | epsilon")->capture_default_str();
    plotdata->add_option("--out", out, "output CSV")->required();

    auto* export_mdp = app.add_subcommand("export-mdp", "write a built-in environment's MDP file");
    export_mdp->add_option("--env", env_name, "chain | integrator")->capture_default_str();
    export_mdp->add_option("--out", out, "output file")->required();
    add_env_flags(export_mdp);

    // a config file seeds the train configuration; explicit flags then override
    if (argc > 1 && std::string(argv[1]) == "train") {
        for (int i = 2; i + 1 < argc; ++i) {
            if (std::string(argv[i]) == "--config") {
                try {
                    cfg = load_run_config(argv[i + 1]);
                } catch (const std::exception& e) {
                    std::cerr << "error: " << e.what() << "\n";
                    return 1;
                }
                break;
            }
        }
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (oracle->parsed()) return cmd_oracle(mdp_path, env_name, cfg, alpha, tol, out);
        if (train->parsed()) {
            cfg.alpha = alpha;
            return cmd_train(cfg, algo, seed, out);
        }
        if (metrics->parsed()) return cmd_metrics(estimate_path, truth_path, out);
        if (suite->parsed()) {
            RunConfig sc = load_run_config(config_path);
            const auto seeds = parse_seeds(seeds_text);
            const auto by_algo = run_suite(sc, seeds, out);
            for (const auto& [name, records] : by_algo) {
                double mean_rc = 0.0;
                for (const auto& r : records) mean_rc += r.rows.back().r_c;
                mean_rc /= static_cast<double>(records.size());
                std::cout << "suite " << name << ": " << records.size()
                          << " seeds, final mean r_c " << format_g9(mean_rc) << "\n";
            }
            std::cout << "suite: outputs under " << out << "\n";
            return 0;
        }
        if (plotdata->parsed()) {
            write_plot_csv(read_aggregate_csv(in_path), metric, out);
            std::cout << "plotdata: " << metric << " -> " << out << "\n";
            return 0;
        }
        if (export_mdp->parsed()) {
            cfg.env = env_name;
            const auto env = make_env(cfg);
            save_mdp(env.mdp, out);
            std::cout << "export-mdp: " << env.mdp.num_states() << " states -> " << out << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
