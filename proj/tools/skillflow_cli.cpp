#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "skillflow/cli.hpp"
#include "skillflow/config.hpp"

using namespace skillflow;

int main(int argc, char** argv) {
    CLI::App app{"SkillFlow: tempered trajectory balance with flow-driven skill evolution"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    int workers = 1;

    auto load = [&]() {
        RunConfig cfg = config_path.empty() ? parse_config("") : load_config(config_path);
        if (seed) cfg.seed = *seed;
        return cfg;
    };

    auto* train = app.add_subcommand("train", "run the phase loop and write metrics, trajectories, curation log, checkpoint");
    train->add_option("--config", config_path, "run config file")->check(CLI::ExistingFile);
    train->add_option("--seed", seed, "override the config seed");
    train->add_option("--out", out_dir, "output directory (default: config output_dir)");
    train->add_option("--workers", workers, "rollout worker threads")->check(CLI::PositiveNumber);

    auto* verify = app.add_subcommand("verify", "check the exact flow oracle identities on every task");
    std::vector<double> betas{1.0, 2.0, 5.0};
    std::uint64_t rollouts = 100000;
    bool fault = false;
    verify->add_option("--config", config_path, "run config file")->check(CLI::ExistingFile);
    verify->add_option("--seed", seed, "override the config seed");
    verify->add_option("--beta", betas, "temperatures to check");
    verify->add_option("--rollouts", rollouts, "Monte-Carlo rollouts for the sampling check (0 skips it)");
    verify->add_flag("--inject-fault", fault, "perturb the root flow before the conservation check");
    verify->add_option("--workers", workers, "ignored (verification is single-threaded)");

    std::string task_id;
    std::string dag_out;
    auto add_dag = [&](CLI::App* c) {
        c->add_option("--config", config_path, "run config file")->check(CLI::ExistingFile);
        c->add_option("--task", task_id, "task id (default: first task)");
        c->add_option("--out", dag_out, "output file (default: stdout)");
    };
    auto* dump = app.add_subcommand("dump-dag", "emit the enumerated DAG as JSON lines");
    add_dag(dump);
    auto* enumerate_cmd = app.add_subcommand("enumerate", "alias of dump-dag");
    add_dag(enumerate_cmd);

    auto* diagnose = app.add_subcommand("diagnose", "per-step credit and per-skill CGF stats from trajectories.jsonl");
    std::string input;
    diagnose->add_option("input", input, "trajectories.jsonl")->required()->check(CLI::ExistingFile);
    diagnose->add_option("--out", dag_out, "output file (default: stdout)");

    auto* q4 = app.add_subcommand("fixture-q4", "recompute the per-step importance table fixture");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            RunConfig cfg = load();
            return cmd_train(cfg, out_dir.empty() ? cfg.output_dir : out_dir, workers, std::cerr);
        }
        if (*verify) {
            VerifyOptions opt;
            opt.betas = betas;
            opt.rollouts = rollouts;
            opt.inject_flow_fault = fault;
            const auto checks = cmd_verify(load(), opt, std::cout);
            for (const auto& c : checks)
                if (!c.pass) return 1;
            return 0;
        }
        if (*dump || *enumerate_cmd) {
            RunConfig cfg = load();
            const std::string id = task_id.empty() ? cfg.env.tasks.front().id : task_id;
            if (dag_out.empty()) {
                cmd_dump_dag(cfg, id, std::cout);
            } else {
                std::ofstream f(dag_out);
                cmd_dump_dag(cfg, id, f);
            }
            return 0;
        }
        if (*diagnose) {
            std::ifstream in(input);
            if (dag_out.empty()) {
                cmd_diagnose(in, std::cout);
            } else {
                std::ofstream f(dag_out);
                cmd_diagnose(in, f);
            }
            return 0;
        }
        if (*q4) return cmd_fixture_q4(std::cout) ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
