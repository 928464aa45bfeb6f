#include "skillflow/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>

#include "skillflow/flow_oracle.hpp"
#include "skillflow/io.hpp"
#include "skillflow/numeric.hpp"

namespace skillflow {

std::string MetricsRow::csv() const {
    std::string s = std::to_string(step);
    for (double v : {loss_ttb, mean_reward, mean_abs_delta, flow_entropy, logz_mean}) s += "," + format_double(v);
    s += "," + std::to_string(library_size);
    s += "," + format_double(grad_norm_theta) + "," + format_double(grad_norm_phi);
    s += plateau_flag ? ",1" : ",0";
    return s;
}

double mean_root_entropy(const PolicyParams& p, const Environment& env, const SkillLibrary& lib) {
    CompensatedSum s;
    int n = 0;
    for (const auto& t : env.tasks()) {
        const History h = env.reset(t.id);
        if (env.is_terminal(h)) continue;
        s.add(flow_entropy(p, env, lib, h));
        ++n;
    }
    return n ? s.value() / n : 0.0;
}

Runner::Runner(RunConfig cfg, int workers) : cfg_(std::move(cfg)), workers_(workers), env_(cfg_.env) {
    cfg_.validate();
    state_.params = make_params(cfg_);
    state_.library = make_library(cfg_);
    done_ = cfg_.max_steps <= 0;
}

bool Runner::step() {
    if (done_) return false;
    const auto& ttb = cfg_.ttb;
    const PolicyParams snapshot = state_.params;
    last_batch_ = collect_batch(snapshot, env_, state_.library, ttb, cfg_.seed, static_cast<std::uint64_t>(step_), workers_);

    StepMetrics m;
    std::vector<ResidualRecord> records;
    if (cfg_.trainer == TrainerKind::Ttb) {
        m = train_step(last_batch_, state_.params, state_.opt, env_, state_.library, ttb);
        records = m.records;
    } else {
        for (const auto& tau : last_batch_) records.push_back(ttb_residual(tau, snapshot, env_, state_.library, ttb));
        m = cfg_.trainer == TrainerKind::Reinforce
                ? reinforce_step(last_batch_, state_.params, state_.opt, env_, state_.library, ttb)
                : grpo_step(last_batch_, state_.params, state_.opt, env_, state_.library, ttb);
        CompensatedSum loss, absd, d2;
        for (const auto& r : records) {
            loss.add(r.loss);
            absd.add(std::fabs(r.delta));
            d2.add(r.delta * r.delta);
        }
        const double n = static_cast<double>(records.size());
        m.loss = loss.value() / n;
        m.mean_abs_delta = absd.value() / n;
        m.mean_delta_sq = d2.value() / n;
    }

    std::vector<LoggedTrajectory> logs;
    for (std::size_t i = 0; i < last_batch_.size(); ++i)
        logs.push_back(make_log(last_batch_[i], records[i].log_z, records[i].per_step_forward_lp,
                                records[i].per_step_backward_lp));
    window_logs_.push_back(std::move(logs));
    while (window_logs_.size() > static_cast<std::size_t>(ttb.window_W)) window_logs_.pop_front();

    state_.plateau_history.push_back(m.mean_delta_sq);
    const auto need = static_cast<std::size_t>((ttb.consecutive_M + 1) * ttb.window_W);
    const bool plateau = state_.plateau_history.size() >= need && plateau_detect(state_.plateau_history, ttb);

    MetricsRow row;
    row.step = step_;
    row.loss_ttb = m.loss;
    row.mean_reward = m.mean_reward;
    row.mean_abs_delta = m.mean_abs_delta;
    row.flow_entropy = mean_root_entropy(state_.params, env_, state_.library);
    CompensatedSum lz;
    for (const auto& [task, v] : state_.params.log_partition) lz.add(v);
    row.logz_mean = state_.params.log_partition.empty() ? 0.0 : lz.value() / state_.params.log_partition.size();
    row.library_size = state_.library.size();
    row.grad_norm_theta = m.grad_norm_theta;
    row.grad_norm_phi = m.grad_norm_phi;
    row.plateau_flag = plateau;
    last_row_ = row;
    last_metrics_ = std::move(m);
    last_records_ = std::move(records);
    if (on_step) on_step(*this);

    if (plateau) {
        CompensatedSum lvl;
        const auto& h = state_.plateau_history;
        for (std::size_t i = h.size() - ttb.window_W; i < h.size(); ++i) lvl.add(h[i]);
        plateaus_.push_back({step_, state_.library.phase, lvl.value() / ttb.window_W});
        if (cfg_.curation_enabled && cfg_.trainer == TrainerKind::Ttb && phases_ < cfg_.max_phases) {
            std::vector<LoggedTrajectory> batch;
            for (const auto& b : window_logs_) batch.insert(batch.end(), b.begin(), b.end());
            const auto stats = library_stats(batch, state_.library);
            const auto pairs = build_pairs(batch, cfg_.curation);
            CurationEvent ev;
            ev.step = step_;
            ev.before = state_.library;
            ev.result = curate(state_.library, stats, batch, pairs, cfg_.curation, env_.alphabet());
            phase_transition(state_, ev.result.library, cfg_.warm_logz);
            window_logs_.clear();
            ++phases_;
            curations_.push_back(ev);
            if (on_curation) on_curation(curations_.back());
        } else if (cfg_.stop_on_plateau) {
            done_ = true;
        } else {
            state_.plateau_history.clear();  // re-arm instead of firing every step
        }
    }
    ++step_;
    if (step_ >= cfg_.max_steps) done_ = true;
    return true;
}

void Runner::run() {
    while (step()) {
    }
}

int cmd_train(const RunConfig& cfg, const std::string& out_dir, int workers, std::ostream& log) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::ofstream metrics(fs::path(out_dir) / "metrics.csv");
    std::ofstream traj(fs::path(out_dir) / "trajectories.jsonl");
    std::ofstream cur(fs::path(out_dir) / "curation.jsonl");
    if (!metrics || !traj || !cur) throw std::runtime_error("cannot open outputs in " + out_dir);
    metrics << kMetricsHeader << '\n';

    Runner runner(cfg, workers);
    runner.on_step = [&](const Runner& r) {
        metrics << r.last_row().csv() << '\n';
        const int every = r.config().trajectory_log_every;
        if (every > 0 && r.steps_done() % every == 0) {
            const auto& batch = r.last_batch();
            for (std::size_t i = 0; i < batch.size(); ++i)
                traj << trajectory_record(static_cast<std::uint64_t>(r.steps_done()), static_cast<int>(i), batch[i],
                                          r.last_records()[i])
                            .dump()
                     << '\n';
        }
    };
    runner.on_curation = [&](const CurationEvent& ev) {
        cur << curation_record(static_cast<std::uint64_t>(ev.step), ev.before, ev.result).dump() << '\n';
        log << "step " << ev.step << ": phase " << ev.before.phase << " -> " << ev.result.library.phase
            << ", library " << ev.before.size() << " -> " << ev.result.library.size() << '\n';
    };
    runner.run();

    std::ofstream ckpt(fs::path(out_dir) / "checkpoint.txt");
    write_checkpoint(ckpt, runner.state().params, runner.state().library);
    log << "trained " << runner.steps_done() << " steps; final loss " << format_double(runner.last_row().loss_ttb)
        << "; outputs in " << out_dir << '\n';
    return 0;
}

std::vector<CheckResult> cmd_verify(const RunConfig& cfg, const VerifyOptions& opt, std::ostream& out) {
    const Environment env(cfg.env);
    const SkillLibrary lib = make_library(cfg);
    const double eps = cfg.ttb.eps_min;
    std::vector<CheckResult> checks;
    auto add = [&](std::string name, double value, double tol, bool pass) {
        checks.push_back({std::move(name), value, tol, pass});
        const auto& c = checks.back();
        out << (c.pass ? "PASS " : "FAIL ") << c.name << " value=" << format_double(c.value)
            << " tol=" << format_double(c.tolerance) << '\n';
    };
    for (const auto& task : env.tasks()) {
        const EnumeratedDag dag = enumerate(env, task.id, lib, cfg.node_budget);
        out << "task " << task.id << ": " << dag.nodes.size() << " nodes, " << dag.edges.size() << " edges, "
            << dag.terminals.size() << " terminals\n";
        add(task.id + " tree", dag.is_tree() ? 0.0 : 1.0, 0.0, dag.is_tree());
        for (double beta : opt.betas) {
            const std::string tag = task.id + " beta=" + format_double(beta) + " ";
            ExactFlow flow = exact_state_flow(dag, beta, eps);
            const ExactFlow other = descendant_sum_flow(dag, beta, eps);
            double uniq = 0.0;
            for (std::size_t i = 0; i < flow.flow.size(); ++i)
                uniq = std::max(uniq, std::fabs(flow.flow[i] - other.flow[i]) / std::max(flow.flow[i], 1e-300));
            add(tag + "uniqueness", uniq, 1e-12, uniq <= 1e-12);

            ExactFlow checked = flow;
            if (opt.inject_flow_fault) checked.set_flow(dag.root, checked.flow[dag.root] + 0.5);
            const double cons = verify_conservation(checked, dag);
            const double cons_tol = 1e-12 * std::max(1.0, flow.z);
            add(tag + "conservation", cons, cons_tol, cons <= cons_tol);

            const EdgePolicies pol = oracle_policies(flow, dag);
            const double db = verify_detailed_balance(pol.forward, pol.backward, flow, dag);
            add(tag + "detailed_balance", db, 1e-10, db <= 1e-10);

            const double fd = flow_decomposition_check(flow, dag);
            const double fd_tol = 1e-10 * std::max(1.0, flow.z);
            add(tag + "flow_decomposition", fd, fd_tol, fd <= fd_tol);

            double tb = 0.0;
            for (std::size_t k = 0; k < dag.trajectories.size(); ++k) {
                std::vector<double> f, b;
                for (int e : dag.trajectories[k]) {
                    f.push_back(std::log(pol.forward[e]));
                    b.push_back(std::log(pol.backward[e]));
                }
                const double r = smooth_reward(dag.nodes[dag.trajectory_terminal[k]].reward, eps);
                tb = std::max(tb, std::fabs(tb_residual(flow.log_z, f, b, beta, r)));
            }
            add(tag + "trajectory_balance", tb, 1e-10, tb < 1e-10);

            const auto target = target_distribution(dag, beta, eps);
            const double norm = std::fabs(compensated_sum(target) - 1.0);
            add(tag + "target_normalized", norm, 1e-12, norm <= 1e-12);
            const auto soft = soft_optimal_distribution(dag, beta, eps);
            double rl = 0.0;
            for (std::size_t k = 0; k < target.size(); ++k) rl = std::max(rl, std::fabs(target[k] - soft[k]));
            add(tag + "rl_equivalence", rl, 1e-12, rl <= 1e-12);

            if (opt.rollouts > 0) {
                const auto rep = sampling_check(dag, flow, opt.rollouts, cfg.seed, beta, eps);
                add(tag + "sampling_max_z", rep.max_abs_z, rep.family_threshold(3.0), rep.within(3.0));
            }
        }
    }
    bool all = true;
    for (const auto& c : checks) all = all && c.pass;
    out << (all ? "ALL PASS" : "SOME CHECKS FAILED") << '\n';
    return checks;
}

void cmd_dump_dag(const RunConfig& cfg, const std::string& task_id, std::ostream& out) {
    const Environment env(cfg.env);
    const SkillLibrary lib = make_library(cfg);
    const EnumeratedDag dag = enumerate(env, task_id, lib, cfg.node_budget);
    const ExactFlow flow = exact_state_flow(dag, cfg.ttb.beta, cfg.ttb.eps_min);
    for (std::size_t i = 0; i < dag.nodes.size(); ++i) {
        nlohmann::ordered_json j;
        j["type"] = "node";
        j["key"] = dag.nodes[i].key;
        j["depth"] = dag.nodes[i].depth;
        j["terminal"] = dag.nodes[i].terminal;
        j["flow"] = flow.flow[i];
        out << j.dump() << '\n';
    }
    for (const auto& e : dag.edges) {
        nlohmann::ordered_json j;
        j["type"] = "edge";
        j["parent"] = dag.nodes[e.parent].key;
        j["action"] = e.action.label();
        j["child"] = dag.nodes[e.child].key;
        out << j.dump() << '\n';
    }
}

void cmd_diagnose(std::istream& in, std::ostream& out, const MarkerThresholds& markers) {
    std::map<long, std::vector<LoggedTrajectory>> by_step;
    std::map<long, std::vector<int>> slots;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto rec = nlohmann::json::parse(line);
        const long step = rec.at("step").get<long>();
        const int slot = rec.value("slot", static_cast<int>(by_step[step].size()));
        LoggedTrajectory tau = logged_from_record(rec);
        for (const auto& c : step_credits(tau)) {
            nlohmann::ordered_json j;
            j["type"] = "credit";
            j["step"] = step;
            j["slot"] = slot;
            j["task"] = tau.task_id;
            j["t"] = c.t;
            j["log_importance"] = c.log_importance;
            j["importance"] = std::exp(c.log_importance);
            j["log_state_flow"] = c.log_state_flow;
            j["marker"] = importance_marker(c.log_importance, markers);
            out << j.dump() << '\n';
        }
        by_step[step].push_back(std::move(tau));
        slots[step].push_back(slot);
    }
    for (const auto& [step, batch] : by_step) {
        SkillLibrary seen;
        std::set<std::string> ids;
        for (const auto& tau : batch)
            for (const auto& st : tau.steps)
                if (st.kind == ActionKind::Skill && ids.insert(st.payload).second)
                    seen.insert(Skill{st.payload, st.emitted, 0, 0, ""});
        for (const auto& [id, stats] : library_stats(batch, seen)) {
            auto j = skill_stats_record(stats);
            j["type"] = "skill_stats";
            j["step"] = step;
            out << j.dump() << '\n';
        }
    }
}

const std::vector<Q4Row>& q4_rows() {
    static const std::vector<Q4Row> rows = {
        {0, 0.00, 0.00, 1.00, -2.30},       {1, 0.00, 0.00, 1.00, -2.30},
        {2, -19.41, -12.50, 0.001, -9.21},  {3, -6.86, -14.20, 1500, -1.90},
        {4, -5.30, -14.05, 6300, 6.85},     {5, -4.79, -12.80, 3000, 14.86},
        {6, -5.30, -14.46, 9500, 24.02},    {7, -5.10, -13.91, 6700, 32.83},
        {8, -5.92, -13.39, 1750, 40.30},    {9, -5.16, -12.81, 2100, 47.95},
    };
    return rows;
}

bool cmd_fixture_q4(std::ostream& out) {
    std::vector<double> li;
    for (const auto& r : q4_rows()) li.push_back(log_step_importance(r.log_pi, r.log_pphi));
    const auto flows = telescope_log_flow(li, kQ4LogZ);
    bool ok = true;
    out << "step  log_I     I_recomputed  I_table   rel_err   logF_recomputed  logF_table  marker\n";
    for (std::size_t i = 0; i < q4_rows().size(); ++i) {
        const auto& r = q4_rows()[i];
        const double imp = std::exp(li[i]);
        const double rel = std::fabs(imp - r.tabulated_importance) / r.tabulated_importance;
        const bool row_ok = rel <= 0.05;
        ok = ok && row_ok;
        out << std::setw(4) << r.step << "  " << std::fixed << std::setprecision(2) << std::setw(7) << li[i] << "  "
            << std::setw(12) << std::setprecision(4) << imp << "  " << std::setw(8) << r.tabulated_importance << "  "
            << std::setw(7) << std::setprecision(4) << rel << "  " << std::setw(15) << std::setprecision(2)
            << flows[i] << "  " << std::setw(10) << r.tabulated_log_flow << "  " << importance_marker(li[i])
            << (row_ok ? "" : "  <- importance outside 5%") << '\n';
    }
    out << std::defaultfloat;
    const double final_flow = flows.back();
    const bool final_ok = std::fabs(final_flow - kQ4FinalLogFlow) <= 0.05;
    out << "final log-flow " << std::fixed << std::setprecision(4) << final_flow << " vs " << kQ4FinalLogFlow
        << (final_ok ? " (within 0.05)" : " (OUTSIDE 0.05)") << '\n'
        << std::defaultfloat;
    ok = ok && final_ok;
    out << (ok ? "PASS" : "FAIL") << '\n';
    return ok;
}

}  // namespace skillflow
