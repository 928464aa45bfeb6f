#include "skillflow/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "skillflow/numeric.hpp"

namespace skillflow {

LoggedTrajectory make_log(const Trajectory& tau, double log_z, const std::vector<double>& fwd_lp,
                          const std::vector<double>& bwd_lp) {
    const auto& steps = tau.history.steps;
    if (fwd_lp.size() != steps.size() || bwd_lp.size() != steps.size())
        throw std::invalid_argument("log-prob count does not match trajectory length");
    LoggedTrajectory out;
    out.task_id = tau.history.task_id;
    out.log_z = log_z;
    out.reward = tau.reward;
    out.emitted = tau.history.emitted;
    for (std::size_t t = 0; t < steps.size(); ++t)
        out.steps.push_back({steps[t].action.kind, steps[t].action.payload, steps[t].action.emitted(), fwd_lp[t], bwd_lp[t]});
    return out;
}

double step_importance(double fwd_lp, double bwd_lp) { return std::exp(fwd_lp - bwd_lp); }
double log_step_importance(double fwd_lp, double bwd_lp) { return fwd_lp - bwd_lp; }

std::vector<double> telescope_log_flow(std::span<const double> log_importances, double log_z) {
    std::vector<double> out;
    out.reserve(log_importances.size());
    CompensatedSum s;
    s.add(log_z);
    for (double li : log_importances) {
        s.add(li);
        out.push_back(s.value());
    }
    return out;
}

std::vector<StepCredit> step_credits(const LoggedTrajectory& tau) {
    std::vector<double> li;
    for (const auto& st : tau.steps) li.push_back(log_step_importance(st.fwd_lp, st.bwd_lp));
    const auto flows = telescope_log_flow(li, tau.log_z);
    std::vector<StepCredit> out;
    for (std::size_t t = 0; t < li.size(); ++t) out.push_back({static_cast<int>(t), li[t], flows[t]});
    return out;
}

std::vector<std::vector<double>> skill_visits(const std::vector<LoggedTrajectory>& batch, const std::string& skill_id) {
    std::vector<std::vector<double>> out;
    for (const auto& tau : batch) {
        std::vector<double> xs;
        CompensatedSum x;
        for (const auto& st : tau.steps) {
            x.add(log_step_importance(st.fwd_lp, st.bwd_lp));
            if (st.kind == ActionKind::Skill && st.payload == skill_id) xs.push_back(x.value());
        }
        if (!xs.empty()) out.push_back(std::move(xs));
    }
    return out;
}

double log_skill_marginal_flow(const std::vector<LoggedTrajectory>& batch, const std::string& skill_id,
                               const std::map<std::string, double>& log_z_by_task) {
    std::vector<double> per_traj;
    for (const auto& tau : batch) {
        std::vector<double> terms;
        CompensatedSum x;
        for (const auto& st : tau.steps) {
            x.add(log_step_importance(st.fwd_lp, st.bwd_lp));
            if (st.kind == ActionKind::Skill && st.payload == skill_id) terms.push_back(x.value());
        }
        if (terms.empty()) continue;
        auto it = log_z_by_task.find(tau.task_id);
        if (it == log_z_by_task.end()) throw std::out_of_range("no log Z for task " + tau.task_id);
        per_traj.push_back(it->second + log_sum_exp(terms));
    }
    if (per_traj.empty()) throw std::invalid_argument("skill " + skill_id + " has no visits in the batch");
    return log_sum_exp(per_traj) - std::log(static_cast<double>(per_traj.size()));
}

double skill_marginal_flow(const std::vector<LoggedTrajectory>& batch, const std::string& skill_id,
                           const std::map<std::string, double>& log_z_by_task) {
    return std::exp(log_skill_marginal_flow(batch, skill_id, log_z_by_task));
}

namespace {

double mean_of(std::span<const double> x) {
    return compensated_sum(x) / static_cast<double>(x.size());
}

// log mean exp(λ(x − mean)), accurate when the spread is small.
double centered_cgf(std::span<const double> x, double lambda, double mean) {
    double hi = 0.0;
    for (double v : x) hi = std::max(hi, lambda * (v - mean));
    if (hi > 700.0) {
        std::vector<double> s;
        for (double v : x) s.push_back(lambda * (v - mean));
        return log_sum_exp(s) - std::log(static_cast<double>(x.size()));
    }
    CompensatedSum s;
    for (double v : x) s.add(std::expm1(lambda * (v - mean)));
    return std::log1p(s.value() / static_cast<double>(x.size()));
}

}  // namespace

double cgf(std::span<const double> x, double lambda) {
    if (x.empty()) throw std::invalid_argument("cgf of empty visit set");
    if (lambda == 0.0) return 0.0;
    const double m = mean_of(x);
    return lambda * m + centered_cgf(x, lambda, m);
}

std::array<double, 5> cumulants(std::span<const double> x) {
    if (x.empty()) throw std::invalid_argument("cumulants of empty visit set");
    const double m = mean_of(x);
    std::array<CompensatedSum, 7> mom;
    for (double v : x) {
        const double d = v - m;
        double p = d * d;
        for (int k = 2; k <= 6; ++k) {
            mom[k].add(p);
            p *= d;
        }
    }
    const double n = static_cast<double>(x.size());
    const double m2 = mom[2].value() / n, m3 = mom[3].value() / n, m4 = mom[4].value() / n;
    const double m5 = mom[5].value() / n, m6 = mom[6].value() / n;
    return {m2, m3, m4 - 3 * m2 * m2, m5 - 10 * m3 * m2, m6 - 15 * m4 * m2 - 10 * m3 * m3 + 30 * m2 * m2 * m2};
}

SkillStats cgf_summaries(std::span<const double> x, double library_lambda1_mean) {
    if (x.empty()) throw std::invalid_argument("summaries of empty visit set");
    SkillStats s;
    s.visit_log_flows.assign(x.begin(), x.end());
    s.G = mean_of(x);
    s.jensen_gap = centered_cgf(x, 1.0, s.G);
    s.lambda1 = s.G + s.jensen_gap;
    s.centered_share = s.lambda1 - library_lambda1_mean;
    s.cumulants = cumulants(x);
    return s;
}

std::map<std::string, SkillStats> library_stats(const std::vector<LoggedTrajectory>& batch, const SkillLibrary& lib) {
    std::map<std::string, std::vector<double>> visits;
    for (const auto& s : lib.skills()) {
        std::vector<double> flat;
        for (const auto& per : skill_visits(batch, s.id)) flat.insert(flat.end(), per.begin(), per.end());
        if (!flat.empty()) visits[s.id] = std::move(flat);
    }
    std::map<std::string, SkillStats> out;
    if (visits.empty()) return out;
    CompensatedSum l1;
    for (const auto& [id, x] : visits) l1.add(cgf(x, 1.0));
    const double mean_l1 = l1.value() / static_cast<double>(visits.size());
    for (const auto& [id, x] : visits) {
        SkillStats st = cgf_summaries(x, mean_l1);
        st.skill_id = id;
        out.emplace(id, std::move(st));
    }
    return out;
}

double flow_entropy(const PolicyParams& p, const Environment& env, const SkillLibrary& lib, const History& h) {
    const auto probs = action_distribution(p, env, lib, h);
    CompensatedSum s;
    for (double q : probs)
        if (q > 0) s.add(-q * std::log(q));
    return s.value();
}

std::string importance_marker(double li, const MarkerThresholds& m) {
    if (li >= m.double_star) return "⋆⋆";
    if (li >= m.star) return "⋆";
    if (li <= m.diamond) return "◇";
    return "";
}

EdgeLogProbs edge_logprobs(const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                           const EnumeratedDag& dag) {
    EdgeLogProbs out;
    for (const auto& ed : dag.edges) {
        const History& h = dag.nodes[ed.parent].history;
        out.fwd.push_back(forward_logprob(p, env, lib, h, ed.action));
        out.bwd.push_back(backward_logprob(p, env, lib, h, ed.action, env.observe(h, ed.action)));
    }
    return out;
}

ExactFlow telescoped_flow(const EnumeratedDag& dag, const EdgeLogProbs& lp, double log_z) {
    if (!dag.is_tree()) throw std::invalid_argument("telescoped flow needs a tree");
    ExactFlow f;
    const std::size_t n = dag.nodes.size();
    f.log_flow.assign(n, 0.0);
    f.terminal_flow.assign(n, 0.0);
    f.log_flow[dag.root] = log_z;
    for (int v : dag.topo)
        for (int e : dag.nodes[v].out_edges)
            f.log_flow[dag.edges[e].child] = f.log_flow[v] + lp.fwd[e] - lp.bwd[e];
    f.flow.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        f.flow[i] = std::exp(f.log_flow[i]);
        if (dag.nodes[i].terminal) f.terminal_flow[i] = f.flow[i];
    }
    f.log_z = log_z;
    f.z = std::exp(log_z);
    return f;
}

}  // namespace skillflow
