#include "skillflow/policy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

#include "skillflow/flow_oracle.hpp"
#include "skillflow/numeric.hpp"

namespace skillflow {

namespace {

std::atomic<std::uint64_t> g_evaluations{0};

std::string window_labels(const History& h, int k) {
    std::string s;
    const int n = static_cast<int>(h.steps.size());
    for (int i = std::max(0, n - k); i < n; ++i) {
        if (!s.empty()) s += ',';
        s += h.steps[i].action.label();
    }
    return s;
}

std::string join_prefix(const std::vector<std::string>& prefix) {
    std::string s;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (i) s += ',';
        s += prefix[i];
    }
    return s;
}

bool is_legal(const std::vector<Action>& legal, const Action& a) {
    return std::find(legal.begin(), legal.end(), a) != legal.end();
}

// Softmax over `legal` tokens at ctx.
std::vector<double> softmax_at(const LogitTable& table, const std::string& ctx, const std::vector<std::string>& legal) {
    std::vector<double> z(legal.size(), 0.0);
    auto it = table.find(ctx);
    if (it != table.end())
        for (std::size_t i = 0; i < legal.size(); ++i) {
            auto jt = it->second.find(legal[i]);
            if (jt != it->second.end()) z[i] = jt->second;
        }
    const double lse = log_sum_exp(z);
    for (double& v : z) v = std::exp(v - lse);
    return z;
}

template <class CtxFn>
ActionEval evaluate(const LogitTable& table, const std::vector<Action>& legal, const Action& a, CtxFn ctx_of) {
    ActionEval ev;
    const auto toks = policy_tokens(a);
    ev.num_tokens = static_cast<int>(toks.size());
    std::vector<std::string> prefix;
    CompensatedSum sum;
    for (const auto& tok : toks) {
        auto next = legal_next_tokens(legal, prefix);
        if (next.size() > 1) {
            TokenEval te;
            te.ctx = ctx_of(prefix);
            te.probs = softmax_at(table, te.ctx, next);
            te.chosen = static_cast<int>(std::find(next.begin(), next.end(), tok) - next.begin());
            te.legal = std::move(next);
            sum.add(std::log(te.probs[te.chosen]));
            ev.tokens.push_back(std::move(te));
        }
        prefix.push_back(tok);
    }
    ev.logprob = ev.num_tokens ? sum.value() / ev.num_tokens : 0.0;
    return ev;
}

}  // namespace

const char* to_string(BackwardMode m) { return m == BackwardMode::Tree ? "tree" : "hindsight"; }

BackwardMode backward_mode_from_string(const std::string& s) {
    if (s == "hindsight") return BackwardMode::Hindsight;
    if (s == "tree") return BackwardMode::Tree;
    throw std::invalid_argument("unknown backward mode: " + s);
}

void PolicyParams::register_task(const std::string& task_id) { log_partition.try_emplace(task_id, logz_init); }

double logit(const LogitTable& table, const std::string& ctx, const std::string& tok) {
    auto it = table.find(ctx);
    if (it == table.end()) return 0.0;
    auto jt = it->second.find(tok);
    return jt == it->second.end() ? 0.0 : jt->second;
}

std::vector<std::string> policy_tokens(const Action& a) {
    if (a.kind != ActionKind::Skill) return {a.token_seq.empty() ? a.label() : a.token_seq.front()};
    std::vector<std::string> out{a.label()};
    for (std::size_t j = 1; j < a.token_seq.size(); ++j) out.push_back(a.label() + "#" + std::to_string(j));
    return out;
}

std::vector<std::string> legal_next_tokens(const std::vector<Action>& legal, const std::vector<std::string>& prefix) {
    std::vector<std::string> out;
    for (const auto& a : legal) {
        auto toks = policy_tokens(a);
        if (toks.size() <= prefix.size()) continue;
        if (!std::equal(prefix.begin(), prefix.end(), toks.begin())) continue;
        const auto& t = toks[prefix.size()];
        if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
    }
    return out;
}

std::string forward_context(const PolicyParams& p, const History& h, const std::vector<std::string>& prefix) {
    return "F|" + h.task_id + "|d" + std::to_string(h.depth) + "|" + window_labels(h, p.window_fwd) + "|" +
           join_prefix(prefix);
}

std::string backward_context(const PolicyParams& p, const History& h, const ExecObservation& obs,
                             const std::vector<std::string>& prefix) {
    return "B|" + h.task_id + "|d" + std::to_string(h.depth) + "|" + window_labels(h, p.window_bwd) + "|o" +
           std::to_string(obs.progress) + (obs.terminal ? "T" : "N") + "|" + join_prefix(prefix);
}

ActionEval evaluate_forward(const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                            const History& h, const Action& a) {
    g_evaluations.fetch_add(1, std::memory_order_relaxed);
    const auto legal = env.legal_actions(h, lib);
    if (!is_legal(legal, a)) throw std::invalid_argument("illegal action " + a.label());
    return evaluate(p.forward_logits, legal, a,
                    [&](const std::vector<std::string>& prefix) { return forward_context(p, h, prefix); });
}

ActionEval evaluate_backward(const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                             const History& h, const Action& a, const ExecObservation& obs) {
    g_evaluations.fetch_add(1, std::memory_order_relaxed);
    const auto legal = env.legal_actions(h, lib);
    if (!is_legal(legal, a)) throw std::invalid_argument("illegal action " + a.label());
    if (!(env.observe(h, a) == obs)) throw std::invalid_argument("observation inconsistent with transition");
    if (p.backward_mode == BackwardMode::Tree) {
        ActionEval ev;
        ev.num_tokens = a.num_tokens();
        return ev;
    }
    return evaluate(p.backward_logits, legal, a,
                    [&](const std::vector<std::string>& prefix) { return backward_context(p, h, obs, prefix); });
}

double forward_logprob(const PolicyParams& p, const Environment& env, const SkillLibrary& lib, const History& h,
                       const Action& a) {
    return evaluate_forward(p, env, lib, h, a).logprob;
}

double backward_logprob(const PolicyParams& p, const Environment& env, const SkillLibrary& lib, const History& h,
                        const Action& a, const ExecObservation& obs) {
    return evaluate_backward(p, env, lib, h, a, obs).logprob;
}

Action sample_action(const PolicyParams& p, const Environment& env, const SkillLibrary& lib, const History& h,
                     Philox& rng, double explore) {
    g_evaluations.fetch_add(1, std::memory_order_relaxed);
    const auto legal = env.legal_actions(h, lib);
    if (legal.empty()) throw std::logic_error("no legal action");
    if (explore > 0.0 && rng.uniform() < explore) {
        auto i = static_cast<std::size_t>(rng.uniform() * legal.size());
        return legal[std::min(i, legal.size() - 1)];
    }
    std::vector<std::string> prefix;
    for (;;) {
        for (const auto& a : legal)
            if (policy_tokens(a) == prefix) return a;
        const auto next = legal_next_tokens(legal, prefix);
        if (next.size() == 1) {
            prefix.push_back(next.front());
            continue;
        }
        const auto probs = softmax_at(p.forward_logits, forward_context(p, h, prefix), next);
        const double u = rng.uniform();
        double c = 0.0;
        std::size_t pick = next.size() - 1;
        for (std::size_t i = 0; i < next.size(); ++i) {
            c += probs[i];
            if (u < c) {
                pick = i;
                break;
            }
        }
        prefix.push_back(next[pick]);
    }
}

double log_partition(const PolicyParams& p, const std::string& task_id) {
    auto it = p.log_partition.find(task_id);
    if (it == p.log_partition.end()) throw std::out_of_range("unregistered task: " + task_id);
    return it->second;
}

std::vector<double> action_distribution(const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                                        const History& h) {
    if (env.is_terminal(h)) throw std::logic_error("action distribution at terminal state");
    const auto legal = env.legal_actions(h, lib);
    std::vector<double> out;
    for (const auto& a : legal) out.push_back(std::exp(policy_tokens(a).size() * forward_logprob(p, env, lib, h, a)));
    return out;
}

std::uint64_t policy_evaluation_count() { return g_evaluations.load(); }

namespace {

std::vector<double> path_log_weights(const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                                     const EnumeratedDag& dag, bool tempered) {
    std::vector<double> edge_lp(dag.edges.size());
    for (std::size_t e = 0; e < dag.edges.size(); ++e) {
        const auto& ed = dag.edges[e];
        const auto ev = evaluate_forward(p, env, lib, dag.nodes[ed.parent].history, ed.action);
        edge_lp[e] = tempered ? ev.logprob : ev.logprob * ev.num_tokens;
    }
    std::vector<double> out;
    for (const auto& path : dag.trajectories) {
        CompensatedSum s;
        for (int e : path) s.add(edge_lp[e]);
        out.push_back(s.value());
    }
    return out;
}

std::vector<double> normalize_logs(std::vector<double> logs) {
    const double lz = log_sum_exp(logs);
    for (double& v : logs) v = std::exp(v - lz);
    return logs;
}

}  // namespace

std::vector<double> tempered_trajectory_distribution(const PolicyParams& p, const Environment& env,
                                                     const SkillLibrary& lib, const EnumeratedDag& dag) {
    return normalize_logs(path_log_weights(p, env, lib, dag, true));
}

std::vector<double> sampler_trajectory_distribution(const PolicyParams& p, const Environment& env,
                                                    const SkillLibrary& lib, const EnumeratedDag& dag) {
    auto logs = path_log_weights(p, env, lib, dag, false);
    for (double& v : logs) v = std::exp(v);
    return logs;
}

std::vector<double> projected_oracle_distribution(int window_fwd, const EnumeratedDag& dag, const ExactFlow& flow) {
    PolicyParams shape;
    shape.window_fwd = window_fwd;
    std::map<std::string, std::map<std::string, CompensatedSum>> mass;
    for (const auto& ed : dag.edges) {
        const auto ctx = forward_context(shape, dag.nodes[ed.parent].history, {});
        mass[ctx][policy_tokens(ed.action).front()].add(flow.flow[ed.child]);
    }
    std::map<std::string, std::map<std::string, double>> pi;
    for (auto& [ctx, row] : mass) {
        CompensatedSum tot;
        for (auto& [tok, m] : row) tot.add(m.value());
        for (auto& [tok, m] : row) pi[ctx][tok] = tot.value() > 0 ? m.value() / tot.value() : 0.0;
    }
    std::vector<double> out;
    for (const auto& path : dag.trajectories) {
        double prob = 1.0;
        for (int e : path) {
            const auto& ed = dag.edges[e];
            prob *= pi[forward_context(shape, dag.nodes[ed.parent].history, {})][policy_tokens(ed.action).front()];
        }
        out.push_back(prob);
    }
    return out;
}

double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw std::invalid_argument("distribution sizes differ");
    CompensatedSum s;
    for (std::size_t i = 0; i < p.size(); ++i) s.add(std::fabs(p[i] - q[i]));
    return 0.5 * s.value();
}

}  // namespace skillflow
