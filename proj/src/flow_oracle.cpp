#include "skillflow/flow_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <stdexcept>

#include "skillflow/numeric.hpp"
#include "skillflow/rng.hpp"

namespace skillflow {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

void EnumeratedDag::finalize() {
    for (auto& n : nodes) {
        n.out_edges.clear();
        n.in_edges.clear();
    }
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const auto& ed = edges[e];
        if (ed.parent < 0 || ed.child < 0 || ed.parent >= static_cast<int>(nodes.size()) ||
            ed.child >= static_cast<int>(nodes.size()))
            throw std::out_of_range("edge endpoint out of range");
        nodes[ed.parent].out_edges.push_back(static_cast<int>(e));
        nodes[ed.child].in_edges.push_back(static_cast<int>(e));
    }
    terminals.clear();
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].terminal) terminals.push_back(static_cast<int>(i));

    topo.clear();
    std::vector<int> indeg(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) indeg[i] = static_cast<int>(nodes[i].in_edges.size());
    std::deque<int> q;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (indeg[i] == 0) q.push_back(static_cast<int>(i));
    while (!q.empty()) {
        int v = q.front();
        q.pop_front();
        topo.push_back(v);
        for (int e : nodes[v].out_edges)
            if (--indeg[edges[e].child] == 0) q.push_back(edges[e].child);
    }
    if (topo.size() != nodes.size()) throw std::invalid_argument("graph has a cycle");

    // Paths root -> terminal, grouped by terminal in node order.
    std::vector<std::vector<std::vector<int>>> by_terminal(nodes.size());
    std::vector<int> path;
    auto dfs = [&](auto&& self, int v) -> void {
        if (nodes[v].terminal) by_terminal[v].push_back(path);
        for (int e : nodes[v].out_edges) {
            path.push_back(e);
            self(self, edges[e].child);
            path.pop_back();
        }
    };
    if (!nodes.empty()) dfs(dfs, root);
    trajectories.clear();
    trajectory_terminal.clear();
    for (int t : terminals)
        for (auto& p : by_terminal[t]) {
            trajectories.push_back(std::move(p));
            trajectory_terminal.push_back(t);
        }
}

bool EnumeratedDag::is_tree() const {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const std::size_t want = static_cast<int>(i) == root ? 0 : 1;
        if (nodes[i].in_edges.size() != want) return false;
    }
    return true;
}

int EnumeratedDag::find(const std::string& key) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].key == key) return static_cast<int>(i);
    return -1;
}

EnumeratedDag enumerate(const Environment& env, const std::string& task_id, const SkillLibrary& lib,
                        std::size_t node_budget) {
    const Task& task = env.task(task_id);
    struct Raw {
        History h;
        int parent;
        Action action;
    };
    std::vector<Raw> raw;
    raw.push_back({env.reset(task_id), -1, {}});
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (env.is_terminal(raw[i].h, task)) continue;
        for (const Action& a : env.legal_actions(raw[i].h, lib)) {
            if (raw.size() >= node_budget) throw std::length_error("node budget exceeded");
            auto [obs, child] = env.step(raw[i].h, a, lib);
            raw.push_back({std::move(child), static_cast<int>(i), a});
        }
    }

    std::vector<int> order(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) order[i] = static_cast<int>(i);
    std::vector<std::string> keys(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) keys[i] = raw[i].h.key();
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (raw[a].h.depth != raw[b].h.depth) return raw[a].h.depth < raw[b].h.depth;
        return keys[a] < keys[b];
    });
    std::vector<int> new_id(raw.size());
    for (std::size_t i = 0; i < order.size(); ++i) new_id[order[i]] = static_cast<int>(i);

    EnumeratedDag dag;
    dag.task_id = task_id;
    dag.nodes.resize(raw.size());
    std::map<std::string, int> seen;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const Raw& r = raw[order[i]];
        DagNode& n = dag.nodes[i];
        n.key = keys[order[i]];
        if (!seen.emplace(n.key, static_cast<int>(i)).second) throw std::logic_error("duplicate node key " + n.key);
        n.depth = r.h.depth;
        n.terminal = env.is_terminal(r.h, task);
        if (n.terminal) n.reward = Environment::reward_of(r.h.emitted, task);
        n.history = r.h;
        if (r.parent >= 0) dag.edges.push_back({new_id[r.parent], static_cast<int>(i), r.action});
    }
    std::sort(dag.edges.begin(), dag.edges.end(), [](const DagEdge& a, const DagEdge& b) {
        return a.parent != b.parent ? a.parent < b.parent : a.child < b.child;
    });
    dag.root = 0;
    dag.finalize();
    return dag;
}

void ExactFlow::set_flow(int node, double value) {
    flow.at(node) = value;
    log_flow.at(node) = value > 0 ? std::log(value) : kNegInf;
}

namespace {

double terminal_log_value(const DagNode& n, double beta, double eps) {
    return beta * std::log(smooth_reward(n.reward, eps));
}

void check_tree(const EnumeratedDag& dag) {
    if (!dag.is_tree()) throw std::invalid_argument("flow oracle requires a tree (multiple parents detected)");
}

}  // namespace

ExactFlow exact_state_flow(const EnumeratedDag& dag, double beta, double eps) {
    if (!(beta > 0)) throw std::invalid_argument("beta must be positive");
    check_tree(dag);
    ExactFlow f;
    const std::size_t n = dag.nodes.size();
    f.log_flow.assign(n, kNegInf);
    f.terminal_flow.assign(n, 0.0);
    for (auto it = dag.topo.rbegin(); it != dag.topo.rend(); ++it) {
        const int v = *it;
        const DagNode& node = dag.nodes[v];
        if (node.terminal) {
            f.log_flow[v] = terminal_log_value(node, beta, eps);
            f.terminal_flow[v] = std::exp(f.log_flow[v]);
            continue;
        }
        std::vector<double> kids;
        kids.reserve(node.out_edges.size());
        for (int e : node.out_edges) kids.push_back(f.log_flow[dag.edges[e].child]);
        f.log_flow[v] = log_sum_exp(kids);
    }
    f.flow.resize(n);
    for (std::size_t i = 0; i < n; ++i) f.flow[i] = std::exp(f.log_flow[i]);
    f.log_z = n ? f.log_flow[dag.root] : kNegInf;
    f.z = std::exp(f.log_z);
    return f;
}

ExactFlow descendant_sum_flow(const EnumeratedDag& dag, double beta, double eps) {
    if (!(beta > 0)) throw std::invalid_argument("beta must be positive");
    check_tree(dag);
    const std::size_t n = dag.nodes.size();
    std::vector<CompensatedSum> acc(n);
    ExactFlow f;
    f.terminal_flow.assign(n, 0.0);
    for (std::size_t k = 0; k < dag.terminals.size(); ++k) {
        const int t = dag.terminals[k];
        const double v = std::exp(terminal_log_value(dag.nodes[t], beta, eps));
        f.terminal_flow[t] = v;
        acc[t].add(v);
        for (int e : dag.trajectories[k]) acc[dag.edges[e].parent].add(v);
    }
    f.flow.resize(n);
    f.log_flow.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        f.flow[i] = acc[i].value();
        f.log_flow[i] = f.flow[i] > 0 ? std::log(f.flow[i]) : kNegInf;
    }
    f.z = n ? f.flow[dag.root] : 0.0;
    f.log_z = n ? f.log_flow[dag.root] : kNegInf;
    return f;
}

std::vector<double> target_distribution(const EnumeratedDag& dag, double beta, double eps) {
    if (!(beta > 0)) throw std::invalid_argument("beta must be positive");
    std::vector<double> logs;
    for (std::size_t k = 0; k < dag.trajectories.size(); ++k) {
        const int t = dag.trajectory_terminal[k];
        const double r = smooth_reward(dag.nodes[t].reward, eps);
        if (!(r > 0)) throw std::invalid_argument("zero smoothed reward");
        logs.push_back(beta * std::log(r));
    }
    const double lz = log_sum_exp(logs);
    std::vector<double> p(logs.size());
    for (std::size_t i = 0; i < logs.size(); ++i) p[i] = std::exp(logs[i] - lz);
    return p;
}

double verify_conservation(const ExactFlow& flow, const EnumeratedDag& dag) {
    double worst = 0.0;
    for (std::size_t v = 0; v < dag.nodes.size(); ++v) {
        const DagNode& node = dag.nodes[v];
        if (node.terminal || node.out_edges.empty()) continue;
        CompensatedSum s;
        for (int e : node.out_edges) s.add(flow.flow[dag.edges[e].child]);
        worst = std::max(worst, std::fabs(flow.flow[v] - s.value()));
    }
    return worst;
}

EdgePolicies oracle_policies(const ExactFlow& flow, const EnumeratedDag& dag) {
    EdgePolicies p;
    p.forward.resize(dag.edges.size());
    p.backward.resize(dag.edges.size());
    for (std::size_t e = 0; e < dag.edges.size(); ++e) {
        const auto& ed = dag.edges[e];
        p.forward[e] = std::exp(flow.log_flow[ed.child] - flow.log_flow[ed.parent]);
        p.backward[e] = 1.0 / static_cast<double>(dag.nodes[ed.child].in_edges.size());
    }
    return p;
}

double verify_detailed_balance(std::span<const double> forward_probs, std::span<const double> backward_probs,
                               const ExactFlow& flow, const EnumeratedDag& dag) {
    if (forward_probs.size() != dag.edges.size() || backward_probs.size() != dag.edges.size())
        throw std::invalid_argument("policy size does not match edge count");
    constexpr double tiny = 1e-300;
    double worst = 0.0;
    for (std::size_t e = 0; e < dag.edges.size(); ++e) {
        const auto& ed = dag.edges[e];
        const double lhs = flow.flow[ed.parent] * forward_probs[e];
        const double rhs = flow.flow[ed.child] * backward_probs[e];
        worst = std::max(worst, std::fabs(lhs - rhs) / std::max(lhs, tiny));
    }
    return worst;
}

double flow_decomposition_check(const ExactFlow& flow, const EnumeratedDag& dag) {
    const EdgePolicies pol = oracle_policies(flow, dag);
    std::vector<CompensatedSum> through(dag.nodes.size());
    for (const auto& path : dag.trajectories) {
        double log_f = flow.log_z;
        for (int e : path) log_f += std::log(pol.forward[e]);
        const double f = std::exp(log_f);
        through[dag.root].add(f);
        for (int e : path) through[dag.edges[e].child].add(f);
    }
    double worst = 0.0;
    for (std::size_t v = 0; v < dag.nodes.size(); ++v)
        worst = std::max(worst, std::fabs(flow.flow[v] - through[v].value()));
    return worst;
}

double tb_residual(double log_z, std::span<const double> fwd_lp, std::span<const double> bwd_lp, double beta,
                   double smoothed_reward) {
    CompensatedSum s;
    s.add(log_z);
    for (double x : fwd_lp) s.add(x);
    s.add(-beta * std::log(smoothed_reward));
    for (double x : bwd_lp) s.add(-x);
    return s.value();
}

double SamplingReport::family_threshold(double sigmas) const {
    const double bins = std::max<double>(1.0, static_cast<double>(counts.size()));
    const double tail = std::erfc(sigmas / std::sqrt(2.0)) / bins;
    double lo = sigmas, hi = sigmas + 10.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (std::erfc(mid / std::sqrt(2.0)) > tail ? lo : hi) = mid;
    }
    return hi;
}

SamplingReport sampling_check(const EnumeratedDag& dag, const ExactFlow& flow, std::uint64_t rollouts,
                              std::uint64_t seed, double beta, double eps) {
    const EdgePolicies pol = oracle_policies(flow, dag);
    SamplingReport rep;
    rep.rollouts = rollouts;
    rep.expected = target_distribution(dag, beta, eps);
    rep.counts.assign(dag.terminals.size(), 0);
    std::vector<int> slot(dag.nodes.size(), -1);
    for (std::size_t k = 0; k < dag.terminals.size(); ++k) slot[dag.terminals[k]] = static_cast<int>(k);
    for (std::uint64_t i = 0; i < rollouts; ++i) {
        Philox rng(seed, 0, i);
        int v = dag.root;
        while (!dag.nodes[v].terminal) {
            const auto& outs = dag.nodes[v].out_edges;
            const double u = rng.uniform();
            double c = 0.0;
            int pick = outs.back();
            for (int e : outs) {
                c += pol.forward[e];
                if (u < c) {
                    pick = e;
                    break;
                }
            }
            v = dag.edges[pick].child;
        }
        rep.counts[slot[v]]++;
    }
    for (std::size_t k = 0; k < rep.counts.size(); ++k) {
        const double p = rep.expected[k];
        const double se = std::sqrt(p * (1 - p) / static_cast<double>(rollouts));
        const double freq = static_cast<double>(rep.counts[k]) / static_cast<double>(rollouts);
        const double z = se > 0 ? std::fabs(freq - p) / se : (freq == p ? 0.0 : INFINITY);
        rep.max_abs_z = std::max(rep.max_abs_z, z);
    }
    return rep;
}

std::vector<double> soft_optimal_distribution(const EnumeratedDag& dag, double beta, double eps) {
    if (!(beta > 0)) throw std::invalid_argument("beta must be positive");
    check_tree(dag);
    const double alpha = 1.0 / beta;
    std::vector<double> value(dag.nodes.size(), kNegInf);
    for (auto it = dag.topo.rbegin(); it != dag.topo.rend(); ++it) {
        const DagNode& node = dag.nodes[*it];
        if (node.terminal) {
            value[*it] = std::log(smooth_reward(node.reward, eps));
            continue;
        }
        std::vector<double> q;
        for (int e : node.out_edges) q.push_back(value[dag.edges[e].child] / alpha);
        value[*it] = alpha * log_sum_exp(q);
    }
    std::vector<double> p;
    for (const auto& path : dag.trajectories) {
        double lp = 0.0;
        for (int e : path) lp += (value[dag.edges[e].child] - value[dag.edges[e].parent]) / alpha;
        p.push_back(std::exp(lp));
    }
    return p;
}

}  // namespace skillflow
