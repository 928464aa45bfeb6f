#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "skillflow/env.hpp"

namespace skillflow {

struct DagEdge {
    int parent = -1;
    int child = -1;
    Action action;
};

struct DagNode {
    std::string key;
    int depth = 0;
    bool terminal = false;
    double reward = 0.0;  // meaningful at terminals only
    History history;
    std::vector<int> out_edges;
    std::vector<int> in_edges;
};

struct EnumeratedDag {
    std::string task_id;
    std::vector<DagNode> nodes;
    std::vector<DagEdge> edges;
    int root = 0;
    std::vector<int> terminals;                  // node ids, in node order
    std::vector<std::vector<int>> trajectories;  // edge ids root->terminal
    std::vector<int> trajectory_terminal;        // end node of each trajectory
    std::vector<int> topo;                       // parents before children

    /// Rebuilds adjacency, terminal list, topological order and trajectory index.
    /// Works on hand-built graphs as well; trajectories are listed per path.
    void finalize();
    bool is_tree() const;
    int find(const std::string& key) const;
};

EnumeratedDag enumerate(const Environment& env, const std::string& task_id, const SkillLibrary& lib,
                        std::size_t node_budget = 1'000'000);

struct ExactFlow {
    std::vector<double> log_flow;
    std::vector<double> flow;
    std::vector<double> terminal_flow;  // R̃^β at terminals, 0 elsewhere
    double log_z = 0.0;
    double z = 0.0;

    void set_flow(int node, double value);
};

ExactFlow exact_state_flow(const EnumeratedDag& dag, double beta, double eps);
/// Same flow computed by pushing every terminal value onto all its ancestors.
ExactFlow descendant_sum_flow(const EnumeratedDag& dag, double beta, double eps);

/// Probability per trajectory, aligned with dag.terminals.
std::vector<double> target_distribution(const EnumeratedDag& dag, double beta, double eps);

double verify_conservation(const ExactFlow& flow, const EnumeratedDag& dag);

struct EdgePolicies {
    std::vector<double> forward;   // P_F(child | parent) per edge
    std::vector<double> backward;  // P_B(parent | child) per edge
};

EdgePolicies oracle_policies(const ExactFlow& flow, const EnumeratedDag& dag);

double verify_detailed_balance(std::span<const double> forward_probs, std::span<const double> backward_probs,
                               const ExactFlow& flow, const EnumeratedDag& dag);

double flow_decomposition_check(const ExactFlow& flow, const EnumeratedDag& dag);

/// logZ + Σ fwd − β·log R̃ − Σ bwd.
double tb_residual(double log_z, std::span<const double> fwd_lp, std::span<const double> bwd_lp, double beta,
                   double smoothed_reward);

struct SamplingReport {
    std::uint64_t rollouts = 0;
    std::vector<std::uint64_t> counts;  // aligned with dag.terminals
    std::vector<double> expected;
    double max_abs_z = 0.0;
    /// Per-terminal |z| bound whose family-wise false-alarm rate over all
    /// terminals (Bonferroni) equals the two-sided tail of a single `sigmas` test.
    double family_threshold(double sigmas) const;
    bool within(double sigmas) const { return max_abs_z <= family_threshold(sigmas); }
};

SamplingReport sampling_check(const EnumeratedDag& dag, const ExactFlow& flow, std::uint64_t rollouts,
                              std::uint64_t seed, double beta, double eps);

/// Trajectory distribution of the soft-optimal policy for reward log R̃ at
/// temperature 1/β, obtained by soft value iteration on the tree.
std::vector<double> soft_optimal_distribution(const EnumeratedDag& dag, double beta, double eps);

}  // namespace skillflow
