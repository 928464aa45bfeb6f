#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "skillflow/env.hpp"
#include "skillflow/flow_oracle.hpp"
#include "skillflow/policy.hpp"

namespace skillflow {

/// Per-step quantities the trainer already computed; diagnostics read only these.
struct LoggedStep {
    ActionKind kind = ActionKind::Act;
    std::string payload;
    std::string emitted;  // symbols appended by this step
    double fwd_lp = 0.0;
    double bwd_lp = 0.0;
};

struct LoggedTrajectory {
    std::string task_id;
    double log_z = 0.0;
    double reward = 0.0;
    std::string emitted;
    std::vector<LoggedStep> steps;
};

LoggedTrajectory make_log(const Trajectory& tau, double log_z, const std::vector<double>& fwd_lp,
                          const std::vector<double>& bwd_lp);

struct StepCredit {
    int t = 0;
    double log_importance = 0.0;
    double log_state_flow = 0.0;
};

struct SkillStats {
    std::string skill_id;
    std::vector<double> visit_log_flows;
    double G = 0.0;
    double lambda1 = 0.0;
    double centered_share = 0.0;
    double jensen_gap = 0.0;
    std::array<double, 5> cumulants{};  // κ2..κ6
};

double step_importance(double fwd_lp, double bwd_lp);
double log_step_importance(double fwd_lp, double bwd_lp);

/// log F(H_t) for t = 0..T-1: log_z plus the running sum of log importances.
std::vector<double> telescope_log_flow(std::span<const double> log_importances, double log_z);

std::vector<StepCredit> step_credits(const LoggedTrajectory& tau);

/// Visit log-flows X_v (centered, without log Z) of a skill, grouped per trajectory.
std::vector<std::vector<double>> skill_visits(const std::vector<LoggedTrajectory>& batch, const std::string& skill_id);

/// log F̂(s): log of the trajectory-average of within-trajectory sums of F(H_t) over
/// invocations of s, averaged over the trajectories that invoke s.
double log_skill_marginal_flow(const std::vector<LoggedTrajectory>& batch, const std::string& skill_id,
                               const std::map<std::string, double>& log_z_by_task);
double skill_marginal_flow(const std::vector<LoggedTrajectory>& batch, const std::string& skill_id,
                           const std::map<std::string, double>& log_z_by_task);

/// Λ_λ = log mean exp(λ X).
double cgf(std::span<const double> x, double lambda);

/// Cumulants κ2..κ6 of the empirical distribution of x.
std::array<double, 5> cumulants(std::span<const double> x);

SkillStats cgf_summaries(std::span<const double> visit_log_flows, double library_lambda1_mean);

/// Stats for every library skill with at least one visit in the batch.
std::map<std::string, SkillStats> library_stats(const std::vector<LoggedTrajectory>& batch, const SkillLibrary& lib);

/// Shannon entropy of the one-step action distribution at a non-terminal history.
double flow_entropy(const PolicyParams& p, const Environment& env, const SkillLibrary& lib, const History& h);

struct MarkerThresholds {
    double star = 5.0;
    double double_star = 8.0;
    double diamond = -5.0;
};

/// "⋆⋆", "⋆", "◇" or "" for a log importance (display only).
std::string importance_marker(double log_importance, const MarkerThresholds& m = {});

/// Edge log-probabilities of the current policies on every DAG edge.
struct EdgeLogProbs {
    std::vector<double> fwd;
    std::vector<double> bwd;
};
EdgeLogProbs edge_logprobs(const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                           const EnumeratedDag& dag);

/// State flows obtained by telescoping edge importances from log Z.
ExactFlow telescoped_flow(const EnumeratedDag& dag, const EdgeLogProbs& lp, double log_z);

}  // namespace skillflow
