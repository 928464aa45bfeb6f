#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "skillflow/env.hpp"
#include "skillflow/rng.hpp"

namespace skillflow {

struct EnumeratedDag;
struct ExactFlow;

enum class BackwardMode {
    Hindsight,  // learned P_φ over forward tokens, conditioned on the execution observation
    Tree,       // the unique proper backward policy on a tree: P_B ≡ 1
};

const char* to_string(BackwardMode m);
BackwardMode backward_mode_from_string(const std::string& s);

using LogitTable = std::map<std::string, std::map<std::string, double>>;

struct PolicyParams {
    LogitTable forward_logits;
    LogitTable backward_logits;
    std::map<std::string, double> log_partition;
    int window_fwd = 12;
    int window_bwd = 12;
    double logz_init = -2.30;
    BackwardMode backward_mode = BackwardMode::Hindsight;

    void register_task(const std::string& task_id);
    bool operator==(const PolicyParams&) const = default;
};

/// Logit lookup; contexts and tokens never written are zero.
double logit(const LogitTable& table, const std::string& ctx, const std::string& tok);

/// Policy tokens of an action: "A", "<acc>", or "@s1", "@s1#1", ... for skills.
std::vector<std::string> policy_tokens(const Action& a);

/// Distinct next tokens among legal actions whose token list extends the prefix.
std::vector<std::string> legal_next_tokens(const std::vector<Action>& legal, const std::vector<std::string>& prefix);

std::string forward_context(const PolicyParams& p, const History& h, const std::vector<std::string>& prefix);
std::string backward_context(const PolicyParams& p, const History& h, const ExecObservation& obs,
                             const std::vector<std::string>& prefix);

struct TokenEval {
    std::string ctx;
    std::vector<std::string> legal;
    std::vector<double> probs;
    int chosen = 0;
};

struct ActionEval {
    std::vector<TokenEval> tokens;  // only tokens with more than one legal continuation
    int num_tokens = 0;             // K_t, including forced tokens
    double logprob = 0.0;           // per-token mean
};

ActionEval evaluate_forward(const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                            const History& h, const Action& a);
ActionEval evaluate_backward(const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                             const History& h, const Action& a, const ExecObservation& obs);

double forward_logprob(const PolicyParams& p, const Environment& env, const SkillLibrary& lib, const History& h,
                       const Action& a);
double backward_logprob(const PolicyParams& p, const Environment& env, const SkillLibrary& lib, const History& h,
                        const Action& a, const ExecObservation& obs);

/// Draws token by token from the forward softmax over legal continuations.
/// With probability `explore` the action is instead drawn uniformly.
Action sample_action(const PolicyParams& p, const Environment& env, const SkillLibrary& lib, const History& h,
                     Philox& rng, double explore = 0.0);

double log_partition(const PolicyParams& p, const std::string& task_id);

/// One-step action distribution at h (first-token softmax), in legal-action order.
std::vector<double> action_distribution(const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                                        const History& h);

/// Count of policy evaluations in this process; diagnostics must not move it.
std::uint64_t policy_evaluation_count();

/// Exact trajectory probabilities under the tempered forward policy,
/// exp(Σ fwd_lp) renormalized over the enumerated set (aligned with dag.trajectories).
std::vector<double> tempered_trajectory_distribution(const PolicyParams& p, const Environment& env,
                                                     const SkillLibrary& lib, const EnumeratedDag& dag);
/// Exact probabilities of the token-by-token sampler.
std::vector<double> sampler_trajectory_distribution(const PolicyParams& p, const Environment& env,
                                                    const SkillLibrary& lib, const EnumeratedDag& dag);

/// Best window-abstracted approximation of the oracle forward policy: each
/// abstract context takes the flow-weighted mix of the oracle action
/// distributions of the states it merges. Returns the induced trajectory
/// distribution (aligned with dag.trajectories).
std::vector<double> projected_oracle_distribution(int window_fwd, const EnumeratedDag& dag, const ExactFlow& flow);

double total_variation(const std::vector<double>& p, const std::vector<double>& q);

}  // namespace skillflow
