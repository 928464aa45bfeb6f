#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "skillflow/env.hpp"
#include "skillflow/policy.hpp"

namespace skillflow {

enum class PhiGrad { Full, Stop };
enum class OptimizerKind { Sgd, Adam };

const char* to_string(PhiGrad g);
const char* to_string(OptimizerKind k);
PhiGrad phi_grad_from_string(const std::string& s);
OptimizerKind optimizer_from_string(const std::string& s);

struct TtbConfig {
    double beta = 1.0;
    double eps_min = 0.1;
    double lr = 1e-4;       // θ
    double lr_logz = 1e-4;  // log Z
    double lr_phi = 1e-4;   // φ
    double grad_clip = 3.0;
    double kl_coeff = 0.01;
    int tasks_per_batch = 7;
    int trajectories_per_task = 4;
    int window_W = 20;
    double tol_rho = 0.02;
    int consecutive_M = 3;
    PhiGrad phi_grad = PhiGrad::Full;
    OptimizerKind optimizer = OptimizerKind::Sgd;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double explore = 0.0;  // uniform-action mixing during rollout

    void validate() const;
    int batch_size() const { return tasks_per_batch * trajectories_per_task; }
};

struct ResidualRecord {
    std::string task_id;
    double delta = 0.0;
    int length = 0;
    double loss = 0.0;
    double log_z = 0.0;
    double log_reward_term = 0.0;  // β·log R̃
    std::vector<double> per_step_forward_lp;
    std::vector<double> per_step_backward_lp;
};

struct Gradient {
    LogitTable theta;
    LogitTable phi;
    std::map<std::string, double> logz;

    void add(const Gradient& o, double scale = 1.0);
    void scale(double s);
    double sq_norm_theta() const;
    double sq_norm_phi() const;
    double sq_norm_logz() const;
    double norm() const;
    bool finite() const;
};

/// Squared distance between two gradients over the union of their entries.
double sq_distance(const Gradient& a, const Gradient& b);

ResidualRecord ttb_residual(const Trajectory& tau, const PolicyParams& p, const Environment& env,
                            const SkillLibrary& lib, const TtbConfig& cfg);

/// Gradient of (Δ/T)² plus kl_coeff·Σ KL(π(·|c) ‖ uniform) over visited forward contexts.
Gradient grad_ttb(const Trajectory& tau, const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                  const TtbConfig& cfg, ResidualRecord* record = nullptr);

/// Scalar objective whose gradient grad_ttb returns (for finite differences).
double ttb_objective(const Trajectory& tau, const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                     const TtbConfig& cfg);

struct OptimizerState {
    LogitTable m_theta, v_theta, m_phi, v_phi;
    std::map<std::string, double> m_logz, v_logz;
    long t = 0;
};

struct StepMetrics {
    double loss = 0.0;  // mean (Δ/T)²
    double mean_reward = 0.0;
    double mean_abs_delta = 0.0;
    double mean_delta_sq = 0.0;
    double grad_norm_theta = 0.0;  // of the averaged gradient, before clipping
    double grad_norm_phi = 0.0;
    double grad_norm_logz = 0.0;
    double grad_norm_total = 0.0;
    double grad_norm_applied = 0.0;  // after clipping
    double grad_variance = 0.0;      // mean ‖g_i − ḡ‖² over the batch
    std::vector<ResidualRecord> records;
    std::vector<double> per_traj_grad_norm;
    std::vector<double> per_traj_delta_grad_norm;  // ‖∇Δ‖
};

/// Applies grad with global-norm clipping and per-group learning rates.
/// Returns the applied (post-clip) norm.
double apply_gradient(Gradient grad, PolicyParams& p, OptimizerState& opt, const TtbConfig& cfg);

StepMetrics train_step(const std::vector<Trajectory>& batch, PolicyParams& p, OptimizerState& opt,
                       const Environment& env, const SkillLibrary& lib, const TtbConfig& cfg);

/// REINFORCE with the batch-mean reward as baseline. Updates θ only.
StepMetrics reinforce_step(const std::vector<Trajectory>& batch, PolicyParams& p, OptimizerState& opt,
                           const Environment& env, const SkillLibrary& lib, const TtbConfig& cfg);

/// Group-relative variant: advantage (r − group mean)/(group std + tiny) per task.
StepMetrics grpo_step(const std::vector<Trajectory>& batch, PolicyParams& p, OptimizerState& opt,
                      const Environment& env, const SkillLibrary& lib, const TtbConfig& cfg);

/// Group-relative advantages of one group of rewards.
std::vector<double> group_advantages(const std::vector<double>& rewards);

bool plateau_detect(const std::vector<double>& loss_history, const TtbConfig& cfg);

Trajectory rollout(const PolicyParams& p, const Environment& env, const SkillLibrary& lib, const std::string& task_id,
                   Philox& rng, double explore, double eps);

/// Task of batch slot `slot` at training step `step`; cycles over the task list.
std::string batch_task(const Environment& env, const TtbConfig& cfg, std::uint64_t step, int slot);

/// Collects one batch; slot i uses the substream (seed, step, i), so the
/// result does not depend on the number of workers.
std::vector<Trajectory> collect_batch(const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                                      const TtbConfig& cfg, std::uint64_t seed, std::uint64_t step, int workers);

}  // namespace skillflow
