#include "skillflow/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <stdexcept>
#include <thread>

#include "skillflow/flow_oracle.hpp"
#include "skillflow/numeric.hpp"

namespace skillflow {

const char* to_string(PhiGrad g) { return g == PhiGrad::Stop ? "stop" : "full"; }
const char* to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

PhiGrad phi_grad_from_string(const std::string& s) {
    if (s == "full") return PhiGrad::Full;
    if (s == "stop") return PhiGrad::Stop;
    throw std::invalid_argument("unknown phi_grad: " + s);
}

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adam") return OptimizerKind::Adam;
    throw std::invalid_argument("unknown optimizer: " + s);
}

void TtbConfig::validate() const {
    auto bad = [](const char* what) { throw std::invalid_argument(std::string("invalid config: ") + what); };
    if (!(beta > 0) || !std::isfinite(beta)) bad("beta must be positive");
    if (!(eps_min > 0) || !std::isfinite(eps_min)) bad("eps_min must be positive");
    if (!(lr >= 0) || !(lr_logz >= 0) || !(lr_phi >= 0)) bad("learning rates must be non-negative");
    if (!(grad_clip > 0)) bad("grad_clip must be positive");
    if (!(kl_coeff >= 0)) bad("kl_coeff must be non-negative");
    if (tasks_per_batch < 1 || trajectories_per_task < 1) bad("batch dimensions must be positive");
    if (window_W < 1 || consecutive_M < 1) bad("plateau window and count must be positive");
    if (!(tol_rho >= 0)) bad("tol_rho must be non-negative");
    if (!(explore >= 0 && explore <= 1)) bad("explore must lie in [0,1]");
}

// ---- gradient container ---------------------------------------------------

namespace {

void add_table(LogitTable& dst, const LogitTable& src, double scale) {
    for (const auto& [ctx, row] : src) {
        auto& d = dst[ctx];
        for (const auto& [tok, v] : row) d[tok] += scale * v;
    }
}

double sq_table(const LogitTable& t) {
    CompensatedSum s;
    for (const auto& [ctx, row] : t)
        for (const auto& [tok, v] : row) s.add(v * v);
    return s.value();
}

double sq_dist_table(const LogitTable& a, const LogitTable& b) {
    LogitTable diff = a;
    add_table(diff, b, -1.0);
    return sq_table(diff);
}

bool finite_table(const LogitTable& t) {
    for (const auto& [ctx, row] : t)
        for (const auto& [tok, v] : row)
            if (!std::isfinite(v)) return false;
    return true;
}

void add_softmax_grad(LogitTable& g, const TokenEval& te, double coeff) {
    auto& row = g[te.ctx];
    for (std::size_t i = 0; i < te.legal.size(); ++i)
        row[te.legal[i]] += coeff * ((static_cast<int>(i) == te.chosen ? 1.0 : 0.0) - te.probs[i]);
}

// Gradient of KL(p ‖ uniform) with respect to the logits at one context.
void add_kl_grad(LogitTable& g, const TokenEval& te, double coeff) {
    CompensatedSum ent;
    for (double p : te.probs) ent.add(p * std::log(p));
    auto& row = g[te.ctx];
    for (std::size_t i = 0; i < te.legal.size(); ++i)
        row[te.legal[i]] += coeff * te.probs[i] * (std::log(te.probs[i]) - ent.value());
}

double kl_to_uniform(const TokenEval& te) {
    CompensatedSum s;
    for (double p : te.probs) s.add(p * std::log(p));
    return s.value() + std::log(static_cast<double>(te.probs.size()));
}

struct StepEvals {
    std::vector<ActionEval> fwd;
    std::vector<ActionEval> bwd;
};

StepEvals evaluate_trajectory(const Trajectory& tau, const PolicyParams& p, const Environment& env,
                              const SkillLibrary& lib) {
    StepEvals ev;
    History h = env.reset(tau.history.task_id);
    for (const auto& st : tau.history.steps) {
        ev.fwd.push_back(evaluate_forward(p, env, lib, h, st.action));
        ev.bwd.push_back(evaluate_backward(p, env, lib, h, st.action, st.obs));
        h = env.step(h, st.action, lib).second;
    }
    return ev;
}

ResidualRecord residual_from(const Trajectory& tau, const PolicyParams& p, const StepEvals& ev,
                             const TtbConfig& cfg) {
    if (tau.length < 1 || tau.length != static_cast<int>(tau.history.steps.size()))
        throw std::invalid_argument("trajectory must have at least one step");
    ResidualRecord r;
    r.task_id = tau.history.task_id;
    r.length = tau.length;
    r.log_z = log_partition(p, r.task_id);
    for (const auto& e : ev.fwd) r.per_step_forward_lp.push_back(e.logprob);
    for (const auto& e : ev.bwd) r.per_step_backward_lp.push_back(e.logprob);
    r.log_reward_term = cfg.beta * std::log(tau.smoothed_reward);
    r.delta = tb_residual(r.log_z, r.per_step_forward_lp, r.per_step_backward_lp, cfg.beta, tau.smoothed_reward);
    const double x = r.delta / r.length;
    r.loss = x * x;
    return r;
}

void check_terminal(const Trajectory& tau, const Environment& env) {
    if (!env.is_terminal(tau.history)) throw std::invalid_argument("non-terminal trajectory");
}

// Gradient of Δ scaled by c (θ, φ, log Z parts).
Gradient delta_gradient(const StepEvals& ev, const std::string& task, double c, PhiGrad phi_grad) {
    Gradient g;
    for (const auto& a : ev.fwd)
        for (const auto& te : a.tokens) add_softmax_grad(g.theta, te, c / a.num_tokens);
    if (phi_grad == PhiGrad::Full)
        for (const auto& a : ev.bwd)
            for (const auto& te : a.tokens) add_softmax_grad(g.phi, te, -c / a.num_tokens);
    g.logz[task] += c;
    return g;
}

}  // namespace

void Gradient::add(const Gradient& o, double s) {
    add_table(theta, o.theta, s);
    add_table(phi, o.phi, s);
    for (const auto& [k, v] : o.logz) logz[k] += s * v;
}

void Gradient::scale(double s) {
    for (auto& [c, row] : theta)
        for (auto& [t, v] : row) v *= s;
    for (auto& [c, row] : phi)
        for (auto& [t, v] : row) v *= s;
    for (auto& [k, v] : logz) v *= s;
}

double Gradient::sq_norm_theta() const { return sq_table(theta); }
double Gradient::sq_norm_phi() const { return sq_table(phi); }
double Gradient::sq_norm_logz() const {
    CompensatedSum s;
    for (const auto& [k, v] : logz) s.add(v * v);
    return s.value();
}
double Gradient::norm() const { return std::sqrt(sq_norm_theta() + sq_norm_phi() + sq_norm_logz()); }

bool Gradient::finite() const {
    if (!finite_table(theta) || !finite_table(phi)) return false;
    for (const auto& [k, v] : logz)
        if (!std::isfinite(v)) return false;
    return true;
}

double sq_distance(const Gradient& a, const Gradient& b) {
    CompensatedSum s;
    s.add(sq_dist_table(a.theta, b.theta));
    s.add(sq_dist_table(a.phi, b.phi));
    std::map<std::string, double> d = a.logz;
    for (const auto& [k, v] : b.logz) d[k] -= v;
    for (const auto& [k, v] : d) s.add(v * v);
    return s.value();
}

// ---- TTB ------------------------------------------------------------------

ResidualRecord ttb_residual(const Trajectory& tau, const PolicyParams& p, const Environment& env,
                            const SkillLibrary& lib, const TtbConfig& cfg) {
    check_terminal(tau, env);
    return residual_from(tau, p, evaluate_trajectory(tau, p, env, lib), cfg);
}

Gradient grad_ttb(const Trajectory& tau, const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                  const TtbConfig& cfg, ResidualRecord* record) {
    check_terminal(tau, env);
    const StepEvals ev = evaluate_trajectory(tau, p, env, lib);
    ResidualRecord r = residual_from(tau, p, ev, cfg);
    const double c = 2.0 * r.delta / (static_cast<double>(r.length) * r.length);
    Gradient g = delta_gradient(ev, r.task_id, c, cfg.phi_grad);
    if (cfg.kl_coeff > 0)
        for (const auto& a : ev.fwd)
            for (const auto& te : a.tokens) add_kl_grad(g.theta, te, cfg.kl_coeff);
    if (record) *record = std::move(r);
    return g;
}

double ttb_objective(const Trajectory& tau, const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                     const TtbConfig& cfg) {
    check_terminal(tau, env);
    const StepEvals ev = evaluate_trajectory(tau, p, env, lib);
    double obj = residual_from(tau, p, ev, cfg).loss;
    if (cfg.kl_coeff > 0)
        for (const auto& a : ev.fwd)
            for (const auto& te : a.tokens) obj += cfg.kl_coeff * kl_to_uniform(te);
    return obj;
}

// ---- optimizer ------------------------------------------------------------

namespace {

void adam_table(LogitTable& params, const LogitTable& g, LogitTable& m, LogitTable& v, double lr, long t,
                const TtbConfig& cfg) {
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
    for (const auto& [ctx, row] : g) {
        auto& prow = params[ctx];
        auto& mrow = m[ctx];
        auto& vrow = v[ctx];
        for (const auto& [tok, gv] : row) {
            double& mi = mrow[tok];
            double& vi = vrow[tok];
            mi = cfg.adam_beta1 * mi + (1 - cfg.adam_beta1) * gv;
            vi = cfg.adam_beta2 * vi + (1 - cfg.adam_beta2) * gv * gv;
            prow[tok] -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps);
        }
    }
}

void sgd_table(LogitTable& params, const LogitTable& g, double lr) {
    for (const auto& [ctx, row] : g) {
        auto& prow = params[ctx];
        for (const auto& [tok, gv] : row) prow[tok] -= lr * gv;
    }
}

}  // namespace

double apply_gradient(Gradient grad, PolicyParams& p, OptimizerState& opt, const TtbConfig& cfg) {
    const double n = grad.norm();
    if (n > cfg.grad_clip) grad.scale(cfg.grad_clip / n);
    for (const auto& [k, v] : grad.logz) p.register_task(k);
    if (cfg.optimizer == OptimizerKind::Sgd) {
        sgd_table(p.forward_logits, grad.theta, cfg.lr);
        sgd_table(p.backward_logits, grad.phi, cfg.lr_phi);
        for (const auto& [k, v] : grad.logz) p.log_partition[k] -= cfg.lr_logz * v;
    } else {
        ++opt.t;
        adam_table(p.forward_logits, grad.theta, opt.m_theta, opt.v_theta, cfg.lr, opt.t, cfg);
        adam_table(p.backward_logits, grad.phi, opt.m_phi, opt.v_phi, cfg.lr_phi, opt.t, cfg);
        const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(opt.t));
        const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(opt.t));
        for (const auto& [k, gv] : grad.logz) {
            double& mi = opt.m_logz[k];
            double& vi = opt.v_logz[k];
            mi = cfg.adam_beta1 * mi + (1 - cfg.adam_beta1) * gv;
            vi = cfg.adam_beta2 * vi + (1 - cfg.adam_beta2) * gv * gv;
            p.log_partition[k] -= cfg.lr_logz * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps);
        }
    }
    return std::min(n, cfg.grad_clip);
}

namespace {

StepMetrics finish_step(std::vector<Gradient>& grads, StepMetrics m, PolicyParams& p, OptimizerState& opt,
                        const TtbConfig& cfg) {
    const double inv = 1.0 / static_cast<double>(grads.size());
    Gradient mean;
    for (const auto& g : grads) mean.add(g, inv);
    CompensatedSum var;
    for (const auto& g : grads) var.add(sq_distance(g, mean));
    m.grad_variance = var.value() * inv;
    m.grad_norm_theta = std::sqrt(mean.sq_norm_theta());
    m.grad_norm_phi = std::sqrt(mean.sq_norm_phi());
    m.grad_norm_logz = std::sqrt(mean.sq_norm_logz());
    m.grad_norm_total = mean.norm();
    m.grad_norm_applied = apply_gradient(std::move(mean), p, opt, cfg);
    return m;
}

void require_batch(const std::vector<Trajectory>& batch) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
}

}  // namespace

StepMetrics train_step(const std::vector<Trajectory>& batch, PolicyParams& p, OptimizerState& opt,
                       const Environment& env, const SkillLibrary& lib, const TtbConfig& cfg) {
    require_batch(batch);
    for (const auto& tau : batch) p.register_task(tau.history.task_id);
    StepMetrics m;
    std::vector<Gradient> grads;
    CompensatedSum loss, rew, absd, d2;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Trajectory& tau = batch[i];
        check_terminal(tau, env);
        const StepEvals ev = evaluate_trajectory(tau, p, env, lib);
        ResidualRecord r = residual_from(tau, p, ev, cfg);
        const double c = 2.0 * r.delta / (static_cast<double>(r.length) * r.length);
        Gradient g = delta_gradient(ev, r.task_id, c, cfg.phi_grad);
        if (cfg.kl_coeff > 0)
            for (const auto& a : ev.fwd)
                for (const auto& te : a.tokens) add_kl_grad(g.theta, te, cfg.kl_coeff);
        if (!g.finite() || !std::isfinite(r.delta))
            throw std::runtime_error("non-finite gradient in trajectory " + std::to_string(i) + " (task " +
                                     r.task_id + ", emitted \"" + tau.history.emitted + "\")");
        m.per_traj_grad_norm.push_back(g.norm());
        m.per_traj_delta_grad_norm.push_back(delta_gradient(ev, r.task_id, 1.0, cfg.phi_grad).norm());
        loss.add(r.loss);
        rew.add(tau.reward);
        absd.add(std::fabs(r.delta));
        d2.add(r.delta * r.delta);
        m.records.push_back(std::move(r));
        grads.push_back(std::move(g));
    }
    const double n = static_cast<double>(batch.size());
    m.loss = loss.value() / n;
    m.mean_reward = rew.value() / n;
    m.mean_abs_delta = absd.value() / n;
    m.mean_delta_sq = d2.value() / n;
    return finish_step(grads, std::move(m), p, opt, cfg);
}

namespace {

StepMetrics policy_gradient_step(const std::vector<Trajectory>& batch, const std::vector<double>& adv,
                                 PolicyParams& p, OptimizerState& opt, const Environment& env,
                                 const SkillLibrary& lib, const TtbConfig& cfg) {
    StepMetrics m;
    std::vector<Gradient> grads;
    CompensatedSum rew;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Trajectory& tau = batch[i];
        check_terminal(tau, env);
        const StepEvals ev = evaluate_trajectory(tau, p, env, lib);
        Gradient g;
        for (const auto& a : ev.fwd)
            for (const auto& te : a.tokens) {
                add_softmax_grad(g.theta, te, -adv[i]);
                if (cfg.kl_coeff > 0) add_kl_grad(g.theta, te, cfg.kl_coeff);
            }
        if (!g.finite()) throw std::runtime_error("non-finite gradient in trajectory " + std::to_string(i));
        m.per_traj_grad_norm.push_back(g.norm());
        rew.add(tau.reward);
        grads.push_back(std::move(g));
    }
    m.mean_reward = rew.value() / static_cast<double>(batch.size());
    return finish_step(grads, std::move(m), p, opt, cfg);
}

}  // namespace

StepMetrics reinforce_step(const std::vector<Trajectory>& batch, PolicyParams& p, OptimizerState& opt,
                           const Environment& env, const SkillLibrary& lib, const TtbConfig& cfg) {
    require_batch(batch);
    CompensatedSum s;
    for (const auto& tau : batch) s.add(tau.reward);
    const double b = s.value() / static_cast<double>(batch.size());
    std::vector<double> adv;
    for (const auto& tau : batch) adv.push_back(tau.reward - b);
    return policy_gradient_step(batch, adv, p, opt, env, lib, cfg);
}

std::vector<double> group_advantages(const std::vector<double>& rewards) {
    if (rewards.size() < 2) throw std::invalid_argument("group size must be at least 2");
    constexpr double tiny = 1e-8;
    CompensatedSum s;
    for (double r : rewards) s.add(r);
    const double mean = s.value() / static_cast<double>(rewards.size());
    CompensatedSum v;
    for (double r : rewards) v.add((r - mean) * (r - mean));
    const double sd = std::sqrt(v.value() / static_cast<double>(rewards.size()));
    std::vector<double> out;
    for (double r : rewards) out.push_back((r - mean) / (sd + tiny));
    return out;
}

StepMetrics grpo_step(const std::vector<Trajectory>& batch, PolicyParams& p, OptimizerState& opt,
                      const Environment& env, const SkillLibrary& lib, const TtbConfig& cfg) {
    require_batch(batch);
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < batch.size(); ++i) groups[batch[i].history.task_id].push_back(i);
    std::vector<double> adv(batch.size());
    for (const auto& [task, idx] : groups) {
        std::vector<double> r;
        for (auto i : idx) r.push_back(batch[i].reward);
        const auto a = group_advantages(r);
        for (std::size_t k = 0; k < idx.size(); ++k) adv[idx[k]] = a[k];
    }
    return policy_gradient_step(batch, adv, p, opt, env, lib, cfg);
}

// ---- plateau --------------------------------------------------------------

bool plateau_detect(const std::vector<double>& h, const TtbConfig& cfg) {
    const std::size_t W = static_cast<std::size_t>(cfg.window_W);
    const std::size_t M = static_cast<std::size_t>(cfg.consecutive_M);
    if (h.size() < (M + 1) * W) throw std::invalid_argument("insufficient history for plateau rule");
    const std::size_t n = h.size();
    // window k covers [n-(k+1)W, n-kW); k = 0 is the most recent
    std::vector<double> mean(M + 1);
    for (std::size_t k = 0; k <= M; ++k) {
        CompensatedSum s;
        for (std::size_t i = n - (k + 1) * W; i < n - k * W; ++i) s.add(h[i]);
        mean[k] = s.value() / static_cast<double>(W);
    }
    for (std::size_t k = 0; k < M; ++k) {
        const double cur = mean[k], prev = mean[k + 1];
        const double rel = prev > 0 ? (prev - cur) / prev : 0.0;
        if (!(rel < cfg.tol_rho)) return false;
    }
    return true;
}

// ---- rollouts -------------------------------------------------------------

Trajectory rollout(const PolicyParams& p, const Environment& env, const SkillLibrary& lib, const std::string& task_id,
                   Philox& rng, double explore, double eps) {
    History h = env.reset(task_id);
    while (!env.is_terminal(h)) {
        const Action a = sample_action(p, env, lib, h, rng, explore);
        h = env.step(h, a, lib).second;
    }
    return env.finish(h, eps);
}

std::string batch_task(const Environment& env, const TtbConfig& cfg, std::uint64_t step, int slot) {
    const auto n = env.tasks().size();
    const std::uint64_t k = step * static_cast<std::uint64_t>(cfg.tasks_per_batch) +
                            static_cast<std::uint64_t>(slot / cfg.trajectories_per_task);
    return env.tasks()[k % n].id;
}

std::vector<Trajectory> collect_batch(const PolicyParams& p, const Environment& env, const SkillLibrary& lib,
                                      const TtbConfig& cfg, std::uint64_t seed, std::uint64_t step, int workers) {
    const int n = cfg.batch_size();
    std::vector<Trajectory> out(static_cast<std::size_t>(n));
    auto run = [&](int slot) {
        Philox rng(seed, step, static_cast<std::uint64_t>(slot));
        out[slot] = rollout(p, env, lib, batch_task(env, cfg, step, slot), rng, cfg.explore, cfg.eps_min);
    };
    workers = std::max(1, std::min(workers, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) run(i);
        return out;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (int i = w; i < n; i += workers) run(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace skillflow
