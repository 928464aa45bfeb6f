#pragma once

#include <deque>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "skillflow/config.hpp"
#include "skillflow/curation.hpp"
#include "skillflow/diagnostics.hpp"
#include "skillflow/trainer.hpp"

namespace skillflow {

struct MetricsRow {
    long step = 0;
    double loss_ttb = 0.0;
    double mean_reward = 0.0;
    double mean_abs_delta = 0.0;
    double flow_entropy = 0.0;
    double logz_mean = 0.0;
    std::size_t library_size = 0;
    double grad_norm_theta = 0.0;
    double grad_norm_phi = 0.0;
    bool plateau_flag = false;

    std::string csv() const;
};

struct PlateauEvent {
    long step = 0;
    int phase = 0;
    double level = 0.0;  // running mean of the plateau signal over the last window
};

struct CurationEvent {
    long step = 0;
    SkillLibrary before;
    CurationResult result;
};

/// The phase loop: rollout, update, plateau check, curation.
class Runner {
public:
    Runner(RunConfig cfg, int workers);

    /// One training step. Returns false once max_steps is reached or a
    /// plateau stops the run.
    bool step();
    void run();

    const RunConfig& config() const { return cfg_; }
    const Environment& env() const { return env_; }
    const TrainerState& state() const { return state_; }
    TrainerState& state() { return state_; }
    long steps_done() const { return step_; }
    bool finished() const { return done_; }

    const MetricsRow& last_row() const { return last_row_; }
    const StepMetrics& last_metrics() const { return last_metrics_; }
    const std::vector<Trajectory>& last_batch() const { return last_batch_; }
    const std::vector<ResidualRecord>& last_records() const { return last_records_; }
    const std::vector<PlateauEvent>& plateaus() const { return plateaus_; }
    const std::vector<CurationEvent>& curations() const { return curations_; }

    std::function<void(const Runner&)> on_step;            // after metrics are final
    std::function<void(const CurationEvent&)> on_curation;  // after a boundary

private:
    RunConfig cfg_;
    int workers_;
    Environment env_;
    TrainerState state_;
    long step_ = 0;
    bool done_ = false;
    int phases_ = 0;
    std::deque<std::vector<LoggedTrajectory>> window_logs_;
    MetricsRow last_row_;
    StepMetrics last_metrics_;
    std::vector<Trajectory> last_batch_;
    std::vector<ResidualRecord> last_records_;
    std::vector<PlateauEvent> plateaus_;
    std::vector<CurationEvent> curations_;
};

/// Mean root-state action entropy over all tasks.
double mean_root_entropy(const PolicyParams& p, const Environment& env, const SkillLibrary& lib);

/// Runs training and writes metrics.csv, trajectories.jsonl, curation.jsonl
/// and checkpoint.txt into out_dir. Returns the process exit status.
int cmd_train(const RunConfig& cfg, const std::string& out_dir, int workers, std::ostream& log);

struct CheckResult {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct VerifyOptions {
    std::vector<double> betas{1.0, 2.0, 5.0};
    std::uint64_t rollouts = 100000;
    bool inject_flow_fault = false;  // adds 0.5 to the root flow before the conservation check
};

std::vector<CheckResult> cmd_verify(const RunConfig& cfg, const VerifyOptions& opt, std::ostream& out);

/// Line-delimited node and edge records of one task's DAG.
void cmd_dump_dag(const RunConfig& cfg, const std::string& task_id, std::ostream& out);

/// Reads trajectories.jsonl, writes per-step credit records and per-skill
/// stats (grouped by training step) as JSON lines.
void cmd_diagnose(std::istream& in, std::ostream& out, const MarkerThresholds& markers = {});

struct Q4Row {
    int step;
    double log_pi;
    double log_pphi;
    double tabulated_importance;
    double tabulated_log_flow;
};

const std::vector<Q4Row>& q4_rows();
inline constexpr double kQ4LogZ = -2.30;
inline constexpr double kQ4FinalLogFlow = 47.95;

/// Recomputes the importance and log-flow columns; true when every
/// importance is within 5% and the final log-flow within 0.05.
bool cmd_fixture_q4(std::ostream& out);

}  // namespace skillflow
