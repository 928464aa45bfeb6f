#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "skillflow/diagnostics.hpp"
#include "skillflow/skill.hpp"
#include "skillflow/trainer.hpp"

namespace skillflow {

struct CurationThresholds {
    double g_thr = 0.0;
    double jensen_thr = 0.5;
    int prune_K = 2;
    double trigger_zeta = 5.0;
    int macro_len = 2;
    int l_max = 4;
    double pair_margin = 0.5;  // minimum reward gap of a success/failure pair
    int max_new_skills = 8;    // creations per boundary

    void validate() const;
};

struct Classification {
    std::vector<std::string> prune;
    std::vector<std::string> retain;
    std::vector<std::string> refine;
};

/// Skills absent from `stats` had no visits and go to refine unless the
/// negative counter already prunes them.
Classification classify_skills(const SkillLibrary& lib, const std::map<std::string, SkillStats>& stats,
                               const CurationThresholds& thr);

SkillLibrary update_negative_counters(SkillLibrary lib, const std::map<std::string, SkillStats>& stats);

struct TrajectoryPair {
    std::size_t success = 0;  // index into the logged batch
    std::size_t failure = 0;
};

/// One pair per task: its best and worst trajectory, kept when the reward gap
/// reaches thr.pair_margin. Ties keep the earliest trajectory.
std::vector<TrajectoryPair> build_pairs(const std::vector<LoggedTrajectory>& batch, const CurationThresholds& thr);

/// Steps of a trajectory that invoke one of the given skills.
std::set<int> covered_steps(const LoggedTrajectory& tau, const std::set<std::string>& skill_ids);

std::vector<int> find_trigger_steps(const LoggedTrajectory& success, const LoggedTrajectory& failure,
                                    const std::vector<StepCredit>& credits, const std::set<int>& covered,
                                    const CurationThresholds& thr);

bool check_atomicity(const Skill& s, int l_max);
bool check_atomicity(const Skill& s, int l_max, const std::string& alphabet);

/// Adds a macro made of the next macro_len symbols the success trajectory
/// emitted from step t on. Returns the new or the already existing skill id;
/// nullopt when the slice is empty.
std::optional<std::string> create_skill(const LoggedTrajectory& success, const LoggedTrajectory& failure, int t,
                                        SkillLibrary& lib, const CurationThresholds& thr, int phase);

Skill refine_skill(const Skill& s, const CurationThresholds& thr);

struct CurationResult {
    SkillLibrary library;
    Classification classes;
    std::map<std::string, SkillStats> stats;
    std::vector<std::string> created;
    std::vector<std::string> refined;
    std::vector<std::string> pruned;
    std::vector<std::pair<std::size_t, int>> triggers;  // (trajectory index, step)
};

CurationResult curate(const SkillLibrary& lib, const std::map<std::string, SkillStats>& stats,
                      const std::vector<LoggedTrajectory>& batch, const std::vector<TrajectoryPair>& pairs,
                      const CurationThresholds& thr, const std::string& alphabet);

struct TrainerState {
    PolicyParams params;
    OptimizerState opt;
    SkillLibrary library;
    std::vector<double> plateau_history;
};

/// Keeps θ and φ, resets log Z (to its initial value unless warm), clears
/// the plateau history and installs the new library.
void phase_transition(TrainerState& state, SkillLibrary new_library, bool warm_logz);

}  // namespace skillflow
