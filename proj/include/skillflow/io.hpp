#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillflow/curation.hpp"
#include "skillflow/diagnostics.hpp"
#include "skillflow/policy.hpp"
#include "skillflow/skill.hpp"
#include "skillflow/trainer.hpp"

namespace skillflow {

/// Shortest text that parses back to the same double.
std::string format_double(double x);
double parse_double(const std::string& s);

void write_checkpoint(std::ostream& out, const PolicyParams& p, const SkillLibrary& lib);
void read_checkpoint(std::istream& in, PolicyParams& p, SkillLibrary& lib);

inline const char* kMetricsHeader =
    "step,loss_ttb,mean_reward,mean_abs_delta,flow_entropy,logZ_mean,library_size,grad_norm_theta,grad_norm_phi,"
    "plateau_flag";

nlohmann::ordered_json trajectory_record(std::uint64_t step, int slot, const Trajectory& tau, const ResidualRecord& r);
LoggedTrajectory logged_from_record(const nlohmann::json& rec);

nlohmann::ordered_json skill_stats_record(const SkillStats& s);
nlohmann::ordered_json curation_record(std::uint64_t step, const SkillLibrary& before, const CurationResult& r);

}  // namespace skillflow
