#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skillflow/curation.hpp"
#include "skillflow/env.hpp"
#include "skillflow/policy.hpp"
#include "skillflow/trainer.hpp"

namespace skillflow {

enum class TrainerKind { Ttb, Reinforce, Grpo };
const char* to_string(TrainerKind k);
TrainerKind trainer_kind_from_string(const std::string& s);

struct RunConfig {
    EnvSpec env;
    std::vector<std::string> initial_skills;  // expansions
    TtbConfig ttb;
    CurationThresholds curation;
    TrainerKind trainer = TrainerKind::Ttb;
    int window_fwd = 12;
    int window_bwd = -1;  // -1: same as window_fwd
    double logz_init = -2.30;
    BackwardMode backward_mode = BackwardMode::Hindsight;
    bool curation_enabled = true;
    bool warm_logz = false;
    int max_phases = 8;
    bool stop_on_plateau = false;
    std::uint64_t seed = 0;
    long max_steps = 1000;
    std::string output_dir = "out";
    int trajectory_log_every = 1;  // 0 disables trajectories.jsonl rows
    std::size_t node_budget = 1'000'000;

    void validate() const;
    int effective_window_bwd() const { return window_bwd < 0 ? window_fwd : window_bwd; }
};

/// Parses the flat `key = value` format; `#` starts a comment. Unknown keys,
/// repeated keys and malformed values are errors.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& c);

/// Goal list syntax: tasks separated by ';', goals by ',', each "SEQ:weight".
std::vector<Task> parse_goals(const std::string& spec, int horizon);

PolicyParams make_params(const RunConfig& c);
SkillLibrary make_library(const RunConfig& c);

}  // namespace skillflow
