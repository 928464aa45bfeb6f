#pragma once

#include <string>
#include <utility>
#include <vector>

#include "skillflow/skill.hpp"

namespace skillflow {

struct Goal {
    std::string sequence;
    double weight = 1.0;
};

struct Task {
    std::string id;
    std::vector<Goal> goals;
    std::string guideline_tag;  // opaque, only enters the context encoding
    std::vector<std::string> retrieved_skill_ids;
    int horizon = 12;
};

enum class ActionKind { Skill, Act, Accept };

const char* to_string(ActionKind k);
ActionKind action_kind_from_string(const std::string& s);

inline const std::string kAcceptToken = "<acc>";
inline const std::string kReasoningToken = "<r>";

struct Action {
    ActionKind kind = ActionKind::Act;
    std::string payload;                 // skill id, primitive symbol, or empty
    std::vector<std::string> token_seq;  // K_t symbols

    int num_tokens() const { return static_cast<int>(token_seq.size()); }
    /// Short label used in node keys and policy contexts: "A", "@s1", "<acc>".
    std::string label() const;
    /// Symbols this action appends to the emitted string.
    std::string emitted() const;
    bool operator==(const Action&) const = default;
};

struct ExecObservation {
    int progress = 0;
    bool terminal = false;
    bool operator==(const ExecObservation&) const = default;
};

struct Step {
    std::string reasoning = kReasoningToken;
    Action action;
    ExecObservation obs;
};

struct History {
    std::string task_id;
    std::string context;  // task, guideline and retrieved skills
    std::vector<Step> steps;
    std::string emitted;
    int depth = 0;

    std::string serialize() const;
    /// Canonical node key: depth plus action labels.
    std::string key() const;
    bool accepted() const { return !steps.empty() && steps.back().action.kind == ActionKind::Accept; }
};

struct Trajectory {
    History history;
    double reward = 0.0;
    double smoothed_reward = 0.0;
    int length = 0;
};

struct EnvSpec {
    std::string alphabet = "ABCDEF";
    std::vector<Task> tasks;
    bool allow_accept = true;
    /// When false, the horizon-vs-goal-length invariant is not enforced.
    bool strict = true;
};

double smooth_reward(double r, double eps);

/// Longest common prefix length.
int common_prefix(const std::string& a, const std::string& b);

class Environment {
public:
    explicit Environment(EnvSpec spec);

    const EnvSpec& spec() const { return spec_; }
    const std::string& alphabet() const { return spec_.alphabet; }
    const std::vector<Task>& tasks() const { return spec_.tasks; }
    const Task& task(const std::string& id) const;
    std::size_t task_index(const std::string& id) const;

    History reset(const std::string& task_id) const;
    std::pair<ExecObservation, History> step(const History& h, const Action& a, const SkillLibrary& lib) const;
    bool is_terminal(const History& h) const;
    bool is_terminal(const History& h, const Task& t) const;

    std::vector<Action> legal_actions(const History& h, const SkillLibrary& lib) const;
    Action act(char symbol) const;
    Action invoke(const SkillLibrary& lib, const std::string& skill_id) const;
    Action accept() const;

    /// Observation an action would produce from h, without building the child.
    ExecObservation observe(const History& h, const Action& a) const;
    int progress(const std::string& emitted, const Task& t) const;

    double reward(const Trajectory& tau) const;
    static double reward_of(const std::string& emitted, const Task& t);
    Trajectory finish(const History& h, double eps) const;

private:
    EnvSpec spec_;
};

}  // namespace skillflow
