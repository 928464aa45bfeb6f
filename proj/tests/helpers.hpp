#pragma once

#include <string>

#include "skillflow/config.hpp"
#include "skillflow/env.hpp"

namespace skillflow::testing {

inline EnvSpec make_spec(const std::string& alphabet, const std::string& goals, int horizon, bool accept = true) {
    EnvSpec s;
    s.alphabet = alphabet;
    s.tasks = parse_goals(goals, horizon);
    s.allow_accept = accept;
    return s;
}

inline Environment make_env(const std::string& alphabet, const std::string& goals, int horizon, bool accept = true) {
    return Environment(make_spec(alphabet, goals, horizon, accept));
}

/// Follows a string of primitive symbols from the root of the first task.
inline History walk(const Environment& env, const SkillLibrary& lib, const std::string& symbols) {
    History h = env.reset(env.tasks().front().id);
    for (char c : symbols) h = env.step(h, env.act(c), lib).second;
    return h;
}

}  // namespace skillflow::testing
