#include "skillflow/env.hpp"

#include <algorithm>
#include <stdexcept>

namespace skillflow {

const char* to_string(ActionKind k) {
    switch (k) {
        case ActionKind::Skill: return "skill";
        case ActionKind::Act: return "act";
        case ActionKind::Accept: return "accept";
    }
    return "?";
}

ActionKind action_kind_from_string(const std::string& s) {
    if (s == "skill") return ActionKind::Skill;
    if (s == "act") return ActionKind::Act;
    if (s == "accept") return ActionKind::Accept;
    throw std::invalid_argument("unknown action kind: " + s);
}

std::string Action::label() const {
    switch (kind) {
        case ActionKind::Skill: return std::string(1, kSkillSigil) + payload;
        case ActionKind::Act: return payload;
        case ActionKind::Accept: return kAcceptToken;
    }
    return {};
}

std::string Action::emitted() const {
    if (kind == ActionKind::Accept) return {};
    std::string out;
    for (const auto& t : token_seq) out += t;
    return out;
}

std::string History::serialize() const {
    std::string s = context;
    for (const auto& st : steps) {
        s += '|';
        s += st.reasoning;
        s += ',';
        s += st.action.label();
        s += ",o";
        s += std::to_string(st.obs.progress);
        s += st.obs.terminal ? 'T' : 'N';
    }
    return s;
}

std::string History::key() const {
    std::string s = "d" + std::to_string(depth) + "|";
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (i) s += ',';
        s += steps[i].action.label();
    }
    return s;
}

double smooth_reward(double r, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
    if (!(r >= 0.0)) throw std::invalid_argument("reward must be non-negative");
    return r + eps;
}

int common_prefix(const std::string& a, const std::string& b) {
    const std::size_t n = std::min(a.size(), b.size());
    std::size_t i = 0;
    while (i < n && a[i] == b[i]) ++i;
    return static_cast<int>(i);
}

Environment::Environment(EnvSpec spec) : spec_(std::move(spec)) {
    if (spec_.alphabet.empty()) throw std::invalid_argument("empty alphabet");
    for (char c : spec_.alphabet) {
        if (c == kSkillSigil || c == '<' || c == '>' || c == ',' || c == '|' || c == ':')
            throw std::invalid_argument("reserved character in alphabet");
    }
    if (spec_.tasks.empty()) throw std::invalid_argument("no tasks");
    for (std::size_t i = 0; i < spec_.tasks.size(); ++i) {
        const Task& t = spec_.tasks[i];
        if (t.id.empty()) throw std::invalid_argument("empty task id");
        for (std::size_t j = 0; j < i; ++j)
            if (spec_.tasks[j].id == t.id) throw std::invalid_argument("duplicate task id: " + t.id);
        if (t.goals.empty()) throw std::invalid_argument("task " + t.id + " has no goals");
        std::size_t shortest = SIZE_MAX;
        for (const auto& g : t.goals) {
            if (g.sequence.empty()) throw std::invalid_argument("empty goal in task " + t.id);
            if (!(g.weight >= 0.0 && g.weight <= 1.0))
                throw std::invalid_argument("goal reward outside [0,1] in task " + t.id);
            for (char c : g.sequence)
                if (spec_.alphabet.find(c) == std::string::npos)
                    throw std::invalid_argument("goal symbol outside alphabet in task " + t.id);
            shortest = std::min(shortest, g.sequence.size());
        }
        if (t.horizon < 0) throw std::invalid_argument("negative horizon");
        if (spec_.strict && static_cast<std::size_t>(t.horizon) < shortest)
            throw std::invalid_argument("horizon shorter than every goal in task " + t.id);
    }
}

const Task& Environment::task(const std::string& id) const { return spec_.tasks[task_index(id)]; }

std::size_t Environment::task_index(const std::string& id) const {
    for (std::size_t i = 0; i < spec_.tasks.size(); ++i)
        if (spec_.tasks[i].id == id) return i;
    throw std::out_of_range("unknown task id: " + id);
}

History Environment::reset(const std::string& task_id) const {
    const Task& t = task(task_id);
    History h;
    h.task_id = t.id;
    h.context = "q=" + t.id + ";w=" + t.guideline_tag + ";S=";
    for (std::size_t i = 0; i < t.retrieved_skill_ids.size(); ++i) {
        if (i) h.context += ',';
        h.context += t.retrieved_skill_ids[i];
    }
    return h;
}

bool Environment::is_terminal(const History& h, const Task& t) const {
    return h.accepted() || h.depth >= t.horizon;
}

bool Environment::is_terminal(const History& h) const { return is_terminal(h, task(h.task_id)); }

Action Environment::act(char symbol) const {
    if (spec_.alphabet.find(symbol) == std::string::npos)
        throw std::invalid_argument(std::string("symbol not in alphabet: ") + symbol);
    return Action{ActionKind::Act, std::string(1, symbol), {std::string(1, symbol)}};
}

Action Environment::invoke(const SkillLibrary& lib, const std::string& skill_id) const {
    const Skill* s = lib.find(skill_id);
    if (!s) throw std::invalid_argument("skill not in library: " + skill_id);
    Action a{ActionKind::Skill, s->id, {}};
    for (char c : s->expansion) a.token_seq.emplace_back(1, c);
    return a;
}

Action Environment::accept() const { return Action{ActionKind::Accept, "", {kAcceptToken}}; }

std::vector<Action> Environment::legal_actions(const History& h, const SkillLibrary& lib) const {
    std::vector<Action> out;
    if (is_terminal(h)) return out;
    for (char c : spec_.alphabet) out.push_back(act(c));
    for (const auto& s : lib.skills()) out.push_back(invoke(lib, s.id));
    if (spec_.allow_accept) out.push_back(accept());
    return out;
}

int Environment::progress(const std::string& emitted, const Task& t) const {
    int best = 0;
    for (const auto& g : t.goals) best = std::max(best, common_prefix(emitted, g.sequence));
    return best;
}

ExecObservation Environment::observe(const History& h, const Action& a) const {
    const Task& t = task(h.task_id);
    ExecObservation o;
    o.progress = progress(h.emitted + a.emitted(), t);
    o.terminal = a.kind == ActionKind::Accept || h.depth + 1 >= t.horizon;
    return o;
}

std::pair<ExecObservation, History> Environment::step(const History& h, const Action& a,
                                                      const SkillLibrary& lib) const {
    if (is_terminal(h)) throw std::logic_error("step on terminal history");
    switch (a.kind) {
        case ActionKind::Act:
            if (a.payload.size() != 1 || spec_.alphabet.find(a.payload[0]) == std::string::npos ||
                a.token_seq != std::vector<std::string>{a.payload})
                throw std::invalid_argument("illegal primitive action");
            break;
        case ActionKind::Skill:
            if (!lib.find(a.payload)) throw std::invalid_argument("skill not in library: " + a.payload);
            if (a.token_seq != invoke(lib, a.payload).token_seq)
                throw std::invalid_argument("skill tokens do not match expansion");
            break;
        case ActionKind::Accept:
            if (!spec_.allow_accept) throw std::invalid_argument("accept disabled");
            break;
    }
    ExecObservation o = observe(h, a);
    History next = h;
    next.steps.push_back(Step{kReasoningToken, a, o});
    next.emitted += a.emitted();
    next.depth += 1;
    return {o, std::move(next)};
}

double Environment::reward_of(const std::string& emitted, const Task& t) {
    double best = 0.0;
    for (const auto& g : t.goals) {
        const double frac = static_cast<double>(common_prefix(emitted, g.sequence)) / g.sequence.size();
        best = std::max(best, g.weight * frac);
    }
    return best;
}

double Environment::reward(const Trajectory& tau) const {
    if (!is_terminal(tau.history)) throw std::logic_error("reward of non-terminal trajectory");
    return reward_of(tau.history.emitted, task(tau.history.task_id));
}

Trajectory Environment::finish(const History& h, double eps) const {
    if (!is_terminal(h)) throw std::logic_error("trajectory is not terminal");
    Trajectory tau;
    tau.history = h;
    tau.reward = reward_of(h.emitted, task(h.task_id));
    tau.smoothed_reward = smooth_reward(tau.reward, eps);
    tau.length = h.depth;
    return tau;
}

}  // namespace skillflow
