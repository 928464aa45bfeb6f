#include "skillflow/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "skillflow/io.hpp"

namespace skillflow {

const char* to_string(TrainerKind k) {
    switch (k) {
        case TrainerKind::Ttb: return "ttb";
        case TrainerKind::Reinforce: return "reinforce";
        case TrainerKind::Grpo: return "grpo";
    }
    return "?";
}

TrainerKind trainer_kind_from_string(const std::string& s) {
    if (s == "ttb") return TrainerKind::Ttb;
    if (s == "reinforce") return TrainerKind::Reinforce;
    if (s == "grpo") return TrainerKind::Grpo;
    throw std::invalid_argument("unknown trainer: " + s);
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    double x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("bad number for " + key + ": " + v);
    return x;
}

long long to_int(const std::string& key, const std::string& v) {
    long long x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("bad integer for " + key + ": " + v);
    return x;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("bad boolean for " + key + ": " + v);
}

std::string join(const std::vector<std::string>& xs, char sep) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += sep;
        s += xs[i];
    }
    return s;
}

}  // namespace

std::vector<Task> parse_goals(const std::string& spec, int horizon) {
    std::vector<Task> tasks;
    const auto groups = split(spec, ';');
    for (std::size_t i = 0; i < groups.size(); ++i) {
        Task t;
        t.id = "q" + std::to_string(i);
        t.horizon = horizon;
        for (const auto& item : split(groups[i], ',')) {
            const auto colon = item.find(':');
            Goal g;
            if (colon == std::string::npos) {
                g.sequence = item;
            } else {
                g.sequence = trim(item.substr(0, colon));
                g.weight = to_double("goals", trim(item.substr(colon + 1)));
            }
            if (g.sequence.empty()) throw std::invalid_argument("empty goal in task " + t.id);
            t.goals.push_back(g);
        }
        tasks.push_back(std::move(t));
    }
    return tasks;
}

void RunConfig::validate() const {
    ttb.validate();
    curation.validate();
    Environment probe(env);
    if (window_fwd < 0) throw std::invalid_argument("window_fwd must be non-negative");
    if (window_bwd < -1) throw std::invalid_argument("window_bwd must be >= 0 (or -1 for window_fwd)");
    if (max_steps < 0) throw std::invalid_argument("max_steps must be non-negative");
    if (max_phases < 0) throw std::invalid_argument("max_phases must be non-negative");
    if (trajectory_log_every < 0) throw std::invalid_argument("trajectory_log_every must be non-negative");
    if (!std::isfinite(logz_init)) throw std::invalid_argument("logz_init must be finite");
    if (trainer == TrainerKind::Grpo && ttb.trajectories_per_task < 2)
        throw std::invalid_argument("grpo needs at least two trajectories per task");
    for (const auto& e : initial_skills) {
        Skill s;
        s.expansion = e;
        if (!check_atomicity(s, curation.l_max, env.alphabet))
            throw std::invalid_argument("initial skill is not atomic: " + e);
    }
}

RunConfig parse_config(const std::string& text) {
    RunConfig c;
    std::string goals = "AB:1.0";
    std::string guidelines;
    int horizon = 12;
    std::set<std::string> seen;

    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter> setters = {
        {"alphabet", [&](auto&, auto& v) { c.env.alphabet = v; }},
        {"goals", [&](auto&, auto& v) { goals = v; }},
        {"guidelines", [&](auto&, auto& v) { guidelines = v; }},
        {"horizon", [&](auto& k, auto& v) { horizon = static_cast<int>(to_int(k, v)); }},
        {"allow_accept", [&](auto& k, auto& v) { c.env.allow_accept = to_bool(k, v); }},
        {"initial_skills", [&](auto&, auto& v) { c.initial_skills = v.empty() ? std::vector<std::string>{} : split(v, ','); }},
        {"beta", [&](auto& k, auto& v) { c.ttb.beta = to_double(k, v); }},
        {"eps_min", [&](auto& k, auto& v) { c.ttb.eps_min = to_double(k, v); }},
        {"lr", [&](auto& k, auto& v) { c.ttb.lr = to_double(k, v); }},
        {"lr_logz", [&](auto& k, auto& v) { c.ttb.lr_logz = to_double(k, v); }},
        {"lr_phi", [&](auto& k, auto& v) { c.ttb.lr_phi = to_double(k, v); }},
        {"grad_clip", [&](auto& k, auto& v) { c.ttb.grad_clip = to_double(k, v); }},
        {"kl_coeff", [&](auto& k, auto& v) { c.ttb.kl_coeff = to_double(k, v); }},
        {"tasks_per_batch", [&](auto& k, auto& v) { c.ttb.tasks_per_batch = static_cast<int>(to_int(k, v)); }},
        {"trajectories_per_task", [&](auto& k, auto& v) { c.ttb.trajectories_per_task = static_cast<int>(to_int(k, v)); }},
        {"window_W", [&](auto& k, auto& v) { c.ttb.window_W = static_cast<int>(to_int(k, v)); }},
        {"tol_rho", [&](auto& k, auto& v) { c.ttb.tol_rho = to_double(k, v); }},
        {"consecutive_M", [&](auto& k, auto& v) { c.ttb.consecutive_M = static_cast<int>(to_int(k, v)); }},
        {"phi_grad", [&](auto&, auto& v) { c.ttb.phi_grad = phi_grad_from_string(v); }},
        {"optimizer", [&](auto&, auto& v) { c.ttb.optimizer = optimizer_from_string(v); }},
        {"adam_beta1", [&](auto& k, auto& v) { c.ttb.adam_beta1 = to_double(k, v); }},
        {"adam_beta2", [&](auto& k, auto& v) { c.ttb.adam_beta2 = to_double(k, v); }},
        {"adam_eps", [&](auto& k, auto& v) { c.ttb.adam_eps = to_double(k, v); }},
        {"explore", [&](auto& k, auto& v) { c.ttb.explore = to_double(k, v); }},
        {"g_thr", [&](auto& k, auto& v) { c.curation.g_thr = to_double(k, v); }},
        {"jensen_thr", [&](auto& k, auto& v) { c.curation.jensen_thr = to_double(k, v); }},
        {"prune_K", [&](auto& k, auto& v) { c.curation.prune_K = static_cast<int>(to_int(k, v)); }},
        {"trigger_zeta", [&](auto& k, auto& v) { c.curation.trigger_zeta = to_double(k, v); }},
        {"macro_len", [&](auto& k, auto& v) { c.curation.macro_len = static_cast<int>(to_int(k, v)); }},
        {"l_max", [&](auto& k, auto& v) { c.curation.l_max = static_cast<int>(to_int(k, v)); }},
        {"pair_margin", [&](auto& k, auto& v) { c.curation.pair_margin = to_double(k, v); }},
        {"max_new_skills", [&](auto& k, auto& v) { c.curation.max_new_skills = static_cast<int>(to_int(k, v)); }},
        {"trainer", [&](auto&, auto& v) { c.trainer = trainer_kind_from_string(v); }},
        {"window_fwd", [&](auto& k, auto& v) { c.window_fwd = static_cast<int>(to_int(k, v)); }},
        {"window_bwd", [&](auto& k, auto& v) { c.window_bwd = static_cast<int>(to_int(k, v)); }},
        {"logz_init", [&](auto& k, auto& v) { c.logz_init = to_double(k, v); }},
        {"backward_mode", [&](auto&, auto& v) { c.backward_mode = backward_mode_from_string(v); }},
        {"curation", [&](auto& k, auto& v) { c.curation_enabled = to_bool(k, v); }},
        {"warm_logz", [&](auto& k, auto& v) { c.warm_logz = to_bool(k, v); }},
        {"max_phases", [&](auto& k, auto& v) { c.max_phases = static_cast<int>(to_int(k, v)); }},
        {"stop_on_plateau", [&](auto& k, auto& v) { c.stop_on_plateau = to_bool(k, v); }},
        {"seed", [&](auto& k, auto& v) { c.seed = static_cast<std::uint64_t>(to_int(k, v)); }},
        {"max_steps", [&](auto& k, auto& v) { c.max_steps = static_cast<long>(to_int(k, v)); }},
        {"output_dir", [&](auto&, auto& v) { c.output_dir = v; }},
        {"trajectory_log_every", [&](auto& k, auto& v) { c.trajectory_log_every = static_cast<int>(to_int(k, v)); }},
        {"node_budget", [&](auto& k, auto& v) { c.node_budget = static_cast<std::size_t>(to_int(k, v)); }},
    };

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end()) throw std::invalid_argument("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (!seen.insert(key).second)
            throw std::invalid_argument("line " + std::to_string(lineno) + ": repeated key '" + key + "'");
        it->second(key, value);
    }
    c.env.tasks = parse_goals(goals, horizon);
    if (!guidelines.empty()) {
        const auto tags = split(guidelines, ';');
        if (tags.size() != c.env.tasks.size()) throw std::invalid_argument("guidelines must match the task count");
        for (std::size_t i = 0; i < tags.size(); ++i) c.env.tasks[i].guideline_tag = tags[i];
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string to_text(const RunConfig& c) {
    std::ostringstream o;
    auto d = [](double x) { return format_double(x); };
    o << "alphabet = " << c.env.alphabet << "\n";
    std::vector<std::string> groups, tags;
    bool any_tag = false;
    for (const auto& t : c.env.tasks) {
        std::vector<std::string> gs;
        for (const auto& g : t.goals) gs.push_back(g.sequence + ":" + d(g.weight));
        groups.push_back(join(gs, ','));
        tags.push_back(t.guideline_tag);
        any_tag = any_tag || !t.guideline_tag.empty();
    }
    o << "goals = " << join(groups, ';') << "\n";
    if (any_tag) o << "guidelines = " << join(tags, ';') << "\n";
    o << "horizon = " << (c.env.tasks.empty() ? 12 : c.env.tasks.front().horizon) << "\n";
    o << "allow_accept = " << (c.env.allow_accept ? "true" : "false") << "\n";
    o << "initial_skills = " << join(c.initial_skills, ',') << "\n";
    o << "beta = " << d(c.ttb.beta) << "\n";
    o << "eps_min = " << d(c.ttb.eps_min) << "\n";
    o << "lr = " << d(c.ttb.lr) << "\n";
    o << "lr_logz = " << d(c.ttb.lr_logz) << "\n";
    o << "lr_phi = " << d(c.ttb.lr_phi) << "\n";
    o << "grad_clip = " << d(c.ttb.grad_clip) << "\n";
    o << "kl_coeff = " << d(c.ttb.kl_coeff) << "\n";
    o << "tasks_per_batch = " << c.ttb.tasks_per_batch << "\n";
    o << "trajectories_per_task = " << c.ttb.trajectories_per_task << "\n";
    o << "window_W = " << c.ttb.window_W << "\n";
    o << "tol_rho = " << d(c.ttb.tol_rho) << "\n";
    o << "consecutive_M = " << c.ttb.consecutive_M << "\n";
    o << "phi_grad = " << to_string(c.ttb.phi_grad) << "\n";
    o << "optimizer = " << to_string(c.ttb.optimizer) << "\n";
    o << "adam_beta1 = " << d(c.ttb.adam_beta1) << "\n";
    o << "adam_beta2 = " << d(c.ttb.adam_beta2) << "\n";
    o << "adam_eps = " << d(c.ttb.adam_eps) << "\n";
    o << "explore = " << d(c.ttb.explore) << "\n";
    o << "g_thr = " << d(c.curation.g_thr) << "\n";
    o << "jensen_thr = " << d(c.curation.jensen_thr) << "\n";
    o << "prune_K = " << c.curation.prune_K << "\n";
    o << "trigger_zeta = " << d(c.curation.trigger_zeta) << "\n";
    o << "macro_len = " << c.curation.macro_len << "\n";
    o << "l_max = " << c.curation.l_max << "\n";
    o << "pair_margin = " << d(c.curation.pair_margin) << "\n";
    o << "max_new_skills = " << c.curation.max_new_skills << "\n";
    o << "trainer = " << to_string(c.trainer) << "\n";
    o << "window_fwd = " << c.window_fwd << "\n";
    o << "window_bwd = " << c.window_bwd << "\n";
    o << "logz_init = " << d(c.logz_init) << "\n";
    o << "backward_mode = " << to_string(c.backward_mode) << "\n";
    o << "curation = " << (c.curation_enabled ? "true" : "false") << "\n";
    o << "warm_logz = " << (c.warm_logz ? "true" : "false") << "\n";
    o << "max_phases = " << c.max_phases << "\n";
    o << "stop_on_plateau = " << (c.stop_on_plateau ? "true" : "false") << "\n";
    o << "seed = " << c.seed << "\n";
    o << "max_steps = " << c.max_steps << "\n";
    o << "output_dir = " << c.output_dir << "\n";
    o << "trajectory_log_every = " << c.trajectory_log_every << "\n";
    o << "node_budget = " << c.node_budget << "\n";
    return o.str();
}

PolicyParams make_params(const RunConfig& c) {
    PolicyParams p;
    p.window_fwd = c.window_fwd;
    p.window_bwd = c.effective_window_bwd();
    p.logz_init = c.logz_init;
    p.backward_mode = c.backward_mode;
    for (const auto& t : c.env.tasks) p.register_task(t.id);
    return p;
}

SkillLibrary make_library(const RunConfig& c) {
    SkillLibrary lib;
    for (const auto& e : c.initial_skills) lib.add(e, 0, "initial");
    return lib;
}

}  // namespace skillflow
