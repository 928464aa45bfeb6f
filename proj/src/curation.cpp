#include "skillflow/curation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace skillflow {

void CurationThresholds::validate() const {
    auto bad = [](const char* what) { throw std::invalid_argument(std::string("invalid thresholds: ") + what); };
    if (!std::isfinite(g_thr) || !std::isfinite(jensen_thr) || !std::isfinite(trigger_zeta) ||
        !std::isfinite(pair_margin))
        bad("non-finite value");
    if (prune_K < 1) bad("prune_K must be at least 1");
    if (macro_len < 1) bad("macro_len must be at least 1");
    if (l_max < 1 || macro_len > l_max) bad("need 1 <= macro_len <= l_max");
    if (max_new_skills < 0) bad("max_new_skills must be non-negative");
}

Classification classify_skills(const SkillLibrary& lib, const std::map<std::string, SkillStats>& stats,
                               const CurationThresholds& thr) {
    Classification c;
    for (const auto& s : lib.skills()) {
        if (s.negative_share_count >= thr.prune_K) {
            c.prune.push_back(s.id);
            continue;
        }
        auto it = stats.find(s.id);
        if (it == stats.end()) {
            c.refine.push_back(s.id);
            continue;
        }
        if (it->second.G >= thr.g_thr && it->second.jensen_gap <= thr.jensen_thr)
            c.retain.push_back(s.id);
        else
            c.refine.push_back(s.id);
    }
    return c;
}

SkillLibrary update_negative_counters(SkillLibrary lib, const std::map<std::string, SkillStats>& stats) {
    for (const auto& [id, st] : stats)
        if (Skill* s = lib.find_mut(id); s && st.centered_share < 0) s->negative_share_count += 1;
    return lib;
}

std::vector<TrajectoryPair> build_pairs(const std::vector<LoggedTrajectory>& batch, const CurationThresholds& thr) {
    std::map<std::string, std::pair<std::size_t, std::size_t>> best_worst;
    std::vector<std::string> order;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto [it, fresh] = best_worst.try_emplace(batch[i].task_id, i, i);
        if (fresh) {
            order.push_back(batch[i].task_id);
            continue;
        }
        if (batch[i].reward > batch[it->second.first].reward) it->second.first = i;
        if (batch[i].reward < batch[it->second.second].reward) it->second.second = i;
    }
    std::vector<TrajectoryPair> out;
    for (const auto& task : order) {
        const auto [b, w] = best_worst[task];
        if (batch[b].reward - batch[w].reward >= thr.pair_margin && batch[b].reward > batch[w].reward)
            out.push_back({b, w});
    }
    return out;
}

std::set<int> covered_steps(const LoggedTrajectory& tau, const std::set<std::string>& skill_ids) {
    std::set<int> out;
    for (std::size_t t = 0; t < tau.steps.size(); ++t)
        if (tau.steps[t].kind == ActionKind::Skill && skill_ids.count(tau.steps[t].payload))
            out.insert(static_cast<int>(t));
    return out;
}

std::vector<int> find_trigger_steps(const LoggedTrajectory& success, const LoggedTrajectory& failure,
                                    const std::vector<StepCredit>& credits, const std::set<int>& covered,
                                    const CurationThresholds& thr) {
    if (success.task_id != failure.task_id) throw std::invalid_argument("pair spans two tasks");
    std::vector<int> out;
    for (const auto& c : credits)
        if (c.log_importance >= thr.trigger_zeta && !covered.count(c.t)) out.push_back(c.t);
    return out;
}

bool check_atomicity(const Skill& s, int l_max) {
    const auto n = static_cast<int>(s.expansion.size());
    return n >= 1 && n <= l_max && s.expansion.find(kSkillSigil) == std::string::npos;
}

bool check_atomicity(const Skill& s, int l_max, const std::string& alphabet) {
    if (!check_atomicity(s, l_max)) return false;
    return std::all_of(s.expansion.begin(), s.expansion.end(),
                       [&](char c) { return alphabet.find(c) != std::string::npos; });
}

std::optional<std::string> create_skill(const LoggedTrajectory& success, const LoggedTrajectory& failure, int t,
                                        SkillLibrary& lib, const CurationThresholds& thr, int phase) {
    if (success.task_id != failure.task_id) throw std::invalid_argument("pair spans two tasks");
    if (t < 0 || t >= static_cast<int>(success.steps.size())) throw std::out_of_range("trigger step out of range");
    std::size_t offset = 0;
    for (int i = 0; i < t; ++i) offset += success.steps[i].emitted.size();
    if (offset >= success.emitted.size()) return std::nullopt;
    const std::string body = success.emitted.substr(offset, static_cast<std::size_t>(thr.macro_len));
    Skill probe;
    probe.expansion = body;
    if (!check_atomicity(probe, thr.l_max)) return std::nullopt;
    return lib.add(body, phase, "created:" + success.task_id + ":" + std::to_string(t));
}

Skill refine_skill(const Skill& s, const CurationThresholds& thr) {
    Skill out = s;
    if (out.expansion.size() > 1) {
        out.expansion.pop_back();
        out.provenance = "refined:" + s.expansion;
    }
    (void)thr;
    return out;
}

CurationResult curate(const SkillLibrary& lib, const std::map<std::string, SkillStats>& stats,
                      const std::vector<LoggedTrajectory>& batch, const std::vector<TrajectoryPair>& pairs,
                      const CurationThresholds& thr, const std::string& alphabet) {
    CurationResult r;
    r.stats = stats;
    const SkillLibrary counted = update_negative_counters(lib, stats);
    r.classes = classify_skills(counted, stats, thr);
    r.pruned = r.classes.prune;

    SkillLibrary next;
    next.phase = lib.phase + 1;
    next.set_next_index(lib.next_index());
    for (const auto& id : r.classes.retain) next.insert(*counted.find(id));
    for (const auto& id : r.classes.refine) {
        Skill s = refine_skill(*counted.find(id), thr);
        if (next.find_by_expansion(s.expansion)) continue;  // merged into an existing macro
        next.insert(s);
        r.refined.push_back(id);
    }

    std::set<std::string> kept;
    for (const auto& s : next.skills()) kept.insert(s.id);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto& pos = batch.at(pairs[k].success);
        const auto& neg = batch.at(pairs[k].failure);
        const auto credits = step_credits(pos);
        for (int t : find_trigger_steps(pos, neg, credits, covered_steps(pos, kept), thr)) {
            r.triggers.emplace_back(pairs[k].success, t);
            if (static_cast<int>(r.created.size()) >= thr.max_new_skills) continue;
            const std::size_t before = next.size();
            auto id = create_skill(pos, neg, t, next, thr, next.phase);
            if (id && next.size() > before) r.created.push_back(*id);
        }
    }
    for (const auto& s : next.skills())
        if (!check_atomicity(s, thr.l_max, alphabet))
            throw std::logic_error("curation produced a non-atomic skill " + s.id);
    r.library = std::move(next);
    return r;
}

void phase_transition(TrainerState& state, SkillLibrary new_library, bool warm_logz) {
    state.library = std::move(new_library);
    if (!warm_logz)
        for (auto& [task, lz] : state.params.log_partition) lz = state.params.logz_init;
    state.opt.m_logz.clear();
    state.opt.v_logz.clear();
    state.plateau_history.clear();
}

}  // namespace skillflow
