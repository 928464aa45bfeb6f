#include <doctest.h>

#include <algorithm>
#include <set>
#include <stdexcept>

#include "helpers.hpp"
#include "skillflow/cli.hpp"
#include "skillflow/config.hpp"
#include "skillflow/curation.hpp"
#include "skillflow/rng.hpp"

using namespace skillflow;

namespace {

SkillStats stats_of(const std::string& id, double g, double gap, double centered = 0.0) {
    SkillStats s;
    s.skill_id = id;
    s.G = g;
    s.jensen_gap = gap;
    s.centered_share = centered;
    s.visit_log_flows = {g};
    return s;
}

// One primitive step per symbol, each with the given log importance.
LoggedTrajectory primitive_traj(const std::string& task, const std::string& symbols, std::vector<double> li,
                                double reward) {
    LoggedTrajectory t;
    t.task_id = task;
    t.reward = reward;
    t.emitted = symbols;
    for (std::size_t i = 0; i < symbols.size(); ++i)
        t.steps.push_back({ActionKind::Act, std::string(1, symbols[i]), std::string(1, symbols[i]), li.at(i), 0.0});
    return t;
}

RunConfig floor_config(std::uint64_t seed) {
    return parse_config(
        "alphabet = AB\ngoals = AAA:1.0,BBB:1.0\nhorizon = 3\nallow_accept = false\n"
        "kl_coeff = 0\ntasks_per_batch = 1\ntrajectories_per_task = 8\n"
        "lr = 0.1\nlr_logz = 0.1\nlr_phi = 0.1\nwindow_W = 50\ntol_rho = 0.02\nconsecutive_M = 3\n"
        "window_fwd = 0\nwindow_bwd = 0\ncuration = true\nmacro_len = 3\ntrigger_zeta = -0.5\npair_margin = 0.3\n"
        "max_phases = 1\nmax_steps = 2500\nseed = " +
        std::to_string(seed) + "\n");
}

}  // namespace

TEST_CASE("classification examples") {
    SkillLibrary lib;
    const auto a = lib.add("AB", 0, "initial");
    const auto b = lib.add("BA", 0, "initial");
    const auto c = lib.add("AA", 0, "initial");
    const auto d = lib.add("BB", 0, "initial");
    lib.find_mut(a)->negative_share_count = 2;
    CurationThresholds thr;
    std::map<std::string, SkillStats> st{
        {a, stats_of(a, 9.0, 0.0)}, {b, stats_of(b, 1.0, 0.0)}, {c, stats_of(c, 1.0, 0.9)}};
    const auto cls = classify_skills(lib, st, thr);
    CHECK(cls.prune == std::vector<std::string>{a});
    CHECK(cls.retain == std::vector<std::string>{b});
    // c has a large gap, d was never visited
    CHECK(cls.refine == std::vector<std::string>{c, d});

    st[b].G = -0.1;
    CHECK(classify_skills(lib, st, thr).refine.front() == b);
}

TEST_CASE("classes are disjoint and cover the library") {
    Philox rng(4, 0, 0);
    CurationThresholds thr;
    for (int run = 0; run < 100; ++run) {
        SkillLibrary lib;
        std::map<std::string, SkillStats> st;
        const int n = 1 + static_cast<int>(rng.next_u32() % 8);
        for (int i = 0; i < n; ++i) {
            std::string body;
            for (int k = 0; k <= i % 3; ++k) body += "AB"[rng.next_u32() % 2];
            body += std::to_string(i);  // distinct expansions, atomicity is not under test here
            const auto id = lib.add(body, 0, "initial");
            lib.find_mut(id)->negative_share_count = static_cast<int>(rng.next_u32() % 3);
            if (rng.uniform() < 0.7) st[id] = stats_of(id, 2 * rng.uniform() - 1, rng.uniform());
        }
        const auto cls = classify_skills(lib, st, thr);
        std::multiset<std::string> all;
        for (const auto* v : {&cls.prune, &cls.retain, &cls.refine}) all.insert(v->begin(), v->end());
        CHECK(all.size() == lib.size());
        std::set<std::string> uniq(all.begin(), all.end());
        CHECK(uniq.size() == lib.size());
        for (const auto& s : lib.skills()) CHECK(uniq.count(s.id));
    }
}

TEST_CASE("negative counters") {
    SkillLibrary lib;
    const auto id = lib.add("AB", 0, "initial");
    auto bump = [&](double share) {
        lib = update_negative_counters(lib, {{id, stats_of(id, 0.0, 0.0, share)}});
        return lib.find(id)->negative_share_count;
    };
    CHECK(bump(-0.1) == 1);
    CHECK(bump(0.0) == 1);
    // alternating signs over four boundaries count only the negative ones
    CHECK(bump(-1.0) == 2);
    CHECK(bump(0.5) == 2);
    CHECK(bump(-0.2) == 3);
    CHECK(bump(0.3) == 3);
}

TEST_CASE("pairs require a reward gap") {
    CurationThresholds thr;
    thr.pair_margin = 0.5;
    const std::vector<LoggedTrajectory> batch{primitive_traj("q0", "A", {0}, 0.2),
                                              primitive_traj("q0", "B", {0}, 1.0),
                                              primitive_traj("q1", "A", {0}, 0.5),
                                              primitive_traj("q1", "B", {0}, 0.6)};
    const auto pairs = build_pairs(batch, thr);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].success == 1);
    CHECK(pairs[0].failure == 0);
}

TEST_CASE("trigger steps") {
    CurationThresholds thr;
    thr.trigger_zeta = 5.0;
    const auto pos = primitive_traj("q0", "ABC", {1.0, 5.0, 7.0}, 1.0);
    const auto neg = primitive_traj("q0", "C", {0.0}, 0.0);
    const auto credits = step_credits(pos);

    auto low = primitive_traj("q0", "AB", {1.0, 4.9}, 1.0);
    CHECK(find_trigger_steps(low, neg, step_credits(low), {}, thr).empty());
    CHECK(find_trigger_steps(pos, neg, credits, {}, thr) == std::vector<int>{1, 2});

    // a retained skill invoked at step 2 covers it
    auto with_skill = pos;
    with_skill.steps[2] = {ActionKind::Skill, "s1", "C", 7.0, 0.0};
    const auto cov = covered_steps(with_skill, {"s1"});
    CHECK(cov == std::set<int>{2});
    CHECK(find_trigger_steps(with_skill, neg, step_credits(with_skill), cov, thr) == std::vector<int>{1});

    const auto other = primitive_traj("q1", "C", {0.0}, 0.0);
    CHECK_THROWS_AS(find_trigger_steps(pos, other, credits, {}, thr), std::invalid_argument);
}

TEST_CASE("skill creation slices the success trajectory") {
    CurationThresholds thr;
    thr.macro_len = 2;
    const auto pos = primitive_traj("q0", "ABCD", {0, 0, 0, 0}, 1.0);
    const auto neg = primitive_traj("q0", "D", {0}, 0.0);
    SkillLibrary lib;
    const auto id = create_skill(pos, neg, 2, lib, thr, 1);
    REQUIRE(id);
    CHECK(lib.find(*id)->expansion == "CD");
    CHECK(lib.find(*id)->phase_created == 1);

    // duplicate: same id, no growth
    CHECK(create_skill(pos, neg, 2, lib, thr, 1) == id);
    CHECK(lib.size() == 1);

    // macro_len beyond the end keeps the non-empty suffix
    thr.macro_len = 3;
    const auto tail = create_skill(pos, neg, 3, lib, thr, 1);
    REQUIRE(tail);
    CHECK(lib.find(*tail)->expansion == "D");

    // a skill step emits several symbols; slicing starts after them
    auto mixed = pos;
    mixed.steps = {{ActionKind::Skill, "s9", "AB", 0, 0}, {ActionKind::Act, "C", "C", 0, 0},
                   {ActionKind::Act, "D", "D", 0, 0}};
    thr.macro_len = 2;
    CHECK(lib.find(*create_skill(mixed, neg, 1, lib, thr, 1))->expansion == "CD");
    CHECK_THROWS_AS(create_skill(pos, neg, 9, lib, thr, 1), std::out_of_range);
}

TEST_CASE("refinement drops one trailing symbol") {
    CurationThresholds thr;
    Skill s{"s1", "ABC", 0, 0, "initial"};
    const auto r = refine_skill(s, thr);
    CHECK(r.expansion == "AB");
    CHECK(r.id == "s1");
    CHECK(r.provenance != s.provenance);
    CHECK(check_atomicity(r, thr.l_max));
    Skill one{"s2", "A", 0, 0, "initial"};
    CHECK(refine_skill(one, thr).expansion == "A");
}

TEST_CASE("atomicity") {
    CHECK(check_atomicity(Skill{"s1", "AB", 0, 0, ""}, 4));
    CHECK_FALSE(check_atomicity(Skill{"s1", "ABABA", 0, 0, ""}, 4));
    CHECK_FALSE(check_atomicity(Skill{"s1", "", 0, 0, ""}, 4));
    CHECK_FALSE(check_atomicity(Skill{"s1", "A@s2", 0, 0, ""}, 4));
    CHECK_FALSE(check_atomicity(Skill{"s1", "AZ", 0, 0, ""}, 4, "AB"));
}

TEST_CASE("curate: bootstrap and the unchanged library") {
    CurationThresholds thr;
    thr.trigger_zeta = 1.0;
    const std::vector<LoggedTrajectory> batch{primitive_traj("q0", "ABB", {0.0, 2.0, 0.0}, 1.0),
                                              primitive_traj("q0", "BBB", {0.0, 0.0, 0.0}, 0.0)};
    const auto pairs = build_pairs(batch, thr);
    REQUIRE(pairs.size() == 1);

    const auto boot = curate(SkillLibrary{}, {}, batch, pairs, thr, "AB");
    CHECK(boot.library.phase == 1);
    REQUIRE(boot.library.size() == 1);
    CHECK(boot.library.skills()[0].expansion == "BB");
    CHECK(boot.created.size() == 1);

    SkillLibrary lib;
    const auto id = lib.add("AB", 0, "initial");
    const auto keep = curate(lib, {{id, stats_of(id, 1.0, 0.0)}}, batch, {}, thr, "AB");
    CHECK(keep.library.phase == lib.phase + 1);
    CHECK(keep.library.skills() == lib.skills());
    CHECK(keep.created.empty());
    CHECK(keep.pruned.empty());
}

TEST_CASE("curate prunes, refines and adds") {
    CurationThresholds thr;
    thr.trigger_zeta = 1.0;
    thr.prune_K = 1;
    SkillLibrary lib;
    const auto bad = lib.add("BA", 0, "initial");
    const auto wide = lib.add("ABB", 0, "initial");
    const std::vector<LoggedTrajectory> batch{primitive_traj("q0", "AAB", {0.0, 3.0, 0.0}, 1.0),
                                              primitive_traj("q0", "BBB", {0.0, 0.0, 0.0}, 0.0)};
    const std::map<std::string, SkillStats> st{{bad, stats_of(bad, 1.0, 0.0, -0.3)},
                                               {wide, stats_of(wide, 1.0, 2.0)}};
    const auto r = curate(lib, st, batch, build_pairs(batch, thr), thr, "AB");
    CHECK(r.pruned == std::vector<std::string>{bad});
    CHECK_FALSE(r.library.find(bad));
    CHECK(r.library.find(wide)->expansion == "AB");
    CHECK(r.refined == std::vector<std::string>{wide});
    CHECK(r.triggers.size() == 1);
    // the trigger slices "AB", which the refined skill already provides
    CHECK(r.created.empty());
    CHECK(r.library.size() == 1);
}

TEST_CASE("atomicity survives random evolution") {
    const std::string alphabet = "ABC";
    for (std::uint64_t run = 0; run < 10; ++run) {
        Philox rng(run, 0, 0);
        CurationThresholds thr;
        thr.trigger_zeta = 0.0;
        thr.macro_len = 1 + static_cast<int>(rng.next_u32() % 4);
        thr.prune_K = 1 + static_cast<int>(rng.next_u32() % 2);
        SkillLibrary lib;
        for (int phase = 0; phase < 8; ++phase) {
            std::vector<LoggedTrajectory> batch;
            for (int k = 0; k < 6; ++k) {
                std::string sym;
                std::vector<double> li;
                const int len = 1 + static_cast<int>(rng.next_u32() % 6);
                for (int i = 0; i < len; ++i) {
                    sym += alphabet[rng.next_u32() % 3];
                    li.push_back(4 * rng.uniform() - 2);
                }
                auto t = primitive_traj("q0", sym, li, rng.uniform());
                // swap in a library skill now and then
                if (!lib.empty() && rng.uniform() < 0.5) {
                    const auto& s = lib.skills()[rng.next_u32() % lib.size()];
                    t.steps.push_back({ActionKind::Skill, s.id, s.expansion, 4 * rng.uniform() - 2, 0.0});
                    t.emitted += s.expansion;
                }
                batch.push_back(std::move(t));
            }
            const auto res = curate(lib, library_stats(batch, lib), batch, build_pairs(batch, thr), thr, alphabet);
            CHECK(res.library.phase == phase + 1);
            for (const auto& s : res.library.skills()) CHECK(check_atomicity(s, thr.l_max, alphabet));
            std::set<std::string> bodies;
            for (const auto& s : res.library.skills()) bodies.insert(s.expansion);
            CHECK(bodies.size() == res.library.size());
            lib = res.library;
        }
    }
}

TEST_CASE("phase transition keeps tables and resets log Z") {
    TrainerState st;
    st.params.logz_init = -2.30;
    st.params.register_task("q0");
    st.params.log_partition["q0"] = 1.7;
    st.params.forward_logits["F|ctx"]["A"] = 0.25;
    st.params.backward_logits["B|ctx"]["B"] = -0.5;
    st.plateau_history = {1.0, 2.0};
    const auto fwd = st.params.forward_logits;
    const auto bwd = st.params.backward_logits;
    SkillLibrary next;
    next.phase = 1;
    next.add("AB", 1, "created:q0:0");
    phase_transition(st, next, false);
    CHECK(st.params.forward_logits == fwd);
    CHECK(st.params.backward_logits == bwd);
    CHECK(st.params.log_partition["q0"] == -2.30);
    CHECK(st.plateau_history.empty());
    CHECK(st.library == next);
    // no context mentions the new macro until it is visited
    for (const auto& [ctx, row] : st.params.forward_logits) CHECK_FALSE(row.count("@s1"));

    st.params.log_partition["q0"] = 0.9;
    phase_transition(st, next, true);
    CHECK(st.params.log_partition["q0"] == 0.9);
}

TEST_CASE("engineered floor: curation adds the bridging macro and the plateau drops") {
    Runner r(floor_config(0), 1);
    std::uint64_t hash = r.state().library.hash();
    int phase = r.state().library.phase;
    bool frozen = true;
    r.on_step = [&](const Runner& run) {
        const auto& lib = run.state().library;
        if (lib.phase == phase && lib.hash() != hash) frozen = false;
        hash = lib.hash();
        phase = lib.phase;
    };
    r.run();
    CHECK(frozen);
    REQUIRE(r.curations().size() == 1);
    const auto& ev = r.curations()[0];
    CHECK(ev.step < r.config().max_steps);
    bool bridge = false;
    for (const auto& id : ev.result.created) bridge |= ev.result.library.find(id)->expansion.size() == 3;
    CHECK(bridge);

    double pre = -1, post = -1;
    for (const auto& p : r.plateaus()) {
        if (p.phase == 0 && pre < 0) pre = p.level;
        if (p.phase == 1 && post < 0) post = p.level;
    }
    REQUIRE(pre > 0);
    REQUIRE(post > 0);
    CHECK(post < pre - 0.05);

    // history restarts at the boundary: no plateau inside the next (M+1)W steps
    const auto& cfg = r.config().ttb;
    for (const auto& p : r.plateaus())
        if (p.step > ev.step) CHECK(p.step - ev.step >= (cfg.consecutive_M + 1) * cfg.window_W);
}

TEST_CASE("aggressive triggers: library size rises and later falls") {
    auto cfg = floor_config(2);
    cfg.max_phases = 6;
    cfg.curation.prune_K = 1;
    cfg.max_steps = 4000;
    Runner r(cfg, 1);
    r.run();
    std::vector<std::size_t> sizes{0};
    for (const auto& c : r.curations()) sizes.push_back(c.result.library.size());
    std::size_t rise = sizes.size();
    for (std::size_t i = 1; i < sizes.size(); ++i)
        if (sizes[i] > sizes[i - 1]) {
            rise = i;
            break;
        }
    bool fall = false;
    for (std::size_t i = rise + 1; i < sizes.size(); ++i) fall |= sizes[i] < sizes[i - 1];
    CHECK(rise < sizes.size());
    CHECK(fall);
}
