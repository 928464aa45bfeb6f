#include <doctest.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "helpers.hpp"
#include "skillflow/flow_oracle.hpp"
#include "skillflow/policy.hpp"
#include "skillflow/trainer.hpp"

using namespace skillflow;
using skillflow::testing::make_env;
using skillflow::testing::walk;

namespace {

PolicyParams fresh(const Environment& env, int k = 12) {
    PolicyParams p;
    p.window_fwd = k;
    p.window_bwd = k;
    for (const auto& t : env.tasks()) p.register_task(t.id);
    return p;
}

}  // namespace

TEST_CASE("Philox4x32-10 known-answer vector") {
    const auto out = Philox::round10({0, 0, 0, 0}, {0, 0});
    CHECK(out[0] == 0x6627e8d5u);
    CHECK(out[1] == 0xe169c58du);
    CHECK(out[2] == 0xbc57ac4cu);
    CHECK(out[3] == 0x9b00dbd8u);
    const auto ones = Philox::round10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    CHECK(ones[0] == 0x408f276du);
    CHECK(ones[1] == 0x41c83b0eu);
    CHECK(ones[2] == 0xa20bc7c6u);
    CHECK(ones[3] == 0x6d5451fdu);
}

TEST_CASE("Philox substreams are reproducible and distinct") {
    Philox a(1, 2, 3), b(1, 2, 3), c(1, 2, 4);
    for (int i = 0; i < 16; ++i) {
        const auto x = a.next_u32();
        CHECK(x == b.next_u32());
        (void)c;
    }
    Philox d(1, 2, 3), e(1, 2, 4);
    int same = 0;
    for (int i = 0; i < 16; ++i) same += d.next_u32() == e.next_u32();
    CHECK(same < 2);
    Philox u(9, 0, 0);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("uniform init: single-token action log-prob") {
    auto env = make_env("AB", "AB:1.0", 2, false);
    SkillLibrary lib;
    auto p = fresh(env);
    const History h = env.reset("q0");
    CHECK(forward_logprob(p, env, lib, h, env.act('A')) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
}

TEST_CASE("macro log-prob is the per-token mean including forced continuations") {
    auto env = make_env("AB", "AB:1.0", 2, false);
    SkillLibrary lib;
    lib.add("AB", 0, "initial");
    auto p = fresh(env);
    const History h = env.reset("q0");
    const Action m = env.invoke(lib, "s1");
    const auto ev = evaluate_forward(p, env, lib, h, m);
    CHECK(ev.num_tokens == 2);
    REQUIRE(ev.tokens.size() == 1);  // "@s1#1" is forced
    CHECK(ev.logprob == doctest::Approx(std::log(1.0 / 3) / 2).epsilon(1e-15));

    // geometric-mean identity with a non-uniform first token
    p.forward_logits[ev.tokens[0].ctx]["@s1"] = 0.7;
    const auto ev2 = evaluate_forward(p, env, lib, h, m);
    double prod = 1.0;
    for (const auto& t : ev2.tokens) prod *= t.probs[t.chosen];
    CHECK(std::fabs(std::exp(ev2.logprob) - std::pow(prod, 1.0 / ev2.num_tokens)) < 1e-12);
}

TEST_CASE("per-token mean arithmetic") {
    // K = 2 tokens with log-probs (-0.1, -0.3) average to -0.2
    const double lp[] = {-0.1, -0.3};
    CHECK((lp[0] + lp[1]) / 2 == doctest::Approx(-0.2));
}

TEST_CASE("backward policy: uniform init, observation dependence, forced moves") {
    auto env = make_env("ABC", "AA:1.0", 2, false);
    SkillLibrary lib;
    auto p = fresh(env, 0);
    const History h0 = env.reset("q0");
    const Action a = env.act('A');
    CHECK(backward_logprob(p, env, lib, h0, a, env.observe(h0, a)) == doctest::Approx(std::log(1.0 / 3)));

    // Same depth and action, different progress: distinct contexts.
    const History ha = walk(env, lib, "A");
    const History hb = walk(env, lib, "B");
    const auto oa = env.observe(ha, a), ob = env.observe(hb, a);
    CHECK(oa.progress != ob.progress);
    const auto ea = evaluate_backward(p, env, lib, ha, a, oa);
    p.backward_logits[ea.tokens[0].ctx]["A"] += 1.0;
    CHECK(backward_logprob(p, env, lib, ha, a, oa) != backward_logprob(p, env, lib, hb, a, ob));

    CHECK_THROWS_AS(backward_logprob(p, env, lib, h0, a, ExecObservation{5, true}), std::invalid_argument);

    auto chain = make_env("A", "A:1.0", 2, false);
    auto pc = fresh(chain);
    const History c0 = chain.reset("q0");
    const Action ca = chain.act('A');
    CHECK(backward_logprob(pc, chain, lib, c0, ca, chain.observe(c0, ca)) == 0.0);
    CHECK(forward_logprob(pc, chain, lib, c0, ca) == 0.0);
}

TEST_CASE("tree backward mode is identically zero") {
    auto env = make_env("ABC", "AA:1.0", 2, false);
    SkillLibrary lib;
    auto p = fresh(env);
    p.backward_mode = BackwardMode::Tree;
    const History h = walk(env, lib, "B");
    CHECK(backward_logprob(p, env, lib, h, env.act('C'), env.observe(h, env.act('C'))) == 0.0);
}

TEST_CASE("illegal actions are rejected") {
    auto env = make_env("AB", "AB:1.0", 2, false);
    SkillLibrary lib;
    auto p = fresh(env);
    CHECK_THROWS_AS(forward_logprob(p, env, lib, env.reset("q0"), env.accept()), std::invalid_argument);
}

TEST_CASE("sampling: uniform, saturated, reproducible") {
    auto env = make_env("ABC", "AB:1.0", 2);  // 3 symbols + accept
    SkillLibrary lib;
    auto p = fresh(env);
    const History h = env.reset("q0");
    const auto legal = env.legal_actions(h, lib);
    REQUIRE(legal.size() == 4);
    std::vector<int> counts(4, 0);
    Philox rng(11, 0, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const Action a = sample_action(p, env, lib, h, rng);
        counts[std::find(legal.begin(), legal.end(), a) - legal.begin()]++;
    }
    const double sd = std::sqrt(n * 0.25 * 0.75);
    for (int c : counts) CHECK(std::fabs(c - n * 0.25) < 3 * sd);

    p.forward_logits[forward_context(p, h, {})]["B"] = 20.0;
    int hits = 0;
    for (int i = 0; i < 10000; ++i) hits += sample_action(p, env, lib, h, rng).label() == "B";
    CHECK(hits > 9990);

    Philox r1(5, 1, 2), r2(5, 1, 2);
    for (int i = 0; i < 50; ++i) CHECK(sample_action(p, env, lib, h, r1) == sample_action(p, env, lib, h, r2));
}

TEST_CASE("log partition: init, sign of update, independence") {
    auto env = make_env("AB", "AB:1.0;BA:1.0", 2, false);
    SkillLibrary lib;
    auto p = fresh(env);
    CHECK(log_partition(p, "q0") == doctest::Approx(-2.30));
    CHECK_THROWS_AS(log_partition(p, "q9"), std::out_of_range);

    // A trajectory with Δ > 0: raise log Z well above the balanced value.
    p.log_partition["q0"] = 3.0;
    Philox rng(1, 0, 0);
    const Trajectory tau = rollout(p, env, lib, "q0", rng, 0.0, 0.1);
    TtbConfig cfg;
    cfg.lr_logz = 0.1;
    cfg.kl_coeff = 0.0;
    REQUIRE(ttb_residual(tau, p, env, lib, cfg).delta > 0);
    OptimizerState opt;
    const double before_q1 = log_partition(p, "q1");
    train_step({tau}, p, opt, env, lib, cfg);
    CHECK(log_partition(p, "q0") < 3.0);
    CHECK(log_partition(p, "q1") == before_q1);
}

TEST_CASE("softmax normalizes at every reachable context") {
    auto env = make_env("ABC", "ABC:1.0", 3);
    SkillLibrary lib;
    lib.add("BC", 0, "initial");
    lib.add("CAB", 0, "initial");
    auto p = fresh(env, 1);
    Philox rng(3, 0, 0);
    // random logits on every context we meet
    const auto dag = enumerate(env, "q0", lib);
    for (const auto& n : dag.nodes) {
        if (n.terminal) continue;
        for (const auto& a : env.legal_actions(n.history, lib)) {
            for (const auto& t : evaluate_forward(p, env, lib, n.history, a).tokens)
                for (const auto& tok : t.legal) p.forward_logits[t.ctx][tok] = 4 * rng.uniform() - 2;
        }
    }
    for (const auto& n : dag.nodes) {
        if (n.terminal) continue;
        const auto dist = action_distribution(p, env, lib, n.history);
        CHECK(std::accumulate(dist.begin(), dist.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
        // full-action sampler probabilities also sum to one (macros are one action each)
        double s = 0;
        for (const auto& a : env.legal_actions(n.history, lib)) {
            const auto ev = evaluate_forward(p, env, lib, n.history, a);
            double lp = 0;
            for (const auto& t : ev.tokens) lp += std::log(t.probs[t.chosen]);
            s += std::exp(lp);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("reasoning placeholder never enters a context") {
    auto env = make_env("AB", "AB:1.0", 2);
    SkillLibrary lib;
    auto p = fresh(env);
    const History h = walk(env, lib, "A");
    CHECK(forward_context(p, h, {}).find(kReasoningToken) == std::string::npos);
    CHECK(backward_context(p, h, {}, {}).find(kReasoningToken) == std::string::npos);
}

TEST_CASE("contexts: window truncation and injectivity above it") {
    auto env = make_env("AB", "ABAB:1.0", 4);
    SkillLibrary lib;
    auto p = fresh(env, 1);
    CHECK(forward_context(p, walk(env, lib, "AB"), {}) == forward_context(p, walk(env, lib, "BB"), {}));
    p.window_fwd = 2;
    CHECK(forward_context(p, walk(env, lib, "AB"), {}) != forward_context(p, walk(env, lib, "BB"), {}));
}

TEST_CASE("expressiveness knob via oracle projection") {
    auto env = make_env("AB", "AA:1.0,BB:1.0", 2, false);
    const auto dag = enumerate(env, "q0", SkillLibrary{});
    const auto flow = exact_state_flow(dag, 1.0, 0.1);
    const auto target = target_distribution(dag, 1.0, 0.1);
    CHECK(total_variation(projected_oracle_distribution(2, dag, flow), target) < 1e-12);
    CHECK(total_variation(projected_oracle_distribution(0, dag, flow), target) > 0.05);
}

TEST_CASE("tempered and sampler distributions agree for single-token actions") {
    auto env = make_env("AB", "AB:1.0", 2, false);
    SkillLibrary lib;
    auto p = fresh(env);
    const auto dag = enumerate(env, "q0", lib);
    p.forward_logits[forward_context(p, env.reset("q0"), {})]["A"] = 1.3;
    const auto a = tempered_trajectory_distribution(p, env, lib, dag);
    const auto b = sampler_trajectory_distribution(p, env, lib, dag);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    CHECK(total_variation(a, b) < 1e-12);
}
