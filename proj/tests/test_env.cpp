#include "qcpo/env.hpp"
#include "qcpo/oracle.hpp"

#include "test_helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace qcpo;
using namespace qcpo_test;
using Catch::Approx;

TEST_CASE("two_path reset returns the start node") {
    EnvConfig cfg;
    TwoPathEnv env(cfg);
    Obs s = env.reset(123);
    REQUIRE(s == Obs{1.0, 0.0, 0.0, 0.0});
    REQUIRE(env.num_actions() == 2);
}

TEST_CASE("hazard_grid reset puts the agent at the origin, goal at the far corner") {
    EnvConfig cfg;
    cfg.env_id = EnvId::hazard_grid;
    cfg.grid_size = 5;
    cfg.max_steps = 100;
    HazardGridEnv env(cfg);
    Obs s = env.reset(7);
    REQUIRE(s[0] == 0.0);  // agent x
    REQUIRE(s[1] == 0.0);  // agent y
    REQUIRE(s[2] == 1.0);  // goal x = (n-1)/(n-1)
    REQUIRE(s[3] == 1.0);  // goal y
}

TEST_CASE("same seed gives bitwise-identical cost draws") {
    EnvConfig cfg;
    TwoPathEnv a(cfg), b(cfg);
    a.reset(42);
    b.reset(42);
    a.step(0);  // choose path 1
    b.step(0);
    Transition ta = a.step(0);
    Transition tb = b.step(0);
    REQUIRE(ta.cost == tb.cost);
}

TEST_CASE("config, seed and action stream determine every transition") {
    EnvConfig cfg;
    cfg.env_id = EnvId::hazard_grid;
    cfg.max_steps = 100;
    auto e1 = make_env(cfg);
    auto e2 = make_env(cfg);
    e1->reset(99);
    e2->reset(99);
    Rng actions(5);
    for (int i = 0; i < 100; ++i) {
        int a = static_cast<int>(actions.uniform01() * 4);
        Transition t1 = e1->step(a);
        Transition t2 = e2->step(a);
        REQUIRE(t1.next_state == t2.next_state);
        REQUIRE(t1.reward == t2.reward);
        REQUIRE(t1.cost == t2.cost);
        REQUIRE(t1.done == t2.done);
        REQUIRE(t1.truncated == t2.truncated);
    }
}

TEST_CASE("dynamics are a pure function of state and action") {
    EnvConfig cfg;
    cfg.env_id = EnvId::hazard_grid;
    cfg.max_steps = 1000;
    HazardGridEnv env(cfg);
    env.reset(3);
    Rng actions(11);
    for (int i = 0; i < 50; ++i) {
        int a = static_cast<int>(actions.uniform01() * 4);
        auto cloned = env.clone();
        Transition t1 = env.step(a);
        Transition t2 = cloned->step(a);
        REQUIRE(t1.next_state == t2.next_state);
    }
}

TEST_CASE("two_path: path 2 is deterministic with total cost 9") {
    EnvConfig cfg;
    TwoPathEnv env(cfg);
    env.reset(1);
    Transition tr = env.step(1);
    REQUIRE(tr.cost == 0.0);
    double total = 0.0;
    int steps = 0;
    while (!env.episode_over()) {
        tr = env.step(0);
        REQUIRE(tr.cost == Approx(0.9));
        total += tr.cost;
        ++steps;
    }
    REQUIRE(steps == 10);
    REQUIRE(total == Approx(9.0));
    REQUIRE(tr.done);
    REQUIRE_FALSE(tr.truncated);
}

TEST_CASE("two_path: path 1 outage matches the analytic binomial tail") {
    EnvConfig cfg;
    auto env = make_env(cfg);
    Rng rng(2024);
    const int n = 100000;
    double outage = mc_outage(fixed_path_policy(0), *env, 10.0, n, 1.0, rng);
    double p_analytic = 1.0 - binomial_cdf(10, 1, 0.08);  // >= 2 spikes
    REQUIRE(p_analytic == Approx(0.18788).margin(1e-4));
    double sigma = std::sqrt(p_analytic * (1 - p_analytic) / n);
    REQUIRE(std::abs(outage - p_analytic) < 3 * sigma);
}

TEST_CASE("two_path: expected costs separate as 8 vs 9") {
    EnvConfig cfg;
    auto env = make_env(cfg);
    Rng rng(77);
    const int n = 100000;
    auto costs1 = mc_episode_costs(fixed_path_policy(0), *env, n, 1.0, rng);
    double mean1 = 0.0;
    for (double c : costs1) mean1 += c;
    mean1 /= n;
    // path-1 per-episode std is ~4.3, so 3 sigma of the mean is ~0.041
    REQUIRE(mean1 == Approx(8.0).margin(0.05));
    double outage2 = mc_outage(fixed_path_policy(1), *env, 10.0, 1000, 1.0, rng);
    REQUIRE(outage2 == 0.0);
}

TEST_CASE("stepping a finished episode reports a usage error") {
    EnvConfig cfg;
    TwoPathEnv env(cfg);
    env.reset(5);
    env.step(1);
    while (!env.episode_over()) env.step(0);
    REQUIRE_THROWS_AS(env.step(0), std::logic_error);
}

TEST_CASE("costs are nonnegative on every transition") {
    for (EnvId id : {EnvId::two_path, EnvId::hazard_grid}) {
        EnvConfig cfg;
        cfg.env_id = id;
        cfg.max_steps = 100;
        auto env = make_env(cfg);
        env->reset(17);
        Rng rng(17);
        for (int i = 0; i < 500; ++i) {
            if (env->episode_over()) env->reset(rng.next_u64());
            Transition tr = env->step(static_cast<int>(rng.uniform01() * env->num_actions()));
            REQUIRE(tr.cost >= 0.0);
        }
    }
}

TEST_CASE("hazard_grid: approaching move earns the distance delta") {
    EnvConfig cfg;
    cfg.env_id = EnvId::hazard_grid;
    cfg.max_steps = 100;
    HazardGridEnv env(cfg);
    env.reset(9);
    // walk along the bottom row through the wall opening, then up column x=4
    for (int i = 0; i < 4; ++i) env.step(0);
    for (int i = 0; i < 6; ++i) env.step(2);
    // now at (4,6), goal (6,6): distance 2 -> 1, hazard-free
    Transition tr = env.step(0);
    REQUIRE(tr.reward == Approx(1.0));
    REQUIRE(tr.cost == 0.0);
}

TEST_CASE("hazard_grid: entering a wall cell charges a stochastic cost") {
    EnvConfig cfg;
    cfg.env_id = EnvId::hazard_grid;
    cfg.max_steps = 100;
    HazardGridEnv env(cfg);
    env.reset(31);
    for (int i = 0; i < 3; ++i) env.step(0);  // to (3,0), the opening
    Transition tr = env.step(2);              // into (3,1), a wall cell
    REQUIRE((tr.cost == Approx(0.5) || tr.cost == Approx(1.0)));
}

TEST_CASE("hazard_grid: episode truncates at the step cap") {
    EnvConfig cfg;
    cfg.env_id = EnvId::hazard_grid;
    cfg.max_steps = 25;
    HazardGridEnv env(cfg);
    env.reset(1);
    Transition tr;
    for (int i = 0; i < 25; ++i) tr = env.step(1);
    REQUIRE(tr.truncated);
    REQUIRE_FALSE(tr.done);
    REQUIRE(env.episode_over());
}

TEST_CASE("collect_batch: 22 greedy path-2 steps give two complete episodes") {
    EnvConfig cfg;
    auto env = make_env(cfg);
    Rng rng(8);
    TrajectoryBatch batch = collect_batch(fixed_path_policy(1), *env, 22, rng, 1.0);
    REQUIRE(batch.steps.size() == 22);
    REQUIRE(batch.completed.size() == 2);
    for (const auto& ep : batch.completed) {
        REQUIRE(ep.cost_sum == Approx(9.0));
        REQUIRE(ep.length == 11);
    }
}

TEST_CASE("collect_batch rejects n_steps < 1") {
    EnvConfig cfg;
    auto env = make_env(cfg);
    Rng rng(8);
    REQUIRE_THROWS_AS(collect_batch(fixed_path_policy(1), *env, 0, rng), std::invalid_argument);
}

TEST_CASE("collect_batch: uniform policy splits paths evenly") {
    EnvConfig cfg;
    auto env = make_env(cfg);
    Rng rng(314);
    const int episodes = 10000;
    TrajectoryBatch batch = collect_batch(uniform_policy(2), *env, episodes * 11, rng, 1.0);
    REQUIRE(static_cast<int>(batch.completed.size()) == episodes);
    // each episode has exactly one start-node transition, whose action is the path choice
    int path1 = 0;
    for (const Transition& tr : batch.steps)
        if (tr.state[0] > 0.5 && tr.action == 0) ++path1;
    double frac = static_cast<double>(path1) / episodes;
    REQUIRE(std::abs(frac - 0.5) < 3 * std::sqrt(0.25 / episodes));
}

TEST_CASE("episode_cost_sum discounts its own transitions") {
    Trajectory traj;
    auto with_cost = [](double c) {
        Transition t;
        t.cost = c;
        return t;
    };
    traj.transitions = {with_cost(1), with_cost(1), with_cost(1)};
    REQUIRE(episode_cost_sum(traj, 1.0) == Approx(3.0));
    traj.transitions = {with_cost(0), with_cost(0)};
    REQUIRE(episode_cost_sum(traj, 0.9) == 0.0);
    traj.transitions = {with_cost(2), with_cost(2)};
    REQUIRE(episode_cost_sum(traj, 0.5) == Approx(3.0));
    traj.transitions.clear();
    REQUIRE_THROWS_AS(episode_cost_sum(traj, 1.0), std::invalid_argument);
}
