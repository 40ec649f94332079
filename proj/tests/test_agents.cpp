#include <cmath>

#include "blindac/agents.hpp"
#include "blindac/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace blindac;

namespace {

StateVector some_state(double d_cav = 150.0, double v_cav = 20.0) {
    StateVector s;
    s.d_cav = d_cav;
    s.v_cav = v_cav;
    s.d_p1 = 60.0;
    s.d_f1 = 45.0;
    s.v_f1 = 2.0;
    s.d_p2 = 140.0;
    s.d_f2 = 120.0;
    s.v_f2 = -1.0;
    return s;
}

AgentHyper small_hyper() {
    AgentHyper hp;
    hp.hidden = 16;
    hp.replay_capacity = 256;
    hp.batch_size = 8;
    return hp;
}

Delivery make_delivery(const StateVector& s, double r, double gen, double arrival,
                       double delta_t, bool terminal = false) {
    Delivery d;
    d.sample.state = s;
    d.sample.reward_raw = r;
    d.sample.gen_time = gen;
    d.sample.arrival_time = arrival;
    d.sample.terminal = terminal;
    d.delta_t = delta_t;
    return d;
}

Agent make_agent(AgentKind kind, const AgentHyper& hp, std::uint64_t seed = 1) {
    return Agent(kind, hp, 100.0, 400.0, 34.0, seed);
}

}  // namespace

TEST_SUITE("agents") {

TEST_CASE("approximate_rewards") {
    SUBCASE("constant rewards interpolate to the constant") {
        const auto r = approximate_rewards(0.7, 0.7, 0.35, 0.1);
        REQUIRE(r.size() == 3);
        for (double v : r) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
    }
    SUBCASE("linear ramp") {
        const auto r = approximate_rewards(0.0, 1.0, 0.4, 0.1);
        REQUIRE(r.size() == 4);
        CHECK(r[0] == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(r[1] == doctest::Approx(0.50).epsilon(1e-12));
        CHECK(r[2] == doctest::Approx(0.75).epsilon(1e-12));
        CHECK(r[3] == doctest::Approx(1.00).epsilon(1e-12));
    }
    SUBCASE("delta_t equal to tau yields exactly the next reward") {
        const auto r = approximate_rewards(0.0, 1.0, 0.1, 0.1);
        REQUIRE(r.size() == 1);
        CHECK(r[0] == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("gate violation throws") {
        CHECK_THROWS_AS(approximate_rewards(0.0, 1.0, 0.05, 0.1), UsageError);
    }
    SUBCASE("values stay within the reward bracket") {
        Rng rng(3);
        for (int i = 0; i < 1000; ++i) {
            const double r_prev = rng.uniform(-2.0, 2.0);
            const double r_next = rng.uniform(-2.0, 2.0);
            const double tau = rng.uniform(0.01, 0.5);
            const double delta_t = tau * rng.uniform(1.0, 20.0);
            const double lo = std::min(r_prev, r_next);
            const double hi = std::max(r_prev, r_next);
            for (double v : approximate_rewards(r_prev, r_next, delta_t, tau)) {
                CHECK(v >= lo - 1e-12);
                CHECK(v <= hi + 1e-12);
            }
        }
    }
    SUBCASE("matches the independently evaluated interpolant") {
        Rng rng(4);
        for (int i = 0; i < 1000; ++i) {
            const double r_prev = rng.uniform(-5.0, 5.0);
            const double r_next = rng.uniform(-5.0, 5.0);
            const double tau = rng.uniform(0.01, 0.4);
            const double delta_t = tau * rng.uniform(1.0, 12.0);
            const auto got = approximate_rewards(r_prev, r_next, delta_t, tau);
            const auto want = oracle::interpolated_rewards(r_prev, r_next, delta_t, tau);
            REQUIRE(got.size() == want.size());
            for (std::size_t k = 0; k < got.size(); ++k)
                CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-12));
        }
    }
}

TEST_CASE("blind_target") {
    SUBCASE("reduces to the classic TD target when delta_t = tau") {
        const std::vector<double> r = {0.8};
        const TargetBreakdown b = blind_target(r, 0.1, 0.1, 0.98, 10.0, false);
        CHECK(b.k_count == 1);
        CHECK(std::abs(b.value() - classic_td_target(0.8, 0.98, 10.0, false)) <
              1e-12);
    }
    SUBCASE("worked example with two interpolated rewards") {
        const std::vector<double> r = {1.0, 2.0};
        const TargetBreakdown b = blind_target(r, 0.2, 0.1, 0.5, 4.0, false);
        CHECK(b.mc_sum == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(b.td_tail == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(b.value() == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("fractional discount exponent") {
        const std::vector<double> r = {1.0};
        const TargetBreakdown b = blind_target(r, 0.15, 0.1, 0.25, 8.0, false);
        CHECK(b.value() == doctest::Approx(2.0).epsilon(1e-12));
    }
    SUBCASE("terminal zeroes the bootstrap tail") {
        const std::vector<double> r = {1.0, -1.0};
        const TargetBreakdown b = blind_target(r, 0.2, 0.1, 0.9, 100.0, true);
        CHECK(b.td_tail == 0.0);
        CHECK(b.value() == doctest::Approx(1.0 - 0.9).epsilon(1e-12));
    }
    SUBCASE("length mismatch throws") {
        const std::vector<double> r = {1.0};
        CHECK_THROWS_AS(blind_target(r, 0.2, 0.1, 0.9, 0.0, false), UsageError);
    }
    SUBCASE("geometric telescoping for constant interpolated rewards") {
        Rng rng(5);
        // dyadic taus keep m * tau / tau == m exact in floating point
        const double taus[] = {0.0625, 0.125, 0.25, 0.5};
        for (int i = 0; i < 1000; ++i) {
            const double gamma = rng.uniform(0.1, 0.999);
            const int m = 1 + int(rng.uniform_int(12));
            const double tau = taus[rng.uniform_int(4)];
            const double rv = rng.uniform(-2.0, 2.0);
            const double v_next = rng.uniform(-10.0, 10.0);
            const std::vector<double> r(std::size_t(m), rv);
            const double got = blind_target(r, m * tau, tau, gamma, v_next, false)
                                   .value();
            const double closed = rv * (1.0 - std::pow(gamma, m)) / (1.0 - gamma) +
                                  std::pow(gamma, double(m)) * v_next;
            CHECK(std::abs(got - closed) < 1e-12 * std::max(1.0, std::abs(closed)));
        }
    }
    SUBCASE("matches the long-double oracle on random inputs") {
        Rng rng(6);
        for (int i = 0; i < 1000; ++i) {
            const double gamma = rng.uniform(0.05, 0.999);
            const double tau = rng.uniform(0.01, 0.4);
            const double delta_t = tau * rng.uniform(1.0, 15.0);
            const bool terminal = rng.bernoulli(0.3);
            const double v_next = rng.uniform(-20.0, 20.0);
            std::vector<double> r(std::size_t(int(delta_t / tau)));
            for (double& v : r) v = rng.uniform(-3.0, 3.0);
            const double got =
                blind_target(r, delta_t, tau, gamma, v_next, terminal).value();
            const double want =
                oracle::blind_target(r, delta_t, tau, gamma, v_next, terminal);
            CHECK(std::abs(got - want) <= 1e-10 * std::max(1.0, std::abs(want)));
        }
    }
}

TEST_CASE("blind_terminal_target") {
    SUBCASE("holds the running reward and discounts the event at arrival") {
        // gap of 3 fictive periods ending in a merge (dyadic tau keeps the
        // ratio exact)
        const TargetBreakdown b = blind_terminal_target(-0.04, 1.0, 0.75, 0.25, 0.5);
        CHECK(b.k_count == 3);
        CHECK(b.mc_sum ==
              doctest::Approx(-0.04 * (1.0 + 0.5 + 0.25)).epsilon(1e-12));
        CHECK(b.td_tail == doctest::Approx(0.125).epsilon(1e-12));  // 0.5^3 * 1
        CHECK(b.value() == doctest::Approx(-0.07 + 0.125).epsilon(1e-12));
    }
    SUBCASE("fractional discount exponent on the event") {
        const TargetBreakdown b = blind_terminal_target(0.0, -1.0, 0.15, 0.1, 0.25);
        CHECK(b.k_count == 1);
        CHECK(b.mc_sum == 0.0);
        CHECK(b.td_tail == doctest::Approx(-0.125).epsilon(1e-12));  // 0.25^1.5
    }
    SUBCASE("gate still applies") {
        CHECK_THROWS_AS(blind_terminal_target(0.0, 1.0, 0.05, 0.1, 0.9), UsageError);
    }
    SUBCASE("bounded by the running reward sum plus the event") {
        Rng rng(8);
        for (int i = 0; i < 500; ++i) {
            const double gamma = rng.uniform(0.1, 0.999);
            const double tau = rng.uniform(0.02, 0.3);
            const double delta_t = tau * rng.uniform(1.0, 10.0);
            const double r_prev = rng.uniform(-0.5, 0.0);
            const double r_term = rng.bernoulli(0.5) ? 1.0 : -1.0;
            const double v = blind_terminal_target(r_prev, r_term, delta_t, tau,
                                                   gamma)
                                 .value();
            CHECK(std::abs(v) <=
                  std::abs(r_prev) / (1.0 - gamma) + std::abs(r_term) + 1e-12);
        }
    }
}

TEST_CASE("classic_td_target") {
    CHECK(classic_td_target(1.0, 0.98, 10.0, false) ==
          doctest::Approx(10.8).epsilon(1e-12));
    CHECK(classic_td_target(0.3, 0.98, 10.0, true) == 0.3);
    CHECK(classic_td_target(0.3, 0.0, 10.0, false) == 0.3);
}

TEST_CASE("advantage") {
    CHECK(advantage(3.0, 3.0) == 0.0);
    CHECK(advantage(3.0, 1.0) == 2.0);
    CHECK(advantage(1.0, 3.0) == -2.0);
}

TEST_CASE("motion_model_estimate") {
    StateVector s = some_state();
    SUBCASE("zero elapsed is the identity") {
        CHECK(motion_model_estimate(s, 0.0) == s);
    }
    SUBCASE("ego closes on the merge point at its own speed") {
        const StateVector e = motion_model_estimate(s, 0.1);
        CHECK(e.d_cav == doctest::Approx(s.d_cav - 2.0).epsilon(1e-12));
        CHECK(e.v_cav == s.v_cav);
    }
    SUBCASE("static world stays put") {
        StateVector still = s;
        still.v_cav = 0.0;
        still.v_f1 = 0.0;
        still.v_f2 = 0.0;
        CHECK(motion_model_estimate(still, 5.0) == still);
    }
    SUBCASE("follower gaps close at the observed relative speed") {
        const StateVector e = motion_model_estimate(s, 1.0);
        CHECK(e.d_f1 == doctest::Approx(s.d_f1 - s.v_f1).epsilon(1e-12));
        CHECK(e.d_f2 == doctest::Approx(s.d_f2 - s.v_f2).epsilon(1e-12));
        CHECK(e.d_p1 == s.d_p1);  // leading speeds unobserved, gap held
    }
    SUBCASE("negative elapsed is rejected") {
        CHECK_THROWS_AS(motion_model_estimate(s, -0.1), UsageError);
    }
}

TEST_CASE("act") {
    AgentHyper hp = small_hyper();
    Agent agent = make_agent(AgentKind::blind, hp);
    const StateVector s = some_state();
    SUBCASE("deterministic without exploration") {
        const double a1 = agent.act(s, false);
        const double a2 = agent.act(s, false);
        CHECK(a1 == a2);
    }
    SUBCASE("always inside the acceleration range") {
        Rng rng(10);
        for (int i = 0; i < 300; ++i) {
            StateVector x;
            x.d_cav = rng.uniform(0.0, 400.0);
            x.v_cav = rng.uniform(0.0, 40.0);
            x.d_p1 = rng.uniform(0.0, 400.0);
            x.d_f1 = rng.uniform(0.0, 400.0);
            x.v_f1 = rng.uniform(-20.0, 20.0);
            x.d_p2 = rng.uniform(0.0, 400.0);
            x.d_f2 = rng.uniform(0.0, 400.0);
            x.v_f2 = rng.uniform(-20.0, 20.0);
            const double a = agent.act(x, i % 2 == 0);
            CHECK(a >= -5.0);
            CHECK(a <= 3.0);
        }
    }
    SUBCASE("exploration varies the command") {
        double lo = 1e9, hi = -1e9;
        for (int i = 0; i < 50; ++i) {
            const double a = agent.act(s, true);
            lo = std::min(lo, a);
            hi = std::max(hi, a);
        }
        CHECK(hi > lo);
    }
    SUBCASE("non-finite states are rejected") {
        StateVector bad = s;
        bad.d_p1 = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(agent.act(bad, false), UsageError);
    }
}

TEST_CASE("blind training gate") {
    AgentHyper hp = small_hyper();
    hp.tau = 0.5;
    hp.use_replay = false;
    hp.batch_size = 1;
    hp.replay_capacity = 16;

    SUBCASE("a stream of sub-tau gaps changes no parameters") {
        Agent agent = make_agent(AgentKind::blind, hp);
        agent.set_explore(false);
        const std::string before = checkpoint_bytes(agent.to_checkpoint());
        agent.episode_begin(0.0);
        double t = 0.05;
        agent.observe(make_delivery(some_state(), 0.0, 0.0, 0.05, 0.05), t);
        for (int i = 1; i <= 20; ++i) {
            t += 0.2;  // every gap 0.2 < tau 0.5
            agent.observe(make_delivery(some_state(150.0 - i, 20.0), -0.01 * i,
                                        0.2 * i, t, 0.2),
                          t);
        }
        CHECK(agent.train_steps() == 0);
        CHECK(checkpoint_bytes(agent.to_checkpoint()) == before);
    }
    SUBCASE("a gap of exactly tau trains") {
        Agent agent = make_agent(AgentKind::blind, hp);
        agent.set_explore(false);
        agent.episode_begin(0.0);
        agent.observe(make_delivery(some_state(), 0.0, 0.0, 0.05, 0.05), 0.05);
        agent.observe(make_delivery(some_state(140.0, 20.0), -0.02, 0.5, 0.55, 0.5),
                      0.55);
        CHECK(agent.train_steps() == 1);
    }
    SUBCASE("identical seeds and streams give identical parameters") {
        Agent a = make_agent(AgentKind::blind, hp, 42);
        Agent b = make_agent(AgentKind::blind, hp, 42);
        for (Agent* ag : {&a, &b}) {
            ag->set_explore(true);
            ag->episode_begin(0.0);
            double t = 0.0;
            for (int i = 0; i <= 10; ++i) {
                t += 0.6;
                ag->observe(make_delivery(some_state(150.0 - 5 * i, 20.0),
                                          -0.01 * i, 0.6 * i, t, 0.6),
                            t);
            }
        }
        CHECK(checkpoint_bytes(a.to_checkpoint()) ==
              checkpoint_bytes(b.to_checkpoint()));
        CHECK(a.train_steps() == b.train_steps());
        CHECK(a.train_steps() > 0);
    }
}

TEST_CASE("the advantage sign steers the policy mean relative to the taken action") {
    AgentHyper hp = small_hyper();
    hp.use_replay = false;
    hp.batch_size = 1;
    hp.actor_lr = 1e-3;
    hp.tau = 0.1;

    for (const bool positive : {true, false}) {
        CAPTURE(positive);
        Agent agent = make_agent(AgentKind::classic_aperiodic, hp, 7);
        agent.set_explore(true);
        agent.episode_begin(0.0);
        const StateVector s1 = some_state();
        agent.observe(make_delivery(s1, 0.0, 0.0, 0.05, 0.05), 0.05);
        const double taken = agent.command(0.05);

        const double mean_before = Agent(agent.to_checkpoint(), 1).act(s1, false);
        REQUIRE(std::abs(taken - mean_before) > 1e-6);  // exploration noise acted
        const double r = positive ? 50.0 : -50.0;  // dominates the bootstrap
        agent.observe(make_delivery(some_state(140.0, 20.0), r, 0.2, 0.25, 0.2),
                      0.25);
        const double mean_after = Agent(agent.to_checkpoint(), 1).act(s1, false);

        // One gradient step moves the mean toward the action when the
        // advantage is positive and away from it when negative.
        const double toward = taken - mean_before;
        const double moved = mean_after - mean_before;
        CHECK(moved != 0.0);
        if (positive)
            CHECK(moved * toward > 0.0);
        else
            CHECK(moved * toward < 0.0);
    }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    AgentHyper hp = small_hyper();
    Agent agent = make_agent(AgentKind::motion_model, hp, 3);
    const Checkpoint c = agent.to_checkpoint();
    const std::string bytes = checkpoint_bytes(c);
    const auto path = std::string("/tmp/blindac_ckpt_test.bin");
    save_checkpoint(path, c);
    const Checkpoint loaded = load_checkpoint(path);
    CHECK(checkpoint_bytes(loaded) == bytes);
    CHECK(loaded.kind == AgentKind::motion_model);
    CHECK(loaded.hyper == hp);
    std::remove(path.c_str());
}

TEST_CASE("motion model agent synthesizes pseudo-samples at the fixed period") {
    AgentHyper hp = small_hyper();
    hp.use_replay = false;
    hp.batch_size = 1;
    hp.sample_period = 0.1;
    Agent agent = make_agent(AgentKind::motion_model, hp, 5);
    agent.set_explore(false);
    agent.episode_begin(0.0);

    // Before any anchor arrives the command stays at zero.
    CHECK(agent.command(0.0) == 0.0);
    CHECK(agent.command(0.05) == 0.0);

    agent.observe(make_delivery(some_state(), -0.05, 0.0, 0.06, 0.06), 0.06);
    const double c1 = agent.command(0.1);
    CHECK(c1 != 0.0);
    // Two synthesis periods later a transition has been trained.
    agent.command(0.2);
    CHECK(agent.train_steps() >= 1);
}

TEST_CASE("blind agent holds the last command between deliveries") {
    AgentHyper hp = small_hyper();
    hp.tau = 0.1;
    Agent agent = make_agent(AgentKind::blind, hp, 9);
    agent.set_explore(false);
    agent.episode_begin(0.0);
    agent.observe(make_delivery(some_state(), 0.0, 0.0, 0.05, 0.05), 0.05);
    const double held = agent.command(0.05);
    CHECK(agent.command(0.30) == held);
    CHECK(agent.command(0.80) == held);
}

}  // TEST_SUITE
