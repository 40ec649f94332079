#include "blindac/config.hpp"
#include "doctest.h"

using namespace blindac;

TEST_SUITE("config") {

TEST_CASE("defaults round-trip") {
    const RunConfig def;
    const RunConfig parsed = parse_config(serialize_config(def));
    CHECK(parsed == def);
    CHECK(serialize_config(parsed) == serialize_config(def));
}

TEST_CASE("non-default values round-trip exactly") {
    RunConfig c;
    c.agent = AgentKind::motion_model;
    c.seed = 123456789012345ULL;
    c.episodes = 77;
    c.out_dir = "runs/exp-3";
    c.env.dt = 0.025;
    c.env.headway_mean = 2.875;
    c.channel.mu_delay_ms = 70.0;
    c.channel.p_mlr = 0.9;
    c.hyper.actor_lr = 3e-5;
    c.hyper.tau = 0.175;
    c.hyper.alpha_reward = 0.0625;
    c.hyper.sample_period = 0.05;
    c.tune.trials = 3;
    const std::string text = serialize_config(c);
    const RunConfig parsed = parse_config(text);
    CHECK(parsed == c);
    CHECK(serialize_config(parsed) == text);
}

TEST_CASE("comments and whitespace are tolerated") {
    const RunConfig parsed = parse_config(
        "# leading comment\n"
        "[run]\n"
        "agent = blind   ; trailing comment\n"
        "  seed =  9\n"
        "\n"
        "[agent]\n"
        "tau = 0.2\n");
    CHECK(parsed.agent == AgentKind::blind);
    CHECK(parsed.seed == 9);
    CHECK(parsed.hyper.tau == 0.2);
}

TEST_CASE("parse errors") {
    CHECK_THROWS_AS(parse_config("[run]\nbogus_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[run\nagent = blind\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[run]\nagent blind\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[channel]\np_mlr = maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[run]\nagent = turbo\n"), ConfigError);
}

TEST_CASE("range validation") {
    CHECK_THROWS_AS(parse_config("[channel]\np_mlr = 1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[agent]\ngamma = 1.0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[env]\nramp_length = -5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[agent]\nsample_period = 0.07\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[agent]\ntau = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[run]\nepisodes = 0\n"), ConfigError);
}

TEST_CASE("the four experimental arms are reachable purely by config") {
    for (const char* kind :
         {"classic_clean", "classic_aperiodic", "motion_model", "blind"}) {
        const RunConfig c =
            parse_config(std::string("[run]\nagent = ") + kind + "\n");
        CHECK(to_string(c.agent) == std::string(kind));
    }
}

TEST_CASE("agent action range mirrors the environment") {
    const RunConfig c = parse_config("[env]\naccel_min = -4\naccel_max = 2\n");
    CHECK(c.hyper.accel_min == -4.0);
    CHECK(c.hyper.accel_max == 2.0);
}

}  // TEST_SUITE
