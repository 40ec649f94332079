#pragma once

#include <cstdint>
#include <string>

#include "blindac/agents.hpp"
#include "blindac/channel.hpp"
#include "blindac/merge_env.hpp"

namespace blindac {

// Random-search space for the automatically tuned hyper-parameters: the
// reward scale alpha, the fictive period tau, and the training budget.
struct TuneSpec {
    int trials = 10;
    double alpha_min = 0.02;
    double alpha_max = 0.5;
    double tau_min = 0.05;
    double tau_max = 0.3;
    int episodes_min = 500;
    int episodes_max = 2000;
    int window = 100;  // selection metric: mean normalized reward, final window

    void validate() const;
    bool operator==(const TuneSpec&) const = default;
};

// Everything that determines a run. Serializes to an INI-style key-value
// file; parse(serialize(c)) == c.
struct RunConfig {
    AgentKind agent = AgentKind::blind;
    std::uint64_t seed = 1;
    int episodes = 2000;
    std::string out_dir = "out";
    int eval_episodes_per_cell = 200;
    bool write_channel_trace = false;

    EnvConfig env;
    ChannelConfig channel;
    AgentHyper hyper;
    TuneSpec tune;

    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

}  // namespace blindac
