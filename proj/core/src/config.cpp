#include "blindac/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "blindac/io.hpp"

namespace blindac {

void TuneSpec::validate() const {
    if (trials < 1) throw ConfigError("tune.trials must be >= 1");
    if (alpha_min <= 0.0 || alpha_max < alpha_min)
        throw ConfigError("tune alpha range is empty");
    if (tau_min <= 0.0 || tau_max < tau_min) throw ConfigError("tune tau range is empty");
    if (episodes_min < 1 || episodes_max < episodes_min)
        throw ConfigError("tune episodes range is empty");
    if (window < 1) throw ConfigError("tune.window must be >= 1");
}

void RunConfig::validate() const {
    if (episodes < 1) throw ConfigError("run.episodes must be >= 1");
    if (eval_episodes_per_cell < 1)
        throw ConfigError("run.eval_episodes_per_cell must be >= 1");
    env.validate();
    channel.validate();
    hyper.validate();
    tune.validate();
    const double ratio = hyper.sample_period / env.dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9)
        throw ConfigError("sample_period must be an integer multiple of env.dt");
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct Parser {
    std::map<std::string, std::string> kv;  // "section.key" -> value

    void load(const std::string& text) {
        std::istringstream is(text);
        std::string line, section;
        int line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const std::size_t hash = line.find_first_of("#;");
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError("line " + std::to_string(line_no) +
                                      ": malformed section header");
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("line " + std::to_string(line_no) +
                                  ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string val = trim(line.substr(eq + 1));
            if (key.empty())
                throw ConfigError("line " + std::to_string(line_no) + ": empty key");
            kv[section + "." + key] = val;
        }
    }

    bool take(const std::string& name, std::string& out) {
        auto it = kv.find(name);
        if (it == kv.end()) return false;
        out = it->second;
        kv.erase(it);
        return true;
    }

    void get(const std::string& name, double& out) {
        std::string v;
        if (!take(name, v)) return;
        const char* b = v.data();
        const char* e = v.data() + v.size();
        auto [p, ec] = std::from_chars(b, e, out);
        if (ec != std::errc() || p != e)
            throw ConfigError(name + ": not a number: '" + v + "'");
    }

    void get(const std::string& name, int& out) {
        std::string v;
        if (!take(name, v)) return;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size())
            throw ConfigError(name + ": not an integer: '" + v + "'");
    }

    void get(const std::string& name, std::int64_t& out) {
        std::string v;
        if (!take(name, v)) return;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size())
            throw ConfigError(name + ": not an integer: '" + v + "'");
    }

    void get(const std::string& name, std::uint64_t& out) {
        std::string v;
        if (!take(name, v)) return;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size())
            throw ConfigError(name + ": not an unsigned integer: '" + v + "'");
    }

    void get(const std::string& name, bool& out) {
        std::string v;
        if (!take(name, v)) return;
        if (v == "true" || v == "1")
            out = true;
        else if (v == "false" || v == "0")
            out = false;
        else
            throw ConfigError(name + ": expected true/false: '" + v + "'");
    }

    void get(const std::string& name, std::string& out) { take(name, out); }
};

}  // namespace

RunConfig parse_config(const std::string& text) {
    Parser p;
    p.load(text);
    RunConfig c;

    std::string agent;
    if (p.take("run.agent", agent)) c.agent = agent_kind_from_string(agent);
    p.get("run.seed", c.seed);
    p.get("run.episodes", c.episodes);
    p.get("run.out_dir", c.out_dir);
    p.get("run.eval_episodes_per_cell", c.eval_episodes_per_cell);
    p.get("run.write_channel_trace", c.write_channel_trace);

    p.get("env.dt", c.env.dt);
    p.get("env.ramp_length", c.env.geometry.ramp_length);
    p.get("env.merge_zone_length", c.env.geometry.merge_zone_length);
    p.get("env.main_lane_visible_length", c.env.geometry.main_lane_visible_length);
    p.get("env.merge_point", c.env.geometry.merge_point);
    p.get("env.speed_limit", c.env.speed_limit);
    p.get("env.spawn_speed_min", c.env.spawn_speed_min);
    p.get("env.spawn_speed_max", c.env.spawn_speed_max);
    p.get("env.headway_mean", c.env.headway_mean);
    p.get("env.headway_sigma", c.env.headway_sigma);
    p.get("env.accel_min", c.env.accel_min);
    p.get("env.accel_max", c.env.accel_max);
    p.get("env.emergency_decel", c.env.emergency_decel);
    p.get("env.c_min", c.env.c_min);
    p.get("env.vehicle_length", c.env.vehicle_length);
    p.get("env.ego_initial_speed", c.env.ego_initial_speed);
    p.get("env.idm_time_headway", c.env.idm_time_headway);
    p.get("env.idm_min_gap", c.env.idm_min_gap);
    p.get("env.idm_accel", c.env.idm_accel);
    p.get("env.idm_brake", c.env.idm_brake);
    p.get("env.ttc_emergency", c.env.ttc_emergency);
    p.get("env.stop_duration", c.env.stop_duration);
    p.get("env.max_episode_time", c.env.max_episode_time);
    p.get("env.prepopulate", c.env.prepopulate);

    p.get("channel.mu_delay_ms", c.channel.mu_delay_ms);
    p.get("channel.sigma_delay_ms", c.channel.sigma_delay_ms);
    p.get("channel.p_mlr", c.channel.p_mlr);
    p.get("channel.generation_rules", c.channel.generation_rules_enabled);

    p.get("agent.gamma", c.hyper.gamma);
    p.get("agent.actor_lr", c.hyper.actor_lr);
    p.get("agent.critic_lr", c.hyper.critic_lr);
    p.get("agent.target_coeff", c.hyper.target_coeff);
    p.get("agent.replay_capacity", c.hyper.replay_capacity);
    p.get("agent.batch_size", c.hyper.batch_size);
    p.get("agent.ou_sigma", c.hyper.ou_sigma);
    p.get("agent.ou_theta", c.hyper.ou_theta);
    p.get("agent.tau", c.hyper.tau);
    p.get("agent.alpha_reward", c.hyper.alpha_reward);
    p.get("agent.approx_order", c.hyper.approx_order);
    p.get("agent.policy_sigma", c.hyper.policy_sigma);
    p.get("agent.deterministic_pg", c.hyper.deterministic_pg);
    p.get("agent.use_replay", c.hyper.use_replay);
    p.get("agent.hidden", c.hyper.hidden);
    p.get("agent.sample_period", c.hyper.sample_period);

    p.get("tune.trials", c.tune.trials);
    p.get("tune.alpha_min", c.tune.alpha_min);
    p.get("tune.alpha_max", c.tune.alpha_max);
    p.get("tune.tau_min", c.tune.tau_min);
    p.get("tune.tau_max", c.tune.tau_max);
    p.get("tune.episodes_min", c.tune.episodes_min);
    p.get("tune.episodes_max", c.tune.episodes_max);
    p.get("tune.window", c.tune.window);

    if (!p.kv.empty())
        throw ConfigError("unknown config key: " + p.kv.begin()->first);

    // The agent's action range and reward scale mirror the environment's.
    c.hyper.accel_min = c.env.accel_min;
    c.hyper.accel_max = c.env.accel_max;

    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& c) {
    std::ostringstream os;
    os << "[run]\n";
    os << "agent = " << to_string(c.agent) << '\n';
    os << "seed = " << c.seed << '\n';
    os << "episodes = " << c.episodes << '\n';
    os << "out_dir = " << c.out_dir << '\n';
    os << "eval_episodes_per_cell = " << c.eval_episodes_per_cell << '\n';
    os << "write_channel_trace = " << (c.write_channel_trace ? "true" : "false")
       << '\n';
    os << "\n[env]\n";
    os << "dt = " << fmt_double(c.env.dt) << '\n';
    os << "ramp_length = " << fmt_double(c.env.geometry.ramp_length) << '\n';
    os << "merge_zone_length = " << fmt_double(c.env.geometry.merge_zone_length)
       << '\n';
    os << "main_lane_visible_length = "
       << fmt_double(c.env.geometry.main_lane_visible_length) << '\n';
    os << "merge_point = " << fmt_double(c.env.geometry.merge_point) << '\n';
    os << "speed_limit = " << fmt_double(c.env.speed_limit) << '\n';
    os << "spawn_speed_min = " << fmt_double(c.env.spawn_speed_min) << '\n';
    os << "spawn_speed_max = " << fmt_double(c.env.spawn_speed_max) << '\n';
    os << "headway_mean = " << fmt_double(c.env.headway_mean) << '\n';
    os << "headway_sigma = " << fmt_double(c.env.headway_sigma) << '\n';
    os << "accel_min = " << fmt_double(c.env.accel_min) << '\n';
    os << "accel_max = " << fmt_double(c.env.accel_max) << '\n';
    os << "emergency_decel = " << fmt_double(c.env.emergency_decel) << '\n';
    os << "c_min = " << fmt_double(c.env.c_min) << '\n';
    os << "vehicle_length = " << fmt_double(c.env.vehicle_length) << '\n';
    os << "ego_initial_speed = " << fmt_double(c.env.ego_initial_speed) << '\n';
    os << "idm_time_headway = " << fmt_double(c.env.idm_time_headway) << '\n';
    os << "idm_min_gap = " << fmt_double(c.env.idm_min_gap) << '\n';
    os << "idm_accel = " << fmt_double(c.env.idm_accel) << '\n';
    os << "idm_brake = " << fmt_double(c.env.idm_brake) << '\n';
    os << "ttc_emergency = " << fmt_double(c.env.ttc_emergency) << '\n';
    os << "stop_duration = " << fmt_double(c.env.stop_duration) << '\n';
    os << "max_episode_time = " << fmt_double(c.env.max_episode_time) << '\n';
    os << "prepopulate = " << c.env.prepopulate << '\n';
    os << "\n[channel]\n";
    os << "mu_delay_ms = " << fmt_double(c.channel.mu_delay_ms) << '\n';
    os << "sigma_delay_ms = " << fmt_double(c.channel.sigma_delay_ms) << '\n';
    os << "p_mlr = " << fmt_double(c.channel.p_mlr) << '\n';
    os << "generation_rules = "
       << (c.channel.generation_rules_enabled ? "true" : "false") << '\n';
    os << "\n[agent]\n";
    os << "gamma = " << fmt_double(c.hyper.gamma) << '\n';
    os << "actor_lr = " << fmt_double(c.hyper.actor_lr) << '\n';
    os << "critic_lr = " << fmt_double(c.hyper.critic_lr) << '\n';
    os << "target_coeff = " << fmt_double(c.hyper.target_coeff) << '\n';
    os << "replay_capacity = " << c.hyper.replay_capacity << '\n';
    os << "batch_size = " << c.hyper.batch_size << '\n';
    os << "ou_sigma = " << fmt_double(c.hyper.ou_sigma) << '\n';
    os << "ou_theta = " << fmt_double(c.hyper.ou_theta) << '\n';
    os << "tau = " << fmt_double(c.hyper.tau) << '\n';
    os << "alpha_reward = " << fmt_double(c.hyper.alpha_reward) << '\n';
    os << "approx_order = " << c.hyper.approx_order << '\n';
    os << "policy_sigma = " << fmt_double(c.hyper.policy_sigma) << '\n';
    os << "deterministic_pg = " << (c.hyper.deterministic_pg ? "true" : "false")
       << '\n';
    os << "use_replay = " << (c.hyper.use_replay ? "true" : "false") << '\n';
    os << "hidden = " << c.hyper.hidden << '\n';
    os << "sample_period = " << fmt_double(c.hyper.sample_period) << '\n';
    os << "\n[tune]\n";
    os << "trials = " << c.tune.trials << '\n';
    os << "alpha_min = " << fmt_double(c.tune.alpha_min) << '\n';
    os << "alpha_max = " << fmt_double(c.tune.alpha_max) << '\n';
    os << "tau_min = " << fmt_double(c.tune.tau_min) << '\n';
    os << "tau_max = " << fmt_double(c.tune.tau_max) << '\n';
    os << "episodes_min = " << c.tune.episodes_min << '\n';
    os << "episodes_max = " << c.tune.episodes_max << '\n';
    os << "window = " << c.tune.window << '\n';
    return os.str();
}

}  // namespace blindac
