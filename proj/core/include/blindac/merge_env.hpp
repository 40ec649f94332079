#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "blindac/rng.hpp"

namespace blindac {

// Thrown for invalid configuration files / parameter ranges (CLI exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when an API is used against its preconditions.
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

enum class LaneId { main, ramp };

struct Vehicle {
    int id = 0;
    LaneId lane = LaneId::main;
    double position = 0.0;      // m along the shared travel axis
    double speed = 0.0;         // m/s, >= 0
    double acceleration = 0.0;  // m/s^2 as applied on the last tick
    double cooperation = 1.0;   // C in [c_min, 1]
    double length = 5.0;        // m
};

// Both lanes share one longitudinal axis. The ramp occupies
// [merge_point - ramp_length, merge_point]; its terminal merge_zone_length
// metres form the merge zone. The visible main-lane window is centred on the
// merge point.
struct RampGeometry {
    double ramp_length = 200.0;
    double merge_zone_length = 100.0;
    double main_lane_visible_length = 400.0;
    double merge_point = 200.0;

    double ramp_start() const { return merge_point - ramp_length; }
    double merge_zone_start() const { return merge_point - merge_zone_length; }
    double window_start() const { return merge_point - 0.5 * main_lane_visible_length; }
    double window_end() const { return merge_point + 0.5 * main_lane_visible_length; }

    bool operator==(const RampGeometry&) const = default;
};

// The 8-feature observation. Gaps are magnitudes; absent neighbours read as
// the visible-range cap with zero relative speed.
struct StateVector {
    double d_cav = 0.0;  // ego distance to merge point
    double v_cav = 0.0;  // ego speed
    double d_p1 = 0.0;   // gap to nearest preceding main-lane vehicle
    double d_f1 = 0.0;   // gap to nearest following main-lane vehicle
    double v_f1 = 0.0;   // follower speed relative to ego
    double d_p2 = 0.0;
    double d_f2 = 0.0;
    double v_f2 = 0.0;

    std::array<double, 8> to_array() const {
        return {d_cav, v_cav, d_p1, d_f1, v_f1, d_p2, d_f2, v_f2};
    }
    bool finite() const;
    bool operator==(const StateVector&) const = default;
};

enum class EpisodeStatus { running, merged, collided, stopped };
enum class EventKind { none, merged, collision, stop, emergency_braking };

const char* to_string(EventKind e);
const char* to_string(EpisodeStatus s);

struct StepOutcome {
    double reward_raw = 0.0;
    bool terminal = false;
    EventKind event = EventKind::none;
};

struct EnvConfig {
    double dt = 0.05;  // ground-truth tick, s
    RampGeometry geometry;

    // Table-driven traffic parameters
    double speed_limit = 33.0;  // m/s, main lane
    double spawn_speed_min = 22.0;
    double spawn_speed_max = 34.0;
    double headway_mean = 3.25;  // s between spawns
    double headway_sigma = 0.1;
    double accel_min = -5.0;
    double accel_max = 3.0;
    double emergency_decel = -9.0;
    double c_min = 0.2;
    double vehicle_length = 5.0;

    double ego_initial_speed = 20.0;

    // Car-following law (IDM) for main-lane drivers
    double idm_time_headway = 1.5;  // s
    double idm_min_gap = 2.0;       // m
    double idm_accel = 1.5;         // m/s^2
    double idm_brake = 2.0;         // m/s^2, comfortable
    double ttc_emergency = 1.0;     // s; below this the emergency floor engages

    double stop_duration = 1.0;      // s at zero speed before a stop terminal
    double max_episode_time = 60.0;  // s; episodes that outlive this end as a stop

    int prepopulate = 1;  // fill the main-lane window at reset

    void validate() const;  // throws ConfigError
    bool operator==(const EnvConfig&) const = default;
};

struct EnvState {
    double sim_time = 0.0;
    std::int64_t tick = 0;
    Vehicle ego;
    std::vector<Vehicle> traffic;  // main lane, ordered along the travel axis
    RampGeometry geometry;
    EpisodeStatus episode_status = EpisodeStatus::running;

    bool operator==(const EnvState&) const;
};

struct TraceRow {
    double sim_time;
    int vehicle_id;
    LaneId lane;
    double position;
    double speed;
    double accel;
    EventKind event;
};

// In-zone shaping term of the reward.
double in_zone_shaping(double d_p1, double d_f1, double alpha);

// Reward of a post-step state: +1 merged, -1 collision/stop, the shaping term
// inside the merge zone while running, 0 elsewhere.
double reward(const EnvState& next, const StepOutcome& outcome, double alpha);

// Car-following acceleration for a main-lane driver. `leader` is the next
// vehicle ahead in the main lane (null if free road); `ego` participates as a
// yielding target only while it is inside the merge zone or beyond.
double cooperative_driver_policy(const Vehicle& vehicle, const Vehicle* leader,
                                 const Vehicle* ego, const EnvConfig& cfg);

StateVector observe(const EnvState& state);

class MergeEnv {
public:
    MergeEnv(const EnvConfig& cfg, double alpha);

    const EnvState& reset(std::uint64_t seed);
    std::pair<const EnvState*, StepOutcome> step(double ego_accel);
    std::pair<const EnvState*, StepOutcome> step(double ego_accel, double dt);

    StateVector observe() const { return blindac::observe(state_); }
    const EnvState& state() const { return state_; }
    const EnvConfig& config() const { return cfg_; }
    double alpha() const { return alpha_; }
    int emergency_braking_count() const { return emergency_count_; }

    void enable_trace(bool on) { trace_enabled_ = on; }
    const std::vector<TraceRow>& trace() const { return trace_; }
    void write_trace_csv(const std::string& path) const;

private:
    void spawn_pending(double now);
    void record_trace(EventKind ev);

    EnvConfig cfg_;
    double alpha_;
    EnvState state_;
    Rng rng_{0};
    int next_vehicle_id_ = 1;
    double next_spawn_time_ = 0.0;
    double zero_speed_time_ = 0.0;
    int emergency_count_ = 0;
    bool trace_enabled_ = false;
    std::vector<TraceRow> trace_;
};

}  // namespace blindac
