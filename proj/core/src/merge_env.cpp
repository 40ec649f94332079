#include "blindac/merge_env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "blindac/io.hpp"

namespace blindac {

namespace {

constexpr double kEps = 1e-12;

// Constant-acceleration advance with an analytic speed floor at zero.
// Returns the time actually spent moving within dt.
double advance(Vehicle& v, double accel, double dt) {
    v.acceleration = accel;
    if (v.speed <= 0.0 && accel <= 0.0) {
        v.speed = 0.0;
        return 0.0;
    }
    if (accel < 0.0 && v.speed + accel * dt < 0.0) {
        const double t_stop = v.speed / -accel;
        v.position += v.speed * t_stop + 0.5 * accel * t_stop * t_stop;
        v.speed = 0.0;
        return t_stop;
    }
    v.position += v.speed * dt + 0.5 * accel * dt * dt;
    v.speed += accel * dt;
    return dt;
}

}  // namespace

const char* to_string(EventKind e) {
    switch (e) {
        case EventKind::none: return "none";
        case EventKind::merged: return "merged";
        case EventKind::collision: return "collision";
        case EventKind::stop: return "stop";
        case EventKind::emergency_braking: return "emergency_braking";
    }
    return "?";
}

const char* to_string(EpisodeStatus s) {
    switch (s) {
        case EpisodeStatus::running: return "running";
        case EpisodeStatus::merged: return "merged";
        case EpisodeStatus::collided: return "collided";
        case EpisodeStatus::stopped: return "stopped";
    }
    return "?";
}

bool StateVector::finite() const {
    for (double x : to_array())
        if (!std::isfinite(x)) return false;
    return true;
}

bool EnvState::operator==(const EnvState& o) const {
    if (sim_time != o.sim_time || tick != o.tick || episode_status != o.episode_status)
        return false;
    auto veq = [](const Vehicle& a, const Vehicle& b) {
        return a.id == b.id && a.lane == b.lane && a.position == b.position &&
               a.speed == b.speed && a.acceleration == b.acceleration &&
               a.cooperation == b.cooperation && a.length == b.length;
    };
    if (!veq(ego, o.ego) || traffic.size() != o.traffic.size()) return false;
    for (std::size_t i = 0; i < traffic.size(); ++i)
        if (!veq(traffic[i], o.traffic[i])) return false;
    return true;
}

void EnvConfig::validate() const {
    if (dt <= 0.0) throw ConfigError("env.dt must be > 0");
    if (geometry.ramp_length <= 0.0 || geometry.merge_zone_length <= 0.0 ||
        geometry.main_lane_visible_length <= 0.0)
        throw ConfigError("env geometry lengths must be > 0");
    if (geometry.merge_zone_length > geometry.ramp_length)
        throw ConfigError("merge zone cannot exceed the ramp");
    if (spawn_speed_min <= 0.0 || spawn_speed_max < spawn_speed_min)
        throw ConfigError("invalid spawn speed range");
    if (speed_limit <= 0.0) throw ConfigError("speed_limit must be > 0");
    if (headway_mean <= 0.0 || headway_sigma < 0.0)
        throw ConfigError("invalid traffic flow parameters");
    if (accel_min >= accel_max) throw ConfigError("accel_min must be < accel_max");
    if (emergency_decel > accel_min)
        throw ConfigError("emergency_decel must not exceed accel_min");
    if (c_min <= 0.0 || c_min > 1.0) throw ConfigError("c_min must lie in (0, 1]");
    if (vehicle_length <= 0.0) throw ConfigError("vehicle_length must be > 0");
    if (ego_initial_speed < 0.0) throw ConfigError("ego_initial_speed must be >= 0");
    if (idm_time_headway <= 0.0 || idm_min_gap <= 0.0 || idm_accel <= 0.0 ||
        idm_brake <= 0.0)
        throw ConfigError("invalid IDM parameters");
    if (ttc_emergency <= 0.0) throw ConfigError("ttc_emergency must be > 0");
    if (stop_duration <= 0.0) throw ConfigError("stop_duration must be > 0");
    if (max_episode_time <= 0.0) throw ConfigError("max_episode_time must be > 0");
}

double in_zone_shaping(double d_p1, double d_f1, double alpha) {
    return -alpha * std::abs(std::exp(-d_p1 / 100.0) - std::exp(-d_f1 / 100.0));
}

double reward(const EnvState& next, const StepOutcome& outcome, double alpha) {
    switch (outcome.event) {
        case EventKind::merged: return 1.0;
        case EventKind::collision:
        case EventKind::stop: return -1.0;
        default: break;
    }
    const RampGeometry& g = next.geometry;
    if (next.ego.position >= g.merge_zone_start() && next.ego.position < g.merge_point) {
        const StateVector s = observe(next);
        return in_zone_shaping(s.d_p1, s.d_f1, alpha);
    }
    return 0.0;
}

namespace {

// IDM acceleration for net gap `gap` to a leader closing at `dv` = v - v_l.
double idm_accel_to(double v, double gap, double dv, const EnvConfig& cfg) {
    if (gap <= 0.0) return cfg.emergency_decel;
    const double s_star =
        cfg.idm_min_gap +
        std::max(0.0, v * cfg.idm_time_headway +
                          v * dv / (2.0 * std::sqrt(cfg.idm_accel * cfg.idm_brake)));
    const double ratio = v / cfg.speed_limit;
    return cfg.idm_accel * (1.0 - ratio * ratio * ratio * ratio -
                            (s_star / gap) * (s_star / gap));
}

bool ttc_below(double gap, double closing, double threshold) {
    return closing > 0.0 && gap / closing < threshold;
}

}  // namespace

double cooperative_driver_policy(const Vehicle& vehicle, const Vehicle* leader,
                                 const Vehicle* ego, const EnvConfig& cfg) {
    const double free_flow = vehicle.speed / cfg.speed_limit;
    double a = cfg.idm_accel * (1.0 - free_flow * free_flow * free_flow * free_flow);

    double leader_gap = std::numeric_limits<double>::infinity();
    if (leader) {
        leader_gap = leader->position - vehicle.position -
                     0.5 * (leader->length + vehicle.length);
        a = idm_accel_to(vehicle.speed, leader_gap, vehicle.speed - leader->speed, cfg);
    }

    // Yielding: the merging ego acts as a virtual leader, weighted by the
    // driver's cooperation level. Only drivers behind the ego's projected
    // position react, and only while the ego is in the merge region.
    double ego_gap = std::numeric_limits<double>::infinity();
    bool ego_ahead = false;
    if (ego && ego->position > vehicle.position) {
        ego_ahead = true;
        ego_gap = ego->position - vehicle.position -
                  0.5 * (ego->length + vehicle.length);
        const double w = (vehicle.cooperation - cfg.c_min) / (1.0 - cfg.c_min);
        if (w > 0.0) {
            const double a_yield =
                idm_accel_to(vehicle.speed, ego_gap, vehicle.speed - ego->speed, cfg);
            a = (1.0 - w) * a + w * std::min(a, a_yield);
        }
    }

    // Emergency floor on imminent collision, regardless of cooperation.
    if (leader && (leader_gap <= 0.0 ||
                   ttc_below(leader_gap, vehicle.speed - leader->speed, cfg.ttc_emergency)))
        return cfg.emergency_decel;
    if (ego_ahead && (ego_gap <= 0.0 ||
                      ttc_below(ego_gap, vehicle.speed - ego->speed, cfg.ttc_emergency)))
        return cfg.emergency_decel;

    return std::clamp(a, cfg.accel_min, cfg.accel_max);
}

StateVector observe(const EnvState& state) {
    const double cap = state.geometry.main_lane_visible_length;
    StateVector s;
    s.d_cav = std::max(0.0, state.geometry.merge_point - state.ego.position);
    s.v_cav = state.ego.speed;
    s.d_p1 = s.d_p2 = s.d_f1 = s.d_f2 = cap;
    s.v_f1 = s.v_f2 = 0.0;

    const Vehicle* p1 = nullptr;
    const Vehicle* p2 = nullptr;
    const Vehicle* f1 = nullptr;
    const Vehicle* f2 = nullptr;
    for (const Vehicle& v : state.traffic) {
        if (v.position >= state.ego.position) {
            if (!p1 || v.position < p1->position) {
                p2 = p1;
                p1 = &v;
            } else if (!p2 || v.position < p2->position) {
                p2 = &v;
            }
        } else {
            if (!f1 || v.position > f1->position) {
                f2 = f1;
                f1 = &v;
            } else if (!f2 || v.position > f2->position) {
                f2 = &v;
            }
        }
    }
    const double ego_pos = state.ego.position;
    const double ego_v = state.ego.speed;
    if (p1) s.d_p1 = std::min(p1->position - ego_pos, cap);
    if (p2) s.d_p2 = std::min(p2->position - ego_pos, cap);
    if (f1) {
        s.d_f1 = std::min(ego_pos - f1->position, cap);
        s.v_f1 = f1->speed - ego_v;
    }
    if (f2) {
        s.d_f2 = std::min(ego_pos - f2->position, cap);
        s.v_f2 = f2->speed - ego_v;
    }
    return s;
}

MergeEnv::MergeEnv(const EnvConfig& cfg, double alpha) : cfg_(cfg), alpha_(alpha) {
    cfg_.validate();
    if (alpha_ <= 0.0) throw ConfigError("reward scale alpha must be > 0");
}

const EnvState& MergeEnv::reset(std::uint64_t seed) {
    rng_ = Rng(derive_seed(seed, 0x454e56ULL));
    state_ = EnvState{};
    state_.geometry = cfg_.geometry;
    state_.ego = Vehicle{0, LaneId::ramp, cfg_.geometry.ramp_start(),
                         cfg_.ego_initial_speed, 0.0, 1.0, cfg_.vehicle_length};
    next_vehicle_id_ = 1;
    zero_speed_time_ = 0.0;
    emergency_count_ = 0;
    trace_.clear();

    if (cfg_.prepopulate) {
        double pos = cfg_.geometry.window_start() +
                     cfg_.vehicle_length * rng_.uniform();
        while (pos < cfg_.geometry.window_end()) {
            Vehicle v;
            v.id = next_vehicle_id_++;
            v.lane = LaneId::main;
            v.position = pos;
            v.speed = rng_.uniform(cfg_.spawn_speed_min, cfg_.spawn_speed_max);
            v.cooperation = rng_.uniform(cfg_.c_min, 1.0);
            v.length = cfg_.vehicle_length;
            state_.traffic.push_back(v);
            const double headway = std::max(0.5, rng_.normal(cfg_.headway_mean,
                                                             cfg_.headway_sigma));
            pos += std::max(cfg_.idm_min_gap + cfg_.vehicle_length, headway * v.speed);
        }
    }
    next_spawn_time_ = std::max(0.5, rng_.normal(cfg_.headway_mean, cfg_.headway_sigma));
    record_trace(EventKind::none);
    return state_;
}

void MergeEnv::spawn_pending(double now) {
    while (next_spawn_time_ <= now + kEps) {
        const double entry = cfg_.geometry.window_start();
        bool clear = true;
        for (const Vehicle& v : state_.traffic) {
            if (v.position - entry < cfg_.vehicle_length + cfg_.idm_min_gap) {
                clear = false;
                break;
            }
        }
        if (!clear) return;  // retry on a later tick; the schedule stands
        Vehicle v;
        v.id = next_vehicle_id_++;
        v.lane = LaneId::main;
        v.position = entry;
        v.speed = rng_.uniform(cfg_.spawn_speed_min, cfg_.spawn_speed_max);
        v.cooperation = rng_.uniform(cfg_.c_min, 1.0);
        v.length = cfg_.vehicle_length;
        state_.traffic.insert(state_.traffic.begin(), v);
        next_spawn_time_ += std::max(0.5, rng_.normal(cfg_.headway_mean,
                                                      cfg_.headway_sigma));
    }
}

std::pair<const EnvState*, StepOutcome> MergeEnv::step(double ego_accel) {
    return step(ego_accel, cfg_.dt);
}

std::pair<const EnvState*, StepOutcome> MergeEnv::step(double ego_accel, double dt) {
    if (dt <= 0.0) throw UsageError("step: dt must be > 0");
    if (state_.episode_status != EpisodeStatus::running)
        throw UsageError("step called after a terminal event");

    const RampGeometry& g = cfg_.geometry;
    const bool ego_in_merge_region = state_.ego.position >= g.merge_zone_start();

    // Decide accelerations against the pre-step state.
    std::vector<double> accels(state_.traffic.size());
    int onsets = 0;
    for (std::size_t i = 0; i < state_.traffic.size(); ++i) {
        const Vehicle* leader = i + 1 < state_.traffic.size() ? &state_.traffic[i + 1]
                                                              : nullptr;
        const Vehicle* ego = ego_in_merge_region ? &state_.ego : nullptr;
        accels[i] = cooperative_driver_policy(state_.traffic[i], leader, ego, cfg_);
        if (accels[i] < cfg_.accel_min && state_.traffic[i].acceleration >= cfg_.accel_min)
            ++onsets;
    }
    const double applied = std::clamp(ego_accel, cfg_.accel_min, cfg_.accel_max);

    // Advance everyone.
    for (std::size_t i = 0; i < state_.traffic.size(); ++i)
        advance(state_.traffic[i], accels[i], dt);
    const double t_moving = advance(state_.ego, applied, dt);

    state_.tick += 1;
    state_.sim_time = static_cast<double>(state_.tick) * dt;

    // Traffic churn at the window edges; keep the list ordered along the axis.
    std::erase_if(state_.traffic,
                  [&](const Vehicle& v) { return v.position > g.window_end(); });
    spawn_pending(state_.sim_time);
    std::sort(state_.traffic.begin(), state_.traffic.end(),
              [](const Vehicle& a, const Vehicle& b) { return a.position < b.position; });

    emergency_count_ += onsets;

    // Event detection, collision first.
    StepOutcome out;
    const double ego_pos = state_.ego.position;
    if (ego_pos >= g.merge_zone_start()) {
        for (const Vehicle& v : state_.traffic) {
            if (std::abs(v.position - ego_pos) <
                0.5 * (v.length + state_.ego.length)) {
                out.event = EventKind::collision;
                break;
            }
        }
    }
    if (out.event == EventKind::none && ego_pos >= g.merge_point)
        out.event = EventKind::merged;
    if (out.event == EventKind::none) {
        if (state_.ego.speed <= 0.0) {
            zero_speed_time_ += dt - t_moving;
            if (zero_speed_time_ >= cfg_.stop_duration - kEps)
                out.event = EventKind::stop;
        } else {
            zero_speed_time_ = 0.0;
        }
    }
    if (out.event == EventKind::none && state_.sim_time >= cfg_.max_episode_time - kEps)
        out.event = EventKind::stop;  // timed-out episodes count as a failed merge

    switch (out.event) {
        case EventKind::merged: state_.episode_status = EpisodeStatus::merged; break;
        case EventKind::collision: state_.episode_status = EpisodeStatus::collided; break;
        case EventKind::stop: state_.episode_status = EpisodeStatus::stopped; break;
        default: break;
    }
    out.terminal = state_.episode_status != EpisodeStatus::running;
    if (!out.terminal && onsets > 0) out.event = EventKind::emergency_braking;
    out.reward_raw = reward(state_, out, alpha_);

    record_trace(out.event);
    return {&state_, out};
}

void MergeEnv::record_trace(EventKind ev) {
    if (!trace_enabled_) return;
    trace_.push_back({state_.sim_time, state_.ego.id, state_.ego.lane,
                      state_.ego.position, state_.ego.speed, state_.ego.acceleration,
                      ev});
    for (const Vehicle& v : state_.traffic)
        trace_.push_back({state_.sim_time, v.id, v.lane, v.position, v.speed,
                          v.acceleration, EventKind::none});
}

void MergeEnv::write_trace_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "sim_time,vehicle_id,lane,position,speed,accel,event\n";
    for (const TraceRow& r : trace_) {
        f << fmt_double(r.sim_time) << ',' << r.vehicle_id << ','
          << (r.lane == LaneId::main ? "main" : "ramp") << ','
          << fmt_double(r.position) << ',' << fmt_double(r.speed) << ','
          << fmt_double(r.accel) << ','
          << (r.event == EventKind::none ? "" : to_string(r.event)) << '\n';
    }
}

}  // namespace blindac
