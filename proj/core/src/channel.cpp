#include "blindac/channel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "blindac/io.hpp"
#include "json.hpp"

namespace blindac {

void ChannelConfig::validate() const {
    if (mu_delay_ms <= 0.0) throw ConfigError("channel.mu_delay_ms must be > 0");
    if (sigma_delay_ms < 0.0) throw ConfigError("channel.sigma_delay_ms must be >= 0");
    if (p_mlr < 0.0 || p_mlr > 1.0) throw ConfigError("channel.p_mlr must lie in [0, 1]");
}

bool generation_gate(const std::vector<ObjectSnapshot>* prev_sent,
                     const std::vector<ObjectSnapshot>& current, double elapsed) {
    if (!prev_sent) return true;
    if (elapsed < 0.1) return false;
    if (elapsed >= 1.0) return true;

    for (const ObjectSnapshot& cur : current) {
        const ObjectSnapshot* old = nullptr;
        for (const ObjectSnapshot& p : *prev_sent) {
            if (p.id == cur.id) {
                old = &p;
                break;
            }
        }
        if (!old) return true;  // newly detected object
        if (std::abs(cur.position - old->position) > 4.0) return true;
        if (std::abs(cur.speed - old->speed) > 0.5) return true;
        if (std::abs(cur.heading - old->heading) > 4.0) return true;
    }
    return false;
}

double sample_delay(Rng& rng, const ChannelConfig& cfg) {
    const double mu = cfg.mu_delay_ms * 1e-3;
    const double sigma = cfg.sigma_delay_ms * 1e-3;
    if (sigma == 0.0) return mu;
    double d;
    do {
        d = rng.normal(mu, sigma);
    } while (d <= 0.0);
    return d;
}

TimedSample transmit(const StateVector& state, double reward_raw, double gen_time,
                     Rng& rng, const ChannelConfig& cfg) {
    if (gen_time < 0.0) throw UsageError("transmit: gen_time must be >= 0");
    TimedSample s;
    s.state = state;
    s.reward_raw = reward_raw;
    s.gen_time = gen_time;
    // Both draws happen for every message so loss stays independent of delay.
    const double delay = sample_delay(rng, cfg);
    s.lost = rng.bernoulli(cfg.p_mlr);
    s.arrival_time = gen_time + delay;
    return s;
}

V2xChannel::V2xChannel(const ChannelConfig& cfg)
    : cfg_(cfg), rng_(derive_seed(cfg.seed, 0x434841ULL)) {
    cfg_.validate();
}

void V2xChannel::reset_episode() {
    in_flight_ = {};
    last_sent_.reset();
    last_sent_time_ = 0.0;
    last_delivered_gen_ = -1.0;
    last_delivered_arrival_ = 0.0;
    last_poll_clock_ = 0.0;
}

bool V2xChannel::submit(const StateVector& state, double reward_raw, double gen_time,
                        bool terminal, const std::vector<ObjectSnapshot>* snapshot,
                        bool bypass_gate) {
    ++stats_.offered;
    if (cfg_.generation_rules_enabled && snapshot && !bypass_gate) {
        const std::vector<ObjectSnapshot>* prev =
            last_sent_ ? &*last_sent_ : nullptr;
        if (!generation_gate(prev, *snapshot, gen_time - last_sent_time_)) {
            ++stats_.suppressed;
            return false;
        }
        last_sent_ = *snapshot;
        last_sent_time_ = gen_time;
    } else if (cfg_.generation_rules_enabled && snapshot) {
        last_sent_ = *snapshot;
        last_sent_time_ = gen_time;
    }

    TimedSample s = transmit(state, reward_raw, gen_time, rng_, cfg_);
    s.terminal = terminal;
    ++stats_.sent;
    std::size_t trace_index = std::numeric_limits<std::size_t>::max();
    if (trace_enabled_) {
        trace_index = trace_.size();
        trace_.push_back({s.gen_time, s.arrival_time, s.arrival_time - s.gen_time,
                          s.lost, false});
    }
    if (s.lost) {
        ++stats_.lost;
        return true;
    }
    stats_.delay_sum += s.arrival_time - s.gen_time;
    in_flight_.push({s, trace_index});
    return true;
}

void V2xChannel::inject(const TimedSample& s) {
    if (!s.lost && s.arrival_time < s.gen_time)
        throw UsageError("inject: arrival_time must be >= gen_time");
    ++stats_.offered;
    ++stats_.sent;
    std::size_t trace_index = std::numeric_limits<std::size_t>::max();
    if (trace_enabled_) {
        trace_index = trace_.size();
        trace_.push_back({s.gen_time, s.arrival_time, s.arrival_time - s.gen_time,
                          s.lost, false});
    }
    if (s.lost) {
        ++stats_.lost;
        return;
    }
    stats_.delay_sum += s.arrival_time - s.gen_time;
    in_flight_.push({s, trace_index});
}

std::vector<Delivery> V2xChannel::poll(double receiver_clock) {
    if (receiver_clock < last_poll_clock_)
        throw UsageError("poll: receiver clock must be monotone");
    last_poll_clock_ = receiver_clock;

    std::vector<Delivery> out;
    while (!in_flight_.empty() &&
           in_flight_.top().sample.arrival_time <= receiver_clock) {
        const InFlight item = in_flight_.top();
        in_flight_.pop();
        if (item.sample.gen_time <= last_delivered_gen_) {
            ++stats_.stale_dropped;
            if (item.trace_index < trace_.size())
                trace_[item.trace_index].stale_dropped = true;
            continue;
        }
        Delivery d;
        d.sample = item.sample;
        d.delta_t = item.sample.arrival_time - last_delivered_arrival_;
        last_delivered_gen_ = item.sample.gen_time;
        last_delivered_arrival_ = item.sample.arrival_time;
        ++stats_.delivered;
        out.push_back(d);
    }
    return out;
}

std::vector<Delivery> V2xChannel::drain() {
    double horizon = last_poll_clock_;
    if (!in_flight_.empty()) {
        // priority_queue has no iteration; deliver everything by polling at
        // the latest in-flight arrival time.
        std::priority_queue copy = in_flight_;
        while (!copy.empty()) {
            horizon = std::max(horizon, copy.top().sample.arrival_time);
            copy.pop();
        }
    }
    return poll(horizon);
}

void V2xChannel::write_trace_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "gen_time,arrival_time,delay,stale_dropped\n";
    for (const ChannelTraceRow& r : trace_) {
        f << fmt_double(r.gen_time) << ',';
        if (r.lost)
            f << "LOST";
        else
            f << fmt_double(r.arrival_time);
        f << ',' << fmt_double(r.delay) << ',' << (r.stale_dropped ? 1 : 0) << '\n';
    }
}

std::string V2xChannel::stats_json() const {
    nlohmann::json j;
    j["offered"] = stats_.offered;
    j["suppressed"] = stats_.suppressed;
    j["sent"] = stats_.sent;
    j["lost"] = stats_.lost;
    j["delivered"] = stats_.delivered;
    j["stale_dropped"] = stats_.stale_dropped;
    j["mean_delay_s"] = stats_.mean_delay();
    j["loss_rate"] = stats_.loss_rate();
    j["stale_rate"] = stats_.stale_rate();
    return j.dump(2);
}

}  // namespace blindac
