#pragma once

#include <cstdint>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "blindac/merge_env.hpp"
#include "blindac/rng.hpp"

namespace blindac {

struct ChannelConfig {
    double mu_delay_ms = 50.0;
    double sigma_delay_ms = 23.0;
    double p_mlr = 0.0;  // per-message Bernoulli loss probability
    bool generation_rules_enabled = false;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const ChannelConfig&) const = default;
};

struct TimedSample {
    StateVector state;
    double reward_raw = 0.0;
    double gen_time = 0.0;
    double arrival_time = 0.0;
    bool lost = false;
    bool terminal = false;
};

// A delivered sample plus the receiver-side arrival gap since the previous
// delivery of the episode.
struct Delivery {
    TimedSample sample;
    double delta_t = 0.0;
};

// Transmitter-side view of one tracked object, for the message generation
// rules.
struct ObjectSnapshot {
    int id = 0;
    double position = 0.0;
    double speed = 0.0;
    double heading = 0.0;  // degrees
};

// CPM-style generation gate. A message goes out when there was no prior
// transmission, when a full second elapsed, or when at least 0.1 s elapsed and
// some tracked object moved more than 4 m, changed speed by more than
// 0.5 m/s, changed heading by more than 4 degrees, or is newly detected.
bool generation_gate(const std::vector<ObjectSnapshot>* prev_sent,
                     const std::vector<ObjectSnapshot>& current, double elapsed);

// One draw from N(mu, sigma), rejecting non-positive values.
double sample_delay(Rng& rng, const ChannelConfig& cfg);

TimedSample transmit(const StateVector& state, double reward_raw, double gen_time,
                     Rng& rng, const ChannelConfig& cfg);

struct ChannelStats {
    std::int64_t offered = 0;     // samples presented to the transmitter
    std::int64_t suppressed = 0;  // gated away before transmission
    std::int64_t sent = 0;
    std::int64_t lost = 0;
    std::int64_t delivered = 0;
    std::int64_t stale_dropped = 0;
    double delay_sum = 0.0;  // over transmitted (non-lost) samples

    double mean_delay() const { return sent > lost ? delay_sum / double(sent - lost) : 0.0; }
    double loss_rate() const { return sent > 0 ? double(lost) / double(sent) : 0.0; }
    double stale_rate() const {
        return sent > lost ? double(stale_dropped) / double(sent - lost) : 0.0;
    }
};

struct ChannelTraceRow {
    double gen_time;
    double arrival_time;  // ignored when lost
    double delay;
    bool lost;
    bool stale_dropped;
};

// Single-writer single-reader delay/loss pipe between the periodic
// transmitter and the agent. Out-of-order arrivals are dropped as stale so
// the delivered stream has strictly increasing generation times.
class V2xChannel {
public:
    explicit V2xChannel(const ChannelConfig& cfg);

    // Clears in-flight messages and per-episode bookkeeping. The RNG stream
    // continues so distinct episodes see fresh randomness.
    void reset_episode();

    // Returns false when the generation rules suppressed the message.
    bool submit(const StateVector& state, double reward_raw, double gen_time,
                bool terminal = false,
                const std::vector<ObjectSnapshot>* snapshot = nullptr,
                bool bypass_gate = false);

    // Places a fully specified sample in flight, bypassing the delay and loss
    // draws. Supports deterministic timelines in tests and trace replay.
    void inject(const TimedSample& s);

    std::vector<Delivery> poll(double receiver_clock);
    std::vector<Delivery> drain();

    const ChannelStats& stats() const { return stats_; }
    const std::vector<ChannelTraceRow>& trace() const { return trace_; }
    void set_trace_enabled(bool on) { trace_enabled_ = on; }
    void write_trace_csv(const std::string& path) const;
    std::string stats_json() const;

private:
    struct InFlight {
        TimedSample sample;
        std::size_t trace_index;
        bool operator>(const InFlight& o) const {
            if (sample.arrival_time != o.sample.arrival_time)
                return sample.arrival_time > o.sample.arrival_time;
            return sample.gen_time > o.sample.gen_time;
        }
    };

    ChannelConfig cfg_;
    Rng rng_;
    std::priority_queue<InFlight, std::vector<InFlight>, std::greater<>> in_flight_;
    std::optional<std::vector<ObjectSnapshot>> last_sent_;
    double last_sent_time_ = 0.0;
    double last_delivered_gen_ = -1.0;
    double last_delivered_arrival_ = 0.0;
    double last_poll_clock_ = 0.0;
    ChannelStats stats_;
    bool trace_enabled_ = false;
    std::vector<ChannelTraceRow> trace_;
};

}  // namespace blindac
