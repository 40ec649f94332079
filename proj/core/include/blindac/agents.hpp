#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "blindac/channel.hpp"
#include "blindac/merge_env.hpp"
#include "blindac/neural.hpp"

namespace blindac {

enum class AgentKind : std::uint8_t {
    classic_clean = 0,
    classic_aperiodic = 1,
    motion_model = 2,
    blind = 3,
};

const char* to_string(AgentKind k);
AgentKind agent_kind_from_string(const std::string& s);

// Hyper-parameters shared by every agent; the blind-specific entries are the
// fictive sampling period tau, the reward scale alpha and the interpolation
// order.
struct AgentHyper {
    double gamma = 0.98;
    double actor_lr = 1e-4;
    double critic_lr = 1e-3;
    double target_coeff = 0.001;
    std::int64_t replay_capacity = 400000;
    int batch_size = 64;
    double ou_sigma = 0.4;
    double ou_theta = 0.2;
    double tau = 0.1;           // s, fictive sampling period
    double alpha_reward = 0.1;  // reward scale alpha
    int approx_order = 1;
    double policy_sigma = 0.1;  // exploration std of the Gaussian policy head
    bool deterministic_pg = false;
    bool use_replay = true;  // false = strictly on-policy updates
    int hidden = 64;
    double accel_min = -5.0;
    double accel_max = 3.0;
    double sample_period = 0.1;  // s, transmitter perception period

    void validate() const;
    bool operator==(const AgentHyper&) const = default;
};

// Decomposition of one blind critic target.
struct TargetBreakdown {
    double mc_sum = 0.0;   // sum of gamma^k * r_hat over the gap
    double td_tail = 0.0;  // gamma^(delta_t/tau) * v_next, zero at terminals
    int k_count = 0;       // int(delta_t / tau)

    double value() const { return mc_sum + td_tail; }
};

// Order-1 interpolation of the unobserved rewards between two deliveries:
// r_hat_k = r_prev + (k+1) * tau * (r_next - r_prev) / delta_t for
// k = 0 .. int(delta_t/tau)-1. Throws when delta_t < tau (training gate).
std::vector<double> approximate_rewards(double r_prev, double r_next,
                                        double delta_t, double tau);

// Hybrid Monte-Carlo / temporal-difference target over an aperiodic gap. The
// discount exponent of the bootstrap tail is the real-valued delta_t / tau.
TargetBreakdown blind_target(std::span<const double> r_hat, double delta_t,
                             double tau, double gamma, double v_next,
                             bool terminal);

// Target for a gap that ends in a terminal event. The running reward is held
// over the gap's interior (the milestone reward is a point event, outside the
// C^n domain of the interpolant) and the event itself is discounted at its
// actual arrival instant.
TargetBreakdown blind_terminal_target(double r_prev, double r_terminal,
                                      double delta_t, double tau, double gamma);

double classic_td_target(double r, double gamma, double v_next, bool terminal);

inline double advantage(double v_tar, double v_phi) { return v_tar - v_phi; }

// Constant-speed extrapolation of a received state: the ego closes on the
// merge point at its own speed, follower gaps close at the observed relative
// speeds, leading gaps are held (their speeds are not part of the state).
StateVector motion_model_estimate(const StateVector& last, double elapsed);
StateVector motion_model_estimate(const TimedSample& last, double elapsed);

// Per-minibatch diagnostics of one gradient step.
struct StepDiag {
    int episode = 0;
    double clock = 0.0;
    double delta_t = 0.0;
    double target_mean = 0.0;
    double advantage_mean = 0.0;
    double critic_loss = 0.0;
    double actor_loss = 0.0;
};

// Emitted once per *newly formed* transition, before it enters the replay
// memory; carries what the approximation-error diagnostics need.
struct TransitionInfo {
    AgentKind kind = AgentKind::blind;
    double gen_prev = 0.0;
    double gen_next = 0.0;
    double delta_t = 0.0;
    bool terminal = false;
    bool estimated = false;  // motion-model pseudo-sample
    std::vector<double> r_hat;
    double r_prev = 0.0;
    double r_next = 0.0;
    double v_next = 0.0;  // bootstrap value used at formation time
    double v_tar = 0.0;   // target value at formation time
    StateVector s;        // transition start state
    StateVector s_next;   // estimated next state for pseudo-samples
};

struct TrainStepInfo {
    StepDiag diag;
    std::span<const double> v_tar;
    std::span<const double> v_phi;
};

struct TrainObserver {
    virtual ~TrainObserver() = default;
    virtual void on_transition(const TransitionInfo&) {}
    virtual void on_train_step(const TrainStepInfo&) {}
};

// Minimal control-loop surface shared by learning agents and scripted
// policies: fed deliveries, asked for a command every tick.
class Controller {
public:
    virtual ~Controller() = default;
    virtual void episode_begin(double t0) = 0;
    virtual void observe(const Delivery& d, double clock) = 0;
    virtual double command(double clock) = 0;
};

struct Checkpoint {
    AgentKind kind = AgentKind::blind;
    AgentHyper hyper;
    double merge_zone_length = 100.0;
    double dist_scale = 400.0;
    double speed_scale = 34.0;
    Mlp actor, critic, actor_target, critic_target;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);
std::string checkpoint_bytes(const Checkpoint& c);  // in-memory serialization

class Agent : public Controller {
public:
    // Fresh networks. merge_zone_length and the normalization scales come
    // from the environment geometry.
    Agent(AgentKind kind, const AgentHyper& hp, double merge_zone_length,
          double dist_scale, double speed_scale, std::uint64_t seed);
    // Restore from a checkpoint (empty replay memory).
    Agent(const Checkpoint& c, std::uint64_t seed);

    void set_training(bool on) { training_ = on; }
    void set_explore(bool on) { explore_ = on; }
    void set_observer(TrainObserver* obs) { observer_ = obs; }

    AgentKind kind() const { return kind_; }
    const AgentHyper& hyper() const { return hp_; }
    bool finite() const { return actor_.finite() && critic_.finite(); }
    Checkpoint to_checkpoint() const;
    std::size_t replay_size() const { return replay_.size(); }
    int train_steps() const { return train_steps_; }

    // Deterministic policy output mapped to [accel_min, accel_max]; optional
    // OU exploration noise, clamped after addition.
    double act(const StateVector& s, bool explore);
    double value(const StateVector& s) const;         // online critic
    double target_value(const StateVector& s) const;  // target critic

    // Controller interface
    void episode_begin(double t0) override;
    void observe(const Delivery& d, double clock) override;
    double command(double clock) override;

private:
    void on_sample(const StateVector& s, double r, double gen_time, double delta_t,
                   bool terminal, double clock);
    void learn(const Transition& t, double gen_prev, double gen_next, double clock);
    void train_minibatch(const std::vector<Transition>& batch, double delta_t,
                         double clock);
    double target_for(const Transition& t) const;
    Eigen::VectorXd normalize(const StateVector& s) const;
    double to_normalized_action(double a) const;
    double from_normalized_action(double u) const;

    AgentKind kind_;
    AgentHyper hp_;
    double merge_zone_length_;
    double dist_scale_;
    double speed_scale_;

    Mlp actor_, critic_, actor_target_, critic_target_;
    Adam actor_opt_, critic_opt_;
    ReplayMemory replay_;
    Rng rng_;
    OuNoise ou_;

    bool training_ = true;
    bool explore_ = true;
    TrainObserver* observer_ = nullptr;

    int episode_ = 0;
    int train_steps_ = 0;
    double command_ = 0.0;

    // last delivery acted upon / cached (classic + blind)
    bool have_prev_ = false;
    StateVector prev_state_;
    double prev_reward_ = 0.0;
    double prev_gen_ = 0.0;

    // motion-model anchoring
    bool have_anchor_ = false;
    TimedSample anchor_;
    bool have_prev_est_ = false;
    StateVector prev_est_;
    double prev_est_reward_ = 0.0;
    double prev_est_time_ = 0.0;
    double next_synth_ = 0.0;
    bool episode_done_ = false;
};

// Episode driver: wires env -> channel -> controller at the environment tick,
// transmitting at the configured perception period. The terminal sample is
// always offered to the channel and in-flight messages are drained when the
// episode ends.
struct EpisodeParams {
    double sample_period = 0.1;
    bool build_snapshots = false;  // feed object snapshots to the channel gate
};

struct EpisodeHooks {
    // Called after every tick with the post-step state and ground truth.
    std::function<void(double t, const EnvState& s, const StateVector& obs,
                       const StepOutcome& out)>
        on_tick;
};

struct EpisodeResult {
    EpisodeStatus status = EpisodeStatus::running;
    double sim_time = 0.0;
    int ticks = 0;
    double raw_return = 0.0;
    int emergency_onsets = 0;
    int deliveries = 0;
    double safety_distance_at_merge = std::numeric_limits<double>::quiet_NaN();
    double merge_zone_speed_sum = 0.0;
    int merge_zone_ticks = 0;

    double avg_merge_zone_speed_kmh() const {
        return merge_zone_ticks > 0
                   ? 3.6 * merge_zone_speed_sum / double(merge_zone_ticks)
                   : std::numeric_limits<double>::quiet_NaN();
    }
};

EpisodeResult run_episode(MergeEnv& env, V2xChannel& channel, Controller& ctl,
                          std::uint64_t env_seed, const EpisodeParams& p,
                          const EpisodeHooks* hooks = nullptr);

}  // namespace blindac
