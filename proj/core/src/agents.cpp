#include "blindac/agents.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace blindac {

const char* to_string(AgentKind k) {
    switch (k) {
        case AgentKind::classic_clean: return "classic_clean";
        case AgentKind::classic_aperiodic: return "classic_aperiodic";
        case AgentKind::motion_model: return "motion_model";
        case AgentKind::blind: return "blind";
    }
    return "?";
}

AgentKind agent_kind_from_string(const std::string& s) {
    if (s == "classic_clean") return AgentKind::classic_clean;
    if (s == "classic_aperiodic") return AgentKind::classic_aperiodic;
    if (s == "motion_model") return AgentKind::motion_model;
    if (s == "blind") return AgentKind::blind;
    throw ConfigError("unknown agent kind: " + s);
}

void AgentHyper::validate() const {
    if (gamma <= 0.0 || gamma >= 1.0) throw ConfigError("gamma must lie in (0, 1)");
    if (actor_lr <= 0.0 || critic_lr <= 0.0) throw ConfigError("learning rates must be > 0");
    if (target_coeff < 0.0 || target_coeff > 1.0)
        throw ConfigError("target_coeff must lie in [0, 1]");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (replay_capacity < batch_size)
        throw ConfigError("replay_capacity must be >= batch_size");
    if (ou_sigma < 0.0 || ou_theta < 0.0) throw ConfigError("OU parameters must be >= 0");
    if (tau <= 0.0) throw ConfigError("tau must be > 0");
    if (alpha_reward <= 0.0) throw ConfigError("alpha_reward must be > 0");
    if (approx_order < 1) throw ConfigError("approx_order must be >= 1");
    if (policy_sigma <= 0.0) throw ConfigError("policy_sigma must be > 0");
    if (hidden < 1) throw ConfigError("hidden width must be >= 1");
    if (accel_min >= accel_max) throw ConfigError("accel range is empty");
    if (sample_period <= 0.0) throw ConfigError("sample_period must be > 0");
}

std::vector<double> approximate_rewards(double r_prev, double r_next,
                                        double delta_t, double tau) {
    if (tau <= 0.0) throw UsageError("approximate_rewards: tau must be > 0");
    if (delta_t < tau)
        throw UsageError("approximate_rewards: delta_t < tau violates the training gate");
    const int k_count = int(delta_t / tau);
    const double slope = (r_next - r_prev) / delta_t;
    std::vector<double> out(static_cast<std::size_t>(k_count));
    for (int k = 0; k < k_count; ++k)
        out[std::size_t(k)] = r_prev + double(k + 1) * tau * slope;
    return out;
}

TargetBreakdown blind_target(std::span<const double> r_hat, double delta_t,
                             double tau, double gamma, double v_next,
                             bool terminal) {
    if (tau <= 0.0) throw UsageError("blind_target: tau must be > 0");
    if (delta_t < tau) throw UsageError("blind_target: delta_t < tau");
    const int k_count = int(delta_t / tau);
    if (int(r_hat.size()) != k_count)
        throw UsageError("blind_target: reward list length does not match int(delta_t/tau)");
    TargetBreakdown b;
    b.k_count = k_count;
    double gamma_pow = 1.0;
    for (int k = 0; k < k_count; ++k) {
        b.mc_sum += gamma_pow * r_hat[std::size_t(k)];
        gamma_pow *= gamma;
    }
    b.td_tail = terminal ? 0.0 : std::pow(gamma, delta_t / tau) * v_next;
    return b;
}

TargetBreakdown blind_terminal_target(double r_prev, double r_terminal,
                                      double delta_t, double tau, double gamma) {
    if (tau <= 0.0) throw UsageError("blind_terminal_target: tau must be > 0");
    if (delta_t < tau) throw UsageError("blind_terminal_target: delta_t < tau");
    TargetBreakdown b;
    b.k_count = int(delta_t / tau);
    double gamma_pow = 1.0;
    for (int k = 0; k < b.k_count; ++k) {
        b.mc_sum += gamma_pow * r_prev;
        gamma_pow *= gamma;
    }
    b.td_tail = std::pow(gamma, delta_t / tau) * r_terminal;
    return b;
}

double classic_td_target(double r, double gamma, double v_next, bool terminal) {
    return r + (terminal ? 0.0 : gamma * v_next);
}

StateVector motion_model_estimate(const StateVector& last, double elapsed) {
    if (elapsed < 0.0) throw UsageError("motion_model_estimate: elapsed must be >= 0");
    StateVector s = last;
    s.d_cav = last.d_cav - last.v_cav * elapsed;
    // Follower gaps close at the observed relative speeds; gaps are magnitudes.
    s.d_f1 = std::max(0.0, last.d_f1 - last.v_f1 * elapsed);
    s.d_f2 = std::max(0.0, last.d_f2 - last.v_f2 * elapsed);
    // Leading-vehicle speeds are not part of the state; hold those gaps.
    return s;
}

StateVector motion_model_estimate(const TimedSample& last, double elapsed) {
    return motion_model_estimate(last.state, elapsed);
}

Agent::Agent(AgentKind kind, const AgentHyper& hp, double merge_zone_length,
             double dist_scale, double speed_scale, std::uint64_t seed)
    : kind_(kind),
      hp_(hp),
      merge_zone_length_(merge_zone_length),
      dist_scale_(dist_scale),
      speed_scale_(speed_scale),
      actor_([&] {
          Rng init(derive_seed(seed, 0x41435430ULL));
          Mlp m = Mlp::make({8, hp.hidden, hp.hidden, 1}, Activation::tanh_fn,
                            Activation::tanh_fn, init);
          // Bias the fresh policy toward zero acceleration instead of the
          // range midpoint, which is a brake.
          const double mid = 0.5 * (hp.accel_min + hp.accel_max);
          const double half = 0.5 * (hp.accel_max - hp.accel_min);
          m.b.back()(0) = std::atanh(std::clamp(-mid / half, -0.9, 0.9));
          return m;
      }()),
      critic_([&] {
          Rng init(derive_seed(seed, 0x43524954ULL));
          return Mlp::make({8, hp.hidden, hp.hidden, 1}, Activation::tanh_fn,
                           Activation::linear, init);
      }()),
      actor_target_(actor_),
      critic_target_(critic_),
      actor_opt_(actor_),
      critic_opt_(critic_),
      replay_(std::size_t(hp.replay_capacity)),
      rng_(derive_seed(seed, 0x41474e54ULL)),
      ou_{0.0, hp.ou_theta, hp.ou_sigma} {
    hp_.validate();
    if (merge_zone_length_ <= 0.0 || dist_scale_ <= 0.0 || speed_scale_ <= 0.0)
        throw ConfigError("agent scales must be > 0");
}

Agent::Agent(const Checkpoint& c, std::uint64_t seed)
    : kind_(c.kind),
      hp_(c.hyper),
      merge_zone_length_(c.merge_zone_length),
      dist_scale_(c.dist_scale),
      speed_scale_(c.speed_scale),
      actor_(c.actor),
      critic_(c.critic),
      actor_target_(c.actor_target),
      critic_target_(c.critic_target),
      actor_opt_(actor_),
      critic_opt_(critic_),
      replay_(std::size_t(c.hyper.replay_capacity)),
      rng_(derive_seed(seed, 0x41474e54ULL)),
      ou_{0.0, c.hyper.ou_theta, c.hyper.ou_sigma} {
    hp_.validate();
}

Checkpoint Agent::to_checkpoint() const {
    Checkpoint c;
    c.kind = kind_;
    c.hyper = hp_;
    c.merge_zone_length = merge_zone_length_;
    c.dist_scale = dist_scale_;
    c.speed_scale = speed_scale_;
    c.actor = actor_;
    c.critic = critic_;
    c.actor_target = actor_target_;
    c.critic_target = critic_target_;
    return c;
}

Eigen::VectorXd Agent::normalize(const StateVector& s) const {
    Eigen::VectorXd x(8);
    x << s.d_cav / dist_scale_, s.v_cav / speed_scale_, s.d_p1 / dist_scale_,
        s.d_f1 / dist_scale_, s.v_f1 / speed_scale_, s.d_p2 / dist_scale_,
        s.d_f2 / dist_scale_, s.v_f2 / speed_scale_;
    return x;
}

double Agent::to_normalized_action(double a) const {
    const double mid = 0.5 * (hp_.accel_min + hp_.accel_max);
    const double half = 0.5 * (hp_.accel_max - hp_.accel_min);
    return (a - mid) / half;
}

double Agent::from_normalized_action(double u) const {
    const double mid = 0.5 * (hp_.accel_min + hp_.accel_max);
    const double half = 0.5 * (hp_.accel_max - hp_.accel_min);
    return mid + half * u;
}

double Agent::act(const StateVector& s, bool explore) {
    if (!s.finite()) throw UsageError("act: non-finite state rejected");
    double u = actor_.forward(normalize(s))(0);
    if (explore) u += ou_.step(hp_.sample_period, rng_);
    u = std::clamp(u, -1.0, 1.0);
    return from_normalized_action(u);
}

double Agent::value(const StateVector& s) const {
    return critic_.forward(normalize(s))(0);
}

double Agent::target_value(const StateVector& s) const {
    return critic_target_.forward(normalize(s))(0);
}

void Agent::episode_begin(double t0) {
    ++episode_;
    command_ = 0.0;
    have_prev_ = false;
    have_anchor_ = false;
    have_prev_est_ = false;
    episode_done_ = false;
    next_synth_ = t0;
    ou_.reset();
}

void Agent::observe(const Delivery& d, double clock) {
    if (kind_ == AgentKind::motion_model) {
        anchor_ = d.sample;
        have_anchor_ = true;
        if (d.sample.terminal) {
            if (training_ && have_prev_est_) {
                Transition t;
                t.s = prev_est_;
                t.a = command_;
                t.r_prev = prev_est_reward_;
                t.r_next = d.sample.reward_raw;
                t.delta_t = std::max(clock - prev_est_time_, 1e-9);
                t.s_next = d.sample.state;
                t.terminal = true;
                learn(t, prev_est_time_, d.sample.gen_time, clock);
            }
            episode_done_ = true;
        }
        return;
    }
    on_sample(d.sample.state, d.sample.reward_raw, d.sample.gen_time, d.delta_t,
              d.sample.terminal, clock);
}

void Agent::on_sample(const StateVector& s, double r, double gen_time,
                      double delta_t, bool terminal, double clock) {
    if (!have_prev_) {
        prev_state_ = s;
        prev_reward_ = r;
        prev_gen_ = gen_time;
        have_prev_ = true;
        if (!terminal) command_ = act(s, explore_);
        return;
    }
    const bool gate_ok = kind_ != AgentKind::blind || delta_t >= hp_.tau;
    if (gate_ok && training_) {
        Transition t;
        t.s = prev_state_;
        t.a = command_;
        t.r_prev = prev_reward_;
        t.r_next = r;
        t.delta_t = delta_t;
        t.s_next = s;
        t.terminal = terminal;
        learn(t, prev_gen_, gen_time, clock);
    }
    // The latest-state cache refreshes regardless of the gate.
    prev_state_ = s;
    prev_reward_ = r;
    prev_gen_ = gen_time;
    if (!terminal && (gate_ok || !training_)) command_ = act(s, explore_);
}

double Agent::command(double clock) {
    if (kind_ != AgentKind::motion_model) return command_;

    if (clock + 1e-9 >= next_synth_) {
        next_synth_ += hp_.sample_period;
        if (have_anchor_ && !episode_done_) {
            const double elapsed = std::max(0.0, clock - anchor_.gen_time);
            const StateVector est = motion_model_estimate(anchor_.state, elapsed);
            const double in_zone =
                est.d_cav > 0.0 && est.d_cav <= merge_zone_length_;
            const double r_est =
                in_zone ? in_zone_shaping(est.d_p1, est.d_f1, hp_.alpha_reward) : 0.0;
            if (training_ && have_prev_est_) {
                Transition t;
                t.s = prev_est_;
                t.a = command_;
                t.r_prev = prev_est_reward_;
                t.r_next = r_est;
                t.delta_t = hp_.sample_period;
                t.s_next = est;
                t.terminal = false;
                learn(t, prev_est_time_, clock, clock);
            }
            prev_est_ = est;
            prev_est_reward_ = r_est;
            prev_est_time_ = clock;
            have_prev_est_ = true;
            command_ = act(est, explore_);
        }
    }
    return command_;
}

double Agent::target_for(const Transition& t) const {
    if (kind_ == AgentKind::blind) {
        if (t.terminal)
            return blind_terminal_target(t.r_prev, t.r_next, t.delta_t, hp_.tau,
                                         hp_.gamma)
                .value();
        const std::vector<double> r_hat =
            approximate_rewards(t.r_prev, t.r_next, t.delta_t, hp_.tau);
        return blind_target(r_hat, t.delta_t, hp_.tau, hp_.gamma,
                            target_value(t.s_next), false)
            .value();
    }
    return classic_td_target(t.r_next, hp_.gamma, target_value(t.s_next),
                             t.terminal);
}

void Agent::learn(const Transition& t, double gen_prev, double gen_next,
                  double clock) {
    if (observer_) {
        TransitionInfo info;
        info.kind = kind_;
        info.gen_prev = gen_prev;
        info.gen_next = gen_next;
        info.delta_t = t.delta_t;
        info.terminal = t.terminal;
        info.estimated = kind_ == AgentKind::motion_model && !t.terminal;
        if (kind_ == AgentKind::blind) {
            if (t.terminal)
                info.r_hat = std::vector<double>(
                    std::size_t(int(t.delta_t / hp_.tau)), t.r_prev);
            else
                info.r_hat =
                    approximate_rewards(t.r_prev, t.r_next, t.delta_t, hp_.tau);
        } else {
            info.r_hat = {t.r_next};
        }
        info.r_prev = t.r_prev;
        info.r_next = t.r_next;
        info.v_next = target_value(t.s_next);
        info.v_tar = target_for(t);
        info.s = t.s;
        info.s_next = t.s_next;
        observer_->on_transition(info);
    }

    replay_.push(t);
    if (hp_.use_replay) {
        if (!replay_.ready(std::size_t(hp_.batch_size))) return;  // not ready yet
        train_minibatch(replay_.sample(std::size_t(hp_.batch_size), rng_), t.delta_t,
                        clock);
    } else {
        train_minibatch({t}, t.delta_t, clock);
    }
}

void Agent::train_minibatch(const std::vector<Transition>& batch, double delta_t,
                            double clock) {
    const int n = int(batch.size());
    Eigen::MatrixXd s(8, n), s_next(8, n);
    for (int i = 0; i < n; ++i) {
        s.col(i) = normalize(batch[std::size_t(i)].s);
        s_next.col(i) = normalize(batch[std::size_t(i)].s_next);
    }

    const Eigen::MatrixXd v_next = critic_target_.forward(s_next, nullptr);
    std::vector<double> targets(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Transition& t = batch[std::size_t(i)];
        const double vn = v_next(0, i);
        if (kind_ == AgentKind::blind) {
            if (t.terminal) {
                targets[std::size_t(i)] =
                    blind_terminal_target(t.r_prev, t.r_next, t.delta_t, hp_.tau,
                                          hp_.gamma)
                        .value();
            } else {
                const std::vector<double> r_hat =
                    approximate_rewards(t.r_prev, t.r_next, t.delta_t, hp_.tau);
                targets[std::size_t(i)] =
                    blind_target(r_hat, t.delta_t, hp_.tau, hp_.gamma, vn, false)
                        .value();
            }
        } else {
            targets[std::size_t(i)] =
                classic_td_target(t.r_next, hp_.gamma, vn, t.terminal);
        }
    }

    // Critic regression toward the targets.
    ForwardCache c_cache;
    const Eigen::MatrixXd v_phi = critic_.forward(s, &c_cache);
    Eigen::MatrixXd resid(1, n);
    for (int i = 0; i < n; ++i)
        resid(0, i) = v_phi(0, i) - targets[std::size_t(i)];
    const double critic_loss = resid.squaredNorm() / double(n);
    critic_opt_.step(critic_, critic_.backward(c_cache, resid / double(n)),
                     hp_.critic_lr);

    // Advantage-weighted policy gradient on the Gaussian head.
    ForwardCache a_cache;
    const Eigen::MatrixXd mu = actor_.forward(s, &a_cache);
    const double scale =
        hp_.deterministic_pg ? 1.0 : 1.0 / (hp_.policy_sigma * hp_.policy_sigma);
    Eigen::MatrixXd a_up(1, n);
    double actor_loss = 0.0;
    double adv_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double adv = advantage(targets[std::size_t(i)], v_phi(0, i));
        const double u_taken = to_normalized_action(batch[std::size_t(i)].a);
        const double diff = u_taken - mu(0, i);
        a_up(0, i) = -adv * diff * scale / double(n);
        actor_loss += 0.5 * adv * diff * diff * scale / double(n);
        adv_sum += adv;
    }
    actor_opt_.step(actor_, actor_.backward(a_cache, a_up), hp_.actor_lr);

    soft_update(critic_target_, critic_, hp_.target_coeff);
    soft_update(actor_target_, actor_, hp_.target_coeff);
    ++train_steps_;

    if (observer_) {
        double target_mean = 0.0;
        for (double t : targets) target_mean += t;
        target_mean /= double(n);
        std::vector<double> v_phi_vec(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) v_phi_vec[std::size_t(i)] = v_phi(0, i);
        TrainStepInfo info;
        info.diag = {episode_, clock,    delta_t,    target_mean,
                     adv_sum / double(n), critic_loss, actor_loss};
        info.v_tar = targets;
        info.v_phi = v_phi_vec;
        observer_->on_train_step(info);
    }
}

namespace {
constexpr std::uint32_t kCkptMagic = 0x4b434142;  // "BACK"
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}
void put_i64(std::ostream& os, std::int64_t v) {
    os.write(reinterpret_cast<const char*>(&v), 8);
}
void put_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), 8);
}
void put_u8(std::ostream& os, std::uint8_t v) {
    os.write(reinterpret_cast<const char*>(&v), 1);
}
std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw std::runtime_error("truncated checkpoint");
    return v;
}
std::int64_t get_i64(std::istream& is) {
    std::int64_t v;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw std::runtime_error("truncated checkpoint");
    return v;
}
double get_f64(std::istream& is) {
    double v;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw std::runtime_error("truncated checkpoint");
    return v;
}
std::uint8_t get_u8(std::istream& is) {
    std::uint8_t v;
    is.read(reinterpret_cast<char*>(&v), 1);
    if (!is) throw std::runtime_error("truncated checkpoint");
    return v;
}

void save_checkpoint_stream(std::ostream& os, const Checkpoint& c) {
    put_u32(os, kCkptMagic);
    put_u32(os, kCkptVersion);
    put_u8(os, std::uint8_t(c.kind));
    const AgentHyper& h = c.hyper;
    put_f64(os, h.gamma);
    put_f64(os, h.actor_lr);
    put_f64(os, h.critic_lr);
    put_f64(os, h.target_coeff);
    put_i64(os, h.replay_capacity);
    put_i64(os, h.batch_size);
    put_f64(os, h.ou_sigma);
    put_f64(os, h.ou_theta);
    put_f64(os, h.tau);
    put_f64(os, h.alpha_reward);
    put_i64(os, h.approx_order);
    put_f64(os, h.policy_sigma);
    put_u8(os, h.deterministic_pg ? 1 : 0);
    put_u8(os, h.use_replay ? 1 : 0);
    put_i64(os, h.hidden);
    put_f64(os, h.accel_min);
    put_f64(os, h.accel_max);
    put_f64(os, h.sample_period);
    put_f64(os, c.merge_zone_length);
    put_f64(os, c.dist_scale);
    put_f64(os, c.speed_scale);
    save_mlp(os, c.actor);
    save_mlp(os, c.critic);
    save_mlp(os, c.actor_target);
    save_mlp(os, c.critic_target);
}

Checkpoint load_checkpoint_stream(std::istream& is) {
    if (get_u32(is) != kCkptMagic) throw std::runtime_error("not a checkpoint file");
    if (get_u32(is) != kCkptVersion)
        throw std::runtime_error("unsupported checkpoint version");
    Checkpoint c;
    c.kind = AgentKind(get_u8(is));
    AgentHyper& h = c.hyper;
    h.gamma = get_f64(is);
    h.actor_lr = get_f64(is);
    h.critic_lr = get_f64(is);
    h.target_coeff = get_f64(is);
    h.replay_capacity = get_i64(is);
    h.batch_size = int(get_i64(is));
    h.ou_sigma = get_f64(is);
    h.ou_theta = get_f64(is);
    h.tau = get_f64(is);
    h.alpha_reward = get_f64(is);
    h.approx_order = int(get_i64(is));
    h.policy_sigma = get_f64(is);
    h.deterministic_pg = get_u8(is) != 0;
    h.use_replay = get_u8(is) != 0;
    h.hidden = int(get_i64(is));
    h.accel_min = get_f64(is);
    h.accel_max = get_f64(is);
    h.sample_period = get_f64(is);
    c.merge_zone_length = get_f64(is);
    c.dist_scale = get_f64(is);
    c.speed_scale = get_f64(is);
    c.actor = load_mlp(is);
    c.critic = load_mlp(is);
    c.actor_target = load_mlp(is);
    c.critic_target = load_mlp(is);
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    save_checkpoint_stream(f, c);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    return load_checkpoint_stream(f);
}

std::string checkpoint_bytes(const Checkpoint& c) {
    std::ostringstream os(std::ios::binary);
    save_checkpoint_stream(os, c);
    return os.str();
}

EpisodeResult run_episode(MergeEnv& env, V2xChannel& channel, Controller& ctl,
                          std::uint64_t env_seed, const EpisodeParams& p,
                          const EpisodeHooks* hooks) {
    const EnvState& st0 = env.reset(env_seed);
    channel.reset_episode();
    ctl.episode_begin(0.0);

    const double dt = env.config().dt;
    const std::int64_t send_every =
        std::max<std::int64_t>(1, std::llround(p.sample_period / dt));

    std::vector<ObjectSnapshot> snapshot;
    auto build_snapshot = [&](const EnvState& s) {
        snapshot.clear();
        snapshot.push_back({s.ego.id, s.ego.position, s.ego.speed, 0.0});
        for (const Vehicle& v : s.traffic)
            snapshot.push_back({v.id, v.position, v.speed, 0.0});
        return &snapshot;
    };

    // Initial perception at t = 0.
    StepOutcome initial;
    initial.reward_raw = reward(st0, StepOutcome{}, env.alpha());
    channel.submit(observe(st0), initial.reward_raw, 0.0, false,
                   p.build_snapshots ? build_snapshot(st0) : nullptr);
    if (hooks && hooks->on_tick) hooks->on_tick(0.0, st0, observe(st0), initial);

    EpisodeResult res;
    const double zone_start = env.config().geometry.merge_zone_start();
    const double merge_point = env.config().geometry.merge_point;

    while (true) {
        const double cmd = ctl.command(env.state().sim_time);
        const auto [st, out] = env.step(cmd);
        const double t = st->sim_time;
        ++res.ticks;
        res.raw_return += out.reward_raw;
        if (st->ego.position >= zone_start && st->ego.position < merge_point) {
            res.merge_zone_speed_sum += st->ego.speed;
            ++res.merge_zone_ticks;
        }
        if (hooks && hooks->on_tick) hooks->on_tick(t, *st, observe(*st), out);

        if (st->tick % send_every == 0 || out.terminal) {
            channel.submit(observe(*st), out.reward_raw, t, out.terminal,
                           p.build_snapshots ? build_snapshot(*st) : nullptr,
                           /*bypass_gate=*/out.terminal);
        }
        for (const Delivery& d : channel.poll(t)) {
            ctl.observe(d, t);
            ++res.deliveries;
        }
        if (out.terminal) {
            for (const Delivery& d : channel.drain()) {
                ctl.observe(d, d.sample.arrival_time);
                ++res.deliveries;
            }
            res.status = st->episode_status;
            res.sim_time = t;
            if (st->episode_status == EpisodeStatus::merged) {
                const StateVector s = observe(*st);
                res.safety_distance_at_merge = std::min(s.d_p1, s.d_f1);
            }
            break;
        }
    }
    res.emergency_onsets = env.emergency_braking_count();
    return res;
}

}  // namespace blindac
