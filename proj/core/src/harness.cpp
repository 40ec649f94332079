#include "blindac/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "blindac/io.hpp"
#include "blindac/svg.hpp"

namespace fs = std::filesystem;

namespace blindac {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

EpisodeStatus status_from_string(const std::string& s) {
    if (s == "merged") return EpisodeStatus::merged;
    if (s == "collided") return EpisodeStatus::collided;
    if (s == "stopped") return EpisodeStatus::stopped;
    if (s == "running") return EpisodeStatus::running;
    throw std::runtime_error("unknown episode status: " + s);
}

// Collects ground truth per tick and approximation-error diagnostics from the
// training agent.
class HarnessObserver : public TrainObserver {
public:
    HarnessObserver(TrainingLog& log, const Agent& agent, double sample_period)
        : log_(log), agent_(agent), sample_period_(sample_period) {}

    void begin_episode(int episode) {
        episode_ = episode;
        truth_.clear();
        episode_v_tar_.clear();
        episode_v_phi_.clear();
        episode_train_steps_ = 0;
    }

    void on_tick(double t, const EnvState&, const StateVector& obs,
                 const StepOutcome& out) {
        truth_.push(t, out.reward_raw, obs);
    }

    void on_transition(const TransitionInfo& info) override {
        if (truth_.empty()) return;
        // The fictive grid of the truth-informed target; clamped so arrival
        // jitter slightly below the nominal period keeps k_count >= 1.
        const double tau_grid = std::min(
            info.kind == AgentKind::blind ? agent_.hyper().tau : sample_period_,
            info.delta_t);
        // Reward approximation errors against the ground-truth tick stream.
        for (std::size_t k = 0; k < info.r_hat.size(); ++k) {
            const double instant =
                info.kind == AgentKind::blind
                    ? info.gen_prev + double(k + 1) * agent_.hyper().tau
                    : info.gen_next;
            cum_reward_err_ += std::abs(info.r_hat[k] - truth_.reward_at(instant));
        }
        // Value target error against the truth-informed target.
        double oracle;
        if (info.kind == AgentKind::motion_model) {
            const double r_true = truth_.reward_at(info.gen_next);
            const double v_true =
                info.terminal ? 0.0
                              : agent_.target_value(truth_.state_at(info.gen_next));
            oracle = classic_td_target(r_true, agent_.hyper().gamma, v_true,
                                       info.terminal);
        } else if (info.kind == AgentKind::blind && info.terminal) {
            // interior rewards replaced by the tick truth; the terminal event
            // keeps its discounted position
            oracle = oracle_blind_target(truth_, info.gen_prev, info.delta_t,
                                         tau_grid, agent_.hyper().gamma,
                                         info.r_next, false);
        } else {
            oracle = oracle_blind_target(truth_, info.gen_prev, info.delta_t,
                                         tau_grid, agent_.hyper().gamma,
                                         info.v_next, info.terminal);
        }
        cum_value_err_ += std::abs(info.v_tar - oracle);
    }

    void on_train_step(const TrainStepInfo& info) override {
        StepDiag d = info.diag;
        d.episode = episode_;
        log_.steps.push_back(d);
        episode_v_tar_.insert(episode_v_tar_.end(), info.v_tar.begin(),
                              info.v_tar.end());
        episode_v_phi_.insert(episode_v_phi_.end(), info.v_phi.begin(),
                              info.v_phi.end());
        ++episode_train_steps_;
    }

    void end_episode(const EpisodeResult& r) {
        EpisodeRow row;
        row.episode = episode_;
        row.status = r.status;
        row.sim_time = r.sim_time;
        row.ticks = r.ticks;
        row.raw_return = r.raw_return;
        row.train_steps = episode_train_steps_;
        row.resid_var = episode_v_tar_.size() >= 2
                            ? residual_variance(episode_v_tar_, episode_v_phi_)
                            : kNan;
        row.cum_reward_err = cum_reward_err_;
        row.cum_value_err = cum_value_err_;
        row.emergency_onsets = r.emergency_onsets;
        log_.episodes.push_back(row);
    }

private:
    TrainingLog& log_;
    const Agent& agent_;
    double sample_period_;
    int episode_ = 0;
    TickSeries truth_;
    std::vector<double> episode_v_tar_, episode_v_phi_;
    int episode_train_steps_ = 0;
    double cum_reward_err_ = 0.0;
    double cum_value_err_ = 0.0;
};

ChannelConfig effective_channel(const RunConfig& cfg) {
    ChannelConfig ch = cfg.channel;
    if (cfg.agent == AgentKind::classic_clean) {
        // The ideal case: constant one-tick shift, nothing lost, no gating.
        ch.mu_delay_ms = 1.0;
        ch.sigma_delay_ms = 0.0;
        ch.p_mlr = 0.0;
        ch.generation_rules_enabled = false;
    }
    return ch;
}

}  // namespace

std::vector<double> TrainingLog::returns() const {
    std::vector<double> out;
    out.reserve(episodes.size());
    for (const EpisodeRow& e : episodes) out.push_back(e.raw_return);
    return out;
}

std::vector<double> TrainingLog::normalized_returns() const {
    const std::vector<double> r = returns();
    if (r.empty()) return {};
    return normalized_avg_reward(r, alpha, window);
}

RunResult run_training(const RunConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    if (!out_dir.empty()) fs::create_directories(out_dir);

    ChannelConfig ch_cfg = effective_channel(cfg);
    ch_cfg.seed = derive_seed(cfg.seed, 0x4348414eULL);
    V2xChannel channel(ch_cfg);
    channel.set_trace_enabled(cfg.write_channel_trace);

    MergeEnv env(cfg.env, cfg.hyper.alpha_reward);
    Agent agent(cfg.agent, cfg.hyper, cfg.env.geometry.merge_zone_length,
                cfg.env.geometry.main_lane_visible_length, cfg.env.spawn_speed_max,
                derive_seed(cfg.seed, 0x41475431ULL));
    agent.set_training(true);
    agent.set_explore(true);

    RunResult result;
    result.log.label = to_string(cfg.agent);
    result.log.alpha = cfg.hyper.alpha_reward;

    HarnessObserver observer(result.log, agent, cfg.hyper.sample_period);
    agent.set_observer(&observer);

    EpisodeParams params;
    params.sample_period = cfg.hyper.sample_period;
    params.build_snapshots = ch_cfg.generation_rules_enabled;

    EpisodeHooks hooks;
    hooks.on_tick = [&](double t, const EnvState& s, const StateVector& obs,
                        const StepOutcome& out) { observer.on_tick(t, s, obs, out); };

    Checkpoint last_good = agent.to_checkpoint();
    for (int ep = 0; ep < cfg.episodes; ++ep) {
        observer.begin_episode(ep);
        const std::uint64_t env_seed = derive_seed(cfg.seed, 0x455056ULL,
                                                   std::uint64_t(ep));
        const EpisodeResult r = run_episode(env, channel, agent, env_seed, params,
                                            &hooks);
        observer.end_episode(r);

        bool finite = agent.finite();
        if (!result.log.steps.empty()) {
            const StepDiag& d = result.log.steps.back();
            finite = finite && std::isfinite(d.critic_loss) &&
                     std::isfinite(d.actor_loss);
        }
        if (!finite) {
            if (!out_dir.empty()) {
                save_checkpoint(out_dir + "/checkpoint.bin", last_good);
                write_episodes_csv(result.log, out_dir + "/episodes.csv");
            }
            throw DivergedError("training diverged at episode " +
                                std::to_string(ep));
        }
        if (ep % 50 == 49) last_good = agent.to_checkpoint();
    }

    result.checkpoint = agent.to_checkpoint();
    result.channel_stats = channel.stats();

    if (!out_dir.empty()) {
        std::ofstream cfg_out(out_dir + "/config.ini");
        cfg_out << serialize_config(cfg);
        save_checkpoint(out_dir + "/checkpoint.bin", result.checkpoint);
        write_episodes_csv(result.log, out_dir + "/episodes.csv");
        write_steps_csv(result.log, out_dir + "/train_diag.csv");
        std::ofstream stats(out_dir + "/channel_stats.json");
        stats << channel.stats_json() << '\n';
        if (cfg.write_channel_trace)
            channel.write_trace_csv(out_dir + "/channel_trace.csv");
    }
    return result;
}

int pick_best_trial(const std::vector<TrialRow>& trials) {
    int best = -1;
    for (int i = 0; i < int(trials.size()); ++i) {
        const TrialRow& t = trials[std::size_t(i)];
        if (t.diverged) continue;
        if (best < 0) {
            best = i;
            continue;
        }
        const TrialRow& b = trials[std::size_t(best)];
        if (t.score > b.score || (t.score == b.score && t.episodes < b.episodes))
            best = i;
    }
    return best;
}

TuneResult tune(const RunConfig& base, const std::string& out_dir) {
    base.validate();
    const TuneSpec& spec = base.tune;
    if (!out_dir.empty()) fs::create_directories(out_dir);

    Rng rng(derive_seed(base.seed, 0x54554e45ULL));
    TuneResult result;
    for (int i = 0; i < spec.trials; ++i) {
        TrialRow row;
        row.trial = i;
        row.alpha = std::exp(rng.uniform(std::log(spec.alpha_min),
                                         std::log(spec.alpha_max)));
        row.tau = rng.uniform(spec.tau_min, spec.tau_max);
        row.episodes =
            spec.episodes_min +
            int(rng.uniform_int(std::uint64_t(spec.episodes_max - spec.episodes_min + 1)));

        RunConfig trial_cfg = base;
        trial_cfg.hyper.alpha_reward = row.alpha;
        trial_cfg.hyper.tau = row.tau;
        trial_cfg.episodes = row.episodes;
        trial_cfg.seed = derive_seed(base.seed, 0x5452ULL, std::uint64_t(i));

        try {
            const RunResult r = run_training(trial_cfg);
            const std::vector<double> norm = r.log.normalized_returns();
            const int w = std::min<int>(spec.window, int(norm.size()));
            double score = 0.0;
            for (int k = int(norm.size()) - w; k < int(norm.size()); ++k)
                score += norm[std::size_t(k)];
            row.score = w > 0 ? score / double(w) : -std::numeric_limits<double>::infinity();
        } catch (const DivergedError&) {
            row.diverged = true;
            row.score = -std::numeric_limits<double>::infinity();
        }
        result.trials.push_back(row);
    }

    if (!out_dir.empty()) {
        std::ofstream f(out_dir + "/trials.csv");
        f << "trial,alpha,tau,episodes,score,diverged\n";
        for (const TrialRow& t : result.trials)
            f << t.trial << ',' << fmt_double(t.alpha) << ',' << fmt_double(t.tau)
              << ',' << t.episodes << ',' << fmt_double(t.score) << ','
              << (t.diverged ? 1 : 0) << '\n';
    }

    const int best = pick_best_trial(result.trials);
    if (best < 0) throw DivergedError("all tuning trials diverged");
    result.best = base;
    result.best.hyper.alpha_reward = result.trials[std::size_t(best)].alpha;
    result.best.hyper.tau = result.trials[std::size_t(best)].tau;
    result.best.episodes = result.trials[std::size_t(best)].episodes;
    if (!out_dir.empty()) {
        std::ofstream f(out_dir + "/best_config.ini");
        f << serialize_config(result.best);
    }
    return result;
}

TestReport run_grid_eval(const Checkpoint& ckpt, const RunConfig& cfg,
                         const GridSpec& grid, int episodes_per_cell,
                         std::uint64_t seed, const std::string& out_dir) {
    const ControllerFactory factory = [&]() {
        auto agent = std::make_unique<Agent>(ckpt, derive_seed(seed, 0x4556ULL));
        agent->set_training(false);
        agent->set_explore(false);
        return agent;
    };
    const TestReport report =
        evaluate_grid(factory, cfg.env, ckpt.hyper.alpha_reward, cfg.channel, grid,
                      episodes_per_cell, seed, ckpt.hyper.sample_period);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_file(out_dir + "/grid_report.csv", report.to_csv());
        write_file(out_dir + "/grid_report.json", report.to_json() + "\n");

        std::vector<std::string> rows, cols;
        for (double m : grid.mu_delays_ms) rows.push_back(fmt_double(m) + " ms");
        for (double p : grid.p_mlrs) cols.push_back("p=" + fmt_double(p));
        auto matrix_of = [&](auto get) {
            std::vector<std::vector<double>> m(grid.mu_delays_ms.size());
            for (std::size_t mi = 0; mi < grid.mu_delays_ms.size(); ++mi) {
                m[mi].resize(grid.p_mlrs.size());
                for (std::size_t pi = 0; pi < grid.p_mlrs.size(); ++pi)
                    m[mi][pi] = get(report.cells[mi * grid.p_mlrs.size() + pi]);
            }
            return m;
        };
        write_file(out_dir + "/heatmap_collisions.svg",
                   render_heatmap("Collisions", rows, cols,
                                  matrix_of([](const CellResult& c) {
                                      return double(c.collisions);
                                  })));
        write_file(out_dir + "/heatmap_emergency_brakings.svg",
                   render_heatmap("Emergency brakings", rows, cols,
                                  matrix_of([](const CellResult& c) {
                                      return double(c.emergency_brakings);
                                  })));
        write_file(out_dir + "/heatmap_success_rate.svg",
                   render_heatmap("Merge success rate", rows, cols,
                                  matrix_of([](const CellResult& c) {
                                      return c.merge_success_rate;
                                  })));
        write_file(out_dir + "/heatmap_safety_distance.svg",
                   render_heatmap("Average safety distance (m)", rows, cols,
                                  matrix_of([](const CellResult& c) {
                                      return c.avg_safety_distance;
                                  })));
        write_file(out_dir + "/heatmap_avg_speed.svg",
                   render_heatmap("Average speed (km/h)", rows, cols,
                                  matrix_of([](const CellResult& c) {
                                      return c.avg_speed_kmh;
                                  })));
    }
    return report;
}

void write_episodes_csv(const TrainingLog& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "episode,status,sim_time,ticks,raw_return,train_steps,resid_var,"
         "cum_reward_err,cum_value_err,emergency_onsets\n";
    for (const EpisodeRow& e : log.episodes) {
        f << e.episode << ',' << to_string(e.status) << ',' << fmt_double(e.sim_time)
          << ',' << e.ticks << ',' << fmt_double(e.raw_return) << ','
          << e.train_steps << ',' << fmt_double(e.resid_var) << ','
          << fmt_double(e.cum_reward_err) << ',' << fmt_double(e.cum_value_err)
          << ',' << e.emergency_onsets << '\n';
    }
}

void write_steps_csv(const TrainingLog& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "episode,clock,delta_t,target,advantage,critic_loss,actor_loss\n";
    for (const StepDiag& s : log.steps) {
        f << s.episode << ',' << fmt_double(s.clock) << ',' << fmt_double(s.delta_t)
          << ',' << fmt_double(s.target_mean) << ',' << fmt_double(s.advantage_mean)
          << ',' << fmt_double(s.critic_loss) << ',' << fmt_double(s.actor_loss)
          << '\n';
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s) {
    if (s == "nan") return kNan;
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw std::runtime_error("bad number in CSV: '" + s + "'");
    return v;
}

}  // namespace

TrainingLog read_run_dir(const std::string& run_dir) {
    const RunConfig cfg = load_config(run_dir + "/config.ini");
    TrainingLog log;
    log.label = to_string(cfg.agent);
    log.alpha = cfg.hyper.alpha_reward;

    std::ifstream f(run_dir + "/episodes.csv");
    if (!f) throw std::runtime_error("cannot open " + run_dir + "/episodes.csv");
    std::string line;
    if (!std::getline(f, line))
        throw std::runtime_error("empty episodes.csv in " + run_dir);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> c = split_csv_line(line);
        if (c.size() != 10) throw std::runtime_error("malformed episodes.csv row");
        EpisodeRow e;
        e.episode = int(parse_double(c[0]));
        e.status = status_from_string(c[1]);
        e.sim_time = parse_double(c[2]);
        e.ticks = int(parse_double(c[3]));
        e.raw_return = parse_double(c[4]);
        e.train_steps = int(parse_double(c[5]));
        e.resid_var = parse_double(c[6]);
        e.cum_reward_err = parse_double(c[7]);
        e.cum_value_err = parse_double(c[8]);
        e.emergency_onsets = int(parse_double(c[9]));
        log.episodes.push_back(e);
    }
    return log;
}

void emit_report(const std::vector<TrainingLog>& runs,
                 const std::vector<std::pair<std::string, TestReport>>& grids,
                 const std::string& out_dir) {
    fs::create_directories(out_dir);

    struct Metric {
        std::string name;
        std::string y_label;
        std::function<std::vector<double>(const TrainingLog&)> values;
    };
    const std::vector<Metric> metrics = {
        {"norm_reward", "normalized reward",
         [](const TrainingLog& l) { return l.normalized_returns(); }},
        {"resid_var", "residual variance",
         [](const TrainingLog& l) {
             std::vector<double> v;
             for (const EpisodeRow& e : l.episodes) v.push_back(e.resid_var);
             return v;
         }},
        {"cum_reward_err", "cumulative reward error",
         [](const TrainingLog& l) {
             std::vector<double> v;
             for (const EpisodeRow& e : l.episodes) v.push_back(e.cum_reward_err);
             return v;
         }},
        {"cum_value_err", "cumulative value error",
         [](const TrainingLog& l) {
             std::vector<double> v;
             for (const EpisodeRow& e : l.episodes) v.push_back(e.cum_value_err);
             return v;
         }},
    };

    for (const Metric& metric : metrics) {
        std::vector<Series> series;
        std::size_t max_len = 0;
        for (const TrainingLog& run : runs) {
            Series s;
            s.label = run.label;
            s.y = metric.values(run);
            s.x.resize(s.y.size());
            for (std::size_t i = 0; i < s.y.size(); ++i) s.x[i] = double(i);
            max_len = std::max(max_len, s.y.size());
            series.push_back(std::move(s));
        }

        std::ofstream csv(out_dir + "/" + metric.name + ".csv");
        csv << "episode";
        for (const Series& s : series) csv << ',' << s.label;
        csv << '\n';
        for (std::size_t i = 0; i < max_len; ++i) {
            csv << i;
            for (const Series& s : series) {
                csv << ',';
                if (i < s.y.size()) csv << fmt_double(s.y[i]);
            }
            csv << '\n';
        }

        if (max_len > 0)
            write_file(out_dir + "/" + metric.name + ".svg",
                       render_line_chart(metric.y_label + " over training",
                                         "episode", metric.y_label, series));
    }

    for (const auto& [label, report] : grids) {
        write_file(out_dir + "/grid_" + label + ".csv", report.to_csv());
        write_file(out_dir + "/grid_" + label + ".json", report.to_json() + "\n");
    }
}

void replay_trace(const RunConfig& cfg, const Checkpoint& ckpt,
                  std::uint64_t seed, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);

    ChannelConfig ch_cfg = cfg.channel;
    ch_cfg.seed = derive_seed(seed, 0x4348414eULL);
    V2xChannel channel(ch_cfg);
    channel.set_trace_enabled(true);

    MergeEnv env(cfg.env, ckpt.hyper.alpha_reward);
    env.enable_trace(true);

    Agent agent(ckpt, derive_seed(seed, 0x4556ULL));
    agent.set_training(false);
    agent.set_explore(false);

    EpisodeParams params;
    params.sample_period = ckpt.hyper.sample_period;
    params.build_snapshots = ch_cfg.generation_rules_enabled;
    run_episode(env, channel, agent, derive_seed(seed, 0x455056ULL), params);

    env.write_trace_csv(out_dir + "/episode_trace.csv");
    channel.write_trace_csv(out_dir + "/channel_trace.csv");
    std::ofstream stats(out_dir + "/channel_stats.json");
    stats << channel.stats_json() << '\n';
}

}  // namespace blindac
