#include "blindac/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include "blindac/io.hpp"
#include "json.hpp"

namespace blindac {

namespace {

double population_variance(std::span<const double> x) {
    const double n = double(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    return var / n;
}

}  // namespace

double residual_variance(std::span<const double> v_tar,
                         std::span<const double> v_phi) {
    if (v_tar.size() != v_phi.size())
        throw UsageError("residual_variance: length mismatch");
    if (v_tar.size() < 2)
        throw UsageError("residual_variance: needs at least two samples");
    const double var_tar = population_variance(v_tar);
    if (var_tar <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> diff(v_tar.size());
    for (std::size_t i = 0; i < v_tar.size(); ++i) diff[i] = v_tar[i] - v_phi[i];
    return population_variance(diff) / var_tar;
}

std::vector<double> normalized_avg_reward(std::span<const double> episode_returns,
                                          double alpha, int window) {
    if (window < 1) throw UsageError("normalized_avg_reward: window must be >= 1");
    if (alpha <= 0.0) throw UsageError("normalized_avg_reward: alpha must be > 0");
    std::vector<double> out(episode_returns.size());
    double running = 0.0;
    for (std::size_t i = 0; i < episode_returns.size(); ++i) {
        running += episode_returns[i];
        if (i >= std::size_t(window)) running -= episode_returns[i - std::size_t(window)];
        const double count = double(std::min<std::size_t>(i + 1, std::size_t(window)));
        out[i] = running / count / alpha;
    }
    return out;
}

std::vector<double> cumulative_abs_error(std::span<const double> a,
                                         std::span<const double> b) {
    if (a.size() != b.size()) throw UsageError("cumulative_abs_error: length mismatch");
    std::vector<double> out(a.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += std::abs(a[i] - b[i]);
        out[i] = sum;
    }
    return out;
}

void TickSeries::clear() {
    times_.clear();
    rewards_.clear();
    states_.clear();
}

void TickSeries::push(double t, double reward, const StateVector& state) {
    times_.push_back(t);
    rewards_.push_back(reward);
    states_.push_back(state);
}

std::size_t TickSeries::index_at(double t) const {
    if (times_.empty()) throw UsageError("TickSeries: empty");
    const auto it = std::lower_bound(times_.begin(), times_.end(), t);
    if (it == times_.begin()) return 0;
    if (it == times_.end()) return times_.size() - 1;
    const std::size_t hi = std::size_t(it - times_.begin());
    const std::size_t lo = hi - 1;
    return (t - times_[lo] <= times_[hi] - t) ? lo : hi;
}

double TickSeries::reward_at(double t) const { return rewards_[index_at(t)]; }

const StateVector& TickSeries::state_at(double t) const {
    return states_[index_at(t)];
}

double TickSeries::last_time() const {
    if (times_.empty()) throw UsageError("TickSeries: empty");
    return times_.back();
}

double oracle_blind_target(const TickSeries& truth, double gen_prev,
                           double delta_t, double tau, double gamma,
                           double v_next, bool terminal) {
    if (tau <= 0.0 || delta_t < tau)
        throw UsageError("oracle_blind_target: delta_t < tau");
    const int k_count = int(delta_t / tau);
    double sum = 0.0;
    double gamma_pow = 1.0;
    for (int k = 0; k < k_count; ++k) {
        sum += gamma_pow * truth.reward_at(gen_prev + double(k + 1) * tau);
        gamma_pow *= gamma;
    }
    if (!terminal) sum += std::pow(gamma, delta_t / tau) * v_next;
    return sum;
}

std::int64_t TestReport::total_collisions() const {
    std::int64_t n = 0;
    for (const CellResult& c : cells) n += c.collisions;
    return n;
}

std::int64_t TestReport::total_emergency_brakings() const {
    std::int64_t n = 0;
    for (const CellResult& c : cells) n += c.emergency_brakings;
    return n;
}

std::string TestReport::to_csv() const {
    std::ostringstream os;
    os << "mu_delay_ms,p_mlr,episodes,collisions,emergency_brakings,merges,"
          "merge_success_rate,avg_safety_distance_m,avg_speed_kmh\n";
    for (const CellResult& c : cells) {
        os << fmt_double(c.mu_delay_ms) << ',' << fmt_double(c.p_mlr) << ','
           << c.episodes << ',' << c.collisions << ',' << c.emergency_brakings << ','
           << c.merges << ',' << fmt_double(c.merge_success_rate) << ','
           << fmt_double(c.avg_safety_distance) << ','
           << fmt_double(c.avg_speed_kmh) << '\n';
    }
    return os.str();
}

std::string TestReport::to_json() const {
    nlohmann::json j;
    j["grid"]["mu_delays_ms"] = grid.mu_delays_ms;
    j["grid"]["p_mlrs"] = grid.p_mlrs;
    j["totals"]["collisions"] = total_collisions();
    j["totals"]["emergency_brakings"] = total_emergency_brakings();
    nlohmann::json rows = nlohmann::json::array();
    for (const CellResult& c : cells) {
        nlohmann::json r;
        r["mu_delay_ms"] = c.mu_delay_ms;
        r["p_mlr"] = c.p_mlr;
        r["episodes"] = c.episodes;
        r["collisions"] = c.collisions;
        r["emergency_brakings"] = c.emergency_brakings;
        r["merges"] = c.merges;
        r["merge_success_rate"] = c.merge_success_rate;
        if (std::isnan(c.avg_safety_distance))
            r["avg_safety_distance_m"] = nullptr;
        else
            r["avg_safety_distance_m"] = c.avg_safety_distance;
        if (std::isnan(c.avg_speed_kmh))
            r["avg_speed_kmh"] = nullptr;
        else
            r["avg_speed_kmh"] = c.avg_speed_kmh;
        rows.push_back(r);
    }
    j["cells"] = rows;
    return j.dump(2);
}

TestReport evaluate_grid(const ControllerFactory& make_controller,
                         const EnvConfig& env_cfg, double alpha,
                         const ChannelConfig& channel_base, const GridSpec& grid,
                         int episodes_per_cell, std::uint64_t seed,
                         double sample_period, int threads) {
    if (episodes_per_cell < 1)
        throw UsageError("evaluate_grid: episodes_per_cell must be >= 1");
    if (!make_controller) throw UsageError("evaluate_grid: missing controller factory");
    env_cfg.validate();

    struct Cell {
        double mu;
        double p;
        std::size_t index;
    };
    std::vector<Cell> todo;
    for (std::size_t mi = 0; mi < grid.mu_delays_ms.size(); ++mi)
        for (std::size_t pi = 0; pi < grid.p_mlrs.size(); ++pi)
            todo.push_back({grid.mu_delays_ms[mi], grid.p_mlrs[pi],
                            mi * grid.p_mlrs.size() + pi});

    TestReport report;
    report.grid = grid;
    report.cells.resize(todo.size());

    auto eval_cell = [&](const Cell& cell) {
        CellResult res;
        res.mu_delay_ms = cell.mu;
        res.p_mlr = cell.p;
        res.episodes = episodes_per_cell;
        double safety_sum = 0.0;
        std::int64_t safety_n = 0;
        double speed_sum = 0.0;
        std::int64_t speed_n = 0;

        ChannelConfig ch_cfg = channel_base;
        ch_cfg.mu_delay_ms = cell.mu;
        ch_cfg.p_mlr = cell.p;
        ch_cfg.seed = derive_seed(seed, 0x4752ULL, cell.index, 1);
        V2xChannel channel(ch_cfg);
        MergeEnv env(env_cfg, alpha);
        std::unique_ptr<Controller> ctl = make_controller();

        EpisodeParams params;
        params.sample_period = sample_period;
        params.build_snapshots = ch_cfg.generation_rules_enabled;
        for (int e = 0; e < episodes_per_cell; ++e) {
            const std::uint64_t env_seed =
                derive_seed(seed, 0x4750ULL, cell.index, std::uint64_t(e));
            EpisodeResult r = run_episode(env, channel, *ctl, env_seed, params);
            if (r.status == EpisodeStatus::collided) ++res.collisions;
            res.emergency_brakings += r.emergency_onsets;
            if (r.status == EpisodeStatus::merged) {
                ++res.merges;
                if (std::isfinite(r.safety_distance_at_merge)) {
                    safety_sum += r.safety_distance_at_merge;
                    ++safety_n;
                }
            }
            if (r.merge_zone_ticks > 0) {
                speed_sum += r.avg_merge_zone_speed_kmh();
                ++speed_n;
            }
        }
        res.merge_success_rate = double(res.merges) / double(res.episodes);
        res.avg_safety_distance =
            safety_n > 0 ? safety_sum / double(safety_n)
                         : std::numeric_limits<double>::quiet_NaN();
        res.avg_speed_kmh = speed_n > 0
                                ? speed_sum / double(speed_n)
                                : std::numeric_limits<double>::quiet_NaN();
        report.cells[cell.index] = res;
    };

    int n_threads = threads > 0 ? threads : int(std::thread::hardware_concurrency());
    n_threads = std::clamp(n_threads, 1, int(todo.size()));
    if (n_threads <= 1) {
        for (const Cell& c : todo) eval_cell(c);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (int i = 0; i < n_threads; ++i) {
            pool.emplace_back([&] {
                while (true) {
                    const std::size_t k = next.fetch_add(1);
                    if (k >= todo.size()) return;
                    eval_cell(todo[k]);
                }
            });
        }
        for (std::thread& t : pool) t.join();
    }
    return report;
}

}  // namespace blindac
