#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "blindac/agents.hpp"
#include "blindac/channel.hpp"
#include "blindac/merge_env.hpp"

namespace blindac {

// Var(v_tar - v_phi) / Var(v_tar), population (1/N) variances. NaN when the
// target variance vanishes (undefined signal, excluded from plots).
double residual_variance(std::span<const double> v_tar,
                         std::span<const double> v_phi);

// Sliding-window mean of per-episode returns divided by alpha; partial
// windows at the start use the mean of the available points.
std::vector<double> normalized_avg_reward(std::span<const double> episode_returns,
                                          double alpha, int window = 100);

// Prefix sums of |a_i - b_i|.
std::vector<double> cumulative_abs_error(std::span<const double> a,
                                         std::span<const double> b);

// Ground-truth tick series kept by the harness for approximation-error
// accounting.
class TickSeries {
public:
    void clear();
    void push(double t, double reward, const StateVector& state);
    std::size_t size() const { return times_.size(); }
    bool empty() const { return times_.empty(); }
    // Value at the tick nearest to t (clamped to the recorded range).
    double reward_at(double t) const;
    const StateVector& state_at(double t) const;
    double last_time() const;

private:
    std::size_t index_at(double t) const;
    std::vector<double> times_;
    std::vector<double> rewards_;
    std::vector<StateVector> states_;
};

// The target an agent *should* have formed over [gen_prev, gen_prev+delta_t]
// had it seen the full ground-truth stream: interpolated rewards are replaced
// by the true tick rewards at the fictive instants, the bootstrap tail is
// unchanged.
double oracle_blind_target(const TickSeries& truth, double gen_prev,
                           double delta_t, double tau, double gamma,
                           double v_next, bool terminal);

struct GridSpec {
    std::vector<double> mu_delays_ms = {10, 30, 50, 70, 90};
    std::vector<double> p_mlrs = {0.1, 0.3, 0.5, 0.7, 0.9};
};

struct CellResult {
    double mu_delay_ms = 0.0;
    double p_mlr = 0.0;
    std::int64_t episodes = 0;
    std::int64_t collisions = 0;
    std::int64_t emergency_brakings = 0;
    std::int64_t merges = 0;
    double avg_safety_distance = 0.0;  // m, at merge completion, merged episodes
    double avg_speed_kmh = 0.0;        // over the merge-zone traversal
    double merge_success_rate = 0.0;
};

struct TestReport {
    GridSpec grid;
    std::vector<CellResult> cells;  // row-major over (mu, p)

    std::int64_t total_collisions() const;
    std::int64_t total_emergency_brakings() const;
    std::string to_csv() const;
    std::string to_json() const;
};

using ControllerFactory = std::function<std::unique_ptr<Controller>()>;

// Frozen-policy evaluation over the reliability grid. Each cell runs
// episodes_per_cell episodes with per-cell derived env/channel seeds; cells
// are independent and may be evaluated on worker threads.
TestReport evaluate_grid(const ControllerFactory& make_controller,
                         const EnvConfig& env_cfg, double alpha,
                         const ChannelConfig& channel_base, const GridSpec& grid,
                         int episodes_per_cell, std::uint64_t seed,
                         double sample_period, int threads = 0);

}  // namespace blindac
