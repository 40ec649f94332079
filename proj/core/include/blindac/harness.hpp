#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "blindac/agents.hpp"
#include "blindac/config.hpp"
#include "blindac/metrics.hpp"

namespace blindac {

// Raised when training produced non-finite losses or parameters (CLI exit
// code 3).
struct DivergedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EpisodeRow {
    int episode = 0;
    EpisodeStatus status = EpisodeStatus::running;
    double sim_time = 0.0;
    int ticks = 0;
    double raw_return = 0.0;
    int train_steps = 0;
    double resid_var = 0.0;       // NaN when undefined for the episode
    double cum_reward_err = 0.0;  // running totals at episode end
    double cum_value_err = 0.0;
    int emergency_onsets = 0;
};

struct TrainingLog {
    std::string label;
    double alpha = 1.0;
    int window = 100;
    std::vector<EpisodeRow> episodes;
    std::vector<StepDiag> steps;

    std::vector<double> returns() const;
    std::vector<double> normalized_returns() const;  // windowed, /alpha
};

struct RunResult {
    Checkpoint checkpoint;
    TrainingLog log;
    ChannelStats channel_stats;
};

// Trains one arm. When out_dir is non-empty the artifacts (config echo,
// checkpoint, episode/step CSVs, channel statistics) are written there;
// divergence stores the last good checkpoint before throwing.
RunResult run_training(const RunConfig& cfg, const std::string& out_dir = "");

struct TrialRow {
    int trial = 0;
    double alpha = 0.0;
    double tau = 0.0;
    int episodes = 0;
    double score = 0.0;
    bool diverged = false;
};

// Index of the winning trial: highest score, ties broken by the smaller
// training budget. -1 when every trial diverged.
int pick_best_trial(const std::vector<TrialRow>& trials);

struct TuneResult {
    RunConfig best;
    std::vector<TrialRow> trials;
};

// Random search over (alpha, tau, episodes) per cfg.tune; persists the trial
// table to out_dir when given. Throws DivergedError when all trials diverge.
TuneResult tune(const RunConfig& base, const std::string& out_dir = "");

// Frozen-policy grid evaluation; writes report CSV/JSON and heatmap SVGs when
// out_dir is non-empty.
TestReport run_grid_eval(const Checkpoint& ckpt, const RunConfig& cfg,
                         const GridSpec& grid, int episodes_per_cell,
                         std::uint64_t seed, const std::string& out_dir = "");

// Overlay curves and grid heatmaps for any number of runs. Empty logs yield
// headers-only CSVs and no SVG files.
void emit_report(const std::vector<TrainingLog>& runs,
                 const std::vector<std::pair<std::string, TestReport>>& grids,
                 const std::string& out_dir);

// Reads a training run directory (config.ini + episodes.csv) back into a log
// for the report command.
TrainingLog read_run_dir(const std::string& run_dir);

void write_episodes_csv(const TrainingLog& log, const std::string& path);
void write_steps_csv(const TrainingLog& log, const std::string& path);

// One episode re-run with full trace export (episode + channel CSVs).
void replay_trace(const RunConfig& cfg, const Checkpoint& ckpt,
                  std::uint64_t seed, const std::string& out_dir);

}  // namespace blindac
