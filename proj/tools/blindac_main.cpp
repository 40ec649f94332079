// blindac: train and evaluate merging-control agents over a lossy, delayed
// V2X channel.
//
//   blindac train       --config cfg.ini --out dir [--seed N] [--agent kind]
//   blindac tune        --config cfg.ini --out dir [--trials N]
//   blindac eval-grid   --config cfg.ini --checkpoint ckpt --out dir
//   blindac report      --run dirA [--run dirB ...] --out dir
//   blindac replay-trace --config cfg.ini --checkpoint ckpt --out dir
//
// Exit codes: 0 success, 2 configuration error, 3 training diverged.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "blindac/config.hpp"
#include "blindac/harness.hpp"

using namespace blindac;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string agent_override;
};

RunConfig load_effective(const CommonOpts& o) {
    RunConfig cfg = load_config(o.config_path);
    if (o.seed_set) cfg.seed = o.seed;
    if (!o.agent_override.empty())
        cfg.agent = agent_kind_from_string(o.agent_override);
    if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"blind actor-critic training and evaluation harness"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string checkpoint_path;
    int trials = 0;
    int episodes_per_cell = 0;
    std::vector<std::string> run_dirs;

    auto add_common = [&](CLI::App* cmd, bool need_config) {
        auto* c = cmd->add_option("--config", opts.config_path, "run configuration file");
        if (need_config) c->required();
        cmd->add_option("--out", opts.out_dir, "output directory");
        cmd->add_option("--seed", opts.seed, "master seed override")
            ->each([&](const std::string&) { opts.seed_set = true; });
        cmd->add_option("--agent", opts.agent_override,
                        "agent kind override (classic_clean, classic_aperiodic, "
                        "motion_model, blind)");
    };

    CLI::App* train = app.add_subcommand("train", "train one agent arm");
    add_common(train, true);

    CLI::App* tune_cmd =
        app.add_subcommand("tune", "random search over alpha, tau and episodes");
    add_common(tune_cmd, true);
    tune_cmd->add_option("--trials", trials, "number of trials override");

    CLI::App* eval = app.add_subcommand("eval-grid",
                                        "reliability-grid evaluation of a checkpoint");
    add_common(eval, true);
    eval->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
    eval->add_option("--episodes-per-cell", episodes_per_cell,
                     "episodes per grid cell override");

    CLI::App* report = app.add_subcommand("report",
                                          "render overlay curves from run directories");
    report->add_option("--run", run_dirs, "training run directory (repeatable)")
        ->required();
    report->add_option("--out", opts.out_dir, "output directory")->required();

    CLI::App* replay = app.add_subcommand("replay-trace",
                                          "re-run one episode and export traces");
    add_common(replay, true);
    replay->add_option("--checkpoint", checkpoint_path, "trained checkpoint")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            const RunConfig cfg = load_effective(opts);
            const RunResult res = run_training(cfg, cfg.out_dir);
            std::printf("trained %s: %d episodes, %d train steps -> %s\n",
                        to_string(cfg.agent), int(res.log.episodes.size()),
                        res.log.steps.empty() ? 0 : res.log.steps.back().episode + 1,
                        cfg.out_dir.c_str());
            emit_report({res.log}, {}, cfg.out_dir + "/report");
        } else if (tune_cmd->parsed()) {
            RunConfig cfg = load_effective(opts);
            if (trials > 0) cfg.tune.trials = trials;
            const TuneResult res = tune(cfg, cfg.out_dir);
            std::printf("best trial: alpha=%g tau=%g episodes=%d\n",
                        res.best.hyper.alpha_reward, res.best.hyper.tau,
                        res.best.episodes);
        } else if (eval->parsed()) {
            const RunConfig cfg = load_effective(opts);
            const Checkpoint ckpt = load_checkpoint(checkpoint_path);
            const int n = episodes_per_cell > 0 ? episodes_per_cell
                                                : cfg.eval_episodes_per_cell;
            const TestReport rep = run_grid_eval(ckpt, cfg, GridSpec{}, n, cfg.seed,
                                                 cfg.out_dir);
            std::printf("grid: %zu cells, %lld collisions, %lld emergency brakings\n",
                        rep.cells.size(),
                        static_cast<long long>(rep.total_collisions()),
                        static_cast<long long>(rep.total_emergency_brakings()));
        } else if (report->parsed()) {
            std::vector<TrainingLog> logs;
            for (const std::string& dir : run_dirs) logs.push_back(read_run_dir(dir));
            emit_report(logs, {}, opts.out_dir);
            std::printf("report written to %s\n", opts.out_dir.c_str());
        } else if (replay->parsed()) {
            const RunConfig cfg = load_effective(opts);
            const Checkpoint ckpt = load_checkpoint(checkpoint_path);
            replay_trace(cfg, ckpt, cfg.seed, cfg.out_dir);
            std::printf("traces written to %s\n", cfg.out_dir.c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const DivergedError& e) {
        std::fprintf(stderr, "diverged: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
