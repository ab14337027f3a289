// Pipeline entry point: dataset generation, training, evaluation, streaming
// inference, gradient checking and the nearest-sensor baseline, all driven by
// one flat key=value config with flag overrides.

#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "magskin/dataset.hpp"
#include "magskin/errors.hpp"
#include "magskin/evaluator.hpp"
#include "magskin/gradcheck.hpp"
#include "magskin/model.hpp"
#include "magskin/run_config.hpp"
#include "magskin/skin_sim.hpp"
#include "magskin/stream.hpp"
#include "magskin/trainer.hpp"

namespace {

using namespace magskin;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::vector<std::string> sets;
    CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* sub, CommonArgs& c) {
    sub->add_option("--config", c.config_path, "flat key=value config file");
    c.seed_opt = sub->add_option("--seed", c.seed,
                                 "run seed; module seeds not set explicitly inherit it");
    sub->add_option("--out", c.out_dir, "directory prefixed to relative paths");
    sub->add_option("--set", c.sets, "override one config key, e.g. --set train.epochs=5")
        ->take_all();
}

RunConfig build_config(const CommonArgs& c) {
    RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
    for (const std::string& s : c.sets) {
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("--set expects key=value, got '" + s + "'");
        }
        apply_override(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    if (c.seed_opt && c.seed_opt->count() > 0) cfg.seed = c.seed;
    if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
    cfg.finalize();
    return cfg;
}

std::string provenance_comment(const RunConfig& cfg) {
    return "config " + run_config_digest_hex(cfg) + " seed " + std::to_string(cfg.seed);
}

std::pair<Dataset, Dataset> load_and_split(const RunConfig& cfg) {
    const Dataset full = load_csv(cfg.paths.dataset);
    return split(full, cfg.split.mode, cfg.split.test_fraction, cfg.effective_split_seed());
}

int cmd_gen_data(const RunConfig& cfg) {
    const Dataset ds = generate_dataset(cfg.skin, cfg.traj, cfg.skin.seed);
    save_csv(ds, cfg.paths.dataset);
    std::printf("samples=%zu digest=%s path=%s\n", ds.samples.size(),
                ds.config_digest.c_str(), cfg.paths.dataset.c_str());
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    auto [train_ds, test_ds] = load_and_split(cfg);
    const Normalization stats = fit_normalization(train_ds);
    std::fprintf(stderr, "train %zu samples, validate %zu\n", train_ds.samples.size(),
                 test_ds.samples.size());
    const TrainResult res =
        train(train_ds, test_ds, stats, cfg.effective_train_seed(), cfg.train, ModelSpec{},
              [&](const EpochStats& e) {
                  std::fprintf(stderr,
                               "epoch %d/%d train_loss=%.6e val_xy=%.4f mm val_z=%.4f mm\n",
                               e.epoch, cfg.train.epochs, e.train_loss, e.val_xy_mean_mm,
                               e.val_z_mean_mm);
                  std::fflush(stderr);
              });
    checkpoint_save(res.best_params, stats.mean, stats.stdev, cfg.paths.checkpoint);
    save_history_csv(res.history, cfg.paths.history, provenance_comment(cfg));
    std::printf("epochs=%d best_epoch=%d best_val_xy_mm=%.9e final_train_loss=%.9e "
                "checkpoint=%s history=%s\n",
                cfg.train.epochs, res.best_epoch, res.best_val_xy_mm,
                res.history.empty() ? 0.0 : res.history.back().train_loss,
                cfg.paths.checkpoint.c_str(), cfg.paths.history.c_str());
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    const Checkpoint ck = checkpoint_load(cfg.paths.checkpoint);
    auto [train_ds, test_ds] = load_and_split(cfg);
    (void)train_ds;
    const Normalization stats{ck.norm_mean, ck.norm_std};
    const ErrorReport rep = evaluate(ck.params, stats, test_ds, cfg.train.threads);
    error_map_export(rep, cfg.paths.error_map, provenance_comment(cfg));
    std::printf("test n=%zu: xy %.3f mm (std %.3f), z %.3f mm (std %.3f)\n",
                rep.records.size(), rep.xy_mean_mm, rep.xy_std_mm, rep.z_mean_mm,
                rep.z_std_mm);
    std::printf("n=%zu\nxy_mean_mm=%.9e\nxy_std_mm=%.9e\nz_mean_mm=%.9e\nz_std_mm=%.9e\n"
                "error_map=%s\n",
                rep.records.size(), rep.xy_mean_mm, rep.xy_std_mm, rep.z_mean_mm,
                rep.z_std_mm, cfg.paths.error_map.c_str());
    return 0;
}

int cmd_infer(const RunConfig& cfg) {
    const Checkpoint ck = checkpoint_load(cfg.paths.checkpoint);
    const Normalization stats{ck.norm_mean, ck.norm_std};

    Dataset replay_ds; // must outlive the source
    std::unique_ptr<FrameSource> source;
    if (cfg.stream.kind == SourceKind::replay) {
        replay_ds = load_csv(cfg.paths.dataset);
        source = std::make_unique<ReplaySource>(replay_ds, cfg.stream.rate_hz,
                                                cfg.stream.loop);
    } else {
        source = std::make_unique<SimTrajectorySource>(cfg.skin, cfg.stream.waypoints,
                                                       cfg.stream.rate_hz,
                                                       cfg.stream.duration_s,
                                                       cfg.effective_stream_seed());
    }

    const SensorFrame baseline = rest_frame(cfg.skin);
    TextSink text(cfg.paths.estimates);
    std::vector<EstimateSink*> sinks{&text};
    std::unique_ptr<SocketSink> socket;
    if (cfg.stream.port > 0) {
        socket = std::make_unique<SocketSink>(cfg.stream.port);
        sinks.push_back(socket.get());
    }
    TeeSink sink(sinks);

    StreamOptions opts;
    opts.paced = cfg.stream.paced;
    opts.duration_s = cfg.stream.duration_s;
    opts.contact_threshold_uT = cfg.effective_threshold_uT();
    const StreamSummary summary = run_stream(*source, ck.params, stats, baseline, sink, opts);
    std::fprintf(stderr, "%s\n", format_summary(summary).c_str());
    return 0;
}

int cmd_gradcheck(int n_seeds, std::uint64_t base_seed) {
    const GradCheckReport rep = run_gradcheck(n_seeds, 1e-5, 1e-6, 1e-9, base_seed);
    std::printf("seeds=%d checked=%lld failures=%d max_rel_err=%.3e worst_ratio=%.3f "
                "elapsed_s=%.2f\n",
                rep.seeds, static_cast<long long>(rep.checked_values), rep.failures,
                rep.max_rel_err, rep.worst_ratio, rep.elapsed_s);
    return rep.pass() ? 0 : 1;
}

int cmd_baseline(const RunConfig& cfg) {
    auto [train_ds, test_ds] = load_and_split(cfg);
    (void)train_ds;
    const ErrorReport rep = evaluate_baseline(test_ds, cfg.skin);
    std::printf("baseline n=%zu: xy %.3f mm (std %.3f)\n", rep.records.size(),
                rep.xy_mean_mm, rep.xy_std_mm);
    std::printf("n=%zu\nxy_mean_mm=%.9e\nxy_std_mm=%.9e\n", rep.records.size(),
                rep.xy_mean_mm, rep.xy_std_mm);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"magnet-based tactile skin: simulate, train, evaluate, stream"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, infer_args, baseline_args;
    int gradcheck_seeds = 100;
    std::uint64_t gradcheck_base = 1234;
    int rc = 0;

    auto* gen = app.add_subcommand("gen-data", "generate and save a labeled dataset");
    add_common(gen, gen_args);
    gen->callback([&] { rc = cmd_gen_data(build_config(gen_args)); });

    auto* tr = app.add_subcommand("train", "split, normalize, train, write checkpoint");
    add_common(tr, train_args);
    tr->callback([&] { rc = cmd_train(build_config(train_args)); });

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(ev, eval_args);
    ev->callback([&] { rc = cmd_eval(build_config(eval_args)); });

    auto* in = app.add_subcommand("infer", "stream frames through the model");
    add_common(in, infer_args);
    in->callback([&] { rc = cmd_infer(build_config(infer_args)); });

    auto* gc = app.add_subcommand("gradcheck",
                                  "finite-difference check on the shrunken model");
    gc->add_option("--seeds", gradcheck_seeds, "number of random trials");
    gc->add_option("--seed", gradcheck_base, "base RNG seed");
    gc->callback([&] { rc = cmd_gradcheck(gradcheck_seeds, gradcheck_base); });

    auto* bl = app.add_subcommand("baseline", "nearest-sensor metrics on the test split");
    add_common(bl, baseline_args);
    bl->callback([&] { rc = cmd_baseline(build_config(baseline_args)); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return rc;
}
