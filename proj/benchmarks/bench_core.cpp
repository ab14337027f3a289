#include <benchmark/benchmark.h>

#include "magskin/dataset.hpp"
#include "magskin/evaluator.hpp"
#include "magskin/model.hpp"
#include "magskin/rng.hpp"
#include "magskin/skin_sim.hpp"
#include "magskin/trainer.hpp"

namespace {

using namespace magskin;

void BM_dipole_field(benchmark::State& state) {
    const Vec3 m{0.0, 0.0, 2.5e6};
    const Vec3 src{70.0, 70.0, 0.0};
    const Vec3 q{55.0, 85.0, -10.0};
    for (auto _ : state) {
        benchmark::DoNotOptimize(dipole_field(m, src, q));
    }
}
BENCHMARK(BM_dipole_field);

void BM_read_sensors(benchmark::State& state) {
    const SkinConfig config;
    const auto magnets = deform(config, ContactLabel{70.0, 70.0, 3.0});
    for (auto _ : state) {
        benchmark::DoNotOptimize(read_sensors_noiseless(config, magnets));
    }
}
BENCHMARK(BM_read_sensors);

Tensor random_input(const ModelSpec& spec, std::uint64_t seed) {
    Tensor input({spec.input_h, spec.input_w, spec.input_c});
    Rng rng(seed);
    for (double& v : input.data) v = rng.gauss(0.0, 1.0);
    return input;
}

void BM_forward(benchmark::State& state) {
    const ModelSpec spec;
    const ModelParams params = init_model(spec, 7);
    ModelWorkspace ws(spec);
    const Tensor input = random_input(spec, 11);
    for (auto _ : state) {
        benchmark::DoNotOptimize(forward(params, input, ws));
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_forward);

void BM_loss_and_grads(benchmark::State& state) {
    const ModelSpec spec;
    const ModelParams params = init_model(spec, 7);
    ModelParams grads = zeros_like(spec);
    ModelWorkspace ws(spec);
    const Tensor input = random_input(spec, 11);
    const Vec3 target{70.0, 70.0, 3.0};
    for (auto _ : state) {
        zero_params(grads);
        benchmark::DoNotOptimize(loss_and_grads(params, input, target, grads, ws));
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_loss_and_grads);

void BM_adamw_step(benchmark::State& state) {
    const ModelSpec spec;
    ModelParams params = init_model(spec, 7);
    ModelParams grads = init_model(spec, 8);
    AdamWState opt = make_adamw_state(spec);
    const TrainConfig cfg;
    for (auto _ : state) {
        adamw_step(params, grads, opt, cfg);
        benchmark::DoNotOptimize(params.tensors[0].data[0]);
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_adamw_step);

void BM_train_epoch_256(benchmark::State& state) {
    SkinConfig config;
    config.noise_sigma_uT = 0.5;
    TrajectorySpec traj;
    traj.grid_nx = 4;
    traj.grid_ny = 4;
    traj.pitch_mm = 30.0;
    traj.depth_schedule_mm = {1.0, 2.0, 3.0, 4.0};
    traj.repeats_per_depth = 4; // 256 samples
    const Dataset ds = generate_dataset(config, traj, 3);
    const Normalization stats = fit_normalization(ds);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.threads = static_cast<int>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(train(ds, ds, stats, 7, cfg));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ds.samples.size()));
}
BENCHMARK(BM_train_epoch_256)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
