#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "magskin/dataset.hpp"
#include "magskin/errors.hpp"
#include "magskin/rng.hpp"
#include "magskin/trainer.hpp"

using namespace magskin;

namespace {

// Single-parameter model spec is overkill for optimizer math; drive
// adamw_step directly with hand-built one-element tensors instead.
struct ScalarFixture {
    ModelSpec spec;
    ModelParams params;
    ModelParams grads;
    AdamWState state;

    explicit ScalarFixture(double theta0) {
        spec.input_h = 1;
        spec.input_w = 1;
        spec.input_c = 1;
        spec.conv_channels = {1};
        spec.fc_dims = {1};
        params = zeros_like(spec);
        grads = zeros_like(spec);
        state = make_adamw_state(spec);
        for (auto& t : params.tensors) t.fill(theta0);
    }

    void set_grads(double g) {
        for (auto& t : grads.tensors) t.fill(g);
    }
};

TrainConfig oracle_config() {
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.weight_decay = 0.004;
    cfg.beta1 = 0.9;
    cfg.beta2 = 0.999;
    cfg.eps = 1e-8;
    return cfg;
}

// Tiny synthetic dataset: random delta frames with labels, enough to drive
// train() without the simulator.
Dataset synthetic_dataset(int count, std::uint64_t seed) {
    Dataset ds;
    ds.config_digest = "test";
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        Sample s;
        s.delta_b.resize(48);
        for (auto& v : s.delta_b) v = rng.gauss(0.0, 5.0);
        s.label = {rng.uniform(0.0, 140.0), rng.uniform(0.0, 140.0), rng.uniform(0.5, 5.0)};
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

ModelSpec tiny_spec() {
    ModelSpec spec;
    spec.conv_channels = {8, 8};
    spec.fc_dims = {16, 3};
    return spec;
}

} // namespace

TEST_CASE("two optimizer steps match the frozen oracle") {
    // Reference values computed independently with IEEE doubles:
    // theta0=1, g1=0.1, g2=0.2, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8,
    // weight_decay=0.004.
    ScalarFixture fx(1.0);
    const TrainConfig cfg = oracle_config();

    fx.set_grads(0.1);
    adamw_step(fx.params, fx.grads, fx.state, cfg);
    CHECK(fx.state.step_count == 1);
    for (const auto& t : fx.state.m)
        CHECK(t.data[0] == doctest::Approx(0.01).epsilon(1e-12));
    for (const auto& t : fx.state.v)
        CHECK(t.data[0] == doctest::Approx(1.0e-05).epsilon(1e-12));
    for (const auto& t : fx.params.tensors)
        CHECK(t.data[0] == doctest::Approx(0.9899600009999998).epsilon(1e-12));

    fx.set_grads(0.2);
    adamw_step(fx.params, fx.grads, fx.state, cfg);
    CHECK(fx.state.step_count == 2);
    for (const auto& t : fx.state.m)
        CHECK(t.data[0] == doctest::Approx(0.029).epsilon(1e-12));
    for (const auto& t : fx.state.v)
        CHECK(t.data[0] == doctest::Approx(4.999e-05).epsilon(1e-12));
    for (const auto& t : fx.params.tensors)
        CHECK(t.data[0] == doctest::Approx(0.9802685829520851).epsilon(1e-12));
}

TEST_CASE("zero-gradient step is exactly the pure decay map") {
    ScalarFixture fx(0.7);
    const TrainConfig cfg = oracle_config();
    fx.set_grads(0.0);
    adamw_step(fx.params, fx.grads, fx.state, cfg);
    const double expect = 0.7 * (1.0 - cfg.learning_rate * cfg.weight_decay);
    for (const auto& t : fx.params.tensors) CHECK(t.data[0] == expect);
}

TEST_CASE("decay applies to bias tensors too") {
    ScalarFixture fx(2.0);
    const TrainConfig cfg = oracle_config();
    fx.set_grads(0.0);
    adamw_step(fx.params, fx.grads, fx.state, cfg);
    const double expect = 2.0 * (1.0 - cfg.learning_rate * cfg.weight_decay);
    // Odd parameter indices are biases in the fixed layout.
    CHECK(fx.params.tensors[1].data[0] == expect);
    CHECK(fx.params.tensors[3].data[0] == expect);
}

TEST_CASE("zero weight decay reduces to a plain Adam step") {
    ScalarFixture fx(-0.3);
    TrainConfig cfg = oracle_config();
    cfg.weight_decay = 0.0;
    fx.set_grads(0.5);
    adamw_step(fx.params, fx.grads, fx.state, cfg);
    // Plain Adam from the same start: theta - lr * mhat/(sqrt(vhat)+eps).
    for (const auto& t : fx.params.tensors)
        CHECK(t.data[0] == doctest::Approx(-0.3099999998).epsilon(1e-12));
}

TEST_CASE("non-finite gradients are rejected before any mutation") {
    ScalarFixture fx(1.5);
    const TrainConfig cfg = oracle_config();
    fx.set_grads(0.1);
    adamw_step(fx.params, fx.grads, fx.state, cfg);
    const std::vector<double> theta_before{fx.params.tensors[0].data[0],
                                           fx.params.tensors[1].data[0]};
    const double m_before = fx.state.m[0].data[0];

    fx.set_grads(0.1);
    fx.grads.tensors[2].data[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(adamw_step(fx.params, fx.grads, fx.state, cfg), DivergenceError);
    // The failed step left parameters and state untouched, including the
    // tensors that came before the bad one.
    CHECK(fx.params.tensors[0].data[0] == theta_before[0]);
    CHECK(fx.params.tensors[1].data[0] == theta_before[1]);
    CHECK(fx.state.m[0].data[0] == m_before);
    CHECK(fx.state.step_count == 1);

    fx.set_grads(std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(adamw_step(fx.params, fx.grads, fx.state, cfg), DivergenceError);
}

TEST_CASE("shape mismatches are rejected") {
    ScalarFixture fx(0.0);
    const TrainConfig cfg = oracle_config();
    fx.grads.tensors[0] = Tensor({2, 2});
    CHECK_THROWS_AS(adamw_step(fx.params, fx.grads, fx.state, cfg), ShapeError);
}

TEST_CASE("train config validation lists violated constraints") {
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.beta2 = 1.0;
    cfg.batch_size = 0;
    try {
        validate(cfg);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        CHECK(what.find("learning rate") != std::string::npos);
        CHECK(what.find("beta2") != std::string::npos);
        CHECK(what.find("batch size") != std::string::npos);
    }
    CHECK_NOTHROW(validate(TrainConfig{}));
}

TEST_CASE("mse_loss averages squared error over coordinates") {
    CHECK(mse_loss({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == 0.0);
    CHECK(mse_loss({2.0, 0.0, 0.0}, {0.0, 1.0, 0.0}) ==
          doctest::Approx((4.0 + 1.0) / 3.0).epsilon(1e-15));
}

TEST_CASE("training results do not depend on the thread count") {
    const Dataset train_ds = synthetic_dataset(37, 1);
    const Dataset val_ds = synthetic_dataset(8, 2);
    const Normalization stats = fit_normalization(train_ds);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.threads = 1;
    const ModelSpec spec = tiny_spec();

    const TrainResult a = train(train_ds, val_ds, stats, 5, cfg, spec);
    cfg.threads = 2;
    const TrainResult b = train(train_ds, val_ds, stats, 5, cfg, spec);
    cfg.threads = 4;
    const TrainResult c = train(train_ds, val_ds, stats, 5, cfg, spec);

    REQUIRE(a.params.tensors.size() == b.params.tensors.size());
    for (std::size_t t = 0; t < a.params.tensors.size(); ++t) {
        CHECK(a.params.tensors[t].data == b.params.tensors[t].data);
        CHECK(a.params.tensors[t].data == c.params.tensors[t].data);
    }
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t e = 0; e < a.history.size(); ++e) {
        CHECK(a.history[e].train_loss == b.history[e].train_loss);
        CHECK(a.history[e].val_xy_mean_mm == c.history[e].val_xy_mean_mm);
    }
}

TEST_CASE("training twice with the same config is bit-identical") {
    const Dataset train_ds = synthetic_dataset(24, 3);
    const Dataset val_ds = synthetic_dataset(6, 4);
    const Normalization stats = fit_normalization(train_ds);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    const ModelSpec spec = tiny_spec();

    const TrainResult a = train(train_ds, val_ds, stats, 9, cfg, spec);
    const TrainResult b = train(train_ds, val_ds, stats, 9, cfg, spec);
    for (std::size_t t = 0; t < a.params.tensors.size(); ++t)
        CHECK(a.params.tensors[t].data == b.params.tensors[t].data);
}

TEST_CASE("shuffle changes batch composition but keeps determinism") {
    const Dataset train_ds = synthetic_dataset(24, 5);
    const Dataset val_ds = synthetic_dataset(6, 6);
    const Normalization stats = fit_normalization(train_ds);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    const ModelSpec spec = tiny_spec();

    cfg.shuffle = true;
    const TrainResult with = train(train_ds, val_ds, stats, 9, cfg, spec);
    cfg.shuffle = false;
    const TrainResult without = train(train_ds, val_ds, stats, 9, cfg, spec);
    bool differs = false;
    for (std::size_t t = 0; t < with.params.tensors.size(); ++t)
        differs = differs || with.params.tensors[t].data != without.params.tensors[t].data;
    CHECK(differs);
}

TEST_CASE("best parameters track the lowest validation xy error") {
    const Dataset train_ds = synthetic_dataset(30, 7);
    const Dataset val_ds = synthetic_dataset(10, 8);
    const Normalization stats = fit_normalization(train_ds);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 10;
    const ModelSpec spec = tiny_spec();

    const TrainResult r = train(train_ds, val_ds, stats, 11, cfg, spec);
    REQUIRE(r.history.size() == 4);
    double best = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    for (const auto& e : r.history)
        if (e.val_xy_mean_mm < best) {
            best = e.val_xy_mean_mm;
            best_epoch = e.epoch;
        }
    CHECK(r.best_epoch == best_epoch);
    CHECK(r.best_val_xy_mm == best);
}

TEST_CASE("empty datasets are rejected") {
    const Dataset empty;
    const Dataset ok = synthetic_dataset(4, 9);
    const Normalization stats = fit_normalization(ok);
    CHECK_THROWS_AS(train(empty, ok, stats, 1, TrainConfig{}, tiny_spec()), ConfigError);
    CHECK_THROWS_AS(train(ok, empty, stats, 1, TrainConfig{}, tiny_spec()), ConfigError);
}

TEST_CASE("history csv has a header row and formatted values") {
    const std::vector<EpochStats> history{{1, 0.5, 12.25, 1.5}, {2, 0.25, 6.125, 0.75}};
    const std::string path =
        (std::filesystem::temp_directory_path() / "magskin-history-test.csv").string();
    save_history_csv(history, path, "config deadbeef seed 42");
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    CHECK(line == "# config deadbeef seed 42");
    std::getline(f, line);
    CHECK(line == "epoch,train_loss,val_xy_mean_mm,val_z_mean_mm");
    std::getline(f, line);
    CHECK(line == "1,5.000000000e-01,1.225000000e+01,1.500000000e+00");
    std::getline(f, line);
    CHECK(line == "2,2.500000000e-01,6.125000000e+00,7.500000000e-01");
    CHECK(!std::getline(f, line));
    std::filesystem::remove(path);
}
