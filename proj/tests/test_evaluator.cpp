#include "magskin/evaluator.hpp"

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "magskin/errors.hpp"
#include "magskin/skin_sim.hpp"

using namespace magskin;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("magskin-evtest-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
    static int counter;
};
int TempDir::counter = 0;

// Two narrow conv layers keep forward passes cheap; the input stays the
// full 4x4x3 sensor frame.
ModelSpec tiny_spec() {
    ModelSpec spec;
    spec.conv_channels = {8, 8};
    spec.fc_dims = {16, 3};
    return spec;
}

Dataset tiny_dataset(std::size_t n) {
    Dataset ds;
    ds.config_digest = "0123456789abcdef";
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        s.label = {5.0 + 3.0 * static_cast<double>(i), 70.0, 2.0};
        s.delta_b.resize(48);
        for (std::size_t c = 0; c < 48; ++c)
            s.delta_b[c] = std::cos(0.21 * static_cast<double>(i * 48 + c)) * 30.0;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("error report aggregates planar and depth errors") {
    const std::vector<Vec3> preds{{3.0, 4.0, 1.0}, {0.0, 0.0, 2.0}};
    const std::vector<ContactLabel> labels{{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}};
    const ErrorReport r = make_report(preds, labels);

    REQUIRE(r.records.size() == 2);
    CHECK(r.records[0].xy_error_mm == 5.0);
    CHECK(r.records[0].z_error_mm == 1.0);
    CHECK(r.records[1].xy_error_mm == 0.0);
    CHECK(r.records[1].z_error_mm == 2.0);

    // Population statistics of {5, 0} and {1, 2}; all exactly representable.
    CHECK(r.xy_mean_mm == 2.5);
    CHECK(r.xy_std_mm == 2.5);
    CHECK(r.z_mean_mm == 1.5);
    CHECK(r.z_std_mm == 0.5);
}

TEST_CASE("error report rejects empty or mismatched inputs") {
    const std::vector<Vec3> preds{{0, 0, 0}};
    const std::vector<ContactLabel> one{{0, 0, 0}};
    const std::vector<ContactLabel> two{{0, 0, 0}, {1, 1, 1}};
    CHECK_THROWS_AS(make_report({}, {}), ShapeError);
    CHECK_THROWS_AS(make_report(preds, two), ShapeError);
    CHECK_THROWS_AS(make_report({}, one), ShapeError);
}

TEST_CASE("predict is normalization plus forward pass") {
    const ModelSpec spec = tiny_spec();
    const ModelParams params = init_model(spec, 3);
    const Dataset ds = tiny_dataset(5);
    const Normalization stats = fit_normalization(ds);

    ModelWorkspace ws(spec);
    for (const auto& s : ds.samples) {
        const Vec3 got = predict(params, stats, s.delta_b, ws);

        const auto normalized = apply_normalization(s.delta_b, stats);
        const Tensor input = to_input(spec, normalized);
        ModelWorkspace ws2(spec);
        const Tensor& out = forward(params, input, ws2);
        CHECK(got.x == out.data[0]);
        CHECK(got.y == out.data[1]);
        CHECK(got.z == out.data[2]);

        // Allocation-free and convenience overloads agree exactly.
        const Vec3 lazy = predict(params, stats, s.delta_b);
        CHECK(got.x == lazy.x);
        CHECK(got.y == lazy.y);
        CHECK(got.z == lazy.z);
    }
}

TEST_CASE("evaluate matches a serial predict loop and is thread invariant") {
    const ModelSpec spec = tiny_spec();
    const ModelParams params = init_model(spec, 11);
    const Dataset ds = tiny_dataset(130); // forces several 64-sample chunks
    const Normalization stats = fit_normalization(ds);

    std::vector<Vec3> preds;
    std::vector<ContactLabel> labels;
    for (const auto& s : ds.samples) {
        preds.push_back(predict(params, stats, s.delta_b));
        labels.push_back(s.label);
    }
    const ErrorReport want = make_report(preds, labels);

    for (int threads : {1, 2, 4}) {
        CAPTURE(threads);
        const ErrorReport got = evaluate(params, stats, ds, threads);
        REQUIRE(got.records.size() == want.records.size());
        CHECK(got.xy_mean_mm == want.xy_mean_mm);
        CHECK(got.xy_std_mm == want.xy_std_mm);
        CHECK(got.z_mean_mm == want.z_mean_mm);
        CHECK(got.z_std_mm == want.z_std_mm);
        for (std::size_t i = 0; i < got.records.size(); ++i) {
            CHECK(got.records[i].prediction.x == want.records[i].prediction.x);
            CHECK(got.records[i].xy_error_mm == want.records[i].xy_error_mm);
        }
    }
}

TEST_CASE("evaluate guards against provenance mismatches") {
    const ModelSpec spec = tiny_spec();
    const ModelParams params = init_model(spec, 1);
    Dataset ds = tiny_dataset(4);
    const Normalization stats = fit_normalization(ds);

    CHECK_THROWS_AS(evaluate(params, stats, Dataset{}, 1), ConfigError);

    // A stored normalization differing from the checkpoint stats means the
    // file was produced under a different train split.
    ds.normalization = stats;
    CHECK_NOTHROW(evaluate(params, stats, ds, 1));
    ds.normalization->mean[0] += 1.0;
    CHECK_THROWS_AS(evaluate(params, stats, ds, 1), ConfigError);
}

TEST_CASE("error map averages repeats per location and sorts rows") {
    // Two repeats at (10, 20), one sample at (5, 30).
    const std::vector<Vec3> preds{{11.0, 20.0, 0.5}, {13.0, 20.0, 1.5}, {5.0, 34.0, 2.0}};
    const std::vector<ContactLabel> labels{{10, 20, 1}, {10, 20, 1}, {5, 30, 2}};
    const ErrorReport r = make_report(preds, labels);

    TempDir dir;
    const std::string path = dir.file("map.csv");
    error_map_export(r, path, "config deadbeef seed 42");

    CHECK(read_text(path) ==
          "# config deadbeef seed 42\n"
          "x_mm,y_mm,xy_err_mm,z_err_mm\n"
          "1.000000000e+01,2.000000000e+01,2.000000000e+00,5.000000000e-01\n"
          "5.000000000e+00,3.000000000e+01,4.000000000e+00,0.000000000e+00\n");

    // Without a comment the header row comes first.
    const std::string bare = dir.file("bare.csv");
    error_map_export(r, bare, "");
    CHECK(read_text(bare).rfind("x_mm,y_mm,", 0) == 0);

    CHECK_THROWS_AS(error_map_export(r, dir.file("no/such/dir.csv"), ""), ConfigError);
}

TEST_CASE("nearest sensor baseline picks the strongest responder") {
    SkinConfig c;
    std::vector<double> delta(48, 0.0);

    // Sensor 5 is (ix=1, iy=1) at (55, 55); give it the largest magnitude.
    delta[3 * 5 + 0] = 3.0;
    delta[3 * 5 + 2] = 4.0;
    delta[3 * 0 + 1] = 4.9;
    const PlanarEstimate est = nearest_sensor_baseline(delta, c);
    CHECK(est.x_mm == 55.0);
    CHECK(est.y_mm == 55.0);

    // Exact tie: the lower sensor index wins.
    std::fill(delta.begin(), delta.end(), 0.0);
    delta[3 * 2 + 0] = 2.0;
    delta[3 * 7 + 0] = 2.0;
    const PlanarEstimate tie = nearest_sensor_baseline(delta, c);
    CHECK(tie.x_mm == 85.0); // sensor 2: ix=2, iy=0
    CHECK(tie.y_mm == 25.0);

    CHECK_THROWS_AS(nearest_sensor_baseline(std::vector<double>(47, 0.0), c), ShapeError);
}

TEST_CASE("baseline locates a contact pressed directly over a sensor") {
    SkinConfig c;
    c.noise_sigma_uT = 0.0;

    const ContactLabel contact{55.0, 85.0, 3.0};
    const SensorFrame frame = read_sensors_noiseless(c, deform(c, contact));
    const auto delta = delta_frame(frame, rest_frame(c));

    const PlanarEstimate est = nearest_sensor_baseline(delta, c);
    CHECK(est.x_mm == 55.0);
    CHECK(est.y_mm == 85.0);
}

TEST_CASE("baseline report uses sensor positions and zero depth") {
    SkinConfig c;
    Dataset ds;
    ds.config_digest = "0123456789abcdef";

    // Strongest channel on sensor 0 (25, 25); label offset by (3, 4, 2).
    Sample s;
    s.label = {28.0, 29.0, 2.0};
    s.delta_b.assign(48, 0.0);
    s.delta_b[0] = 10.0;
    ds.samples.push_back(s);

    const ErrorReport r = evaluate_baseline(ds, c);
    REQUIRE(r.records.size() == 1);
    CHECK(r.records[0].prediction.x == 25.0);
    CHECK(r.records[0].prediction.z == 0.0);
    CHECK(r.records[0].xy_error_mm == 5.0);
    CHECK(r.records[0].z_error_mm == 2.0);

    CHECK_THROWS_AS(evaluate_baseline(Dataset{}, c), ConfigError);
}

TEST_CASE("baseline error on a dense grid reflects the sensor pitch") {
    // With 30 mm sensor pitch the best any snap-to-sensor estimator can do
    // on a uniform contact grid is several millimetres of planar error.
    SkinConfig c;
    c.noise_sigma_uT = 0.0;
    TrajectorySpec t;
    t.grid_nx = 7;
    t.grid_ny = 7;
    t.pitch_mm = 20.0;
    t.depth_schedule_mm = {3.0};
    t.repeats_per_depth = 1;

    const Dataset ds = generate_dataset(c, t, 2);
    const ErrorReport r = evaluate_baseline(ds, c);
    CHECK(r.xy_mean_mm > 3.75);
    CHECK(r.xy_mean_mm < 40.0);
}
