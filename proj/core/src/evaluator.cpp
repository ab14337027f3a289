#include "magskin/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "magskin/errors.hpp"
#include "magskin/parallel.hpp"

namespace magskin {

Vec3 predict(const ModelParams& params, const Normalization& stats,
             std::span<const double> delta_b, ModelWorkspace& ws) {
    const auto normalized = apply_normalization(delta_b, stats);
    const Tensor input = to_input(params.spec, normalized);
    const Tensor& out = forward(params, input, ws);
    if (out.shape != std::vector<int>{3}) throw ShapeError("predict: model output must be 3");
    return {out.data[0], out.data[1], out.data[2]};
}

Vec3 predict(const ModelParams& params, const Normalization& stats,
             std::span<const double> delta_b) {
    ModelWorkspace ws(params.spec);
    return predict(params, stats, delta_b, ws);
}

ErrorReport make_report(std::span<const Vec3> predictions,
                        std::span<const ContactLabel> labels) {
    if (predictions.size() != labels.size() || predictions.empty())
        throw ShapeError("make_report: need equal, non-empty prediction and label counts");
    ErrorReport r;
    r.records.reserve(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        SampleError e;
        e.label = labels[i];
        e.prediction = predictions[i];
        e.xy_error_mm =
            std::hypot(predictions[i].x - labels[i].x_mm, predictions[i].y - labels[i].y_mm);
        e.z_error_mm = std::fabs(predictions[i].z - labels[i].z_mm);
        r.records.push_back(e);
    }
    const double n = static_cast<double>(r.records.size());
    for (const auto& e : r.records) {
        r.xy_mean_mm += e.xy_error_mm;
        r.z_mean_mm += e.z_error_mm;
    }
    r.xy_mean_mm /= n;
    r.z_mean_mm /= n;
    double vxy = 0.0, vz = 0.0;
    for (const auto& e : r.records) {
        vxy += (e.xy_error_mm - r.xy_mean_mm) * (e.xy_error_mm - r.xy_mean_mm);
        vz += (e.z_error_mm - r.z_mean_mm) * (e.z_error_mm - r.z_mean_mm);
    }
    r.xy_std_mm = std::sqrt(vxy / n);
    r.z_std_mm = std::sqrt(vz / n);
    return r;
}

ErrorReport evaluate(const ModelParams& params, const Normalization& stats,
                     const Dataset& test, int threads) {
    if (test.samples.empty()) throw ConfigError("evaluate: empty test set");
    if (test.normalization && !(*test.normalization == stats))
        throw ConfigError("evaluate: dataset normalization stats differ from the "
                          "checkpoint stats (mismatched provenance)");

    const std::size_t n = test.samples.size();
    std::vector<Vec3> predictions(n);
    std::vector<ContactLabel> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = test.samples[i].label;

    constexpr std::size_t kChunk = 64;
    const int n_chunks = static_cast<int>((n + kChunk - 1) / kChunk);
    const int n_workers = std::min(resolve_threads(threads), std::max(n_chunks, 1));
    std::vector<ModelWorkspace> ws;
    ws.reserve(static_cast<std::size_t>(n_workers));
    for (int i = 0; i < n_workers; ++i) ws.emplace_back(params.spec);

    parallel_for_chunks(n_chunks, n_workers, [&](int chunk, int worker) {
        const std::size_t begin = static_cast<std::size_t>(chunk) * kChunk;
        const std::size_t end = std::min(n, begin + kChunk);
        for (std::size_t i = begin; i < end; ++i)
            predictions[i] = predict(params, stats, test.samples[i].delta_b, ws[static_cast<std::size_t>(worker)]);
    });
    return make_report(predictions, labels);
}

void error_map_export(const ErrorReport& report, const std::string& path,
                      const std::string& header_comment) {
    struct Cell {
        double x, y, xy_sum = 0.0, z_sum = 0.0;
        int count = 0;
    };
    std::vector<Cell> cells;
    for (const auto& e : report.records) {
        Cell* hit = nullptr;
        for (auto& c : cells)
            if (c.x == e.label.x_mm && c.y == e.label.y_mm) {
                hit = &c;
                break;
            }
        if (!hit) {
            cells.push_back({e.label.x_mm, e.label.y_mm});
            hit = &cells.back();
        }
        hit->xy_sum += e.xy_error_mm;
        hit->z_sum += e.z_error_mm;
        ++hit->count;
    }
    std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
        return a.y != b.y ? a.y < b.y : a.x < b.x;
    });

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw ConfigError("cannot open error map for writing: " + path);
    std::string text;
    if (!header_comment.empty()) text += "# " + header_comment + "\n";
    text += "x_mm,y_mm,xy_err_mm,z_err_mm\n";
    char buf[160];
    for (const auto& c : cells) {
        std::snprintf(buf, sizeof(buf), "%.9e,%.9e,%.9e,%.9e\n", c.x, c.y, c.xy_sum / c.count,
                      c.z_sum / c.count);
        text += buf;
    }
    const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size();
    if (std::fclose(f) != 0 || !ok) throw FormatError("error map write failed: " + path);
}

PlanarEstimate nearest_sensor_baseline(std::span<const double> delta_b,
                                       const SkinConfig& config) {
    const auto sensors = sensor_positions(config);
    if (delta_b.size() != sensors.size() * 3)
        throw ShapeError("nearest_sensor_baseline: channel count does not match sensor grid");
    std::size_t best = 0;
    double best_mag = -1.0;
    for (std::size_t s = 0; s < sensors.size(); ++s) {
        const double x = delta_b[3 * s], y = delta_b[3 * s + 1], z = delta_b[3 * s + 2];
        const double mag = std::sqrt(x * x + y * y + z * z);
        if (mag > best_mag) {
            best_mag = mag;
            best = s;
        }
    }
    return {sensors[best].x, sensors[best].y};
}

ErrorReport evaluate_baseline(const Dataset& test, const SkinConfig& config) {
    if (test.samples.empty()) throw ConfigError("evaluate_baseline: empty test set");
    std::vector<Vec3> predictions(test.samples.size());
    std::vector<ContactLabel> labels(test.samples.size());
    for (std::size_t i = 0; i < test.samples.size(); ++i) {
        const auto est = nearest_sensor_baseline(test.samples[i].delta_b, config);
        predictions[i] = {est.x_mm, est.y_mm, 0.0};
        labels[i] = test.samples[i].label;
    }
    return make_report(predictions, labels);
}

} // namespace magskin
