#pragma once

#include <span>
#include <string>
#include <vector>

#include "magskin/dataset.hpp"
#include "magskin/model.hpp"

namespace magskin {

struct SampleError {
    ContactLabel label;
    Vec3 prediction;
    double xy_error_mm = 0.0;
    double z_error_mm = 0.0;
};

struct ErrorReport {
    std::vector<SampleError> records;
    double xy_mean_mm = 0.0;
    double xy_std_mm = 0.0;
    double z_mean_mm = 0.0;
    double z_std_mm = 0.0;
};

// Normalize, reshape, run the model. The workspace variant is
// allocation-free and suitable for hot loops.
Vec3 predict(const ModelParams& params, const Normalization& stats,
             std::span<const double> delta_b, ModelWorkspace& ws);
Vec3 predict(const ModelParams& params, const Normalization& stats,
             std::span<const double> delta_b);

// xy error is the planar Euclidean distance, z error |dz|; aggregate stds
// are population standard deviations of the per-sample errors.
ErrorReport make_report(std::span<const Vec3> predictions,
                        std::span<const ContactLabel> labels);

// Rejects a test set whose stored normalization differs from `stats`.
ErrorReport evaluate(const ModelParams& params, const Normalization& stats,
                     const Dataset& test, int threads = 1);

// Per-location mean errors, rows sorted by (y, x). header_comment lines (if
// any) are written first, each prefixed with '#'.
void error_map_export(const ErrorReport& report, const std::string& path,
                      const std::string& header_comment = "");

struct PlanarEstimate {
    double x_mm = 0.0;
    double y_mm = 0.0;
};

// Position of the sensor with the largest 3-axis |delta B|, first index on
// ties. Its error floor is set by the sensor pitch; the trained model must
// beat it for the super-resolution claim to hold.
PlanarEstimate nearest_sensor_baseline(std::span<const double> delta_b,
                                       const SkinConfig& config);

// Report for the nearest-sensor estimator; depth is not estimated and is
// reported as 0.
ErrorReport evaluate_baseline(const Dataset& test, const SkinConfig& config);

} // namespace magskin
