#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "magskin/vec3.hpp"

namespace magskin {

// Field constant of a point dipole, mu0 / (4 pi), in the project units:
// millimetres for length, microtesla for field, mA*mm^2 for dipole moment.
// The value is exactly 0.1 in these units.
inline constexpr double kFieldConstant = 0.1;

// Regular XY grid. Without an explicit origin offset the grid is centred in
// the skin area, per axis.
struct GridSpec {
    int count_x = 1;
    int count_y = 1;
    double pitch_mm = 1.0;
    std::optional<double> origin_offset_mm;

    double origin_x_mm(double area_x_mm) const {
        if (origin_offset_mm) return *origin_offset_mm;
        return 0.5 * (area_x_mm - (count_x - 1) * pitch_mm);
    }
    double origin_y_mm(double area_y_mm) const {
        if (origin_offset_mm) return *origin_offset_mm;
        return 0.5 * (area_y_mm - (count_y - 1) * pitch_mm);
    }
    int count() const { return count_x * count_y; }
};

struct SkinConfig {
    double area_x_mm = 140.0;
    double area_y_mm = 140.0;

    GridSpec magnet_grid{7, 7, 20.0, std::nullopt};
    GridSpec sensor_grid{4, 4, 30.0, std::nullopt};

    // Sensor plane sits below the magnet rest plane (z = 0).
    double sensor_standoff_mm = 10.0;

    // Magnetisation along +z at rest. 2.5e6 mA*mm^2 gives 500 uT on axis at
    // the 10 mm standoff.
    double dipole_moment_mA_mm2 = 2.5e6;

    // Width of the Gaussian deformation kernel coupling an indentation to
    // the surrounding magnets.
    double kernel_sigma_mm = 15.0;

    double noise_sigma_uT = 0.5;

    // Queries closer than this to a dipole are outside the model's validity.
    double r_min_mm = 1.0;

    // Deepest permitted indentation.
    double z_max_mm = 5.0;

    double sample_rate_hz = 41.7;

    std::uint64_t seed = 42;
};

// Throws ConfigError listing every violated constraint.
void validate(const SkinConfig& config);

// Sensor s = iy * count_x + ix lives at z = -standoff. Magnet rest
// positions use the same index convention at z = 0.
std::vector<Vec3> sensor_positions(const SkinConfig& config);
std::vector<Vec3> magnet_rest_positions(const SkinConfig& config);

// Canonical key=value serialization used for provenance digests. Stable key
// order, locale-independent "%.17g" numbers.
std::string serialize_canonical(const SkinConfig& config);

// FNV-1a 64-bit.
std::uint64_t fnv1a64(const std::string& text);
std::string to_hex16(std::uint64_t value);

} // namespace magskin
