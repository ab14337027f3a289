#pragma once

#include <vector>

#include "magskin/rng.hpp"
#include "magskin/skin_config.hpp"
#include "magskin/vec3.hpp"

namespace magskin {

struct MagnetState {
    Vec3 position_mm;
    Vec3 moment_mA_mm2;
};

// z_mm is the indentation depth; 0 means no contact.
struct ContactLabel {
    double x_mm = 0.0;
    double y_mm = 0.0;
    double z_mm = 0.0;
};

// 3 channels per sensor: channel k = 3*s + a with sensor s row-major over
// the grid and axis a in {0:x, 1:y, 2:z}.
struct SensorFrame {
    double t_ms = 0.0;
    std::vector<double> b_uT;
};

// Point-dipole field at query_pos, in uT. Throws SingularityError when the
// separation is below r_min_mm.
Vec3 dipole_field(const Vec3& moment_mA_mm2, const Vec3& source_pos_mm,
                  const Vec3& query_pos_mm, double r_min_mm = 1.0);

// Throws ConfigError when the label violates the skin bounds or depth limit.
void validate_contact(const SkinConfig& config, const ContactLabel& contact);

std::vector<MagnetState> rest_magnets(const SkinConfig& config);

// Gaussian indentation response: magnet i at in-plane distance r from the
// contact sinks by z * exp(-r^2 / (2 sigma^2)) and its moment tilts off +z
// by atan(z * r / sigma^2 * exp(-r^2 / (2 sigma^2))), tip leaning radially
// away from the contact. In-plane positions never move.
std::vector<MagnetState> deform(const SkinConfig& config, const ContactLabel& contact);

// Superposition of all magnet dipole fields at each sensor, plus Gaussian
// channel noise. Zero noise sigma consumes no randomness.
SensorFrame read_sensors(const SkinConfig& config, const std::vector<MagnetState>& magnets,
                         Rng& rng);
SensorFrame read_sensors_noiseless(const SkinConfig& config,
                                   const std::vector<MagnetState>& magnets);

// Noiseless frame of the rest configuration; the reference that delta
// frames subtract.
SensorFrame rest_frame(const SkinConfig& config);

// Elementwise frame - baseline.
std::vector<double> delta_frame(const SensorFrame& frame, const SensorFrame& baseline);

} // namespace magskin
