#include "magskin/skin_sim.hpp"

#include <cmath>
#include <cstdio>

#include "magskin/errors.hpp"

namespace magskin {

Vec3 dipole_field(const Vec3& moment, const Vec3& source_pos, const Vec3& query_pos,
                  double r_min_mm) {
    const Vec3 r = query_pos - source_pos;
    const double d = norm(r);
    if (d < r_min_mm) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "dipole query at separation %.6g mm, below validity radius %.6g mm", d,
                      r_min_mm);
        throw SingularityError(buf);
    }
    const Vec3 rhat = r * (1.0 / d);
    const double scale = kFieldConstant / (d * d * d);
    return (rhat * (3.0 * dot(moment, rhat)) - moment) * scale;
}

void validate_contact(const SkinConfig& c, const ContactLabel& contact) {
    char buf[160];
    if (!(contact.x_mm >= 0.0 && contact.x_mm <= c.area_x_mm && contact.y_mm >= 0.0 &&
          contact.y_mm <= c.area_y_mm)) {
        std::snprintf(buf, sizeof(buf),
                      "contact (%.6g, %.6g) outside skin area %g x %g mm", contact.x_mm,
                      contact.y_mm, c.area_x_mm, c.area_y_mm);
        throw ConfigError(buf);
    }
    if (!(contact.z_mm >= 0.0 && contact.z_mm <= c.z_max_mm)) {
        std::snprintf(buf, sizeof(buf), "contact depth %.6g mm outside [0, %g] mm",
                      contact.z_mm, c.z_max_mm);
        throw ConfigError(buf);
    }
}

std::vector<MagnetState> rest_magnets(const SkinConfig& c) {
    std::vector<MagnetState> out;
    const auto positions = magnet_rest_positions(c);
    out.reserve(positions.size());
    for (const auto& p : positions) out.push_back({p, {0.0, 0.0, c.dipole_moment_mA_mm2}});
    return out;
}

std::vector<MagnetState> deform(const SkinConfig& c, const ContactLabel& contact) {
    validate_contact(c, contact);
    auto magnets = rest_magnets(c);
    if (contact.z_mm == 0.0) return magnets;

    const double sigma2 = c.kernel_sigma_mm * c.kernel_sigma_mm;
    const double m = c.dipole_moment_mA_mm2;
    for (auto& magnet : magnets) {
        const double dx = magnet.position_mm.x - contact.x_mm;
        const double dy = magnet.position_mm.y - contact.y_mm;
        const double r = std::hypot(dx, dy);
        const double kernel = std::exp(-0.5 * r * r / sigma2);
        magnet.position_mm.z = -contact.z_mm * kernel;
        const double theta = std::atan(contact.z_mm * (r / sigma2) * kernel);
        if (r > 0.0) {
            const double s = std::sin(theta);
            // Tip leans radially away from the contact point.
            magnet.moment_mA_mm2 = {m * s * (dx / r), m * s * (dy / r), m * std::cos(theta)};
        }
    }
    return magnets;
}

SensorFrame read_sensors_noiseless(const SkinConfig& c,
                                   const std::vector<MagnetState>& magnets) {
    SensorFrame frame;
    const auto sensors = sensor_positions(c);
    frame.b_uT.resize(sensors.size() * 3, 0.0);
    for (std::size_t s = 0; s < sensors.size(); ++s) {
        Vec3 b{};
        for (std::size_t i = 0; i < magnets.size(); ++i) {
            const Vec3 r = sensors[s] - magnets[i].position_mm;
            if (norm(r) < c.r_min_mm) {
                char buf[160];
                std::snprintf(buf, sizeof(buf),
                              "magnet %zu and sensor %zu separated by %.6g mm, below r_min %g mm",
                              i, s, norm(r), c.r_min_mm);
                throw SingularityError(buf);
            }
            b += dipole_field(magnets[i].moment_mA_mm2, magnets[i].position_mm, sensors[s],
                              c.r_min_mm);
        }
        frame.b_uT[3 * s + 0] = b.x;
        frame.b_uT[3 * s + 1] = b.y;
        frame.b_uT[3 * s + 2] = b.z;
    }
    return frame;
}

SensorFrame read_sensors(const SkinConfig& c, const std::vector<MagnetState>& magnets,
                         Rng& rng) {
    SensorFrame frame = read_sensors_noiseless(c, magnets);
    if (c.noise_sigma_uT > 0.0) {
        for (auto& v : frame.b_uT) v += rng.gauss(0.0, c.noise_sigma_uT);
    }
    return frame;
}

SensorFrame rest_frame(const SkinConfig& c) {
    return read_sensors_noiseless(c, rest_magnets(c));
}

std::vector<double> delta_frame(const SensorFrame& frame, const SensorFrame& baseline) {
    if (frame.b_uT.size() != baseline.b_uT.size())
        throw ShapeError("delta_frame: mismatched channel counts");
    std::vector<double> out(frame.b_uT.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = frame.b_uT[i] - baseline.b_uT[i];
    return out;
}

} // namespace magskin
