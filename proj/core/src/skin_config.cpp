#include "magskin/skin_config.hpp"

#include <cstdio>
#include <string>

#include "magskin/errors.hpp"

namespace magskin {

namespace {

void append_kv(std::string& out, const char* key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    out += key;
    out += '=';
    out += buf;
    out += '\n';
}

void append_kv(std::string& out, const char* key, long long value) {
    out += key;
    out += '=';
    out += std::to_string(value);
    out += '\n';
}

void append_grid(std::string& out, const char* prefix, const GridSpec& g,
                 double area_x, double area_y) {
    std::string p(prefix);
    append_kv(out, (p + ".count_x").c_str(), static_cast<long long>(g.count_x));
    append_kv(out, (p + ".count_y").c_str(), static_cast<long long>(g.count_y));
    append_kv(out, (p + ".pitch_mm").c_str(), g.pitch_mm);
    // Digest what the geometry resolves to, so "auto" and an explicit offset
    // with the same placement hash identically.
    append_kv(out, (p + ".origin_x_mm").c_str(), g.origin_x_mm(area_x));
    append_kv(out, (p + ".origin_y_mm").c_str(), g.origin_y_mm(area_y));
}

void require(std::string& problems, bool ok, const char* message) {
    if (ok) return;
    if (!problems.empty()) problems += "; ";
    problems += message;
}

std::vector<Vec3> grid_positions(const GridSpec& g, double area_x, double area_y, double z) {
    std::vector<Vec3> out;
    out.reserve(static_cast<std::size_t>(g.count()));
    const double x0 = g.origin_x_mm(area_x);
    const double y0 = g.origin_y_mm(area_y);
    for (int iy = 0; iy < g.count_y; ++iy)
        for (int ix = 0; ix < g.count_x; ++ix)
            out.push_back({x0 + ix * g.pitch_mm, y0 + iy * g.pitch_mm, z});
    return out;
}

bool grid_inside(const GridSpec& g, double area_x, double area_y) {
    const double x0 = g.origin_x_mm(area_x);
    const double y0 = g.origin_y_mm(area_y);
    const double x1 = x0 + (g.count_x - 1) * g.pitch_mm;
    const double y1 = y0 + (g.count_y - 1) * g.pitch_mm;
    return x0 >= 0.0 && y0 >= 0.0 && x1 <= area_x && y1 <= area_y;
}

} // namespace

void validate(const SkinConfig& c) {
    std::string problems;
    require(problems, c.area_x_mm > 0.0 && c.area_y_mm > 0.0, "area extents must be positive");
    require(problems, c.magnet_grid.count_x >= 1 && c.magnet_grid.count_y >= 1,
            "magnet grid counts must be at least 1");
    require(problems, c.sensor_grid.count_x >= 1 && c.sensor_grid.count_y >= 1,
            "sensor grid counts must be at least 1");
    require(problems, c.magnet_grid.pitch_mm > 0.0, "magnet pitch must be positive");
    require(problems, c.sensor_grid.pitch_mm > 0.0, "sensor pitch must be positive");
    require(problems, grid_inside(c.magnet_grid, c.area_x_mm, c.area_y_mm),
            "magnet grid extends outside the skin area");
    require(problems, grid_inside(c.sensor_grid, c.area_x_mm, c.area_y_mm),
            "sensor grid extends outside the skin area");
    require(problems, c.sensor_standoff_mm > 0.0, "sensor standoff must be positive");
    require(problems, c.dipole_moment_mA_mm2 > 0.0, "dipole moment must be positive");
    require(problems, c.kernel_sigma_mm > 0.0, "kernel sigma must be positive");
    require(problems, c.noise_sigma_uT >= 0.0, "noise sigma must be non-negative");
    require(problems, c.r_min_mm > 0.0, "r_min must be positive");
    require(problems, c.z_max_mm > 0.0, "z_max must be positive");
    require(problems, c.sample_rate_hz > 0.0, "sample rate must be positive");
    require(problems, c.sensor_standoff_mm >= c.r_min_mm,
            "sensor standoff must not be below r_min");
    if (!problems.empty()) throw ConfigError("invalid skin config: " + problems);
}

std::vector<Vec3> sensor_positions(const SkinConfig& c) {
    return grid_positions(c.sensor_grid, c.area_x_mm, c.area_y_mm, -c.sensor_standoff_mm);
}

std::vector<Vec3> magnet_rest_positions(const SkinConfig& c) {
    return grid_positions(c.magnet_grid, c.area_x_mm, c.area_y_mm, 0.0);
}

std::string serialize_canonical(const SkinConfig& c) {
    std::string out;
    append_kv(out, "skin.area_x_mm", c.area_x_mm);
    append_kv(out, "skin.area_y_mm", c.area_y_mm);
    append_grid(out, "skin.magnet_grid", c.magnet_grid, c.area_x_mm, c.area_y_mm);
    append_grid(out, "skin.sensor_grid", c.sensor_grid, c.area_x_mm, c.area_y_mm);
    append_kv(out, "skin.sensor_standoff_mm", c.sensor_standoff_mm);
    append_kv(out, "skin.dipole_moment_mA_mm2", c.dipole_moment_mA_mm2);
    append_kv(out, "skin.kernel_sigma_mm", c.kernel_sigma_mm);
    append_kv(out, "skin.noise_sigma_uT", c.noise_sigma_uT);
    append_kv(out, "skin.r_min_mm", c.r_min_mm);
    append_kv(out, "skin.z_max_mm", c.z_max_mm);
    append_kv(out, "skin.sample_rate_hz", c.sample_rate_hz);
    append_kv(out, "skin.seed", static_cast<long long>(c.seed));
    return out;
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string to_hex16(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

} // namespace magskin
