#include "magskin/run_config.hpp"

#include <cctype>
#include <cerrno>
#include <climits>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "magskin/errors.hpp"

namespace magskin {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

double parse_f64(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (v.empty()) throw ConfigError("empty value for " + key);
    errno = 0;
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(x)) {
        throw ConfigError("cannot parse number for " + key + ": '" + v + "'");
    }
    return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (v.empty() || v[0] == '-' || v[0] == '+') {
        throw ConfigError("cannot parse unsigned integer for " + key + ": '" + v + "'");
    }
    errno = 0;
    char* end = nullptr;
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (end != v.c_str() + v.size() || errno == ERANGE) {
        throw ConfigError("cannot parse unsigned integer for " + key + ": '" + v + "'");
    }
    return x;
}

int parse_int(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    errno = 0;
    char* end = nullptr;
    const long x = std::strtol(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || x < INT_MIN ||
        x > INT_MAX) {
        throw ConfigError("cannot parse integer for " + key + ": '" + v + "'");
    }
    return static_cast<int>(x);
}

bool parse_bool(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("cannot parse boolean for " + key + ": '" + v + "' (use true/false)");
}

std::vector<double> parse_f64_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string piece;
    while (std::getline(ss, piece, ',')) {
        out.push_back(parse_f64(key, piece));
    }
    if (out.empty()) throw ConfigError("empty list for " + key);
    return out;
}

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string grid_origin_string(const GridSpec& g) {
    return g.origin_offset_mm ? fmt17(*g.origin_offset_mm) : std::string("auto");
}

void set_grid_origin(GridSpec& g, const std::string& key, const std::string& value) {
    if (trim(value) == "auto") {
        g.origin_offset_mm.reset();
    } else {
        g.origin_offset_mm = parse_f64(key, value);
    }
}

std::string join_path(const std::string& dir, const std::string& path) {
    if (path == "-" || path.empty()) return path;
    if (path.front() == '/') return path;
    if (dir.empty() || dir == ".") return path;
    if (dir.back() == '/') return dir + path;
    return dir + "/" + path;
}

} // namespace

SourceKind source_kind_from_string(const std::string& s) {
    if (s == "replay") return SourceKind::replay;
    if (s == "simulated") return SourceKind::simulated;
    throw ConfigError("unknown stream source kind: '" + s + "' (use replay or simulated)");
}

std::string source_kind_to_string(SourceKind k) {
    return k == SourceKind::replay ? "replay" : "simulated";
}

std::vector<Waypoint> parse_waypoints(const std::string& text) {
    std::vector<Waypoint> out;
    std::stringstream ss(text);
    std::string piece;
    while (std::getline(ss, piece, ';')) {
        piece = trim(piece);
        if (piece.empty()) continue;
        double f[4];
        std::stringstream ps(piece);
        std::string field;
        int i = 0;
        while (std::getline(ps, field, ':')) {
            if (i >= 4) throw ConfigError("waypoint '" + piece + "' has too many fields");
            f[i++] = parse_f64("stream.waypoints", field);
        }
        if (i != 4) {
            throw ConfigError("waypoint '" + piece + "' must be t_ms:x_mm:y_mm:z_mm");
        }
        out.push_back(Waypoint{f[0], f[1], f[2], f[3]});
    }
    if (out.empty()) throw ConfigError("stream.waypoints is empty");
    return out;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "run.seed") cfg.seed = parse_u64(key, value);
    else if (key == "out.dir") cfg.out_dir = trim(value);

    else if (key == "skin.area_x_mm") cfg.skin.area_x_mm = parse_f64(key, value);
    else if (key == "skin.area_y_mm") cfg.skin.area_y_mm = parse_f64(key, value);
    else if (key == "skin.magnet_count_x") cfg.skin.magnet_grid.count_x = parse_int(key, value);
    else if (key == "skin.magnet_count_y") cfg.skin.magnet_grid.count_y = parse_int(key, value);
    else if (key == "skin.magnet_pitch_mm") cfg.skin.magnet_grid.pitch_mm = parse_f64(key, value);
    else if (key == "skin.magnet_origin_mm") set_grid_origin(cfg.skin.magnet_grid, key, value);
    else if (key == "skin.sensor_count_x") cfg.skin.sensor_grid.count_x = parse_int(key, value);
    else if (key == "skin.sensor_count_y") cfg.skin.sensor_grid.count_y = parse_int(key, value);
    else if (key == "skin.sensor_pitch_mm") cfg.skin.sensor_grid.pitch_mm = parse_f64(key, value);
    else if (key == "skin.sensor_origin_mm") set_grid_origin(cfg.skin.sensor_grid, key, value);
    else if (key == "skin.sensor_standoff_mm") cfg.skin.sensor_standoff_mm = parse_f64(key, value);
    else if (key == "skin.dipole_moment") cfg.skin.dipole_moment_mA_mm2 = parse_f64(key, value);
    else if (key == "skin.kernel_sigma_mm") cfg.skin.kernel_sigma_mm = parse_f64(key, value);
    else if (key == "skin.noise_sigma_uT") cfg.skin.noise_sigma_uT = parse_f64(key, value);
    else if (key == "skin.r_min_mm") cfg.skin.r_min_mm = parse_f64(key, value);
    else if (key == "skin.z_max_mm") cfg.skin.z_max_mm = parse_f64(key, value);
    else if (key == "skin.sample_rate_hz") cfg.skin.sample_rate_hz = parse_f64(key, value);
    else if (key == "skin.seed") cfg.skin_seed = parse_u64(key, value);

    else if (key == "traj.count_x") cfg.traj.grid_nx = parse_int(key, value);
    else if (key == "traj.count_y") cfg.traj.grid_ny = parse_int(key, value);
    else if (key == "traj.pitch_mm") cfg.traj.pitch_mm = parse_f64(key, value);
    else if (key == "traj.depths_mm") cfg.traj.depth_schedule_mm = parse_f64_list(key, value);
    else if (key == "traj.repeats") cfg.traj.repeats_per_depth = parse_int(key, value);

    else if (key == "train.lr") cfg.train.learning_rate = parse_f64(key, value);
    else if (key == "train.weight_decay") cfg.train.weight_decay = parse_f64(key, value);
    else if (key == "train.beta1") cfg.train.beta1 = parse_f64(key, value);
    else if (key == "train.beta2") cfg.train.beta2 = parse_f64(key, value);
    else if (key == "train.eps") cfg.train.eps = parse_f64(key, value);
    else if (key == "train.batch_size") cfg.train.batch_size = parse_int(key, value);
    else if (key == "train.epochs") cfg.train.epochs = parse_int(key, value);
    else if (key == "train.shuffle") cfg.train.shuffle = parse_bool(key, value);
    else if (key == "train.threads") cfg.train.threads = parse_int(key, value);
    else if (key == "train.seed") cfg.train_seed = parse_u64(key, value);

    else if (key == "split.mode") cfg.split.mode = split_mode_from_string(trim(value));
    else if (key == "split.test_fraction") cfg.split.test_fraction = parse_f64(key, value);
    else if (key == "split.seed") cfg.split_seed = parse_u64(key, value);

    else if (key == "stream.kind") cfg.stream.kind = source_kind_from_string(trim(value));
    else if (key == "stream.rate_hz") cfg.stream.rate_hz = parse_f64(key, value);
    else if (key == "stream.duration_s") cfg.stream.duration_s = parse_f64(key, value);
    else if (key == "stream.paced") cfg.stream.paced = parse_bool(key, value);
    else if (key == "stream.loop") cfg.stream.loop = parse_bool(key, value);
    else if (key == "stream.threshold_uT") cfg.stream.threshold_uT = parse_f64(key, value);
    else if (key == "stream.waypoints") cfg.stream.waypoints = parse_waypoints(value);
    else if (key == "stream.port") cfg.stream.port = parse_int(key, value);
    else if (key == "stream.seed") cfg.stream_seed = parse_u64(key, value);

    else if (key == "paths.dataset") cfg.paths.dataset = trim(value);
    else if (key == "paths.checkpoint") cfg.paths.checkpoint = trim(value);
    else if (key == "paths.history") cfg.paths.history = trim(value);
    else if (key == "paths.error_map") cfg.paths.error_map = trim(value);
    else if (key == "paths.estimates") cfg.paths.estimates = trim(value);

    else throw ConfigError("unknown config key: '" + key + "'");
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    RunConfig cfg;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
        }
        if (!seen.insert(key).second) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": duplicate key '" +
                              key + "'");
        }
        try {
            apply_override(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

void RunConfig::finalize() {
    skin.seed = effective_skin_seed();
    train.seed = effective_train_seed();
    paths.dataset = join_path(out_dir, paths.dataset);
    paths.checkpoint = join_path(out_dir, paths.checkpoint);
    paths.history = join_path(out_dir, paths.history);
    paths.error_map = join_path(out_dir, paths.error_map);
    if (paths.estimates != "-") paths.estimates = join_path(out_dir, paths.estimates);
}

std::string serialize_run_config(const RunConfig& cfg) {
    std::string s;
    auto kv = [&s](const std::string& k, const std::string& v) {
        s += k;
        s += '=';
        s += v;
        s += '\n';
    };
    kv("run.seed", std::to_string(cfg.seed));

    kv("skin.area_x_mm", fmt17(cfg.skin.area_x_mm));
    kv("skin.area_y_mm", fmt17(cfg.skin.area_y_mm));
    kv("skin.magnet_count_x", std::to_string(cfg.skin.magnet_grid.count_x));
    kv("skin.magnet_count_y", std::to_string(cfg.skin.magnet_grid.count_y));
    kv("skin.magnet_pitch_mm", fmt17(cfg.skin.magnet_grid.pitch_mm));
    kv("skin.magnet_origin_mm", grid_origin_string(cfg.skin.magnet_grid));
    kv("skin.sensor_count_x", std::to_string(cfg.skin.sensor_grid.count_x));
    kv("skin.sensor_count_y", std::to_string(cfg.skin.sensor_grid.count_y));
    kv("skin.sensor_pitch_mm", fmt17(cfg.skin.sensor_grid.pitch_mm));
    kv("skin.sensor_origin_mm", grid_origin_string(cfg.skin.sensor_grid));
    kv("skin.sensor_standoff_mm", fmt17(cfg.skin.sensor_standoff_mm));
    kv("skin.dipole_moment", fmt17(cfg.skin.dipole_moment_mA_mm2));
    kv("skin.kernel_sigma_mm", fmt17(cfg.skin.kernel_sigma_mm));
    kv("skin.noise_sigma_uT", fmt17(cfg.skin.noise_sigma_uT));
    kv("skin.r_min_mm", fmt17(cfg.skin.r_min_mm));
    kv("skin.z_max_mm", fmt17(cfg.skin.z_max_mm));
    kv("skin.sample_rate_hz", fmt17(cfg.skin.sample_rate_hz));
    kv("skin.seed", std::to_string(cfg.effective_skin_seed()));

    kv("traj.count_x", std::to_string(cfg.traj.grid_nx));
    kv("traj.count_y", std::to_string(cfg.traj.grid_ny));
    kv("traj.pitch_mm", fmt17(cfg.traj.pitch_mm));
    {
        std::string depths;
        for (std::size_t i = 0; i < cfg.traj.depth_schedule_mm.size(); ++i) {
            if (i) depths += ',';
            depths += fmt17(cfg.traj.depth_schedule_mm[i]);
        }
        kv("traj.depths_mm", depths);
    }
    kv("traj.repeats", std::to_string(cfg.traj.repeats_per_depth));

    kv("train.lr", fmt17(cfg.train.learning_rate));
    kv("train.weight_decay", fmt17(cfg.train.weight_decay));
    kv("train.beta1", fmt17(cfg.train.beta1));
    kv("train.beta2", fmt17(cfg.train.beta2));
    kv("train.eps", fmt17(cfg.train.eps));
    kv("train.batch_size", std::to_string(cfg.train.batch_size));
    kv("train.epochs", std::to_string(cfg.train.epochs));
    kv("train.shuffle", cfg.train.shuffle ? "true" : "false");
    kv("train.threads", std::to_string(cfg.train.threads));
    kv("train.seed", std::to_string(cfg.effective_train_seed()));

    kv("split.mode", split_mode_to_string(cfg.split.mode));
    kv("split.test_fraction", fmt17(cfg.split.test_fraction));
    kv("split.seed", std::to_string(cfg.effective_split_seed()));

    kv("stream.kind", source_kind_to_string(cfg.stream.kind));
    kv("stream.rate_hz", fmt17(cfg.stream.rate_hz));
    kv("stream.duration_s", fmt17(cfg.stream.duration_s));
    kv("stream.paced", cfg.stream.paced ? "true" : "false");
    kv("stream.loop", cfg.stream.loop ? "true" : "false");
    kv("stream.threshold_uT", fmt17(cfg.effective_threshold_uT()));
    {
        std::string wp;
        for (std::size_t i = 0; i < cfg.stream.waypoints.size(); ++i) {
            const Waypoint& w = cfg.stream.waypoints[i];
            if (i) wp += ';';
            wp += fmt17(w.t_ms) + ":" + fmt17(w.x_mm) + ":" + fmt17(w.y_mm) + ":" +
                  fmt17(w.z_mm);
        }
        kv("stream.waypoints", wp);
    }
    kv("stream.port", std::to_string(cfg.stream.port));
    kv("stream.seed", std::to_string(cfg.effective_stream_seed()));
    return s;
}

std::string run_config_digest_hex(const RunConfig& cfg) {
    return to_hex16(fnv1a64(serialize_run_config(cfg)));
}

} // namespace magskin
