#include "magskin/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include "magskin/errors.hpp"
#include "magskin/rng.hpp"

namespace magskin {

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

[[noreturn]] void line_error(std::size_t line_no, const std::string& what) {
    throw FormatError("line " + std::to_string(line_no) + ": " + what);
}

double parse_field(const std::string& text, std::size_t line_no, std::size_t field_no) {
    const char* s = text.c_str();
    char* end = nullptr;
    const double v = std::strtod(s, &end);
    if (end == s || *end != '\0')
        line_error(line_no, "malformed number in field " + std::to_string(field_no + 1));
    if (!std::isfinite(v))
        line_error(line_no, "non-finite value in field " + std::to_string(field_no + 1));
    return v;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

std::string header_for(std::size_t channels) {
    std::string h = "x_mm,y_mm,z_mm";
    char buf[32];
    for (std::size_t c = 0; c < channels; ++c) {
        std::snprintf(buf, sizeof(buf), ",c%03zu", c);
        h += buf;
    }
    return h;
}

} // namespace

std::string serialize_canonical(const TrajectorySpec& t) {
    std::string out;
    out += "traj.grid_nx=" + std::to_string(t.grid_nx) + "\n";
    out += "traj.grid_ny=" + std::to_string(t.grid_ny) + "\n";
    out += "traj.pitch_mm=" + fmt17(t.pitch_mm) + "\n";
    out += "traj.depth_schedule_mm=";
    for (std::size_t i = 0; i < t.depth_schedule_mm.size(); ++i) {
        if (i) out += ",";
        out += fmt17(t.depth_schedule_mm[i]);
    }
    out += "\n";
    out += "traj.repeats_per_depth=" + std::to_string(t.repeats_per_depth) + "\n";
    return out;
}

std::string config_digest_hex(const SkinConfig& config, const TrajectorySpec& spec) {
    return to_hex16(fnv1a64(serialize_canonical(config) + serialize_canonical(spec)));
}

void validate_trajectory(const TrajectorySpec& t, const SkinConfig& c) {
    if (t.grid_nx < 1 || t.grid_ny < 1)
        throw ConfigError("trajectory grid counts must be at least 1");
    if (t.pitch_mm <= 0.0) throw ConfigError("trajectory pitch must be positive");
    if (t.repeats_per_depth < 1) throw ConfigError("repeats_per_depth must be at least 1");
    if (t.depth_schedule_mm.empty()) throw ConfigError("depth schedule must not be empty");
    for (double d : t.depth_schedule_mm)
        if (!(d >= 0.0 && d <= c.z_max_mm))
            throw ConfigError("depth " + fmt17(d) + " mm outside [0, " + fmt17(c.z_max_mm) +
                              "] mm");
    const double span_x = (t.grid_nx - 1) * t.pitch_mm;
    const double span_y = (t.grid_ny - 1) * t.pitch_mm;
    if (span_x > c.area_x_mm || span_y > c.area_y_mm)
        throw ConfigError("trajectory grid exceeds the skin area");
}

std::vector<ContactLabel> grid_trajectory(const TrajectorySpec& t, const SkinConfig& c) {
    validate_trajectory(t, c);
    const double x0 = 0.5 * (c.area_x_mm - (t.grid_nx - 1) * t.pitch_mm);
    const double y0 = 0.5 * (c.area_y_mm - (t.grid_ny - 1) * t.pitch_mm);
    std::vector<ContactLabel> labels;
    labels.reserve(static_cast<std::size_t>(t.grid_nx) * t.grid_ny *
                   t.depth_schedule_mm.size() * t.repeats_per_depth);
    for (int iy = 0; iy < t.grid_ny; ++iy) {
        for (int step = 0; step < t.grid_nx; ++step) {
            const int ix = (iy % 2 == 0) ? step : t.grid_nx - 1 - step;
            const double x = x0 + ix * t.pitch_mm;
            const double y = y0 + iy * t.pitch_mm;
            for (double depth : t.depth_schedule_mm)
                for (int rep = 0; rep < t.repeats_per_depth; ++rep)
                    labels.push_back({x, y, depth});
        }
    }
    return labels;
}

Dataset generate_dataset(const SkinConfig& c, const TrajectorySpec& t, std::uint64_t seed) {
    validate(c);
    const auto labels = grid_trajectory(t, c);
    const SensorFrame baseline = rest_frame(c);

    Dataset ds;
    ds.config_digest = config_digest_hex(c, t);
    ds.config_snapshot = c;
    ds.trajectory = t;
    ds.samples.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!(labels[i].z_mm > 0.0)) continue;
        Rng rng(substream_seed(seed, rng_tag::sensor_noise + i));
        const auto magnets = deform(c, labels[i]);
        const SensorFrame frame = read_sensors(c, magnets, rng);
        ds.samples.push_back({delta_frame(frame, baseline), labels[i]});
    }
    return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
    std::size_t channels = 48;
    if (!ds.samples.empty())
        channels = ds.samples.front().delta_b.size();
    else if (ds.config_snapshot)
        channels = static_cast<std::size_t>(ds.config_snapshot->sensor_grid.count()) * 3;

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw ConfigError("cannot open dataset for writing: " + path);
    std::string text;
    text.reserve(ds.samples.size() * 700 + 1024);
    text += "magskin-dataset v1\n";
    text += ds.config_digest;
    text += "\n";
    text += header_for(channels);
    text += "\n";
    char buf[32];
    for (const auto& s : ds.samples) {
        if (s.delta_b.size() != channels) {
            std::fclose(f);
            throw ShapeError("save_csv: inconsistent channel counts across samples");
        }
        std::snprintf(buf, sizeof(buf), "%.9e", s.label.x_mm);
        text += buf;
        std::snprintf(buf, sizeof(buf), ",%.9e", s.label.y_mm);
        text += buf;
        std::snprintf(buf, sizeof(buf), ",%.9e", s.label.z_mm);
        text += buf;
        for (double v : s.delta_b) {
            std::snprintf(buf, sizeof(buf), ",%.9e", v);
            text += buf;
        }
        text += "\n";
    }
    if (ds.normalization) {
        text += "#norm mean";
        for (double v : ds.normalization->mean) text += "," + fmt17(v);
        text += "\n#norm std";
        for (double v : ds.normalization->stdev) text += "," + fmt17(v);
        text += "\n";
    }
    const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size();
    const bool flushed = std::fclose(f) == 0;
    if (!ok || !flushed) throw FormatError("dataset write failed: " + path);
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open dataset: " + path);

    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    std::size_t channels = 0;
    std::vector<double> norm_mean, norm_std;
    bool have_mean = false, have_std = false;

    auto next_line = [&](std::string& out) {
        if (!std::getline(in, out)) return false;
        ++line_no;
        if (!out.empty() && out.back() == '\r')
            line_error(line_no, "CRLF line ending, expected LF");
        return true;
    };

    if (!next_line(line) || line != "magskin-dataset v1")
        line_error(1, "expected header 'magskin-dataset v1'");
    if (!next_line(line)) line_error(2, "missing config digest");
    if (line.size() != 16 || line.find_first_not_of("0123456789abcdef") != std::string::npos)
        line_error(2, "config digest must be 16 lowercase hex characters");
    ds.config_digest = line;
    if (!next_line(line)) line_error(3, "missing column header");
    {
        const auto fields = split_fields(line);
        if (fields.size() < 4) line_error(3, "column header needs labels and channels");
        channels = fields.size() - 3;
        if (line != header_for(channels)) line_error(3, "unexpected column names");
    }

    const std::size_t expected_fields = 3 + channels;
    while (next_line(line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::vector<double>* dest = nullptr;
            std::string tag;
            if (line.rfind("#norm mean,", 0) == 0) {
                dest = &norm_mean;
                have_mean = true;
                tag = "#norm mean,";
            } else if (line.rfind("#norm std,", 0) == 0) {
                dest = &norm_std;
                have_std = true;
                tag = "#norm std,";
            } else {
                line_error(line_no, "unknown comment line (only #norm mean/std allowed)");
            }
            const auto fields = split_fields(line.substr(tag.size()));
            if (fields.size() != channels)
                line_error(line_no, "expected " + std::to_string(channels) +
                                        " normalization values, got " +
                                        std::to_string(fields.size()));
            dest->clear();
            for (std::size_t i = 0; i < fields.size(); ++i)
                dest->push_back(parse_field(fields[i], line_no, i));
            continue;
        }
        const auto fields = split_fields(line);
        if (fields.size() != expected_fields)
            line_error(line_no, "expected " + std::to_string(expected_fields) + " fields (3 labels + " +
                                    std::to_string(channels) + " channels), got " +
                                    std::to_string(fields.size()));
        Sample s;
        s.label.x_mm = parse_field(fields[0], line_no, 0);
        s.label.y_mm = parse_field(fields[1], line_no, 1);
        s.label.z_mm = parse_field(fields[2], line_no, 2);
        s.delta_b.resize(channels);
        for (std::size_t c = 0; c < channels; ++c)
            s.delta_b[c] = parse_field(fields[3 + c], line_no, 3 + c);
        ds.samples.push_back(std::move(s));
    }

    if (have_mean != have_std)
        throw FormatError("normalization stats incomplete: need both #norm mean and #norm std");
    if (have_mean) {
        for (double v : norm_std)
            if (!(v > 0.0)) throw FormatError("normalization stds must be strictly positive");
        ds.normalization = Normalization{std::move(norm_mean), std::move(norm_std)};
    }
    return ds;
}

SplitMode split_mode_from_string(const std::string& name) {
    if (name == "random") return SplitMode::random;
    if (name == "held-out-locations") return SplitMode::held_out_locations;
    throw ConfigError("unknown split mode '" + name +
                      "' (expected random or held-out-locations)");
}

std::string split_mode_to_string(SplitMode mode) {
    return mode == SplitMode::random ? "random" : "held-out-locations";
}

std::pair<Dataset, Dataset> split(const Dataset& ds, SplitMode mode, double test_fraction,
                                  std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("test fraction must lie strictly between 0 and 1");
    const std::size_t n = ds.samples.size();
    if (n < 2) throw ConfigError("cannot split a dataset with fewer than 2 samples");

    std::vector<bool> in_test(n, false);
    Rng rng(substream_seed(seed, rng_tag::split));

    if (mode == SplitMode::random) {
        const auto k = static_cast<std::size_t>(std::floor(n * test_fraction + 0.5));
        if (k == 0 || k == n)
            throw ConfigError("test fraction " + std::to_string(test_fraction) +
                              " leaves an empty side for " + std::to_string(n) + " samples");
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        rng.shuffle(idx);
        for (std::size_t i = 0; i < k; ++i) in_test[idx[i]] = true;
    } else {
        std::vector<std::pair<double, double>> locations;
        std::vector<std::size_t> loc_of(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::pair<double, double> key{ds.samples[i].label.x_mm,
                                                ds.samples[i].label.y_mm};
            std::size_t li = 0;
            for (; li < locations.size(); ++li)
                if (locations[li] == key) break;
            if (li == locations.size()) locations.push_back(key);
            loc_of[i] = li;
        }
        const std::size_t nl = locations.size();
        const auto kl = static_cast<std::size_t>(std::floor(nl * test_fraction + 0.5));
        if (kl == 0 || kl == nl)
            throw ConfigError("test fraction " + std::to_string(test_fraction) +
                              " leaves an empty side for " + std::to_string(nl) + " locations");
        std::vector<std::size_t> idx(nl);
        for (std::size_t i = 0; i < nl; ++i) idx[i] = i;
        rng.shuffle(idx);
        std::vector<bool> loc_test(nl, false);
        for (std::size_t i = 0; i < kl; ++i) loc_test[idx[i]] = true;
        for (std::size_t i = 0; i < n; ++i) in_test[i] = loc_test[loc_of[i]];
    }

    Dataset train, test;
    train.config_digest = test.config_digest = ds.config_digest;
    train.config_snapshot = test.config_snapshot = ds.config_snapshot;
    train.trajectory = test.trajectory = ds.trajectory;
    for (std::size_t i = 0; i < n; ++i)
        (in_test[i] ? test : train).samples.push_back(ds.samples[i]);
    return {std::move(train), std::move(test)};
}

Normalization fit_normalization(const Dataset& train) {
    if (train.samples.empty()) throw ConfigError("cannot fit normalization on an empty dataset");
    const std::size_t channels = train.samples.front().delta_b.size();
    const double n = static_cast<double>(train.samples.size());
    Normalization stats;
    stats.mean.assign(channels, 0.0);
    stats.stdev.assign(channels, 0.0);
    for (const auto& s : train.samples) {
        if (s.delta_b.size() != channels)
            throw ShapeError("fit_normalization: inconsistent channel counts");
        for (std::size_t c = 0; c < channels; ++c) stats.mean[c] += s.delta_b[c];
    }
    for (std::size_t c = 0; c < channels; ++c) stats.mean[c] /= n;
    for (const auto& s : train.samples)
        for (std::size_t c = 0; c < channels; ++c) {
            const double d = s.delta_b[c] - stats.mean[c];
            stats.stdev[c] += d * d;
        }
    for (std::size_t c = 0; c < channels; ++c) {
        const double sd = std::sqrt(stats.stdev[c] / n);
        stats.stdev[c] = sd < 1e-12 ? 1e-12 : sd;
    }
    return stats;
}

std::vector<double> apply_normalization(std::span<const double> x, const Normalization& stats) {
    if (x.size() != stats.mean.size() || x.size() != stats.stdev.size())
        throw ShapeError("apply_normalization: channel count mismatch");
    std::vector<double> out(x.size());
    for (std::size_t c = 0; c < x.size(); ++c) out[c] = (x[c] - stats.mean[c]) / stats.stdev[c];
    return out;
}

} // namespace magskin
