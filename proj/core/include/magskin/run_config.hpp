#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "magskin/dataset.hpp"
#include "magskin/skin_config.hpp"
#include "magskin/stream.hpp"
#include "magskin/trainer.hpp"

namespace magskin {

enum class SourceKind { replay, simulated };

SourceKind source_kind_from_string(const std::string& s);
std::string source_kind_to_string(SourceKind k);

struct StreamSpec {
    SourceKind kind = SourceKind::replay;
    double rate_hz = 41.7;
    // Replay with duration 0 runs once through the dataset; simulated sources
    // require a positive duration.
    double duration_s = 0.0;
    bool paced = false;
    bool loop = false;
    // Default resolves to 5x the configured sensor noise sigma.
    std::optional<double> threshold_uT;
    std::vector<Waypoint> waypoints;
    int port = 0; // 0 = no socket sink
};

struct SplitSpec {
    SplitMode mode = SplitMode::random;
    double test_fraction = 0.2;
};

struct RunPaths {
    std::string dataset = "dataset.csv";
    std::string checkpoint = "model.ckpt";
    std::string history = "history.csv";
    std::string error_map = "error_map.csv";
    std::string estimates = "-";
};

// One flat key=value config drives every subcommand. Module seeds left unset
// inherit the run seed, so a single --seed reproduces the whole pipeline.
struct RunConfig {
    std::uint64_t seed = 42;
    std::string out_dir = ".";

    SkinConfig skin;
    TrajectorySpec traj;
    TrainConfig train;
    SplitSpec split;
    StreamSpec stream;
    RunPaths paths;

    std::optional<std::uint64_t> skin_seed;
    std::optional<std::uint64_t> train_seed;
    std::optional<std::uint64_t> split_seed;
    std::optional<std::uint64_t> stream_seed;

    // Resolved values the pipeline actually uses.
    std::uint64_t effective_skin_seed() const { return skin_seed.value_or(seed); }
    std::uint64_t effective_train_seed() const { return train_seed.value_or(seed); }
    std::uint64_t effective_split_seed() const { return split_seed.value_or(seed); }
    std::uint64_t effective_stream_seed() const { return stream_seed.value_or(seed); }
    double effective_threshold_uT() const {
        return stream.threshold_uT.value_or(5.0 * skin.noise_sigma_uT);
    }

    // Writes the resolved seeds into the embedded configs and prefixes
    // relative paths with out_dir. Call once after all overrides.
    void finalize();
};

// Sets one documented key. Unknown keys and unparsable values raise
// ConfigError naming the key.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// key = value lines, '#' comment lines, blank lines ignored. Duplicate or
// unknown keys raise ConfigError with the line number.
RunConfig load_run_config(const std::string& path);

// "t:x:y:z" waypoints separated by ';'.
std::vector<Waypoint> parse_waypoints(const std::string& text);

// Every result-affecting key in fixed order with resolved seeds, for
// provenance digests. Output locations (out.dir, paths.*) are excluded so
// the same experiment digests identically wherever its files land.
std::string serialize_run_config(const RunConfig& cfg);
std::string run_config_digest_hex(const RunConfig& cfg);

} // namespace magskin
