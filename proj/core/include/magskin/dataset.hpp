#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "magskin/skin_config.hpp"
#include "magskin/skin_sim.hpp"

namespace magskin {

// Indentation protocol: a centered grid of contact points visited in
// serpentine order, each point indented at every scheduled depth a fixed
// number of times.
struct TrajectorySpec {
    int grid_nx = 19;
    int grid_ny = 19;
    double pitch_mm = 7.5;
    std::vector<double> depth_schedule_mm{1.0, 2.0, 3.0, 4.0, 5.0};
    int repeats_per_depth = 5;
};

struct Sample {
    std::vector<double> delta_b;
    ContactLabel label;
};

struct Normalization {
    std::vector<double> mean;
    std::vector<double> stdev;
    bool operator==(const Normalization&) const = default;
};

// The CSV file persists only the digest of the generating configuration;
// the snapshot fields are populated for in-process datasets and absent
// after a load.
struct Dataset {
    std::string config_digest;
    std::optional<SkinConfig> config_snapshot;
    std::optional<TrajectorySpec> trajectory;
    std::vector<Sample> samples;
    std::optional<Normalization> normalization;
};

std::string serialize_canonical(const TrajectorySpec& spec);
std::string config_digest_hex(const SkinConfig& config, const TrajectorySpec& spec);

// Throws ConfigError when the grid leaves the skin or a depth exceeds z_max.
void validate_trajectory(const TrajectorySpec& spec, const SkinConfig& config);

// Serpentine over grid rows (even rows left-to-right), centered in the skin
// area; every point expands to one label per (depth, repeat), depths outer.
std::vector<ContactLabel> grid_trajectory(const TrajectorySpec& spec, const SkinConfig& config);

// Simulates every trajectory label and keeps the contact samples (z > 0).
// Each label draws noise from its own (seed, label index) substream, so the
// result is independent of evaluation order.
Dataset generate_dataset(const SkinConfig& config, const TrajectorySpec& spec,
                         std::uint64_t seed);

void save_csv(const Dataset& ds, const std::string& path);
Dataset load_csv(const std::string& path);

enum class SplitMode { random, held_out_locations };

SplitMode split_mode_from_string(const std::string& name);
std::string split_mode_to_string(SplitMode mode);

// Disjoint, exhaustive partition; each side keeps the original sample order.
// held_out_locations assigns every sample of a grid point to one side.
// The test size is round(count * test_fraction), half away from zero.
std::pair<Dataset, Dataset> split(const Dataset& ds, SplitMode mode, double test_fraction,
                                  std::uint64_t seed);

// Per-channel population statistics of the training samples; stds are
// floored at 1e-12 so constant channels normalize to zero.
Normalization fit_normalization(const Dataset& train);
std::vector<double> apply_normalization(std::span<const double> x, const Normalization& stats);

} // namespace magskin
