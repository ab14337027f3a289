#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "magskin/dataset.hpp"
#include "magskin/model.hpp"
#include "magskin/skin_sim.hpp"

namespace magskin {

// A frame is either a raw field reading (baseline still to subtract) or an
// already-subtracted delta, as replayed datasets store deltas verbatim.
struct StreamFrame {
    double t_ms = 0.0;
    std::vector<double> values;
    bool is_delta = false;
};

class FrameSource {
public:
    virtual ~FrameSource() = default;
    // nullopt means the source is exhausted.
    virtual std::optional<StreamFrame> next() = 0;
};

// Replays dataset samples as delta frames at the nominal rate, optionally
// looping forever.
class ReplaySource final : public FrameSource {
public:
    ReplaySource(const Dataset& ds, double rate_hz, bool loop = false);
    std::optional<StreamFrame> next() override;

private:
    const Dataset* ds_;
    double period_ms_;
    bool loop_;
    std::uint64_t emitted_ = 0;
};

struct Waypoint {
    double t_ms = 0.0;
    double x_mm = 0.0;
    double y_mm = 0.0;
    double z_mm = 0.0;
};

// Simulates raw sensor frames while a contact follows the piecewise-linear
// waypoint path (clamped to the first/last waypoint outside its time span).
// Noise is drawn from per-frame substreams, so frames do not depend on
// consumption timing.
class SimTrajectorySource final : public FrameSource {
public:
    SimTrajectorySource(const SkinConfig& config, std::vector<Waypoint> waypoints,
                        double rate_hz, double duration_s, std::uint64_t seed);
    std::optional<StreamFrame> next() override;

    ContactLabel label_at(double t_ms) const;

private:
    SkinConfig config_;
    std::vector<Waypoint> waypoints_;
    double period_ms_;
    std::uint64_t n_frames_;
    std::uint64_t index_ = 0;
    std::uint64_t seed_;
};

struct Estimate {
    double t_ms = 0.0;
    double x_mm = 0.0;
    double y_mm = 0.0;
    double z_mm = 0.0;
    // False marks the position as unreliable (no contact detected); the raw
    // model output is still reported.
    bool contact = false;
    double compute_latency_ms = 0.0;
};

// "t_ms x y z flag latency" with fixed formatting.
std::string format_estimate(const Estimate& e);

class EstimateSink {
public:
    virtual ~EstimateSink() = default;
    virtual void emit(const Estimate& e) = 0;
};

class CollectSink final : public EstimateSink {
public:
    void emit(const Estimate& e) override { estimates.push_back(e); }
    std::vector<Estimate> estimates;
};

// Writes one line per estimate to a file or stdout (path "-").
class TextSink final : public EstimateSink {
public:
    explicit TextSink(const std::string& path);
    ~TextSink() override;
    TextSink(const TextSink&) = delete;
    TextSink& operator=(const TextSink&) = delete;
    void emit(const Estimate& e) override;

private:
    void* file_;
    bool owned_;
};

// Connects to a local listener and emits each line as u32 little-endian
// length + the line bytes (no newline), for external visualizers.
class SocketSink final : public EstimateSink {
public:
    explicit SocketSink(int port);
    ~SocketSink() override;
    SocketSink(const SocketSink&) = delete;
    SocketSink& operator=(const SocketSink&) = delete;
    void emit(const Estimate& e) override;

private:
    int fd_;
};

class TeeSink final : public EstimateSink {
public:
    explicit TeeSink(std::vector<EstimateSink*> sinks) : sinks_(std::move(sinks)) {}
    void emit(const Estimate& e) override {
        for (auto* s : sinks_) s->emit(e);
    }

private:
    std::vector<EstimateSink*> sinks_;
};

// flag = (max |delta| > threshold), strict inequality.
bool contact_detect(std::span<const double> delta_b, double threshold_uT);

struct StreamOptions {
    // Paced mode runs a real-time producer thread against a single-slot
    // mailbox: a frame arriving while inference is busy replaces the waiting
    // one and is counted as dropped. Unpaced mode processes every frame
    // in one thread.
    bool paced = false;
    double duration_s = 0.0; // paced mode stop time; 0 = until source ends
    double contact_threshold_uT = 2.5;
};

struct StreamSummary {
    std::uint64_t frames_produced = 0;
    std::uint64_t frames_processed = 0;
    std::uint64_t frames_dropped = 0;
    double p50_latency_ms = 0.0;
    double p99_latency_ms = 0.0;
    double max_latency_ms = 0.0;
    double wall_s = 0.0;
};

std::string format_summary(const StreamSummary& s);

// Per frame: delta against `baseline` (unless the frame already is one),
// contact detection, model forward, emit. Memory use is independent of
// stream length.
StreamSummary run_stream(FrameSource& source, const ModelParams& params,
                         const Normalization& stats, const SensorFrame& baseline,
                         EstimateSink& sink, const StreamOptions& opts);

} // namespace magskin
