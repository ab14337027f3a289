#include "magskin/stream.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstring>
#include <exception>
#include <mutex>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "magskin/errors.hpp"
#include "magskin/evaluator.hpp"
#include "magskin/rng.hpp"

namespace magskin {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

// Fixed-bin histogram so percentile tracking needs no per-frame storage.
class LatencyHist {
public:
    void add(double ms) {
        ++total_;
        max_ms_ = std::max(max_ms_, ms);
        auto bin = static_cast<std::size_t>(ms / kBinMs);
        if (bin >= kBins) {
            ++overflow_;
        } else {
            ++counts_[bin];
        }
    }

    // Upper edge of the bin where the cumulative count reaches the quantile.
    double percentile(double q) const {
        if (total_ == 0) return 0.0;
        const double target = q * static_cast<double>(total_);
        std::uint64_t cum = 0;
        for (std::size_t b = 0; b < kBins; ++b) {
            cum += counts_[b];
            if (static_cast<double>(cum) >= target) {
                return static_cast<double>(b + 1) * kBinMs;
            }
        }
        return max_ms_;
    }

    double max_ms() const { return max_ms_; }

private:
    static constexpr std::size_t kBins = 5000;
    static constexpr double kBinMs = 0.01; // covers 0..50 ms
    std::uint64_t counts_[kBins] = {};
    std::uint64_t overflow_ = 0;
    std::uint64_t total_ = 0;
    double max_ms_ = 0.0;
};

} // namespace

ReplaySource::ReplaySource(const Dataset& ds, double rate_hz, bool loop)
    : ds_(&ds), loop_(loop) {
    if (ds.samples.empty()) throw ConfigError("replay source needs a non-empty dataset");
    if (!(rate_hz > 0.0)) throw ConfigError("replay rate must be positive");
    period_ms_ = 1000.0 / rate_hz;
}

std::optional<StreamFrame> ReplaySource::next() {
    const std::size_t n = ds_->samples.size();
    if (!loop_ && emitted_ >= n) return std::nullopt;
    const Sample& s = ds_->samples[emitted_ % n];
    StreamFrame f;
    f.t_ms = static_cast<double>(emitted_) * period_ms_;
    f.values = s.delta_b;
    f.is_delta = true;
    ++emitted_;
    return f;
}

SimTrajectorySource::SimTrajectorySource(const SkinConfig& config,
                                         std::vector<Waypoint> waypoints, double rate_hz,
                                         double duration_s, std::uint64_t seed)
    : config_(config), waypoints_(std::move(waypoints)), seed_(seed) {
    validate(config_);
    if (waypoints_.empty()) throw ConfigError("trajectory needs at least one waypoint");
    if (!(rate_hz > 0.0)) throw ConfigError("frame rate must be positive");
    if (!(duration_s > 0.0)) throw ConfigError("stream duration must be positive");
    for (std::size_t i = 0; i < waypoints_.size(); ++i) {
        const Waypoint& w = waypoints_[i];
        if (!std::isfinite(w.t_ms) || w.t_ms < 0.0) {
            throw ConfigError("waypoint " + std::to_string(i) + " has an invalid time");
        }
        if (i > 0 && w.t_ms < waypoints_[i - 1].t_ms) {
            throw ConfigError("waypoint times must be non-decreasing");
        }
        validate_contact(config_, ContactLabel{w.x_mm, w.y_mm, w.z_mm});
    }
    period_ms_ = 1000.0 / rate_hz;
    n_frames_ = static_cast<std::uint64_t>(std::llround(duration_s * rate_hz));
    if (n_frames_ == 0) n_frames_ = 1;
}

ContactLabel SimTrajectorySource::label_at(double t_ms) const {
    const auto& w = waypoints_;
    if (t_ms <= w.front().t_ms) return {w.front().x_mm, w.front().y_mm, w.front().z_mm};
    if (t_ms >= w.back().t_ms) return {w.back().x_mm, w.back().y_mm, w.back().z_mm};
    std::size_t hi = 1;
    while (w[hi].t_ms < t_ms) ++hi;
    const Waypoint& a = w[hi - 1];
    const Waypoint& b = w[hi];
    const double span = b.t_ms - a.t_ms;
    // Coincident timestamps: the later waypoint wins.
    const double u = span > 0.0 ? (t_ms - a.t_ms) / span : 1.0;
    return {a.x_mm + u * (b.x_mm - a.x_mm), a.y_mm + u * (b.y_mm - a.y_mm),
            a.z_mm + u * (b.z_mm - a.z_mm)};
}

std::optional<StreamFrame> SimTrajectorySource::next() {
    if (index_ >= n_frames_) return std::nullopt;
    const double t = static_cast<double>(index_) * period_ms_;
    const ContactLabel label = label_at(t);
    auto magnets = deform(config_, label);
    Rng rng(substream_seed(seed_, rng_tag::sensor_noise + index_));
    SensorFrame frame = read_sensors(config_, magnets, rng);
    StreamFrame f;
    f.t_ms = t;
    f.values = std::move(frame.b_uT);
    f.is_delta = false;
    ++index_;
    return f;
}

std::string format_estimate(const Estimate& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.3f %.6f %.6f %.6f %d %.3f", e.t_ms, e.x_mm, e.y_mm,
                  e.z_mm, e.contact ? 1 : 0, e.compute_latency_ms);
    return buf;
}

TextSink::TextSink(const std::string& path) {
    if (path == "-") {
        file_ = stdout;
        owned_ = false;
    } else {
        file_ = std::fopen(path.c_str(), "wb");
        if (!file_) throw ConfigError("cannot open estimate output file: " + path);
        owned_ = true;
    }
}

TextSink::~TextSink() {
    auto* f = static_cast<std::FILE*>(file_);
    if (owned_) {
        std::fclose(f);
    } else {
        std::fflush(f);
    }
}

void TextSink::emit(const Estimate& e) {
    const std::string line = format_estimate(e) + "\n";
    std::fwrite(line.data(), 1, line.size(), static_cast<std::FILE*>(file_));
}

SocketSink::SocketSink(int port) : fd_(-1) {
    if (port <= 0 || port > 65535) throw ConfigError("socket port out of range");
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw ConfigError("cannot create socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::connect(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw ConfigError("cannot connect to 127.0.0.1:" + std::to_string(port));
    }
}

SocketSink::~SocketSink() {
    if (fd_ >= 0) ::close(fd_);
}

void SocketSink::emit(const Estimate& e) {
    const std::string line = format_estimate(e);
    unsigned char header[4];
    const auto n = static_cast<std::uint32_t>(line.size());
    header[0] = static_cast<unsigned char>(n & 0xff);
    header[1] = static_cast<unsigned char>((n >> 8) & 0xff);
    header[2] = static_cast<unsigned char>((n >> 16) & 0xff);
    header[3] = static_cast<unsigned char>((n >> 24) & 0xff);
    auto send_all = [this](const void* data, std::size_t len) {
        const char* p = static_cast<const char*>(data);
        while (len > 0) {
            const ssize_t sent = ::send(fd_, p, len, MSG_NOSIGNAL);
            if (sent <= 0) throw std::runtime_error("socket write failed");
            p += sent;
            len -= static_cast<std::size_t>(sent);
        }
    };
    send_all(header, sizeof header);
    send_all(line.data(), line.size());
}

bool contact_detect(std::span<const double> delta_b, double threshold_uT) {
    double peak = 0.0;
    for (double v : delta_b) peak = std::max(peak, std::fabs(v));
    return peak > threshold_uT;
}

std::string format_summary(const StreamSummary& s) {
    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "frames: produced=%llu processed=%llu dropped=%llu\n"
                  "latency_ms: p50=%.3f p99=%.3f max=%.3f\n"
                  "wall_s: %.3f",
                  static_cast<unsigned long long>(s.frames_produced),
                  static_cast<unsigned long long>(s.frames_processed),
                  static_cast<unsigned long long>(s.frames_dropped), s.p50_latency_ms,
                  s.p99_latency_ms, s.max_latency_ms, s.wall_s);
    return buf;
}

StreamSummary run_stream(FrameSource& source, const ModelParams& params,
                         const Normalization& stats, const SensorFrame& baseline,
                         EstimateSink& sink, const StreamOptions& opts) {
    StreamSummary summary;
    LatencyHist hist;
    ModelWorkspace ws(params.spec);
    std::vector<double> delta(baseline.b_uT.size());

    auto process = [&](const StreamFrame& frame) {
        const Clock::time_point t0 = Clock::now();
        std::span<const double> d;
        if (frame.is_delta) {
            d = frame.values;
        } else {
            if (frame.values.size() != baseline.b_uT.size()) {
                throw ShapeError("stream frame has " + std::to_string(frame.values.size()) +
                                 " channels, baseline has " +
                                 std::to_string(baseline.b_uT.size()));
            }
            for (std::size_t i = 0; i < delta.size(); ++i) {
                delta[i] = frame.values[i] - baseline.b_uT[i];
            }
            d = delta;
        }
        Estimate est;
        est.t_ms = frame.t_ms;
        est.contact = contact_detect(d, opts.contact_threshold_uT);
        const Vec3 p = predict(params, stats, d, ws);
        est.x_mm = p.x;
        est.y_mm = p.y;
        est.z_mm = p.z;
        est.compute_latency_ms = ms_between(t0, Clock::now());
        hist.add(est.compute_latency_ms);
        sink.emit(est);
        ++summary.frames_processed;
    };

    const Clock::time_point run_start = Clock::now();

    if (!opts.paced) {
        while (auto frame = source.next()) {
            ++summary.frames_produced;
            process(*frame);
        }
    } else {
        // Single-slot mailbox: the producer paces frames by their timestamps
        // and overwrites an unconsumed slot (latest frame wins), so a slow
        // model skips frames instead of building a backlog.
        std::mutex mu;
        std::condition_variable cv;
        std::optional<StreamFrame> slot;
        bool done = false;
        std::exception_ptr producer_error;

        std::thread producer([&] {
            try {
                while (true) {
                    if (opts.duration_s > 0.0 &&
                        ms_between(run_start, Clock::now()) >= opts.duration_s * 1000.0) {
                        break;
                    }
                    auto frame = source.next();
                    if (!frame) break;
                    if (opts.duration_s > 0.0 && frame->t_ms > opts.duration_s * 1000.0) break;
                    std::this_thread::sleep_until(
                        run_start + std::chrono::duration_cast<Clock::duration>(
                                        std::chrono::duration<double, std::milli>(frame->t_ms)));
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        ++summary.frames_produced;
                        if (slot.has_value()) ++summary.frames_dropped;
                        slot = std::move(*frame);
                    }
                    cv.notify_one();
                }
            } catch (...) {
                producer_error = std::current_exception();
            }
            {
                std::lock_guard<std::mutex> lock(mu);
                done = true;
            }
            cv.notify_one();
        });

        while (true) {
            std::unique_lock<std::mutex> lock(mu);
            cv.wait(lock, [&] { return slot.has_value() || done; });
            if (!slot.has_value()) break;
            StreamFrame frame = std::move(*slot);
            slot.reset();
            lock.unlock();
            process(frame);
        }
        producer.join();
        if (producer_error) std::rethrow_exception(producer_error);
    }

    summary.wall_s = ms_between(run_start, Clock::now()) / 1000.0;
    summary.p50_latency_ms = hist.percentile(0.50);
    summary.p99_latency_ms = hist.percentile(0.99);
    summary.max_latency_ms = hist.max_ms();
    return summary;
}

} // namespace magskin
