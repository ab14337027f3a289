#include "magskin/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>

#include "magskin/errors.hpp"
#include "magskin/parallel.hpp"

namespace magskin {

void validate(const TrainConfig& cfg) {
    std::string problems;
    auto require = [&problems](bool ok, const char* message) {
        if (ok) return;
        if (!problems.empty()) problems += "; ";
        problems += message;
    };
    require(cfg.learning_rate > 0.0, "learning rate must be positive");
    require(cfg.weight_decay >= 0.0, "weight decay must be non-negative");
    require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0, "beta1 must lie in [0, 1)");
    require(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, "beta2 must lie in [0, 1)");
    require(cfg.eps > 0.0, "eps must be positive");
    require(cfg.batch_size >= 1, "batch size must be at least 1");
    require(cfg.epochs >= 1, "epochs must be at least 1");
    require(cfg.threads >= 0, "threads must be non-negative");
    if (!problems.empty()) throw ConfigError("invalid train config: " + problems);
}

AdamWState make_adamw_state(const ModelSpec& spec) {
    AdamWState st;
    for (const auto& shape : param_shapes(spec)) {
        st.m.emplace_back(shape);
        st.v.emplace_back(shape);
    }
    return st;
}

namespace {

// The IEEE exponent field is all-ones exactly for inf and nan. An integer
// accumulation scan stays branch-free and vectorizable, unlike a strict
// floating-point reduction or a throw inside the loop.
std::int64_t count_nonfinite(const double* g, std::int64_t n) {
    constexpr std::uint64_t kExp = 0x7ff0000000000000ull;
    std::int64_t bad = 0;
    for (std::int64_t i = 0; i < n; ++i)
        bad += ((std::bit_cast<std::uint64_t>(g[i]) & kExp) == kExp) ? 1 : 0;
    return bad;
}

} // namespace

void adamw_step(ModelParams& params, const ModelParams& grads, AdamWState& state,
                const TrainConfig& cfg) {
    const std::size_t nt = params.tensors.size();
    if (grads.tensors.size() != nt || state.m.size() != nt || state.v.size() != nt)
        throw ShapeError("adamw_step: parameter/gradient/state tensor counts differ");
    // Validate everything before mutating anything, so a divergent batch
    // leaves parameters and optimizer state untouched. Keeping the check out
    // of the update loop also lets that loop vectorize.
    for (std::size_t t = 0; t < nt; ++t) {
        if (!same_shape(params.tensors[t], grads.tensors[t]))
            throw ShapeError("adamw_step: gradient shape mismatch in tensor " +
                             std::to_string(t));
        if (count_nonfinite(grads.tensors[t].data.data(), grads.tensors[t].numel()) != 0)
            throw DivergenceError("adamw_step: non-finite gradient in tensor " +
                                  std::to_string(t));
    }
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));
    const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    const double lr = cfg.learning_rate;
    const double b1 = cfg.beta1, b2 = cfg.beta2, eps = cfg.eps;

    for (std::size_t t = 0; t < nt; ++t) {
        double* __restrict p = params.tensors[t].data.data();
        const double* __restrict g = grads.tensors[t].data.data();
        double* __restrict m = state.m[t].data.data();
        double* __restrict v = state.v[t].data.data();
        const std::int64_t n = params.tensors[t].numel();
        for (std::int64_t i = 0; i < n; ++i) {
            const double gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] = p[i] * decay - lr * (mhat / (std::sqrt(vhat) + eps));
        }
    }
}

double mse_loss(const Vec3& pred, const Vec3& target) {
    const Vec3 e = pred - target;
    return dot(e, e) / 3.0;
}

TrainResult train(const Dataset& train_ds, const Dataset& val_ds, const Normalization& stats,
                  std::uint64_t model_seed, const TrainConfig& cfg, const ModelSpec& spec,
                  const ProgressFn& progress) {
    validate(cfg);
    if (train_ds.samples.empty() || val_ds.samples.empty())
        throw ConfigError("train: datasets must be non-empty");

    const std::size_t n = train_ds.samples.size();
    std::vector<Tensor> inputs;
    std::vector<Vec3> targets;
    inputs.reserve(n);
    targets.reserve(n);
    for (const auto& s : train_ds.samples) {
        inputs.push_back(to_input(spec, apply_normalization(s.delta_b, stats)));
        targets.push_back({s.label.x_mm, s.label.y_mm, s.label.z_mm});
    }

    TrainResult result{init_model(spec, model_seed), {}, 0, 0.0, {}};
    AdamWState state = make_adamw_state(spec);

    constexpr std::size_t kChunk = 16;
    const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t max_chunks = (std::min(batch, n) + kChunk - 1) / kChunk;
    const int n_workers =
        std::min(resolve_threads(cfg.threads), static_cast<int>(std::max<std::size_t>(max_chunks, 1)));

    std::vector<ModelParams> slot_grads;
    std::vector<double> slot_loss(max_chunks, 0.0);
    for (std::size_t i = 0; i < max_chunks; ++i) slot_grads.push_back(zeros_like(spec));
    std::vector<ModelWorkspace> ws;
    for (int i = 0; i < n_workers; ++i) ws.emplace_back(spec);
    ModelParams batch_grad = zeros_like(spec);
    BackwardCache cache(spec);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    bool have_best = false;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (cfg.shuffle) {
            Rng rng(substream_seed(cfg.seed, rng_tag::shuffle + static_cast<std::uint64_t>(epoch)));
            rng.shuffle(order);
        }

        double epoch_loss_sum = 0.0;
        int batch_index = 0;
        for (std::size_t b0 = 0; b0 < n; b0 += batch, ++batch_index) {
            const std::size_t bn = std::min(batch, n - b0);
            const int n_chunks = static_cast<int>((bn + kChunk - 1) / kChunk);
            for (int c = 0; c < n_chunks; ++c) {
                zero_params(slot_grads[static_cast<std::size_t>(c)]);
                slot_loss[static_cast<std::size_t>(c)] = 0.0;
            }
            cache.refresh(result.params);

            parallel_for_chunks(n_chunks, n_workers, [&](int c, int worker) {
                const std::size_t begin = b0 + static_cast<std::size_t>(c) * kChunk;
                const std::size_t end = std::min(b0 + bn, begin + kChunk);
                auto& g = slot_grads[static_cast<std::size_t>(c)];
                auto& w = ws[static_cast<std::size_t>(worker)];
                for (std::size_t i = begin; i < end; ++i) {
                    const std::size_t k = order[i];
                    slot_loss[static_cast<std::size_t>(c)] +=
                        loss_and_grads(result.params, inputs[k], targets[k], g, w, &cache);
                }
            });

            zero_params(batch_grad);
            double batch_loss_sum = 0.0;
            for (int c = 0; c < n_chunks; ++c) {
                const auto& g = slot_grads[static_cast<std::size_t>(c)];
                for (std::size_t t = 0; t < batch_grad.tensors.size(); ++t) {
                    double* dst = batch_grad.tensors[t].data.data();
                    const double* src = g.tensors[t].data.data();
                    const std::int64_t cnt = batch_grad.tensors[t].numel();
                    for (std::int64_t i = 0; i < cnt; ++i) dst[i] += src[i];
                }
                batch_loss_sum += slot_loss[static_cast<std::size_t>(c)];
            }
            const double inv_bn = 1.0 / static_cast<double>(bn);
            for (auto& t : batch_grad.tensors)
                for (auto& v : t.data) v *= inv_bn;

            if (!std::isfinite(batch_loss_sum))
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(batch_index));
            epoch_loss_sum += batch_loss_sum;

            adamw_step(result.params, batch_grad, state, cfg);
        }

        const ErrorReport val = evaluate(result.params, stats, val_ds, cfg.threads);
        EpochStats es{epoch, epoch_loss_sum / static_cast<double>(n), val.xy_mean_mm,
                      val.z_mean_mm};
        result.history.push_back(es);
        if (progress) progress(es);

        if (!have_best || val.xy_mean_mm < result.best_val_xy_mm) {
            have_best = true;
            result.best_params = result.params;
            result.best_epoch = epoch;
            result.best_val_xy_mm = val.xy_mean_mm;
        }
    }
    return result;
}

void save_history_csv(const std::vector<EpochStats>& history, const std::string& path,
                      const std::string& header_comment) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw ConfigError("cannot open history for writing: " + path);
    std::string text;
    if (!header_comment.empty()) text += "# " + header_comment + "\n";
    text += "epoch,train_loss,val_xy_mean_mm,val_z_mean_mm\n";
    char buf[128];
    for (const auto& e : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.9e,%.9e,%.9e\n", e.epoch, e.train_loss,
                      e.val_xy_mean_mm, e.val_z_mean_mm);
        text += buf;
    }
    const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size();
    if (std::fclose(f) != 0 || !ok) throw FormatError("history write failed: " + path);
}

} // namespace magskin
