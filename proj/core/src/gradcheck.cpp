#include "magskin/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "magskin/errors.hpp"
#include "magskin/nn_ops.hpp"
#include "magskin/rng.hpp"

namespace magskin {

namespace {

// Distance of the case from finite-difference hazards: ReLU kinks and
// pooling ties. A perturbation of h on one parameter moves activations by
// far less than 1e-3 here, so a margin above that keeps f piecewise smooth
// over the probed interval.
double conditioning_margin(const ModelWorkspace& ws) {
    double margin = 1e300;
    auto kink = [&margin](const Tensor& t) {
        for (double v : t.data) margin = std::min(margin, std::fabs(v));
    };
    for (const auto& t : ws.conv_pre) kink(t);
    for (std::size_t k = 0; k + 1 < ws.fc_pre.size(); ++k) kink(ws.fc_pre[k]);

    const Tensor& a = ws.conv_act.back();
    const int hw = a.shape[0] * a.shape[1], c = a.shape[2];
    for (int ch = 0; ch < c; ++ch) {
        double best = -1e300, second = -1e300;
        for (int p = 0; p < hw; ++p) {
            const double v = a.data[static_cast<std::size_t>(p) * c + ch];
            if (v > best) {
                second = best;
                best = v;
            } else if (v > second) {
                second = v;
            }
        }
        margin = std::min(margin, best - second);
    }
    return margin;
}

} // namespace

ModelSpec tiny_model_spec() {
    ModelSpec s;
    s.input_c = 2;
    s.conv_channels = {4, 4, 4, 4};
    s.fc_dims = {4, 3};
    return s;
}

GradCheckReport run_gradcheck(int n_seeds, double h, double rel_tol, double abs_tol,
                              std::uint64_t base_seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const ModelSpec spec = tiny_model_spec();
    GradCheckReport report;

    for (int s = 0; s < n_seeds; ++s) {
        Rng rng(substream_seed(base_seed, rng_tag::gradcheck + static_cast<std::uint64_t>(s)));
        ModelWorkspace ws(spec);
        ModelParams params{spec, {}};
        Tensor input({spec.input_h, spec.input_w, spec.input_c});
        Vec3 target{};

        for (int attempt = 0;; ++attempt) {
            params = init_model(spec, rng.next_u64());
            for (auto& v : input.data) v = rng.gauss(0.0, 1.0);
            const Tensor& out = forward(params, input, ws);
            // Targets near the output keep the loss O(1); a large loss would
            // drown small gradients in difference-quotient cancellation noise
            // (eps * f / 2h) regardless of gradient correctness.
            target = {out.data[0] + rng.gauss(0.0, 1.0), out.data[1] + rng.gauss(0.0, 1.0),
                      out.data[2] + rng.gauss(0.0, 1.0)};
            if (conditioning_margin(ws) > 1e-3) break;
            if (attempt > 100)
                throw DivergenceError("gradcheck could not find a well-conditioned case");
        }

        ModelParams analytic = zeros_like(spec);
        loss_and_grads(params, input, target, analytic, ws);

        ModelWorkspace fd_ws(spec);
        for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
            ModelParams probe = params;
            const Tensor numeric = finite_diff_grad(
                [&](const Tensor& t) {
                    probe.tensors[ti] = t;
                    const Tensor& out = forward(probe, input, fd_ws);
                    const double ex = out.data[0] - target.x;
                    const double ey = out.data[1] - target.y;
                    const double ez = out.data[2] - target.z;
                    return (ex * ex + ey * ey + ez * ez) / 3.0;
                },
                params.tensors[ti], h);
            const Tensor& got = analytic.tensors[ti];
            for (std::size_t i = 0; i < numeric.data.size(); ++i) {
                const double a = got.data[i], b = numeric.data[i];
                const double err = std::fabs(a - b);
                const double denom = std::max(std::fabs(a), std::fabs(b));
                const double tol = std::max(abs_tol, rel_tol * denom);
                if (denom > abs_tol / rel_tol)
                    report.max_rel_err = std::max(report.max_rel_err, err / denom);
                report.worst_ratio = std::max(report.worst_ratio, err / tol);
                if (err > tol) ++report.failures;
                ++report.checked_values;
            }
        }
        ++report.seeds;
    }
    report.elapsed_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

} // namespace magskin
