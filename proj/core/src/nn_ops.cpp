#include "magskin/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "magskin/errors.hpp"
#include "magskin/rng.hpp"

namespace magskin {

namespace kernels {

// The broadcast-accumulate loops below block the reduction dimension by 8 (4
// for the position reduction) to amortize accumulator load/store traffic,
// which is what bounds a plain one-term-per-pass loop. Each blocked body is
// written as separate += statements, so every output element still receives
// its terms in the same fixed order as the scalar remainder loop: taps outer,
// then the channel (or position) index ascending. That keeps results
// independent of blocking and of thread count.

void conv2d(const double* __restrict in, int h, int w, int cin,
            const double* __restrict weights, const double* __restrict bias, int cout,
            double* __restrict out) {
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (std::size_t p = 0; p < hw; ++p) {
        double* o = out + p * cout;
        for (int co = 0; co < cout; ++co) o[co] = bias[co];
    }
    for (int di = 0; di < 3; ++di) {
        const int i0 = std::max(0, 1 - di), i1 = std::min(h, h + 1 - di);
        for (int dj = 0; dj < 3; ++dj) {
            const int j0 = std::max(0, 1 - dj), j1 = std::min(w, w + 1 - dj);
            const double* wtap =
                weights + (static_cast<std::size_t>(di) * 3 + dj) * cin * cout;
            int ci = 0;
            // Channel-block outer, positions inner: the 8 weight rows stay
            // L1-resident across every output position.
            for (; ci + 8 <= cin; ci += 8) {
                const double* w0 = wtap + static_cast<std::size_t>(ci) * cout;
                const double* w1 = w0 + cout;
                const double* w2 = w1 + cout;
                const double* w3 = w2 + cout;
                const double* w4 = w3 + cout;
                const double* w5 = w4 + cout;
                const double* w6 = w5 + cout;
                const double* w7 = w6 + cout;
                for (int i = i0; i < i1; ++i)
                    for (int j = j0; j < j1; ++j) {
                        const double* xr =
                            in +
                            (static_cast<std::size_t>(i + di - 1) * w + (j + dj - 1)) * cin +
                            ci;
                        const double x0 = xr[0], x1 = xr[1], x2 = xr[2], x3 = xr[3];
                        const double x4 = xr[4], x5 = xr[5], x6 = xr[6], x7 = xr[7];
                        double* o = out + (static_cast<std::size_t>(i) * w + j) * cout;
                        for (int co = 0; co < cout; ++co) {
                            double t = o[co];
                            t += x0 * w0[co];
                            t += x1 * w1[co];
                            t += x2 * w2[co];
                            t += x3 * w3[co];
                            t += x4 * w4[co];
                            t += x5 * w5[co];
                            t += x6 * w6[co];
                            t += x7 * w7[co];
                            o[co] = t;
                        }
                    }
            }
            for (; ci < cin; ++ci) {
                const double* wrow = wtap + static_cast<std::size_t>(ci) * cout;
                for (int i = i0; i < i1; ++i)
                    for (int j = j0; j < j1; ++j) {
                        const double x =
                            in[(static_cast<std::size_t>(i + di - 1) * w + (j + dj - 1)) * cin +
                               ci];
                        double* o = out + (static_cast<std::size_t>(i) * w + j) * cout;
                        for (int co = 0; co < cout; ++co) o[co] += x * wrow[co];
                    }
            }
        }
    }
}

void conv2d_grad_bias(const double* up, int h, int w, int cout, double* db) {
    for (int p = 0; p < h * w; ++p) {
        const double* u = up + static_cast<std::size_t>(p) * cout;
        for (int co = 0; co < cout; ++co) db[co] += u[co];
    }
}

void conv2d_grad_weights(const double* __restrict in, int h, int w, int cin,
                         const double* __restrict up, int cout, double* __restrict dw) {
    // Valid output/input position pairs per tap, flattened so the position
    // reduction can be blocked. Falls back to one-position steps for feature
    // maps larger than the lookup buffer.
    int pout[256];
    int pin[256];
    const bool small = h * w <= 256;
    for (int di = 0; di < 3; ++di) {
        const int i0 = std::max(0, 1 - di), i1 = std::min(h, h + 1 - di);
        for (int dj = 0; dj < 3; ++dj) {
            const int j0 = std::max(0, 1 - dj), j1 = std::min(w, w + 1 - dj);
            double* dwtap = dw + (static_cast<std::size_t>(di) * 3 + dj) * cin * cout;
            int np = 0;
            if (small) {
                for (int i = i0; i < i1; ++i)
                    for (int j = j0; j < j1; ++j) {
                        pout[np] = i * w + j;
                        pin[np] = (i + di - 1) * w + (j + dj - 1);
                        ++np;
                    }
            }
            for (int ci = 0; ci < cin; ++ci) {
                double* dwrow = dwtap + static_cast<std::size_t>(ci) * cout;
                if (small) {
                    int b = 0;
                    for (; b + 8 <= np; b += 8) {
                        const double x0 = in[static_cast<std::size_t>(pin[b]) * cin + ci];
                        const double x1 = in[static_cast<std::size_t>(pin[b + 1]) * cin + ci];
                        const double x2 = in[static_cast<std::size_t>(pin[b + 2]) * cin + ci];
                        const double x3 = in[static_cast<std::size_t>(pin[b + 3]) * cin + ci];
                        const double x4 = in[static_cast<std::size_t>(pin[b + 4]) * cin + ci];
                        const double x5 = in[static_cast<std::size_t>(pin[b + 5]) * cin + ci];
                        const double x6 = in[static_cast<std::size_t>(pin[b + 6]) * cin + ci];
                        const double x7 = in[static_cast<std::size_t>(pin[b + 7]) * cin + ci];
                        const double* u0 = up + static_cast<std::size_t>(pout[b]) * cout;
                        const double* u1 = up + static_cast<std::size_t>(pout[b + 1]) * cout;
                        const double* u2 = up + static_cast<std::size_t>(pout[b + 2]) * cout;
                        const double* u3 = up + static_cast<std::size_t>(pout[b + 3]) * cout;
                        const double* u4 = up + static_cast<std::size_t>(pout[b + 4]) * cout;
                        const double* u5 = up + static_cast<std::size_t>(pout[b + 5]) * cout;
                        const double* u6 = up + static_cast<std::size_t>(pout[b + 6]) * cout;
                        const double* u7 = up + static_cast<std::size_t>(pout[b + 7]) * cout;
                        for (int co = 0; co < cout; ++co) {
                            double t = dwrow[co];
                            t += x0 * u0[co];
                            t += x1 * u1[co];
                            t += x2 * u2[co];
                            t += x3 * u3[co];
                            t += x4 * u4[co];
                            t += x5 * u5[co];
                            t += x6 * u6[co];
                            t += x7 * u7[co];
                            dwrow[co] = t;
                        }
                    }
                    for (; b + 4 <= np; b += 4) {
                        const double x0 = in[static_cast<std::size_t>(pin[b]) * cin + ci];
                        const double x1 = in[static_cast<std::size_t>(pin[b + 1]) * cin + ci];
                        const double x2 = in[static_cast<std::size_t>(pin[b + 2]) * cin + ci];
                        const double x3 = in[static_cast<std::size_t>(pin[b + 3]) * cin + ci];
                        const double* u0 = up + static_cast<std::size_t>(pout[b]) * cout;
                        const double* u1 = up + static_cast<std::size_t>(pout[b + 1]) * cout;
                        const double* u2 = up + static_cast<std::size_t>(pout[b + 2]) * cout;
                        const double* u3 = up + static_cast<std::size_t>(pout[b + 3]) * cout;
                        for (int co = 0; co < cout; ++co) {
                            double t = dwrow[co];
                            t += x0 * u0[co];
                            t += x1 * u1[co];
                            t += x2 * u2[co];
                            t += x3 * u3[co];
                            dwrow[co] = t;
                        }
                    }
                    for (; b < np; ++b) {
                        const double x = in[static_cast<std::size_t>(pin[b]) * cin + ci];
                        const double* u = up + static_cast<std::size_t>(pout[b]) * cout;
                        for (int co = 0; co < cout; ++co) dwrow[co] += x * u[co];
                    }
                } else {
                    for (int i = i0; i < i1; ++i)
                        for (int j = j0; j < j1; ++j) {
                            const double x =
                                in[(static_cast<std::size_t>(i + di - 1) * w + (j + dj - 1)) *
                                       cin +
                                   ci];
                            const double* u = up + (static_cast<std::size_t>(i) * w + j) * cout;
                            for (int co = 0; co < cout; ++co) dwrow[co] += x * u[co];
                        }
                }
            }
        }
    }
}

void transpose_conv_weights(const double* weights, int cin, int cout, double* weights_t) {
    for (int tap = 0; tap < 9; ++tap) {
        const double* src = weights + static_cast<std::size_t>(tap) * cin * cout;
        double* dst = weights_t + static_cast<std::size_t>(tap) * cin * cout;
        for (int ci = 0; ci < cin; ++ci)
            for (int co = 0; co < cout; ++co)
                dst[static_cast<std::size_t>(co) * cin + ci] =
                    src[static_cast<std::size_t>(ci) * cout + co];
    }
}

void conv2d_grad_input(const double* __restrict weights_t, int cin, int cout,
                       const double* __restrict up, int h, int w, double* __restrict din) {
    for (std::size_t k = 0; k < static_cast<std::size_t>(h) * w * cin; ++k) din[k] = 0.0;
    for (int di = 0; di < 3; ++di) {
        const int i0 = std::max(0, 1 - di), i1 = std::min(h, h + 1 - di);
        for (int dj = 0; dj < 3; ++dj) {
            const int j0 = std::max(0, 1 - dj), j1 = std::min(w, w + 1 - dj);
            const double* wtap =
                weights_t + (static_cast<std::size_t>(di) * 3 + dj) * cin * cout;
            int co = 0;
            for (; co + 8 <= cout; co += 8) {
                const double* w0 = wtap + static_cast<std::size_t>(co) * cin;
                const double* w1 = w0 + cin;
                const double* w2 = w1 + cin;
                const double* w3 = w2 + cin;
                const double* w4 = w3 + cin;
                const double* w5 = w4 + cin;
                const double* w6 = w5 + cin;
                const double* w7 = w6 + cin;
                for (int i = i0; i < i1; ++i)
                    for (int j = j0; j < j1; ++j) {
                        const double* ur =
                            up + (static_cast<std::size_t>(i) * w + j) * cout + co;
                        const double u0 = ur[0], u1 = ur[1], u2 = ur[2], u3 = ur[3];
                        const double u4 = ur[4], u5 = ur[5], u6 = ur[6], u7 = ur[7];
                        double* d =
                            din + (static_cast<std::size_t>(i + di - 1) * w + (j + dj - 1)) * cin;
                        for (int ci = 0; ci < cin; ++ci) {
                            double t = d[ci];
                            t += u0 * w0[ci];
                            t += u1 * w1[ci];
                            t += u2 * w2[ci];
                            t += u3 * w3[ci];
                            t += u4 * w4[ci];
                            t += u5 * w5[ci];
                            t += u6 * w6[ci];
                            t += u7 * w7[ci];
                            d[ci] = t;
                        }
                    }
            }
            for (; co < cout; ++co) {
                const double* wrow = wtap + static_cast<std::size_t>(co) * cin;
                for (int i = i0; i < i1; ++i)
                    for (int j = j0; j < j1; ++j) {
                        const double u = up[(static_cast<std::size_t>(i) * w + j) * cout + co];
                        double* d =
                            din + (static_cast<std::size_t>(i + di - 1) * w + (j + dj - 1)) * cin;
                        for (int ci = 0; ci < cin; ++ci) d[ci] += u * wrow[ci];
                    }
            }
        }
    }
}

void fc(const double* __restrict in, int n, const double* __restrict weights,
        const double* __restrict bias, int m, double* __restrict out) {
    for (int k = 0; k < m; ++k) out[k] = bias[k];
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        const double x0 = in[i], x1 = in[i + 1], x2 = in[i + 2], x3 = in[i + 3];
        const double x4 = in[i + 4], x5 = in[i + 5], x6 = in[i + 6], x7 = in[i + 7];
        const double* w0 = weights + static_cast<std::size_t>(i) * m;
        const double* w1 = w0 + m;
        const double* w2 = w1 + m;
        const double* w3 = w2 + m;
        const double* w4 = w3 + m;
        const double* w5 = w4 + m;
        const double* w6 = w5 + m;
        const double* w7 = w6 + m;
        for (int k = 0; k < m; ++k) {
            double t = out[k];
            t += x0 * w0[k];
            t += x1 * w1[k];
            t += x2 * w2[k];
            t += x3 * w3[k];
            t += x4 * w4[k];
            t += x5 * w5[k];
            t += x6 * w6[k];
            t += x7 * w7[k];
            out[k] = t;
        }
    }
    for (; i < n; ++i) {
        const double x = in[i];
        const double* wrow = weights + static_cast<std::size_t>(i) * m;
        for (int k = 0; k < m; ++k) out[k] += x * wrow[k];
    }
}

void fc_grad_params(const double* __restrict in, int n, const double* __restrict up, int m,
                    double* __restrict dw, double* __restrict db) {
    for (int k = 0; k < m; ++k) db[k] += up[k];
    for (int i = 0; i < n; ++i) {
        const double x = in[i];
        double* dwrow = dw + static_cast<std::size_t>(i) * m;
        for (int k = 0; k < m; ++k) dwrow[k] += x * up[k];
    }
}

void transpose_fc_weights(const double* weights, int n, int m, double* weights_t) {
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < m; ++k)
            weights_t[static_cast<std::size_t>(k) * n + i] =
                weights[static_cast<std::size_t>(i) * m + k];
}

void fc_grad_input(const double* __restrict weights_t, int n, int m,
                   const double* __restrict up, double* __restrict din) {
    for (int i = 0; i < n; ++i) din[i] = 0.0;
    int k = 0;
    for (; k + 8 <= m; k += 8) {
        const double u0 = up[k], u1 = up[k + 1], u2 = up[k + 2], u3 = up[k + 3];
        const double u4 = up[k + 4], u5 = up[k + 5], u6 = up[k + 6], u7 = up[k + 7];
        const double* w0 = weights_t + static_cast<std::size_t>(k) * n;
        const double* w1 = w0 + n;
        const double* w2 = w1 + n;
        const double* w3 = w2 + n;
        const double* w4 = w3 + n;
        const double* w5 = w4 + n;
        const double* w6 = w5 + n;
        const double* w7 = w6 + n;
        for (int i2 = 0; i2 < n; ++i2) {
            double t = din[i2];
            t += u0 * w0[i2];
            t += u1 * w1[i2];
            t += u2 * w2[i2];
            t += u3 * w3[i2];
            t += u4 * w4[i2];
            t += u5 * w5[i2];
            t += u6 * w6[i2];
            t += u7 * w7[i2];
            din[i2] = t;
        }
    }
    for (; k < m; ++k) {
        const double u = up[k];
        const double* wrow = weights_t + static_cast<std::size_t>(k) * n;
        for (int i2 = 0; i2 < n; ++i2) din[i2] += u * wrow[i2];
    }
}

void relu(const double* in, std::int64_t n, double* out) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_grad(const double* in, const double* up, std::int64_t n, double* din) {
    for (std::int64_t i = 0; i < n; ++i) din[i] = in[i] > 0.0 ? up[i] : 0.0;
}

int gmp_argmax(const double* in, int hw, int c, int channel) {
    int best = 0;
    double best_v = in[channel];
    for (int p = 1; p < hw; ++p) {
        const double v = in[static_cast<std::size_t>(p) * c + channel];
        if (v > best_v) {
            best_v = v;
            best = p;
        }
    }
    return best;
}

} // namespace kernels

namespace {

void require_conv_shapes(const Tensor& input, const Tensor& weights, const Tensor* bias,
                         const Tensor* upstream) {
    if (input.shape.size() != 3) throw ShapeError("conv2d: input must be rank 3 [H,W,Cin]");
    if (weights.shape.size() != 4 || weights.shape[0] != 3 || weights.shape[1] != 3)
        throw ShapeError("conv2d: weights must be [3,3,Cin,Cout], got " +
                         shape_string(weights.shape));
    if (weights.shape[2] != input.shape[2])
        throw ShapeError("conv2d: input channels " + std::to_string(input.shape[2]) +
                         " do not match weight channels " + std::to_string(weights.shape[2]));
    if (bias && bias->shape != std::vector<int>{weights.shape[3]})
        throw ShapeError("conv2d: bias shape " + shape_string(bias->shape) +
                         " does not match output channels " + std::to_string(weights.shape[3]));
    if (upstream)
        require_shape(*upstream, {input.shape[0], input.shape[1], weights.shape[3]},
                      "conv2d upstream");
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    require_conv_shapes(input, weights, &bias, nullptr);
    Tensor out({input.shape[0], input.shape[1], weights.shape[3]});
    kernels::conv2d(input.data.data(), input.shape[0], input.shape[1], input.shape[2],
                    weights.data.data(), bias.data.data(), weights.shape[3], out.data.data());
    return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& upstream) {
    require_conv_shapes(input, weights, nullptr, &upstream);
    const int h = input.shape[0], w = input.shape[1];
    const int cin = input.shape[2], cout = weights.shape[3];
    ConvGrads g{Tensor(weights.shape), Tensor({cout}), Tensor(input.shape)};
    kernels::conv2d_grad_bias(upstream.data.data(), h, w, cout, g.bias.data.data());
    kernels::conv2d_grad_weights(input.data.data(), h, w, cin, upstream.data.data(), cout,
                                 g.weights.data.data());
    std::vector<double> wt(weights.data.size());
    kernels::transpose_conv_weights(weights.data.data(), cin, cout, wt.data());
    kernels::conv2d_grad_input(wt.data(), cin, cout, upstream.data.data(), h, w,
                               g.input.data.data());
    return g;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape);
    kernels::relu(input.data.data(), input.numel(), out.data.data());
    return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& upstream) {
    if (!same_shape(input, upstream)) throw ShapeError("relu_backward: shape mismatch");
    Tensor out(input.shape);
    kernels::relu_grad(input.data.data(), upstream.data.data(), input.numel(),
                       out.data.data());
    return out;
}

Tensor gap(const Tensor& input) {
    if (input.shape.size() != 3) throw ShapeError("gap: input must be rank 3 [H,W,C]");
    const int hw = input.shape[0] * input.shape[1], c = input.shape[2];
    Tensor out({c});
    for (int k = 0; k < c; ++k) {
        double sum = 0.0;
        for (int p = 0; p < hw; ++p) sum += input.data[static_cast<std::size_t>(p) * c + k];
        out.data[static_cast<std::size_t>(k)] = sum / hw;
    }
    return out;
}

Tensor gap_backward(const Tensor& input, const Tensor& upstream) {
    if (input.shape.size() != 3) throw ShapeError("gap_backward: input must be rank 3");
    require_shape(upstream, {input.shape[2]}, "gap upstream");
    const int hw = input.shape[0] * input.shape[1], c = input.shape[2];
    Tensor din(input.shape);
    for (int p = 0; p < hw; ++p)
        for (int k = 0; k < c; ++k)
            din.data[static_cast<std::size_t>(p) * c + k] =
                upstream.data[static_cast<std::size_t>(k)] / hw;
    return din;
}

Tensor gmp(const Tensor& input) {
    if (input.shape.size() != 3) throw ShapeError("gmp: input must be rank 3 [H,W,C]");
    const int hw = input.shape[0] * input.shape[1], c = input.shape[2];
    Tensor out({c});
    for (int k = 0; k < c; ++k) {
        const int p = kernels::gmp_argmax(input.data.data(), hw, c, k);
        out.data[static_cast<std::size_t>(k)] = input.data[static_cast<std::size_t>(p) * c + k];
    }
    return out;
}

Tensor gmp_backward(const Tensor& input, const Tensor& upstream) {
    if (input.shape.size() != 3) throw ShapeError("gmp_backward: input must be rank 3");
    require_shape(upstream, {input.shape[2]}, "gmp upstream");
    const int hw = input.shape[0] * input.shape[1], c = input.shape[2];
    Tensor din(input.shape);
    for (int k = 0; k < c; ++k) {
        const int p = kernels::gmp_argmax(input.data.data(), hw, c, k);
        din.data[static_cast<std::size_t>(p) * c + k] = upstream.data[static_cast<std::size_t>(k)];
    }
    return din;
}

Tensor concat(const Tensor& a, const Tensor& b) {
    if (a.shape.size() != 1 || b.shape.size() != 1)
        throw ShapeError("concat: inputs must be rank 1");
    Tensor out({a.shape[0] + b.shape[0]});
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
    return out;
}

std::pair<Tensor, Tensor> concat_backward(const Tensor& a, const Tensor& b,
                                          const Tensor& upstream) {
    require_shape(upstream, {a.shape[0] + b.shape[0]}, "concat upstream");
    Tensor da(a.shape), db(b.shape);
    std::copy(upstream.data.begin(),
              upstream.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()),
              da.data.begin());
    std::copy(upstream.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()),
              upstream.data.end(), db.data.begin());
    return {std::move(da), std::move(db)};
}

Tensor fc(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    if (input.shape.size() != 1 || weights.shape.size() != 2)
        throw ShapeError("fc: input must be rank 1 and weights rank 2");
    if (weights.shape[0] != input.shape[0])
        throw ShapeError("fc: weights expect input size " + std::to_string(weights.shape[0]) +
                         ", got " + std::to_string(input.shape[0]));
    require_shape(bias, {weights.shape[1]}, "fc bias");
    Tensor out({weights.shape[1]});
    kernels::fc(input.data.data(), input.shape[0], weights.data.data(), bias.data.data(),
                weights.shape[1], out.data.data());
    return out;
}

FcGrads fc_backward(const Tensor& input, const Tensor& weights, const Tensor& upstream) {
    if (input.shape.size() != 1 || weights.shape.size() != 2 ||
        weights.shape[0] != input.shape[0])
        throw ShapeError("fc_backward: shape mismatch");
    require_shape(upstream, {weights.shape[1]}, "fc upstream");
    const int n = weights.shape[0], m = weights.shape[1];
    FcGrads g{Tensor(weights.shape), Tensor({m}), Tensor({n})};
    kernels::fc_grad_params(input.data.data(), n, upstream.data.data(), m,
                            g.weights.data.data(), g.bias.data.data());
    std::vector<double> wt(weights.data.size());
    kernels::transpose_fc_weights(weights.data.data(), n, m, wt.data());
    kernels::fc_grad_input(wt.data(), n, m, upstream.data.data(), g.input.data.data());
    return g;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& at,
                        double h) {
    Tensor grad(at.shape);
    Tensor probe = at;
    for (std::size_t i = 0; i < probe.data.size(); ++i) {
        const double saved = probe.data[i];
        probe.data[i] = saved + h;
        const double fp = f(probe);
        probe.data[i] = saved - h;
        const double fm = f(probe);
        probe.data[i] = saved;
        grad.data[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

Tensor init_params(const std::vector<int>& shape, std::uint64_t seed,
                   std::uint64_t tensor_index) {
    Tensor t(shape);
    if (shape.size() <= 1) return t;
    const double fan_in = static_cast<double>(t.numel() / shape.back());
    const double bound = std::sqrt(6.0 / fan_in);
    Rng rng(substream_seed(seed, rng_tag::param_init + tensor_index));
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

} // namespace magskin
