#pragma once

#include <cstdint>
#include <functional>
#include <utility>

#include "magskin/tensor.hpp"

namespace magskin {

struct ConvGrads {
    Tensor weights;
    Tensor bias;
    Tensor input;
};

struct FcGrads {
    Tensor weights;
    Tensor bias;
    Tensor input;
};

// 3x3 convolution, stride 1, zero same-padding.
// input [H,W,Cin], weights [3,3,Cin,Cout], bias [Cout] -> [H,W,Cout].
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias);
ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& upstream);

// Elementwise max(0, x). Backward passes upstream where input > 0; the
// subgradient at exactly 0 is 0.
Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& upstream);

// Global average / max pooling [H,W,C] -> [C]. Max pooling ties break to the
// first maximal position in row-major order.
Tensor gap(const Tensor& input);
Tensor gap_backward(const Tensor& input, const Tensor& upstream);
Tensor gmp(const Tensor& input);
Tensor gmp_backward(const Tensor& input, const Tensor& upstream);

Tensor concat(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> concat_backward(const Tensor& a, const Tensor& b,
                                          const Tensor& upstream);

// out = input^T W + bias. input [N], weights [N,M], bias [M] -> [M].
Tensor fc(const Tensor& input, const Tensor& weights, const Tensor& bias);
FcGrads fc_backward(const Tensor& input, const Tensor& weights, const Tensor& upstream);

// Central-difference gradient of a scalar function, the reference oracle for
// every backward implementation.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& at,
                        double h = 1e-5);

// Fan-in-scaled uniform init in +-sqrt(6/fan_in) with fan_in = numel/last
// extent; rank-1 tensors (biases) are zero and consume no randomness.
// tensor_index selects an independent stream per parameter tensor.
Tensor init_params(const std::vector<int>& shape, std::uint64_t seed,
                   std::uint64_t tensor_index);

// Raw kernels shared by the public ops and the model's fused passes.
// Gradient kernels accumulate into dw/db (callers zero them once per batch
// chunk) and overwrite din. Summation order inside each kernel is fixed, so
// results are reproducible regardless of threading.
namespace kernels {

void conv2d(const double* in, int h, int w, int cin, const double* weights,
            const double* bias, int cout, double* out);
void conv2d_grad_bias(const double* up, int h, int w, int cout, double* db);
void conv2d_grad_weights(const double* in, int h, int w, int cin, const double* up, int cout,
                         double* dw);
// [3,3,Cin,Cout] -> [3,3,Cout,Cin]; the transposed layout turns the channel
// reduction in the input gradient into broadcast accumulation. Transposing
// is hoisted out of the kernel so callers can reuse it across samples.
void transpose_conv_weights(const double* weights, int cin, int cout, double* weights_t);
void conv2d_grad_input(const double* weights_t, int cin, int cout, const double* up, int h,
                       int w, double* din);

void fc(const double* in, int n, const double* weights, const double* bias, int m,
        double* out);
void fc_grad_params(const double* in, int n, const double* up, int m, double* dw, double* db);
// [N,M] -> [M,N], same reuse contract as the conv transpose.
void transpose_fc_weights(const double* weights, int n, int m, double* weights_t);
void fc_grad_input(const double* weights_t, int n, int m, const double* up, double* din);

void relu(const double* in, std::int64_t n, double* out);
void relu_grad(const double* in, const double* up, std::int64_t n, double* din);

// First maximal position in row-major order; shared so forward, backward and
// the model agree on the tie-break.
int gmp_argmax(const double* in, int hw, int c, int channel);

} // namespace kernels

} // namespace magskin
