#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "magskin/tensor.hpp"
#include "magskin/vec3.hpp"

namespace magskin {

// Default architecture: 4x4x3 input, four 3x3 same-padding conv layers
// widening 3->32->64->128->256 with ReLU, global average and max pooling
// concatenated to 512 features, then FC 512->512->256->128->64->3 with ReLU
// on hidden layers and a linear output.
struct ModelSpec {
    int input_h = 4;
    int input_w = 4;
    int input_c = 3;
    std::vector<int> conv_channels{32, 64, 128, 256};
    std::vector<int> fc_dims{512, 256, 128, 64, 3};

    int feature_dim() const { return 2 * conv_channels.back(); }
    int input_numel() const { return input_h * input_w * input_c; }
    int output_dim() const { return fc_dims.back(); }
    std::int64_t param_count() const;
};

inline constexpr std::int64_t kDefaultParamCount = 823747;

// Parameter tensors in fixed order: conv1.weights, conv1.bias, ...,
// fcN.weights, fcN.bias. The order is the contract for optimizer state and
// checkpoints.
struct ModelParams {
    ModelSpec spec;
    std::vector<Tensor> tensors;
};

std::vector<std::string> param_names(const ModelSpec& spec);
std::vector<std::vector<int>> param_shapes(const ModelSpec& spec);

ModelParams init_model(const ModelSpec& spec, std::uint64_t seed);

// All-zero tensors in parameter order, for gradient accumulation.
ModelParams zeros_like(const ModelSpec& spec);
void zero_params(ModelParams& params);

// Reusable per-thread buffers: layer activations kept for the backward pass
// plus transpose scratch. No allocation happens inside forward or backward
// once constructed.
struct ModelWorkspace {
    explicit ModelWorkspace(const ModelSpec& spec);

    ModelSpec spec;
    Tensor input;
    std::vector<Tensor> conv_pre;
    std::vector<Tensor> conv_act;
    Tensor pooled_avg;
    Tensor pooled_max;
    Tensor features;
    std::vector<Tensor> fc_pre;
    std::vector<Tensor> fc_act;

    std::vector<Tensor> conv_delta;
    Tensor feature_delta;
    std::vector<Tensor> fc_delta;
    std::vector<double> transpose_scratch;
};

// Transposed copies of the weight tensors used by the input-gradient kernels.
// Valid for one parameter value; refresh after every optimizer step. Sharing
// one cache across a batch removes the transposes from the per-sample path.
struct BackwardCache {
    explicit BackwardCache(const ModelSpec& spec);

    std::vector<std::vector<double>> conv_wt;
    std::vector<std::vector<double>> fc_wt;

    void refresh(const ModelParams& params);
};

// Reshapes a flat channel vector (channel k = 3*sensor + axis) to the
// [H,W,3] input tensor; the flat order coincides with row-major layout.
Tensor to_input(const ModelSpec& spec, std::span<const double> channels);

// Returns the output tensor held inside ws; valid until the next call.
const Tensor& forward(const ModelParams& params, const Tensor& input, ModelWorkspace& ws);
Tensor forward(const ModelParams& params, const Tensor& input);

// Mean over output coordinates of squared error. Gradients ACCUMULATE into
// grad_accum (callers zero it once per batch); returns the sample loss. When
// no cache is passed the weight transposes are done in ws scratch per call.
double loss_and_grads(const ModelParams& params, const Tensor& input, const Vec3& target,
                      ModelParams& grad_accum, ModelWorkspace& ws,
                      const BackwardCache* cache = nullptr);

// Convenience wrapper allocating its own workspace and gradient buffers.
std::pair<double, ModelParams> loss_and_grads(const ModelParams& params, const Tensor& input,
                                              const Vec3& target);

// Binary checkpoint: magic MSKN, version, named parameter tensors, then the
// normalization means and stds (input_numel each). Bit-exact round trip.
void checkpoint_save(const ModelParams& params, const std::vector<double>& norm_mean,
                     const std::vector<double>& norm_std, const std::string& path);

struct Checkpoint {
    ModelParams params;
    std::vector<double> norm_mean;
    std::vector<double> norm_std;
};

// Verifies magic, version, layer names and shapes against `expected`;
// throws FormatError naming the first mismatch.
Checkpoint checkpoint_load(const std::string& path, const ModelSpec& expected = ModelSpec{});

} // namespace magskin
