#include "magskin/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "magskin/errors.hpp"
#include "magskin/nn_ops.hpp"
#include "magskin/rng.hpp"

namespace magskin {

namespace {

std::size_t conv_w_idx(std::size_t k) { return 2 * k; }
std::size_t conv_b_idx(std::size_t k) { return 2 * k + 1; }
std::size_t fc_w_idx(const ModelSpec& s, std::size_t k) {
    return 2 * s.conv_channels.size() + 2 * k;
}
std::size_t fc_b_idx(const ModelSpec& s, std::size_t k) { return fc_w_idx(s, k) + 1; }

void validate_spec(const ModelSpec& s) {
    if (s.input_h <= 0 || s.input_w <= 0 || s.input_c <= 0 || s.conv_channels.empty() ||
        s.fc_dims.empty())
        throw ShapeError("model spec must have positive input dims and non-empty layer lists");
}

// Cold path: find which layer produced the first non-finite value.
[[noreturn]] void report_nonfinite(const ModelWorkspace& ws) {
    auto bad = [](const Tensor& t) {
        for (double v : t.data)
            if (!std::isfinite(v)) return true;
        return false;
    };
    for (std::size_t k = 0; k < ws.conv_pre.size(); ++k)
        if (bad(ws.conv_pre[k]))
            throw DivergenceError("non-finite loss: first bad activation in conv" +
                                  std::to_string(k + 1));
    for (std::size_t k = 0; k < ws.fc_pre.size(); ++k)
        if (bad(ws.fc_pre[k]))
            throw DivergenceError("non-finite loss: first bad activation in fc" +
                                  std::to_string(k + 1));
    throw DivergenceError("non-finite loss with finite activations (bad target?)");
}

} // namespace

std::int64_t ModelSpec::param_count() const {
    std::int64_t n = 0;
    for (const auto& shape : param_shapes(*this)) n += Tensor::numel_of(shape);
    return n;
}

std::vector<std::vector<int>> param_shapes(const ModelSpec& s) {
    validate_spec(s);
    std::vector<std::vector<int>> shapes;
    int cin = s.input_c;
    for (int cout : s.conv_channels) {
        shapes.push_back({3, 3, cin, cout});
        shapes.push_back({cout});
        cin = cout;
    }
    int n = s.feature_dim();
    for (int m : s.fc_dims) {
        shapes.push_back({n, m});
        shapes.push_back({m});
        n = m;
    }
    return shapes;
}

std::vector<std::string> param_names(const ModelSpec& s) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < s.conv_channels.size(); ++i) {
        names.push_back("conv" + std::to_string(i + 1) + ".weights");
        names.push_back("conv" + std::to_string(i + 1) + ".bias");
    }
    for (std::size_t i = 0; i < s.fc_dims.size(); ++i) {
        names.push_back("fc" + std::to_string(i + 1) + ".weights");
        names.push_back("fc" + std::to_string(i + 1) + ".bias");
    }
    return names;
}

ModelParams init_model(const ModelSpec& spec, std::uint64_t seed) {
    ModelParams p{spec, {}};
    const auto shapes = param_shapes(spec);
    p.tensors.reserve(shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i)
        p.tensors.push_back(init_params(shapes[i], seed, i));
    return p;
}

ModelParams zeros_like(const ModelSpec& spec) {
    ModelParams p{spec, {}};
    for (const auto& shape : param_shapes(spec)) p.tensors.emplace_back(shape);
    return p;
}

void zero_params(ModelParams& params) {
    for (auto& t : params.tensors) t.fill(0.0);
}

ModelWorkspace::ModelWorkspace(const ModelSpec& s) : spec(s) {
    validate_spec(s);
    input = Tensor({s.input_h, s.input_w, s.input_c});
    std::int64_t max_w = 0;
    int cin = s.input_c;
    for (int cout : s.conv_channels) {
        conv_pre.emplace_back(std::vector<int>{s.input_h, s.input_w, cout});
        conv_act.emplace_back(std::vector<int>{s.input_h, s.input_w, cout});
        conv_delta.emplace_back(std::vector<int>{s.input_h, s.input_w, cout});
        max_w = std::max(max_w, static_cast<std::int64_t>(9) * cin * cout);
        cin = cout;
    }
    const int c_last = s.conv_channels.back();
    pooled_avg = Tensor({c_last});
    pooled_max = Tensor({c_last});
    features = Tensor({2 * c_last});
    feature_delta = Tensor({2 * c_last});
    int n = s.feature_dim();
    for (std::size_t k = 0; k < s.fc_dims.size(); ++k) {
        const int m = s.fc_dims[k];
        fc_pre.emplace_back(std::vector<int>{m});
        if (k + 1 < s.fc_dims.size()) fc_act.emplace_back(std::vector<int>{m});
        fc_delta.emplace_back(std::vector<int>{n});
        max_w = std::max(max_w, static_cast<std::int64_t>(n) * m);
        n = m;
    }
    fc_delta.emplace_back(std::vector<int>{s.fc_dims.back()});
    transpose_scratch.resize(static_cast<std::size_t>(max_w));
}

Tensor to_input(const ModelSpec& spec, std::span<const double> channels) {
    Tensor t({spec.input_h, spec.input_w, spec.input_c});
    if (static_cast<std::int64_t>(channels.size()) != t.numel())
        throw ShapeError("to_input: expected " + std::to_string(t.numel()) +
                         " channels, got " + std::to_string(channels.size()));
    std::memcpy(t.data.data(), channels.data(), channels.size() * sizeof(double));
    return t;
}

const Tensor& forward(const ModelParams& p, const Tensor& input, ModelWorkspace& ws) {
    if (p.spec.param_count() != [&] {
            std::int64_t n = 0;
            for (const auto& t : p.tensors) n += t.numel();
            return n;
        }())
        throw ShapeError("forward: params do not match their spec");
    require_shape(input, {ws.spec.input_h, ws.spec.input_w, ws.spec.input_c}, "model input");
    const int h = ws.spec.input_h, w = ws.spec.input_w;
    const auto& cc = ws.spec.conv_channels;

    ws.input = input;
    const double* x = ws.input.data.data();
    int cin = ws.spec.input_c;
    for (std::size_t k = 0; k < cc.size(); ++k) {
        kernels::conv2d(x, h, w, cin, p.tensors[conv_w_idx(k)].data.data(),
                        p.tensors[conv_b_idx(k)].data.data(), cc[k],
                        ws.conv_pre[k].data.data());
        kernels::relu(ws.conv_pre[k].data.data(), ws.conv_pre[k].numel(),
                      ws.conv_act[k].data.data());
        x = ws.conv_act[k].data.data();
        cin = cc[k];
    }

    const int hw = h * w, c_last = cc.back();
    const double* a = ws.conv_act.back().data.data();
    for (int c = 0; c < c_last; ++c) {
        double sum = 0.0;
        for (int pos = 0; pos < hw; ++pos) sum += a[static_cast<std::size_t>(pos) * c_last + c];
        ws.pooled_avg.data[static_cast<std::size_t>(c)] = sum / hw;
        const int pos = kernels::gmp_argmax(a, hw, c_last, c);
        ws.pooled_max.data[static_cast<std::size_t>(c)] =
            a[static_cast<std::size_t>(pos) * c_last + c];
    }
    std::memcpy(ws.features.data.data(), ws.pooled_avg.data.data(), sizeof(double) * c_last);
    std::memcpy(ws.features.data.data() + c_last, ws.pooled_max.data.data(),
                sizeof(double) * c_last);

    x = ws.features.data.data();
    int n = ws.spec.feature_dim();
    for (std::size_t k = 0; k < ws.spec.fc_dims.size(); ++k) {
        const int m = ws.spec.fc_dims[k];
        kernels::fc(x, n, p.tensors[fc_w_idx(ws.spec, k)].data.data(),
                    p.tensors[fc_b_idx(ws.spec, k)].data.data(), m, ws.fc_pre[k].data.data());
        if (k + 1 < ws.spec.fc_dims.size()) {
            kernels::relu(ws.fc_pre[k].data.data(), m, ws.fc_act[k].data.data());
            x = ws.fc_act[k].data.data();
        }
        n = m;
    }
    return ws.fc_pre.back();
}

Tensor forward(const ModelParams& p, const Tensor& input) {
    ModelWorkspace ws(p.spec);
    return forward(p, input, ws);
}

BackwardCache::BackwardCache(const ModelSpec& spec) {
    int cin = spec.input_c;
    for (int cout : spec.conv_channels) {
        conv_wt.emplace_back(static_cast<std::size_t>(9) * cin * cout);
        cin = cout;
    }
    int n = spec.feature_dim();
    for (int m : spec.fc_dims) {
        fc_wt.emplace_back(static_cast<std::size_t>(n) * m);
        n = m;
    }
}

void BackwardCache::refresh(const ModelParams& p) {
    const auto& spec = p.spec;
    int cin = spec.input_c;
    for (std::size_t k = 0; k < spec.conv_channels.size(); ++k) {
        const int cout = spec.conv_channels[k];
        kernels::transpose_conv_weights(p.tensors[conv_w_idx(k)].data.data(), cin, cout,
                                        conv_wt[k].data());
        cin = cout;
    }
    int n = spec.feature_dim();
    for (std::size_t k = 0; k < spec.fc_dims.size(); ++k) {
        const int m = spec.fc_dims[k];
        kernels::transpose_fc_weights(p.tensors[fc_w_idx(spec, k)].data.data(), n, m,
                                      fc_wt[k].data());
        n = m;
    }
}

double loss_and_grads(const ModelParams& p, const Tensor& input, const Vec3& target,
                      ModelParams& g, ModelWorkspace& ws, const BackwardCache* cache) {
    if (ws.spec.output_dim() != 3)
        throw ShapeError("loss_and_grads: model output dimension must be 3");
    const Tensor& out = forward(p, input, ws);
    const double ex = out.data[0] - target.x;
    const double ey = out.data[1] - target.y;
    const double ez = out.data[2] - target.z;
    const double loss = (ex * ex + ey * ey + ez * ez) / 3.0;
    if (!std::isfinite(loss)) report_nonfinite(ws);

    const auto& spec = ws.spec;
    const int h = spec.input_h, w = spec.input_w, hw = h * w;
    const std::size_t nconv = spec.conv_channels.size();
    const std::size_t nfc = spec.fc_dims.size();
    double* scratch = ws.transpose_scratch.data();

    Tensor& out_delta = ws.fc_delta[nfc];
    out_delta.data[0] = 2.0 / 3.0 * ex;
    out_delta.data[1] = 2.0 / 3.0 * ey;
    out_delta.data[2] = 2.0 / 3.0 * ez;

    for (std::size_t k = nfc; k-- > 0;) {
        const int n = k == 0 ? spec.feature_dim() : spec.fc_dims[k - 1];
        const int m = spec.fc_dims[k];
        Tensor& up = ws.fc_delta[k + 1];
        if (k + 1 < nfc)
            kernels::relu_grad(ws.fc_pre[k].data.data(), up.data.data(), m, up.data.data());
        const double* x =
            k == 0 ? ws.features.data.data() : ws.fc_act[k - 1].data.data();
        kernels::fc_grad_params(x, n, up.data.data(), m,
                                g.tensors[fc_w_idx(spec, k)].data.data(),
                                g.tensors[fc_b_idx(spec, k)].data.data());
        const double* wt;
        if (cache) {
            wt = cache->fc_wt[k].data();
        } else {
            kernels::transpose_fc_weights(p.tensors[fc_w_idx(spec, k)].data.data(), n, m,
                                          scratch);
            wt = scratch;
        }
        kernels::fc_grad_input(wt, n, m, up.data.data(), ws.fc_delta[k].data.data());
    }

    // Split the feature gradient back through the two pooling branches.
    const int c_last = spec.conv_channels.back();
    const double* d_avg = ws.fc_delta[0].data.data();
    const double* d_max = d_avg + c_last;
    Tensor& d_act = ws.conv_delta[nconv - 1];
    const double* a = ws.conv_act[nconv - 1].data.data();
    const double inv_hw = 1.0 / hw;
    for (int pos = 0; pos < hw; ++pos)
        for (int c = 0; c < c_last; ++c)
            d_act.data[static_cast<std::size_t>(pos) * c_last + c] = d_avg[c] * inv_hw;
    for (int c = 0; c < c_last; ++c) {
        const int pos = kernels::gmp_argmax(a, hw, c_last, c);
        d_act.data[static_cast<std::size_t>(pos) * c_last + c] += d_max[c];
    }

    for (std::size_t k = nconv; k-- > 0;) {
        const int cin = k == 0 ? spec.input_c : spec.conv_channels[k - 1];
        const int cout = spec.conv_channels[k];
        Tensor& up = ws.conv_delta[k];
        kernels::relu_grad(ws.conv_pre[k].data.data(), up.data.data(), up.numel(),
                           up.data.data());
        const double* x = k == 0 ? ws.input.data.data() : ws.conv_act[k - 1].data.data();
        kernels::conv2d_grad_bias(up.data.data(), h, w, cout,
                                  g.tensors[conv_b_idx(k)].data.data());
        kernels::conv2d_grad_weights(x, h, w, cin, up.data.data(), cout,
                                     g.tensors[conv_w_idx(k)].data.data());
        if (k > 0) {
            const double* wt;
            if (cache) {
                wt = cache->conv_wt[k].data();
            } else {
                kernels::transpose_conv_weights(p.tensors[conv_w_idx(k)].data.data(), cin,
                                                cout, scratch);
                wt = scratch;
            }
            kernels::conv2d_grad_input(wt, cin, cout, up.data.data(), h, w,
                                       ws.conv_delta[k - 1].data.data());
        }
    }
    return loss;
}

std::pair<double, ModelParams> loss_and_grads(const ModelParams& p, const Tensor& input,
                                              const Vec3& target) {
    ModelWorkspace ws(p.spec);
    ModelParams g = zeros_like(p.spec);
    const double loss = loss_and_grads(p, input, target, g, ws);
    return {loss, std::move(g)};
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_bytes(std::FILE* f, const void* data, std::size_t n) {
    if (std::fwrite(data, 1, n, f) != n) throw FormatError("checkpoint write failed");
}

void put_u32(std::FILE* f, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(f, b, 4);
}

void put_u64(std::FILE* f, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(f, b, 8);
}

void put_f64(std::FILE* f, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(f, bits);
}

void get_bytes(std::FILE* f, void* data, std::size_t n) {
    if (std::fread(data, 1, n, f) != n) throw FormatError("checkpoint truncated");
}

std::uint32_t get_u32(std::FILE* f) {
    unsigned char b[4];
    get_bytes(f, b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::FILE* f) {
    unsigned char b[8];
    get_bytes(f, b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::FILE* f) {
    const std::uint64_t bits = get_u64(f);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

constexpr char kMagic[4] = {'M', 'S', 'K', 'N'};
constexpr std::uint32_t kVersion = 1;

} // namespace

void checkpoint_save(const ModelParams& params, const std::vector<double>& norm_mean,
                     const std::vector<double>& norm_std, const std::string& path) {
    const std::size_t n_chan = static_cast<std::size_t>(params.spec.input_numel());
    if (norm_mean.size() != n_chan || norm_std.size() != n_chan)
        throw ShapeError("checkpoint_save: normalization stats must have " +
                         std::to_string(n_chan) + " channels");
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw ConfigError("cannot open checkpoint for writing: " + path);
    put_bytes(f.get(), kMagic, 4);
    put_u32(f.get(), kVersion);
    const auto names = param_names(params.spec);
    put_u32(f.get(), static_cast<std::uint32_t>(params.tensors.size()));
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        const Tensor& t = params.tensors[i];
        put_u32(f.get(), static_cast<std::uint32_t>(names[i].size()));
        put_bytes(f.get(), names[i].data(), names[i].size());
        put_u32(f.get(), static_cast<std::uint32_t>(t.shape.size()));
        for (int e : t.shape) put_u64(f.get(), static_cast<std::uint64_t>(e));
        for (double v : t.data) put_f64(f.get(), v);
    }
    for (double v : norm_mean) put_f64(f.get(), v);
    for (double v : norm_std) put_f64(f.get(), v);
    if (std::fflush(f.get()) != 0) throw FormatError("checkpoint write failed");
}

Checkpoint checkpoint_load(const std::string& path, const ModelSpec& expected) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw ConfigError("cannot open checkpoint: " + path);
    char magic[4];
    get_bytes(f.get(), magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("not a checkpoint file (bad magic): " + path);
    const std::uint32_t version = get_u32(f.get());
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));

    const auto names = param_names(expected);
    const auto shapes = param_shapes(expected);
    const std::uint32_t count = get_u32(f.get());
    if (count != names.size())
        throw FormatError("checkpoint holds " + std::to_string(count) +
                          " tensors, expected " + std::to_string(names.size()));

    Checkpoint ck{{expected, {}}, {}, {}};
    for (std::size_t i = 0; i < names.size(); ++i) {
        const std::uint32_t name_len = get_u32(f.get());
        if (name_len > 256) throw FormatError("checkpoint tensor name too long");
        std::string name(name_len, '\0');
        get_bytes(f.get(), name.data(), name_len);
        const std::uint32_t rank = get_u32(f.get());
        if (rank > 8) throw FormatError("checkpoint tensor rank too large");
        std::vector<int> shape(rank);
        for (auto& e : shape) e = static_cast<int>(get_u64(f.get()));
        if (name != names[i] || shape != shapes[i])
            throw FormatError("checkpoint layer " + std::to_string(i) + " (" + name +
                              " " + shape_string(shape) + ") does not match expected " +
                              names[i] + " " + shape_string(shapes[i]));
        Tensor t(shape);
        for (auto& v : t.data) v = get_f64(f.get());
        ck.params.tensors.push_back(std::move(t));
    }
    const std::size_t n_chan = static_cast<std::size_t>(expected.input_numel());
    ck.norm_mean.resize(n_chan);
    ck.norm_std.resize(n_chan);
    for (auto& v : ck.norm_mean) v = get_f64(f.get());
    for (auto& v : ck.norm_std) v = get_f64(f.get());
    char extra;
    if (std::fread(&extra, 1, 1, f.get()) != 0)
        throw FormatError("checkpoint has trailing bytes");
    return ck;
}

} // namespace magskin
