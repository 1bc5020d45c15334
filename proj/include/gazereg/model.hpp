#pragma once

#include "gazereg/nn.hpp"
#include "gazereg/rng.hpp"

#include <sstream>
#include <string>
#include <vector>

namespace gazereg::model {

enum class DilationMode : std::uint8_t {
    ModExponent, // d_n = 2^((n-1) mod 7): 1,2,4,8,16,32,64,1 -> r_8 = 257
    Literal,     // d_n = 2^(n-1) mod 7:   1,2,4,1,2,4,1,2    -> r_8 = 35 (ablation)
};

inline std::vector<int> dilation_schedule(int n_layers, DilationMode mode = DilationMode::ModExponent) {
    if (n_layers < 1) {
        throw ArgumentError("dilation_schedule needs n_layers >= 1");
    }
    std::vector<int> out(static_cast<std::size_t>(n_layers));
    if (mode == DilationMode::ModExponent) {
        for (int n = 1; n <= n_layers; ++n) {
            out[n - 1] = 1 << ((n - 1) % 7);
        }
    } else {
        int pow_mod = 1; // 2^(n-1) mod 7, never zero
        for (int n = 1; n <= n_layers; ++n) {
            out[n - 1] = pow_mod;
            pow_mod = (pow_mod * 2) % 7;
        }
    }
    return out;
}

struct ModelConfig {
    int n_conv_layers = 8;
    int growth_rate = 32;
    int kernel = 3;
    int stride = 1;
    int input_channels = 2;
    int embed_dim = 128;
    int head_hidden = 128;
    double dropout_rate = 0.3;
    int n_targets = 3;
    DilationMode dilation_mode = DilationMode::ModExponent;
    // The output bias starts at the rating-scale midpoint so training spends
    // its steps on deviations rather than on the global offset.
    double output_bias_init = 4.0;

    std::vector<int> dilations() const { return dilation_schedule(n_conv_layers, dilation_mode); }

    // Input channels of conv layer n (1-based): the input plus all previous
    // layers' feature maps.
    int conv_in_channels(int layer) const { return input_channels + growth_rate * (layer - 1); }

    // Width of the full concatenation entering the GAP stage.
    int concat_width() const { return input_channels + growth_rate * n_conv_layers; }

    void validate() const {
        if (n_conv_layers < 1 || growth_rate < 1 || input_channels < 1 || embed_dim < 1 ||
            head_hidden < 1 || n_targets < 1) {
            throw ConfigError("model config dimensions must be >= 1");
        }
        if (kernel != 3 || stride != 1) {
            throw ConfigError("the architecture uses kernel 3 and stride 1");
        }
        if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
            throw ConfigError("dropout_rate must be in [0, 1)");
        }
    }
};

// r_n = 1 + sum_i d_i * (k - 1).
inline int receptive_field(const ModelConfig& config) {
    int r = 1;
    for (int d : config.dilations()) {
        r += d * (config.kernel - 1);
    }
    return r;
}

// Pre-activation DenseNet: layer 1 is a bare convolution on the input;
// layers 2..n are BN-ReLU-Conv on the concatenation of the input and all
// previous layers' outputs; BN-ReLU-GAP over the full concatenation, an
// embedding FC, then the regression head FC -> ReLU -> Dropout -> FC.
template <typename T>
struct Model {
    ModelConfig config;
    std::vector<nn::Parameter<T>> conv_w;      // conv<n>.w, (growth, C_in(n), kernel)
    std::vector<nn::BatchNormState<T>> pre_bn; // bn<n> preceding conv layers 2..n
    nn::BatchNormState<T> gap_bn;
    nn::Parameter<T> embed_w, embed_b;
    nn::Parameter<T> head1_w, head1_b, head2_w, head2_b;
    std::mt19937_64 dropout_rng;

    std::vector<nn::Parameter<T>*> parameters() {
        std::vector<nn::Parameter<T>*> out;
        for (auto& w : conv_w) {
            out.push_back(&w);
        }
        for (auto& bn : pre_bn) {
            out.push_back(&bn.gamma);
            out.push_back(&bn.beta);
        }
        out.push_back(&gap_bn.gamma);
        out.push_back(&gap_bn.beta);
        for (auto* p : {&embed_w, &embed_b, &head1_w, &head1_b, &head2_w, &head2_b}) {
            out.push_back(p);
        }
        return out;
    }

    nn::ConvSpec conv_spec(int layer) const { // 1-based
        nn::ConvSpec spec;
        spec.in_channels = config.conv_in_channels(layer);
        spec.out_channels = config.growth_rate;
        spec.kernel = config.kernel;
        spec.stride = config.stride;
        spec.dilation = config.dilations()[static_cast<std::size_t>(layer - 1)];
        spec.padding = spec.dilation; // preserves sequence length with kernel 3
        return spec;
    }

    void zero_grad() {
        for (auto* p : parameters()) {
            p->zero_grad();
        }
    }
};

template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model<T> model;
    model.config = config;
    auto init_rng = make_rng(seed, RngStream::Init);
    model.dropout_rng = make_rng(seed, RngStream::Dropout);

    const auto dils = config.dilations();
    for (int n = 1; n <= config.n_conv_layers; ++n) {
        const int c_in = config.conv_in_channels(n);
        if (c_in != config.input_channels + config.growth_rate * (n - 1)) {
            throw ConfigError("channel bookkeeping violated at layer " + std::to_string(n));
        }
        nn::Parameter<T> w("conv" + std::to_string(n) + ".w",
                           {config.growth_rate, c_in, config.kernel});
        nn::init_uniform_fanin(w.value, static_cast<std::int64_t>(c_in) * config.kernel, init_rng);
        model.conv_w.push_back(std::move(w));
        if (n >= 2) {
            model.pre_bn.emplace_back("bn" + std::to_string(n), c_in);
        }
    }
    const int c_total = config.concat_width();
    if (c_total != config.conv_in_channels(config.n_conv_layers) + config.growth_rate) {
        throw ConfigError("channel bookkeeping violated at the GAP stage");
    }
    model.gap_bn = nn::BatchNormState<T>("bn_gap", c_total);

    model.embed_w = nn::Parameter<T>("embed.w", {config.embed_dim, c_total});
    model.embed_b = nn::Parameter<T>("embed.b", {config.embed_dim});
    nn::init_uniform_fanin(model.embed_w.value, c_total, init_rng);
    model.head1_w = nn::Parameter<T>("head1.w", {config.head_hidden, config.embed_dim});
    model.head1_b = nn::Parameter<T>("head1.b", {config.head_hidden});
    nn::init_uniform_fanin(model.head1_w.value, config.embed_dim, init_rng);
    model.head2_w = nn::Parameter<T>("head2.w", {config.n_targets, config.head_hidden});
    model.head2_b = nn::Parameter<T>("head2.b", {config.n_targets});
    nn::init_uniform_fanin(model.head2_w.value, config.head_hidden, init_rng);
    model.head2_b.value.fill(static_cast<T>(config.output_bias_init));
    return model;
}

template <typename T>
struct ForwardCache {
    nn::Mode mode = nn::Mode::Eval;
    nn::Tensor<T> input;
    std::vector<nn::Tensor<T>> features;            // conv layer outputs, 1..n
    std::vector<nn::BatchNormCache<T>> pre_bn_cache; // train mode only
    nn::BatchNormCache<T> gap_bn_cache;
    nn::Tensor<T> gap_out;
    nn::Tensor<T> embed_out;
    nn::Tensor<T> head1_out; // pre-ReLU
    nn::Tensor<T> dropout_mask;
    nn::Tensor<T> head_dropped;
};

template <typename T>
nn::Tensor<T> forward(Model<T>& model, const nn::Tensor<T>& x, nn::Mode mode,
                      ForwardCache<T>* cache = nullptr) {
    const auto& cfg = model.config;
    if (x.rank() != 3 || x.dim(1) != cfg.input_channels) {
        throw ShapeError("model input must be (B, " + std::to_string(cfg.input_channels) + ", L)");
    }
    const bool train = mode == nn::Mode::Train;
    if (cache) {
        cache->mode = mode;
        cache->input = x;
        cache->features.clear();
        cache->pre_bn_cache.assign(train ? static_cast<std::size_t>(cfg.n_conv_layers - 1) : 0, {});
    }

    std::vector<nn::Tensor<T>> features;
    features.reserve(static_cast<std::size_t>(cfg.n_conv_layers)); // parts aliases into this
    std::vector<const nn::Tensor<T>*> parts{&x};
    for (int n = 1; n <= cfg.n_conv_layers; ++n) {
        nn::Tensor<T> conv_out;
        const auto& w = model.conv_w[static_cast<std::size_t>(n - 1)].value;
        if (n == 1) {
            // first layer: no BN/ReLU, raw input
            conv_out = nn::conv1d_forward(x, w, model.conv_spec(1));
        } else {
            nn::BatchNormCache<T>* bn_cache =
                (cache && train) ? &cache->pre_bn_cache[static_cast<std::size_t>(n - 2)] : nullptr;
            nn::Tensor<T> conv_in =
                nn::bn_relu_forward(nn::ChannelView<T>::over(parts),
                                    model.pre_bn[static_cast<std::size_t>(n - 2)], mode, bn_cache);
            conv_out = nn::conv1d_forward(conv_in, w, model.conv_spec(n));
        }
        features.push_back(std::move(conv_out));
        parts.push_back(&features.back());
    }

    nn::BatchNormCache<T>* gap_cache = (cache && train) ? &cache->gap_bn_cache : nullptr;
    nn::Tensor<T> gap_in =
        nn::bn_relu_forward(nn::ChannelView<T>::over(parts), model.gap_bn, mode, gap_cache);
    nn::Tensor<T> pooled = nn::global_avg_pool(gap_in);
    nn::Tensor<T> embedded = nn::linear_forward(pooled, model.embed_w.value, model.embed_b.value);
    nn::Tensor<T> head1 = nn::linear_forward(embedded, model.head1_w.value, model.head1_b.value);
    nn::Tensor<T> head_act = nn::relu(head1);
    nn::Tensor<T> mask;
    nn::Tensor<T> dropped =
        nn::dropout(head_act, cfg.dropout_rate, mode, model.dropout_rng, cache ? &mask : nullptr);
    nn::Tensor<T> pred = nn::linear_forward(dropped, model.head2_w.value, model.head2_b.value);

    if (cache) {
        cache->features = std::move(features);
        cache->gap_out = std::move(pooled);
        cache->embed_out = std::move(embedded);
        cache->head1_out = std::move(head1);
        cache->dropout_mask = std::move(mask);
        cache->head_dropped = std::move(dropped);
    }
    return pred;
}

namespace detail {

template <typename T>
void add_into(nn::Tensor<T>& acc, const nn::Tensor<T>& g) {
    if (!acc.same_shape(g)) {
        throw ShapeError("gradient accumulation shape mismatch");
    }
    T* a = acc.data();
    const T* b = g.data();
    const std::int64_t n = acc.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        a[i] += b[i];
    }
}

template <typename T>
void add_bn_grads(nn::BatchNormState<T>& state, const nn::BatchNormGrads<T>& grads) {
    for (std::size_t c = 0; c < grads.grad_gamma.size(); ++c) {
        state.gamma.grad[static_cast<std::int64_t>(c)] += grads.grad_gamma[c];
        state.beta.grad[static_cast<std::int64_t>(c)] += grads.grad_beta[c];
    }
}

} // namespace detail

// Exact adjoint of a Train-mode forward; accumulates into Parameter::grad.
template <typename T>
void backward(Model<T>& model, const ForwardCache<T>& cache, const nn::Tensor<T>& grad_pred) {
    if (cache.mode != nn::Mode::Train) {
        throw ArgumentError("backward requires a Train-mode forward cache");
    }
    const auto& cfg = model.config;
    const std::int64_t L = cache.input.dim(2);

    // Head.
    auto g_head2 = nn::linear_backward(grad_pred, cache.head_dropped, model.head2_w.value);
    detail::add_into(model.head2_w.grad, g_head2.grad_w);
    detail::add_into(model.head2_b.grad, g_head2.grad_b);
    nn::Tensor<T> g = cfg.dropout_rate > 0.0
                          ? nn::dropout_backward(g_head2.grad_x, cache.dropout_mask, cfg.dropout_rate)
                          : std::move(g_head2.grad_x);
    g = nn::relu_backward(g, cache.head1_out);
    auto g_head1 = nn::linear_backward(g, cache.embed_out, model.head1_w.value);
    detail::add_into(model.head1_w.grad, g_head1.grad_w);
    detail::add_into(model.head1_b.grad, g_head1.grad_b);
    auto g_embed = nn::linear_backward(g_head1.grad_x, cache.gap_out, model.embed_w.value);
    detail::add_into(model.embed_w.grad, g_embed.grad_w);
    detail::add_into(model.embed_b.grad, g_embed.grad_b);

    // GAP stage. relu(y) > 0 exactly where y > 0, so the recomputed fused
    // output doubles as the ReLU mask source.
    nn::Tensor<T> g_gap_in = nn::global_avg_pool_backward(g_embed.grad_x, L);
    nn::Tensor<T> gap_act = nn::bn_relu_recompute(cache.gap_bn_cache, model.gap_bn);
    g_gap_in = nn::relu_backward(g_gap_in, gap_act);
    auto g_gap_bn = nn::batchnorm_backward(g_gap_in, cache.gap_bn_cache, model.gap_bn);
    detail::add_bn_grads(model.gap_bn, g_gap_bn);

    // Split the full-concat gradient into input + per-layer feature grads.
    std::vector<std::int64_t> widths{cfg.input_channels};
    for (int n = 0; n < cfg.n_conv_layers; ++n) {
        widths.push_back(cfg.growth_rate);
    }
    std::vector<nn::Tensor<T>> pieces = nn::concat_channels_backward(g_gap_bn.grad_x, widths);
    nn::Tensor<T> g_input = std::move(pieces[0]);
    std::vector<nn::Tensor<T>> g_features(pieces.begin() + 1, pieces.end());

    // Dense layers, deepest first.
    for (int n = cfg.n_conv_layers; n >= 2; --n) {
        const auto& bn_cache = cache.pre_bn_cache[static_cast<std::size_t>(n - 2)];
        auto& bn_state = model.pre_bn[static_cast<std::size_t>(n - 2)];
        nn::Tensor<T> conv_in = nn::bn_relu_recompute(bn_cache, bn_state);

        auto g_conv = nn::conv1d_backward(g_features[static_cast<std::size_t>(n - 1)], conv_in,
                                          model.conv_w[static_cast<std::size_t>(n - 1)].value,
                                          model.conv_spec(n));
        detail::add_into(model.conv_w[static_cast<std::size_t>(n - 1)].grad, g_conv.grad_w);
        nn::Tensor<T> g_bn_out = nn::relu_backward(g_conv.grad_x, conv_in);
        auto g_bn = nn::batchnorm_backward(g_bn_out, bn_cache, bn_state);
        detail::add_bn_grads(bn_state, g_bn);

        std::vector<std::int64_t> sub_widths{cfg.input_channels};
        for (int i = 0; i < n - 1; ++i) {
            sub_widths.push_back(cfg.growth_rate);
        }
        std::vector<nn::Tensor<T>> sub = nn::concat_channels_backward(g_bn.grad_x, sub_widths);
        detail::add_into(g_input, sub[0]);
        for (int i = 0; i < n - 1; ++i) {
            detail::add_into(g_features[static_cast<std::size_t>(i)],
                             sub[static_cast<std::size_t>(i + 1)]);
        }
    }

    auto g_conv1 = nn::conv1d_backward(g_features[0], cache.input, model.conv_w[0].value,
                                       model.conv_spec(1));
    detail::add_into(model.conv_w[0].grad, g_conv1.grad_w);
}

inline std::int64_t conv_param_count(const ModelConfig& config, int layer) {
    return static_cast<std::int64_t>(config.growth_rate) * config.conv_in_channels(layer) *
           config.kernel;
}

// Per-layer table: name, in/out channels, dilation, padding, parameter
// count, cumulative receptive field.
inline std::string model_summary(const ModelConfig& config) {
    std::ostringstream out;
    out << "layer        in->out  dilation  padding  params  receptive_field\n";
    const auto dils = config.dilations();
    int rf = 1;
    std::int64_t total = 0;
    for (int n = 1; n <= config.n_conv_layers; ++n) {
        const int d = dils[static_cast<std::size_t>(n - 1)];
        rf += d * (config.kernel - 1);
        const std::int64_t params = conv_param_count(config, n);
        total += params;
        if (n >= 2) {
            total += 2LL * config.conv_in_channels(n); // BN gamma/beta
        }
        out << (n == 1 ? "conv" : "bn-relu-conv") << n << (n == 1 ? "        " : "")
            << "  " << config.conv_in_channels(n) << "->" << config.growth_rate << "  " << d
            << "  " << d << "  " << params << "  " << rf << "\n";
    }
    const int c_total = config.concat_width();
    total += 2LL * c_total;
    out << "bn-relu-gap  " << c_total << "->" << c_total << "  -  -  " << 2 * c_total << "  " << rf
        << "\n";
    total += static_cast<std::int64_t>(config.embed_dim) * c_total + config.embed_dim;
    out << "embed        " << c_total << "->" << config.embed_dim << "  -  -  "
        << static_cast<std::int64_t>(config.embed_dim) * c_total + config.embed_dim << "  -\n";
    total += static_cast<std::int64_t>(config.head_hidden) * config.embed_dim + config.head_hidden;
    out << "head_fc1     " << config.embed_dim << "->" << config.head_hidden << "  -  -  "
        << static_cast<std::int64_t>(config.head_hidden) * config.embed_dim + config.head_hidden
        << "  -\n";
    total += static_cast<std::int64_t>(config.n_targets) * config.head_hidden + config.n_targets;
    out << "head_fc2     " << config.head_hidden << "->" << config.n_targets << "  -  -  "
        << static_cast<std::int64_t>(config.n_targets) * config.head_hidden + config.n_targets
        << "  -\n";
    out << "total params " << total << "\n";
    return out.str();
}

} // namespace gazereg::model
