#include "gazereg/model.hpp"
#include "gazereg/errors.hpp"

#include "support/gradcheck.hpp"

#include <doctest.h>

#include <cmath>

using namespace gazereg;
using nn::Tensor;

namespace {

model::ModelConfig tiny_config(int layers = 2, int targets = 3) {
    model::ModelConfig cfg;
    cfg.n_conv_layers = layers;
    cfg.growth_rate = 4;
    cfg.embed_dim = 6;
    cfg.head_hidden = 5;
    cfg.dropout_rate = 0.0;
    cfg.n_targets = targets;
    return cfg;
}

} // namespace

TEST_CASE("dilation schedule") {
    SUBCASE("mod-exponent reading gives (1,2,4,8,16,32,64,1)") {
        CHECK(model::dilation_schedule(8) == std::vector<int>{1, 2, 4, 8, 16, 32, 64, 1});
    }
    SUBCASE("one layer") {
        CHECK(model::dilation_schedule(1) == std::vector<int>{1});
    }
    SUBCASE("ninth entry wraps to 2") {
        CHECK(model::dilation_schedule(9).back() == 2);
    }
    SUBCASE("literal reading gives (1,2,4,1,2,4,1,2)") {
        CHECK(model::dilation_schedule(8, model::DilationMode::Literal) ==
              std::vector<int>{1, 2, 4, 1, 2, 4, 1, 2});
    }
    CHECK_THROWS_AS(model::dilation_schedule(0), ArgumentError);
}

TEST_CASE("receptive field") {
    model::ModelConfig cfg;
    SUBCASE("full config -> 257") {
        CHECK(model::receptive_field(cfg) == 257);
    }
    SUBCASE("single layer, d=1, k=3 -> 3") {
        cfg.n_conv_layers = 1;
        CHECK(model::receptive_field(cfg) == 3);
    }
    SUBCASE("pointwise kernels -> 1 for any schedule") {
        cfg.kernel = 1;
        CHECK(model::receptive_field(cfg) == 1);
    }
    SUBCASE("literal dilation reading -> 35") {
        cfg.dilation_mode = model::DilationMode::Literal;
        CHECK(model::receptive_field(cfg) == 35);
    }
}

TEST_CASE("build: channel bookkeeping and parameter counts") {
    model::ModelConfig cfg;
    auto net = model::build_model<float>(cfg, 1);
    REQUIRE(net.conv_w.size() == 8);
    for (int n = 1; n <= 8; ++n) {
        const auto& w = net.conv_w[static_cast<std::size_t>(n - 1)].value;
        CHECK(w.dim(0) == 32);
        CHECK(w.dim(1) == 2 + 32 * (n - 1));
        CHECK(w.dim(2) == 3);
        // 32 * (2 + 32*(n-1)) * 3 weights per layer
        CHECK(w.numel() == model::conv_param_count(cfg, n));
    }
    CHECK(model::conv_param_count(cfg, 1) == 192);
    CHECK(model::conv_param_count(cfg, 8) == 32 * 226 * 3);
    CHECK(cfg.concat_width() == 258);
    CHECK(net.gap_bn.channels() == 258);
    CHECK(net.embed_w.value.dim(1) == 258);
    // one BN before each conv layer 2..8
    CHECK(net.pre_bn.size() == 7);

    SUBCASE("two builds with the same seed are bit-identical") {
        auto again = model::build_model<float>(cfg, 1);
        auto pa = net.parameters();
        auto pb = again.parameters();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            CHECK(pa[i]->name == pb[i]->name);
            REQUIRE(pa[i]->value.numel() == pb[i]->value.numel());
            for (std::int64_t j = 0; j < pa[i]->value.numel(); ++j) {
                CHECK(pa[i]->value[j] == pb[i]->value[j]);
            }
        }
    }
    SUBCASE("invalid config rejected") {
        cfg.n_targets = 0;
        CHECK_THROWS_AS(model::build_model<float>(cfg, 1), ConfigError);
    }
}

TEST_CASE("forward: shapes, determinism, length preservation") {
    auto cfg = tiny_config(3);
    auto net = model::build_model<float>(cfg, 7);
    Tensor<float> x({4, 2, 64});
    std::mt19937_64 rng(3);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        x[i] = static_cast<float>(uniform01(rng) - 0.5);
    }

    model::ForwardCache<float> cache;
    const auto pred = model::forward(net, x, nn::Mode::Eval, &cache);
    CHECK(pred.shape() == std::vector<std::int64_t>{4, 3});
    for (const auto& f : cache.features) { // every pre-GAP activation keeps the length
        CHECK(f.dim(2) == 64);
    }

    SUBCASE("eval mode is pure: bit-identical repeat calls") {
        const auto again = model::forward(net, x, nn::Mode::Eval);
        for (std::int64_t i = 0; i < pred.numel(); ++i) {
            CHECK(pred[i] == again[i]);
        }
    }
    SUBCASE("all-zero input gives a deterministic bias-driven output") {
        Tensor<float> zero({2, 2, 32});
        const auto a = model::forward(net, zero, nn::Mode::Eval);
        const auto b = model::forward(net, zero, nn::Mode::Eval);
        for (std::int64_t i = 0; i < a.numel(); ++i) {
            CHECK(a[i] == b[i]);
        }
    }
    SUBCASE("wrong input shape") {
        Tensor<float> bad({4, 3, 64});
        CHECK_THROWS_AS(model::forward(net, bad, nn::Mode::Eval), ShapeError);
    }
}

TEST_CASE("whole-model gradient check on a tiny config") {
    auto cfg = tiny_config(2);
    auto net = model::build_model<double>(cfg, 11);
    Tensor<double> x({2, 2, 32});
    Tensor<double> y({2, 3});
    std::mt19937_64 rng(17);
    gradcheck::fill_uniform(x, rng, -0.9, 0.9);
    gradcheck::fill_uniform(y, rng, 1.0, 7.0);

    auto loss_value = [&net, &x, &y] {
        model::ForwardCache<double> cache;
        auto pred = model::forward(net, x, nn::Mode::Train, &cache);
        return nn::smooth_l1(pred, y).loss;
    };

    model::ForwardCache<double> cache;
    auto pred = model::forward(net, x, nn::Mode::Train, &cache);
    auto loss = nn::smooth_l1(pred, y);
    net.zero_grad();
    model::backward(net, cache, loss.grad);

    double worst = 0.0;
    for (auto* param : net.parameters()) {
        worst = std::max(worst, gradcheck::check_grad(param->value, param->grad, loss_value));
    }
    CHECK(worst < 1e-3);

    SUBCASE("zero loss gradient -> zero parameter gradients") {
        net.zero_grad();
        Tensor<double> zero_grad(pred.shape());
        model::ForwardCache<double> cache2;
        model::forward(net, x, nn::Mode::Train, &cache2);
        model::backward(net, cache2, zero_grad);
        for (auto* param : net.parameters()) {
            for (std::int64_t i = 0; i < param->grad.numel(); ++i) {
                CHECK(param->grad[i] == 0.0);
            }
        }
    }
    SUBCASE("gradient reaches layer-1 weights") {
        bool any = false;
        for (std::int64_t i = 0; i < net.conv_w[0].grad.numel(); ++i) {
            any |= net.conv_w[0].grad[i] != 0.0;
        }
        CHECK(any);
    }
}

TEST_CASE("sensitivity extent equals the receptive field") {
    // Perturb one interior input step in Eval mode (running stats are
    // per-channel affine, so locality is preserved) and measure which steps
    // of the last conv layer's output change.
    model::ModelConfig cfg; // full 8-layer architecture
    cfg.dropout_rate = 0.0;
    auto net = model::build_model<double>(cfg, 5);
    const std::int64_t L = 700;
    const std::int64_t t0 = 350;
    Tensor<double> x({1, 2, L});
    std::mt19937_64 rng(23);
    gradcheck::fill_uniform(x, rng, -0.8, 0.8);

    model::ForwardCache<double> base_cache;
    model::forward(net, x, nn::Mode::Eval, &base_cache);
    Tensor<double> perturbed = x;
    perturbed(0, 0, t0) += 0.5;
    model::ForwardCache<double> pert_cache;
    model::forward(net, perturbed, nn::Mode::Eval, &pert_cache);

    const auto& a = base_cache.features.back();
    const auto& b = pert_cache.features.back();
    std::int64_t lo = L, hi = -1;
    for (std::int64_t t = 0; t < L; ++t) {
        bool changed = false;
        for (std::int64_t c = 0; c < a.dim(1); ++c) {
            changed |= a(0, c, t) != b(0, c, t);
        }
        if (changed) {
            lo = std::min(lo, t);
            hi = std::max(hi, t);
        }
    }
    const int rf = model::receptive_field(cfg);
    CHECK(rf == 257);
    CHECK(lo == t0 - (rf - 1) / 2);
    CHECK(hi == t0 + (rf - 1) / 2);
    CHECK(hi - lo + 1 == rf);
}

TEST_CASE("dense connectivity: layer-1 output feeds every later layer") {
    auto cfg = tiny_config(4);
    auto net = model::build_model<float>(cfg, 9);
    Tensor<float> x({1, 2, 40});
    std::mt19937_64 rng(29);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        x[i] = static_cast<float>(uniform01(rng) - 0.5);
    }
    model::ForwardCache<float> before;
    model::forward(net, x, nn::Mode::Eval, &before);

    net.conv_w[0].value.fill(0.0f); // ablate layer 1's output
    model::ForwardCache<float> after;
    model::forward(net, x, nn::Mode::Eval, &after);

    for (std::size_t layer = 1; layer < before.features.size(); ++layer) {
        bool differs = false;
        const auto& fa = before.features[layer];
        const auto& fb = after.features[layer];
        for (std::int64_t i = 0; i < fa.numel(); ++i) {
            differs |= fa[i] != fb[i];
        }
        CHECK(differs); // each downstream layer saw the ablation through its concat input
    }
}

TEST_CASE("model summary lists every stage") {
    const std::string text = model::model_summary(model::ModelConfig{});
    CHECK(text.find("conv1") != std::string::npos);
    CHECK(text.find("bn-relu-conv8") != std::string::npos);
    CHECK(text.find("bn-relu-gap") != std::string::npos);
    CHECK(text.find("257") != std::string::npos);
    CHECK(text.find("258") != std::string::npos);
}
