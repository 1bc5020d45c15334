#include "gazereg/training.hpp"
#include "gazereg/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

using namespace gazereg;
using nn::Tensor;

namespace {

model::ModelConfig tiny_config() {
    model::ModelConfig cfg;
    cfg.n_conv_layers = 2;
    cfg.growth_rate = 4;
    cfg.embed_dim = 8;
    cfg.head_hidden = 8;
    cfg.dropout_rate = 0.1;
    cfg.n_targets = 3;
    return cfg;
}

// Planted mapping: targets are an affine function of the channel-0 mean.
void make_planted(std::int64_t n, std::int64_t length, std::uint64_t seed, Tensor<float>& x,
                  Tensor<float>& y) {
    x = Tensor<float>({n, 2, length});
    y = Tensor<float>({n, 3});
    std::mt19937_64 rng(seed);
    for (std::int64_t i = 0; i < n; ++i) {
        const double level = uniform01(rng) * 0.8 - 0.4;
        for (std::int64_t t = 0; t < length; ++t) {
            x(i, 0, t) = static_cast<float>(level + 0.05 * (uniform01(rng) - 0.5));
            x(i, 1, t) = static_cast<float>(0.05 * (uniform01(rng) - 0.5));
        }
        for (std::int64_t j = 0; j < 3; ++j) {
            y(i, j) = static_cast<float>(4.0 + 7.0 * level);
        }
    }
}

PairedSample full_length_sample(std::uint64_t seed, int session) {
    PairedSample s;
    s.id = {"s" + std::to_string(seed), 2, session, Task::TEX};
    s.input.source_id = s.id;
    s.input.values.resize(static_cast<std::size_t>(2) * VelocitySequence::kSteps);
    std::mt19937_64 rng(seed);
    for (auto& v : s.input.values) {
        v = static_cast<float>(uniform01(rng) - 0.5);
    }
    s.label.schema = LabelSchema::KnownSubject3;
    s.label.values = {1.0 + static_cast<double>(seed % 7), 4.0, 6.0};
    return s;
}

} // namespace

TEST_CASE("fit_tensors learns a planted mapping") {
    Tensor<float> tx, ty, vx, vy;
    make_planted(24, 64, 1, tx, ty);
    make_planted(8, 64, 2, vx, vy);
    auto net = model::build_model<float>(tiny_config(), 3);
    train::TrainConfig cfg;
    cfg.max_epochs = 30;
    cfg.early_stop_patience = 30;
    cfg.batch_size = 8;
    cfg.lr = 3e-3;
    cfg.seed = 5;
    const auto history = train::fit_tensors(net, tx, ty, vx, vy, cfg);
    REQUIRE(!history.epochs.empty());
    CHECK(history.epochs.back().val_loss < history.epochs.front().val_loss);
    CHECK(history.best_epoch >= 1);
}

TEST_CASE("lr = 0 with zero weight decay leaves parameters unchanged") {
    Tensor<float> tx, ty, vx, vy;
    make_planted(8, 32, 3, tx, ty);
    make_planted(4, 32, 4, vx, vy);
    auto net = model::build_model<float>(tiny_config(), 7);
    std::vector<nn::TensorStorage<float>> before;
    for (auto* p : net.parameters()) {
        before.push_back(p->value.raw());
    }
    train::TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.early_stop_patience = 3;
    cfg.lr = 0.0;
    cfg.weight_decay = 0.0;
    train::fit_tensors(net, tx, ty, vx, vy, cfg);
    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(params[i]->value.raw() == before[i]);
    }
}

TEST_CASE("training is bit-deterministic for a fixed seed") {
    Tensor<float> tx, ty, vx, vy;
    make_planted(12, 48, 9, tx, ty);
    make_planted(4, 48, 10, vx, vy);
    train::TrainConfig cfg;
    cfg.max_epochs = 4;
    cfg.early_stop_patience = 4;
    cfg.batch_size = 5; // exercises the partial final batch
    cfg.seed = 77;

    auto net1 = model::build_model<float>(tiny_config(), 21);
    const auto h1 = train::fit_tensors(net1, tx, ty, vx, vy, cfg);
    auto net2 = model::build_model<float>(tiny_config(), 21);
    const auto h2 = train::fit_tensors(net2, tx, ty, vx, vy, cfg);

    REQUIRE(h1.epochs.size() == h2.epochs.size());
    for (std::size_t e = 0; e < h1.epochs.size(); ++e) {
        CHECK(h1.epochs[e].train_loss == h2.epochs[e].train_loss);
        CHECK(h1.epochs[e].val_loss == h2.epochs[e].val_loss);
    }
    auto p1 = net1.parameters();
    auto p2 = net2.parameters();
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i]->value.raw() == p2[i]->value.raw());
    }
}

TEST_CASE("early stopping halts after patience and restores the best epoch") {
    Tensor<float> tx, ty, vx, vy;
    make_planted(12, 32, 30, tx, ty);
    make_planted(4, 32, 31, vx, vy);
    auto net = model::build_model<float>(tiny_config(), 2);
    train::TrainConfig cfg;
    cfg.max_epochs = 50;
    cfg.early_stop_patience = 2;
    cfg.lr = 0.3; // aggressively large so validation soon degrades
    cfg.seed = 6;
    const auto history = train::fit_tensors(net, tx, ty, vx, vy, cfg);
    if (history.stopped_early) {
        CHECK(static_cast<int>(history.epochs.size()) ==
              history.best_epoch + cfg.early_stop_patience);
    }
    // best_epoch holds the minimum recorded validation loss
    double best = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    for (const auto& e : history.epochs) {
        if (e.val_loss < best) {
            best = e.val_loss;
            best_epoch = e.epoch;
        }
    }
    CHECK(history.best_epoch == best_epoch);
}

TEST_CASE("divergence raises a descriptive error") {
    Tensor<float> tx, ty, vx, vy;
    make_planted(8, 32, 40, tx, ty);
    make_planted(4, 32, 41, vx, vy);
    ty.fill(std::numeric_limits<float>::quiet_NaN());
    auto net = model::build_model<float>(tiny_config(), 2);
    train::TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.early_stop_patience = 2;
    CHECK_THROWS_WITH_AS(train::fit_tensors(net, tx, ty, vx, vy, cfg),
                         doctest::Contains("epoch 1"), DivergenceError);
}

TEST_CASE("fit validates split and schema") {
    DatasetSplit split;
    auto net = model::build_model<float>(tiny_config(), 2);
    train::TrainConfig cfg;
    CHECK_THROWS_AS(train::fit(net, split, cfg), ConfigError);

    split.train.push_back(full_length_sample(1, 1));
    split.val.push_back(full_length_sample(2, 2));
    split.train.front().label.values = {1.0, 2.0}; // wrong width for 3 targets
    CHECK_THROWS_AS(train::fit(net, split, cfg), ConfigError);
}

TEST_CASE("fit over a DatasetSplit runs end to end on full-length sequences") {
    DatasetSplit split;
    for (std::uint64_t i = 0; i < 6; ++i) {
        split.train.push_back(full_length_sample(i, 1));
    }
    for (std::uint64_t i = 6; i < 8; ++i) {
        split.val.push_back(full_length_sample(i, 2));
    }
    auto net = model::build_model<float>(tiny_config(), 2);
    train::TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.early_stop_patience = 2;
    cfg.batch_size = 4;
    const auto history = train::fit(net, split, cfg);
    CHECK(history.epochs.size() == 2);
    const auto preds = train::predict(net, split.val);
    CHECK(preds.shape() == std::vector<std::int64_t>{2, 3});
}

TEST_CASE("checkpoint round trip is bit-exact") {
    auto net = model::build_model<float>(tiny_config(), 77);
    // make running stats non-trivial
    Tensor<float> x({4, 2, 32});
    std::mt19937_64 rng(1);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        x[i] = static_cast<float>(uniform01(rng) - 0.5);
    }
    model::ForwardCache<float> cache;
    model::forward(net, x, nn::Mode::Train, &cache);

    const auto path = std::filesystem::temp_directory_path() / "gazereg_ckpt_test.bin";
    train::save_checkpoint(net, path);
    auto loaded = train::load_checkpoint(path);

    const auto a = model::forward(net, x, nn::Mode::Eval);
    const auto b = model::forward(loaded, x, nn::Mode::Eval);
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        CHECK(a[i] == b[i]);
    }

    SUBCASE("corrupting any byte is detected") {
        std::fstream file(path, std::ios::in | std::ios::out | std::ios::binary);
        file.seekp(200);
        char byte;
        file.seekg(200);
        file.get(byte);
        byte = static_cast<char>(byte ^ 0x40);
        file.seekp(200);
        file.put(byte);
        file.close();
        CHECK_THROWS_AS(train::load_checkpoint(path), CheckpointError);
    }
    SUBCASE("truncation is detected") {
        const auto size = std::filesystem::file_size(path);
        std::filesystem::resize_file(path, size / 2);
        CHECK_THROWS_AS(train::load_checkpoint(path), CheckpointError);
    }
    SUBCASE("not a checkpoint file") {
        std::ofstream bad(path, std::ios::binary);
        bad << "definitely not a checkpoint";
        bad.close();
        CHECK_THROWS_AS(train::load_checkpoint(path), CheckpointError);
    }
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint with moments restores optimizer state") {
    auto net = model::build_model<float>(tiny_config(), 5);
    auto params = net.parameters();
    params[0]->m[0] = 0.5f;
    params[0]->v[0] = 0.25f;
    params[0]->step_count = 7;
    const auto path = std::filesystem::temp_directory_path() / "gazereg_ckpt_moments.bin";
    train::save_checkpoint(net, path, true);
    auto loaded = train::load_checkpoint(path);
    auto lp = loaded.parameters();
    CHECK(lp[0]->m[0] == 0.5f);
    CHECK(lp[0]->v[0] == 0.25f);
    CHECK(lp[0]->step_count == 7);
    std::filesystem::remove(path);
}

TEST_CASE("history CSV is written with full precision") {
    train::TrainHistory history;
    history.epochs.push_back({1, 0.123456789012345, 0.5, 0.01});
    history.epochs.push_back({2, 0.1, 0.4, 0.01});
    history.best_epoch = 2;
    const auto path = std::filesystem::temp_directory_path() / "gazereg_hist_test.csv";
    train::save_history_csv(history, path);
    std::ifstream in(path);
    std::string header, line1;
    std::getline(in, header);
    std::getline(in, line1);
    CHECK(header == "epoch,train_loss,val_loss,seconds");
    CHECK(line1.find("0.12345678901234") != std::string::npos);
    std::filesystem::remove(path);
}
