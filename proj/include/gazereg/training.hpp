#pragma once

#include "gazereg/model.hpp"
#include "gazereg/types.hpp"

#include <filesystem>
#include <vector>

namespace gazereg::train {

struct TrainConfig {
    int batch_size = 16;
    double lr = 3e-4;
    int max_epochs = 50;
    double weight_decay = 1e-4;
    int early_stop_patience = 10;
    double smooth_l1_beta = 1.0;
    std::uint64_t seed = 42;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0; // epoch with the minimum validation loss
    bool stopped_early = false;
};

// Seeded-shuffled minibatches (final partial batch kept), Smooth-L1 + Adam,
// validation in Eval mode after each epoch, patience-based early stopping.
// The model is left at the best-validation weights, not the last epoch's.
TrainHistory fit(model::Model<float>& model, const DatasetSplit& split, const TrainConfig& config);

// Tensor-level loop behind fit(); also used directly by tests.
TrainHistory fit_tensors(model::Model<float>& model, const nn::Tensor<float>& train_x,
                         const nn::Tensor<float>& train_y, const nn::Tensor<float>& val_x,
                         const nn::Tensor<float>& val_y, const TrainConfig& config);

// Eval-mode predictions over a sample list, batched.
nn::Tensor<float> predict(model::Model<float>& model, const std::vector<PairedSample>& samples,
                          int batch_size = 16);

nn::Tensor<float> samples_to_inputs(const std::vector<PairedSample>& samples);
nn::Tensor<float> samples_to_targets(const std::vector<PairedSample>& samples, int n_targets);

// epoch,train_loss,val_loss,seconds — losses printed with full precision.
void save_history_csv(const TrainHistory& history, const std::filesystem::path& path);

// Single-file checkpoint: magic + version, model config as JSON, then named
// float32 arrays (parameters and BN running statistics) in little-endian
// byte order. include_moments adds the Adam m/v buffers and step counts so
// training can resume.
void save_checkpoint(const model::Model<float>& model, const std::filesystem::path& path,
                     bool include_moments = false);
model::Model<float> load_checkpoint(const std::filesystem::path& path);

} // namespace gazereg::train
