#pragma once

#include "gazereg/evaluation.hpp"
#include "gazereg/gaze_io.hpp"
#include "gazereg/model.hpp"
#include "gazereg/signal_prep.hpp"
#include "gazereg/synth.hpp"
#include "gazereg/training.hpp"

#include <filesystem>
#include <iosfwd>

namespace gazereg::cmd {

enum class Experiment : std::uint8_t { KnownSubject, UnknownSubject };

struct RunConfig {
    Experiment experiment = Experiment::KnownSubject;
    std::filesystem::path manifest;
    std::filesystem::path labels;
    std::filesystem::path archive; // preprocessed velocities, used instead of manifest if set
    std::filesystem::path out_dir;
    std::uint64_t seed = 42;
    io::ColumnMap columns{};
    prep::PrepOptions prep{};
    model::ModelConfig model{}; // n_targets is overridden by the experiment
    train::TrainConfig train{};
    double val_fraction = 0.2;
    eval::AccuracyMode accuracy_mode = eval::AccuracyMode::PerElement;
    int session_filter = 0; // 0 = both sessions, 1/2 = that session only

    LabelSchema schema() const {
        return experiment == Experiment::KnownSubject ? LabelSchema::KnownSubject3
                                                      : LabelSchema::UnknownSubject6;
    }
};

struct PreprocessSummary {
    int total = 0;
    int ok = 0;
    int dropped_short = 0;
    int nan_heavy = 0; // more than half the velocity samples were invalid
};

// Loads every manifest entry and runs the preprocessing chain; recordings
// rejected by the short-recording policy are counted, not fatal.
std::vector<VelocitySequence> load_and_preprocess(const std::filesystem::path& manifest,
                                                  const io::ColumnMap& columns,
                                                  const prep::PrepOptions& prep_opts,
                                                  PreprocessSummary* summary = nullptr);

// Binary archive of preprocessed sequences (identity + float32 values).
void save_archive(const std::filesystem::path& path, const std::vector<VelocitySequence>& seqs);
std::vector<VelocitySequence> load_archive(const std::filesystem::path& path);

// Split construction shared by train and evaluate: align, then the
// experiment's split builder. Unmatched counts are reported via `log`.
DatasetSplit build_split(const RunConfig& config, const std::vector<VelocitySequence>& recordings,
                         std::ostream& log);

// Subcommands. All artifacts land under the configured output directory.
synth::SynthFiles cmd_synth(const synth::SynthConfig& config, const std::filesystem::path& out_dir);
PreprocessSummary cmd_preprocess(const std::filesystem::path& manifest, const io::ColumnMap& columns,
                                 const prep::PrepOptions& prep_opts,
                                 const std::filesystem::path& out_dir);
train::TrainHistory cmd_train(const RunConfig& config);
void cmd_evaluate(const RunConfig& config, const std::filesystem::path& checkpoint);
void cmd_report(const std::filesystem::path& run_dir);

} // namespace gazereg::cmd
