#pragma once

#include "gazereg/signal_prep.hpp"
#include "gazereg/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <vector>

namespace gazereg::synth {

// How ratings derive from the per-subject latent state:
// clamp(round(scale * latent + offset + N(0, noise_std)), 1, 7).
struct LabelRule {
    double scale = 1.0;
    double offset = 0.0;
    double noise_std = 0.5;
};

enum class PresenceMode : std::uint8_t {
    AllRounds,   // every subject recorded in every configured round
    SplitRounds, // rounds {1,2}: ~40% round-1 only, ~30% round-2 only, ~30% both
};

struct SynthConfig {
    int n_subjects = 40;
    std::vector<int> rounds = {2, 3, 4};
    std::vector<Task> tasks = {Task::TEX};
    double duration_s = 52.0;
    double saccade_rate = 2.0;          // saccades per second
    double peak_velocity_scale = 300.0; // deg/s peak at 10 deg amplitude
    double noise_std = 0.02;            // deg of position noise
    double nan_blink_rate = 2.0;        // blinks per minute (NaN gaps)
    LabelRule label_rule{};
    PresenceMode presence = PresenceMode::AllRounds;
    std::uint64_t seed = 1;

    void validate() const;
};

// Latent per-subject state in [1, 7]; higher values drive faster, more
// frequent saccades, which is what the planted labels encode.
double subject_latent(const SynthConfig& config, const std::string& subject);

// Alternating fixations (constant position + noise) and raised-cosine
// saccades whose peak velocity scales with amplitude, blinks as NaN gaps,
// 1000 Hz timestamps. Deterministic in (config.seed, id).
GazeRecording generate_recording(const SynthConfig& config, const RecordingId& id);

struct SynthDataset {
    std::vector<PairedSample> known_samples;   // KnownSubject3, per session/task
    std::vector<PairedSample> unknown_samples; // UnknownSubject6, per session phase
    std::map<std::string, double> latents;
    int dropped_short = 0;
};

// Recordings preprocessed through the signal_prep chain and paired with
// planted labels, ready for the split builders.
SynthDataset generate_labeled_dataset(const SynthConfig& config,
                                      const prep::PrepOptions& prep_opts = {});

struct SynthFiles {
    std::filesystem::path manifest;
    std::filesystem::path labels_known;
    std::filesystem::path labels_unknown;
    int n_recordings = 0;
};

// Emits recordings/labels in the exact CSV formats gaze_io consumes.
SynthFiles write_dataset(const SynthConfig& config, const std::filesystem::path& out_dir);

} // namespace gazereg::synth
