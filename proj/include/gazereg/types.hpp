#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gazereg {

// The seven recording tasks.
enum class Task : std::uint8_t { FXS, HSS, RAN, TEX, VD1, VD2, BLG };

const char* to_string(Task task);
Task parse_task(const std::string& code); // throws DataError on unknown code

struct RecordingId {
    std::string subject;
    int round = 0;   // >= 1
    int session = 0; // 1 or 2
    Task task = Task::FXS;

    friend bool operator==(const RecordingId&, const RecordingId&) = default;
    std::string str() const;
};

// Raw monocular gaze positions, nominally sampled at 1000 Hz.
// Missing samples are NaN in x/y. Timestamps are in milliseconds,
// strictly increasing.
struct GazeRecording {
    RecordingId id;
    std::vector<std::int64_t> timestamps_ms;
    std::vector<double> x_deg;
    std::vector<double> y_deg;

    std::size_t size() const { return timestamps_ms.size(); }
};

enum class LabelSchema : std::uint8_t { KnownSubject3, UnknownSubject6 };

// Target names, in report order.
const std::vector<std::string>& target_names(LabelSchema schema);
int target_count(LabelSchema schema);

// Subjective ratings on the 1-7 scale, one value per target of the schema.
struct LabelVector {
    LabelSchema schema = LabelSchema::KnownSubject3;
    std::vector<double> values;

    bool valid() const;
};

enum class QuestionnairePhase : std::uint8_t { PerSessionTask, BetweenSessions, AfterSessions };

const char* to_string(QuestionnairePhase phase);

// Model-ready input: 2 channels x 5000 steps, values in [-1, 1], 100 Hz.
struct VelocitySequence {
    static constexpr int kChannels = 2;
    static constexpr int kSteps = 5000;
    static constexpr double kSampleRateHz = 100.0;

    std::vector<float> values; // channel-major: [c * kSteps + t]
    RecordingId source_id;

    float at(int channel, int step) const { return values[static_cast<std::size_t>(channel) * kSteps + step]; }
};

struct PairedSample {
    VelocitySequence input;
    LabelVector label;
    RecordingId id;
    QuestionnairePhase phase = QuestionnairePhase::PerSessionTask;
};

struct DatasetSplit {
    std::vector<PairedSample> train;
    std::vector<PairedSample> val;
    std::map<std::string, std::vector<PairedSample>> test; // "round3"/"round4" or "between"/"after"
};

} // namespace gazereg
