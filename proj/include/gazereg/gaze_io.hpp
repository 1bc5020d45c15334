#pragma once

#include "gazereg/types.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace gazereg::io {

// Column names of a recording CSV. Defaults match the common layout
// (timestamp "n" in ms, positions "x"/"y" in degrees). If `validity` is
// set, rows whose validity field is nonzero get their positions NaN'd.
struct ColumnMap {
    std::string timestamp = "n";
    std::string x = "x";
    std::string y = "y";
    std::string validity;
    char delimiter = ',';
};

// Identity is supplied by the caller (normally from the manifest).
GazeRecording load_recording(const std::filesystem::path& path, const ColumnMap& columns,
                             const RecordingId& id);

// Identity from the file name pattern S_<subject>_R<round>_S<session>_<task>.csv.
GazeRecording load_recording(const std::filesystem::path& path, const ColumnMap& columns);
RecordingId parse_recording_id(const std::string& filename);

struct LabelKey {
    std::string subject;
    int round = 0;
    int session = 0;
    std::optional<Task> task; // present for the per-session/per-task schema

    friend auto operator<=>(const LabelKey&, const LabelKey&) = default;
    std::string str() const;
};

// Rows are kept in file order, duplicates included; align() detects
// duplicate keys. Rows with missing or out-of-range ratings are dropped
// and counted.
struct LabelTable {
    LabelSchema schema = LabelSchema::KnownSubject3;
    std::vector<std::pair<LabelKey, LabelVector>> rows;
    int dropped_rows = 0;
};

// Key columns: subject, round, session and (KnownSubject3 only) task,
// plus one column per target name. Unknown/missing columns -> SchemaError.
// For UnknownSubject6 the session column keys the questionnaire phase
// (1 = between sessions, 2 = after sessions).
LabelTable load_labels(const std::filesystem::path& path, LabelSchema schema, char delimiter = ',');

struct AlignResult {
    std::vector<PairedSample> samples;
    int unmatched_recordings = 0;
    int unmatched_labels = 0;
};

// Inner join of preprocessed recordings with label rows on
// (subject, round, session[, task]). Unmatched items on either side are
// counted, never silently dropped. Duplicate label keys -> AmbiguityError.
AlignResult align(const std::vector<VelocitySequence>& recordings, const LabelTable& labels);

// Round 2 shuffled and split 80/20 into train/val at sample level; rounds
// 3 and 4 become test partitions "round3"/"round4"; other rounds are
// excluded.
DatasetSplit build_split_known_subject(const std::vector<PairedSample>& samples,
                                       double val_fraction, std::uint64_t seed);

// Test subjects appear in both rounds 1 and 2; subjects in exactly one of
// the two rounds are split 80/20 at subject level into train/val. Test
// partitions "between"/"after" by questionnaire phase.
DatasetSplit build_split_unknown_subject(const std::vector<PairedSample>& samples,
                                         double val_fraction, std::uint64_t seed);

struct ManifestEntry {
    std::filesystem::path path;
    RecordingId id;
};

// Ingestion entry point: header path,subject,round,session,task; relative
// paths resolve against the manifest's directory.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

} // namespace gazereg::io
