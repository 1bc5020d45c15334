#include "gazereg/gaze_io.hpp"

#include "gazereg/csvio.hpp"
#include "gazereg/errors.hpp"
#include "gazereg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace gazereg {

const char* to_string(Task task) {
    switch (task) {
    case Task::FXS: return "FXS";
    case Task::HSS: return "HSS";
    case Task::RAN: return "RAN";
    case Task::TEX: return "TEX";
    case Task::VD1: return "VD1";
    case Task::VD2: return "VD2";
    case Task::BLG: return "BLG";
    }
    return "?";
}

Task parse_task(const std::string& code) {
    static const std::map<std::string, Task> table = {
        {"FXS", Task::FXS}, {"HSS", Task::HSS}, {"RAN", Task::RAN}, {"TEX", Task::TEX},
        {"VD1", Task::VD1}, {"VD2", Task::VD2}, {"BLG", Task::BLG},
    };
    auto it = table.find(code);
    if (it == table.end()) {
        throw DataError("unknown task code '" + code + "'");
    }
    return it->second;
}

std::string RecordingId::str() const {
    return subject + "/r" + std::to_string(round) + "/s" + std::to_string(session) + "/" +
           to_string(task);
}

const std::vector<std::string>& target_names(LabelSchema schema) {
    static const std::vector<std::string> known = {"OverDiff", "Mentally", "TiredEyes"};
    static const std::vector<std::string> unknown = {"general_comfort", "shoulder_fatigue",
                                                     "neck_fatigue",    "eye_fatigue",
                                                     "physical_effort", "mental_effort"};
    return schema == LabelSchema::KnownSubject3 ? known : unknown;
}

int target_count(LabelSchema schema) {
    return static_cast<int>(target_names(schema).size());
}

bool LabelVector::valid() const {
    if (values.size() != static_cast<std::size_t>(target_count(schema))) {
        return false;
    }
    for (double v : values) {
        if (!std::isfinite(v) || v < 1.0 || v > 7.0) {
            return false;
        }
    }
    return true;
}

const char* to_string(QuestionnairePhase phase) {
    switch (phase) {
    case QuestionnairePhase::PerSessionTask: return "per_session_task";
    case QuestionnairePhase::BetweenSessions: return "between";
    case QuestionnairePhase::AfterSessions: return "after";
    }
    return "?";
}

} // namespace gazereg

namespace gazereg::io {

namespace {

int require_column(const csv::Reader& reader, const std::string& name) {
    const int idx = reader.column(name);
    if (idx < 0) {
        throw SchemaError(reader.path().string() + ": missing column '" + name + "'");
    }
    return idx;
}

} // namespace

GazeRecording load_recording(const std::filesystem::path& path, const ColumnMap& columns,
                             const RecordingId& id) {
    csv::Reader reader(path, columns.delimiter);
    const int ts_col = require_column(reader, columns.timestamp);
    const int x_col = require_column(reader, columns.x);
    const int y_col = require_column(reader, columns.y);
    const int valid_col = columns.validity.empty() ? -1 : require_column(reader, columns.validity);

    GazeRecording rec;
    rec.id = id;
    std::vector<std::string_view> fields;
    std::size_t line_no = 0;
    while (reader.next(fields, line_no)) {
        const double ts = csv::parse_double(fields[ts_col], path, line_no);
        if (!std::isfinite(ts)) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": missing timestamp");
        }
        const auto ts_ms = static_cast<std::int64_t>(std::llround(ts));
        if (!rec.timestamps_ms.empty() && ts_ms <= rec.timestamps_ms.back()) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": timestamps not strictly increasing");
        }
        double x = csv::parse_double(fields[x_col], path, line_no);
        double y = csv::parse_double(fields[y_col], path, line_no);
        if (valid_col >= 0) {
            const double flag = csv::parse_double(fields[valid_col], path, line_no);
            if (!(flag == 0.0)) { // nonzero or missing flag marks the row invalid
                x = std::numeric_limits<double>::quiet_NaN();
                y = std::numeric_limits<double>::quiet_NaN();
            }
        }
        rec.timestamps_ms.push_back(ts_ms);
        rec.x_deg.push_back(x);
        rec.y_deg.push_back(y);
    }
    if (rec.size() == 0) {
        throw ParseError(path.string() + ": no data rows");
    }
    return rec;
}

RecordingId parse_recording_id(const std::string& filename) {
    // S_<subject>_R<round>_S<session>_<task>.csv
    std::string stem = filename;
    if (auto dot = stem.rfind('.'); dot != std::string::npos) {
        stem = stem.substr(0, dot);
    }
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t end = stem.find('_', start);
        parts.push_back(stem.substr(start, end == std::string::npos ? std::string::npos : end - start));
        if (end == std::string::npos) {
            break;
        }
        start = end + 1;
    }
    if (parts.size() != 5 || parts[0] != "S" || parts[2].size() < 2 || parts[2][0] != 'R' ||
        parts[3].size() < 2 || parts[3][0] != 'S') {
        throw DataError("file name '" + filename +
                        "' does not match S_<subject>_R<round>_S<session>_<task>.csv");
    }
    RecordingId id;
    id.subject = parts[1];
    try {
        id.round = std::stoi(parts[2].substr(1));
        id.session = std::stoi(parts[3].substr(1));
    } catch (const std::exception&) {
        throw DataError("file name '" + filename + "' has non-numeric round/session");
    }
    id.task = parse_task(parts[4]);
    return id;
}

GazeRecording load_recording(const std::filesystem::path& path, const ColumnMap& columns) {
    return load_recording(path, columns, parse_recording_id(path.filename().string()));
}

std::string LabelKey::str() const {
    std::string s = subject + "/r" + std::to_string(round) + "/s" + std::to_string(session);
    if (task) {
        s += "/";
        s += to_string(*task);
    }
    return s;
}

LabelTable load_labels(const std::filesystem::path& path, LabelSchema schema, char delimiter) {
    csv::Reader reader(path, delimiter);
    const int subject_col = require_column(reader, "subject");
    const int round_col = require_column(reader, "round");
    const int session_col = require_column(reader, "session");
    const int task_col =
        schema == LabelSchema::KnownSubject3 ? require_column(reader, "task") : -1;
    const auto& names = target_names(schema);
    std::vector<int> target_cols;
    for (const auto& name : names) {
        target_cols.push_back(require_column(reader, name));
    }

    LabelTable table;
    table.schema = schema;
    std::vector<std::string_view> fields;
    std::size_t line_no = 0;
    while (reader.next(fields, line_no)) {
        LabelKey key;
        key.subject = std::string(fields[subject_col]);
        key.round = static_cast<int>(csv::parse_int(fields[round_col], path, line_no));
        key.session = static_cast<int>(csv::parse_int(fields[session_col], path, line_no));
        if (task_col >= 0) {
            key.task = parse_task(std::string(fields[task_col]));
        }
        LabelVector label;
        label.schema = schema;
        for (int col : target_cols) {
            label.values.push_back(csv::parse_double(fields[col], path, line_no));
        }
        if (!label.valid()) {
            ++table.dropped_rows;
            continue;
        }
        table.rows.emplace_back(std::move(key), std::move(label));
    }
    return table;
}

AlignResult align(const std::vector<VelocitySequence>& recordings, const LabelTable& labels) {
    std::map<LabelKey, LabelVector> by_key;
    for (const auto& [key, label] : labels.rows) {
        if (!by_key.emplace(key, label).second) {
            throw AmbiguityError("duplicate label rows for key " + key.str());
        }
    }

    const bool per_task = labels.schema == LabelSchema::KnownSubject3;
    AlignResult result;
    std::set<LabelKey> matched;
    for (const auto& rec : recordings) {
        LabelKey key;
        key.subject = rec.source_id.subject;
        key.round = rec.source_id.round;
        key.session = rec.source_id.session;
        if (per_task) {
            key.task = rec.source_id.task;
        }
        auto it = by_key.find(key);
        if (it == by_key.end()) {
            ++result.unmatched_recordings;
            continue;
        }
        matched.insert(key);
        PairedSample sample;
        sample.input = rec;
        sample.label = it->second;
        sample.id = rec.source_id;
        sample.phase = per_task ? QuestionnairePhase::PerSessionTask
                       : (rec.source_id.session == 1 ? QuestionnairePhase::BetweenSessions
                                                     : QuestionnairePhase::AfterSessions);
        result.samples.push_back(std::move(sample));
    }
    result.unmatched_labels = static_cast<int>(by_key.size() - matched.size());
    return result;
}

DatasetSplit build_split_known_subject(const std::vector<PairedSample>& samples,
                                       double val_fraction, std::uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction >= 1.0) {
        throw ConfigError("val_fraction must be in [0, 1)");
    }
    std::vector<std::size_t> round2;
    DatasetSplit split;
    split.test["round3"];
    split.test["round4"];
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.label.schema != LabelSchema::KnownSubject3) {
            throw ConfigError("known-subject split requires KnownSubject3 labels (sample " +
                              s.id.str() + ")");
        }
        switch (s.id.round) {
        case 2: round2.push_back(i); break;
        case 3: split.test["round3"].push_back(s); break;
        case 4: split.test["round4"].push_back(s); break;
        default: break; // rounds outside 2-4 are not part of this experiment
        }
    }
    if (round2.empty()) {
        throw ConfigError("known-subject split: no round-2 samples to train on");
    }

    auto rng = make_rng(seed, RngStream::SplitShuffle);
    deterministic_shuffle(round2, rng);
    const auto n_val = static_cast<std::size_t>(std::floor(round2.size() * val_fraction));
    const std::size_t n_train = round2.size() - n_val;
    for (std::size_t i = 0; i < round2.size(); ++i) {
        (i < n_train ? split.train : split.val).push_back(samples[round2[i]]);
    }
    return split;
}

DatasetSplit build_split_unknown_subject(const std::vector<PairedSample>& samples,
                                         double val_fraction, std::uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction >= 1.0) {
        throw ConfigError("val_fraction must be in [0, 1)");
    }
    std::map<std::string, std::set<int>> rounds_of;
    for (const auto& s : samples) {
        if (s.label.schema != LabelSchema::UnknownSubject6) {
            throw ConfigError("unknown-subject split requires UnknownSubject6 labels (sample " +
                              s.id.str() + ")");
        }
        if (s.id.round == 1 || s.id.round == 2) {
            rounds_of[s.id.subject].insert(s.id.round);
        }
    }

    // The paper's set expressions overlap; test on the intersection of the
    // two rounds' subjects, train/val on those present in exactly one.
    std::set<std::string> test_subjects;
    std::vector<std::string> pool;
    for (const auto& [subject, rounds] : rounds_of) {
        if (rounds.size() == 2) {
            test_subjects.insert(subject);
        } else {
            pool.push_back(subject); // std::map iteration keeps this sorted
        }
    }
    if (test_subjects.empty()) {
        throw ConfigError("unknown-subject split: no subject appears in both rounds 1 and 2");
    }
    if (pool.empty()) {
        throw ConfigError("unknown-subject split: every subject appears in both rounds; "
                          "nothing left to train on");
    }

    auto rng = make_rng(seed, RngStream::SplitShuffle);
    deterministic_shuffle(pool, rng);
    const auto n_val = static_cast<std::size_t>(std::floor(pool.size() * val_fraction));
    const std::size_t n_train = pool.size() - n_val;
    std::set<std::string> train_subjects(pool.begin(), pool.begin() + n_train);
    std::set<std::string> val_subjects(pool.begin() + n_train, pool.end());

    DatasetSplit split;
    split.test["between"];
    split.test["after"];
    for (const auto& s : samples) {
        if (s.id.round != 1 && s.id.round != 2) {
            continue;
        }
        if (test_subjects.count(s.id.subject)) {
            split.test[s.phase == QuestionnairePhase::BetweenSessions ? "between" : "after"]
                .push_back(s);
        } else if (train_subjects.count(s.id.subject)) {
            split.train.push_back(s);
        } else if (val_subjects.count(s.id.subject)) {
            split.val.push_back(s);
        }
    }
    return split;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    csv::Reader reader(path);
    const int path_col = require_column(reader, "path");
    const int subject_col = require_column(reader, "subject");
    const int round_col = require_column(reader, "round");
    const int session_col = require_column(reader, "session");
    const int task_col = require_column(reader, "task");

    const std::filesystem::path base = path.parent_path();
    std::vector<ManifestEntry> entries;
    std::vector<std::string_view> fields;
    std::size_t line_no = 0;
    while (reader.next(fields, line_no)) {
        ManifestEntry entry;
        std::filesystem::path p{std::string(fields[path_col])};
        entry.path = p.is_absolute() ? p : base / p;
        entry.id.subject = std::string(fields[subject_col]);
        entry.id.round = static_cast<int>(csv::parse_int(fields[round_col], path, line_no));
        entry.id.session = static_cast<int>(csv::parse_int(fields[session_col], path, line_no));
        entry.id.task = parse_task(std::string(fields[task_col]));
        entries.push_back(std::move(entry));
    }
    if (entries.empty()) {
        throw ParseError(path.string() + ": manifest has no entries");
    }
    return entries;
}

} // namespace gazereg::io
