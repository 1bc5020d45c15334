#include "gazereg/commands.hpp"

#include "gazereg/csvio.hpp"
#include "gazereg/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>

namespace gazereg::cmd {

std::vector<VelocitySequence> load_and_preprocess(const std::filesystem::path& manifest,
                                                  const io::ColumnMap& columns,
                                                  const prep::PrepOptions& prep_opts,
                                                  PreprocessSummary* summary) {
    const auto entries = io::load_manifest(manifest);
    PreprocessSummary local;
    local.total = static_cast<int>(entries.size());
    std::vector<VelocitySequence> out;
    out.reserve(entries.size());
    for (const auto& entry : entries) {
        const GazeRecording rec = io::load_recording(entry.path, columns, entry.id);
        VelocitySequence seq;
        try {
            seq = prep::preprocess(rec, prep_opts);
        } catch (const LengthError& e) {
            ++local.dropped_short;
            std::cerr << "warning: dropped " << entry.id.str() << ": " << e.what() << "\n";
            continue;
        }
        std::size_t zeros = 0;
        for (std::size_t i = 0; i < rec.size(); ++i) {
            if (std::isnan(rec.x_deg[i]) || std::isnan(rec.y_deg[i])) {
                ++zeros;
            }
        }
        if (zeros * 2 > rec.size()) {
            ++local.nan_heavy;
        }
        ++local.ok;
        out.push_back(std::move(seq));
    }
    if (summary) {
        *summary = local;
    }
    return out;
}

namespace {

constexpr char kArchiveMagic[8] = {'G', 'Z', 'R', 'G', 'V', 'S', 'E', 'Q'};

static_assert(std::endian::native == std::endian::little,
              "archive format is little-endian; big-endian hosts are unsupported");

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::filesystem::path& path) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) {
        throw DataError("truncated archive " + path.string());
    }
    return v;
}

} // namespace

void save_archive(const std::filesystem::path& path, const std::vector<VelocitySequence>& seqs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write archive " + path.string());
    }
    out.write(kArchiveMagic, sizeof(kArchiveMagic));
    write_pod(out, static_cast<std::uint32_t>(1));
    write_pod(out, static_cast<std::uint32_t>(seqs.size()));
    for (const auto& seq : seqs) {
        write_pod(out, static_cast<std::uint16_t>(seq.source_id.subject.size()));
        out.write(seq.source_id.subject.data(),
                  static_cast<std::streamsize>(seq.source_id.subject.size()));
        write_pod(out, static_cast<std::int32_t>(seq.source_id.round));
        write_pod(out, static_cast<std::int32_t>(seq.source_id.session));
        write_pod(out, static_cast<std::uint8_t>(seq.source_id.task));
        out.write(reinterpret_cast<const char*>(seq.values.data()),
                  static_cast<std::streamsize>(seq.values.size() * sizeof(float)));
    }
    if (!out) {
        throw IoError("failed writing archive " + path.string());
    }
}

std::vector<VelocitySequence> load_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open archive " + path.string());
    }
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kArchiveMagic, sizeof(kArchiveMagic)) != 0) {
        throw DataError(path.string() + " is not a velocity archive");
    }
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != 1) {
        throw DataError("unsupported archive version " + std::to_string(version));
    }
    const auto count = read_pod<std::uint32_t>(in, path);
    std::vector<VelocitySequence> seqs(count);
    for (auto& seq : seqs) {
        const auto name_len = read_pod<std::uint16_t>(in, path);
        seq.source_id.subject.assign(name_len, '\0');
        in.read(seq.source_id.subject.data(), name_len);
        seq.source_id.round = read_pod<std::int32_t>(in, path);
        seq.source_id.session = read_pod<std::int32_t>(in, path);
        seq.source_id.task = static_cast<Task>(read_pod<std::uint8_t>(in, path));
        seq.values.resize(static_cast<std::size_t>(VelocitySequence::kChannels) *
                          VelocitySequence::kSteps);
        in.read(reinterpret_cast<char*>(seq.values.data()),
                static_cast<std::streamsize>(seq.values.size() * sizeof(float)));
        if (!in) {
            throw DataError("truncated archive " + path.string());
        }
    }
    return seqs;
}

DatasetSplit build_split(const RunConfig& config, const std::vector<VelocitySequence>& recordings,
                         std::ostream& log) {
    const io::LabelTable labels = io::load_labels(config.labels, config.schema());
    if (labels.dropped_rows > 0) {
        log << "labels: dropped " << labels.dropped_rows << " rows with missing/out-of-range ratings\n";
    }
    io::AlignResult aligned = io::align(recordings, labels);
    log << "aligned " << aligned.samples.size() << " samples (" << aligned.unmatched_recordings
        << " unmatched recordings, " << aligned.unmatched_labels << " unmatched label rows)\n";

    std::vector<PairedSample> samples = std::move(aligned.samples);
    if (config.session_filter == 1 || config.session_filter == 2) {
        std::erase_if(samples,
                      [&config](const PairedSample& s) { return s.id.session != config.session_filter; });
        log << "session filter " << config.session_filter << ": " << samples.size()
            << " samples kept\n";
    }
    if (config.experiment == Experiment::KnownSubject) {
        return io::build_split_known_subject(samples, config.val_fraction, config.seed);
    }
    return io::build_split_unknown_subject(samples, config.val_fraction, config.seed);
}

synth::SynthFiles cmd_synth(const synth::SynthConfig& config, const std::filesystem::path& out_dir) {
    return synth::write_dataset(config, out_dir);
}

PreprocessSummary cmd_preprocess(const std::filesystem::path& manifest, const io::ColumnMap& columns,
                                 const prep::PrepOptions& prep_opts,
                                 const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) {
        throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    }
    PreprocessSummary summary;
    const auto seqs = load_and_preprocess(manifest, columns, prep_opts, &summary);
    save_archive(out_dir / "velocities.bin", seqs);
    std::ofstream sum(out_dir / "preprocess_summary.csv");
    if (!sum) {
        throw IoError("cannot write preprocess summary");
    }
    sum << "total,ok,dropped_short,nan_heavy\n"
        << summary.total << ',' << summary.ok << ',' << summary.dropped_short << ','
        << summary.nan_heavy << '\n';
    return summary;
}

namespace {

std::vector<VelocitySequence> load_inputs(const RunConfig& config, std::ostream& log) {
    if (!config.archive.empty()) {
        log << "loading preprocessed archive " << config.archive.string() << "\n";
        return load_archive(config.archive);
    }
    if (config.manifest.empty()) {
        throw ConfigError("either --manifest or a preprocessed archive is required");
    }
    PreprocessSummary summary;
    auto seqs = load_and_preprocess(config.manifest, config.columns, config.prep, &summary);
    log << "preprocessed " << summary.ok << "/" << summary.total << " recordings ("
        << summary.dropped_short << " dropped short, " << summary.nan_heavy << " NaN-heavy)\n";
    return seqs;
}

model::ModelConfig resolve_model_config(const RunConfig& config) {
    model::ModelConfig mc = config.model;
    mc.n_targets = target_count(config.schema());
    return mc;
}

void write_reports(const std::filesystem::path& out_dir, const std::string& partition,
                   const std::vector<eval::MetricsReport>& reports) {
    eval::write_overall_csv(out_dir / (partition + "_overall.csv"), reports);
    eval::write_per_target_csv(out_dir / (partition + "_per_target.csv"), reports);
}

} // namespace

train::TrainHistory cmd_train(const RunConfig& config) {
    if (config.labels.empty()) {
        throw ConfigError("--labels is required");
    }
    if (config.out_dir.empty()) {
        throw ConfigError("--out is required");
    }
    std::error_code ec;
    std::filesystem::create_directories(config.out_dir, ec);
    if (ec) {
        throw IoError("cannot create " + config.out_dir.string() + ": " + ec.message());
    }
    std::ofstream log(config.out_dir / "train.log");
    if (!log) {
        throw IoError("cannot write train.log");
    }

    const auto inputs = load_inputs(config, log);
    DatasetSplit split = build_split(config, inputs, log);
    log << "split: train=" << split.train.size() << " val=" << split.val.size();
    for (const auto& [name, part] : split.test) {
        log << " " << name << "=" << part.size();
    }
    log << "\n";

    const model::ModelConfig mc = resolve_model_config(config);
    auto net = model::build_model<float>(mc, config.seed);
    train::TrainConfig tc = config.train;
    tc.seed = config.seed;
    const train::TrainHistory history = train::fit(net, split, tc);

    for (const auto& e : history.epochs) {
        char line[160];
        std::snprintf(line, sizeof(line), "epoch %3d  train_loss %.6f  val_loss %.6f  (%.1fs)\n",
                      e.epoch, e.train_loss, e.val_loss, e.seconds);
        log << line;
    }
    log << "best epoch " << history.best_epoch
        << (history.stopped_early ? " (stopped early)\n" : "\n");

    train::save_checkpoint(net, config.out_dir / "checkpoint.bin");
    train::save_history_csv(history, config.out_dir / "history.csv");

    std::ofstream summary(config.out_dir / "model_summary.txt");
    summary << model::model_summary(mc);

    // Validation report with the restored best weights.
    const nn::Tensor<float> val_pred = train::predict(net, split.val, tc.batch_size);
    const std::vector<eval::MetricsReport> val_reports{
        eval::evaluate(val_pred.cast<double>(), eval::labels_to_tensor(split.val),
                       target_names(config.schema()), "validation", "DenseNet",
                       config.accuracy_mode)};
    write_reports(config.out_dir, "validation", val_reports);
    return history;
}

void cmd_evaluate(const RunConfig& config, const std::filesystem::path& checkpoint) {
    if (config.labels.empty()) {
        throw ConfigError("--labels is required");
    }
    if (config.out_dir.empty()) {
        throw ConfigError("--out is required");
    }
    std::error_code ec;
    std::filesystem::create_directories(config.out_dir, ec);
    if (ec) {
        throw IoError("cannot create " + config.out_dir.string() + ": " + ec.message());
    }
    std::ofstream log(config.out_dir / "evaluate.log");

    const auto inputs = load_inputs(config, log);
    DatasetSplit split = build_split(config, inputs, log);
    auto net = train::load_checkpoint(checkpoint);
    if (net.config.n_targets != target_count(config.schema())) {
        throw ConfigError("checkpoint predicts " + std::to_string(net.config.n_targets) +
                          " targets but the experiment needs " +
                          std::to_string(target_count(config.schema())));
    }

    std::vector<LabelVector> train_labels;
    train_labels.reserve(split.train.size());
    for (const auto& s : split.train) {
        train_labels.push_back(s.label);
    }
    const eval::GlobalMeanPredictor baseline = eval::fit_global_mean(train_labels);

    std::vector<eval::MetricsReport> all_reports;
    for (const auto& [partition, samples] : split.test) {
        if (samples.empty()) {
            log << "partition " << partition << " is empty, skipped\n";
            continue;
        }
        const nn::Tensor<double> targets = eval::labels_to_tensor(samples);
        const nn::Tensor<double> base_pred =
            eval::predict(baseline, static_cast<std::int64_t>(samples.size()));
        const nn::Tensor<double> model_pred =
            train::predict(net, samples, config.train.batch_size).cast<double>();

        std::vector<eval::MetricsReport> reports;
        reports.push_back(eval::evaluate(base_pred, targets, target_names(config.schema()),
                                         partition, "Global Mean", config.accuracy_mode));
        reports.push_back(eval::evaluate(model_pred, targets, target_names(config.schema()),
                                         partition, "DenseNet", config.accuracy_mode));
        write_reports(config.out_dir, partition, reports);
        all_reports.insert(all_reports.end(), reports.begin(), reports.end());
    }
    if (all_reports.empty()) {
        throw DataError("no non-empty test partition to evaluate");
    }

    std::ofstream md(config.out_dir / "report.md");
    if (!md) {
        throw IoError("cannot write report.md");
    }
    md << eval::render_markdown(all_reports);
}

void cmd_report(const std::filesystem::path& run_dir) {
    if (!std::filesystem::is_directory(run_dir)) {
        throw DataError(run_dir.string() + " is not a directory");
    }
    std::vector<eval::MetricsReport> all_reports;
    std::vector<std::filesystem::path> overall_files;
    for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > 12 && name.ends_with("_overall.csv")) {
            overall_files.push_back(entry.path());
        }
    }
    std::sort(overall_files.begin(), overall_files.end());
    for (const auto& overall : overall_files) {
        std::string stem = overall.filename().string();
        stem.resize(stem.size() - std::string("_overall.csv").size());
        const auto per_target = run_dir / (stem + "_per_target.csv");
        if (!std::filesystem::exists(per_target)) {
            continue;
        }
        const auto reports = eval::read_reports(overall, per_target);
        all_reports.insert(all_reports.end(), reports.begin(), reports.end());
    }
    if (all_reports.empty()) {
        throw DataError("no report CSVs found under " + run_dir.string());
    }
    std::ofstream md(run_dir / "report.md");
    if (!md) {
        throw IoError("cannot write report.md");
    }
    md << eval::render_markdown(all_reports);
}

} // namespace gazereg::cmd
