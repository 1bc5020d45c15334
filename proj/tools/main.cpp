#include "gazereg/commands.hpp"
#include "gazereg/errors.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>

namespace {

using namespace gazereg;

struct CliState {
    cmd::RunConfig run;
    synth::SynthConfig synth;
    std::filesystem::path checkpoint;
    std::filesystem::path report_dir;
    std::string experiment = "known";
    std::string short_policy = "drop";
    std::string dilation_mode = "mod-exponent";
    std::string accuracy_mode = "per-element";
    std::string presence = "all";
    std::vector<int> rounds = {2, 3, 4};
    std::vector<std::string> tasks = {"TEX"};
};

void apply_common(CliState& s) {
    s.run.experiment = s.experiment == "known" ? cmd::Experiment::KnownSubject
                                               : cmd::Experiment::UnknownSubject;
    s.run.prep.short_policy = s.short_policy == "drop" ? prep::ShortRecordingPolicy::Drop
                                                       : prep::ShortRecordingPolicy::Pad;
    s.run.model.dilation_mode = s.dilation_mode == "literal" ? model::DilationMode::Literal
                                                             : model::DilationMode::ModExponent;
    s.run.accuracy_mode = s.accuracy_mode == "per-sample" ? eval::AccuracyMode::PerSample
                                                          : eval::AccuracyMode::PerElement;
}

void add_data_options(CLI::App* app, CliState& s) {
    app->add_option("--manifest", s.run.manifest, "Recording manifest CSV");
    app->add_option("--labels", s.run.labels, "Label table CSV");
    app->add_option("--archive", s.run.archive, "Preprocessed velocity archive (skips --manifest)");
    app->add_option("--col-timestamp", s.run.columns.timestamp, "Timestamp column name");
    app->add_option("--col-x", s.run.columns.x, "Horizontal position column name");
    app->add_option("--col-y", s.run.columns.y, "Vertical position column name");
    app->add_option("--col-validity", s.run.columns.validity,
                    "Validity column (nonzero rows become NaN)");
    app->add_option("--short-recording-policy", s.short_policy, "Recordings shorter than 50 s")
        ->check(CLI::IsMember({"drop", "pad"}));
}

void add_experiment_options(CLI::App* app, CliState& s) {
    app->add_option("--experiment", s.experiment, "known (cross-round) or unknown (cross-subject)")
        ->check(CLI::IsMember({"known", "unknown"}));
    app->add_option("--val-fraction", s.run.val_fraction, "Validation fraction of the train pool");
    app->add_option("--sessions", s.run.session_filter,
                    "Restrict to one session (0 = both)")
        ->check(CLI::IsMember({0, 1, 2}));
}

void add_model_options(CLI::App* app, CliState& s) {
    app->add_option("--epochs", s.run.train.max_epochs, "Maximum training epochs");
    app->add_option("--batch-size", s.run.train.batch_size, "Minibatch size");
    app->add_option("--lr", s.run.train.lr, "Adam learning rate");
    app->add_option("--dropout", s.run.model.dropout_rate, "Dropout rate in the head");
    app->add_option("--weight-decay", s.run.train.weight_decay, "Decoupled weight decay");
    app->add_option("--patience", s.run.train.early_stop_patience, "Early stopping patience");
    app->add_option("--embed-dim", s.run.model.embed_dim, "Embedding width after GAP");
    app->add_option("--head-hidden", s.run.model.head_hidden, "Hidden width of the head");
    app->add_option("--smooth-l1-beta", s.run.train.smooth_l1_beta, "Smooth-L1 transition point");
    app->add_option("--dilation-mode", s.dilation_mode, "Dilation schedule reading")
        ->check(CLI::IsMember({"mod-exponent", "literal"}));
}

int run(int argc, char** argv) {
    CLI::App app{"Gaze-velocity regression of subjective self-reports"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Key=value config file; command line takes precedence");
    app.get_config_formatter_base()->comment('#');

    CliState s;
    app.add_option("--seed", s.run.seed, "Master seed for all randomness");
    app.add_option("--out", s.run.out_dir, "Output directory for run artifacts");

    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth_cmd->add_option("--subjects", s.synth.n_subjects, "Number of subjects");
    synth_cmd->add_option("--rounds", s.rounds, "Recording rounds to generate");
    synth_cmd->add_option("--tasks", s.tasks, "Task codes to generate");
    synth_cmd->add_option("--duration", s.synth.duration_s, "Recording duration in seconds");
    synth_cmd->add_option("--saccade-rate", s.synth.saccade_rate, "Saccades per second");
    synth_cmd->add_option("--peak-velocity-scale", s.synth.peak_velocity_scale,
                          "Peak saccade velocity at 10 deg amplitude");
    synth_cmd->add_option("--noise-std", s.synth.noise_std, "Position noise in degrees");
    synth_cmd->add_option("--blink-rate", s.synth.nan_blink_rate, "Blinks (NaN gaps) per minute");
    synth_cmd->add_option("--label-noise", s.synth.label_rule.noise_std,
                          "Noise added to planted ratings");
    synth_cmd->add_option("--presence", s.presence, "Subject presence across rounds")
        ->check(CLI::IsMember({"all", "split"}));

    auto* prep_cmd = app.add_subcommand("preprocess", "Preprocess a manifest into velocities");
    add_data_options(prep_cmd, s);

    auto* train_cmd = app.add_subcommand("train", "Train the regressor");
    add_data_options(train_cmd, s);
    add_experiment_options(train_cmd, s);
    add_model_options(train_cmd, s);

    auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test partitions");
    add_data_options(eval_cmd, s);
    add_experiment_options(eval_cmd, s);
    add_model_options(eval_cmd, s);
    eval_cmd->add_option("--checkpoint", s.checkpoint, "Trained checkpoint")->required();
    eval_cmd->add_option("--accuracy-mode", s.accuracy_mode, "Exact-accuracy pooling")
        ->check(CLI::IsMember({"per-element", "per-sample"}));

    auto* report_cmd = app.add_subcommand("report", "Combine report CSVs into markdown");
    report_cmd->add_option("--run", s.report_dir, "Run directory with *_overall.csv files")
        ->required();

    CLI11_PARSE(app, argc, argv);
    apply_common(s);

    if (synth_cmd->parsed()) {
        if (s.run.out_dir.empty()) {
            throw ConfigError("--out is required");
        }
        s.synth.seed = s.run.seed;
        s.synth.rounds = s.rounds;
        s.synth.tasks.clear();
        for (const auto& code : s.tasks) {
            s.synth.tasks.push_back(parse_task(code));
        }
        s.synth.presence = s.presence == "split" ? synth::PresenceMode::SplitRounds
                                                 : synth::PresenceMode::AllRounds;
        const auto files = cmd::cmd_synth(s.synth, s.run.out_dir);
        std::cout << "wrote " << files.n_recordings << " recordings, manifest "
                  << files.manifest.string() << "\n";
    } else if (prep_cmd->parsed()) {
        if (s.run.manifest.empty() || s.run.out_dir.empty()) {
            throw ConfigError("--manifest and --out are required");
        }
        const auto summary = cmd::cmd_preprocess(s.run.manifest, s.run.columns, s.run.prep,
                                                 s.run.out_dir);
        std::cout << "preprocessed " << summary.ok << "/" << summary.total << " recordings ("
                  << summary.dropped_short << " dropped short, " << summary.nan_heavy
                  << " NaN-heavy)\n";
    } else if (train_cmd->parsed()) {
        const auto history = cmd::cmd_train(s.run);
        std::cout << "trained " << history.epochs.size() << " epochs, best epoch "
                  << history.best_epoch << ", checkpoint at "
                  << (s.run.out_dir / "checkpoint.bin").string() << "\n";
    } else if (eval_cmd->parsed()) {
        cmd::cmd_evaluate(s.run, s.checkpoint);
        std::cout << "reports written under " << s.run.out_dir.string() << "\n";
    } else if (report_cmd->parsed()) {
        cmd::cmd_report(s.report_dir);
        std::cout << "wrote " << (s.report_dir / "report.md").string() << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
