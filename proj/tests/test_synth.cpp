#include "gazereg/synth.hpp"
#include "gazereg/errors.hpp"
#include "gazereg/gaze_io.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace gazereg;
using namespace gazereg::synth;

namespace {

SynthConfig small_config() {
    SynthConfig cfg;
    cfg.n_subjects = 4;
    cfg.rounds = {2, 3};
    cfg.tasks = {Task::TEX};
    cfg.duration_s = 52.0;
    cfg.seed = 3;
    return cfg;
}

double max_abs_velocity(const GazeRecording& rec) {
    double peak = 0.0;
    for (std::size_t i = 1; i < rec.size(); ++i) {
        if (std::isnan(rec.x_deg[i]) || std::isnan(rec.x_deg[i - 1])) {
            continue;
        }
        peak = std::max(peak, std::fabs(rec.x_deg[i] - rec.x_deg[i - 1]) * 1000.0);
        peak = std::max(peak, std::fabs(rec.y_deg[i] - rec.y_deg[i - 1]) * 1000.0);
    }
    return peak;
}

} // namespace

TEST_CASE("generator basics") {
    SynthConfig cfg = small_config();
    const RecordingId id{"s001", 2, 1, Task::TEX};

    SUBCASE("saccade rate 0 and noise 0 give a constant position") {
        cfg.saccade_rate = 0.0;
        cfg.noise_std = 0.0;
        cfg.nan_blink_rate = 0.0;
        const auto rec = generate_recording(cfg, id);
        REQUIRE(rec.size() == 52000);
        for (std::size_t i = 0; i < rec.size(); ++i) {
            CHECK(rec.x_deg[i] == rec.x_deg[0]);
            CHECK(rec.y_deg[i] == rec.y_deg[0]);
        }
    }
    SUBCASE("blinks appear as NaN runs") {
        cfg.nan_blink_rate = 10.0;
        const auto rec = generate_recording(cfg, id);
        int nan_runs = 0;
        bool in_run = false;
        for (std::size_t i = 0; i < rec.size(); ++i) {
            const bool is_nan = std::isnan(rec.x_deg[i]);
            nan_runs += (is_nan && !in_run) ? 1 : 0;
            in_run = is_nan;
        }
        CHECK(nan_runs >= 1);
    }
    SUBCASE("fixed seed reproduces the recording exactly") {
        const auto a = generate_recording(cfg, id);
        const auto b = generate_recording(cfg, id);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            const bool both_nan = std::isnan(a.x_deg[i]) && std::isnan(b.x_deg[i]);
            CHECK((both_nan || a.x_deg[i] == b.x_deg[i]));
        }
    }
    SUBCASE("doubling peak_velocity_scale doubles the max |velocity|") {
        cfg.noise_std = 0.0;
        cfg.nan_blink_rate = 0.0;
        cfg.saccade_rate = 0.5;
        cfg.duration_s = 10.0;
        const auto base = generate_recording(cfg, id);
        SynthConfig doubled = cfg;
        doubled.peak_velocity_scale *= 2.0;
        const auto fast = generate_recording(doubled, id);
        const double ratio = max_abs_velocity(fast) / max_abs_velocity(base);
        CHECK(ratio == doctest::Approx(2.0).epsilon(0.02));
    }
    SUBCASE("config validation") {
        cfg.peak_velocity_scale = 0.0;
        CHECK_THROWS_AS(generate_recording(cfg, id), ConfigError);
    }
}

TEST_CASE("labeled dataset: planted signal and determinism") {
    SynthConfig cfg = small_config();
    cfg.label_rule.noise_std = 0.0;
    const auto dataset = generate_labeled_dataset(cfg);
    // 4 subjects x 2 rounds x 2 sessions x 1 task
    CHECK(dataset.known_samples.size() == 16);
    CHECK(dataset.unknown_samples.size() == 16);
    CHECK(dataset.dropped_short == 0);

    SUBCASE("zero label noise recovers the latent exactly") {
        for (const auto& s : dataset.known_samples) {
            const double latent = dataset.latents.at(s.id.subject);
            for (double v : s.label.values) {
                CHECK(v == std::clamp(std::round(latent), 1.0, 7.0));
            }
        }
    }
    SUBCASE("every sample survived the preprocessing chain bounded") {
        for (const auto& s : dataset.known_samples) {
            REQUIRE(s.input.values.size() == 10000);
            for (float v : s.input.values) {
                CHECK(std::isfinite(v));
                CHECK(std::fabs(v) <= 1.0f);
            }
        }
    }
    SUBCASE("latents order mean velocity magnitudes") {
        // Compare the subjects with the smallest and largest latent.
        std::string lo_subject, hi_subject;
        double lo = 8, hi = 0;
        for (const auto& [subject, latent] : dataset.latents) {
            if (latent < lo) {
                lo = latent;
                lo_subject = subject;
            }
            if (latent > hi) {
                hi = latent;
                hi_subject = subject;
            }
        }
        REQUIRE(hi - lo > 1.0); // seeded draw spreads the four subjects
        auto mean_abs = [&dataset](const std::string& subject) {
            double sum = 0;
            std::size_t count = 0;
            for (const auto& s : dataset.known_samples) {
                if (s.id.subject != subject) {
                    continue;
                }
                for (float v : s.input.values) {
                    sum += std::fabs(v);
                }
                count += s.input.values.size();
            }
            return sum / static_cast<double>(count);
        };
        CHECK(mean_abs(hi_subject) > mean_abs(lo_subject));
    }
    SUBCASE("same seed, same dataset") {
        const auto again = generate_labeled_dataset(cfg);
        REQUIRE(again.known_samples.size() == dataset.known_samples.size());
        for (std::size_t i = 0; i < dataset.known_samples.size(); ++i) {
            CHECK(again.known_samples[i].input.values == dataset.known_samples[i].input.values);
            CHECK(again.known_samples[i].label.values == dataset.known_samples[i].label.values);
        }
    }
}

TEST_CASE("planted correlation between latent and mean |velocity| exceeds 0.5") {
    SynthConfig cfg;
    cfg.n_subjects = 12;
    cfg.rounds = {2};
    cfg.seed = 9;
    const auto dataset = generate_labeled_dataset(cfg);
    std::vector<double> latents, stats;
    for (const auto& s : dataset.known_samples) {
        double sum = 0;
        for (float v : s.input.values) {
            sum += std::fabs(v);
        }
        stats.push_back(sum / static_cast<double>(s.input.values.size()));
        latents.push_back(dataset.latents.at(s.id.subject));
    }
    const auto n = static_cast<double>(latents.size());
    double ml = 0, ms = 0;
    for (std::size_t i = 0; i < latents.size(); ++i) {
        ml += latents[i];
        ms += stats[i];
    }
    ml /= n;
    ms /= n;
    double num = 0, dl = 0, ds = 0;
    for (std::size_t i = 0; i < latents.size(); ++i) {
        num += (latents[i] - ml) * (stats[i] - ms);
        dl += (latents[i] - ml) * (latents[i] - ml);
        ds += (stats[i] - ms) * (stats[i] - ms);
    }
    CHECK(num / std::sqrt(dl * ds) > 0.5);
}

TEST_CASE("written dataset round-trips through gaze_io bit-exactly") {
    SynthConfig cfg = small_config();
    cfg.n_subjects = 2;
    cfg.rounds = {2};
    cfg.duration_s = 52.0;
    const auto dir = std::filesystem::temp_directory_path() / "gazereg_synth_files";
    std::filesystem::remove_all(dir);
    const auto files = write_dataset(cfg, dir);
    CHECK(files.n_recordings == 4);

    const auto entries = io::load_manifest(files.manifest);
    REQUIRE(entries.size() == 4);
    const auto rec = io::load_recording(entries[0].path, io::ColumnMap{}, entries[0].id);
    const auto direct = generate_recording(cfg, entries[0].id);
    REQUIRE(rec.size() == direct.size());
    for (std::size_t i = 0; i < rec.size(); ++i) {
        const bool both_nan = std::isnan(rec.x_deg[i]) && std::isnan(direct.x_deg[i]);
        CHECK((both_nan || rec.x_deg[i] == direct.x_deg[i]));
    }

    const auto labels = io::load_labels(files.labels_known, LabelSchema::KnownSubject3);
    CHECK(labels.rows.size() == 4);
    const auto unknown = io::load_labels(files.labels_unknown, LabelSchema::UnknownSubject6);
    CHECK(unknown.rows.size() == 4); // per (subject, round, session)

    SUBCASE("same seed produces identical files") {
        const auto dir2 = std::filesystem::temp_directory_path() / "gazereg_synth_files2";
        std::filesystem::remove_all(dir2);
        write_dataset(cfg, dir2);
        for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
            if (!entry.is_regular_file()) {
                continue;
            }
            const auto rel = std::filesystem::relative(entry.path(), dir);
            std::ifstream a(entry.path(), std::ios::binary);
            std::ifstream b(dir2 / rel, std::ios::binary);
            const std::string sa(std::istreambuf_iterator<char>(a), {});
            const std::string sb(std::istreambuf_iterator<char>(b), {});
            CHECK(sa == sb);
        }
        std::filesystem::remove_all(dir2);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("split presence mode covers the unknown-subject experiment") {
    SynthConfig cfg;
    cfg.n_subjects = 20;
    cfg.rounds = {1, 2};
    cfg.presence = PresenceMode::SplitRounds;
    cfg.seed = 4;
    const auto dataset = generate_labeled_dataset(cfg);
    const DatasetSplit split = io::build_split_unknown_subject(dataset.unknown_samples, 0.2, 4);
    CHECK(!split.train.empty());
    CHECK(!split.test.at("between").empty());
    CHECK(!split.test.at("after").empty());

    SUBCASE("SplitRounds demands rounds {1,2}") {
        cfg.rounds = {2, 3};
        CHECK_THROWS_AS(generate_labeled_dataset(cfg), ConfigError);
    }
}
