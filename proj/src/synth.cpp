#include "gazereg/synth.hpp"

#include "gazereg/csvio.hpp"
#include "gazereg/errors.hpp"
#include "gazereg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

namespace gazereg::synth {

void SynthConfig::validate() const {
    if (n_subjects < 1) {
        throw ConfigError("synth: n_subjects must be >= 1");
    }
    if (rounds.empty() || tasks.empty()) {
        throw ConfigError("synth: rounds and tasks must be non-empty");
    }
    if (!(duration_s > 1.0)) {
        throw ConfigError("synth: duration_s must exceed 1 second");
    }
    if (saccade_rate < 0.0 || nan_blink_rate < 0.0 || noise_std < 0.0 ||
        label_rule.noise_std < 0.0) {
        throw ConfigError("synth: rates and noise levels must be >= 0");
    }
    if (!(peak_velocity_scale > 0.0)) {
        throw ConfigError("synth: peak_velocity_scale must be positive");
    }
    if (presence == PresenceMode::SplitRounds &&
        std::set<int>(rounds.begin(), rounds.end()) != std::set<int>{1, 2}) {
        throw ConfigError("synth: SplitRounds presence expects rounds {1, 2}");
    }
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

// Scope-keyed generator: deterministic in (seed, kind, identity) and
// independent of generation order.
std::mt19937_64 scoped_rng(const SynthConfig& cfg, std::string_view kind,
                           const std::string& subject, int round, int session, int task) {
    std::uint64_t state = derive_stream_seed(cfg.seed, RngStream::Synth);
    state ^= fnv1a(kind);
    state = splitmix64(state);
    state ^= fnv1a(subject);
    state = splitmix64(state);
    state ^= (static_cast<std::uint64_t>(static_cast<std::uint32_t>(round)) << 32) ^
             (static_cast<std::uint64_t>(static_cast<std::uint16_t>(session)) << 16) ^
             static_cast<std::uint64_t>(static_cast<std::uint16_t>(task + 1));
    return std::mt19937_64(splitmix64(state));
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

double normal(std::mt19937_64& rng, double stddev) {
    // Box-Muller; two fresh uniforms per draw keeps the sequence simple and
    // portable across standard libraries.
    const double u1 = std::max(uniform01(rng), 1e-300);
    const double u2 = uniform01(rng);
    return stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double quantize(double v) {
    return std::isnan(v) ? v : std::round(v * 1e4) / 1e4;
}

} // namespace

double subject_latent(const SynthConfig& config, const std::string& subject) {
    auto rng = scoped_rng(config, "latent", subject, 0, 0, -1);
    return uniform(rng, 1.0, 7.0);
}

GazeRecording generate_recording(const SynthConfig& config, const RecordingId& id) {
    config.validate();
    const double latent = subject_latent(config, id.subject);
    // Higher latent -> faster and more frequent saccades; this is the
    // planted signal the labels encode.
    const double velocity_factor = 0.5 + (latent - 1.0) / 6.0;   // [0.5, 1.5]
    const double rate_factor = 0.75 + (latent - 1.0) / 12.0;     // [0.75, 1.25]
    const double eff_scale = config.peak_velocity_scale * velocity_factor;
    const double eff_rate = config.saccade_rate * rate_factor;

    const auto n = static_cast<std::size_t>(std::llround(config.duration_s * 1000.0));
    GazeRecording rec;
    rec.id = id;
    rec.timestamps_ms.resize(n);
    rec.x_deg.assign(n, 0.0);
    rec.y_deg.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        rec.timestamps_ms[i] = static_cast<std::int64_t>(i);
    }

    auto rng = scoped_rng(config, "recording", id.subject, id.round, id.session,
                          static_cast<int>(id.task));

    // Event walk: fixation, then a raised-cosine saccade to a fresh target.
    double px = 0.0, py = 0.0;
    std::size_t t = 0;
    while (t < n && eff_rate > 0.0) {
        const double fix_s = uniform(rng, 0.5, 1.5) / eff_rate;
        std::size_t fix_end = std::min(n, t + static_cast<std::size_t>(std::llround(fix_s * 1000.0)));
        for (; t < fix_end; ++t) {
            rec.x_deg[t] = px;
            rec.y_deg[t] = py;
        }
        if (t >= n) {
            break;
        }
        const double tx = uniform(rng, -15.0, 15.0);
        const double ty = uniform(rng, -15.0, 15.0);
        const double dx = tx - px, dy = ty - py;
        // Peak velocity = eff_scale * amplitude/10, so the duration
        // pi*A/(2*v_peak) is amplitude-independent.
        const double dur_s = std::numbers::pi * 10.0 / (2.0 * eff_scale);
        const auto m = std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(dur_s * 1000.0)));
        for (std::size_t k = 0; k < m && t < n; ++k, ++t) {
            const double s =
                (1.0 - std::cos(std::numbers::pi * static_cast<double>(k + 1) / static_cast<double>(m))) / 2.0;
            rec.x_deg[t] = px + dx * s;
            rec.y_deg[t] = py + dy * s;
        }
        px = tx;
        py = ty;
    }
    for (; t < n; ++t) { // no saccades (rate 0) or tail after the last event
        rec.x_deg[t] = px;
        rec.y_deg[t] = py;
    }

    if (config.noise_std > 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
            rec.x_deg[i] += normal(rng, config.noise_std);
            rec.y_deg[i] += normal(rng, config.noise_std);
        }
    }

    if (config.nan_blink_rate > 0.0) {
        double blink_t = uniform(rng, 0.5, 1.5) * 60.0 / config.nan_blink_rate;
        while (blink_t * 1000.0 < static_cast<double>(n)) {
            const auto b0 = static_cast<std::size_t>(blink_t * 1000.0);
            const auto b1 = std::min(
                n, b0 + static_cast<std::size_t>(std::llround(uniform(rng, 0.1, 0.3) * 1000.0)));
            for (std::size_t i = b0; i < b1; ++i) {
                rec.x_deg[i] = std::numeric_limits<double>::quiet_NaN();
                rec.y_deg[i] = std::numeric_limits<double>::quiet_NaN();
            }
            blink_t += uniform(rng, 0.5, 1.5) * 60.0 / config.nan_blink_rate;
        }
    }

    // Quantize to 0.1 millidegree so the CSV round-trip is exact.
    for (std::size_t i = 0; i < n; ++i) {
        rec.x_deg[i] = quantize(rec.x_deg[i]);
        rec.y_deg[i] = quantize(rec.y_deg[i]);
    }
    return rec;
}

namespace {

double planted_rating(const SynthConfig& cfg, double latent, std::mt19937_64& rng) {
    const double raw =
        cfg.label_rule.scale * latent + cfg.label_rule.offset + normal(rng, cfg.label_rule.noise_std);
    return std::clamp(std::round(raw), 1.0, 7.0);
}

LabelVector known_label(const SynthConfig& cfg, const RecordingId& id) {
    auto rng = scoped_rng(cfg, "labels-known", id.subject, id.round, id.session,
                          static_cast<int>(id.task));
    const double latent = subject_latent(cfg, id.subject);
    LabelVector label;
    label.schema = LabelSchema::KnownSubject3;
    for (int j = 0; j < target_count(LabelSchema::KnownSubject3); ++j) {
        label.values.push_back(planted_rating(cfg, latent, rng));
    }
    return label;
}

LabelVector unknown_label(const SynthConfig& cfg, const std::string& subject, int round,
                          int session) {
    auto rng = scoped_rng(cfg, "labels-unknown", subject, round, session, -1);
    const double latent = subject_latent(cfg, subject);
    LabelVector label;
    label.schema = LabelSchema::UnknownSubject6;
    for (int j = 0; j < target_count(LabelSchema::UnknownSubject6); ++j) {
        label.values.push_back(planted_rating(cfg, latent, rng));
    }
    return label;
}

std::string subject_name(int index) { // 1-based
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%03d", index);
    return buf;
}

std::vector<int> subject_rounds(const SynthConfig& cfg, int index) {
    if (cfg.presence == PresenceMode::AllRounds) {
        return cfg.rounds;
    }
    const int g = index % 10;
    if (g < 4) {
        return {1};
    }
    if (g < 7) {
        return {2};
    }
    return {1, 2};
}

template <typename Fn>
void for_each_recording_id(const SynthConfig& cfg, Fn&& fn) {
    for (int i = 1; i <= cfg.n_subjects; ++i) {
        const std::string subject = subject_name(i);
        for (int round : subject_rounds(cfg, i)) {
            for (int session = 1; session <= 2; ++session) {
                for (Task task : cfg.tasks) {
                    fn(RecordingId{subject, round, session, task});
                }
            }
        }
    }
}

} // namespace

SynthDataset generate_labeled_dataset(const SynthConfig& config, const prep::PrepOptions& prep_opts) {
    config.validate();
    SynthDataset dataset;
    for (int i = 1; i <= config.n_subjects; ++i) {
        dataset.latents[subject_name(i)] = subject_latent(config, subject_name(i));
    }
    for_each_recording_id(config, [&](const RecordingId& id) {
        const GazeRecording rec = generate_recording(config, id);
        VelocitySequence seq;
        try {
            seq = prep::preprocess(rec, prep_opts);
        } catch (const LengthError&) {
            ++dataset.dropped_short;
            return;
        }

        PairedSample known;
        known.input = seq;
        known.label = known_label(config, id);
        known.id = id;
        known.phase = QuestionnairePhase::PerSessionTask;
        dataset.known_samples.push_back(std::move(known));

        PairedSample unknown;
        unknown.input = std::move(seq);
        unknown.label = unknown_label(config, id.subject, id.round, id.session);
        unknown.id = id;
        unknown.phase = id.session == 1 ? QuestionnairePhase::BetweenSessions
                                        : QuestionnairePhase::AfterSessions;
        dataset.unknown_samples.push_back(std::move(unknown));
    });
    return dataset;
}

SynthFiles write_dataset(const SynthConfig& config, const std::filesystem::path& out_dir) {
    config.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "recordings", ec);
    if (ec) {
        throw IoError("cannot create " + (out_dir / "recordings").string() + ": " + ec.message());
    }

    SynthFiles files;
    files.manifest = out_dir / "manifest.csv";
    files.labels_known = out_dir / "labels_known.csv";
    files.labels_unknown = out_dir / "labels_unknown.csv";

    std::ofstream manifest(files.manifest);
    std::ofstream known(files.labels_known);
    std::ofstream unknown(files.labels_unknown);
    if (!manifest || !known || !unknown) {
        throw IoError("cannot write dataset files under " + out_dir.string());
    }
    manifest << "path,subject,round,session,task\n";
    known << "subject,round,session,task";
    for (const auto& name : target_names(LabelSchema::KnownSubject3)) {
        known << ',' << name;
    }
    known << "\n";
    unknown << "subject,round,session";
    for (const auto& name : target_names(LabelSchema::UnknownSubject6)) {
        unknown << ',' << name;
    }
    unknown << "\n";

    std::set<std::string> unknown_written;
    std::string buf;
    for_each_recording_id(config, [&](const RecordingId& id) {
        const GazeRecording rec = generate_recording(config, id);
        char name[64];
        std::snprintf(name, sizeof(name), "S_%s_R%d_S%d_%s.csv", id.subject.c_str(), id.round,
                      id.session, to_string(id.task));
        const std::filesystem::path rel = std::filesystem::path("recordings") / name;
        std::ofstream rec_out(out_dir / rel);
        if (!rec_out) {
            throw IoError("cannot write " + (out_dir / rel).string());
        }
        buf.clear();
        buf += "n,x,y\n";
        for (std::size_t i = 0; i < rec.size(); ++i) {
            buf += std::to_string(rec.timestamps_ms[i]);
            buf += ',';
            csv::append_double(buf, rec.x_deg[i]);
            buf += ',';
            csv::append_double(buf, rec.y_deg[i]);
            buf += '\n';
        }
        rec_out << buf;
        ++files.n_recordings;

        manifest << rel.generic_string() << ',' << id.subject << ',' << id.round << ','
                 << id.session << ',' << to_string(id.task) << '\n';

        const LabelVector kl = known_label(config, id);
        known << id.subject << ',' << id.round << ',' << id.session << ',' << to_string(id.task);
        for (double v : kl.values) {
            known << ',' << csv::format_double(v);
        }
        known << '\n';

        const std::string ukey =
            id.subject + "/" + std::to_string(id.round) + "/" + std::to_string(id.session);
        if (unknown_written.insert(ukey).second) {
            const LabelVector ul = unknown_label(config, id.subject, id.round, id.session);
            unknown << id.subject << ',' << id.round << ',' << id.session;
            for (double v : ul.values) {
                unknown << ',' << csv::format_double(v);
            }
            unknown << '\n';
        }
    });
    return files;
}

} // namespace gazereg::synth
