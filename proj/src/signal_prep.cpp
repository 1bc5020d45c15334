#include "gazereg/signal_prep.hpp"

#include "gazereg/csvio.hpp"
#include "gazereg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace gazereg::prep {

void SgFilterSpec::validate() const {
    if (window < 1 || window % 2 == 0) {
        throw ArgumentError("SG window must be a positive odd integer, got " + std::to_string(window));
    }
    if (polyorder < 0 || polyorder >= window) {
        throw ArgumentError("SG polyorder must satisfy 0 <= polyorder < window");
    }
    if (derivative_order < 0 || derivative_order > polyorder) {
        throw ArgumentError("SG derivative order must satisfy 0 <= order <= polyorder");
    }
    if (!(dt > 0.0)) {
        throw ArgumentError("SG dt must be positive");
    }
}

GazeRecording crop(const GazeRecording& recording, double duration_s) {
    const auto keep = static_cast<std::size_t>(std::llround(duration_s * 1000.0));
    if (recording.size() <= keep) {
        return recording;
    }
    GazeRecording out;
    out.id = recording.id;
    out.timestamps_ms.assign(recording.timestamps_ms.begin(), recording.timestamps_ms.begin() + keep);
    out.x_deg.assign(recording.x_deg.begin(), recording.x_deg.begin() + keep);
    out.y_deg.assign(recording.y_deg.begin(), recording.y_deg.begin() + keep);
    return out;
}

GazeRecording downsample(const GazeRecording& recording, int factor, DownsampleMode mode) {
    if (factor < 1) {
        throw ArgumentError("downsample factor must be >= 1, got " + std::to_string(factor));
    }
    if (factor == 1) {
        return recording;
    }
    GazeRecording out;
    out.id = recording.id;
    const std::size_t n = recording.size();
    out.timestamps_ms.reserve(n / factor + 1);
    out.x_deg.reserve(n / factor + 1);
    out.y_deg.reserve(n / factor + 1);
    if (mode == DownsampleMode::Decimate) {
        for (std::size_t i = 0; i < n; i += factor) {
            out.timestamps_ms.push_back(recording.timestamps_ms[i]);
            out.x_deg.push_back(recording.x_deg[i]);
            out.y_deg.push_back(recording.y_deg[i]);
        }
    } else {
        for (std::size_t i = 0; i + factor <= n; i += factor) {
            double sx = 0.0;
            double sy = 0.0;
            for (int j = 0; j < factor; ++j) {
                sx += recording.x_deg[i + j];
                sy += recording.y_deg[i + j];
            }
            out.timestamps_ms.push_back(recording.timestamps_ms[i]);
            out.x_deg.push_back(sx / factor);
            out.y_deg.push_back(sy / factor);
        }
    }
    return out;
}

std::vector<double> sg_coefficients(const SgFilterSpec& spec) {
    spec.validate();
    const int w = spec.window;
    const int h = (w - 1) / 2;
    const int q = spec.polyorder;
    const int m = spec.derivative_order;

    // Least-squares fit of a degree-q polynomial over offsets -h..h:
    // solve (A^T A) X = A^T for the pseudo-inverse rows, A[i][k] = i^k.
    const int dim = q + 1;
    std::vector<double> gram(static_cast<std::size_t>(dim) * dim, 0.0);
    std::vector<double> rhs(static_cast<std::size_t>(dim) * w, 0.0);
    for (int i = -h; i <= h; ++i) {
        double pk = 1.0;
        std::vector<double> powers(dim);
        for (int k = 0; k < dim; ++k) {
            powers[k] = pk;
            pk *= i;
        }
        for (int r = 0; r < dim; ++r) {
            for (int c = 0; c < dim; ++c) {
                gram[r * dim + c] += powers[r] * powers[c];
            }
            rhs[r * w + (i + h)] = powers[r];
        }
    }

    // Gaussian elimination with partial pivoting on [gram | rhs].
    for (int col = 0; col < dim; ++col) {
        int pivot = col;
        for (int r = col + 1; r < dim; ++r) {
            if (std::abs(gram[r * dim + col]) > std::abs(gram[pivot * dim + col])) {
                pivot = r;
            }
        }
        if (std::abs(gram[pivot * dim + col]) < 1e-12) {
            throw NumericError("singular SG design matrix");
        }
        if (pivot != col) {
            for (int c = 0; c < dim; ++c) {
                std::swap(gram[pivot * dim + c], gram[col * dim + c]);
            }
            for (int c = 0; c < w; ++c) {
                std::swap(rhs[pivot * w + c], rhs[col * w + c]);
            }
        }
        const double d = gram[col * dim + col];
        for (int r = 0; r < dim; ++r) {
            if (r == col) {
                continue;
            }
            const double f = gram[r * dim + col] / d;
            if (f == 0.0) {
                continue;
            }
            for (int c = 0; c < dim; ++c) {
                gram[r * dim + c] -= f * gram[col * dim + c];
            }
            for (int c = 0; c < w; ++c) {
                rhs[r * w + c] -= f * rhs[col * w + c];
            }
        }
    }

    double factorial = 1.0;
    for (int k = 2; k <= m; ++k) {
        factorial *= k;
    }
    const double scale = factorial / std::pow(spec.dt, m);
    std::vector<double> coeffs(w);
    const double pivot_m = gram[m * dim + m];
    for (int c = 0; c < w; ++c) {
        coeffs[c] = rhs[m * w + c] / pivot_m * scale;
    }

    // The exact solution is antisymmetric for odd orders and symmetric for
    // even ones; enforce that so paired evaluation cancels exactly.
    for (int i = 0; i < h; ++i) {
        if (m % 2 == 1) {
            const double v = 0.5 * (coeffs[w - 1 - i] - coeffs[i]);
            coeffs[w - 1 - i] = v;
            coeffs[i] = -v;
        } else {
            const double v = 0.5 * (coeffs[w - 1 - i] + coeffs[i]);
            coeffs[w - 1 - i] = v;
            coeffs[i] = v;
        }
    }
    if (m % 2 == 1) {
        coeffs[h] = 0.0;
    }
    return coeffs;
}

std::vector<double> sg_derivative(std::span<const double> positions, const SgFilterSpec& spec) {
    spec.validate();
    const int w = spec.window;
    const int h = (w - 1) / 2;
    const auto n = static_cast<std::ptrdiff_t>(positions.size());
    if (n < w) {
        throw LengthError("input length " + std::to_string(n) + " shorter than SG window " +
                          std::to_string(w));
    }
    const std::vector<double> c = sg_coefficients(spec);
    const bool odd = spec.derivative_order % 2 == 1;

    std::vector<double> out(positions.size());
    auto clamp_idx = [n](std::ptrdiff_t i) { return std::clamp<std::ptrdiff_t>(i, 0, n - 1); };
    for (std::ptrdiff_t t = 0; t < n; ++t) {
        bool contaminated = false;
        for (int i = -h; i <= h; ++i) {
            if (!std::isfinite(positions[clamp_idx(t + i)])) {
                contaminated = true;
                break;
            }
        }
        if (contaminated) {
            out[t] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        // Paired evaluation: exact zero on constants for odd orders.
        double acc = odd ? 0.0 : c[h] * positions[t];
        for (int i = 1; i <= h; ++i) {
            const double hi = positions[clamp_idx(t + i)];
            const double lo = positions[clamp_idx(t - i)];
            acc += c[h + i] * (odd ? hi - lo : hi + lo);
        }
        out[t] = acc;
    }
    return out;
}

std::vector<double> sanitize(std::vector<double> velocities) {
    for (double& v : velocities) {
        if (!std::isfinite(v)) {
            v = 0.0;
        }
    }
    return velocities;
}

double normalize_value(double velocity_dps) {
    const double clipped = std::clamp(velocity_dps, -1000.0, 1000.0);
    // clipped/2000*180 deg = clipped*0.09 deg; as radians: clipped/2000*pi.
    return std::sin(clipped / 2000.0 * std::numbers::pi);
}

std::vector<double> normalize(std::vector<double> velocities_dps) {
    for (double& v : velocities_dps) {
        v = normalize_value(v);
    }
    return velocities_dps;
}

VelocitySequence preprocess(const GazeRecording& recording, const PrepOptions& opts) {
    const auto target = static_cast<std::size_t>(
        std::llround(opts.crop_duration_s * 1000.0 / opts.downsample_factor));
    if (target != VelocitySequence::kSteps) {
        throw ConfigError("crop/downsample settings must yield " +
                          std::to_string(VelocitySequence::kSteps) + " steps, got " +
                          std::to_string(target));
    }

    const GazeRecording cropped = crop(recording, opts.crop_duration_s);
    const GazeRecording ds = downsample(cropped, opts.downsample_factor, opts.downsample_mode);
    if (ds.size() < static_cast<std::size_t>(opts.sg.window)) {
        throw LengthError("recording " + recording.id.str() + " has " + std::to_string(ds.size()) +
                          " samples after downsampling, shorter than the SG window");
    }
    if (ds.size() < target && opts.short_policy == ShortRecordingPolicy::Drop) {
        throw LengthError("recording " + recording.id.str() + " shorter than " +
                          std::to_string(opts.crop_duration_s) + " s (" + std::to_string(ds.size()) +
                          " of " + std::to_string(target) + " steps)");
    }

    VelocitySequence seq;
    seq.source_id = recording.id;
    seq.values.assign(static_cast<std::size_t>(VelocitySequence::kChannels) * VelocitySequence::kSteps,
                      0.0f);
    const std::vector<double>* channels[VelocitySequence::kChannels] = {&ds.x_deg, &ds.y_deg};
    for (int c = 0; c < VelocitySequence::kChannels; ++c) {
        std::vector<double> v = normalize(sanitize(sg_derivative(*channels[c], opts.sg)));
        for (std::size_t t = 0; t < v.size(); ++t) {
            seq.values[static_cast<std::size_t>(c) * VelocitySequence::kSteps + t] =
                static_cast<float>(v[t]);
        }
        // pad mode: remaining steps stay zero
    }
    return seq;
}

namespace {

void write_stage_csv(const std::filesystem::path& path, std::span<const double> t,
                     std::span<const double> x, std::span<const double> y) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    std::string buf = "t,x,y\n";
    for (std::size_t i = 0; i < t.size(); ++i) {
        csv::append_double(buf, t[i]);
        buf += ',';
        csv::append_double(buf, x[i]);
        buf += ',';
        csv::append_double(buf, y[i]);
        buf += '\n';
    }
    out << buf;
}

std::vector<double> ts_seconds(const GazeRecording& r) {
    std::vector<double> t(r.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<double>(r.timestamps_ms[i]) / 1000.0;
    }
    return t;
}

} // namespace

void dump_debug_stages(const GazeRecording& recording, const PrepOptions& opts,
                       const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const GazeRecording cropped = crop(recording, opts.crop_duration_s);
    const GazeRecording ds = downsample(cropped, opts.downsample_factor, opts.downsample_mode);
    write_stage_csv(dir / "cropped.csv", ts_seconds(cropped), cropped.x_deg, cropped.y_deg);
    write_stage_csv(dir / "downsampled.csv", ts_seconds(ds), ds.x_deg, ds.y_deg);

    const std::vector<double> vx = sg_derivative(ds.x_deg, opts.sg);
    const std::vector<double> vy = sg_derivative(ds.y_deg, opts.sg);
    write_stage_csv(dir / "velocity.csv", ts_seconds(ds), vx, vy);
    write_stage_csv(dir / "normalized.csv", ts_seconds(ds), normalize(sanitize(vx)),
                    normalize(sanitize(vy)));
}

} // namespace gazereg::prep
