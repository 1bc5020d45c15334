#include "gazereg/evaluation.hpp"

#include "gazereg/csvio.hpp"
#include "gazereg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace gazereg::eval {

namespace {

void check_pair(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) {
        throw ShapeError("metric inputs must have equal length");
    }
    if (pred.empty()) {
        throw ArgumentError("metric inputs must be non-empty");
    }
}

double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

} // namespace

double mae(std::span<const double> pred, std::span<const double> target) {
    check_pair(pred, target);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        s += std::abs(pred[i] - target[i]);
    }
    return s / static_cast<double>(pred.size());
}

double rmse(std::span<const double> pred, std::span<const double> target) {
    check_pair(pred, target);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - target[i];
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(pred.size()));
}

std::optional<double> pearson_r(std::span<const double> pred, std::span<const double> target) {
    check_pair(pred, target);
    const double mp = mean_of(pred);
    const double mt = mean_of(target);
    double spp = 0.0, stt = 0.0, spt = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double dp = pred[i] - mp;
        const double dt = target[i] - mt;
        spp += dp * dp;
        stt += dt * dt;
        spt += dp * dt;
    }
    if (spp == 0.0 || stt == 0.0) {
        return std::nullopt; // constant predictions (or targets): undefined
    }
    return spt / std::sqrt(spp * stt);
}

std::optional<double> r_squared(std::span<const double> pred, std::span<const double> target) {
    check_pair(pred, target);
    const double mt = mean_of(target);
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = target[i] - pred[i];
        const double d = target[i] - mt;
        ss_res += e * e;
        ss_tot += d * d;
    }
    if (ss_tot == 0.0) {
        return std::nullopt;
    }
    return 1.0 - ss_res / ss_tot;
}

namespace {

long rounded_rating(double v) {
    return std::clamp<long>(std::lround(v), 1, 7); // lround: half away from zero
}

} // namespace

double exact_accuracy(std::span<const double> pred, std::span<const double> target) {
    check_pair(pred, target);
    std::size_t matches = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (rounded_rating(pred[i]) == std::lround(target[i])) {
            ++matches;
        }
    }
    return static_cast<double>(matches) / static_cast<double>(pred.size());
}

MetricsReport evaluate(const nn::Tensor<double>& pred, const nn::Tensor<double>& target,
                       const std::vector<std::string>& target_names, std::string partition,
                       std::string method, AccuracyMode mode) {
    if (pred.rank() != 2 || !pred.same_shape(target)) {
        throw ShapeError("evaluate expects matching (n_samples, n_targets) tensors");
    }
    const std::int64_t n = pred.dim(0);
    const std::int64_t k = pred.dim(1);
    if (target_names.size() != static_cast<std::size_t>(k)) {
        throw ShapeError("target name count does not match tensor width");
    }
    if (n == 0) {
        throw ArgumentError("evaluate needs at least one sample");
    }

    MetricsReport report;
    report.partition = std::move(partition);
    report.method = std::move(method);
    report.n_samples = static_cast<int>(n);
    report.targets = target_names;

    std::vector<double> col_p(static_cast<std::size_t>(n));
    std::vector<double> col_t(static_cast<std::size_t>(n));
    for (std::int64_t j = 0; j < k; ++j) {
        for (std::int64_t i = 0; i < n; ++i) {
            col_p[static_cast<std::size_t>(i)] = pred(i, j);
            col_t[static_cast<std::size_t>(i)] = target(i, j);
        }
        TargetMetrics tm;
        tm.mae = mae(col_p, col_t);
        tm.rmse = rmse(col_p, col_t);
        tm.pearson_r = pearson_r(col_p, col_t);
        tm.r2 = r_squared(col_p, col_t);
        report.per_target.push_back(tm);
    }

    report.overall_mae = mae(pred.raw(), target.raw());
    report.overall_rmse = rmse(pred.raw(), target.raw());
    if (mode == AccuracyMode::PerElement) {
        report.overall_accuracy = exact_accuracy(pred.raw(), target.raw());
    } else {
        std::int64_t matched = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            bool all = true;
            for (std::int64_t j = 0; j < k; ++j) {
                if (rounded_rating(pred(i, j)) != std::lround(target(i, j))) {
                    all = false;
                    break;
                }
            }
            matched += all ? 1 : 0;
        }
        report.overall_accuracy = static_cast<double>(matched) / static_cast<double>(n);
    }
    return report;
}

GlobalMeanPredictor fit_global_mean(const std::vector<LabelVector>& train_labels) {
    if (train_labels.empty()) {
        throw ConfigError("global-mean baseline needs at least one training label");
    }
    const std::size_t k = train_labels.front().values.size();
    GlobalMeanPredictor predictor;
    predictor.mean.assign(k, 0.0);
    for (const auto& label : train_labels) {
        if (label.values.size() != k) {
            throw ShapeError("inconsistent label widths in training labels");
        }
        for (std::size_t j = 0; j < k; ++j) {
            predictor.mean[j] += label.values[j];
        }
    }
    for (double& m : predictor.mean) {
        m /= static_cast<double>(train_labels.size());
    }
    return predictor;
}

nn::Tensor<double> predict(const GlobalMeanPredictor& predictor, std::int64_t n_samples) {
    const auto k = static_cast<std::int64_t>(predictor.mean.size());
    nn::Tensor<double> out({n_samples, k});
    for (std::int64_t i = 0; i < n_samples; ++i) {
        for (std::int64_t j = 0; j < k; ++j) {
            out(i, j) = predictor.mean[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

nn::Tensor<double> labels_to_tensor(const std::vector<PairedSample>& samples) {
    if (samples.empty()) {
        throw ArgumentError("no samples to extract labels from");
    }
    const auto k = static_cast<std::int64_t>(samples.front().label.values.size());
    nn::Tensor<double> out({static_cast<std::int64_t>(samples.size()), k});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::int64_t j = 0; j < k; ++j) {
            out(static_cast<std::int64_t>(i), j) = samples[i].label.values[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

namespace {

std::string fmt_opt(const std::optional<double>& v) {
    return v ? csv::format_double(*v) : "-";
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmt2_opt(const std::optional<double>& v) {
    return v ? fmt2(*v) : "-";
}

} // namespace

void write_overall_csv(const std::filesystem::path& path, std::span<const MetricsReport> reports) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "partition,method,n_samples,mae,rmse,accuracy\n";
    for (const auto& r : reports) {
        out << r.partition << ',' << r.method << ',' << r.n_samples << ','
            << csv::format_double(r.overall_mae) << ',' << csv::format_double(r.overall_rmse)
            << ',' << csv::format_double(r.overall_accuracy) << '\n';
    }
}

void write_per_target_csv(const std::filesystem::path& path,
                          std::span<const MetricsReport> reports) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "partition,method,target,mae,rmse,pearson_r,r2\n";
    for (const auto& r : reports) {
        for (std::size_t j = 0; j < r.targets.size(); ++j) {
            const auto& tm = r.per_target[j];
            out << r.partition << ',' << r.method << ',' << r.targets[j] << ','
                << csv::format_double(tm.mae) << ',' << csv::format_double(tm.rmse) << ','
                << fmt_opt(tm.pearson_r) << ',' << fmt_opt(tm.r2) << '\n';
        }
    }
}

std::string render_markdown(std::span<const MetricsReport> reports) {
    // Partition order of first appearance; methods ordered with the baseline
    // first, as in the paper's tables.
    std::vector<std::string> partitions;
    std::vector<std::string> methods;
    for (const auto& r : reports) {
        if (std::find(partitions.begin(), partitions.end(), r.partition) == partitions.end()) {
            partitions.push_back(r.partition);
        }
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
            methods.push_back(r.method);
        }
    }
    std::sort(methods.begin(), methods.end(), [](const std::string& a, const std::string& b) {
        const bool ga = a.find("Mean") != std::string::npos;
        const bool gb = b.find("Mean") != std::string::npos;
        return ga != gb ? ga : a < b;
    });
    auto find = [&reports](const std::string& partition,
                           const std::string& method) -> const MetricsReport* {
        for (const auto& r : reports) {
            if (r.partition == partition && r.method == method) {
                return &r;
            }
        }
        return nullptr;
    };

    std::ostringstream md;
    md << "## Overall\n\n| Method |";
    for (const auto& p : partitions) {
        md << ' ' << p << " MAE ↓ | RMSE ↓ | Accuracy ↑ |";
    }
    md << "\n|---|";
    for (std::size_t i = 0; i < partitions.size() * 3; ++i) {
        md << "---|";
    }
    md << "\n";
    for (const auto& m : methods) {
        md << "| " << m << " |";
        for (const auto& p : partitions) {
            if (const auto* r = find(p, m)) {
                md << ' ' << fmt2(r->overall_mae) << " | " << fmt2(r->overall_rmse) << " | "
                   << fmt2(r->overall_accuracy) << " |";
            } else {
                md << " - | - | - |";
            }
        }
        md << "\n";
    }

    md << "\n## Per target\n\n| Target | Method |";
    for (const auto& p : partitions) {
        md << ' ' << p << " MAE ↓ | RMSE ↓ | r ↑ | R² ↑ |";
    }
    md << "\n|---|---|";
    for (std::size_t i = 0; i < partitions.size() * 4; ++i) {
        md << "---|";
    }
    md << "\n";
    std::vector<std::string> targets;
    for (const auto& r : reports) {
        for (const auto& t : r.targets) {
            if (std::find(targets.begin(), targets.end(), t) == targets.end()) {
                targets.push_back(t);
            }
        }
    }
    for (const auto& t : targets) {
        for (const auto& m : methods) {
            md << "| " << t << " | " << m << " |";
            for (const auto& p : partitions) {
                const auto* r = find(p, m);
                const TargetMetrics* tm = nullptr;
                if (r) {
                    for (std::size_t j = 0; j < r->targets.size(); ++j) {
                        if (r->targets[j] == t) {
                            tm = &r->per_target[j];
                            break;
                        }
                    }
                }
                if (tm) {
                    md << ' ' << fmt2(tm->mae) << " | " << fmt2(tm->rmse) << " | "
                       << fmt2_opt(tm->pearson_r) << " | " << fmt2_opt(tm->r2) << " |";
                } else {
                    md << " - | - | - | - |";
                }
            }
            md << "\n";
        }
    }
    return md.str();
}

namespace {

std::optional<double> parse_opt(std::string_view field, const std::filesystem::path& path,
                                std::size_t line) {
    if (field == "-") {
        return std::nullopt;
    }
    return csv::parse_double(field, path, line);
}

} // namespace

std::vector<MetricsReport> read_reports(const std::filesystem::path& overall_csv,
                                        const std::filesystem::path& per_target_csv) {
    std::vector<MetricsReport> reports;
    std::map<std::pair<std::string, std::string>, std::size_t> index;

    csv::Reader overall(overall_csv);
    std::vector<std::string_view> fields;
    std::size_t line = 0;
    while (overall.next(fields, line)) {
        MetricsReport r;
        r.partition = std::string(fields[0]);
        r.method = std::string(fields[1]);
        r.n_samples = static_cast<int>(csv::parse_int(fields[2], overall_csv, line));
        r.overall_mae = csv::parse_double(fields[3], overall_csv, line);
        r.overall_rmse = csv::parse_double(fields[4], overall_csv, line);
        r.overall_accuracy = csv::parse_double(fields[5], overall_csv, line);
        index[{r.partition, r.method}] = reports.size();
        reports.push_back(std::move(r));
    }

    csv::Reader per_target(per_target_csv);
    while (per_target.next(fields, line)) {
        const auto key = std::make_pair(std::string(fields[0]), std::string(fields[1]));
        auto it = index.find(key);
        if (it == index.end()) {
            throw DataError(per_target_csv.string() + ": per-target row for unknown report " +
                            key.first + "/" + key.second);
        }
        MetricsReport& r = reports[it->second];
        r.targets.emplace_back(fields[2]);
        TargetMetrics tm;
        tm.mae = csv::parse_double(fields[3], per_target_csv, line);
        tm.rmse = csv::parse_double(fields[4], per_target_csv, line);
        tm.pearson_r = parse_opt(fields[5], per_target_csv, line);
        tm.r2 = parse_opt(fields[6], per_target_csv, line);
        r.per_target.push_back(tm);
    }
    return reports;
}

} // namespace gazereg::eval
