#pragma once

#include "gazereg/tensor.hpp"
#include "gazereg/types.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gazereg::eval {

// Per-element: every (sample, target) cell counts on its own (default).
// Per-sample: a sample counts only if all targets match after rounding.
enum class AccuracyMode : std::uint8_t { PerElement, PerSample };

struct TargetMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> pearson_r; // undefined when either side has zero variance
    std::optional<double> r2;        // undefined when the target has zero variance
};

struct MetricsReport {
    std::string partition;
    std::string method;
    int n_samples = 0;
    std::vector<std::string> targets;
    std::vector<TargetMetrics> per_target;
    double overall_mae = 0.0;
    double overall_rmse = 0.0;
    double overall_accuracy = 0.0;
};

double mae(std::span<const double> pred, std::span<const double> target);
double rmse(std::span<const double> pred, std::span<const double> target);
std::optional<double> pearson_r(std::span<const double> pred, std::span<const double> target);

// 1 - sum((t-p)^2) / sum((t-mean(t))^2), mean taken over this partition's
// targets; can be negative.
std::optional<double> r_squared(std::span<const double> pred, std::span<const double> target);

// Round half away from zero, clamp to [1, 7], compare elementwise.
double exact_accuracy(std::span<const double> pred, std::span<const double> target);

MetricsReport evaluate(const nn::Tensor<double>& pred, const nn::Tensor<double>& target,
                       const std::vector<std::string>& target_names, std::string partition,
                       std::string method, AccuracyMode mode = AccuracyMode::PerElement);

struct GlobalMeanPredictor {
    std::vector<double> mean; // one entry per target
};

GlobalMeanPredictor fit_global_mean(const std::vector<LabelVector>& train_labels);
nn::Tensor<double> predict(const GlobalMeanPredictor& predictor, std::int64_t n_samples);

nn::Tensor<double> labels_to_tensor(const std::vector<PairedSample>& samples);

// Report files: <partition>_overall.csv / <partition>_per_target.csv take
// the reports of one partition (both methods); the markdown summary mirrors
// the overall + per-target table layout with "-" for undefined values.
void write_overall_csv(const std::filesystem::path& path, std::span<const MetricsReport> reports);
void write_per_target_csv(const std::filesystem::path& path, std::span<const MetricsReport> reports);
std::string render_markdown(std::span<const MetricsReport> reports);

// Rebuilds reports from a pair of CSVs written by the functions above.
std::vector<MetricsReport> read_reports(const std::filesystem::path& overall_csv,
                                        const std::filesystem::path& per_target_csv);

} // namespace gazereg::eval
