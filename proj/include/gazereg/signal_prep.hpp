#pragma once

#include "gazereg/types.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace gazereg::prep {

// Savitzky-Golay differentiation filter parameters.
struct SgFilterSpec {
    int window = 7;           // odd
    int polyorder = 2;        // < window
    int derivative_order = 1; // <= polyorder
    double dt = 0.01;         // seconds per sample (100 Hz)

    void validate() const; // throws ArgumentError
};

enum class ShortRecordingPolicy : std::uint8_t { Drop, Pad };
enum class DownsampleMode : std::uint8_t { Decimate, MeanOfFactor };

struct PrepOptions {
    double crop_duration_s = 50.0;
    int downsample_factor = 10;
    SgFilterSpec sg{};
    ShortRecordingPolicy short_policy = ShortRecordingPolicy::Drop;
    DownsampleMode downsample_mode = DownsampleMode::Decimate;
};

// Keeps at most the first duration_s * 1000 samples (nominal 1 kHz input).
GazeRecording crop(const GazeRecording& recording, double duration_s = 50.0);

// Decimation: every factor-th sample starting at index 0. MeanOfFactor
// averages each block instead (optional mode, off by default).
GazeRecording downsample(const GazeRecording& recording, int factor = 10,
                         DownsampleMode mode = DownsampleMode::Decimate);

// Convolution weights c with c[i] applied at offset i - (window-1)/2, so
// sum_i c[i] * p[t + i - h] estimates the derivative at step t, already
// divided by dt^order. Exactly (anti)symmetric for even (odd) orders.
std::vector<double> sg_coefficients(const SgFilterSpec& spec);

// Centered filter everywhere; the first/last h outputs use the same
// coefficients on an edge-replicated signal. Any window touching a
// non-finite sample yields NaN at that output.
std::vector<double> sg_derivative(std::span<const double> positions, const SgFilterSpec& spec);

// Non-finite values become 0; finite values pass through.
std::vector<double> sanitize(std::vector<double> velocities);

// sin(clip(v, -1000, 1000) / 2000 * pi): clip, rescale to [-90, 90] deg,
// read as an angle. Odd, monotone on the clipped range, bounded in [-1, 1].
double normalize_value(double velocity_dps);
std::vector<double> normalize(std::vector<double> velocities_dps);

// Full chain: crop -> downsample -> per-channel SG derivative -> sanitize
// -> normalize, then the short-recording policy (Drop: LengthError,
// Pad: zero-pad to 5000 steps).
VelocitySequence preprocess(const GazeRecording& recording, const PrepOptions& opts = {});

// Writes cropped.csv, downsampled.csv, velocity.csv, normalized.csv
// (columns t,x,y) under dir for inspection.
void dump_debug_stages(const GazeRecording& recording, const PrepOptions& opts,
                       const std::filesystem::path& dir);

} // namespace gazereg::prep
