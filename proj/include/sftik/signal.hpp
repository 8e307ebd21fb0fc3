#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sftik/sample.hpp"
#include "sftik/tensor.hpp"

namespace sftik {

// Second-order IIR section, a0 normalized to 1:
//   y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]
struct BiquadCoeffs {
    double b0 = 0, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

// Low-pass Butterworth (order 2) via the bilinear transform with frequency
// prewarping, so the -3 dB point lands exactly on fc.
BiquadCoeffs design_butterworth2(double fc_hz = 30.0, double fs_hz = 100.0);

// |H(e^{j 2 pi f / fs})| of the digital filter.
double biquad_magnitude(const BiquadCoeffs& c, double f_hz, double fs_hz);

// Causal single-pass filtering (direct form II transposed), zero initial state.
std::vector<double> filter_apply(const BiquadCoeffs& c, std::span<const double> x);

// Raw synchronized IMU recording. Channels 0..17 are three IMUs in
// [acc x,y,z, gyro x,y,z] order; channel 18 is the sagittal thigh angle in
// degrees, flexion positive.
struct ImuStream {
    std::vector<double> t;                       // seconds, strictly increasing
    std::vector<std::vector<double>> channels;   // kImuChannels x T
    Side side = Side::left;
};

inline constexpr int kImuChannels = 19;
inline constexpr int kAngleChannel = 18;
inline constexpr int kDepthSize = 224;

struct DepthFrame {
    double t = 0;               // seconds
    Tensor<float> pixels;       // 1 x 224 x 224, values in [0, 1]
};

// Runs the filter independently over every channel of the stream.
ImuStream filter_stream(const BiquadCoeffs& c, const ImuStream& stream);

// Subtracts the mean of the standstill window [begin, end) from the thigh
// angle channel. The window must cover at least one second.
ImuStream calibrate_bias(const ImuStream& stream, size_t begin, size_t end);

// Stride boundaries: local minima of the thigh angle (maximum hip extension
// under the flexion-positive convention). A minimum qualifies when it is the
// smallest value within +-min_distance samples and its prominence is at least
// prominence_deg; of two qualifying minima closer than min_distance, the
// deeper one wins.
std::vector<int64_t> detect_mhe(std::span<const double> theta, int64_t min_distance = 50,
                                double prominence_deg = 5.0);

// Linear interpolation of each channel onto n points spanning [first, last]
// inclusive; endpoints are preserved exactly.
std::vector<std::vector<double>> resample_linear(const std::vector<std::vector<double>>& series, int64_t n = 100);
std::vector<double> resample_linear(std::span<const double> series, int64_t n = 100);

// Raw depth in meters -> clip to [0, 5], divide by 5, bilinear resize to
// 224 x 224 (half-pixel-center sampling convention).
Tensor<float> preprocess_depth(const Tensor<float>& raw_m);

// Latest frame with timestamp <= mhe_time, or nullopt when none precedes it.
std::optional<size_t> pair_keyframe(double mhe_time, std::span<const double> frame_timestamps);

struct SegmentOptions {
    int64_t min_distance = 50;       // samples
    double prominence_deg = 5.0;
    double min_duration_s = 0.4;
    double max_duration_s = 2.0;
    int64_t resample_points = 100;
    int subject = 0;
};

struct SegmentResult {
    std::vector<StrideSample> samples;
    std::vector<int64_t> boundaries;   // accepted MHE indices
    std::vector<std::string> skipped;  // human-readable skip reasons
};

// Cuts the calibrated, filtered stream into strides at MHE events and builds
// one sample per adjacent surviving stride pair: K from the earlier stride,
// A (the thigh-angle row) from the later one, key-frames at the two strides'
// opening events. Strides outside the duration gate or lacking a preceding
// key-frame are dropped; a dropped stride also breaks the pair it occurs in.
SegmentResult segment_strides(const ImuStream& stream, const std::vector<DepthFrame>& frames,
                              const std::vector<Terrain>& frame_terrain, const SegmentOptions& opts);

// CSV with the exact header
//   t,ax1,ay1,az1,gx1,gy1,gz1,...,ax3,ay3,az3,gx3,gy3,gz3,thigh_angle_deg
// one row per sample, timestamps strictly increasing.
ImuStream load_imu_csv(const std::filesystem::path& path, Side side);

struct FrameIndexEntry {
    double t = 0;
    std::string path;  // blob of raw depth in meters, relative to the index file
    Terrain terrain = Terrain::LW;
};

// JSON-lines records {"t": seconds, "path": blob, "terrain": label}.
std::vector<FrameIndexEntry> load_frame_index(const std::filesystem::path& path);

// Loads and preprocesses the referenced depth blobs.
std::vector<DepthFrame> load_frames(const std::vector<FrameIndexEntry>& entries,
                                    const std::filesystem::path& base_dir);

}  // namespace sftik
