#include "sftik/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sftik/container.hpp"

namespace sftik {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

BiquadCoeffs design_butterworth2(double fc_hz, double fs_hz) {
    if (!(fc_hz > 0.0) || !(fs_hz > 0.0) || fc_hz >= fs_hz / 2.0) {
        std::ostringstream os;
        os << "design_butterworth2: cutoff " << fc_hz << " Hz violates the Nyquist bound for fs=" << fs_hz << " Hz";
        throw ConfigError(os.str());
    }
    const double k = std::tan(kPi * fc_hz / fs_hz);  // prewarped analog frequency
    const double sqrt2 = std::sqrt(2.0);
    const double norm = 1.0 / (1.0 + sqrt2 * k + k * k);
    BiquadCoeffs c;
    c.b0 = k * k * norm;
    c.b1 = 2.0 * c.b0;
    c.b2 = c.b0;
    c.a1 = 2.0 * (k * k - 1.0) * norm;
    c.a2 = (1.0 - sqrt2 * k + k * k) * norm;
    return c;
}

double biquad_magnitude(const BiquadCoeffs& c, double f_hz, double fs_hz) {
    const std::complex<double> z1 = std::polar(1.0, -2.0 * kPi * f_hz / fs_hz);
    const std::complex<double> z2 = z1 * z1;
    const std::complex<double> num = c.b0 + c.b1 * z1 + c.b2 * z2;
    const std::complex<double> den = 1.0 + c.a1 * z1 + c.a2 * z2;
    return std::abs(num / den);
}

std::vector<double> filter_apply(const BiquadCoeffs& c, std::span<const double> x) {
    if (x.empty()) throw ContractError("filter_apply: empty series");
    std::vector<double> y(x.size());
    double s1 = 0.0, s2 = 0.0;
    for (size_t n = 0; n < x.size(); ++n) {
        const double xn = x[n];
        const double yn = c.b0 * xn + s1;
        s1 = c.b1 * xn - c.a1 * yn + s2;
        s2 = c.b2 * xn - c.a2 * yn;
        y[n] = yn;
    }
    return y;
}

ImuStream filter_stream(const BiquadCoeffs& c, const ImuStream& stream) {
    ImuStream out = stream;
    for (auto& ch : out.channels) ch = filter_apply(c, ch);
    return out;
}

ImuStream calibrate_bias(const ImuStream& stream, size_t begin, size_t end) {
    if (stream.channels.size() != kImuChannels) {
        throw ContractError("calibrate_bias: stream has " + std::to_string(stream.channels.size()) +
                            " channels, expected " + std::to_string(kImuChannels));
    }
    if (begin >= end || end > stream.t.size()) {
        throw ContractError("calibrate_bias: invalid standstill window");
    }
    const double duration = stream.t[end - 1] - stream.t[begin];
    if (duration < 1.0) {
        std::ostringstream os;
        os << "calibrate_bias: standstill window covers " << duration << " s, need at least 1 s";
        throw ContractError(os.str());
    }
    double mean = 0.0;
    const std::vector<double>& angle = stream.channels[kAngleChannel];
    for (size_t i = begin; i < end; ++i) mean += angle[i];
    mean /= static_cast<double>(end - begin);
    ImuStream out = stream;
    for (double& v : out.channels[kAngleChannel]) v -= mean;
    return out;
}

std::vector<int64_t> detect_mhe(std::span<const double> theta, int64_t min_distance, double prominence_deg) {
    const int64_t n = static_cast<int64_t>(theta.size());
    if (n <= min_distance) {
        throw ContractError("detect_mhe: series of " + std::to_string(n) + " samples is shorter than min_distance " +
                            std::to_string(min_distance));
    }
    // Pass 1: interior samples that are the minimum of their +-min_distance window.
    std::vector<int64_t> candidates;
    for (int64_t i = 1; i + 1 < n; ++i) {
        const int64_t lo = std::max<int64_t>(0, i - min_distance);
        const int64_t hi = std::min<int64_t>(n - 1, i + min_distance);
        bool is_min = true;
        for (int64_t j = lo; j <= hi; ++j) {
            if (theta[j] < theta[i]) {
                is_min = false;
                break;
            }
        }
        if (is_min) candidates.push_back(i);
    }
    // Pass 2: prominence. Walk outward until a strictly lower sample or the
    // edge; the side's base is the highest value encountered, and prominence
    // is min(left base, right base) - theta[i].
    std::vector<int64_t> prominent;
    for (int64_t i : candidates) {
        double left_base = theta[i];
        for (int64_t j = i - 1; j >= 0; --j) {
            if (theta[j] < theta[i]) break;
            left_base = std::max(left_base, theta[j]);
        }
        double right_base = theta[i];
        for (int64_t j = i + 1; j < n; ++j) {
            if (theta[j] < theta[i]) break;
            right_base = std::max(right_base, theta[j]);
        }
        if (std::min(left_base, right_base) - theta[i] >= prominence_deg) prominent.push_back(i);
    }
    // Pass 3: enforce min_distance, deepest minimum first (ties to the lower index).
    std::vector<int64_t> order = prominent;
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (theta[a] != theta[b]) return theta[a] < theta[b];
        return a < b;
    });
    std::vector<int64_t> kept;
    for (int64_t i : order) {
        bool ok = true;
        for (int64_t k : kept) {
            if (std::abs(i - k) < min_distance) {
                ok = false;
                break;
            }
        }
        if (ok) kept.push_back(i);
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

std::vector<double> resample_linear(std::span<const double> series, int64_t n) {
    const int64_t t = static_cast<int64_t>(series.size());
    if (t < 2) throw ContractError("resample_linear: need at least 2 samples, got " + std::to_string(t));
    if (n < 2) throw ContractError("resample_linear: need at least 2 output points, got " + std::to_string(n));
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t p = 0; p < n; ++p) {
        const double u = static_cast<double>(p) * static_cast<double>(t - 1) / static_cast<double>(n - 1);
        int64_t i = static_cast<int64_t>(u);
        if (i > t - 2) i = t - 2;
        const double frac = u - static_cast<double>(i);
        out[static_cast<size_t>(p)] =
            frac == 0.0 ? series[static_cast<size_t>(i)]
                        : series[static_cast<size_t>(i)] +
                              frac * (series[static_cast<size_t>(i + 1)] - series[static_cast<size_t>(i)]);
    }
    return out;
}

std::vector<std::vector<double>> resample_linear(const std::vector<std::vector<double>>& series, int64_t n) {
    std::vector<std::vector<double>> out;
    out.reserve(series.size());
    for (const auto& ch : series) out.push_back(resample_linear(std::span<const double>(ch), n));
    return out;
}

Tensor<float> preprocess_depth(const Tensor<float>& raw_m) {
    int64_t h = 0, w = 0;
    if (raw_m.rank() == 2) {
        h = raw_m.dim(0);
        w = raw_m.dim(1);
    } else if (raw_m.rank() == 3 && raw_m.dim(0) == 1) {
        h = raw_m.dim(1);
        w = raw_m.dim(2);
    } else {
        throw ContractError("preprocess_depth: expected (H,W) or (1,H,W) depth, got " + raw_m.shape_str());
    }
    if (h < 1 || w < 1) throw ContractError("preprocess_depth: empty image");
    std::vector<float> norm(static_cast<size_t>(h * w));
    auto raw = raw_m.data();
    for (int64_t i = 0; i < h * w; ++i) {
        float v = std::clamp(raw[i], 0.0f, 5.0f);
        norm[static_cast<size_t>(i)] = v / 5.0f;
    }
    const int64_t s = kDepthSize;
    Tensor<float> out = Tensor<float>::zeros({1, s, s});
    auto po = out.mutable_data();
    const double sy = static_cast<double>(h) / static_cast<double>(s);
    const double sx = static_cast<double>(w) / static_cast<double>(s);
    for (int64_t r = 0; r < s; ++r) {
        double fy = (static_cast<double>(r) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
        const int64_t y0 = static_cast<int64_t>(fy);
        const int64_t y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (int64_t c = 0; c < s; ++c) {
            double fx = (static_cast<double>(c) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
            const int64_t x0 = static_cast<int64_t>(fx);
            const int64_t x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - static_cast<double>(x0);
            const double top = (1.0 - wx) * norm[static_cast<size_t>(y0 * w + x0)] +
                               wx * norm[static_cast<size_t>(y0 * w + x1)];
            const double bot = (1.0 - wx) * norm[static_cast<size_t>(y1 * w + x0)] +
                               wx * norm[static_cast<size_t>(y1 * w + x1)];
            po[r * s + c] = static_cast<float>((1.0 - wy) * top + wy * bot);
        }
    }
    return out;
}

std::optional<size_t> pair_keyframe(double mhe_time, std::span<const double> frame_timestamps) {
    auto it = std::upper_bound(frame_timestamps.begin(), frame_timestamps.end(), mhe_time);
    if (it == frame_timestamps.begin()) return std::nullopt;
    return static_cast<size_t>(std::distance(frame_timestamps.begin(), it) - 1);
}

SegmentResult segment_strides(const ImuStream& stream, const std::vector<DepthFrame>& frames,
                              const std::vector<Terrain>& frame_terrain, const SegmentOptions& opts) {
    if (stream.channels.size() != kImuChannels) {
        throw ContractError("segment_strides: stream has " + std::to_string(stream.channels.size()) +
                            " channels, expected " + std::to_string(kImuChannels));
    }
    if (frames.size() != frame_terrain.size()) {
        throw ContractError("segment_strides: " + std::to_string(frames.size()) + " frames but " +
                            std::to_string(frame_terrain.size()) + " terrain labels");
    }
    SegmentResult result;
    result.boundaries = detect_mhe(stream.channels[kAngleChannel], opts.min_distance, opts.prominence_deg);
    const int64_t n_strides = static_cast<int64_t>(result.boundaries.size()) - 1;
    if (n_strides < 2) return result;

    std::vector<double> frame_ts;
    frame_ts.reserve(frames.size());
    for (const DepthFrame& f : frames) frame_ts.push_back(f.t);

    struct StrideInfo {
        bool ok = false;
        size_t keyframe = 0;
    };
    std::vector<StrideInfo> info(static_cast<size_t>(n_strides));
    for (int64_t j = 0; j < n_strides; ++j) {
        const int64_t b0 = result.boundaries[static_cast<size_t>(j)];
        const int64_t b1 = result.boundaries[static_cast<size_t>(j + 1)];
        const double duration = stream.t[static_cast<size_t>(b1)] - stream.t[static_cast<size_t>(b0)];
        if (duration < opts.min_duration_s || duration > opts.max_duration_s) {
            std::ostringstream os;
            os << "stride " << j << " dropped: duration " << duration << " s outside [" << opts.min_duration_s
               << ", " << opts.max_duration_s << "]";
            result.skipped.push_back(os.str());
            continue;
        }
        std::optional<size_t> kf = pair_keyframe(stream.t[static_cast<size_t>(b0)], frame_ts);
        if (!kf) {
            std::ostringstream os;
            os << "stride " << j << " dropped: no key-frame at or before t=" << stream.t[static_cast<size_t>(b0)];
            result.skipped.push_back(os.str());
            continue;
        }
        info[static_cast<size_t>(j)] = {true, *kf};
    }

    for (int64_t j = 0; j + 1 < n_strides; ++j) {
        const StrideInfo& prev = info[static_cast<size_t>(j)];
        const StrideInfo& cur = info[static_cast<size_t>(j + 1)];
        if (!prev.ok || !cur.ok) continue;
        const int64_t b0 = result.boundaries[static_cast<size_t>(j)];
        const int64_t b1 = result.boundaries[static_cast<size_t>(j + 1)];
        const int64_t b2 = result.boundaries[static_cast<size_t>(j + 2)];

        std::vector<std::vector<double>> window(kImuChannels);
        for (int c = 0; c < kImuChannels; ++c) {
            const std::vector<double>& ch = stream.channels[static_cast<size_t>(c)];
            window[static_cast<size_t>(c)].assign(ch.begin() + b0, ch.begin() + b1 + 1);
        }
        std::vector<std::vector<double>> k_rows = resample_linear(window, opts.resample_points);
        const std::vector<double>& angle = stream.channels[kAngleChannel];
        std::vector<double> a_window(angle.begin() + b1, angle.begin() + b2 + 1);
        std::vector<double> a_res = resample_linear(std::span<const double>(a_window), opts.resample_points);

        StrideSample s;
        std::vector<float> k_flat(static_cast<size_t>(kImuChannels * opts.resample_points));
        for (int c = 0; c < kImuChannels; ++c) {
            for (int64_t p = 0; p < opts.resample_points; ++p) {
                k_flat[static_cast<size_t>(c * opts.resample_points + p)] =
                    static_cast<float>(k_rows[static_cast<size_t>(c)][static_cast<size_t>(p)]);
            }
        }
        s.K = Tensor<float>::from_vector({kImuChannels, opts.resample_points}, std::move(k_flat));
        std::vector<float> a_flat(a_res.begin(), a_res.end());
        s.A = Tensor<float>::from_vector({opts.resample_points}, std::move(a_flat));
        s.I_prev = frames[prev.keyframe].pixels;
        s.I_cur = frames[cur.keyframe].pixels;
        s.prev_terrain = frame_terrain[prev.keyframe];
        s.terrain = frame_terrain[cur.keyframe];
        s.subject = opts.subject;
        s.side = stream.side;
        s.stride_id = j + 1;
        result.samples.push_back(std::move(s));
    }
    return result;
}

ImuStream load_imu_csv(const std::filesystem::path& path, Side side) {
    static const std::string kHeader =
        "t,ax1,ay1,az1,gx1,gy1,gz1,ax2,ay2,az2,gx2,gy2,gz2,ax3,ay3,az3,gx3,gy3,gz3,thigh_angle_deg";
    std::ifstream in(path);
    if (!in) throw IoError("cannot open IMU recording " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header line");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kHeader) {
        throw FormatError(path.string() + ": unexpected header '" + line + "' (expected '" + kHeader + "')");
    }

    ImuStream stream;
    stream.side = side;
    stream.channels.assign(kImuChannels, {});
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<double> vals;
        vals.reserve(kImuChannels + 1);
        while (std::getline(row, cell, ',')) {
            try {
                size_t used = 0;
                double v = std::stod(cell, &used);
                if (used != cell.size()) throw std::invalid_argument(cell);
                vals.push_back(v);
            } catch (const std::exception&) {
                throw FormatError(path.string() + " line " + std::to_string(line_no) + ": bad number '" + cell + "'");
            }
        }
        if (vals.size() != kImuChannels + 1) {
            throw FormatError(path.string() + " line " + std::to_string(line_no) + ": expected " +
                              std::to_string(kImuChannels + 1) + " columns, got " + std::to_string(vals.size()));
        }
        if (!stream.t.empty() && vals[0] <= stream.t.back()) {
            throw FormatError(path.string() + " line " + std::to_string(line_no) +
                              ": timestamps must be strictly increasing");
        }
        stream.t.push_back(vals[0]);
        for (int c = 0; c < kImuChannels; ++c) stream.channels[static_cast<size_t>(c)].push_back(vals[c + 1]);
    }
    if (stream.t.empty()) throw FormatError(path.string() + ": no samples");
    return stream;
}

std::vector<FrameIndexEntry> load_frame_index(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open frame index " + path.string());
    std::vector<FrameIndexEntry> entries;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            FrameIndexEntry e;
            e.t = j.at("t").get<double>();
            e.path = j.at("path").get<std::string>();
            e.terrain = terrain_from_string(j.at("terrain").get<std::string>());
            entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError(path.string() + " line " + std::to_string(line_no) + ": " + ex.what());
        }
    }
    for (size_t i = 1; i < entries.size(); ++i) {
        if (entries[i].t <= entries[i - 1].t) {
            throw FormatError(path.string() + ": frame timestamps must be strictly increasing");
        }
    }
    return entries;
}

std::vector<DepthFrame> load_frames(const std::vector<FrameIndexEntry>& entries,
                                    const std::filesystem::path& base_dir) {
    std::vector<DepthFrame> frames;
    frames.reserve(entries.size());
    for (const FrameIndexEntry& e : entries) {
        DepthFrame f;
        f.t = e.t;
        f.pixels = preprocess_depth(read_container<float>(base_dir / e.path));
        frames.push_back(std::move(f));
    }
    return frames;
}

}  // namespace sftik
