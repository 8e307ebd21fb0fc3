#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sftik/errors.hpp"
#include "sftik/sample.hpp"
#include "sftik/tensor.hpp"

namespace sftik {

template <class T>
double mse(std::span<const T> pred, std::span<const T> target) {
    if (pred.size() != target.size()) throw ShapeError("mse: length mismatch");
    if (pred.empty()) throw ContractError("mse: empty series");
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

template <class T>
double rmse(std::span<const T> pred, std::span<const T> target) {
    return std::sqrt(mse(pred, target));
}

// Pearson correlation; nullopt when either series has zero variance.
template <class T>
std::optional<double> pcc(std::span<const T> pred, std::span<const T> target) {
    if (pred.size() != target.size()) throw ShapeError("pcc: length mismatch");
    if (pred.empty()) throw ContractError("pcc: empty series");
    const double n = static_cast<double>(pred.size());
    double mp = 0.0, mt = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        mp += static_cast<double>(pred[i]);
        mt += static_cast<double>(target[i]);
    }
    mp /= n;
    mt /= n;
    double spt = 0.0, spp = 0.0, stt = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double dp = static_cast<double>(pred[i]) - mp;
        const double dt = static_cast<double>(target[i]) - mt;
        spt += dp * dt;
        spp += dp * dp;
        stt += dt * dt;
    }
    if (spp <= 0.0 || stt <= 0.0) return std::nullopt;
    return spt / std::sqrt(spp * stt);
}

template <class T>
double rmse(const Tensor<T>& pred, const Tensor<T>& target) {
    return rmse<T>(pred.data(), target.data());
}

template <class T>
std::optional<double> pcc(const Tensor<T>& pred, const Tensor<T>& target) {
    return pcc<T>(pred.data(), target.data());
}

struct MetricAgg {
    double mean = 0.0;
    double stddev = 0.0;  // population
    int64_t count = 0;
};

struct GroupMetrics {
    MetricAgg rmse;
    MetricAgg pcc;
    int64_t pcc_excluded = 0;  // zero-variance strides left out of the PCC aggregate
    int64_t count = 0;
};

struct StrideMetric {
    size_t sample_index = 0;
    int64_t subject = 0;
    Terrain terrain = Terrain::LW;
    Terrain prev_terrain = Terrain::LW;
    bool transition = false;
    double rmse = 0.0;
    std::optional<double> pcc;
};

struct MetricsReport {
    std::vector<StrideMetric> strides;
    std::map<std::string, GroupMetrics> per_terrain;
    GroupMetrics overall;
    GroupMetrics transition;
    GroupMetrics steady;
    double flops_g = 0.0;
    int64_t params = 0;
};

// Fills the aggregate fields of a report from report.strides.
void aggregate_report(MetricsReport& report);

nlohmann::json report_to_json(const MetricsReport& report);
void write_report_json(const std::filesystem::path& path, const nlohmann::json& report_json);
// Rows: terrain,rmse_mean,rmse_std,pcc_mean,pcc_std,count — one per terrain
// class present, then overall / transition / steady.
void write_report_csv(const std::filesystem::path& path, const MetricsReport& report);

// Naive comparator: predict the forecast stride's angle series as the previous
// stride's angle channel (last row of K).
Tensor<float> baseline_copy_previous(const StrideSample& sample);

}  // namespace sftik
