#include "sftik/metrics.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace sftik {

namespace {

MetricAgg aggregate_values(const std::vector<double>& xs) {
    MetricAgg a;
    a.count = static_cast<int64_t>(xs.size());
    if (xs.empty()) return a;
    double sum = 0.0;
    for (double x : xs) sum += x;
    a.mean = sum / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - a.mean) * (x - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(xs.size()));
    return a;
}

GroupMetrics aggregate_group(const std::vector<const StrideMetric*>& strides) {
    GroupMetrics g;
    g.count = static_cast<int64_t>(strides.size());
    std::vector<double> rmses, pccs;
    rmses.reserve(strides.size());
    for (const StrideMetric* s : strides) {
        rmses.push_back(s->rmse);
        if (s->pcc.has_value()) {
            pccs.push_back(*s->pcc);
        } else {
            ++g.pcc_excluded;
        }
    }
    g.rmse = aggregate_values(rmses);
    g.pcc = aggregate_values(pccs);
    return g;
}

nlohmann::json agg_json(const GroupMetrics& g) {
    nlohmann::json j;
    j["count"] = g.count;
    j["rmse_mean"] = g.rmse.mean;
    j["rmse_std"] = g.rmse.stddev;
    j["pcc_mean"] = g.pcc.mean;
    j["pcc_std"] = g.pcc.stddev;
    j["pcc_count"] = g.pcc.count;
    j["pcc_excluded"] = g.pcc_excluded;
    return j;
}

void csv_row(std::ostream& out, const std::string& label, const GroupMetrics& g) {
    out << label << "," << g.rmse.mean << "," << g.rmse.stddev << "," << g.pcc.mean << "," << g.pcc.stddev << ","
        << g.count << "\n";
}

}  // namespace

void aggregate_report(MetricsReport& report) {
    std::map<std::string, std::vector<const StrideMetric*>> by_terrain;
    std::vector<const StrideMetric*> all, trans, steady;
    for (const StrideMetric& s : report.strides) {
        all.push_back(&s);
        by_terrain[to_string(s.terrain)].push_back(&s);
        (s.transition ? trans : steady).push_back(&s);
    }
    report.per_terrain.clear();
    for (const auto& [name, strides] : by_terrain) report.per_terrain[name] = aggregate_group(strides);
    report.overall = aggregate_group(all);
    report.transition = aggregate_group(trans);
    report.steady = aggregate_group(steady);
}

nlohmann::json report_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["overall"] = agg_json(report.overall);
    j["transition"] = agg_json(report.transition);
    j["steady"] = agg_json(report.steady);
    nlohmann::json per;
    for (const auto& [name, g] : report.per_terrain) per[name] = agg_json(g);
    j["per_terrain"] = per;
    j["flops_g"] = report.flops_g;
    j["params"] = report.params;
    nlohmann::json strides = nlohmann::json::array();
    for (const StrideMetric& s : report.strides) {
        nlohmann::json e;
        e["sample_index"] = s.sample_index;
        e["subject"] = s.subject;
        e["terrain"] = to_string(s.terrain);
        e["prev_terrain"] = to_string(s.prev_terrain);
        e["transition"] = s.transition;
        e["rmse"] = s.rmse;
        if (s.pcc.has_value()) {
            e["pcc"] = *s.pcc;
        } else {
            e["pcc"] = nullptr;
        }
        strides.push_back(std::move(e));
    }
    j["strides"] = std::move(strides);
    return j;
}

void write_report_json(const std::filesystem::path& path, const nlohmann::json& report_json) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write report " + path.string());
    out << report_json.dump(2) << "\n";
    if (!out) throw IoError("failed writing report " + path.string());
}

void write_report_csv(const std::filesystem::path& path, const MetricsReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write report " + path.string());
    out << std::setprecision(17);
    out << "terrain,rmse_mean,rmse_std,pcc_mean,pcc_std,count\n";
    for (const auto& [name, g] : report.per_terrain) csv_row(out, name, g);
    csv_row(out, "overall", report.overall);
    csv_row(out, "transition", report.transition);
    csv_row(out, "steady", report.steady);
    if (!out) throw IoError("failed writing report " + path.string());
}

Tensor<float> baseline_copy_previous(const StrideSample& sample) {
    if (sample.K.rank() != 2 || sample.K.rows() < 1) {
        throw ContractError("baseline_copy_previous: sample has no kinematics block");
    }
    const int64_t T = sample.K.cols();
    const int64_t angle_row = sample.K.rows() - 1;
    Tensor<float> out = Tensor<float>::zeros({T});
    auto src = sample.K.data();
    auto dst = out.mutable_data();
    for (int64_t t = 0; t < T; ++t) dst[t] = src[angle_row * T + t];
    return out;
}

}  // namespace sftik
