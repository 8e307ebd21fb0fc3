#include "sftik/train.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_set>

#include <json.hpp>

#include "sftik/config_json.hpp"
#include "sftik/optim.hpp"
#include "sftik/tensor_ops.hpp"

namespace sftik {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (base_lr <= 0.0) throw ConfigError("base_lr must be positive");
    if (final_lr < 0.0) throw ConfigError("final_lr must be non-negative");
    if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
    if (fold < 0) throw ConfigError("fold must be non-negative");
    model.validate();
}

void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg, const ModelParams<float>& params,
                     int64_t step, uint64_t seed) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "params", ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    nlohmann::json names = nlohmann::json::array();
    for (const auto& [name, tensor] : params.map) {
        write_container(dir / "params" / (name + ".bin"), tensor);
        names.push_back(name);
    }
    nlohmann::json manifest;
    manifest["model"] = cfg;
    manifest["step"] = step;
    manifest["seed"] = seed;
    manifest["params"] = std::move(names);

    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint manifest in " + dir.string());
    out << manifest.dump(2) << "\n";
    if (!out) throw IoError("failed writing checkpoint manifest in " + dir.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot open checkpoint manifest in " + dir.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint manifest: " + std::string(e.what()));
    }
    Checkpoint ck;
    try {
        from_json(manifest.at("model"), ck.model);
        ck.step = manifest.at("step").get<int64_t>();
        ck.seed = manifest.at("seed").get<uint64_t>();
        for (const auto& name : manifest.at("params")) {
            Tensor<float> t = read_container<float>(dir / "params" / (name.get<std::string>() + ".bin"));
            t.set_requires_grad(true);
            ck.params.map.emplace(name.get<std::string>(), std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint manifest: " + std::string(e.what()));
    }
    return ck;
}

namespace {

ModelParams<float> snapshot(const ModelParams<float>& params) {
    ModelParams<float> copy;
    for (const auto& [name, tensor] : params.map) copy.map.emplace(name, tensor.clone());
    return copy;
}

double validation_rmse(const ModelConfig& cfg, const ModelParams<float>& params, const StrideDataset& data,
                       const std::vector<size_t>& val_idx) {
    double sum = 0.0;
    for (size_t idx : val_idx) {
        StrideSample s = data.load(idx);
        Tensor<float> pred = model_forward(cfg, params, s.K, s.I_prev, s.I_cur);
        sum += rmse(pred, s.A);
    }
    return sum / static_cast<double>(val_idx.size());
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const StrideDataset& data, const std::vector<size_t>& train_idx,
                  const std::vector<size_t>& val_idx, const std::filesystem::path& out_dir) {
    cfg.validate();
    if (train_idx.empty()) throw ContractError("train: empty training split");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create run directory " + out_dir.string() + ": " + ec.message());

    ModelParams<float> params = init_params<float>(cfg.model, cfg.seed);
    std::vector<Tensor<float>> plist;
    plist.reserve(params.map.size());
    for (auto& [name, tensor] : params.map) plist.push_back(tensor);

    const int64_t n_train = static_cast<int64_t>(train_idx.size());
    const int64_t batches_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = cfg.epochs * batches_per_epoch;
    const LrSchedule sched{cfg.base_lr, cfg.final_lr, cfg.warmup_steps, 0.2, total_steps};
    AdamState<float> adam;

    const std::filesystem::path log_path = out_dir / "train_log.jsonl";
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw IoError("cannot write " + log_path.string());

    TrainResult result;
    result.best_val_rmse = std::numeric_limits<double>::quiet_NaN();
    result.log_path = log_path;
    ModelParams<float> best;
    int64_t best_step = 0;
    bool have_best = false;

    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const std::vector<size_t>& batch :
             batch_iter(static_cast<size_t>(n_train), cfg.batch_size, cfg.seed, epoch, true)) {
            const double lr = sched.lr_at(step);
            MapGradSink<float> sink;
            const float inv_b = 1.0f / static_cast<float>(batch.size());
            double loss_sum = 0.0;
            for (size_t pos : batch) {
                StrideSample s = data.load(train_idx[pos]);
                Tape<float> tape;
                typename Tape<float>::Scope scope(tape);
                Tensor<float> pred = model_forward(cfg.model, params, s.K, s.I_prev, s.I_cur);
                Tensor<float> loss = mse_loss(pred, s.A);
                loss_sum += static_cast<double>(loss.item());
                tape.backward(loss, inv_b, sink);
            }
            const double loss = loss_sum / static_cast<double>(batch.size());
            if (!std::isfinite(loss)) {
                double sq = 0.0;
                for (const Tensor<float>& p : plist) {
                    for (float g : sink.find(p)) sq += static_cast<double>(g) * static_cast<double>(g);
                }
                throw NumericError("training diverged: non-finite loss at step " + std::to_string(step) +
                                   " (lr=" + std::to_string(lr) + ", grad_norm=" + std::to_string(std::sqrt(sq)) +
                                   ")");
            }
            // Reduce the batch's gradient map into the parameter slots in name
            // order, then update.
            for (Tensor<float>& p : plist) {
                auto g = p.ensure_grad();
                p.zero_grad();
                auto src = sink.find(p);
                for (size_t i = 0; i < src.size(); ++i) g[i] += src[i];
            }
            adam_step(plist, adam, lr);

            nlohmann::json line;
            line["step"] = step;
            line["lr"] = lr;
            line["loss"] = loss;
            log << line.dump() << "\n";
            ++step;
        }

        if (!val_idx.empty()) {
            const double val = validation_rmse(cfg.model, params, data, val_idx);
            nlohmann::json line;
            line["epoch"] = epoch;
            line["step"] = step;
            line["val_rmse"] = val;
            log << line.dump() << "\n";
            if (!have_best || val < result.best_val_rmse) {
                result.best_val_rmse = val;
                result.best_epoch = epoch;
                best = snapshot(params);
                best_step = step;
                have_best = true;
            }
        }
    }
    if (!log) throw IoError("failed writing " + log_path.string());
    log.close();

    result.steps = step;
    result.checkpoint_dir = out_dir / "checkpoint";
    if (have_best) {
        save_checkpoint(result.checkpoint_dir, cfg.model, best, best_step, cfg.seed);
    } else {
        save_checkpoint(result.checkpoint_dir, cfg.model, params, step, cfg.seed);
    }
    return result;
}

MetricsReport evaluate(const ModelConfig& cfg, const ModelParams<float>& params, const StrideDataset& data,
                       const std::vector<size_t>& indices) {
    cfg.validate();
    if (indices.empty()) throw ContractError("evaluate: empty split");
    MetricsReport report;
    report.strides.reserve(indices.size());
    for (size_t idx : indices) {
        StrideSample s = data.load(idx);
        Tensor<float> pred = model_forward(cfg, params, s.K, s.I_prev, s.I_cur);
        StrideMetric m;
        m.sample_index = idx;
        m.subject = s.subject;
        m.terrain = s.terrain;
        m.prev_terrain = s.prev_terrain;
        m.transition = s.terrain != s.prev_terrain;
        m.rmse = rmse(pred, s.A);
        m.pcc = pcc(pred, s.A);
        report.strides.push_back(std::move(m));
    }
    aggregate_report(report);
    report.flops_g = count_flops(cfg).total_gflops();
    report.params = count_params(cfg);
    return report;
}

MetricsReport evaluate_baseline(const StrideDataset& data, const std::vector<size_t>& indices) {
    if (indices.empty()) throw ContractError("evaluate_baseline: empty split");
    MetricsReport report;
    report.strides.reserve(indices.size());
    for (size_t idx : indices) {
        StrideSample s = data.load(idx);
        Tensor<float> pred = baseline_copy_previous(s);
        StrideMetric m;
        m.sample_index = idx;
        m.subject = s.subject;
        m.terrain = s.terrain;
        m.prev_terrain = s.prev_terrain;
        m.transition = s.terrain != s.prev_terrain;
        m.rmse = rmse(pred, s.A);
        m.pcc = pcc(pred, s.A);
        report.strides.push_back(std::move(m));
    }
    aggregate_report(report);
    return report;
}

std::vector<size_t> indices_for_subjects(const StrideDataset& data, const std::vector<int64_t>& subjects) {
    std::unordered_set<int64_t> wanted(subjects.begin(), subjects.end());
    std::vector<size_t> out;
    for (size_t i = 0; i < data.size(); ++i) {
        if (wanted.count(data.index()[i].subject)) out.push_back(i);
    }
    return out;
}

}  // namespace sftik
