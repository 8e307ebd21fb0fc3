#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sftik/dataset.hpp"
#include "sftik/metrics.hpp"
#include "sftik/model.hpp"

namespace sftik {

struct TrainConfig {
    int64_t batch_size = 32;
    int64_t epochs = 200;
    double base_lr = 2e-4;
    double final_lr = 0.0;
    int64_t warmup_steps = 50;
    uint64_t seed = 0;
    int64_t fold = 0;
    ModelConfig model;

    void validate() const;
};

struct TrainResult {
    double best_val_rmse = 0.0;
    int64_t best_epoch = -1;
    int64_t steps = 0;
    std::filesystem::path checkpoint_dir;
    std::filesystem::path log_path;
};

struct Checkpoint {
    ModelConfig model;
    ModelParams<float> params;
    int64_t step = 0;
    uint64_t seed = 0;
};

// Checkpoint layout: <dir>/manifest.json (config, step, seed, parameter names)
// plus <dir>/params/<name>.bin, one tensor container per parameter.
void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg, const ModelParams<float>& params,
                     int64_t step, uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Runs the full loop: per batch forward/loss/backward/Adam at the scheduled
// learning rate, per epoch a validation pass; keeps the best-validation
// parameters and writes them once at the end. The run is a pure function of
// (config, dataset, splits). Log lines: {"step","lr","loss"} per batch and
// {"epoch","step","val_rmse"} per epoch, appended to <out_dir>/train_log.jsonl.
TrainResult train(const TrainConfig& cfg, const StrideDataset& data, const std::vector<size_t>& train_idx,
                  const std::vector<size_t>& val_idx, const std::filesystem::path& out_dir);

// Per-stride RMSE/PCC over the given samples with aggregates per terrain,
// overall, and split by transition vs steady strides; attaches the model's
// analytic cost figures.
MetricsReport evaluate(const ModelConfig& cfg, const ModelParams<float>& params, const StrideDataset& data,
                       const std::vector<size_t>& indices);

// Same report for the copy-previous-stride baseline.
MetricsReport evaluate_baseline(const StrideDataset& data, const std::vector<size_t>& indices);

// Sample indices whose subject is in the given id set.
std::vector<size_t> indices_for_subjects(const StrideDataset& data, const std::vector<int64_t>& subjects);

}  // namespace sftik
