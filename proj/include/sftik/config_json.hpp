#pragma once

#include <json.hpp>

#include "sftik/dataset.hpp"
#include "sftik/model.hpp"
#include "sftik/train.hpp"

// JSON (de)serialization for the config structs. from_json overrides only the
// keys present, so partial config files layer over defaults.

namespace sftik {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"d_emb", c.d_emb},
                       {"n1", c.n1},
                       {"n2", c.n2},
                       {"heads", c.heads},
                       {"mlp_ratio", c.mlp_ratio},
                       {"patch_mode", to_string(c.patch_mode)},
                       {"image_size", c.image_size},
                       {"patch_kernel", c.patch_kernel},
                       {"image_channels", c.image_channels},
                       {"imu_channels", c.imu_channels},
                       {"imu_patch_len", c.imu_patch_len},
                       {"imu_patch_stride", c.imu_patch_stride},
                       {"fusion", to_string(c.fusion)},
                       {"ablation", to_string(c.ablation)},
                       {"series_len", c.series_len},
                       {"out_len", c.out_len}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.d_emb = j.value("d_emb", c.d_emb);
    c.n1 = j.value("n1", c.n1);
    c.n2 = j.value("n2", c.n2);
    c.heads = j.value("heads", c.heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    if (j.contains("patch_mode")) c.patch_mode = patch_mode_from_string(j["patch_mode"].get<std::string>());
    c.image_size = j.value("image_size", c.image_size);
    c.patch_kernel = j.value("patch_kernel", c.patch_kernel);
    c.image_channels = j.value("image_channels", c.image_channels);
    c.imu_channels = j.value("imu_channels", c.imu_channels);
    c.imu_patch_len = j.value("imu_patch_len", c.imu_patch_len);
    c.imu_patch_stride = j.value("imu_patch_stride", c.imu_patch_stride);
    if (j.contains("fusion")) c.fusion = fusion_from_string(j["fusion"].get<std::string>());
    if (j.contains("ablation")) c.ablation = ablation_from_string(j["ablation"].get<std::string>());
    c.series_len = j.value("series_len", c.series_len);
    c.out_len = j.value("out_len", c.out_len);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"batch_size", c.batch_size}, {"epochs", c.epochs},   {"base_lr", c.base_lr},
                       {"final_lr", c.final_lr},     {"warmup_steps", c.warmup_steps},
                       {"seed", c.seed},             {"fold", c.fold},       {"model", c.model}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.final_lr = j.value("final_lr", c.final_lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.seed = j.value("seed", c.seed);
    c.fold = j.value("fold", c.fold);
    if (j.contains("model")) from_json(j["model"], c.model);
}

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
    j = nlohmann::json{{"n_subjects", s.n_subjects},
                       {"strides_per_subject", s.strides_per_subject},
                       {"terrain_mix", s.terrain_mix},
                       {"noise_deg", s.noise_deg},
                       {"subject_sigma_deg", s.subject_sigma_deg},
                       {"acc_noise", s.acc_noise},
                       {"depth_noise_m", s.depth_noise_m},
                       {"run_min", s.run_min},
                       {"run_max", s.run_max},
                       {"series_len", s.series_len},
                       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
    s.n_subjects = j.value("n_subjects", s.n_subjects);
    s.strides_per_subject = j.value("strides_per_subject", s.strides_per_subject);
    if (j.contains("terrain_mix")) {
        const auto v = j["terrain_mix"].get<std::vector<double>>();
        if (v.size() != s.terrain_mix.size()) throw ConfigError("terrain_mix must have 5 entries");
        std::copy(v.begin(), v.end(), s.terrain_mix.begin());
    }
    s.noise_deg = j.value("noise_deg", s.noise_deg);
    s.subject_sigma_deg = j.value("subject_sigma_deg", s.subject_sigma_deg);
    s.acc_noise = j.value("acc_noise", s.acc_noise);
    s.depth_noise_m = j.value("depth_noise_m", s.depth_noise_m);
    s.run_min = j.value("run_min", s.run_min);
    s.run_max = j.value("run_max", s.run_max);
    s.series_len = j.value("series_len", s.series_len);
    s.seed = j.value("seed", s.seed);
}

}  // namespace sftik
