#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sftik/tensor.hpp"
#include "sftik/tensor_ops.hpp"

namespace sftik {

enum class PatchMode { width, height, square };
enum class Fusion { sandwich, early, late };
enum class Ablation { none, no_prev_image, no_imu };

const char* to_string(PatchMode m);
const char* to_string(Fusion f);
const char* to_string(Ablation a);
PatchMode patch_mode_from_string(const std::string& s);
Fusion fusion_from_string(const std::string& s);
Ablation ablation_from_string(const std::string& s);

// Every architecture knob. Defaults are the full-scale configuration; tests
// shrink d_emb/depths/image size for desk-scale runs.
struct ModelConfig {
    int64_t d_emb = 768;
    int64_t n1 = 6;
    int64_t n2 = 6;
    int64_t heads = 12;
    int64_t mlp_ratio = 4;
    PatchMode patch_mode = PatchMode::width;
    int64_t image_size = 224;
    int64_t patch_kernel = 16;
    int64_t image_channels = 1;
    int64_t imu_channels = 19;
    int64_t imu_patch_len = 10;     // L
    int64_t imu_patch_stride = 10;  // S
    Fusion fusion = Fusion::sandwich;
    Ablation ablation = Ablation::none;
    int64_t series_len = 100;
    int64_t out_len = 100;

    void validate() const;

    int64_t image_tokens() const {
        int64_t per_side = image_size / patch_kernel;
        return patch_mode == PatchMode::square ? per_side * per_side : per_side;
    }
    int64_t image_patch_dim() const {
        return (patch_mode == PatchMode::square ? patch_kernel * patch_kernel : patch_kernel * image_size) *
               image_channels;
    }
    int64_t imu_tokens() const { return (series_len - imu_patch_len) / imu_patch_stride + 1; }
    int64_t imu_patch_dim() const { return imu_channels * imu_patch_len; }
    int64_t stage1a_tokens() const {
        if (ablation == Ablation::no_prev_image) return imu_tokens();
        if (ablation == Ablation::no_imu) return image_tokens();
        return imu_tokens() + image_tokens();
    }
    int64_t stage2_tokens() const { return stage1a_tokens() + image_tokens(); }
};

// Named parameter map. std::map keeps iteration (and therefore gradient
// reduction, checkpointing, and optimizer order) deterministic.
template <class T>
struct ModelParams {
    std::map<std::string, Tensor<T>> map;

    Tensor<T>& at(const std::string& name) {
        auto it = map.find(name);
        if (it == map.end()) throw ContractError("missing model parameter '" + name + "'");
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = map.find(name);
        if (it == map.end()) throw ContractError("missing model parameter '" + name + "'");
        return it->second;
    }
    std::vector<Tensor<T>> all() const {
        std::vector<Tensor<T>> out;
        out.reserve(map.size());
        for (const auto& [name, tensor] : map) out.push_back(tensor);
        return out;
    }
    int64_t total_scalars() const {
        int64_t n = 0;
        for (const auto& [name, tensor] : map) n += tensor.numel();
        return n;
    }
};

// Token sequences at the labeled points of the forward pass.
enum class TokenRole { P_K, P_I_prev, P_I_cur, O_IK, P_I_prime, L_An };

int64_t expected_tokens(TokenRole role, const ModelConfig& cfg);

template <class T>
struct TokenSeq {
    Tensor<T> tokens;  // n_tokens x d_emb
    TokenRole role;
};

template <class T>
TokenSeq<T> make_token_seq(TokenRole role, const Tensor<T>& tokens, const ModelConfig& cfg) {
    const int64_t want = expected_tokens(role, cfg);
    if (tokens.rank() != 2 || tokens.rows() != want || tokens.cols() != cfg.d_emb) {
        throw ShapeError("token sequence has shape " + tokens.shape_str() + ", expected [" + std::to_string(want) +
                         "x" + std::to_string(cfg.d_emb) + "]");
    }
    return TokenSeq<T>{tokens, role};
}

// Per-forward diagnostics: token counts at each stage, and optionally the
// attention matrices of every layer (head-stacked) for invariant tests.
template <class T>
struct ForwardTrace {
    std::map<std::string, int64_t> token_counts;
    bool collect_attention = false;
    std::vector<Tensor<T>> attentions;
};

// Multiply-accumulate counts of the dense linear maps, bucketed by component.
// The comparator variants fold their stacks into the nearest bucket (early:
// everything after the embeddings lands in stage2; late: the kinematics stack
// in stage1_fused, both image stacks in stage1_image).
struct FlopsBreakdown {
    int64_t embeddings = 0;
    int64_t stage1_fused = 0;
    int64_t stage1_image = 0;
    int64_t stage2 = 0;
    int64_t head = 0;
    // One patch embedding plus n1 blocks over a single image's tokens — the
    // standalone image-encoder cost.
    int64_t image_encoder = 0;

    int64_t total_macs() const { return embeddings + stage1_fused + stage1_image + stage2 + head; }
    double total_gflops() const { return static_cast<double>(total_macs()) / 1e9; }
    double image_encoder_gflops() const { return static_cast<double>(image_encoder) / 1e9; }
};

FlopsBreakdown count_flops(const ModelConfig& cfg);
int64_t count_params(const ModelConfig& cfg);

template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, uint64_t seed);

// Image (H,W) or (C,H,W) -> patch matrix per the configured mode. Width mode
// slices horizontal bands of patch_kernel rows; height mode vertical bands of
// patch_kernel columns; square mode a grid of patch_kernel^2 tiles. Patches
// are flattened channel-major, rows before columns.
template <class T>
Tensor<T> patchify_image(const Tensor<T>& img, const ModelConfig& cfg);

// K (channels, series_len) -> ((series_len-L)/S+1, channels*L); window p
// covers columns [p*S, p*S+L), flattened channel-major.
template <class T>
Tensor<T> patchify_imu(const Tensor<T>& K, const ModelConfig& cfg);

// tokens = patches * W + b + positional encoding
template <class T>
Tensor<T> embed(const Tensor<T>& patches, const Tensor<T>& w, const Tensor<T>& b, const Tensor<T>& pos) {
    return add(add_rows(matmul(patches, w), b), pos);
}

// Pre-norm residual block: x + MHSA(LN(x)), then + MLP(LN(.)).
template <class T>
Tensor<T> transformer_block(const Tensor<T>& x, const ModelParams<T>& params, const std::string& prefix,
                            const ModelConfig& cfg, ForwardTrace<T>* trace = nullptr);

// Mean-pool over tokens, then linear(d,d) + GELU + linear(d,out_len).
template <class T>
Tensor<T> head_forward(const Tensor<T>& tokens, const ModelParams<T>& params, const ModelConfig& cfg);

// Full forward for the configured fusion variant and ablation. Returns the
// predicted thigh-angle series, shape (out_len).
template <class T>
Tensor<T> model_forward(const ModelConfig& cfg, const ModelParams<T>& params, const Tensor<T>& K,
                        const Tensor<T>& I_prev, const Tensor<T>& I_cur, ForwardTrace<T>* trace = nullptr);

extern template ModelParams<float> init_params<float>(const ModelConfig&, uint64_t);
extern template ModelParams<double> init_params<double>(const ModelConfig&, uint64_t);
extern template Tensor<float> patchify_image<float>(const Tensor<float>&, const ModelConfig&);
extern template Tensor<double> patchify_image<double>(const Tensor<double>&, const ModelConfig&);
extern template Tensor<float> patchify_imu<float>(const Tensor<float>&, const ModelConfig&);
extern template Tensor<double> patchify_imu<double>(const Tensor<double>&, const ModelConfig&);
extern template Tensor<float> transformer_block<float>(const Tensor<float>&, const ModelParams<float>&,
                                                       const std::string&, const ModelConfig&, ForwardTrace<float>*);
extern template Tensor<double> transformer_block<double>(const Tensor<double>&, const ModelParams<double>&,
                                                         const std::string&, const ModelConfig&,
                                                         ForwardTrace<double>*);
extern template Tensor<float> head_forward<float>(const Tensor<float>&, const ModelParams<float>&, const ModelConfig&);
extern template Tensor<double> head_forward<double>(const Tensor<double>&, const ModelParams<double>&,
                                                    const ModelConfig&);
extern template Tensor<float> model_forward<float>(const ModelConfig&, const ModelParams<float>&, const Tensor<float>&,
                                                   const Tensor<float>&, const Tensor<float>&, ForwardTrace<float>*);
extern template Tensor<double> model_forward<double>(const ModelConfig&, const ModelParams<double>&,
                                                     const Tensor<double>&, const Tensor<double>&,
                                                     const Tensor<double>&, ForwardTrace<double>*);

}  // namespace sftik
