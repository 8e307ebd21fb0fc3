#include "sftik/model.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "sftik/rng.hpp"

namespace sftik {

const char* to_string(PatchMode m) {
    switch (m) {
        case PatchMode::width: return "width";
        case PatchMode::height: return "height";
        case PatchMode::square: return "square";
    }
    return "width";
}

const char* to_string(Fusion f) {
    switch (f) {
        case Fusion::sandwich: return "sandwich";
        case Fusion::early: return "early";
        case Fusion::late: return "late";
    }
    return "sandwich";
}

const char* to_string(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::no_prev_image: return "no_prev_image";
        case Ablation::no_imu: return "no_imu";
    }
    return "none";
}

PatchMode patch_mode_from_string(const std::string& s) {
    if (s == "width") return PatchMode::width;
    if (s == "height") return PatchMode::height;
    if (s == "square") return PatchMode::square;
    throw ConfigError("unknown patch mode '" + s + "' (expected width|height|square)");
}

Fusion fusion_from_string(const std::string& s) {
    if (s == "sandwich") return Fusion::sandwich;
    if (s == "early") return Fusion::early;
    if (s == "late") return Fusion::late;
    throw ConfigError("unknown fusion variant '" + s + "' (expected sandwich|early|late)");
}

Ablation ablation_from_string(const std::string& s) {
    if (s == "none") return Ablation::none;
    if (s == "no_prev_image") return Ablation::no_prev_image;
    if (s == "no_imu") return Ablation::no_imu;
    throw ConfigError("unknown ablation '" + s + "' (expected none|no_prev_image|no_imu)");
}

void ModelConfig::validate() const {
    if (d_emb < 1) throw ConfigError("d_emb must be positive");
    if (n1 < 1 || n2 < 1) throw ConfigError("n1 and n2 must be positive");
    if (heads < 1) throw ConfigError("heads must be positive");
    if (d_emb % heads != 0) {
        throw ConfigError("d_emb " + std::to_string(d_emb) + " not divisible by heads " + std::to_string(heads));
    }
    if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be positive");
    if (image_size < 1 || patch_kernel < 1 || image_size % patch_kernel != 0) {
        throw ConfigError("image size " + std::to_string(image_size) + " not divisible by patch kernel " +
                          std::to_string(patch_kernel));
    }
    if (image_channels < 1) throw ConfigError("image_channels must be positive");
    if (imu_channels < 1) throw ConfigError("imu_channels must be positive");
    if (imu_patch_len < 1 || imu_patch_stride < 1 || imu_patch_len > series_len) {
        throw ConfigError("invalid IMU patch length/stride");
    }
    if ((series_len - imu_patch_len) % imu_patch_stride != 0) {
        throw ConfigError("(series_len - L) = " + std::to_string(series_len - imu_patch_len) +
                          " not divisible by stride " + std::to_string(imu_patch_stride));
    }
    if (out_len < 1) throw ConfigError("out_len must be positive");
    if (ablation != Ablation::none && fusion != Fusion::sandwich) {
        throw ConfigError("ablations are defined on the sandwich variant only");
    }
}

int64_t expected_tokens(TokenRole role, const ModelConfig& cfg) {
    switch (role) {
        case TokenRole::P_K: return cfg.imu_tokens();
        case TokenRole::P_I_prev:
        case TokenRole::P_I_cur:
        case TokenRole::P_I_prime: return cfg.image_tokens();
        case TokenRole::O_IK: return cfg.stage1a_tokens();
        case TokenRole::L_An: return cfg.stage2_tokens();
    }
    return 0;
}

namespace {

struct StackPlan {
    std::string name;
    int64_t layers;
};

// Stacks in construction order for the configured variant.
std::vector<StackPlan> stack_plan(const ModelConfig& cfg) {
    switch (cfg.fusion) {
        case Fusion::sandwich:
            return {{"s1_fused", cfg.n1}, {"s1_image", cfg.n1}, {"s2", cfg.n2}};
        case Fusion::early:
            return {{"early", cfg.n1 + cfg.n2}};
        case Fusion::late:
            return {{"s1_kin", cfg.n1}, {"s1_prev", cfg.n1}, {"s1_cur", cfg.n1}, {"s2", cfg.n2}};
    }
    return {};
}

bool uses_imu(const ModelConfig& cfg) { return cfg.ablation != Ablation::no_imu; }

std::string layer_prefix(const std::string& stack, int64_t layer) {
    std::ostringstream os;
    os << stack << "." << std::setfill('0') << std::setw(2) << layer;
    return os.str();
}

template <class T>
void fill_truncated_normal(Tensor<T>& t, Rng& rng, double sigma = 0.02, double clip_sigmas = 2.0) {
    for (T& v : t.mutable_data()) v = static_cast<T>(rng.truncated_normal(sigma, clip_sigmas));
}

template <class T>
void add_param(ModelParams<T>& p, const std::string& name, Tensor<T> t) {
    t.set_requires_grad(true);
    p.map.emplace(name, std::move(t));
}

template <class T>
void init_block(ModelParams<T>& p, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
    const int64_t d = cfg.d_emb;
    const int64_t h = cfg.mlp_ratio * d;
    add_param(p, prefix + ".ln1.g", Tensor<T>::full({d}, T(1)));
    add_param(p, prefix + ".ln1.b", Tensor<T>::zeros({d}));
    for (const char* w : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"}) {
        Tensor<T> m = Tensor<T>::zeros({d, d});
        fill_truncated_normal(m, rng);
        add_param(p, prefix + w, std::move(m));
    }
    for (const char* b : {".attn.bq", ".attn.bk", ".attn.bv", ".attn.bo"}) {
        add_param(p, prefix + b, Tensor<T>::zeros({d}));
    }
    add_param(p, prefix + ".ln2.g", Tensor<T>::full({d}, T(1)));
    add_param(p, prefix + ".ln2.b", Tensor<T>::zeros({d}));
    Tensor<T> w1 = Tensor<T>::zeros({d, h});
    fill_truncated_normal(w1, rng);
    add_param(p, prefix + ".mlp.w1", std::move(w1));
    add_param(p, prefix + ".mlp.b1", Tensor<T>::zeros({h}));
    Tensor<T> w2 = Tensor<T>::zeros({h, d});
    fill_truncated_normal(w2, rng);
    add_param(p, prefix + ".mlp.w2", std::move(w2));
    add_param(p, prefix + ".mlp.b2", Tensor<T>::zeros({d}));
}

}  // namespace

template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams<T> p;
    const int64_t d = cfg.d_emb;

    Tensor<T> iw = Tensor<T>::zeros({cfg.image_patch_dim(), d});
    fill_truncated_normal(iw, rng);
    add_param(p, "embed.image.w", std::move(iw));
    add_param(p, "embed.image.b", Tensor<T>::zeros({d}));
    Tensor<T> ipos = Tensor<T>::zeros({cfg.image_tokens(), d});
    fill_truncated_normal(ipos, rng);
    add_param(p, "embed.image.pos", std::move(ipos));

    if (uses_imu(cfg)) {
        Tensor<T> kw = Tensor<T>::zeros({cfg.imu_patch_dim(), d});
        fill_truncated_normal(kw, rng);
        add_param(p, "embed.imu.w", std::move(kw));
        add_param(p, "embed.imu.b", Tensor<T>::zeros({d}));
        Tensor<T> kpos = Tensor<T>::zeros({cfg.imu_tokens(), d});
        fill_truncated_normal(kpos, rng);
        add_param(p, "embed.imu.pos", std::move(kpos));
    }

    for (const StackPlan& stack : stack_plan(cfg)) {
        for (int64_t l = 0; l < stack.layers; ++l) init_block(p, layer_prefix(stack.name, l), cfg, rng);
    }

    Tensor<T> hw1 = Tensor<T>::zeros({d, d});
    fill_truncated_normal(hw1, rng);
    add_param(p, "head.w1", std::move(hw1));
    add_param(p, "head.b1", Tensor<T>::zeros({d}));
    Tensor<T> hw2 = Tensor<T>::zeros({d, cfg.out_len});
    fill_truncated_normal(hw2, rng);
    add_param(p, "head.w2", std::move(hw2));
    add_param(p, "head.b2", Tensor<T>::zeros({cfg.out_len}));
    return p;
}

int64_t count_params(const ModelConfig& cfg) {
    cfg.validate();
    const int64_t d = cfg.d_emb;
    const int64_t r = cfg.mlp_ratio;
    const int64_t per_block = 4 * d * d + 2 * r * d * d  // attention + MLP weights
                              + 4 * d + r * d + d        // their biases
                              + 4 * d;                   // two layer norms
    int64_t blocks = 0;
    for (const StackPlan& stack : stack_plan(cfg)) blocks += stack.layers;

    int64_t total = blocks * per_block;
    total += cfg.image_patch_dim() * d + d + cfg.image_tokens() * d;  // shared image embedding
    if (uses_imu(cfg)) total += cfg.imu_patch_dim() * d + d + cfg.imu_tokens() * d;
    total += d * d + d + d * cfg.out_len + cfg.out_len;  // head
    return total;
}

FlopsBreakdown count_flops(const ModelConfig& cfg) {
    cfg.validate();
    const int64_t d = cfg.d_emb;
    const int64_t per_token_block = (4 + 2 * cfg.mlp_ratio) * d * d;
    const int64_t image_embed_once = cfg.image_tokens() * cfg.image_patch_dim() * d;
    const int64_t imu_embed = cfg.imu_tokens() * cfg.imu_patch_dim() * d;

    FlopsBreakdown f;
    f.image_encoder = image_embed_once + cfg.n1 * cfg.image_tokens() * per_token_block;
    f.head = d * d + d * cfg.out_len;

    const int64_t images_used = cfg.ablation == Ablation::no_prev_image ? 1 : 2;
    f.embeddings = images_used * image_embed_once + (uses_imu(cfg) ? imu_embed : 0);

    switch (cfg.fusion) {
        case Fusion::sandwich:
            f.stage1_fused = cfg.n1 * cfg.stage1a_tokens() * per_token_block;
            f.stage1_image = cfg.n1 * cfg.image_tokens() * per_token_block;
            f.stage2 = cfg.n2 * cfg.stage2_tokens() * per_token_block;
            break;
        case Fusion::early: {
            const int64_t tokens = cfg.imu_tokens() + 2 * cfg.image_tokens();
            f.stage2 = (cfg.n1 + cfg.n2) * tokens * per_token_block;
            break;
        }
        case Fusion::late: {
            f.stage1_fused = cfg.n1 * cfg.imu_tokens() * per_token_block;
            f.stage1_image = 2 * cfg.n1 * cfg.image_tokens() * per_token_block;
            const int64_t tokens = cfg.imu_tokens() + 2 * cfg.image_tokens();
            f.stage2 = cfg.n2 * tokens * per_token_block;
            break;
        }
    }
    return f;
}

template <class T>
Tensor<T> patchify_image(const Tensor<T>& img, const ModelConfig& cfg) {
    int64_t c = 1, h = 0, w = 0;
    if (img.rank() == 2) {
        h = img.dim(0);
        w = img.dim(1);
    } else if (img.rank() == 3) {
        c = img.dim(0);
        h = img.dim(1);
        w = img.dim(2);
    } else {
        throw ShapeError("patchify_image: expected (H,W) or (C,H,W), got " + img.shape_str());
    }
    if (c != cfg.image_channels || h != cfg.image_size || w != cfg.image_size) {
        throw ConfigError("patchify_image: image " + img.shape_str() + " does not match configured " +
                          std::to_string(cfg.image_channels) + "x" + std::to_string(cfg.image_size) + "x" +
                          std::to_string(cfg.image_size));
    }
    const int64_t k = cfg.patch_kernel;
    const int64_t n = cfg.image_tokens();
    const int64_t dim = cfg.image_patch_dim();
    Tensor<T> out = Tensor<T>::zeros({n, dim});
    auto src = img.data();
    auto dst = out.mutable_data();
    auto pixel = [&](int64_t ch, int64_t row, int64_t col) { return src[(ch * h + row) * w + col]; };

    if (cfg.patch_mode == PatchMode::width) {
        for (int64_t p = 0; p < n; ++p) {
            int64_t o = p * dim;
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t r = p * k; r < (p + 1) * k; ++r)
                    for (int64_t col = 0; col < w; ++col) dst[o++] = pixel(ch, r, col);
        }
    } else if (cfg.patch_mode == PatchMode::height) {
        for (int64_t p = 0; p < n; ++p) {
            int64_t o = p * dim;
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t r = 0; r < h; ++r)
                    for (int64_t col = p * k; col < (p + 1) * k; ++col) dst[o++] = pixel(ch, r, col);
        }
    } else {
        const int64_t per_side = cfg.image_size / k;
        for (int64_t pr = 0; pr < per_side; ++pr) {
            for (int64_t pc = 0; pc < per_side; ++pc) {
                int64_t o = (pr * per_side + pc) * dim;
                for (int64_t ch = 0; ch < c; ++ch)
                    for (int64_t r = pr * k; r < (pr + 1) * k; ++r)
                        for (int64_t col = pc * k; col < (pc + 1) * k; ++col) dst[o++] = pixel(ch, r, col);
            }
        }
    }
    return out;
}

template <class T>
Tensor<T> patchify_imu(const Tensor<T>& K, const ModelConfig& cfg) {
    if (K.rank() != 2 || K.dim(0) != cfg.imu_channels || K.dim(1) != cfg.series_len) {
        throw ShapeError("patchify_imu: expected (" + std::to_string(cfg.imu_channels) + "," +
                         std::to_string(cfg.series_len) + "), got " + K.shape_str());
    }
    if ((cfg.series_len - cfg.imu_patch_len) % cfg.imu_patch_stride != 0) {
        throw ConfigError("patchify_imu: (series_len - L) not divisible by stride");
    }
    const int64_t n = cfg.imu_tokens();
    const int64_t dim = cfg.imu_patch_dim();
    Tensor<T> out = Tensor<T>::zeros({n, dim});
    auto src = K.data();
    auto dst = out.mutable_data();
    for (int64_t p = 0; p < n; ++p) {
        int64_t o = p * dim;
        for (int64_t c = 0; c < cfg.imu_channels; ++c) {
            const int64_t base = c * cfg.series_len + p * cfg.imu_patch_stride;
            for (int64_t l = 0; l < cfg.imu_patch_len; ++l) dst[o++] = src[base + l];
        }
    }
    return out;
}

template <class T>
Tensor<T> transformer_block(const Tensor<T>& x, const ModelParams<T>& params, const std::string& prefix,
                            const ModelConfig& cfg, ForwardTrace<T>* trace) {
    const int64_t d = cfg.d_emb;
    if (x.rank() != 2 || x.cols() != d) {
        throw ShapeError("transformer_block: expected (n," + std::to_string(d) + ") tokens, got " + x.shape_str());
    }
    const int64_t dh = d / cfg.heads;
    const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    Tensor<T> h = layer_norm(x, params.at(prefix + ".ln1.g"), params.at(prefix + ".ln1.b"));
    Tensor<T> q = add_rows(matmul(h, params.at(prefix + ".attn.wq")), params.at(prefix + ".attn.bq"));
    Tensor<T> k = add_rows(matmul(h, params.at(prefix + ".attn.wk")), params.at(prefix + ".attn.bk"));
    Tensor<T> v = add_rows(matmul(h, params.at(prefix + ".attn.wv")), params.at(prefix + ".attn.bv"));

    std::vector<Tensor<T>> head_outputs;
    head_outputs.reserve(static_cast<size_t>(cfg.heads));
    for (int64_t i = 0; i < cfg.heads; ++i) {
        Tensor<T> qi = slice_cols(q, i * dh, dh);
        Tensor<T> ki = slice_cols(k, i * dh, dh);
        Tensor<T> vi = slice_cols(v, i * dh, dh);
        Tensor<T> scores = scale(matmul(qi, transpose(ki)), att_scale);
        Tensor<T> probs = softmax_rows(scores);
        if (trace && trace->collect_attention) trace->attentions.push_back(probs);
        head_outputs.push_back(matmul(probs, vi));
    }
    Tensor<T> merged = cfg.heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
    Tensor<T> att = add_rows(matmul(merged, params.at(prefix + ".attn.wo")), params.at(prefix + ".attn.bo"));
    Tensor<T> x1 = add(x, att);

    Tensor<T> h2 = layer_norm(x1, params.at(prefix + ".ln2.g"), params.at(prefix + ".ln2.b"));
    Tensor<T> m = add_rows(matmul(h2, params.at(prefix + ".mlp.w1")), params.at(prefix + ".mlp.b1"));
    m = gelu(m);
    m = add_rows(matmul(m, params.at(prefix + ".mlp.w2")), params.at(prefix + ".mlp.b2"));
    return add(x1, m);
}

namespace {

template <class T>
Tensor<T> run_stack(Tensor<T> x, const ModelParams<T>& params, const std::string& stack, int64_t layers,
                    const ModelConfig& cfg, ForwardTrace<T>* trace) {
    for (int64_t l = 0; l < layers; ++l) x = transformer_block(x, params, layer_prefix(stack, l), cfg, trace);
    return x;
}

template <class T>
void note_tokens(ForwardTrace<T>* trace, const char* key, int64_t count) {
    if (trace) trace->token_counts[key] = count;
}

}  // namespace

template <class T>
Tensor<T> head_forward(const Tensor<T>& tokens, const ModelParams<T>& params, const ModelConfig& cfg) {
    if (tokens.rank() != 2 || tokens.rows() < 1) {
        throw ContractError("head_forward: empty token sequence");
    }
    Tensor<T> pooled = mean_rows(tokens);
    Tensor<T> h = gelu(add_rows(matmul(pooled, params.at("head.w1")), params.at("head.b1")));
    Tensor<T> out = add_rows(matmul(h, params.at("head.w2")), params.at("head.b2"));
    return reshape(out, {cfg.out_len});
}

template <class T>
Tensor<T> model_forward(const ModelConfig& cfg, const ModelParams<T>& params, const Tensor<T>& K,
                        const Tensor<T>& I_prev, const Tensor<T>& I_cur, ForwardTrace<T>* trace) {
    cfg.validate();

    auto embed_image = [&](const Tensor<T>& img) {
        return embed(patchify_image(img, cfg), params.at("embed.image.w"), params.at("embed.image.b"),
                     params.at("embed.image.pos"));
    };
    auto embed_imu = [&]() {
        return embed(patchify_imu(K, cfg), params.at("embed.imu.w"), params.at("embed.imu.b"),
                     params.at("embed.imu.pos"));
    };

    if (cfg.fusion == Fusion::sandwich) {
        Tensor<T> cur = make_token_seq(TokenRole::P_I_cur, embed_image(I_cur), cfg).tokens;

        Tensor<T> x;
        if (cfg.ablation == Ablation::no_imu) {
            x = make_token_seq(TokenRole::P_I_prev, embed_image(I_prev), cfg).tokens;
        } else if (cfg.ablation == Ablation::no_prev_image) {
            x = make_token_seq(TokenRole::P_K, embed_imu(), cfg).tokens;
        } else {
            Tensor<T> pk = make_token_seq(TokenRole::P_K, embed_imu(), cfg).tokens;
            Tensor<T> pprev = make_token_seq(TokenRole::P_I_prev, embed_image(I_prev), cfg).tokens;
            x = concat_rows<T>({pk, pprev});
        }
        note_tokens(trace, "stage1a", x.rows());
        x = run_stack(std::move(x), params, "s1_fused", cfg.n1, cfg, trace);
        x = make_token_seq(TokenRole::O_IK, x, cfg).tokens;

        note_tokens(trace, "stage1b", cur.rows());
        cur = run_stack(std::move(cur), params, "s1_image", cfg.n1, cfg, trace);
        cur = make_token_seq(TokenRole::P_I_prime, cur, cfg).tokens;

        Tensor<T> z = concat_rows<T>({x, cur});
        note_tokens(trace, "stage2", z.rows());
        z = run_stack(std::move(z), params, "s2", cfg.n2, cfg, trace);
        z = make_token_seq(TokenRole::L_An, z, cfg).tokens;
        return head_forward(z, params, cfg);
    }

    Tensor<T> pk = embed_imu();
    Tensor<T> pprev = embed_image(I_prev);
    Tensor<T> pcur = embed_image(I_cur);

    if (cfg.fusion == Fusion::early) {
        Tensor<T> x = concat_rows<T>({pk, pprev, pcur});
        note_tokens(trace, "early", x.rows());
        x = run_stack(std::move(x), params, "early", cfg.n1 + cfg.n2, cfg, trace);
        return head_forward(x, params, cfg);
    }

    note_tokens(trace, "late_kin", pk.rows());
    note_tokens(trace, "late_prev", pprev.rows());
    note_tokens(trace, "late_cur", pcur.rows());
    Tensor<T> a = run_stack(std::move(pk), params, "s1_kin", cfg.n1, cfg, trace);
    Tensor<T> b = run_stack(std::move(pprev), params, "s1_prev", cfg.n1, cfg, trace);
    Tensor<T> c = run_stack(std::move(pcur), params, "s1_cur", cfg.n1, cfg, trace);
    Tensor<T> z = concat_rows<T>({a, b, c});
    note_tokens(trace, "stage2", z.rows());
    z = run_stack(std::move(z), params, "s2", cfg.n2, cfg, trace);
    return head_forward(z, params, cfg);
}

template ModelParams<float> init_params<float>(const ModelConfig&, uint64_t);
template ModelParams<double> init_params<double>(const ModelConfig&, uint64_t);
template Tensor<float> patchify_image<float>(const Tensor<float>&, const ModelConfig&);
template Tensor<double> patchify_image<double>(const Tensor<double>&, const ModelConfig&);
template Tensor<float> patchify_imu<float>(const Tensor<float>&, const ModelConfig&);
template Tensor<double> patchify_imu<double>(const Tensor<double>&, const ModelConfig&);
template Tensor<float> transformer_block<float>(const Tensor<float>&, const ModelParams<float>&, const std::string&,
                                                const ModelConfig&, ForwardTrace<float>*);
template Tensor<double> transformer_block<double>(const Tensor<double>&, const ModelParams<double>&,
                                                  const std::string&, const ModelConfig&, ForwardTrace<double>*);
template Tensor<float> head_forward<float>(const Tensor<float>&, const ModelParams<float>&, const ModelConfig&);
template Tensor<double> head_forward<double>(const Tensor<double>&, const ModelParams<double>&, const ModelConfig&);
template Tensor<float> model_forward<float>(const ModelConfig&, const ModelParams<float>&, const Tensor<float>&,
                                            const Tensor<float>&, const Tensor<float>&, ForwardTrace<float>*);
template Tensor<double> model_forward<double>(const ModelConfig&, const ModelParams<double>&, const Tensor<double>&,
                                              const Tensor<double>&, const Tensor<double>&, ForwardTrace<double>*);

}  // namespace sftik
