#pragma once

#include <cstdint>
#include <vector>

#include "gradcache/denoiser.hpp"
#include "gradcache/tensor.hpp"

namespace gradcache {

// Where the conditioning modulation sits relative to each sublayer:
//   output_side:  y = x + (scale .* layernorm(raw(x)) + shift)
//   input_gated:  y = x + gate .* raw(scale .* layernorm(x) + shift)
enum class AdalnPlacement { output_side, input_gated };

const char* to_string(AdalnPlacement p);
AdalnPlacement parse_adaln_placement(const std::string& s);

struct ModelConfig {
    int depth = 4;                // blocks
    Eigen::Index tokens = 16;     // rows of the latent
    Eigen::Index channels = 64;   // columns of the latent
    int heads = 4;
    double mlp_ratio = 4.0;
    bool cross_attention = false;
    Eigen::Index cond_dim = 32;
    Eigen::Index prompt_tokens = 8;
    std::uint64_t seed = 0;
    AdalnPlacement adaln_placement = AdalnPlacement::output_side;
    double init_scale = 1.0;

    Eigen::Index mlp_hidden() const;
    void validate() const;
};

// per-sublayer conditioning maps, each cond_dim x channels
struct ModulationMaps {
    FeatureTensor shift;
    FeatureTensor scale;
    FeatureTensor gate;
};

struct BlockWeights {
    FeatureTensor wq, wk, wv, wo;  // self attention, channels x channels
    FeatureTensor cq, ck, cv, co;  // cross attention; cq channels x channels, ck/cv cond_dim x channels
    FeatureTensor w1, w2;          // mlp, channels x hidden and hidden x channels
    ModulationMaps ada_self, ada_cross, ada_mlp;
};

struct ModelWeights {
    ModelConfig config;
    std::vector<BlockWeights> blocks;
    FeatureTensor time_mix;     // cond_dim x cond_dim, mixes the sinusoidal step features
    FeatureTensor class_table;  // class-id embedding rows
    FeatureTensor head;         // channels x channels output projection
};

// deterministic in the config seed; all matrices finite, scaled by fan-in
ModelWeights init_model(const ModelConfig& cfg);

// smooth step features: interleaved sin/cos at geometric frequencies
RowVector sinusoidal_features(int t, Eigen::Index dim);

// 1 x cond_dim embedding for (timestep, class)
RowVector condition_embedding(const ModelWeights& w, const ConditionInfo& cond, int diffusion_t);

// fixed random prompt tokens, a function of the prompt id alone
FeatureTensor prompt_matrix(const ModelConfig& cfg, int prompt_id);

// scale .* layernorm(y) + shift, rows broadcast over tokens
FeatureTensor adaln(const FeatureRef& y, const FeatureRef& scale_row, const FeatureRef& shift_row,
                    Scalar eps = kLayerNormEps);

struct Modulation {
    RowVector scale;  // 1 + cond * scale_map
    RowVector shift;  // cond * shift_map
    RowVector gate;   // cond * gate_map
};

Modulation modulation_rows(const ModelWeights& w, int block, SublayerKind kind,
                           const FeatureRef& cond_embed);

// everything a forward pass needs besides the latent
struct ForwardContext {
    RowVector cond_embed;  // 1 x cond_dim
    FeatureTensor prompt;  // prompt_tokens x cond_dim; empty without cross attention
};

ForwardContext make_context(const ModelWeights& w, const ConditionInfo& cond, int diffusion_t);

// raw sublayer output, before any modulation or residual
FeatureTensor sublayer_forward(const ModelWeights& w, const SublayerId& id, const FeatureRef& x,
                               const ForwardContext& ctx);

// one block: every raw sublayer evaluation goes through `fetch`
FeatureTensor block_forward(const ModelWeights& w, int block, const FeatureRef& x,
                            const ForwardContext& ctx, int gen_step, CacheInterceptor& fetch);

// full pass: blocks then the linear head; predicts eps
FeatureTensor model_forward(const ModelWeights& w, const FeatureRef& x, const ConditionInfo& cond,
                            int gen_step, int diffusion_t, CacheInterceptor& fetch);

std::vector<SublayerKind> sublayer_kinds(const ModelConfig& cfg);

class ToyDit final : public Denoiser {
  public:
    explicit ToyDit(const ModelConfig& cfg) : w_(init_model(cfg)) {}
    explicit ToyDit(ModelWeights w) : w_(std::move(w)) {}

    Eigen::Index rows() const override { return w_.config.tokens; }
    Eigen::Index cols() const override { return w_.config.channels; }
    int depth() const override { return w_.config.depth; }
    std::vector<SublayerKind> sublayer_kinds() const override {
        return gradcache::sublayer_kinds(w_.config);
    }
    FeatureTensor forward(const FeatureRef& x, const ConditionInfo& cond, int gen_step,
                          int diffusion_t, CacheInterceptor& fetch) const override {
        return model_forward(w_, x, cond, gen_step, diffusion_t, fetch);
    }

    const ModelWeights& weights() const { return w_; }

  private:
    ModelWeights w_;
};

}  // namespace gradcache
