#include "gradcache/model.hpp"

#include <cmath>
#include <string>

namespace gradcache {

namespace {

constexpr std::uint64_t kTagBlockBase = 0x1000;
constexpr std::uint64_t kTagTimeMix = 0x2001;
constexpr std::uint64_t kTagClassTable = 0x2002;
constexpr std::uint64_t kTagHead = 0x2003;
constexpr std::uint64_t kPromptDomain = 0x70726f6d70740000ull;
constexpr Eigen::Index kClassTableRows = 256;

FeatureTensor scaled_gaussian(Rng rng, Eigen::Index rows, Eigen::Index cols, double sigma) {
    FeatureTensor m = gaussian_fill(rng, rows, cols);
    m *= sigma;
    return m;
}

ModulationMaps init_modulation(Rng rng, const ModelConfig& cfg) {
    const double sigma = 0.1 * cfg.init_scale / std::sqrt(static_cast<double>(cfg.cond_dim));
    ModulationMaps maps;
    maps.shift = scaled_gaussian(rng.fork(1), cfg.cond_dim, cfg.channels, sigma);
    maps.scale = scaled_gaussian(rng.fork(2), cfg.cond_dim, cfg.channels, sigma);
    maps.gate = scaled_gaussian(rng.fork(3), cfg.cond_dim, cfg.channels, sigma);
    return maps;
}

// multi-head attention core shared by self and cross paths; k and v carry
// the same row count (key tokens)
FeatureTensor attention(const FeatureTensor& q, const FeatureTensor& k, const FeatureTensor& v,
                        int heads) {
    const Eigen::Index dh = q.cols() / heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    FeatureTensor out(q.rows(), q.cols());
    for (int h = 0; h < heads; ++h) {
        const Eigen::Index off = h * dh;
        FeatureTensor scores =
            (q.middleCols(off, dh) * k.middleCols(off, dh).transpose()) * inv_sqrt_dh;
        out.middleCols(off, dh) = row_softmax(scores) * v.middleCols(off, dh);
    }
    return out;
}

const ModulationMaps& maps_for(const BlockWeights& b, SublayerKind kind) {
    switch (kind) {
        case SublayerKind::self_attention: return b.ada_self;
        case SublayerKind::cross_attention: return b.ada_cross;
        case SublayerKind::mlp: return b.ada_mlp;
    }
    throw ConfigError("unknown sublayer kind");
}

}  // namespace

const char* to_string(SublayerKind k) {
    switch (k) {
        case SublayerKind::self_attention: return "self_attention";
        case SublayerKind::cross_attention: return "cross_attention";
        case SublayerKind::mlp: return "mlp";
    }
    return "?";
}

const char* to_string(AdalnPlacement p) {
    return p == AdalnPlacement::output_side ? "output" : "input_gated";
}

AdalnPlacement parse_adaln_placement(const std::string& s) {
    if (s == "output") return AdalnPlacement::output_side;
    if (s == "input_gated") return AdalnPlacement::input_gated;
    throw ConfigError("unknown adaln_placement: " + s);
}

Eigen::Index ModelConfig::mlp_hidden() const {
    return static_cast<Eigen::Index>(std::lround(static_cast<double>(channels) * mlp_ratio));
}

void ModelConfig::validate() const {
    if (depth < 2) throw ConfigError("model depth must be >= 2");
    if (tokens < 1) throw ConfigError("tokens must be >= 1");
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (heads < 1) throw ConfigError("heads must be >= 1");
    if (channels % heads != 0) throw ConfigError("channels must be divisible by heads");
    if (mlp_ratio <= 0.0 || mlp_hidden() < 1) throw ConfigError("mlp_ratio must be positive");
    if (cond_dim < 2) throw ConfigError("cond_dim must be >= 2");
    if (cross_attention && prompt_tokens < 1) throw ConfigError("prompt_tokens must be >= 1");
    if (init_scale <= 0.0) throw ConfigError("init_scale must be positive");
}

ModelWeights init_model(const ModelConfig& cfg) {
    cfg.validate();
    const Rng root(cfg.seed);
    const Eigen::Index n = cfg.channels;
    const Eigen::Index e = cfg.cond_dim;
    const Eigen::Index h = cfg.mlp_hidden();
    const double sn = cfg.init_scale / std::sqrt(static_cast<double>(n));
    const double se = cfg.init_scale / std::sqrt(static_cast<double>(e));
    const double sh = cfg.init_scale / std::sqrt(static_cast<double>(h));

    ModelWeights w;
    w.config = cfg;
    w.blocks.resize(static_cast<std::size_t>(cfg.depth));
    for (int l = 0; l < cfg.depth; ++l) {
        Rng br = root.fork(kTagBlockBase + static_cast<std::uint64_t>(l));
        BlockWeights& b = w.blocks[static_cast<std::size_t>(l)];
        b.wq = scaled_gaussian(br.fork(1), n, n, sn);
        b.wk = scaled_gaussian(br.fork(2), n, n, sn);
        b.wv = scaled_gaussian(br.fork(3), n, n, sn);
        b.wo = scaled_gaussian(br.fork(4), n, n, sn);
        if (cfg.cross_attention) {
            b.cq = scaled_gaussian(br.fork(5), n, n, sn);
            b.ck = scaled_gaussian(br.fork(6), e, n, se);
            b.cv = scaled_gaussian(br.fork(7), e, n, se);
            b.co = scaled_gaussian(br.fork(8), n, n, sn);
        }
        b.w1 = scaled_gaussian(br.fork(9), n, h, sn);
        b.w2 = scaled_gaussian(br.fork(10), h, n, sh);
        b.ada_self = init_modulation(br.fork(11), cfg);
        if (cfg.cross_attention) {
            b.ada_cross = init_modulation(br.fork(12), cfg);
        }
        b.ada_mlp = init_modulation(br.fork(13), cfg);
    }
    w.time_mix = scaled_gaussian(root.fork(kTagTimeMix), e, e, se);
    w.class_table = scaled_gaussian(root.fork(kTagClassTable), kClassTableRows, e, 1.0);
    w.head = scaled_gaussian(root.fork(kTagHead), n, n, 0.25 * sn);
    return w;
}

RowVector sinusoidal_features(int t, Eigen::Index dim) {
    RowVector out(dim);
    const double base = 10000.0;
    for (Eigen::Index i = 0; i < dim; i += 2) {
        const double freq =
            std::pow(base, -static_cast<double>(i) / static_cast<double>(dim));
        out(i) = std::sin(static_cast<double>(t) * freq);
        if (i + 1 < dim) {
            out(i + 1) = std::cos(static_cast<double>(t) * freq);
        }
    }
    return out;
}

RowVector condition_embedding(const ModelWeights& w, const ConditionInfo& cond, int diffusion_t) {
    const Eigen::Index e = w.config.cond_dim;
    RowVector time_part = sinusoidal_features(diffusion_t, e) * w.time_mix;
    const Eigen::Index rows = w.class_table.rows();
    const Eigen::Index row = ((cond.class_id % rows) + rows) % rows;
    return time_part + w.class_table.row(row);
}

FeatureTensor prompt_matrix(const ModelConfig& cfg, int prompt_id) {
    Rng rng = Rng(kPromptDomain).fork(static_cast<std::uint64_t>(static_cast<std::int64_t>(prompt_id)));
    return gaussian_fill(rng, cfg.prompt_tokens, cfg.cond_dim);
}

FeatureTensor adaln(const FeatureRef& y, const FeatureRef& scale_row, const FeatureRef& shift_row,
                    Scalar eps) {
    if (scale_row.rows() != 1 || shift_row.rows() != 1 || scale_row.cols() != y.cols() ||
        shift_row.cols() != y.cols()) {
        throw ShapeError("adaln: modulation rows must be 1 x cols(y)");
    }
    FeatureTensor out = layer_norm_rows(y, eps);
    out.array().rowwise() *= scale_row.row(0).array();
    out.array().rowwise() += shift_row.row(0).array();
    return out;
}

Modulation modulation_rows(const ModelWeights& w, int block, SublayerKind kind,
                           const FeatureRef& cond_embed) {
    if (block < 0 || block >= w.config.depth) {
        throw ConfigError("block index out of range: " + std::to_string(block));
    }
    if (cond_embed.rows() != 1 || cond_embed.cols() != w.config.cond_dim) {
        throw ShapeError("modulation_rows: cond_embed must be 1 x cond_dim");
    }
    const ModulationMaps& maps = maps_for(w.blocks[static_cast<std::size_t>(block)], kind);
    Modulation m;
    m.scale = RowVector::Ones(w.config.channels) + (cond_embed * maps.scale).row(0);
    m.shift = cond_embed * maps.shift;
    m.gate = cond_embed * maps.gate;
    return m;
}

ForwardContext make_context(const ModelWeights& w, const ConditionInfo& cond, int diffusion_t) {
    ForwardContext ctx;
    ctx.cond_embed = condition_embedding(w, cond, diffusion_t);
    if (w.config.cross_attention) {
        ctx.prompt = prompt_matrix(w.config, cond.prompt_id);
    }
    return ctx;
}

FeatureTensor sublayer_forward(const ModelWeights& w, const SublayerId& id, const FeatureRef& x,
                               const ForwardContext& ctx) {
    if (id.block < 0 || id.block >= w.config.depth) {
        throw ConfigError("sublayer block out of range: " + std::to_string(id.block));
    }
    if (x.rows() != w.config.tokens || x.cols() != w.config.channels) {
        throw ShapeError("sublayer_forward: latent shape mismatch");
    }
    const BlockWeights& b = w.blocks[static_cast<std::size_t>(id.block)];
    switch (id.kind) {
        case SublayerKind::self_attention: {
            FeatureTensor q = x * b.wq;
            FeatureTensor k = x * b.wk;
            FeatureTensor v = x * b.wv;
            return attention(q, k, v, w.config.heads) * b.wo;
        }
        case SublayerKind::cross_attention: {
            if (!w.config.cross_attention) {
                throw ConfigError("cross attention is disabled in this model");
            }
            if (ctx.prompt.rows() != w.config.prompt_tokens ||
                ctx.prompt.cols() != w.config.cond_dim) {
                throw ShapeError("sublayer_forward: prompt shape mismatch");
            }
            FeatureTensor q = x * b.cq;
            FeatureTensor k = ctx.prompt * b.ck;
            FeatureTensor v = ctx.prompt * b.cv;
            return attention(q, k, v, w.config.heads) * b.co;
        }
        case SublayerKind::mlp: {
            return gelu(x * b.w1) * b.w2;
        }
    }
    throw ConfigError("unknown sublayer kind");
}

std::vector<SublayerKind> sublayer_kinds(const ModelConfig& cfg) {
    if (cfg.cross_attention) {
        return {SublayerKind::self_attention, SublayerKind::cross_attention, SublayerKind::mlp};
    }
    return {SublayerKind::self_attention, SublayerKind::mlp};
}

FeatureTensor block_forward(const ModelWeights& w, int block, const FeatureRef& x,
                            const ForwardContext& ctx, int gen_step, CacheInterceptor& fetch) {
    FeatureTensor cur = x;
    for (SublayerKind kind : sublayer_kinds(w.config)) {
        const SublayerId id{block, kind};
        const Modulation mod = modulation_rows(w, block, kind, ctx.cond_embed);
        FeatureTensor raw;
        if (w.config.adaln_placement == AdalnPlacement::output_side) {
            raw = fetch.on_sublayer(id, gen_step,
                                    [&] { return sublayer_forward(w, id, cur, ctx); });
        } else {
            const FeatureTensor modulated = adaln(cur, mod.scale, mod.shift);
            raw = fetch.on_sublayer(id, gen_step,
                                    [&] { return sublayer_forward(w, id, modulated, ctx); });
        }
        if (raw.rows() != cur.rows() || raw.cols() != cur.cols()) {
            throw ContractError("interceptor returned wrong shape for block " +
                                std::to_string(block) + " " + to_string(kind));
        }
        if (w.config.adaln_placement == AdalnPlacement::output_side) {
            cur += adaln(raw, mod.scale, mod.shift);
        } else {
            cur.array() += raw.array().rowwise() * mod.gate.row(0).array();
        }
    }
    return cur;
}

FeatureTensor model_forward(const ModelWeights& w, const FeatureRef& x, const ConditionInfo& cond,
                            int gen_step, int diffusion_t, CacheInterceptor& fetch) {
    if (x.rows() != w.config.tokens || x.cols() != w.config.channels) {
        throw ShapeError("model_forward: latent shape mismatch");
    }
    require_finite(x, "model_forward input");
    const ForwardContext ctx = make_context(w, cond, diffusion_t);
    FeatureTensor cur = x;
    for (int l = 0; l < w.config.depth; ++l) {
        cur = block_forward(w, l, cur, ctx, gen_step, fetch);
    }
    FeatureTensor eps = cur * w.head;
    require_finite(eps, "model_forward output");
    return eps;
}

}  // namespace gradcache
