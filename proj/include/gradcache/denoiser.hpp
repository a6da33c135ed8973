#pragma once

#include <compare>
#include <functional>
#include <vector>

#include "gradcache/tensor.hpp"

namespace gradcache {

enum class SublayerKind { self_attention = 0, cross_attention = 1, mlp = 2 };

const char* to_string(SublayerKind k);

struct SublayerId {
    int block = 0;
    SublayerKind kind = SublayerKind::self_attention;
    friend auto operator<=>(const SublayerId&, const SublayerId&) = default;
};

// dense key for per-sublayer tables
inline int slot_index(const SublayerId& id) {
    return id.block * 3 + static_cast<int>(id.kind);
}

struct ConditionInfo {
    int class_id = 0;
    int prompt_id = 0;
};

// Seam between the model and the caching layer. The model wraps every raw
// sublayer evaluation in a closure and hands it over; the interceptor either
// runs it or substitutes a cached value. `step` counts 1..N in generation
// order. Modulation and residual adds stay inside the model.
class CacheInterceptor {
  public:
    virtual ~CacheInterceptor() = default;
    virtual FeatureTensor on_sublayer(const SublayerId& id, int step,
                                      const std::function<FeatureTensor()>& compute) = 0;
};

class PassThroughInterceptor final : public CacheInterceptor {
  public:
    FeatureTensor on_sublayer(const SublayerId&, int,
                              const std::function<FeatureTensor()>& compute) override {
        return compute();
    }
};

// Anything the sampler can drive: predicts eps for the current latent.
// `gen_step` counts 1..N in generation order, `diffusion_t` indexes the
// noise schedule.
class Denoiser {
  public:
    virtual ~Denoiser() = default;
    virtual Eigen::Index rows() const = 0;
    virtual Eigen::Index cols() const = 0;
    virtual int depth() const = 0;
    virtual std::vector<SublayerKind> sublayer_kinds() const = 0;
    virtual FeatureTensor forward(const FeatureRef& x, const ConditionInfo& cond, int gen_step,
                                  int diffusion_t, CacheInterceptor& fetch) const = 0;
};

}  // namespace gradcache
