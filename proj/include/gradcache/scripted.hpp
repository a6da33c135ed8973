#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gradcache/cache.hpp"
#include "gradcache/denoiser.hpp"
#include "gradcache/schedule.hpp"
#include "gradcache/tensor.hpp"

namespace gradcache {

// closed-form scalar trajectories used to script sublayer outputs
enum class ScriptFamily { constant, affine, quadratic, sine, alternating };

const char* to_string(ScriptFamily f);
ScriptFamily parse_script_family(const std::string& s);

struct ScriptTerm {
    ScriptFamily family = ScriptFamily::constant;
    double a = 0.0;          // constant / affine / quadratic offset, sine midline
    double b = 0.0;          // affine / quadratic slope
    double c = 0.0;          // quadratic curvature
    double amplitude = 0.0;  // sine / alternating
    double period = 8.0;     // sine

    void validate() const;
};

// one term per sublayer kind, indexed by static_cast<int>(kind)
using BlockScript = std::array<ScriptTerm, 3>;

struct ScriptSpec {
    Eigen::Index tokens = 8;
    Eigen::Index channels = 8;
    bool cross_attention = false;
    std::uint64_t seed = 0;
    std::vector<BlockScript> blocks;

    int depth() const { return static_cast<int>(blocks.size()); }
    void validate() const;
};

// scalar factor f(t) for a term
double script_value(const ScriptTerm& term, int t);

// fixed seeded pattern matrix shared by a block's sublayers
FeatureTensor script_pattern(const ScriptSpec& spec, int block);

// f(t) * pattern(block): the exact raw sublayer output at step t
FeatureTensor scripted_output(const ScriptSpec& spec, const SublayerId& id, int t);

// Drop-in denoiser whose sublayer outputs are closed-form functions of the
// step index alone; the returned eps is zero so the latent trajectory never
// feeds back. Runs over it exercise cache plumbing and statistics only.
class ScriptedModel final : public Denoiser {
  public:
    explicit ScriptedModel(ScriptSpec spec);

    Eigen::Index rows() const override { return spec_.tokens; }
    Eigen::Index cols() const override { return spec_.channels; }
    int depth() const override { return spec_.depth(); }
    std::vector<SublayerKind> sublayer_kinds() const override;
    FeatureTensor forward(const FeatureRef& x, const ConditionInfo& cond, int gen_step,
                          int diffusion_t, CacheInterceptor& fetch) const override;

    const ScriptSpec& spec() const { return spec_; }

  private:
    ScriptSpec spec_;
};

// closed-form reuse errors for one (skip step, block) cell
struct ExactErrorRow {
    int step = 0;
    int block = 0;
    ReuseStrategy resolved = ReuseStrategy::normal;  // after the cold-start hold
    double single_normal = 0.0;   // J(g(t) - g(t-1)), exact one-step history
    double single_applied = 0.0;  // J of the resolved strategy against exact history
    double effective = 0.0;       // J(effective(t) - g(t)) replaying the queue recursion
};

// Analytic counterpart of a shadow-mode run over the scripted model: per skip
// step and block, the one-step-history errors and the replayed effective
// error, summed over the block's sublayers. Schedules with policy-decided
// entries are not supported here.
std::vector<ExactErrorRow> exact_cache_errors(const ScriptSpec& spec,
                                              const CacheSchedule& schedule,
                                              const GcConfig& cfg);

}  // namespace gradcache
