#pragma once

#include <cstdint>
#include <vector>

#include "gradcache/denoiser.hpp"
#include "gradcache/recorder.hpp"
#include "gradcache/tensor.hpp"

namespace gradcache {

struct NoiseSchedule {
    int total_steps = 0;  // diffusion-time resolution, not sampler steps
    Eigen::VectorXd beta;
    Eigen::VectorXd alpha;
    Eigen::VectorXd alpha_bar;  // running product of alpha
};

// linear beta ramp from beta_start to beta_end over total_steps entries
NoiseSchedule make_schedule(int total_steps, double beta_start = 1e-4, double beta_end = 0.02);

// t == -1 denotes the fully denoised endpoint and returns exactly 1.0
double alpha_bar_at(const NoiseSchedule& sched, int t);

// stochastic ancestral update: posterior mean plus sqrt(beta_t) * noise
FeatureTensor ddpm_step(const FeatureRef& x_t, const FeatureRef& eps, int t,
                        const NoiseSchedule& sched, const FeatureRef& noise);

// deterministic update: reconstruct x0, then re-noise to t_prev (t_prev < t,
// -1 allowed as the clean endpoint)
FeatureTensor ddim_step(const FeatureRef& x_t, const FeatureRef& eps, int t, int t_prev,
                        const NoiseSchedule& sched);

// descending diffusion indices visited by the deterministic sampler,
// one per generation step; uniform stride, last entry 0
std::vector<int> ddim_timesteps(int total_steps, int step_count);

struct SampleParams {
    int step_count = 20;
    std::uint64_t noise_seed = 0;
    bool stochastic = false;  // full-length ancestral chain instead of ddim
};

struct Trajectory {
    FeatureTensor initial;               // latent at the noisiest point
    std::vector<FeatureTensor> latents;  // latents[i] = x after generation step i+1
    std::vector<int> diffusion_ts;

    const FeatureTensor& final_latent() const;
};

// Runs the denoiser over the schedule in generation order (step 1 is the
// noisiest). Without `fetch` every sublayer is computed. The recorder, when
// present, receives step metadata and per-step latents.
Trajectory sample(const Denoiser& model, const ConditionInfo& cond, const NoiseSchedule& sched,
                  const SampleParams& params, CacheInterceptor* fetch = nullptr,
                  RunRecorder* recorder = nullptr);

}  // namespace gradcache
