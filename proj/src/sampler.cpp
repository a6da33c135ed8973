#include "gradcache/sampler.hpp"

#include <cmath>
#include <string>

namespace gradcache {

namespace {
constexpr std::uint64_t kTagInitialLatent = 0xa1;
constexpr std::uint64_t kTagStepNoise = 0xa2;
}  // namespace

NoiseSchedule make_schedule(int total_steps, double beta_start, double beta_end) {
    if (total_steps < 1) {
        throw ConfigError("noise schedule needs at least one step");
    }
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
        throw ConfigError("beta ramp must satisfy 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.total_steps = total_steps;
    s.beta.resize(total_steps);
    s.alpha.resize(total_steps);
    s.alpha_bar.resize(total_steps);
    double prod = 1.0;
    for (int t = 0; t < total_steps; ++t) {
        const double frac =
            total_steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(total_steps - 1);
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[t] = 1.0 - s.beta[t];
        prod *= s.alpha[t];
        s.alpha_bar[t] = prod;
    }
    return s;
}

double alpha_bar_at(const NoiseSchedule& sched, int t) {
    if (t == -1) {
        return 1.0;
    }
    if (t < 0 || t >= sched.total_steps) {
        throw DomainError("alpha_bar_at: t out of range: " + std::to_string(t));
    }
    return sched.alpha_bar[t];
}

FeatureTensor ddpm_step(const FeatureRef& x_t, const FeatureRef& eps, int t,
                        const NoiseSchedule& sched, const FeatureRef& noise) {
    if (t <= 0 || t >= sched.total_steps) {
        throw DomainError("ddpm_step: t must be in [1, total_steps): " + std::to_string(t));
    }
    if (x_t.rows() != eps.rows() || x_t.cols() != eps.cols() || x_t.rows() != noise.rows() ||
        x_t.cols() != noise.cols()) {
        throw ShapeError("ddpm_step: operand shapes differ");
    }
    const double a = sched.alpha[t];
    const double abar = sched.alpha_bar[t];
    const double coef = (1.0 - a) / std::sqrt(1.0 - abar);
    FeatureTensor mean = (x_t - coef * eps) / std::sqrt(a);
    return mean + std::sqrt(sched.beta[t]) * noise;
}

FeatureTensor ddim_step(const FeatureRef& x_t, const FeatureRef& eps, int t, int t_prev,
                        const NoiseSchedule& sched) {
    if (t < 0 || t >= sched.total_steps) {
        throw DomainError("ddim_step: t out of range: " + std::to_string(t));
    }
    if (t_prev >= t) {
        throw DomainError("ddim_step: t_prev must precede t");
    }
    if (t_prev < -1) {
        throw DomainError("ddim_step: t_prev out of range: " + std::to_string(t_prev));
    }
    if (x_t.rows() != eps.rows() || x_t.cols() != eps.cols()) {
        throw ShapeError("ddim_step: operand shapes differ");
    }
    const double abar_t = alpha_bar_at(sched, t);
    const double abar_p = alpha_bar_at(sched, t_prev);
    FeatureTensor x0 = (x_t - std::sqrt(1.0 - abar_t) * eps) / std::sqrt(abar_t);
    return std::sqrt(abar_p) * x0 + std::sqrt(1.0 - abar_p) * eps;
}

std::vector<int> ddim_timesteps(int total_steps, int step_count) {
    if (step_count < 1 || step_count > total_steps) {
        throw ConfigError("step_count must be in [1, total_steps]");
    }
    const int stride = total_steps / step_count;
    std::vector<int> ts(static_cast<std::size_t>(step_count));
    for (int i = 0; i < step_count; ++i) {
        ts[static_cast<std::size_t>(i)] = (step_count - 1 - i) * stride;
    }
    return ts;
}

const FeatureTensor& Trajectory::final_latent() const {
    if (latents.empty()) {
        throw ContractError("trajectory is empty");
    }
    return latents.back();
}

Trajectory sample(const Denoiser& model, const ConditionInfo& cond, const NoiseSchedule& sched,
                  const SampleParams& params, CacheInterceptor* fetch, RunRecorder* recorder) {
    std::vector<int> ts;
    if (params.stochastic) {
        // full ancestral chain: evaluate at T-1 .. 1, each step moving to t-1
        if (params.step_count != sched.total_steps - 1) {
            throw ConfigError("stochastic sampling runs the full chain: step_count must be " +
                              std::to_string(sched.total_steps - 1));
        }
        for (int t = sched.total_steps - 1; t >= 1; --t) {
            ts.push_back(t);
        }
    } else {
        ts = ddim_timesteps(sched.total_steps, params.step_count);
    }

    PassThroughInterceptor pass;
    CacheInterceptor& ic = fetch != nullptr ? *fetch : pass;
    Rng init_rng = Rng(params.noise_seed).fork(kTagInitialLatent);
    Rng noise_rng = Rng(params.noise_seed).fork(kTagStepNoise);

    Trajectory traj;
    FeatureTensor x = gaussian_fill(init_rng, model.rows(), model.cols());
    traj.initial = x;

    const int n = static_cast<int>(ts.size());
    for (int i = 1; i <= n; ++i) {
        const int t = ts[static_cast<std::size_t>(i - 1)];
        if (recorder != nullptr) {
            recorder->begin_step(i, t);
        }
        FeatureTensor eps = model.forward(x, cond, i, t, ic);
        if (params.stochastic) {
            FeatureTensor noise = gaussian_fill(noise_rng, model.rows(), model.cols());
            x = ddpm_step(x, eps, t, sched, noise);
        } else {
            const int t_prev = i < n ? ts[static_cast<std::size_t>(i)] : -1;
            x = ddim_step(x, eps, t, t_prev, sched);
        }
        require_finite(x, "sampler latent");
        traj.latents.push_back(x);
        traj.diffusion_ts.push_back(t);
        if (recorder != nullptr) {
            recorder->note_latent(i, x);
        }
    }
    return traj;
}

}  // namespace gradcache
