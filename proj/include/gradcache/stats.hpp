#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gradcache/denoiser.hpp"
#include "gradcache/errors.hpp"
#include "gradcache/sampler.hpp"
#include "gradcache/tensor.hpp"

namespace gradcache {

// Raw sublayer outputs recorded over K cache-free runs: one tensor per
// (prompt, step, sublayer). Prompts are 0-based, steps 1-based.
class FeatureLog {
public:
    FeatureLog() = default;
    FeatureLog(int prompt_count, int step_count, int depth);

    void record(int prompt, int step, const SublayerId& id, FeatureTensor value);
    const FeatureTensor& at(int prompt, int step, const SublayerId& id) const;
    bool has(int prompt, int step, const SublayerId& id) const;

    int prompt_count() const { return prompt_count_; }
    int step_count() const { return step_count_; }
    int depth() const { return depth_; }

private:
    std::size_t index(int prompt, int step, const SublayerId& id) const;

    int prompt_count_ = 0;
    int step_count_ = 0;
    int depth_ = 0;
    std::vector<std::optional<FeatureTensor>> grid_;
};

// Wraps each sublayer computation, copying its raw output into a FeatureLog.
class RecordingInterceptor : public CacheInterceptor {
public:
    RecordingInterceptor(FeatureLog& log, int prompt) : log_(log), prompt_(prompt) {}

    FeatureTensor on_sublayer(const SublayerId& id, int step,
                              const std::function<FeatureTensor()>& compute) override;

private:
    FeatureLog& log_;
    int prompt_;
};

struct ProfileParams {
    int step_count = 20;
    std::uint64_t seed = 0;  // per-prompt noise seeds are derived from this
    ProfileParams() = default;
    ProfileParams(int steps, std::uint64_t s) : step_count(steps), seed(s) {}
};

// Runs the sampler once per prompt with caching disabled and collects every
// raw sublayer output. Deterministic given (seed, prompts).
FeatureLog profile(Denoiser& model, const NoiseSchedule& sched,
                   const std::vector<ConditionInfo>& prompts, const ProfileParams& params);

// Elementwise mean over prompts, per (step, sublayer).
class AveragedFeatures {
public:
    AveragedFeatures() = default;
    AveragedFeatures(int step_count, int depth, int prompt_count = 0);

    void set(int step, const SublayerId& id, FeatureTensor value);
    const FeatureTensor& at(int step, const SublayerId& id) const;
    bool has(int step, const SublayerId& id) const;

    int step_count() const { return step_count_; }
    int depth() const { return depth_; }
    int prompt_count() const { return prompt_count_; }

private:
    std::size_t index(int step, const SublayerId& id) const;

    int step_count_ = 0;
    int depth_ = 0;
    int prompt_count_ = 0;
    std::vector<std::optional<FeatureTensor>> grid_;
};

AveragedFeatures average_features(const FeatureLog& log);

// True when extrapolating along the recent feature gradient does not beat
// plain reuse: J(next - curr) <= J(next - (curr + eta*(curr - prev))) with
// J the elementwise absolute sum. Ties count as true.
bool is_inverse_gradient(const FeatureTensor& prev, const FeatureTensor& curr,
                         const FeatureTensor& next, double eta);

// Per-step count of blocks whose summed-over-sublayers criterion is inverse,
// plus the depth-normalized fraction. Steps 1 and 2 have no history and are 0.
struct StatsTable {
    int prompt_count = 0;  // K
    double eta = 0.0;
    int depth = 0;  // L
    int step_count = 0;
    std::vector<int> inverse_counts;        // index 0 <-> step 1
    std::vector<double> inverse_fractions;  // counts / depth
    AveragedFeatures averages;              // in-memory only, not serialized

    int count_at(int step) const;
    double fraction_at(int step) const;

    std::string to_json() const;
    static StatsTable from_json(const std::string& text);
};

StatsTable count_inverse(const AveragedFeatures& averages, double eta, int depth);

// profile + average + count in one call; eta must match the reuse eta.
StatsTable profile_stats(Denoiser& model, const NoiseSchedule& sched,
                         const std::vector<ConditionInfo>& prompts, const ProfileParams& params,
                         double eta);

}  // namespace gradcache
