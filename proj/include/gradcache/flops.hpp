#pragma once

#include <cstdint>
#include <vector>

#include "gradcache/model.hpp"
#include "gradcache/schedule.hpp"

namespace gradcache {

// Analytic cost model, 2*m*n*k per dense multiply. The "sublayer" column
// covers the cacheable work (attention and MLP matmuls, plus the small
// extrapolation pass when a cached tensor is reused); "overhead" covers the
// per-step work that never gets skipped (normalization, modulation maps,
// residual adds, conditioning, output projection).

// Cacheable matmul cost of one sublayer evaluation.
std::uint64_t sublayer_compute_flops(const ModelConfig& cfg, SublayerKind kind);

// Cost of serving one sublayer from cache: zero for a plain copy, one
// subtract-scale-add pass (2*m*n) for gradient extrapolation.
std::uint64_t sublayer_reuse_flops(const ModelConfig& cfg, ReuseStrategy resolved);

// Never-skipped per-step work: per-sublayer norm + modulate + residual and
// the conditioning/projection shared by the step.
std::uint64_t step_overhead_flops(const ModelConfig& cfg);

struct StepFlops {
    int step = 0;
    std::uint64_t sublayer = 0;
    std::uint64_t overhead = 0;
    std::uint64_t total = 0;
};

struct FlopsReport {
    std::vector<StepFlops> per_step;
    std::uint64_t sublayer_total = 0;
    std::uint64_t overhead_total = 0;
    std::uint64_t total = 0;
    std::uint64_t baseline_sublayer_total = 0;  // same steps, nothing skipped
    std::uint64_t baseline_total = 0;

    double sublayer_speedup() const;
    double total_speedup() const;
};

// Walks a fully resolved schedule (no policy-decided entries left) and sums
// the per-step costs for every block and sublayer kind of the model.
FlopsReport flops_count(const ModelConfig& cfg, const CacheSchedule& schedule);

}  // namespace gradcache
