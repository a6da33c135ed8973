#include "gradcache/flops.hpp"

#include "gradcache/errors.hpp"

namespace gradcache {

namespace {

std::uint64_t u(Eigen::Index v) { return static_cast<std::uint64_t>(v); }
std::uint64_t u(int v) { return static_cast<std::uint64_t>(v); }

}  // namespace

std::uint64_t sublayer_compute_flops(const ModelConfig& cfg, SublayerKind kind) {
    const std::uint64_t m = u(cfg.tokens);
    const std::uint64_t n = u(cfg.channels);
    const std::uint64_t p = u(cfg.prompt_tokens);
    const std::uint64_t e = u(cfg.cond_dim);
    const std::uint64_t h = u(cfg.mlp_hidden());
    switch (kind) {
        case SublayerKind::self_attention:
            // q,k,v,out projections (4 * 2mn^2) + scores and weighted sum (2 * 2m^2 n)
            return 8 * m * n * n + 4 * m * m * n;
        case SublayerKind::cross_attention:
            // q and out on tokens, k/v from the prompt, scores over p keys
            return 4 * m * n * n + 4 * m * p * n + 4 * p * e * n;
        case SublayerKind::mlp:
            // up and down projections through the hidden width
            return 4 * m * n * h;
    }
    return 0;
}

std::uint64_t sublayer_reuse_flops(const ModelConfig& cfg, ReuseStrategy resolved) {
    switch (resolved) {
        case ReuseStrategy::normal:
            return 0;
        case ReuseStrategy::gradient:
            return 2 * u(cfg.tokens) * u(cfg.channels);
        case ReuseStrategy::policy_decided:
            throw ConfigError("cost model needs resolved reuse strategies");
    }
    return 0;
}

std::uint64_t step_overhead_flops(const ModelConfig& cfg) {
    const std::uint64_t m = u(cfg.tokens);
    const std::uint64_t n = u(cfg.channels);
    const std::uint64_t e = u(cfg.cond_dim);
    const int kinds = cfg.cross_attention ? 3 : 2;
    // per sublayer: layer norm (5mn), modulate (2mn), residual (mn),
    // and the two modulation maps (2 * 2en); the gated variant adds a third
    // map and the elementwise gate
    std::uint64_t per_sublayer = 8 * m * n + 4 * e * n;
    if (cfg.adaln_placement == AdalnPlacement::input_gated) {
        per_sublayer += m * n + 2 * e * n;
    }
    // conditioning mix (2e^2) once, output projection (2mn^2) once
    return u(cfg.depth) * u(kinds) * per_sublayer + 2 * e * e + 2 * m * n * n;
}

double FlopsReport::sublayer_speedup() const {
    if (sublayer_total == 0) {
        return 1.0;
    }
    return static_cast<double>(baseline_sublayer_total) / static_cast<double>(sublayer_total);
}

double FlopsReport::total_speedup() const {
    if (total == 0) {
        return 1.0;
    }
    return static_cast<double>(baseline_total) / static_cast<double>(total);
}

FlopsReport flops_count(const ModelConfig& cfg, const CacheSchedule& schedule) {
    cfg.validate();
    const int kinds = cfg.cross_attention ? 3 : 2;
    std::uint64_t compute_step = 0;  // all sublayers evaluated
    for (int k = 0; k < 3; ++k) {
        const auto kind = static_cast<SublayerKind>(k);
        if (kind == SublayerKind::cross_attention && kinds == 2) {
            continue;
        }
        compute_step += u(cfg.depth) * sublayer_compute_flops(cfg, kind);
    }
    const std::uint64_t overhead = step_overhead_flops(cfg);

    FlopsReport report;
    for (const ScheduleEntry& entry : schedule.entries) {
        StepFlops row;
        row.step = entry.step;
        row.overhead = overhead;
        if (entry.action == StepAction::compute) {
            row.sublayer = compute_step;
        } else {
            row.sublayer =
                u(cfg.depth) * u(kinds) * sublayer_reuse_flops(cfg, entry.strategy);
        }
        row.total = row.sublayer + row.overhead;
        report.per_step.push_back(row);
        report.sublayer_total += row.sublayer;
        report.overhead_total += row.overhead;
        report.total += row.total;
        report.baseline_sublayer_total += compute_step;
        report.baseline_total += compute_step + overhead;
    }
    return report;
}

}  // namespace gradcache
