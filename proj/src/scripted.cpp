#include "gradcache/scripted.hpp"

#include <cmath>
#include <map>
#include <utility>

namespace gradcache {

namespace {
constexpr std::uint64_t kTagPattern = 0x7000;
}

const char* to_string(ScriptFamily f) {
    switch (f) {
        case ScriptFamily::constant: return "CONST";
        case ScriptFamily::affine: return "AFFINE";
        case ScriptFamily::quadratic: return "QUADRATIC";
        case ScriptFamily::sine: return "SINE";
        case ScriptFamily::alternating: return "ALTERNATING";
    }
    return "?";
}

ScriptFamily parse_script_family(const std::string& s) {
    if (s == "CONST") return ScriptFamily::constant;
    if (s == "AFFINE") return ScriptFamily::affine;
    if (s == "QUADRATIC") return ScriptFamily::quadratic;
    if (s == "SINE") return ScriptFamily::sine;
    if (s == "ALTERNATING") return ScriptFamily::alternating;
    throw ConfigError("unknown script family: " + s);
}

void ScriptTerm::validate() const {
    if (family == ScriptFamily::sine && !(period > 0.0)) {
        throw ConfigError("sine script needs a positive period");
    }
}

void ScriptSpec::validate() const {
    if (tokens < 1 || channels < 1) {
        throw ConfigError("script shape must be positive");
    }
    if (blocks.size() < 2) {
        throw ConfigError("script depth must be >= 2");
    }
    for (const auto& block : blocks) {
        for (const auto& term : block) {
            term.validate();
        }
    }
}

double script_value(const ScriptTerm& term, int t) {
    const double td = static_cast<double>(t);
    switch (term.family) {
        case ScriptFamily::constant: return term.a;
        case ScriptFamily::affine: return term.a + term.b * td;
        case ScriptFamily::quadratic: return term.a + term.b * td + term.c * td * td;
        case ScriptFamily::sine:
            return term.a +
                   term.amplitude * std::sin(2.0 * 3.141592653589793238462643 * td / term.period);
        case ScriptFamily::alternating: return t % 2 == 0 ? term.amplitude : -term.amplitude;
    }
    throw ConfigError("unknown script family");
}

FeatureTensor script_pattern(const ScriptSpec& spec, int block) {
    if (block < 0 || block >= spec.depth()) {
        throw ConfigError("script block out of range: " + std::to_string(block));
    }
    Rng rng = Rng(spec.seed).fork(kTagPattern + static_cast<std::uint64_t>(block));
    return gaussian_fill(rng, spec.tokens, spec.channels);
}

FeatureTensor scripted_output(const ScriptSpec& spec, const SublayerId& id, int t) {
    if (id.block < 0 || id.block >= spec.depth()) {
        throw ConfigError("script block out of range: " + std::to_string(id.block));
    }
    const ScriptTerm& term = spec.blocks[static_cast<std::size_t>(id.block)]
                                        [static_cast<std::size_t>(static_cast<int>(id.kind))];
    return script_value(term, t) * script_pattern(spec, id.block);
}

ScriptedModel::ScriptedModel(ScriptSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
}

std::vector<SublayerKind> ScriptedModel::sublayer_kinds() const {
    if (spec_.cross_attention) {
        return {SublayerKind::self_attention, SublayerKind::cross_attention, SublayerKind::mlp};
    }
    return {SublayerKind::self_attention, SublayerKind::mlp};
}

FeatureTensor ScriptedModel::forward(const FeatureRef& x, const ConditionInfo&, int gen_step, int,
                                     CacheInterceptor& fetch) const {
    if (x.rows() != spec_.tokens || x.cols() != spec_.channels) {
        throw ShapeError("scripted forward: latent shape mismatch");
    }
    for (int l = 0; l < spec_.depth(); ++l) {
        for (SublayerKind kind : sublayer_kinds()) {
            const SublayerId id{l, kind};
            FeatureTensor out =
                fetch.on_sublayer(id, gen_step, [&] { return scripted_output(spec_, id, gen_step); });
            if (out.rows() != spec_.tokens || out.cols() != spec_.channels) {
                throw ContractError("interceptor returned wrong shape for scripted block " +
                                    std::to_string(l));
            }
        }
    }
    return FeatureTensor::Zero(spec_.tokens, spec_.channels);
}

std::vector<ExactErrorRow> exact_cache_errors(const ScriptSpec& spec,
                                              const CacheSchedule& schedule,
                                              const GcConfig& cfg) {
    spec.validate();
    cfg.validate();
    schedule.validate(cfg.reuse_limit);
    for (const auto& e : schedule.entries) {
        if (e.action == StepAction::skip && e.strategy == ReuseStrategy::policy_decided) {
            throw ConfigError("exact_cache_errors: policy-decided entries are not supported");
        }
    }

    std::vector<SublayerKind> kinds;
    if (spec.cross_attention) {
        kinds = {SublayerKind::self_attention, SublayerKind::cross_attention, SublayerKind::mlp};
    } else {
        kinds = {SublayerKind::self_attention, SublayerKind::mlp};
    }

    std::map<std::pair<int, int>, ExactErrorRow> cells;  // (step, block) -> summed row
    for (int block = 0; block < spec.depth(); ++block) {
        const double mass = l1_total(script_pattern(spec, block));

        for (SublayerKind kind : kinds) {
            const ScriptTerm& term = spec.blocks[static_cast<std::size_t>(block)]
                                                [static_cast<std::size_t>(static_cast<int>(kind))];
            // effective-value recursion replicated on scalar factors: one
            // factor per step; reuse pushes the consumed factor
            double eff_prev = 0.0;
            double eff_curr = 0.0;
            int depth = 0;
            for (const auto& entry : schedule.entries) {
                const int t = entry.step;
                const double g_t = script_value(term, t);
                if (entry.action == StepAction::compute) {
                    eff_prev = eff_curr;
                    eff_curr = g_t;
                    depth = depth < 2 ? depth + 1 : 2;
                    continue;
                }
                ReuseStrategy resolved = entry.strategy;
                if (resolved == ReuseStrategy::gradient && depth < 2) {
                    resolved = ReuseStrategy::normal;
                }
                const double eff = resolved == ReuseStrategy::gradient
                                       ? eff_curr + cfg.eta * (eff_curr - eff_prev)
                                       : eff_curr;

                // one-step exact history errors
                const double g_prev1 = script_value(term, t - 1);
                const double g_prev2 = script_value(term, t - 2);
                const double single_normal = std::abs(g_t - g_prev1) * mass;
                double single_applied = single_normal;
                if (resolved == ReuseStrategy::gradient) {
                    const double predicted = g_prev1 + cfg.eta * (g_prev1 - g_prev2);
                    single_applied = std::abs(g_t - predicted) * mass;
                }

                ExactErrorRow& row = cells[{t, block}];
                row.step = t;
                row.block = block;
                row.resolved = resolved;
                row.single_normal += single_normal;
                row.single_applied += single_applied;
                row.effective += std::abs(eff - g_t) * mass;

                eff_prev = eff_curr;
                eff_curr = eff;
                depth = depth < 2 ? depth + 1 : 2;
            }
        }
    }

    std::vector<ExactErrorRow> rows;
    rows.reserve(cells.size());
    for (const auto& [key, row] : cells) {
        rows.push_back(row);
    }
    return rows;
}

}  // namespace gradcache
