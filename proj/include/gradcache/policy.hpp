#pragma once

#include <string>
#include <vector>

#include "gradcache/cache.hpp"
#include "gradcache/errors.hpp"
#include "gradcache/schedule.hpp"
#include "gradcache/stats.hpp"

namespace gradcache {

// Direction of the step-position weight: descending scores early steps high
// ((1 - t/T), the default), ascending scores late steps high (t/T).
enum class PositionSense { descending, ascending };

const char* to_string(PositionSense s);
PositionSense position_sense_from_string(const std::string& s);

// Convex mix of step position and the inverse-gradient fraction:
// gamma * w(t) + (1 - gamma) * n. Values of n above 1 are accepted so the
// unnormalized count can be fed through unchanged.
double negative_impact(int step, int step_count, double n, double gamma,
                       PositionSense sense = PositionSense::descending);

struct GodConfig {
    double gamma = 0.5;
    double threshold = 0.5;
    bool normalize_counts = true;  // feed N/L rather than the raw count
    PositionSense position_sense = PositionSense::descending;

    void validate() const;
};

// Gates gradient reuse per skip step: gradient extrapolation only when the
// score stays below the threshold.
class GodPolicy final : public StrategyPolicy {
public:
    GodPolicy(GodConfig cfg, StatsTable stats);

    ReuseStrategy decide(int step) const override;
    double b_value(int step) const override;

    const GodConfig& config() const { return cfg_; }
    const StatsTable& stats() const { return stats_; }

private:
    GodConfig cfg_;
    StatsTable stats_;
};

// One resolved decision per skip step; compute steps never appear.
struct PlanRow {
    int step = 0;
    StepAction action = StepAction::skip;
    ReuseStrategy resolved = ReuseStrategy::normal;
    bool has_b = false;  // only policy-decided rows carry a score
    double b = 0.0;
};

struct StrategyPlan {
    std::vector<PlanRow> rows;

    const PlanRow& at_step(int step) const;
    bool covers(int step) const;

    std::string to_text() const;  // step,action,resolved_strategy,B_value
    static StrategyPlan from_text(const std::string& text);
};

// Resolves every policy-decided skip in the schedule via the policy; entries
// already pinned to normal/gradient pass through without a score.
StrategyPlan build_plan(const CacheSchedule& schedule, const GodPolicy& policy);

// Applies a plan back onto a schedule, pinning each skip to its resolved
// strategy so a run can replay the exact decisions.
CacheSchedule apply_plan(const CacheSchedule& schedule, const StrategyPlan& plan);

}  // namespace gradcache
