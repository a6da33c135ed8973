#include "gradcache/policy.hpp"

#include <cmath>
#include <utility>

#include "gradcache/text.hpp"

namespace gradcache {

const char* to_string(PositionSense s) {
    return s == PositionSense::descending ? "descending" : "ascending";
}

PositionSense position_sense_from_string(const std::string& s) {
    if (s == "descending") {
        return PositionSense::descending;
    }
    if (s == "ascending") {
        return PositionSense::ascending;
    }
    throw ConfigError("unknown position sense: '" + s + "'");
}

double negative_impact(int step, int step_count, double n, double gamma, PositionSense sense) {
    if (step_count < 1 || step < 1 || step > step_count) {
        throw DomainError("impact score needs 1 <= step <= step_count");
    }
    if (!(gamma >= 0.0 && gamma <= 1.0)) {
        throw DomainError("impact weight must lie in [0, 1]");
    }
    if (!(n >= 0.0) || !std::isfinite(n)) {
        throw DomainError("impact score needs a finite count term >= 0");
    }
    const double frac = static_cast<double>(step) / static_cast<double>(step_count);
    const double w = sense == PositionSense::descending ? 1.0 - frac : frac;
    return gamma * w + (1.0 - gamma) * n;
}

void GodConfig::validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) {
        throw ConfigError("gamma must lie in [0, 1]");
    }
    if (!std::isfinite(threshold)) {
        throw ConfigError("threshold must be finite");
    }
}

GodPolicy::GodPolicy(GodConfig cfg, StatsTable stats) : cfg_(cfg), stats_(std::move(stats)) {
    cfg_.validate();
    if (stats_.step_count < 1 || stats_.depth < 1) {
        throw StatsError("policy needs populated statistics");
    }
}

double GodPolicy::b_value(int step) const {
    const double n = cfg_.normalize_counts ? stats_.fraction_at(step)
                                           : static_cast<double>(stats_.count_at(step));
    return negative_impact(step, stats_.step_count, n, cfg_.gamma, cfg_.position_sense);
}

ReuseStrategy GodPolicy::decide(int step) const {
    return b_value(step) < cfg_.threshold ? ReuseStrategy::gradient : ReuseStrategy::normal;
}

const PlanRow& StrategyPlan::at_step(int step) const {
    for (const PlanRow& row : rows) {
        if (row.step == step) {
            return row;
        }
    }
    throw ConfigError("plan has no row for the requested step");
}

bool StrategyPlan::covers(int step) const {
    for (const PlanRow& row : rows) {
        if (row.step == step) {
            return true;
        }
    }
    return false;
}

std::string StrategyPlan::to_text() const {
    std::string out = "step,action,resolved_strategy,B_value\n";
    for (const PlanRow& row : rows) {
        out += std::to_string(row.step);
        out += ',';
        out += to_string(row.action);
        out += ',';
        out += to_string(row.resolved);
        out += ',';
        if (row.has_b) {
            out += format_double(row.b);
        }
        out += '\n';
    }
    return out;
}

StrategyPlan StrategyPlan::from_text(const std::string& text) {
    StrategyPlan plan;
    bool first = true;
    for (const std::string& line : data_lines(text)) {
        if (first && line.rfind("step,", 0) == 0) {
            first = false;
            continue;  // header
        }
        first = false;
        const auto fields = split_fields(line);
        if (fields.size() != 4) {
            throw ConfigError("plan row needs 4 fields: '" + line + "'");
        }
        PlanRow row;
        row.step = parse_int(fields[0]);
        if (fields[1] != "SKIP") {
            throw ConfigError("plan rows describe skip steps only");
        }
        row.action = StepAction::skip;
        if (fields[2] == "NORMAL") {
            row.resolved = ReuseStrategy::normal;
        } else if (fields[2] == "GC") {
            row.resolved = ReuseStrategy::gradient;
        } else {
            throw ConfigError("plan strategy must be NORMAL or GC, got '" + fields[2] + "'");
        }
        if (!fields[3].empty()) {
            row.has_b = true;
            row.b = parse_double(fields[3]);
        }
        plan.rows.push_back(row);
    }
    return plan;
}

StrategyPlan build_plan(const CacheSchedule& schedule, const GodPolicy& policy) {
    if (schedule.step_count() != policy.stats().step_count) {
        throw ConfigError("schedule length disagrees with the profiled statistics");
    }
    StrategyPlan plan;
    for (const ScheduleEntry& entry : schedule.entries) {
        if (entry.action != StepAction::skip) {
            continue;
        }
        PlanRow row;
        row.step = entry.step;
        row.action = StepAction::skip;
        if (entry.strategy == ReuseStrategy::policy_decided) {
            row.resolved = policy.decide(entry.step);
            row.has_b = true;
            row.b = policy.b_value(entry.step);
        } else {
            row.resolved = entry.strategy;
            row.has_b = false;
        }
        plan.rows.push_back(row);
    }
    return plan;
}

CacheSchedule apply_plan(const CacheSchedule& schedule, const StrategyPlan& plan) {
    CacheSchedule out = schedule;
    std::size_t used = 0;
    for (ScheduleEntry& entry : out.entries) {
        if (entry.action != StepAction::skip) {
            continue;
        }
        const PlanRow& row = plan.at_step(entry.step);
        if (row.resolved == ReuseStrategy::policy_decided) {
            throw ConfigError("plan rows must be resolved");
        }
        entry.strategy = row.resolved;
        ++used;
    }
    if (used != plan.rows.size()) {
        throw ConfigError("plan rows do not match the schedule's skip steps");
    }
    return out;
}

}  // namespace gradcache
