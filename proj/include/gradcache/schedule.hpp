#pragma once

#include <string>
#include <vector>

#include "gradcache/errors.hpp"

namespace gradcache {

enum class StepAction { compute, skip };

enum class ReuseStrategy {
    normal,          // hold the most recent effective feature
    gradient,        // first-order extrapolation from the two most recent
    policy_decided,  // resolved per step by the gating policy
};

const char* to_string(StepAction a);
const char* to_string(ReuseStrategy s);
StepAction parse_step_action(const std::string& s);
ReuseStrategy parse_reuse_strategy(const std::string& s);

struct ScheduleEntry {
    int step = 0;
    StepAction action = StepAction::compute;
    // meaningful only when action == skip
    ReuseStrategy strategy = ReuseStrategy::normal;
    friend bool operator==(const ScheduleEntry&, const ScheduleEntry&) = default;
};

// Per-step plan of which generation steps run the sublayers and which reuse.
struct CacheSchedule {
    std::vector<ScheduleEntry> entries;  // entries[i].step == i + 1

    int step_count() const { return static_cast<int>(entries.size()); }
    const ScheduleEntry& at_step(int step) const;
    int skip_count() const;

    // step 1 must compute; runs of consecutive skips are capped by reuse_limit
    void validate(int reuse_limit = 1) const;

    // line-oriented "step,action,strategy" rows; compute rows carry "-"
    std::string to_text() const;
    static CacheSchedule from_text(const std::string& text);

    friend bool operator==(const CacheSchedule&, const CacheSchedule&) = default;
};

// canned schedules for the supported cache levels (0, 25, 50)
CacheSchedule level_schedule(int step_count, int level, ReuseStrategy strategy);

}  // namespace gradcache
