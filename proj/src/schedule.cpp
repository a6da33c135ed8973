#include "gradcache/schedule.hpp"

#include <sstream>

namespace gradcache {

const char* to_string(StepAction a) {
    return a == StepAction::compute ? "COMPUTE" : "SKIP";
}

const char* to_string(ReuseStrategy s) {
    switch (s) {
        case ReuseStrategy::normal: return "NORMAL";
        case ReuseStrategy::gradient: return "GC";
        case ReuseStrategy::policy_decided: return "GOC";
    }
    return "?";
}

StepAction parse_step_action(const std::string& s) {
    if (s == "COMPUTE") return StepAction::compute;
    if (s == "SKIP") return StepAction::skip;
    throw ConfigError("unknown step action: " + s);
}

ReuseStrategy parse_reuse_strategy(const std::string& s) {
    if (s == "NORMAL") return ReuseStrategy::normal;
    if (s == "GC") return ReuseStrategy::gradient;
    if (s == "GOC") return ReuseStrategy::policy_decided;
    throw ConfigError("unknown reuse strategy: " + s);
}

const ScheduleEntry& CacheSchedule::at_step(int step) const {
    if (step < 1 || step > step_count()) {
        throw ConfigError("schedule has no step " + std::to_string(step) + " (length " +
                          std::to_string(step_count()) + ")");
    }
    return entries[static_cast<std::size_t>(step - 1)];
}

int CacheSchedule::skip_count() const {
    int n = 0;
    for (const auto& e : entries) {
        n += e.action == StepAction::skip ? 1 : 0;
    }
    return n;
}

void CacheSchedule::validate(int reuse_limit) const {
    if (entries.empty()) {
        throw ConfigError("schedule is empty");
    }
    if (reuse_limit < 1) {
        throw ConfigError("reuse_limit must be >= 1");
    }
    for (int i = 0; i < step_count(); ++i) {
        if (entries[static_cast<std::size_t>(i)].step != i + 1) {
            throw ConfigError("schedule steps must be consecutive starting at 1");
        }
    }
    if (entries.front().action != StepAction::compute) {
        throw ConfigError("step 1 must be COMPUTE: nothing exists to reuse yet");
    }
    int run = 0;
    for (const auto& e : entries) {
        run = e.action == StepAction::skip ? run + 1 : 0;
        if (run > reuse_limit) {
            throw ConfigError("step " + std::to_string(e.step) + ": " + std::to_string(run) +
                              " consecutive skips exceed reuse_limit " +
                              std::to_string(reuse_limit));
        }
    }
}

std::string CacheSchedule::to_text() const {
    std::string out;
    for (const auto& e : entries) {
        out += std::to_string(e.step);
        out += ',';
        out += to_string(e.action);
        out += ',';
        out += e.action == StepAction::skip ? to_string(e.strategy) : "-";
        out += '\n';
    }
    return out;
}

CacheSchedule CacheSchedule::from_text(const std::string& text) {
    CacheSchedule sched;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::istringstream row(line);
        std::string step_s, action_s, strategy_s;
        if (!std::getline(row, step_s, ',') || !std::getline(row, action_s, ',') ||
            !std::getline(row, strategy_s, ',')) {
            throw ConfigError("malformed schedule row: " + line);
        }
        ScheduleEntry e;
        try {
            e.step = std::stoi(step_s);
        } catch (const std::exception&) {
            throw ConfigError("malformed step index in schedule row: " + line);
        }
        e.action = parse_step_action(action_s);
        if (e.action == StepAction::skip) {
            e.strategy = parse_reuse_strategy(strategy_s);
        } else if (strategy_s != "-") {
            throw ConfigError("compute rows carry '-' for the strategy: " + line);
        }
        sched.entries.push_back(e);
    }
    return sched;
}

CacheSchedule level_schedule(int step_count, int level, ReuseStrategy strategy) {
    if (step_count < 1) {
        throw ConfigError("step_count must be >= 1");
    }
    if (level != 0 && level != 25 && level != 50) {
        throw ConfigError("cache level must be one of 0, 25, 50");
    }
    CacheSchedule sched;
    sched.entries.resize(static_cast<std::size_t>(step_count));
    for (int t = 1; t <= step_count; ++t) {
        auto& e = sched.entries[static_cast<std::size_t>(t - 1)];
        e.step = t;
        e.action = StepAction::compute;
        const bool even = t % 2 == 0;
        if (level == 50 && even) {
            e.action = StepAction::skip;
        } else if (level == 25 && even && t <= step_count / 2) {
            // even steps in the first half: {2,4,6,8,10} at 20 steps
            e.action = StepAction::skip;
        }
        // The strategy is meaningful only on skip rows; compute rows keep the
        // default so schedules compare equal after a text round-trip.
        if (e.action == StepAction::skip) {
            e.strategy = strategy;
        }
    }
    return sched;
}

}  // namespace gradcache
