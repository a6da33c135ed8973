#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include "gradcache/errors.hpp"
#include "gradcache/policy.hpp"
#include "gradcache/rng.hpp"
#include "gradcache/schedule.hpp"

using namespace gradcache;

namespace {

StatsTable synthetic_stats(int step_count, int depth, const std::vector<double>& fractions) {
    StatsTable st;
    st.prompt_count = 1;
    st.eta = 1.2;
    st.depth = depth;
    st.step_count = step_count;
    st.inverse_fractions = fractions;
    st.inverse_counts.resize(fractions.size());
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        st.inverse_counts[i] = static_cast<int>(std::lround(fractions[i] * depth));
    }
    return st;
}

}  // namespace

TEST_CASE("negative impact matches the worked example") {
    CHECK(negative_impact(10, 20, 0.3, 0.5) == doctest::Approx(0.40).epsilon(1e-15));
}

TEST_CASE("negative impact honors its endpoints") {
    // Full weight on position: the last step scores zero.
    CHECK(negative_impact(20, 20, 0.9, 1.0) == 0.0);
    // No weight on position: the count term passes through.
    CHECK(negative_impact(7, 20, 0.35, 0.0) == 0.35);
    // Counts above one are legal so the raw count can be fed in.
    CHECK(negative_impact(5, 10, 3.0, 0.5) == doctest::Approx(0.25 + 1.5).epsilon(1e-15));
}

TEST_CASE("negative impact is monotone in position and count") {
    for (int t = 1; t < 20; ++t) {
        CHECK(negative_impact(t, 20, 0.4, 0.7) > negative_impact(t + 1, 20, 0.4, 0.7));
        CHECK(negative_impact(t, 20, 0.4, 0.7, PositionSense::ascending) <
              negative_impact(t + 1, 20, 0.4, 0.7, PositionSense::ascending));
    }
    for (double n : {0.0, 0.2, 0.4, 0.8}) {
        CHECK(negative_impact(5, 20, n, 0.5) < negative_impact(5, 20, n + 0.1, 0.5));
    }
}

TEST_CASE("negative impact rejects out-of-domain inputs") {
    CHECK_THROWS_AS(negative_impact(0, 20, 0.5, 0.5), DomainError);
    CHECK_THROWS_AS(negative_impact(21, 20, 0.5, 0.5), DomainError);
    CHECK_THROWS_AS(negative_impact(5, 0, 0.5, 0.5), DomainError);
    CHECK_THROWS_AS(negative_impact(5, 20, 0.5, -0.1), DomainError);
    CHECK_THROWS_AS(negative_impact(5, 20, 0.5, 1.1), DomainError);
    CHECK_THROWS_AS(negative_impact(5, 20, -0.1, 0.5), DomainError);
    CHECK_THROWS_AS(negative_impact(5, 20, std::numeric_limits<double>::infinity(), 0.5),
                    DomainError);
}

TEST_CASE("position sense names round-trip") {
    CHECK(position_sense_from_string(to_string(PositionSense::descending)) ==
          PositionSense::descending);
    CHECK(position_sense_from_string(to_string(PositionSense::ascending)) ==
          PositionSense::ascending);
    CHECK_THROWS_AS(position_sense_from_string("sideways"), ConfigError);
}

TEST_CASE("gate config validation") {
    GodConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.threshold = 2.0;  // thresholds outside [0, 1] are meaningful overrides
    CHECK_NOTHROW(cfg.validate());
    cfg.threshold = std::nan("");
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = GodConfig{};
    cfg.gamma = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.gamma = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("the gate rejects empty statistics") {
    GodConfig cfg;
    StatsTable empty;
    CHECK_THROWS_AS(GodPolicy(cfg, empty), StatsError);
}

TEST_CASE("a spiked fraction flips one step to a hold") {
    std::vector<double> fractions(20, 0.0);
    fractions[2] = 0.9;  // step 3
    const StatsTable st = synthetic_stats(20, 10, fractions);

    GodConfig cfg;
    cfg.gamma = 0.3;
    cfg.threshold = 0.5;
    const GodPolicy policy(cfg, st);

    CHECK(policy.b_value(3) == doctest::Approx(0.885).epsilon(1e-12));
    CHECK(policy.decide(3) == ReuseStrategy::normal);
    CHECK(policy.b_value(4) == doctest::Approx(0.24).epsilon(1e-12));
    CHECK(policy.decide(4) == ReuseStrategy::gradient);
}

TEST_CASE("gate decisions match a brute-force evaluation") {
    Rng rng(515);
    std::vector<double> fractions(20);
    for (double& f : fractions) {
        f = rng.uniform();
    }
    const StatsTable st = synthetic_stats(20, 8, fractions);

    for (double gamma : {0.0, 0.25, 0.5, 1.0}) {
        for (double threshold : {0.0, 0.3, 1.0, 2.0}) {
            GodConfig cfg;
            cfg.gamma = gamma;
            cfg.threshold = threshold;
            const GodPolicy policy(cfg, st);
            for (int t = 1; t <= 20; ++t) {
                const double w = 1.0 - static_cast<double>(t) / 20.0;
                const double b =
                    gamma * w + (1.0 - gamma) * st.inverse_fractions[static_cast<std::size_t>(t - 1)];
                CHECK(policy.b_value(t) == doctest::Approx(b).epsilon(1e-12));
                const ReuseStrategy want =
                    b < threshold ? ReuseStrategy::gradient : ReuseStrategy::normal;
                CHECK(policy.decide(t) == want);
            }
        }
    }
}

TEST_CASE("extreme thresholds pin every decision") {
    Rng rng(516);
    std::vector<double> fractions(12);
    for (double& f : fractions) {
        f = rng.uniform();
    }
    const StatsTable st = synthetic_stats(12, 6, fractions);

    GodConfig always_hold;
    always_hold.threshold = 0.0;
    const GodPolicy hold(always_hold, st);

    GodConfig always_gradient;
    always_gradient.threshold = 2.0;
    const GodPolicy grad(always_gradient, st);

    for (int t = 1; t <= 12; ++t) {
        CHECK(hold.decide(t) == ReuseStrategy::normal);
        CHECK(grad.decide(t) == ReuseStrategy::gradient);
    }
}

TEST_CASE("unnormalized counts feed the raw tallies through") {
    std::vector<double> fractions = {0.0, 0.0, 0.5, 1.0};
    StatsTable st = synthetic_stats(4, 4, fractions);

    GodConfig cfg;
    cfg.gamma = 0.5;
    cfg.normalize_counts = false;
    const GodPolicy policy(cfg, st);
    // Raw count at step 4 is 4; w = 0, so B = 0.5 * 0 + 0.5 * 4 = 2.
    CHECK(policy.b_value(4) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(policy.decide(4) == ReuseStrategy::normal);
}

TEST_CASE("plans resolve policy placeholders and pass pinned entries through") {
    std::vector<double> fractions(10, 0.0);
    fractions[5] = 1.0;  // step 6 scores high
    const StatsTable st = synthetic_stats(10, 5, fractions);
    GodConfig cfg;
    cfg.gamma = 0.3;
    cfg.threshold = 0.5;
    const GodPolicy policy(cfg, st);

    const CacheSchedule schedule = level_schedule(10, 50, ReuseStrategy::policy_decided);
    const StrategyPlan plan = build_plan(schedule, policy);
    REQUIRE(plan.rows.size() == 5);
    for (const PlanRow& row : plan.rows) {
        CHECK(row.action == StepAction::skip);
        CHECK(row.has_b);
        CHECK(row.resolved == policy.decide(row.step));
        CHECK(row.b == doctest::Approx(policy.b_value(row.step)).epsilon(1e-15));
        CHECK(plan.covers(row.step));
    }
    CHECK(plan.at_step(6).resolved == ReuseStrategy::normal);
    CHECK_FALSE(plan.covers(3));
    CHECK_THROWS_AS(plan.at_step(3), ConfigError);

    // Entries already pinned to a concrete strategy carry no score.
    const CacheSchedule pinned = level_schedule(10, 50, ReuseStrategy::gradient);
    const StrategyPlan passthrough = build_plan(pinned, policy);
    for (const PlanRow& row : passthrough.rows) {
        CHECK_FALSE(row.has_b);
        CHECK(row.resolved == ReuseStrategy::gradient);
    }

    // The statistics must cover exactly the schedule's steps.
    const CacheSchedule longer = level_schedule(12, 50, ReuseStrategy::policy_decided);
    CHECK_THROWS_AS(build_plan(longer, policy), ConfigError);
}

TEST_CASE("applying a plan pins every skip and rejects mismatches") {
    std::vector<double> fractions(8, 0.2);
    const StatsTable st = synthetic_stats(8, 5, fractions);
    const GodPolicy policy(GodConfig{}, st);
    const CacheSchedule schedule = level_schedule(8, 50, ReuseStrategy::policy_decided);
    const StrategyPlan plan = build_plan(schedule, policy);

    const CacheSchedule applied = apply_plan(schedule, plan);
    CHECK(applied.step_count() == schedule.step_count());
    for (const ScheduleEntry& e : applied.entries) {
        if (e.action == StepAction::skip) {
            CHECK(e.strategy == plan.at_step(e.step).resolved);
            CHECK(e.strategy != ReuseStrategy::policy_decided);
        }
    }
    CHECK_NOTHROW(applied.validate());

    StrategyPlan missing = plan;
    missing.rows.pop_back();
    CHECK_THROWS_AS(apply_plan(schedule, missing), ConfigError);

    StrategyPlan extra = plan;
    PlanRow stray;
    stray.step = 7;  // a compute step; never consumed
    extra.rows.push_back(stray);
    CHECK_THROWS_AS(apply_plan(schedule, extra), ConfigError);

    StrategyPlan unresolved = plan;
    unresolved.rows[0].resolved = ReuseStrategy::policy_decided;
    CHECK_THROWS_AS(apply_plan(schedule, unresolved), ConfigError);
}

TEST_CASE("plans round-trip as text") {
    StrategyPlan plan;
    PlanRow scored;
    scored.step = 2;
    scored.resolved = ReuseStrategy::gradient;
    scored.has_b = true;
    scored.b = 0.30000000000000004;  // survives the round-trip bit-exactly
    plan.rows.push_back(scored);
    PlanRow pinned;
    pinned.step = 4;
    pinned.resolved = ReuseStrategy::normal;
    pinned.has_b = false;
    plan.rows.push_back(pinned);

    const std::string text = plan.to_text();
    CHECK(text.rfind("step,action,resolved_strategy,B_value\n", 0) == 0);

    const StrategyPlan back = StrategyPlan::from_text(text);
    REQUIRE(back.rows.size() == 2);
    CHECK(back.rows[0].step == 2);
    CHECK(back.rows[0].resolved == ReuseStrategy::gradient);
    CHECK(back.rows[0].has_b);
    CHECK(back.rows[0].b == 0.30000000000000004);
    CHECK(back.rows[1].step == 4);
    CHECK(back.rows[1].resolved == ReuseStrategy::normal);
    CHECK_FALSE(back.rows[1].has_b);
    CHECK(back.to_text() == text);

    CHECK_THROWS_AS(StrategyPlan::from_text("2,COMPUTE,GC,0.5\n"), ConfigError);
    CHECK_THROWS_AS(StrategyPlan::from_text("2,SKIP,GOC,0.5\n"), ConfigError);
    CHECK_THROWS_AS(StrategyPlan::from_text("2,SKIP,GC\n"), ConfigError);
    CHECK_THROWS_AS(StrategyPlan::from_text("x,SKIP,GC,\n"), ConfigError);
}
