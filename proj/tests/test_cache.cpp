#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "gradcache/cache.hpp"
#include "gradcache/errors.hpp"
#include "gradcache/model.hpp"
#include "gradcache/recorder.hpp"
#include "gradcache/rng.hpp"
#include "gradcache/sampler.hpp"
#include "gradcache/schedule.hpp"
#include "gradcache/tensor.hpp"

using namespace gradcache;

namespace {

const SublayerId kId{0, SublayerKind::self_attention};

FeatureTensor constant(Scalar v) {
    return FeatureTensor::Constant(2, 3, v);
}

Scalar max_abs_diff(const FeatureTensor& a, const FeatureTensor& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

CacheFault fault_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const CacheError& e) {
        return e.fault;
    }
    FAIL("expected a cache fault");
    return CacheFault::cold_cache;
}

ModelConfig small_config(std::uint64_t seed = 3) {
    ModelConfig cfg;
    cfg.depth = 2;
    cfg.tokens = 4;
    cfg.channels = 8;
    cfg.heads = 2;
    cfg.mlp_ratio = 2.0;
    cfg.cond_dim = 6;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("gc_extrapolate matches the worked one-dimensional example") {
    FeatureTensor prev(1, 1), curr(1, 1);
    prev << 1.0;
    curr << 1.5;
    const FeatureTensor out = gc_extrapolate(prev, curr, 1.2);
    CHECK(out(0, 0) == doctest::Approx(2.1).epsilon(1e-15));
}

TEST_CASE("gc_extrapolate degenerates cleanly") {
    Rng rng(5);
    const FeatureTensor prev = gaussian_fill(rng, 3, 4);
    const FeatureTensor curr = gaussian_fill(rng, 3, 4);

    // eta == 0 returns the current value unchanged.
    CHECK(max_abs_diff(gc_extrapolate(prev, curr, 0.0), curr) == 0.0);

    // A flat history is a fixed point for any gain.
    for (double eta : {0.0, 0.7, 3.0}) {
        CHECK(max_abs_diff(gc_extrapolate(curr, curr, eta), curr) <= 1e-12);
    }

    CHECK_THROWS_AS(gc_extrapolate(prev, curr, -0.1), DomainError);
    const FeatureTensor bad = FeatureTensor::Zero(3, 5);
    CHECK_THROWS_AS(gc_extrapolate(prev, bad, 1.0), ShapeError);
}

TEST_CASE("gc config validation") {
    GcConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.eta = -0.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = GcConfig{};
    cfg.reuse_limit = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("cache store keeps the two freshest entries in order") {
    CacheStore store;
    CHECK(store.history_depth(kId) == 0);
    CHECK(store.newest(kId) == nullptr);
    CHECK(store.older(kId) == nullptr);

    store.record_compute(kId, 1, constant(10.0));
    CHECK(store.history_depth(kId) == 1);
    CHECK(store.newest(kId)->step == 1);

    store.record_compute(kId, 2, constant(20.0));
    CHECK(store.history_depth(kId) == 2);
    CHECK(store.older(kId)->step == 1);
    CHECK(store.newest(kId)->step == 2);
    CHECK(store.newest(kId)->value(0, 0) == 20.0);

    store.record_compute(kId, 3, constant(30.0));
    CHECK(store.history_depth(kId) == 2);
    CHECK(store.older(kId)->step == 2);
    CHECK(store.newest(kId)->step == 3);

    // Steps must strictly increase per sublayer.
    CHECK(fault_of([&] { store.record_compute(kId, 3, constant(31.0)); }) ==
          CacheFault::ordering);
    CHECK(fault_of([&] { store.record_compute(kId, 2, constant(32.0)); }) ==
          CacheFault::ordering);

    // Independent sublayers keep independent queues.
    const SublayerId other{1, SublayerKind::mlp};
    CHECK(store.history_depth(other) == 0);
}

TEST_CASE("plain reuse returns the held feature and charges the budget") {
    CacheStore store;
    CHECK(fault_of([&] { store.reuse_normal(kId, 1); }) == CacheFault::cold_cache);

    store.record_compute(kId, 1, constant(7.0));
    const FeatureTensor held = store.reuse_normal(kId, 2);
    CHECK(max_abs_diff(held, constant(7.0)) == 0.0);
    CHECK(store.reuses_since_compute(kId) == 1);

    // The reused value is itself recorded as the effective feature at step 2.
    CHECK(store.newest(kId)->step == 2);
    CHECK(store.older(kId)->step == 1);
    CHECK(max_abs_diff(store.newest(kId)->value, constant(7.0)) == 0.0);

    // A second consecutive reuse exceeds the default budget.
    CHECK(fault_of([&] { store.reuse_normal(kId, 3); }) == CacheFault::reuse_limit);

    // Computing resets the budget.
    store.record_compute(kId, 3, constant(9.0));
    CHECK(store.reuses_since_compute(kId) == 0);
    CHECK_NOTHROW(store.reuse_normal(kId, 4));
}

TEST_CASE("gradient reuse extrapolates and tracks effective history") {
    CacheStore store;
    GcConfig cfg;
    cfg.eta = 1.0;

    store.record_compute(kId, 1, constant(5.0));
    CHECK(fault_of([&] { store.reuse_gc(kId, 2, cfg); }) == CacheFault::insufficient_history);

    store.record_compute(kId, 2, constant(8.0));
    const FeatureTensor extrapolated = store.reuse_gc(kId, 3, cfg);
    // 8 + 1.0 * (8 - 5) = 11
    CHECK(max_abs_diff(extrapolated, constant(11.0)) <= 1e-12);
    CHECK(store.newest(kId)->step == 3);
    CHECK(max_abs_diff(store.newest(kId)->value, extrapolated) == 0.0);
    CHECK(store.older(kId)->step == 2);

    // The budget is shared with plain reuse.
    CHECK(fault_of([&] { store.reuse_gc(kId, 4, cfg); }) == CacheFault::reuse_limit);
}

TEST_CASE("gradient reuse on a quadratic trajectory beats the plain hold") {
    // Feature g(t) = t^2 observed at t = 1, 2; true value at t = 3 is 9.
    CacheStore store;
    GcConfig cfg;
    cfg.eta = 1.0;
    store.record_compute(kId, 1, constant(1.0));
    store.record_compute(kId, 2, constant(4.0));
    const FeatureTensor guess = store.reuse_gc(kId, 3, cfg);
    CHECK(guess(0, 0) == doctest::Approx(7.0).epsilon(1e-15));
    const double gc_error = std::abs(9.0 - guess(0, 0));
    const double hold_error = std::abs(9.0 - 4.0);
    CHECK(gc_error == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(gc_error < hold_error);
}

TEST_CASE("gap normalization divides the gradient by the step spread") {
    GcConfig cfg;
    cfg.eta = 1.0;
    cfg.gap_normalize = true;

    CacheStore store;
    store.record_compute(kId, 1, constant(2.0));
    store.record_compute(kId, 3, constant(6.0));  // gap of 2
    const FeatureTensor out = store.reuse_gc(kId, 4, cfg);
    // 6 + (1.0 / 2) * (6 - 2) = 8
    CHECK(out(0, 0) == doctest::Approx(8.0).epsilon(1e-15));

    CacheStore plain_store;
    GcConfig plain = cfg;
    plain.gap_normalize = false;
    plain_store.record_compute(kId, 1, constant(2.0));
    plain_store.record_compute(kId, 3, constant(6.0));
    const FeatureTensor raw = plain_store.reuse_gc(kId, 4, plain);
    CHECK(raw(0, 0) == doctest::Approx(10.0).epsilon(1e-15));
}

TEST_CASE("reuse limits above one allow consecutive holds") {
    CacheStore store(2);
    store.record_compute(kId, 1, constant(1.0));
    CHECK_NOTHROW(store.reuse_normal(kId, 2));
    CHECK_NOTHROW(store.reuse_normal(kId, 3));
    CHECK(store.reuses_since_compute(kId) == 2);
    CHECK(fault_of([&] { store.reuse_normal(kId, 4); }) == CacheFault::reuse_limit);
}

TEST_CASE("schedules validate structure") {
    CacheSchedule s = level_schedule(20, 50, ReuseStrategy::normal);
    CHECK_NOTHROW(s.validate());
    CHECK(s.step_count() == 20);
    CHECK(s.skip_count() == 10);
    for (const auto& e : s.entries) {
        CHECK(e.action == (e.step % 2 == 0 ? StepAction::skip : StepAction::compute));
    }

    const CacheSchedule quarter = level_schedule(20, 25, ReuseStrategy::gradient);
    CHECK(quarter.skip_count() == 5);
    for (const auto& e : quarter.entries) {
        const bool should_skip = e.step % 2 == 0 && e.step <= 10;
        CHECK(e.action == (should_skip ? StepAction::skip : StepAction::compute));
        if (should_skip) {
            CHECK(e.strategy == ReuseStrategy::gradient);
        }
    }

    const CacheSchedule none = level_schedule(20, 0, ReuseStrategy::normal);
    CHECK(none.skip_count() == 0);

    const CacheSchedule odd = level_schedule(7, 50, ReuseStrategy::normal);
    CHECK(odd.skip_count() == 3);
    CHECK(odd.entries[0].action == StepAction::compute);

    CHECK_THROWS_AS(level_schedule(20, 30, ReuseStrategy::normal), ConfigError);

    CacheSchedule bad;
    CHECK_THROWS_AS(bad.validate(), ConfigError);  // empty

    bad = level_schedule(4, 0, ReuseStrategy::normal);
    bad.entries[0].action = StepAction::skip;
    CHECK_THROWS_AS(bad.validate(), ConfigError);  // step 1 must compute

    CacheSchedule run = level_schedule(4, 0, ReuseStrategy::normal);
    run.entries[1].action = StepAction::skip;
    run.entries[2].action = StepAction::skip;
    CHECK_THROWS_AS(run.validate(1), ConfigError);  // two consecutive skips
    CHECK_NOTHROW(run.validate(2));

    CacheSchedule renumbered = level_schedule(4, 0, ReuseStrategy::normal);
    renumbered.entries[2].step = 7;
    CHECK_THROWS_AS(renumbered.validate(), ConfigError);

    CHECK_THROWS_AS(s.at_step(0), ConfigError);
    CHECK_THROWS_AS(s.at_step(21), ConfigError);
    CHECK(s.at_step(2).action == StepAction::skip);
}

TEST_CASE("schedules round-trip as text") {
    for (int level : {0, 25, 50}) {
        for (ReuseStrategy strat :
             {ReuseStrategy::normal, ReuseStrategy::gradient, ReuseStrategy::policy_decided}) {
            const CacheSchedule s = level_schedule(12, level, strat);
            const CacheSchedule back = CacheSchedule::from_text(s.to_text());
            CHECK(back == s);
        }
    }

    // Comments and blank lines are tolerated.
    const CacheSchedule commented = CacheSchedule::from_text(
        "# schema=1\n\n1,COMPUTE,-\n2,SKIP,GC\n\n3,COMPUTE,-\n");
    CHECK(commented.step_count() == 3);
    CHECK(commented.at_step(2).strategy == ReuseStrategy::gradient);

    CHECK_THROWS_AS(CacheSchedule::from_text("1,COMPUTE\n"), ConfigError);
    CHECK_THROWS_AS(CacheSchedule::from_text("1,WAIT,-\n"), ConfigError);
    CHECK_THROWS_AS(CacheSchedule::from_text("1,COMPUTE,-\n2,SKIP,SOMETIMES\n"), ConfigError);
    CHECK_THROWS_AS(CacheSchedule::from_text("x,COMPUTE,-\n"), ConfigError);
}

TEST_CASE("strategy and action names round-trip") {
    CHECK(parse_step_action(to_string(StepAction::compute)) == StepAction::compute);
    CHECK(parse_step_action(to_string(StepAction::skip)) == StepAction::skip);
    CHECK(parse_reuse_strategy(to_string(ReuseStrategy::normal)) == ReuseStrategy::normal);
    CHECK(parse_reuse_strategy(to_string(ReuseStrategy::gradient)) == ReuseStrategy::gradient);
    CHECK(parse_reuse_strategy(to_string(ReuseStrategy::policy_decided)) ==
          ReuseStrategy::policy_decided);
    CHECK_THROWS_AS(parse_step_action("noop"), ConfigError);
    CHECK_THROWS_AS(parse_reuse_strategy("noop"), ConfigError);
}

TEST_CASE("an all-compute engine is a pass-through for sampling") {
    const ToyDit model(small_config(91));
    const NoiseSchedule sched = make_schedule(1000);
    SampleParams params;
    params.step_count = 8;
    params.noise_seed = 2024;

    const Trajectory plain = sample(model, ConditionInfo{2, 0}, sched, params);

    CacheEngine engine(level_schedule(8, 0, ReuseStrategy::normal), GcConfig{});
    const Trajectory cached = sample(model, ConditionInfo{2, 0}, sched, params, &engine);

    REQUIRE(plain.latents.size() == cached.latents.size());
    for (std::size_t i = 0; i < plain.latents.size(); ++i) {
        CHECK(checksum(plain.latents[i]) == checksum(cached.latents[i]));
    }
}

TEST_CASE("the engine applies an alternating plan with plain holds") {
    const int steps = 20;
    CacheEngine engine(level_schedule(steps, 50, ReuseStrategy::normal), GcConfig{});

    auto g = [](int t) { return constant(static_cast<Scalar>(t * t)); };
    int calls = 0;
    std::vector<FeatureTensor> effective;
    for (int t = 1; t <= steps; ++t) {
        FeatureTensor out = engine.on_sublayer(kId, t, [&] {
            ++calls;
            return g(t);
        });
        effective.push_back(out);
    }

    CHECK(calls == 10);  // only odd steps evaluate
    for (int t = 1; t <= steps; ++t) {
        const FeatureTensor& got = effective[static_cast<std::size_t>(t - 1)];
        const FeatureTensor want = t % 2 == 1 ? g(t) : g(t - 1);
        CHECK(max_abs_diff(got, want) == 0.0);
    }
}

TEST_CASE("the engine extrapolates on gradient skips after warm-up") {
    const int steps = 20;
    const double eta = 1.2;
    GcConfig cfg;
    cfg.eta = eta;
    RunRecorder rec;
    CacheEngine engine(level_schedule(steps, 50, ReuseStrategy::gradient), cfg, nullptr, false,
                       &rec);

    auto g = [](int t) { return constant(std::sin(0.3 * t) + 0.01 * t * t); };
    std::vector<FeatureTensor> eff;
    for (int t = 1; t <= steps; ++t) {
        FeatureTensor out = engine.on_sublayer(kId, t, [&] { return g(t); });
        eff.push_back(out);
    }

    // Manual effective recursion: computes take the fresh value; the first
    // skip has only one entry of history and degrades to a plain hold; later
    // skips extrapolate from the two stored effective features.
    std::vector<FeatureTensor> want;
    for (int t = 1; t <= steps; ++t) {
        if (t % 2 == 1) {
            want.push_back(g(t));
        } else if (t == 2) {
            want.push_back(want[0]);
        } else {
            want.push_back(lincomb(1.0 + eta, want[static_cast<std::size_t>(t - 2)], -eta,
                                   want[static_cast<std::size_t>(t - 3)]));
        }
    }
    for (int t = 1; t <= steps; ++t) {
        CHECK(max_abs_diff(eff[static_cast<std::size_t>(t - 1)],
                           want[static_cast<std::size_t>(t - 1)]) <= 1e-12);
    }

    // The cold-start fallback is reported as a plain hold.
    const StepRecord* first_skip = rec.step_record(2);
    REQUIRE(first_skip != nullptr);
    CHECK(first_skip->action == StepAction::skip);
    CHECK(first_skip->applied == ReuseStrategy::normal);
    const StepRecord* warm_skip = rec.step_record(4);
    REQUIRE(warm_skip != nullptr);
    CHECK(warm_skip->applied == ReuseStrategy::gradient);
    const StepRecord* computed = rec.step_record(3);
    REQUIRE(computed != nullptr);
    CHECK(computed->action == StepAction::compute);
    CHECK_FALSE(computed->policy_consulted);
}

TEST_CASE("a zero-gain gradient engine mirrors the plain-hold engine") {
    const int steps = 16;
    GcConfig zero_gain;
    zero_gain.eta = 0.0;
    CacheEngine gc_engine(level_schedule(steps, 50, ReuseStrategy::gradient), zero_gain);
    CacheEngine normal_engine(level_schedule(steps, 50, ReuseStrategy::normal), GcConfig{});

    Rng rng(2025);
    for (int t = 1; t <= steps; ++t) {
        const FeatureTensor v = gaussian_fill(rng, 3, 3);
        const FeatureTensor a = gc_engine.on_sublayer(kId, t, [&] { return v; });
        const FeatureTensor b = normal_engine.on_sublayer(kId, t, [&] { return v; });
        CHECK(checksum(a) == checksum(b));
    }
}

TEST_CASE("policy placeholders require a policy") {
    CacheEngine engine(level_schedule(4, 50, ReuseStrategy::policy_decided), GcConfig{});
    CHECK_NOTHROW(engine.on_sublayer(kId, 1, [] { return constant(1.0); }));
    CHECK_THROWS_AS(engine.on_sublayer(kId, 2, [] { return constant(2.0); }), ConfigError);
}

TEST_CASE("shadow mode measures errors without touching the effective path") {
    const int steps = 12;
    const double eta = 1.2;
    GcConfig cfg;
    cfg.eta = eta;

    RunRecorder rec;
    CacheEngine shadowed(level_schedule(steps, 50, ReuseStrategy::gradient), cfg, nullptr, true,
                         &rec);
    CacheEngine plain(level_schedule(steps, 50, ReuseStrategy::gradient), cfg);

    auto g = [](int t) { return constant(0.5 * t * t - 3.0 * t); };
    std::vector<FeatureTensor> eff;
    for (int t = 1; t <= steps; ++t) {
        const FeatureTensor a = shadowed.on_sublayer(kId, t, [&] { return g(t); });
        const FeatureTensor b = plain.on_sublayer(kId, t, [&] { return g(t); });
        CHECK(checksum(a) == checksum(b));  // shadow never alters the trajectory
        eff.push_back(a);
    }

    // Shadow rows appear once per skipped step for this single sublayer.
    REQUIRE(rec.shadow().size() == static_cast<std::size_t>(steps / 2));
    for (const ShadowRecord& row : rec.shadow()) {
        CHECK(row.gen_step % 2 == 0);
        CHECK(row.block == 0);
        const int t = row.gen_step;
        const double single_normal = l1_total(g(t) - g(t - 1));
        CHECK(row.single_normal == doctest::Approx(single_normal).epsilon(1e-12));
        if (t == 2) {
            // Cold start: the fallback hold is also the applied strategy.
            CHECK(row.single_applied == doctest::Approx(single_normal).epsilon(1e-12));
        } else {
            const double single_gc =
                l1_total(g(t) - gc_extrapolate(g(t - 2), g(t - 1), eta));
            CHECK(row.single_applied == doctest::Approx(single_gc).epsilon(1e-12));
        }
        const double effective =
            l1_total(eff[static_cast<std::size_t>(t - 1)] - g(t));
        CHECK(row.effective == doctest::Approx(effective).epsilon(1e-12));
    }

    // An all-compute engine in shadow mode reports no reuse errors.
    RunRecorder none_rec;
    CacheEngine none(level_schedule(steps, 0, ReuseStrategy::normal), cfg, nullptr, true,
                     &none_rec);
    for (int t = 1; t <= steps; ++t) {
        (void)none.on_sublayer(kId, t, [&] { return g(t); });
    }
    CHECK(none_rec.shadow().empty());
}

TEST_CASE("engine step records carry actions and checksums through sampling") {
    const ToyDit model(small_config(92));
    const NoiseSchedule sched = make_schedule(1000);
    SampleParams params;
    params.step_count = 10;
    params.noise_seed = 31337;

    RunRecorder rec;
    CacheEngine engine(level_schedule(10, 50, ReuseStrategy::gradient), GcConfig{}, nullptr,
                       false, &rec);
    const Trajectory traj = sample(model, ConditionInfo{}, sched, params, &engine, &rec);

    REQUIRE(rec.steps().size() == 10);
    for (const StepRecord& r : rec.steps()) {
        const bool skip = r.gen_step % 2 == 0;
        CHECK(r.action == (skip ? StepAction::skip : StepAction::compute));
        CHECK(r.latent_checksum ==
              checksum(traj.latents[static_cast<std::size_t>(r.gen_step - 1)]));
    }
}
