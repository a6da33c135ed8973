#pragma once

#include <map>
#include <optional>

#include "gradcache/denoiser.hpp"
#include "gradcache/recorder.hpp"
#include "gradcache/schedule.hpp"
#include "gradcache/tensor.hpp"

namespace gradcache {

struct GcConfig {
    double eta = 1.2;   // extrapolation gain
    int reuse_limit = 1;
    bool gap_normalize = false;  // divide the difference by the step gap between entries

    void validate() const;
};

// first-order extrapolation one step past `curr`
FeatureTensor gc_extrapolate(const FeatureRef& prev, const FeatureRef& curr, double eta);

struct CacheEntry {
    int step = 0;
    FeatureTensor value;
};

// Per-sublayer queue of the two most recent effective features. Every step
// pushes exactly one entry per touched sublayer: the computed value, the
// copied value of a plain reuse, or the extrapolated value. Entries therefore
// always carry consecutive step indices for consecutively touched steps.
class CacheStore {
  public:
    explicit CacheStore(int reuse_limit = 1);

    void record_compute(const SublayerId& id, int step, FeatureTensor value);

    // returns the newest entry unchanged and records it as the effective
    // feature at `step`; counts against the reuse budget
    FeatureTensor reuse_normal(const SublayerId& id, int step);

    // extrapolates from the two stored entries and records the result as the
    // effective feature at `step`; counts against the reuse budget
    FeatureTensor reuse_gc(const SublayerId& id, int step, const GcConfig& cfg);

    int history_depth(const SublayerId& id) const;       // 0, 1 or 2
    int reuses_since_compute(const SublayerId& id) const;
    const CacheEntry* newest(const SublayerId& id) const;
    const CacheEntry* older(const SublayerId& id) const;

  private:
    struct Slot {
        CacheEntry entries[2];  // entries[count-1] is newest
        int count = 0;
        int reuses = 0;
    };

    Slot& slot(const SublayerId& id) { return slots_[slot_index(id)]; }
    const Slot* find(const SublayerId& id) const;
    static void push(Slot& s, int step, FeatureTensor value);
    void charge_reuse(Slot& s, const SublayerId& id) const;

    int reuse_limit_;
    std::map<int, Slot> slots_;
};

// Per-step gate consulted for skip entries marked policy_decided.
class StrategyPolicy {
  public:
    virtual ~StrategyPolicy() = default;
    virtual ReuseStrategy decide(int step) const = 0;  // normal or gradient
    virtual double b_value(int step) const = 0;
};

// Interceptor that applies a cache schedule to a run. In shadow mode every
// skipped sublayer is also computed exactly, off the effective path, to
// measure reuse errors; shadow values never feed the trajectory.
class CacheEngine final : public CacheInterceptor {
  public:
    CacheEngine(CacheSchedule schedule, GcConfig cfg, const StrategyPolicy* policy = nullptr,
                bool shadow = false, RunRecorder* recorder = nullptr);

    FeatureTensor on_sublayer(const SublayerId& id, int step,
                              const std::function<FeatureTensor()>& compute) override;

    const CacheStore& store() const { return store_; }
    const CacheSchedule& schedule() const { return schedule_; }

  private:
    struct TruthSlot {
        FeatureTensor prev1, prev2;  // exact values at the two preceding steps
        int count = 0;
    };

    void push_truth(const SublayerId& id, const FeatureTensor& exact);

    CacheSchedule schedule_;
    GcConfig cfg_;
    const StrategyPolicy* policy_;
    bool shadow_;
    RunRecorder* recorder_;
    CacheStore store_;
    std::map<int, TruthSlot> truth_;
    int meta_step_ = 0;  // last step whose metadata was recorded
};

}  // namespace gradcache
