#include "gradcache/cache.hpp"

#include <string>

namespace gradcache {

namespace {

std::string id_text(const SublayerId& id) {
    return "block " + std::to_string(id.block) + " " + to_string(id.kind);
}

}  // namespace

void GcConfig::validate() const {
    if (eta < 0.0) {
        throw ConfigError("eta must be >= 0");
    }
    if (reuse_limit < 1) {
        throw ConfigError("reuse_limit must be >= 1");
    }
}

FeatureTensor gc_extrapolate(const FeatureRef& prev, const FeatureRef& curr, double eta) {
    if (eta < 0.0) {
        throw DomainError("gc_extrapolate: eta must be >= 0");
    }
    // curr + eta * (curr - prev), spelled as one linear combination
    return lincomb(1.0 + eta, curr, -eta, prev);
}

CacheStore::CacheStore(int reuse_limit) : reuse_limit_(reuse_limit) {
    if (reuse_limit_ < 1) {
        throw ConfigError("reuse_limit must be >= 1");
    }
}

const CacheStore::Slot* CacheStore::find(const SublayerId& id) const {
    auto it = slots_.find(slot_index(id));
    return it == slots_.end() ? nullptr : &it->second;
}

void CacheStore::push(Slot& s, int step, FeatureTensor value) {
    if (s.count > 0 && step <= s.entries[s.count - 1].step) {
        throw CacheError(CacheFault::ordering,
                         "step indices must increase: got " + std::to_string(step) + " after " +
                             std::to_string(s.entries[s.count - 1].step));
    }
    if (s.count == 2) {
        s.entries[0] = std::move(s.entries[1]);
        s.entries[1] = CacheEntry{step, std::move(value)};
    } else {
        s.entries[s.count] = CacheEntry{step, std::move(value)};
        ++s.count;
    }
}

void CacheStore::charge_reuse(Slot& s, const SublayerId& id) const {
    if (s.reuses >= reuse_limit_) {
        throw CacheError(CacheFault::reuse_limit,
                         "cached computation for " + id_text(id) + " already reused " +
                             std::to_string(s.reuses) + " time(s), limit " +
                             std::to_string(reuse_limit_));
    }
}

void CacheStore::record_compute(const SublayerId& id, int step, FeatureTensor value) {
    Slot& s = slot(id);
    push(s, step, std::move(value));
    s.reuses = 0;
}

FeatureTensor CacheStore::reuse_normal(const SublayerId& id, int step) {
    auto it = slots_.find(slot_index(id));
    if (it == slots_.end() || it->second.count == 0) {
        throw CacheError(CacheFault::cold_cache, "nothing cached yet for " + id_text(id));
    }
    Slot& s = it->second;
    charge_reuse(s, id);
    FeatureTensor value = s.entries[s.count - 1].value;
    push(s, step, value);
    ++s.reuses;
    return value;
}

FeatureTensor CacheStore::reuse_gc(const SublayerId& id, int step, const GcConfig& cfg) {
    cfg.validate();
    auto it = slots_.find(slot_index(id));
    if (it == slots_.end() || it->second.count == 0) {
        throw CacheError(CacheFault::cold_cache, "nothing cached yet for " + id_text(id));
    }
    Slot& s = it->second;
    if (s.count < 2) {
        throw CacheError(CacheFault::insufficient_history,
                         "gradient reuse needs two entries for " + id_text(id));
    }
    charge_reuse(s, id);
    const CacheEntry& prev = s.entries[0];
    const CacheEntry& curr = s.entries[1];
    double eta = cfg.eta;
    if (cfg.gap_normalize) {
        const int gap = curr.step - prev.step;
        eta /= static_cast<double>(gap);
    }
    FeatureTensor value = gc_extrapolate(prev.value, curr.value, eta);
    push(s, step, value);
    ++s.reuses;
    return value;
}

int CacheStore::history_depth(const SublayerId& id) const {
    const Slot* s = find(id);
    return s == nullptr ? 0 : s->count;
}

int CacheStore::reuses_since_compute(const SublayerId& id) const {
    const Slot* s = find(id);
    return s == nullptr ? 0 : s->reuses;
}

const CacheEntry* CacheStore::newest(const SublayerId& id) const {
    const Slot* s = find(id);
    return s == nullptr || s->count == 0 ? nullptr : &s->entries[s->count - 1];
}

const CacheEntry* CacheStore::older(const SublayerId& id) const {
    const Slot* s = find(id);
    return s == nullptr || s->count < 2 ? nullptr : &s->entries[0];
}

CacheEngine::CacheEngine(CacheSchedule schedule, GcConfig cfg, const StrategyPolicy* policy,
                         bool shadow, RunRecorder* recorder)
    : schedule_(std::move(schedule)),
      cfg_(cfg),
      policy_(policy),
      shadow_(shadow),
      recorder_(recorder),
      store_(cfg.reuse_limit) {
    cfg_.validate();
    schedule_.validate(cfg_.reuse_limit);
}

void CacheEngine::push_truth(const SublayerId& id, const FeatureTensor& exact) {
    TruthSlot& t = truth_[slot_index(id)];
    t.prev2 = std::move(t.prev1);
    t.prev1 = exact;
    t.count = t.count < 2 ? t.count + 1 : 2;
}

FeatureTensor CacheEngine::on_sublayer(const SublayerId& id, int step,
                                       const std::function<FeatureTensor()>& compute) {
    const ScheduleEntry& entry = schedule_.at_step(step);

    if (entry.action == StepAction::compute) {
        FeatureTensor value = compute();
        store_.record_compute(id, step, value);
        if (recorder_ != nullptr) {
            if (meta_step_ != step) {
                meta_step_ = step;
                recorder_->note_action(step, StepAction::compute, ReuseStrategy::normal, false,
                                       0.0);
            }
            recorder_->note_effective(id, step, value);
        }
        if (shadow_) {
            push_truth(id, value);
        }
        return value;
    }

    ReuseStrategy requested = entry.strategy;
    bool consulted = false;
    double b = 0.0;
    if (requested == ReuseStrategy::policy_decided) {
        if (policy_ == nullptr) {
            throw ConfigError("schedule step " + std::to_string(step) +
                              " is policy-decided but no policy was provided");
        }
        consulted = true;
        b = policy_->b_value(step);
        requested = policy_->decide(step);
    }

    // gradient reuse needs two effective entries; before that, hold
    ReuseStrategy resolved = requested;
    if (resolved == ReuseStrategy::gradient && store_.history_depth(id) < 2) {
        resolved = ReuseStrategy::normal;
    }

    FeatureTensor value = resolved == ReuseStrategy::gradient
                              ? store_.reuse_gc(id, step, cfg_)
                              : store_.reuse_normal(id, step);

    if (recorder_ != nullptr) {
        if (meta_step_ != step) {
            meta_step_ = step;
            recorder_->note_action(step, StepAction::skip, resolved, consulted, b);
        }
        recorder_->note_effective(id, step, value);
    }

    if (shadow_) {
        const FeatureTensor exact = compute();
        const TruthSlot& t = truth_[slot_index(id)];
        double j_normal = 0.0;
        double j_applied = 0.0;
        if (t.count >= 1) {
            j_normal = l1_total(exact - t.prev1);
            if (resolved == ReuseStrategy::gradient && t.count >= 2) {
                j_applied = l1_total(exact - gc_extrapolate(t.prev2, t.prev1, cfg_.eta));
            } else {
                j_applied = j_normal;
            }
        }
        const double j_effective = l1_total(value - exact);
        if (recorder_ != nullptr) {
            recorder_->note_shadow(id, step, j_normal, j_applied, j_effective);
        }
        push_truth(id, exact);
    }

    return value;
}

}  // namespace gradcache
