#pragma once

#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "gradcache/denoiser.hpp"
#include "gradcache/schedule.hpp"
#include "gradcache/tensor.hpp"

namespace gradcache {

// What happened at one generation step, uniform across sublayers because a
// step is skipped or computed as a unit.
struct StepRecord {
    int gen_step = 0;
    int diffusion_t = 0;
    StepAction action = StepAction::compute;
    ReuseStrategy applied = ReuseStrategy::normal;  // resolved strategy for skip steps
    bool policy_consulted = false;
    double b_value = 0.0;  // valid when policy_consulted
    double latent_l1 = 0.0;
    std::uint64_t latent_checksum = 0;
};

// Reuse-error measurements for one (step, block) cell, filled in shadow mode.
// single_* compare a strategy evaluated on exact one-step history against the
// exact value; `effective` compares what the trajectory actually consumed.
struct ShadowRecord {
    int gen_step = 0;
    int block = 0;
    double single_normal = 0.0;
    double single_applied = 0.0;
    double effective = 0.0;
};

class RunRecorder {
  public:
    bool keep_raw = false;  // retain computed/effective tensors (profiling, replay tests)

    void begin_step(int gen_step, int diffusion_t) { step_at(gen_step).diffusion_t = diffusion_t; }

    void note_action(int gen_step, StepAction action, ReuseStrategy applied,
                     bool policy_consulted, double b_value) {
        StepRecord& r = step_at(gen_step);
        r.action = action;
        r.applied = applied;
        r.policy_consulted = policy_consulted;
        r.b_value = b_value;
    }

    void note_latent(int gen_step, const FeatureRef& x) {
        StepRecord& r = step_at(gen_step);
        r.latent_l1 = l1_total(x);
        r.latent_checksum = checksum(x);
    }

    void note_effective(const SublayerId& id, int gen_step, const FeatureRef& value) {
        if (keep_raw) {
            raw_[{gen_step, slot_index(id)}] = value;
        }
    }

    void note_shadow(const SublayerId& id, int gen_step, double single_normal,
                     double single_applied, double effective) {
        auto key = std::make_pair(gen_step, id.block);
        auto [it, fresh] = shadow_index_.try_emplace(key, shadow_.size());
        if (fresh) {
            ShadowRecord r;
            r.gen_step = gen_step;
            r.block = id.block;
            shadow_.push_back(r);
        }
        ShadowRecord& r = shadow_[it->second];
        r.single_normal += single_normal;
        r.single_applied += single_applied;
        r.effective += effective;
    }

    const std::vector<StepRecord>& steps() const { return steps_; }
    const std::vector<ShadowRecord>& shadow() const { return shadow_; }

    const FeatureTensor* raw_at(int gen_step, const SublayerId& id) const {
        auto it = raw_.find({gen_step, slot_index(id)});
        return it == raw_.end() ? nullptr : &it->second;
    }

    const StepRecord* step_record(int gen_step) const {
        for (const auto& r : steps_) {
            if (r.gen_step == gen_step) return &r;
        }
        return nullptr;
    }

  private:
    StepRecord& step_at(int gen_step) {
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
            if (it->gen_step == gen_step) return *it;
        }
        StepRecord r;
        r.gen_step = gen_step;
        steps_.push_back(r);
        return steps_.back();
    }

    std::vector<StepRecord> steps_;
    std::vector<ShadowRecord> shadow_;
    std::map<std::pair<int, int>, std::size_t> shadow_index_;
    std::map<std::pair<int, int>, FeatureTensor> raw_;
};

}  // namespace gradcache
