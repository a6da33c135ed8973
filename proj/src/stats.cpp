#include "gradcache/stats.hpp"

#include <cmath>
#include <utility>

#include "json.hpp"

#include "gradcache/rng.hpp"

namespace gradcache {

namespace {

constexpr std::uint64_t kTagProfilePrompt = 0xb000;

// Noise streams are keyed by the prompt's identity, not its list position,
// so reordering the prompt list cannot change any recorded feature.
std::uint64_t prompt_stream_tag(const ConditionInfo& cond) {
    const auto hi = static_cast<std::uint64_t>(static_cast<std::uint32_t>(cond.class_id));
    const auto lo = static_cast<std::uint64_t>(static_cast<std::uint32_t>(cond.prompt_id));
    return kTagProfilePrompt ^ (hi << 32) ^ lo;
}

}  // namespace

FeatureLog::FeatureLog(int prompt_count, int step_count, int depth)
    : prompt_count_(prompt_count), step_count_(step_count), depth_(depth) {
    if (prompt_count < 1) {
        throw StatsError("feature log needs at least one prompt");
    }
    if (step_count < 1 || depth < 1) {
        throw StatsError("feature log needs positive step count and depth");
    }
    grid_.resize(static_cast<std::size_t>(prompt_count) * static_cast<std::size_t>(step_count) *
                 static_cast<std::size_t>(depth) * 3);
}

std::size_t FeatureLog::index(int prompt, int step, const SublayerId& id) const {
    if (prompt < 0 || prompt >= prompt_count_) {
        throw StatsError("prompt index out of range");
    }
    if (step < 1 || step > step_count_) {
        throw StatsError("step out of range in feature log");
    }
    if (id.block < 0 || id.block >= depth_) {
        throw StatsError("block out of range in feature log");
    }
    const std::size_t per_step = static_cast<std::size_t>(depth_) * 3;
    return (static_cast<std::size_t>(prompt) * static_cast<std::size_t>(step_count_) +
            static_cast<std::size_t>(step - 1)) *
               per_step +
           static_cast<std::size_t>(slot_index(id));
}

void FeatureLog::record(int prompt, int step, const SublayerId& id, FeatureTensor value) {
    auto& cell = grid_[index(prompt, step, id)];
    if (cell.has_value()) {
        throw ContractError("duplicate feature recording for one sublayer step");
    }
    cell = std::move(value);
}

const FeatureTensor& FeatureLog::at(int prompt, int step, const SublayerId& id) const {
    const auto& cell = grid_[index(prompt, step, id)];
    if (!cell.has_value()) {
        throw StatsError("feature log is missing a recorded entry");
    }
    return *cell;
}

bool FeatureLog::has(int prompt, int step, const SublayerId& id) const {
    return grid_[index(prompt, step, id)].has_value();
}

FeatureTensor RecordingInterceptor::on_sublayer(const SublayerId& id, int step,
                                                const std::function<FeatureTensor()>& compute) {
    FeatureTensor out = compute();
    log_.record(prompt_, step, id, out);
    return out;
}

FeatureLog profile(Denoiser& model, const NoiseSchedule& sched,
                   const std::vector<ConditionInfo>& prompts, const ProfileParams& params) {
    if (prompts.empty()) {
        throw StatsError("profiling needs at least one prompt");
    }
    FeatureLog log(static_cast<int>(prompts.size()), params.step_count, model.depth());
    Rng base(params.seed);
    for (std::size_t k = 0; k < prompts.size(); ++k) {
        Rng stream = base.fork(prompt_stream_tag(prompts[k]));
        SampleParams sp;
        sp.step_count = params.step_count;
        sp.noise_seed = stream.next_u64();
        RecordingInterceptor rec(log, static_cast<int>(k));
        sample(model, prompts[k], sched, sp, &rec, nullptr);
    }
    return log;
}

AveragedFeatures::AveragedFeatures(int step_count, int depth, int prompt_count)
    : step_count_(step_count), depth_(depth), prompt_count_(prompt_count) {
    if (step_count < 1 || depth < 1) {
        throw StatsError("averages need positive step count and depth");
    }
    grid_.resize(static_cast<std::size_t>(step_count) * static_cast<std::size_t>(depth) * 3);
}

std::size_t AveragedFeatures::index(int step, const SublayerId& id) const {
    if (step < 1 || step > step_count_) {
        throw StatsError("step out of range in averaged features");
    }
    if (id.block < 0 || id.block >= depth_) {
        throw StatsError("block out of range in averaged features");
    }
    return static_cast<std::size_t>(step - 1) * static_cast<std::size_t>(depth_) * 3 +
           static_cast<std::size_t>(slot_index(id));
}

void AveragedFeatures::set(int step, const SublayerId& id, FeatureTensor value) {
    grid_[index(step, id)] = std::move(value);
}

const FeatureTensor& AveragedFeatures::at(int step, const SublayerId& id) const {
    const auto& cell = grid_[index(step, id)];
    if (!cell.has_value()) {
        throw StatsError("averaged features missing an entry");
    }
    return *cell;
}

bool AveragedFeatures::has(int step, const SublayerId& id) const {
    return grid_[index(step, id)].has_value();
}

AveragedFeatures average_features(const FeatureLog& log) {
    const int kk = log.prompt_count();
    AveragedFeatures avg(log.step_count(), log.depth(), kk);
    for (int step = 1; step <= log.step_count(); ++step) {
        for (int block = 0; block < log.depth(); ++block) {
            for (int kind = 0; kind < 3; ++kind) {
                const SublayerId id{block, static_cast<SublayerKind>(kind)};
                int present = 0;
                for (int k = 0; k < kk; ++k) {
                    present += log.has(k, step, id) ? 1 : 0;
                }
                if (present == 0) {
                    continue;  // sublayer kind not exercised by this model
                }
                if (present != kk) {
                    throw StatsError("feature log incomplete: sublayer missing for some prompts");
                }
                FeatureTensor sum = log.at(0, step, id);
                for (int k = 1; k < kk; ++k) {
                    const FeatureTensor& f = log.at(k, step, id);
                    if (f.rows() != sum.rows() || f.cols() != sum.cols()) {
                        throw ShapeError("feature shapes differ across prompts");
                    }
                    sum += f;
                }
                avg.set(step, id, sum / static_cast<double>(kk));
            }
        }
    }
    return avg;
}

bool is_inverse_gradient(const FeatureTensor& prev, const FeatureTensor& curr,
                         const FeatureTensor& next, double eta) {
    if (prev.rows() != curr.rows() || prev.cols() != curr.cols() || curr.rows() != next.rows() ||
        curr.cols() != next.cols()) {
        throw ShapeError("gradient test needs three equally shaped tensors");
    }
    if (!(eta >= 0.0) || !std::isfinite(eta)) {
        throw DomainError("gradient test needs a finite eta >= 0");
    }
    const double plain = l1_total(next - curr);
    const double along = l1_total(next - (curr + eta * (curr - prev)));
    return !(plain > along);
}

StatsTable count_inverse(const AveragedFeatures& averages, double eta, int depth) {
    if (depth != averages.depth()) {
        throw StatsError("depth disagrees with the averaged features");
    }
    if (!(eta >= 0.0) || !std::isfinite(eta)) {
        throw DomainError("inverse counting needs a finite eta >= 0");
    }
    StatsTable table;
    table.prompt_count = averages.prompt_count();
    table.eta = eta;
    table.depth = depth;
    table.step_count = averages.step_count();
    table.inverse_counts.assign(static_cast<std::size_t>(table.step_count), 0);
    table.inverse_fractions.assign(static_cast<std::size_t>(table.step_count), 0.0);
    table.averages = averages;

    for (int t = 3; t <= table.step_count; ++t) {
        int n = 0;
        for (int block = 0; block < depth; ++block) {
            double plain = 0.0;
            double along = 0.0;
            bool any = false;
            for (int kind = 0; kind < 3; ++kind) {
                const SublayerId id{block, static_cast<SublayerKind>(kind)};
                if (!averages.has(t, id)) {
                    continue;
                }
                if (!averages.has(t - 1, id) || !averages.has(t - 2, id)) {
                    throw StatsError("averaged features missing history for a present sublayer");
                }
                const FeatureTensor& a_next = averages.at(t, id);
                const FeatureTensor& a_curr = averages.at(t - 1, id);
                const FeatureTensor& a_prev = averages.at(t - 2, id);
                plain += l1_total(a_next - a_curr);
                along += l1_total(a_next - (a_curr + eta * (a_curr - a_prev)));
                any = true;
            }
            if (!any) {
                throw StatsError("block has no averaged sublayers");
            }
            if (!(plain > along)) {
                ++n;
            }
        }
        table.inverse_counts[static_cast<std::size_t>(t - 1)] = n;
        table.inverse_fractions[static_cast<std::size_t>(t - 1)] =
            static_cast<double>(n) / static_cast<double>(depth);
    }
    return table;
}

int StatsTable::count_at(int step) const {
    if (step < 1 || step > step_count) {
        throw StatsError("statistics do not cover the requested step");
    }
    return inverse_counts[static_cast<std::size_t>(step - 1)];
}

double StatsTable::fraction_at(int step) const {
    if (step < 1 || step > step_count) {
        throw StatsError("statistics do not cover the requested step");
    }
    return inverse_fractions[static_cast<std::size_t>(step - 1)];
}

std::string StatsTable::to_json() const {
    nlohmann::ordered_json j;
    j["K"] = prompt_count;
    j["eta"] = eta;
    j["L"] = depth;
    j["step_count"] = step_count;
    j["N"] = inverse_counts;
    j["N_hat"] = inverse_fractions;
    return j.dump(2) + "\n";
}

StatsTable StatsTable::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad statistics file: ") + e.what());
    }
    StatsTable table;
    try {
        table.prompt_count = j.at("K").get<int>();
        table.eta = j.at("eta").get<double>();
        table.depth = j.at("L").get<int>();
        table.step_count = j.at("step_count").get<int>();
        table.inverse_counts = j.at("N").get<std::vector<int>>();
        table.inverse_fractions = j.at("N_hat").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad statistics file: ") + e.what());
    }
    if (table.step_count < 1 || table.depth < 1) {
        throw ConfigError("statistics file has non-positive dimensions");
    }
    if (table.inverse_counts.size() != static_cast<std::size_t>(table.step_count) ||
        table.inverse_fractions.size() != static_cast<std::size_t>(table.step_count)) {
        throw ConfigError("statistics file arrays disagree with step_count");
    }
    for (std::size_t i = 0; i < table.inverse_counts.size(); ++i) {
        const int n = table.inverse_counts[i];
        const double f = table.inverse_fractions[i];
        if (n < 0 || n > table.depth || f < 0.0 || f > 1.0) {
            throw ConfigError("statistics file entries out of range");
        }
    }
    return table;
}

StatsTable profile_stats(Denoiser& model, const NoiseSchedule& sched,
                         const std::vector<ConditionInfo>& prompts, const ProfileParams& params,
                         double eta) {
    FeatureLog log = profile(model, sched, prompts, params);
    AveragedFeatures avg = average_features(log);
    return count_inverse(avg, eta, model.depth());
}

}  // namespace gradcache
