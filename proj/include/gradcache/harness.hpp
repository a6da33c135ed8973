#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gradcache/cache.hpp"
#include "gradcache/flops.hpp"
#include "gradcache/model.hpp"
#include "gradcache/policy.hpp"
#include "gradcache/recorder.hpp"
#include "gradcache/sampler.hpp"
#include "gradcache/schedule.hpp"
#include "gradcache/scripted.hpp"
#include "gradcache/stats.hpp"

namespace gradcache {

enum class StrategyChoice { none, normal, gc, goc };
enum class ModelVariant { toy, scripted };

const char* to_string(StrategyChoice s);
const char* to_string(ModelVariant v);
StrategyChoice parse_strategy_choice(const std::string& s);
ModelVariant parse_model_variant(const std::string& s);

// Full description of one experiment cell, loadable from a sectioned JSON
// file (model / sampler / cache / god / output). Seeds serialize as strings
// so 64-bit values survive the trip.
struct ExperimentConfig {
    ModelVariant variant = ModelVariant::toy;
    ModelConfig model;  // used when variant == toy
    ScriptSpec script;  // used when variant == scripted

    // sampler
    int step_count = 20;
    int total_steps = 1000;
    bool stochastic = false;
    std::uint64_t seed = 0;
    int run_count = 1;
    int class_id = 0;
    int prompt_id = 0;

    // cache
    int cache_level = 0;  // percent of steps served from cache: 0, 25, 50
    StrategyChoice strategy = StrategyChoice::none;
    GcConfig gc;
    bool shadow = false;

    // god
    GodConfig god;
    std::string stats_path;
    bool profile_inline = false;  // profile this model instead of loading stats
    int profile_prompts = 8;

    // output
    std::string out_dir;
    bool keep_latents = false;

    void validate() const;
    std::string to_json() const;
    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig from_file(const std::string& path);
};

struct RunReport {
    int run_index = 0;
    std::uint64_t run_seed = 0;
    std::vector<StepRecord> steps;
    std::vector<ShadowRecord> shadow;
    Trajectory trajectory;
    std::uint64_t final_checksum = 0;
    double final_l1 = 0.0;
    double total_single_normal = 0.0;
    double total_single_applied = 0.0;
    double total_effective = 0.0;
    double wall_seconds = 0.0;  // informational; never lands in csv/summary
};

struct ExperimentResult {
    ExperimentConfig resolved;
    CacheSchedule schedule;  // strategies resolved per step
    StrategyPlan plan;       // populated when the policy ran
    StatsTable stats;        // populated when the policy ran
    FlopsReport flops;       // all zeros for the scripted variant
    std::vector<RunReport> runs;
};

// profile (if requested) -> plan -> run_count sampling runs -> files.
// Output files are written when out_dir is set; bodies are deterministic
// functions of the config, timestamps live only in meta.json.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

std::unique_ptr<Denoiser> make_model(const ExperimentConfig& cfg);

// Cache-free profiling runs over profile_prompts prompts derived from the
// config's class/prompt ids; the same derivation run_experiment uses inline.
StatsTable profile_for_config(const ExperimentConfig& cfg);

// Statistics a goc run would use: loaded from stats_path when set, otherwise
// profiled inline; rejects tables whose step count disagrees with the run.
StatsTable stats_for_config(const ExperimentConfig& cfg);

struct DeviationRow {
    int step = 0;
    double latent_deviation = 0.0;  // J(latent - reference latent) after the step
    double cum_latent_deviation = 0.0;
    double effective = 0.0;  // shadow reuse error charged at this step
    double cum_effective = 0.0;
};

// Per-step divergence of a cached run from a reference run with the same
// seeds (typically strategy=none).
std::vector<DeviationRow> error_report(const RunReport& run, const RunReport& reference);

enum class SweepParameter { eta, gamma, threshold };

const char* to_string(SweepParameter p);
SweepParameter parse_sweep_parameter(const std::string& s);

struct SweepRow {
    std::string parameter;
    double value = 0.0;
    double mean_cum_error = 0.0;  // shadow reuse error summed over a run
    double stddev_cum_error = 0.0;
    double mean_final_deviation = 0.0;  // vs the shared no-cache reference
    double stddev_final_deviation = 0.0;
    std::uint64_t flops_total = 0;
    double sublayer_speedup = 1.0;
};

// Re-runs the experiment once per value on shared seeds, against one shared
// no-cache reference. Population standard deviations.
std::vector<SweepRow> sweep(const ExperimentConfig& cfg, SweepParameter parameter,
                            const std::vector<double>& values);

// deterministic file bodies
std::string runs_csv(const ExperimentResult& result);
std::string block_errors_csv(const ExperimentResult& result);
std::string summary_json(const ExperimentResult& result);
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string deviations_csv(const std::vector<DeviationRow>& rows);

void write_outputs(const ExperimentResult& result);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace gradcache
