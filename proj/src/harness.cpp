#include "gradcache/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <utility>

#include "json.hpp"

#include "gradcache/rng.hpp"
#include "gradcache/text.hpp"

namespace gradcache {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::uint64_t kTagRun = 0xc000;
constexpr std::uint64_t kTagProfileSeed = 0xd000;

void require_keys(const json& j, std::initializer_list<const char*> allowed,
                  const char* section) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* key : allowed) {
            if (it.key() == key) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError(std::string("unknown key '") + it.key() + "' in section '" +
                              section + "'");
        }
    }
}

std::uint64_t seed_from_json(const json& v, const char* name) {
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        std::uint64_t out = 0;
        const char* first = s.data();
        const char* last = s.data() + s.size();
        auto [ptr, ec] = std::from_chars(first, last, out);
        if (ec != std::errc() || ptr != last) {
            throw ConfigError(std::string("bad seed string for '") + name + "'");
        }
        return out;
    }
    if (v.is_number_unsigned() || v.is_number_integer()) {
        return v.get<std::uint64_t>();
    }
    throw ConfigError(std::string("seed '") + name + "' must be a string or unsigned integer");
}

ordered_json term_to_json(const ScriptTerm& t) {
    ordered_json j;
    j["family"] = to_string(t.family);
    j["a"] = t.a;
    j["b"] = t.b;
    j["c"] = t.c;
    j["amplitude"] = t.amplitude;
    j["period"] = t.period;
    return j;
}

ScriptTerm term_from_json(const json& j) {
    require_keys(j, {"family", "a", "b", "c", "amplitude", "period"}, "model.blocks[]");
    ScriptTerm t;
    t.family = parse_script_family(j.at("family").get<std::string>());
    t.a = j.value("a", 0.0);
    t.b = j.value("b", 0.0);
    t.c = j.value("c", 0.0);
    t.amplitude = j.value("amplitude", 0.0);
    t.period = j.value("period", 8.0);
    return t;
}

double sum_shadow_effective(const RunReport& run, int step) {
    double total = 0.0;
    for (const ShadowRecord& r : run.shadow) {
        if (r.gen_step == step) {
            total += r.effective;
        }
    }
    return total;
}

std::string iso_utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

}  // namespace

const char* to_string(StrategyChoice s) {
    switch (s) {
        case StrategyChoice::none: return "none";
        case StrategyChoice::normal: return "normal";
        case StrategyChoice::gc: return "gc";
        case StrategyChoice::goc: return "goc";
    }
    return "?";
}

const char* to_string(ModelVariant v) {
    return v == ModelVariant::toy ? "toy" : "scripted";
}

StrategyChoice parse_strategy_choice(const std::string& s) {
    if (s == "none") return StrategyChoice::none;
    if (s == "normal") return StrategyChoice::normal;
    if (s == "gc") return StrategyChoice::gc;
    if (s == "goc") return StrategyChoice::goc;
    throw ConfigError("unknown strategy: '" + s + "'");
}

ModelVariant parse_model_variant(const std::string& s) {
    if (s == "toy") return ModelVariant::toy;
    if (s == "scripted") return ModelVariant::scripted;
    throw ConfigError("unknown model variant: '" + s + "'");
}

const char* to_string(SweepParameter p) {
    switch (p) {
        case SweepParameter::eta: return "eta";
        case SweepParameter::gamma: return "gamma";
        case SweepParameter::threshold: return "threshold";
    }
    return "?";
}

SweepParameter parse_sweep_parameter(const std::string& s) {
    if (s == "eta") return SweepParameter::eta;
    if (s == "gamma") return SweepParameter::gamma;
    if (s == "threshold") return SweepParameter::threshold;
    throw ConfigError("unknown sweep parameter: '" + s + "'");
}

void ExperimentConfig::validate() const {
    if (variant == ModelVariant::toy) {
        model.validate();
    } else {
        script.validate();
    }
    if (step_count < 1) {
        throw ConfigError("step_count must be positive");
    }
    if (total_steps < 2) {
        throw ConfigError("total_steps must be at least 2");
    }
    if (stochastic && step_count != total_steps - 1) {
        throw ConfigError("the stochastic sampler walks the full chain: step_count must equal "
                          "total_steps - 1");
    }
    if (run_count < 1) {
        throw ConfigError("runs must be positive");
    }
    if (cache_level != 0 && cache_level != 25 && cache_level != 50) {
        throw ConfigError("cache level must be 0, 25, or 50");
    }
    gc.validate();
    god.validate();
    if (strategy == StrategyChoice::goc && stats_path.empty() && !profile_inline) {
        throw ConfigError("strategy 'goc' needs statistics: set god.stats_path to a profiled "
                          "stats file (see the 'profile' subcommand) or enable "
                          "god.profile_inline");
    }
    if (profile_prompts < 1) {
        throw ConfigError("profile_prompts must be positive");
    }
}

std::string ExperimentConfig::to_json() const {
    ordered_json j;
    ordered_json m;
    m["variant"] = to_string(variant);
    if (variant == ModelVariant::toy) {
        m["depth"] = model.depth;
        m["tokens"] = static_cast<std::int64_t>(model.tokens);
        m["channels"] = static_cast<std::int64_t>(model.channels);
        m["heads"] = model.heads;
        m["mlp_ratio"] = model.mlp_ratio;
        m["cross_attention"] = model.cross_attention;
        m["cond_dim"] = static_cast<std::int64_t>(model.cond_dim);
        m["prompt_tokens"] = static_cast<std::int64_t>(model.prompt_tokens);
        m["seed"] = std::to_string(model.seed);
        m["adaln_placement"] = to_string(model.adaln_placement);
        m["init_scale"] = model.init_scale;
    } else {
        m["tokens"] = static_cast<std::int64_t>(script.tokens);
        m["channels"] = static_cast<std::int64_t>(script.channels);
        m["cross_attention"] = script.cross_attention;
        m["seed"] = std::to_string(script.seed);
        ordered_json blocks = ordered_json::array();
        for (const BlockScript& b : script.blocks) {
            ordered_json jb;
            jb["self"] = term_to_json(b[0]);
            jb["cross"] = term_to_json(b[1]);
            jb["mlp"] = term_to_json(b[2]);
            blocks.push_back(jb);
        }
        m["blocks"] = blocks;
    }
    j["model"] = m;

    ordered_json s;
    s["step_count"] = step_count;
    s["total_steps"] = total_steps;
    s["stochastic"] = stochastic;
    s["seed"] = std::to_string(seed);
    s["runs"] = run_count;
    s["class_id"] = class_id;
    s["prompt_id"] = prompt_id;
    j["sampler"] = s;

    ordered_json c;
    c["level"] = cache_level;
    c["strategy"] = to_string(strategy);
    c["eta"] = gc.eta;
    c["reuse_limit"] = gc.reuse_limit;
    c["gap_normalize"] = gc.gap_normalize;
    c["shadow"] = shadow;
    j["cache"] = c;

    ordered_json g;
    g["gamma"] = god.gamma;
    g["threshold"] = god.threshold;
    g["normalize_counts"] = god.normalize_counts;
    g["position_sense"] = to_string(god.position_sense);
    g["stats_path"] = stats_path;
    g["profile_inline"] = profile_inline;
    g["profile_prompts"] = profile_prompts;
    j["god"] = g;

    ordered_json o;
    o["dir"] = out_dir;
    o["keep_latents"] = keep_latents;
    j["output"] = o;

    return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    }
    ExperimentConfig cfg;
    try {
        require_keys(j, {"model", "sampler", "cache", "god", "output"}, "<top level>");

        if (j.contains("model")) {
            const json& m = j.at("model");
            cfg.variant = parse_model_variant(m.value("variant", std::string("toy")));
            if (cfg.variant == ModelVariant::toy) {
                require_keys(m,
                             {"variant", "depth", "tokens", "channels", "heads", "mlp_ratio",
                              "cross_attention", "cond_dim", "prompt_tokens", "seed",
                              "adaln_placement", "init_scale"},
                             "model");
                cfg.model.depth = m.value("depth", cfg.model.depth);
                cfg.model.tokens = m.value("tokens", static_cast<std::int64_t>(cfg.model.tokens));
                cfg.model.channels =
                    m.value("channels", static_cast<std::int64_t>(cfg.model.channels));
                cfg.model.heads = m.value("heads", cfg.model.heads);
                cfg.model.mlp_ratio = m.value("mlp_ratio", cfg.model.mlp_ratio);
                cfg.model.cross_attention = m.value("cross_attention", cfg.model.cross_attention);
                cfg.model.cond_dim =
                    m.value("cond_dim", static_cast<std::int64_t>(cfg.model.cond_dim));
                cfg.model.prompt_tokens =
                    m.value("prompt_tokens", static_cast<std::int64_t>(cfg.model.prompt_tokens));
                if (m.contains("seed")) {
                    cfg.model.seed = seed_from_json(m.at("seed"), "model.seed");
                }
                if (m.contains("adaln_placement")) {
                    cfg.model.adaln_placement =
                        parse_adaln_placement(m.at("adaln_placement").get<std::string>());
                }
                cfg.model.init_scale = m.value("init_scale", cfg.model.init_scale);
            } else {
                require_keys(m, {"variant", "tokens", "channels", "cross_attention", "seed",
                                 "blocks"},
                             "model");
                cfg.script.tokens = m.value("tokens", static_cast<std::int64_t>(cfg.script.tokens));
                cfg.script.channels =
                    m.value("channels", static_cast<std::int64_t>(cfg.script.channels));
                cfg.script.cross_attention =
                    m.value("cross_attention", cfg.script.cross_attention);
                if (m.contains("seed")) {
                    cfg.script.seed = seed_from_json(m.at("seed"), "model.seed");
                }
                cfg.script.blocks.clear();
                for (const json& jb : m.at("blocks")) {
                    require_keys(jb, {"self", "cross", "mlp"}, "model.blocks[]");
                    BlockScript b;
                    if (jb.contains("self")) b[0] = term_from_json(jb.at("self"));
                    if (jb.contains("cross")) b[1] = term_from_json(jb.at("cross"));
                    if (jb.contains("mlp")) b[2] = term_from_json(jb.at("mlp"));
                    cfg.script.blocks.push_back(b);
                }
            }
        }

        if (j.contains("sampler")) {
            const json& s = j.at("sampler");
            require_keys(s,
                         {"step_count", "total_steps", "stochastic", "seed", "runs", "class_id",
                          "prompt_id"},
                         "sampler");
            cfg.step_count = s.value("step_count", cfg.step_count);
            cfg.total_steps = s.value("total_steps", cfg.total_steps);
            cfg.stochastic = s.value("stochastic", cfg.stochastic);
            if (s.contains("seed")) {
                cfg.seed = seed_from_json(s.at("seed"), "sampler.seed");
            }
            cfg.run_count = s.value("runs", cfg.run_count);
            cfg.class_id = s.value("class_id", cfg.class_id);
            cfg.prompt_id = s.value("prompt_id", cfg.prompt_id);
        }

        if (j.contains("cache")) {
            const json& c = j.at("cache");
            require_keys(c, {"level", "strategy", "eta", "reuse_limit", "gap_normalize", "shadow"},
                         "cache");
            cfg.cache_level = c.value("level", cfg.cache_level);
            if (c.contains("strategy")) {
                cfg.strategy = parse_strategy_choice(c.at("strategy").get<std::string>());
            }
            cfg.gc.eta = c.value("eta", cfg.gc.eta);
            cfg.gc.reuse_limit = c.value("reuse_limit", cfg.gc.reuse_limit);
            cfg.gc.gap_normalize = c.value("gap_normalize", cfg.gc.gap_normalize);
            cfg.shadow = c.value("shadow", cfg.shadow);
        }

        if (j.contains("god")) {
            const json& g = j.at("god");
            require_keys(g,
                         {"gamma", "threshold", "normalize_counts", "position_sense", "stats_path",
                          "profile_inline", "profile_prompts"},
                         "god");
            cfg.god.gamma = g.value("gamma", cfg.god.gamma);
            cfg.god.threshold = g.value("threshold", cfg.god.threshold);
            cfg.god.normalize_counts = g.value("normalize_counts", cfg.god.normalize_counts);
            if (g.contains("position_sense")) {
                cfg.god.position_sense =
                    position_sense_from_string(g.at("position_sense").get<std::string>());
            }
            cfg.stats_path = g.value("stats_path", cfg.stats_path);
            cfg.profile_inline = g.value("profile_inline", cfg.profile_inline);
            cfg.profile_prompts = g.value("profile_prompts", cfg.profile_prompts);
        }

        if (j.contains("output")) {
            const json& o = j.at("output");
            require_keys(o, {"dir", "keep_latents"}, "output");
            cfg.out_dir = o.value("dir", cfg.out_dir);
            cfg.keep_latents = o.value("keep_latents", cfg.keep_latents);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    return from_json(read_text_file(path));
}

std::unique_ptr<Denoiser> make_model(const ExperimentConfig& cfg) {
    if (cfg.variant == ModelVariant::toy) {
        return std::make_unique<ToyDit>(cfg.model);
    }
    return std::make_unique<ScriptedModel>(cfg.script);
}

StatsTable profile_for_config(const ExperimentConfig& cfg) {
    std::unique_ptr<Denoiser> model = make_model(cfg);
    const NoiseSchedule sched = make_schedule(cfg.total_steps);
    std::vector<ConditionInfo> prompts;
    for (int k = 0; k < cfg.profile_prompts; ++k) {
        prompts.push_back(ConditionInfo{cfg.class_id + k, cfg.prompt_id + k});
    }
    Rng stream = Rng(cfg.seed).fork(kTagProfileSeed);
    ProfileParams pp(cfg.step_count, stream.next_u64());
    return profile_stats(*model, sched, prompts, pp, cfg.gc.eta);
}

StatsTable stats_for_config(const ExperimentConfig& cfg) {
    StatsTable stats;
    if (!cfg.stats_path.empty()) {
        stats = StatsTable::from_json(read_text_file(cfg.stats_path));
    } else if (cfg.profile_inline) {
        stats = profile_for_config(cfg);
    } else {
        throw ConfigError("no statistics available: set god.stats_path to a profiled stats "
                          "file (see the 'profile' subcommand) or enable god.profile_inline");
    }
    if (stats.step_count != cfg.step_count) {
        throw ConfigError("statistics cover " + std::to_string(stats.step_count) +
                          " steps but the run has " + std::to_string(cfg.step_count));
    }
    return stats;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    cfg.validate();
    if (cfg.strategy == StrategyChoice::none) {
        cfg.cache_level = 0;  // no caching, whatever the level said
    }

    std::unique_ptr<Denoiser> model = make_model(cfg);

    const NoiseSchedule sched = make_schedule(cfg.total_steps);

    ExperimentResult result;

    CacheSchedule engine_schedule;  // what the engine runs (may hold policy entries)
    std::unique_ptr<GodPolicy> policy;
    switch (cfg.strategy) {
        case StrategyChoice::none:
            engine_schedule = level_schedule(cfg.step_count, 0, ReuseStrategy::normal);
            result.schedule = engine_schedule;
            break;
        case StrategyChoice::normal:
            engine_schedule =
                level_schedule(cfg.step_count, cfg.cache_level, ReuseStrategy::normal);
            result.schedule = engine_schedule;
            break;
        case StrategyChoice::gc:
            engine_schedule =
                level_schedule(cfg.step_count, cfg.cache_level, ReuseStrategy::gradient);
            result.schedule = engine_schedule;
            break;
        case StrategyChoice::goc: {
            StatsTable stats = stats_for_config(cfg);
            policy = std::make_unique<GodPolicy>(cfg.god, std::move(stats));
            engine_schedule =
                level_schedule(cfg.step_count, cfg.cache_level, ReuseStrategy::policy_decided);
            result.plan = build_plan(engine_schedule, *policy);
            result.schedule = apply_plan(engine_schedule, result.plan);
            result.stats = policy->stats();
            break;
        }
    }

    if (cfg.variant == ModelVariant::toy) {
        result.flops = flops_count(cfg.model, result.schedule);
    } else {
        // scripted sublayers are table lookups; report an all-zero cost grid
        for (const ScheduleEntry& entry : result.schedule.entries) {
            StepFlops row;
            row.step = entry.step;
            result.flops.per_step.push_back(row);
        }
    }

    const ConditionInfo cond{cfg.class_id, cfg.prompt_id};
    Rng run_base(cfg.seed);
    for (int r = 0; r < cfg.run_count; ++r) {
        Rng stream = run_base.fork(kTagRun + static_cast<std::uint64_t>(r));
        RunReport report;
        report.run_index = r;
        report.run_seed = stream.next_u64();

        RunRecorder recorder;
        CacheEngine engine(engine_schedule, cfg.gc, policy.get(), cfg.shadow, &recorder);
        SampleParams sp;
        sp.step_count = cfg.step_count;
        sp.noise_seed = report.run_seed;
        sp.stochastic = cfg.stochastic;

        const auto t0 = std::chrono::steady_clock::now();
        report.trajectory = sample(*model, cond, sched, sp, &engine, &recorder);
        const auto t1 = std::chrono::steady_clock::now();
        report.wall_seconds = std::chrono::duration<double>(t1 - t0).count();

        report.steps = recorder.steps();
        report.shadow = recorder.shadow();
        const FeatureTensor& final_latent = report.trajectory.final_latent();
        report.final_checksum = checksum(final_latent);
        report.final_l1 = l1_total(final_latent);
        for (const ShadowRecord& sr : report.shadow) {
            report.total_single_normal += sr.single_normal;
            report.total_single_applied += sr.single_applied;
            report.total_effective += sr.effective;
        }
        result.runs.push_back(std::move(report));
    }

    result.resolved = cfg;
    if (!cfg.out_dir.empty()) {
        write_outputs(result);
    }
    return result;
}

std::vector<DeviationRow> error_report(const RunReport& run, const RunReport& reference) {
    if (run.trajectory.latents.size() != reference.trajectory.latents.size()) {
        throw ConfigError("comparison needs runs with the same step count");
    }
    if (run.run_seed != reference.run_seed) {
        throw ConfigError("comparison needs runs sharing the same seed");
    }
    std::vector<DeviationRow> rows;
    double cum_dev = 0.0;
    double cum_eff = 0.0;
    for (std::size_t i = 0; i < run.trajectory.latents.size(); ++i) {
        const FeatureTensor& a = run.trajectory.latents[i];
        const FeatureTensor& b = reference.trajectory.latents[i];
        if (a.rows() != b.rows() || a.cols() != b.cols()) {
            throw ConfigError("comparison needs latents of equal shape");
        }
        DeviationRow row;
        row.step = static_cast<int>(i) + 1;
        row.latent_deviation = l1_total(a - b);
        row.effective = sum_shadow_effective(run, row.step);
        cum_dev += row.latent_deviation;
        cum_eff += row.effective;
        row.cum_latent_deviation = cum_dev;
        row.cum_effective = cum_eff;
        rows.push_back(row);
    }
    return rows;
}

std::vector<SweepRow> sweep(const ExperimentConfig& cfg, SweepParameter parameter,
                            const std::vector<double>& values) {
    if (values.size() < 2) {
        throw ConfigError("a sweep needs at least two values");
    }
    ExperimentConfig ref_cfg = cfg;
    ref_cfg.strategy = StrategyChoice::none;
    ref_cfg.cache_level = 0;
    ref_cfg.shadow = false;
    ref_cfg.out_dir.clear();
    ref_cfg.keep_latents = false;
    const ExperimentResult reference = run_experiment(ref_cfg);

    std::vector<SweepRow> rows;
    for (double value : values) {
        ExperimentConfig cell = cfg;
        cell.out_dir.clear();
        cell.keep_latents = false;
        switch (parameter) {
            case SweepParameter::eta: cell.gc.eta = value; break;
            case SweepParameter::gamma: cell.god.gamma = value; break;
            case SweepParameter::threshold: cell.god.threshold = value; break;
        }
        const ExperimentResult result = run_experiment(cell);

        double sum_err = 0.0, sum_err2 = 0.0;
        double sum_dev = 0.0, sum_dev2 = 0.0;
        const auto n = static_cast<double>(result.runs.size());
        for (std::size_t r = 0; r < result.runs.size(); ++r) {
            const double err = result.runs[r].total_effective;
            const double dev = l1_total(result.runs[r].trajectory.final_latent() -
                                        reference.runs[r].trajectory.final_latent());
            sum_err += err;
            sum_err2 += err * err;
            sum_dev += dev;
            sum_dev2 += dev * dev;
        }
        SweepRow row;
        row.parameter = to_string(parameter);
        row.value = value;
        row.mean_cum_error = sum_err / n;
        row.stddev_cum_error = std::sqrt(std::max(0.0, sum_err2 / n - row.mean_cum_error *
                                                                          row.mean_cum_error));
        row.mean_final_deviation = sum_dev / n;
        row.stddev_final_deviation =
            std::sqrt(std::max(0.0, sum_dev2 / n - row.mean_final_deviation *
                                                       row.mean_final_deviation));
        row.flops_total = result.flops.total;
        row.sublayer_speedup = result.flops.sublayer_speedup();
        rows.push_back(row);
    }

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        write_text_file(cfg.out_dir + "/sweep.csv", sweep_csv(rows));
    }
    return rows;
}

std::string runs_csv(const ExperimentResult& result) {
    std::string out = "# schema=1\n";
    out += "run,seed,step,diffusion_t,action,strategy,b_value,step_flops_sublayer,"
           "step_flops_total,cum_flops_sublayer,cum_flops_total,j_single_normal,"
           "j_single_applied,j_effective,latent_l1,latent_checksum\n";
    for (const RunReport& run : result.runs) {
        std::uint64_t cum_sub = 0;
        std::uint64_t cum_total = 0;
        for (const StepRecord& step : run.steps) {
            const std::size_t idx = static_cast<std::size_t>(step.gen_step - 1);
            std::uint64_t f_sub = 0, f_total = 0;
            if (idx < result.flops.per_step.size()) {
                f_sub = result.flops.per_step[idx].sublayer;
                f_total = result.flops.per_step[idx].total;
            }
            cum_sub += f_sub;
            cum_total += f_total;

            double j_normal = 0.0, j_applied = 0.0, j_eff = 0.0;
            bool has_shadow = false;
            for (const ShadowRecord& sr : run.shadow) {
                if (sr.gen_step == step.gen_step) {
                    j_normal += sr.single_normal;
                    j_applied += sr.single_applied;
                    j_eff += sr.effective;
                    has_shadow = true;
                }
            }

            out += std::to_string(run.run_index);
            out += ',';
            out += std::to_string(run.run_seed);
            out += ',';
            out += std::to_string(step.gen_step);
            out += ',';
            out += std::to_string(step.diffusion_t);
            out += ',';
            out += to_string(step.action);
            out += ',';
            out += step.action == StepAction::skip ? to_string(step.applied) : "-";
            out += ',';
            if (step.policy_consulted) {
                out += format_double(step.b_value);
            }
            out += ',';
            out += std::to_string(f_sub);
            out += ',';
            out += std::to_string(f_total);
            out += ',';
            out += std::to_string(cum_sub);
            out += ',';
            out += std::to_string(cum_total);
            out += ',';
            if (has_shadow) {
                out += format_double(j_normal);
            }
            out += ',';
            if (has_shadow) {
                out += format_double(j_applied);
            }
            out += ',';
            if (has_shadow) {
                out += format_double(j_eff);
            }
            out += ',';
            out += format_double(step.latent_l1);
            out += ',';
            out += std::to_string(step.latent_checksum);
            out += '\n';
        }
    }
    return out;
}

std::string block_errors_csv(const ExperimentResult& result) {
    std::string out = "# schema=1\n";
    out += "run,step,block,j_single_normal,j_single_applied,j_effective\n";
    for (const RunReport& run : result.runs) {
        for (const ShadowRecord& sr : run.shadow) {
            out += std::to_string(run.run_index);
            out += ',';
            out += std::to_string(sr.gen_step);
            out += ',';
            out += std::to_string(sr.block);
            out += ',';
            out += format_double(sr.single_normal);
            out += ',';
            out += format_double(sr.single_applied);
            out += ',';
            out += format_double(sr.effective);
            out += '\n';
        }
    }
    return out;
}

std::string summary_json(const ExperimentResult& result) {
    const ExperimentConfig& cfg = result.resolved;
    ordered_json j;
    j["schema"] = 1;
    j["variant"] = to_string(cfg.variant);
    j["strategy"] = to_string(cfg.strategy);
    j["cache_level"] = cfg.cache_level;
    j["step_count"] = cfg.step_count;
    j["total_steps"] = cfg.total_steps;
    j["stochastic"] = cfg.stochastic;
    j["run_count"] = cfg.run_count;
    j["skip_count"] = result.schedule.skip_count();
    j["eta"] = cfg.gc.eta;
    j["gamma"] = cfg.god.gamma;
    j["threshold"] = cfg.god.threshold;
    j["shadow"] = cfg.shadow;

    ordered_json f;
    f["sublayer_total"] = result.flops.sublayer_total;
    f["overhead_total"] = result.flops.overhead_total;
    f["total"] = result.flops.total;
    f["baseline_sublayer_total"] = result.flops.baseline_sublayer_total;
    f["baseline_total"] = result.flops.baseline_total;
    f["sublayer_speedup"] = result.flops.sublayer_speedup();
    f["total_speedup"] = result.flops.total_speedup();
    j["flops"] = f;

    ordered_json runs = ordered_json::array();
    for (const RunReport& run : result.runs) {
        ordered_json r;
        r["run"] = run.run_index;
        r["seed"] = std::to_string(run.run_seed);
        r["final_l1"] = run.final_l1;
        r["final_checksum"] = std::to_string(run.final_checksum);
        r["cum_j_single_normal"] = run.total_single_normal;
        r["cum_j_single_applied"] = run.total_single_applied;
        r["cum_j_effective"] = run.total_effective;
        runs.push_back(r);
    }
    j["runs"] = runs;
    return j.dump(2) + "\n";
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "# schema=1\n";
    out += "parameter,value,mean_cum_error,stddev_cum_error,mean_final_deviation,"
           "stddev_final_deviation,flops_total,sublayer_speedup\n";
    for (const SweepRow& row : rows) {
        out += row.parameter;
        out += ',';
        out += format_double(row.value);
        out += ',';
        out += format_double(row.mean_cum_error);
        out += ',';
        out += format_double(row.stddev_cum_error);
        out += ',';
        out += format_double(row.mean_final_deviation);
        out += ',';
        out += format_double(row.stddev_final_deviation);
        out += ',';
        out += std::to_string(row.flops_total);
        out += ',';
        out += format_double(row.sublayer_speedup);
        out += '\n';
    }
    return out;
}

std::string deviations_csv(const std::vector<DeviationRow>& rows) {
    std::string out = "# schema=1\n";
    out += "step,latent_deviation,cum_latent_deviation,j_effective,cum_j_effective\n";
    for (const DeviationRow& row : rows) {
        out += std::to_string(row.step);
        out += ',';
        out += format_double(row.latent_deviation);
        out += ',';
        out += format_double(row.cum_latent_deviation);
        out += ',';
        out += format_double(row.effective);
        out += ',';
        out += format_double(row.cum_effective);
        out += '\n';
    }
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw ConfigError("cannot open for writing: " + path);
    }
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) {
        throw ConfigError("failed while writing: " + path);
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw ConfigError("cannot open: " + path);
    }
    std::string out((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (f.bad()) {
        throw ConfigError("failed while reading: " + path);
    }
    return out;
}

namespace {

void write_latents_bin(const std::string& path, const ExperimentResult& result) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw ConfigError("cannot open for writing: " + path);
    }
    auto put_u64 = [&f](std::uint64_t v) {
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    };
    const auto& runs = result.runs;
    const std::uint64_t run_count = runs.size();
    const std::uint64_t steps = runs.empty() ? 0 : runs.front().trajectory.latents.size();
    const std::uint64_t rows = runs.empty() ? 0 : runs.front().trajectory.initial.rows();
    const std::uint64_t cols = runs.empty() ? 0 : runs.front().trajectory.initial.cols();
    put_u64(run_count);
    put_u64(steps);
    put_u64(rows);
    put_u64(cols);
    for (const RunReport& run : runs) {
        for (const FeatureTensor& x : run.trajectory.latents) {
            f.write(reinterpret_cast<const char*>(x.data()),
                    static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(
                                                                      x.rows() * x.cols())));
        }
    }
    if (!f) {
        throw ConfigError("failed while writing: " + path);
    }
}

}  // namespace

void write_outputs(const ExperimentResult& result) {
    const ExperimentConfig& cfg = result.resolved;
    if (cfg.out_dir.empty()) {
        throw ConfigError("no output directory configured");
    }
    std::filesystem::create_directories(cfg.out_dir);
    const std::string base = cfg.out_dir + "/";

    write_text_file(base + "config.json", cfg.to_json());
    write_text_file(base + "schedule.csv", result.schedule.to_text());
    write_text_file(base + "runs.csv", runs_csv(result));
    write_text_file(base + "block_errors.csv", block_errors_csv(result));
    write_text_file(base + "summary.json", summary_json(result));
    if (cfg.strategy == StrategyChoice::goc) {
        write_text_file(base + "plan.csv", result.plan.to_text());
        write_text_file(base + "stats.json", result.stats.to_json());
    }
    if (cfg.keep_latents) {
        write_latents_bin(base + "latents.bin", result);
    }

    ordered_json meta;
    meta["written_at"] = iso_utc_now();
    ordered_json walls = ordered_json::array();
    double total_wall = 0.0;
    for (const RunReport& run : result.runs) {
        walls.push_back(run.wall_seconds);
        total_wall += run.wall_seconds;
    }
    meta["wall_seconds"] = walls;
    meta["total_wall_seconds"] = total_wall;
    write_text_file(base + "meta.json", meta.dump(2) + "\n");
}

}  // namespace gradcache
