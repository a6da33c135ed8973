#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gradcache/harness.hpp"
#include "gradcache/text.hpp"

using namespace gradcache;

namespace {

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> runs;
    std::optional<std::string> strategy;
    std::optional<int> cache_level;
    std::optional<double> eta;
    std::optional<double> gamma;
    std::optional<double> threshold;
    bool shadow = false;
    std::string out;
};

void add_common(CLI::App* cmd, Overrides& o, const char* out_help) {
    cmd->add_option("--config", o.config_path, "experiment config file (JSON)");
    cmd->add_option("--seed", o.seed, "base seed override");
    cmd->add_option("--runs", o.runs, "run count override");
    cmd->add_option("--strategy", o.strategy, "none|normal|gc|goc");
    cmd->add_option("--cache-level", o.cache_level, "0|25|50");
    cmd->add_option("--eta", o.eta, "gradient extrapolation coefficient");
    cmd->add_option("--gamma", o.gamma, "position-vs-statistics weight");
    cmd->add_option("--threshold", o.threshold, "gating threshold");
    cmd->add_flag("--shadow", o.shadow, "recompute skipped sublayers to measure reuse error");
    cmd->add_option("--out", o.out, out_help);
}

ExperimentConfig load_config(const Overrides& o) {
    ExperimentConfig cfg;
    if (!o.config_path.empty()) {
        cfg = ExperimentConfig::from_file(o.config_path);
    }
    if (o.seed) cfg.seed = *o.seed;
    if (o.runs) cfg.run_count = *o.runs;
    if (o.strategy) cfg.strategy = parse_strategy_choice(*o.strategy);
    if (o.cache_level) cfg.cache_level = *o.cache_level;
    if (o.eta) cfg.gc.eta = *o.eta;
    if (o.gamma) cfg.god.gamma = *o.gamma;
    if (o.threshold) cfg.god.threshold = *o.threshold;
    if (o.shadow) cfg.shadow = true;
    return cfg;
}

void write_file_making_dirs(const std::string& path, const std::string& content) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    write_text_file(path, content);
}

int cmd_profile(const Overrides& o) {
    ExperimentConfig cfg = load_config(o);
    cfg.validate();
    const StatsTable stats = profile_for_config(cfg);
    std::string path = !o.out.empty() ? o.out
                       : !cfg.out_dir.empty() ? cfg.out_dir + "/stats.json"
                                              : std::string("stats.json");
    write_file_making_dirs(path, stats.to_json());
    std::printf("wrote %s (prompts=%d, steps=%d, depth=%d)\n", path.c_str(), stats.prompt_count,
                stats.step_count, stats.depth);
    return 0;
}

int cmd_plan(const Overrides& o) {
    ExperimentConfig cfg = load_config(o);
    cfg.strategy = StrategyChoice::goc;
    cfg.validate();
    const StatsTable stats = stats_for_config(cfg);
    const GodPolicy policy(cfg.god, stats);
    const CacheSchedule schedule =
        level_schedule(cfg.step_count, cfg.cache_level, ReuseStrategy::policy_decided);
    const StrategyPlan plan = build_plan(schedule, policy);
    std::string path = !o.out.empty() ? o.out
                       : !cfg.out_dir.empty() ? cfg.out_dir + "/plan.csv"
                                              : std::string("plan.csv");
    write_file_making_dirs(path, plan.to_text());
    int gc_steps = 0;
    for (const PlanRow& row : plan.rows) {
        gc_steps += row.resolved == ReuseStrategy::gradient ? 1 : 0;
    }
    std::printf("wrote %s (%zu skip steps, %d gradient, %d plain)\n", path.c_str(),
                plan.rows.size(), gc_steps, static_cast<int>(plan.rows.size()) - gc_steps);
    return 0;
}

int cmd_run(const Overrides& o) {
    ExperimentConfig cfg = load_config(o);
    if (!o.out.empty()) {
        cfg.out_dir = o.out;
    }
    const ExperimentResult result = run_experiment(cfg);
    std::fputs(summary_json(result).c_str(), stdout);
    if (!result.resolved.out_dir.empty()) {
        std::fprintf(stderr, "outputs written to %s\n", result.resolved.out_dir.c_str());
    }
    return 0;
}

int cmd_sweep(const Overrides& o, const std::string& param, const std::vector<double>& values) {
    ExperimentConfig cfg = load_config(o);
    if (!o.out.empty()) {
        cfg.out_dir = o.out;
    }
    const std::vector<SweepRow> rows = sweep(cfg, parse_sweep_parameter(param), values);
    std::fputs(sweep_csv(rows).c_str(), stdout);
    return 0;
}

int cmd_report(const Overrides& o) {
    ExperimentConfig cfg = load_config(o);
    std::string dir = !o.out.empty() ? o.out : cfg.out_dir;
    cfg.out_dir.clear();
    cfg.keep_latents = false;
    const ExperimentResult cached = run_experiment(cfg);

    ExperimentConfig ref_cfg = cfg;
    ref_cfg.strategy = StrategyChoice::none;
    ref_cfg.cache_level = 0;
    ref_cfg.shadow = false;
    const ExperimentResult reference = run_experiment(ref_cfg);

    std::string out = "# schema=1\n";
    out += "run,step,latent_deviation,cum_latent_deviation,j_effective,cum_j_effective\n";
    for (std::size_t r = 0; r < cached.runs.size(); ++r) {
        const auto rows = error_report(cached.runs[r], reference.runs[r]);
        for (const DeviationRow& row : rows) {
            out += std::to_string(cached.runs[r].run_index);
            out += ',';
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
    }
    if (dir.empty()) {
        dir = ".";
    }
    std::filesystem::create_directories(dir);
    write_text_file(dir + "/deviations.csv", out);
    for (std::size_t r = 0; r < cached.runs.size(); ++r) {
        const double dev = l1_total(cached.runs[r].trajectory.final_latent() -
                                    reference.runs[r].trajectory.final_latent());
        std::printf("run %zu: final deviation %s\n", r, format_double(dev).c_str());
    }
    std::printf("wrote %s/deviations.csv\n", dir.c_str());
    return 0;
}

int cmd_oracle_check(const Overrides& o) {
    ScriptSpec spec;
    spec.tokens = 6;
    spec.channels = 5;
    spec.seed = o.seed.value_or(7);
    const ScriptTerm affine{ScriptFamily::affine, 0.5, 0.3, 0.0, 0.0, 8.0};
    const ScriptTerm quad{ScriptFamily::quadratic, 0.1, 0.2, 0.05, 0.0, 8.0};
    const ScriptTerm sine{ScriptFamily::sine, 0.2, 0.0, 0.0, 0.7, 9.0};
    const ScriptTerm alt{ScriptFamily::alternating, 0.0, 0.0, 0.0, 0.4, 8.0};
    spec.blocks = {
        BlockScript{affine, affine, affine},
        BlockScript{quad, quad, quad},
        BlockScript{sine, sine, sine},
        BlockScript{alt, alt, alt},
    };

    GcConfig gc;
    if (o.eta) {
        gc.eta = *o.eta;
    }

    bool all_ok = true;
    for (const ReuseStrategy strategy : {ReuseStrategy::normal, ReuseStrategy::gradient}) {
        for (const int level : {25, 50}) {
            ExperimentConfig cfg;
            cfg.variant = ModelVariant::scripted;
            cfg.script = spec;
            cfg.step_count = 12;
            cfg.strategy = strategy == ReuseStrategy::normal ? StrategyChoice::normal
                                                             : StrategyChoice::gc;
            cfg.cache_level = level;
            cfg.gc = gc;
            cfg.shadow = true;
            const ExperimentResult result = run_experiment(cfg);

            const CacheSchedule schedule = level_schedule(cfg.step_count, level, strategy);
            const auto exact = exact_cache_errors(spec, schedule, gc);

            const auto& measured = result.runs.front().shadow;
            double max_diff = 0.0;
            bool aligned = measured.size() == exact.size();
            if (aligned) {
                for (std::size_t i = 0; i < exact.size(); ++i) {
                    aligned = aligned && measured[i].gen_step == exact[i].step &&
                              measured[i].block == exact[i].block;
                    if (!aligned) {
                        break;
                    }
                    max_diff = std::max(
                        {max_diff, std::abs(measured[i].single_normal - exact[i].single_normal),
                         std::abs(measured[i].single_applied - exact[i].single_applied),
                         std::abs(measured[i].effective - exact[i].effective)});
                }
            }
            const bool ok = aligned && max_diff <= 1e-9;
            all_ok = all_ok && ok;
            std::printf("[%s] strategy=%s level=%d max_diff=%s\n", ok ? "PASS" : "FAIL",
                        to_string(strategy), level,
                        aligned ? format_double(max_diff).c_str() : "misaligned rows");
        }
    }
    return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"diffusion-transformer cache experiment harness"};
    app.require_subcommand(1);

    Overrides o;
    CLI::App* profile_cmd =
        app.add_subcommand("profile", "cache-free sampling over K prompts; writes the stats file");
    add_common(profile_cmd, o, "stats output file (default stats.json)");

    CLI::App* plan_cmd =
        app.add_subcommand("plan", "resolve per-step reuse decisions from profiled statistics");
    add_common(plan_cmd, o, "plan output file (default plan.csv)");

    CLI::App* run_cmd = app.add_subcommand("run", "run the configured experiment");
    add_common(run_cmd, o, "output directory");

    CLI::App* sweep_cmd =
        app.add_subcommand("sweep", "re-run the experiment across parameter values");
    add_common(sweep_cmd, o, "output directory");
    std::string sweep_param;
    std::vector<double> sweep_values;
    sweep_cmd->add_option("--param", sweep_param, "eta|gamma|threshold")->required();
    sweep_cmd->add_option("--values", sweep_values, "comma-separated values")
        ->required()
        ->delimiter(',');

    CLI::App* report_cmd =
        app.add_subcommand("report", "per-step deviation of the configured run vs no-cache");
    add_common(report_cmd, o, "output directory");

    CLI::App* oracle_cmd = app.add_subcommand(
        "oracle-check", "verify shadow-measured reuse errors match the closed forms");
    add_common(oracle_cmd, o, "(unused)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (profile_cmd->parsed()) return cmd_profile(o);
        if (plan_cmd->parsed()) return cmd_plan(o);
        if (run_cmd->parsed()) return cmd_run(o);
        if (sweep_cmd->parsed()) return cmd_sweep(o, sweep_param, sweep_values);
        if (report_cmd->parsed()) return cmd_report(o);
        if (oracle_cmd->parsed()) return cmd_oracle_check(o);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
