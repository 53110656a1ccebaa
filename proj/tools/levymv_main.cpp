#include "levymv/errors.hpp"
#include "levymv/experiment.hpp"
#include "levymv/probes.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct CommonOptions {
    std::string config_path;
    std::string out_path;
    std::string svg_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> reps;
    std::optional<int> threads;
    std::optional<std::string> levels_range; // "a..b"
    bool paper_scale = false;
};

void attach_common(CLI::App* cmd, CommonOptions& opts, bool with_outputs) {
    cmd->add_option("--config", opts.config_path, "JSON config file");
    cmd->add_option("--seed", opts.seed, "Master seed (overrides config and LEVY_MV_SEED)");
    cmd->add_option("--threads", opts.threads, "Worker threads (0 = hardware)");
    cmd->add_option("--reps", opts.reps, "Number of repetitions M");
    cmd->add_option("--levels", opts.levels_range, "Inclusive dyadic level range, e.g. 1..6");
    cmd->add_flag("--paper-scale", opts.paper_scale, "Use the N=500 particle count");
    if (with_outputs) {
        cmd->add_option("--out", opts.out_path, "Output CSV path (manifest written alongside)");
        cmd->add_option("--svg", opts.svg_path, "Also write a rate plot (convergence only)");
    }
}

std::vector<int> parse_level_range(const std::string& text) {
    const auto dots = text.find("..");
    if (dots == std::string::npos)
        throw std::invalid_argument("--levels expects an inclusive range like 1..6");
    std::size_t used_a = 0, used_b = 0;
    int a = 0, b = 0;
    try {
        a = std::stoi(text.substr(0, dots), &used_a);
        b = std::stoi(text.substr(dots + 2), &used_b);
    } catch (const std::exception&) {
        throw std::invalid_argument("--levels expects an inclusive range like 1..6");
    }
    if (used_a != dots || used_b != text.size() - dots - 2 || a > b)
        throw std::invalid_argument("--levels expects an inclusive range like 1..6");
    std::vector<int> levels;
    for (int l = a; l <= b; ++l) levels.push_back(l);
    return levels;
}

levymv::ExperimentConfig build_config(const CommonOptions& opts, levymv::ExperimentKind kind) {
    nlohmann::json j = nlohmann::json::object();
    if (!opts.config_path.empty()) {
        std::ifstream in(opts.config_path);
        if (!in)
            throw std::invalid_argument("cannot open config file '" + opts.config_path + "'");
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("config '" + opts.config_path + "': " + e.what());
        }
    }
    levymv::ExperimentConfig cfg = levymv::config_from_json(j);
    cfg.kind = kind;

    if (opts.seed) {
        cfg.seed = *opts.seed;
    } else if (!j.contains("seed")) {
        if (const char* env = std::getenv("LEVY_MV_SEED")) {
            char* end = nullptr;
            const unsigned long long v = std::strtoull(env, &end, 10);
            if (end == env || *end != '\0')
                throw std::invalid_argument("LEVY_MV_SEED is not an unsigned integer: '" +
                                            std::string(env) + "'");
            cfg.seed = v;
        }
    }
    if (opts.reps) cfg.repetitions = *opts.reps;
    if (opts.threads) cfg.threads = *opts.threads;
    if (opts.levels_range) cfg.levels = parse_level_range(*opts.levels_range);
    if (opts.paper_scale) cfg.n_particles = 500;
    return cfg;
}

int run_experiment_command(const CommonOptions& opts, levymv::ExperimentKind kind) {
    if (!opts.svg_path.empty() && kind != levymv::ExperimentKind::convergence)
        throw std::invalid_argument("--svg applies to convergence runs only");
    const levymv::ExperimentConfig cfg = build_config(opts, kind);
    const auto started = std::chrono::steady_clock::now();
    const levymv::RunOutcome outcome = levymv::run_experiment(cfg);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    const std::string out_path =
        opts.out_path.empty() ? levymv::to_string(kind) + ".csv" : opts.out_path;
    levymv::write_results(outcome.table, out_path);
    levymv::write_manifest(cfg, outcome, out_path, wall);
    if (!opts.svg_path.empty()) {
        if (!outcome.fit)
            throw std::invalid_argument("--svg applies to convergence runs only");
        levymv::write_convergence_svg(outcome.table, *outcome.fit, opts.svg_path);
    }

    std::cout << levymv::to_string(kind) << ": " << outcome.summary << "\n";
    std::cout << "wrote " << out_path << " and " << levymv::manifest_path_for(out_path).string();
    if (!opts.svg_path.empty()) std::cout << " and " << opts.svg_path;
    std::cout << "\n";
    if (outcome.failed_repetitions > 0) {
        std::cerr << outcome.failed_repetitions << " repetition(s) failed:\n";
        for (const std::string& note : outcome.failure_notes) std::cerr << "  " << note << "\n";
    }
    return 0;
}

int run_validate_command(const CommonOptions& opts, std::size_t samples) {
    const levymv::ExperimentConfig cfg = build_config(opts, levymv::ExperimentKind::simulate);
    const levymv::McKeanVlasovModel model = levymv::make_builtin_model(cfg.model, cfg.ou_sigma);
    const auto reports = levymv::run_taming_probes(model, cfg.h0, samples, cfg.seed);
    bool all_pass = true;
    for (const levymv::ProbeReport& r : reports) {
        const bool pass = r.violations == 0;
        all_pass = all_pass && pass;
        std::printf("%-18s %s  (%zu samples, %zu violations, worst ratio %.15g)\n",
                    r.condition.c_str(), pass ? "pass" : "FAIL", r.samples, r.violations,
                    r.worst_ratio);
    }
    return all_pass ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tamed adaptive Euler particle scheme for Levy-driven mean-field SDEs"};
    app.require_subcommand(1);

    struct Command {
        levymv::ExperimentKind kind;
        CommonOptions opts;
        CLI::App* cmd = nullptr;
    };
    std::vector<Command> commands;
    commands.push_back({levymv::ExperimentKind::simulate, {}, nullptr});
    commands.push_back({levymv::ExperimentKind::convergence, {}, nullptr});
    commands.push_back({levymv::ExperimentKind::moments, {}, nullptr});
    commands.push_back({levymv::ExperimentKind::steps, {}, nullptr});
    commands.push_back({levymv::ExperimentKind::chaos, {}, nullptr});
    const char* descriptions[] = {
        "Write the terminal ensemble of one run",
        "Coupled-level strong error against the level index, with the fitted rate",
        "Moment trajectory at integer times",
        "Adaptive step-count statistics per level",
        "Empirical-law deviation against the particle count",
    };
    for (std::size_t i = 0; i < commands.size(); ++i) {
        commands[i].cmd = app.add_subcommand(levymv::to_string(commands[i].kind), descriptions[i]);
        attach_common(commands[i].cmd, commands[i].opts, true);
    }

    CommonOptions validate_opts;
    std::size_t validate_samples = 10000;
    CLI::App* validate_cmd =
        app.add_subcommand("validate", "Check the scheme's structural bounds on random inputs");
    attach_common(validate_cmd, validate_opts, false);
    validate_cmd->add_option("--samples", validate_samples, "Random probe points");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (validate_cmd->parsed()) return run_validate_command(validate_opts, validate_samples);
        for (const Command& c : commands)
            if (c.cmd->parsed()) return run_experiment_command(c.opts, c.kind);
        std::cerr << "no subcommand selected\n";
        return 1;
    } catch (const levymv::NumericOverflowError& e) {
        std::cerr << "numeric failure: " << e.what();
        if (e.step_index >= 0 || e.particle_index >= 0)
            std::cerr << " [step " << e.step_index << ", particle " << e.particle_index << "]";
        std::cerr << "\n";
        return 2;
    } catch (const levymv::DegenerateInputError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
