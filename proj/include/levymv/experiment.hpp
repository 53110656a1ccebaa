#pragma once

#include "levymv/measure_analysis.hpp"
#include "levymv/scheme.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace levymv {

enum class ExperimentKind { simulate, convergence, moments, steps, chaos };

enum class GammaInterpretation { rate, scale };

// The config file carries one positive Gamma parameter next to the shape;
// whether it is the rate (inverse scale) or the scale is made explicit.  The
// default reading is scale, which is what reproduces the benchmark's
// convergence rate; see configs/ for both variants.
struct GammaConfig {
    double shape = 1.0;
    double rate_or_scale = 5.0;
    GammaInterpretation interpretation = GammaInterpretation::scale;

    BilateralGammaParams resolved() const;
};

struct ExperimentConfig {
    std::string model = "paper-ptvd";
    double ou_sigma = 0.5; // used by the "ou" builtin only
    Eigen::VectorXd x0 = Eigen::VectorXd::Ones(1);
    Eigen::Index n_particles = 100;
    double terminal_time = 10.0;
    double h0 = 1.0;
    std::uint64_t seed = 12345;
    int repetitions = 200;
    std::vector<int> levels = {1, 2, 3, 4, 5, 6}; // dyadic exponents, delta = 2^-level
    GammaConfig gamma;
    ExperimentKind kind = ExperimentKind::convergence;
    std::vector<Eigen::Index> chaos_sizes = {50, 100, 200, 400};
    int threads = 0; // 0 = hardware concurrency

    // Compile-time model extension point: when set, this model is used
    // instead of looking `model` up by name.  Not reachable from JSON.
    std::shared_ptr<const McKeanVlasovModel> custom_model;
};

ExperimentKind experiment_kind_from_string(const std::string& name);
std::string to_string(ExperimentKind kind);

// Strict JSON parsing: unknown keys, malformed values and out-of-range
// parameters all raise std::invalid_argument.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& config);

// FNV-1a over the canonical JSON rendering of the config.
std::uint64_t config_hash(const ExperimentConfig& config);

// Columns of doubles; integer quantities are stored exactly (they are far
// below 2^53) and render without a decimal point.
struct ResultTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

struct RunOutcome {
    ResultTable table;
    std::optional<RateFit> fit; // convergence runs only
    int failed_repetitions = 0;
    std::vector<std::string> failure_notes;
    std::string summary;
};

// One repetition is the unit of parallelism; every repetition draws from its
// own (repetition, particle, channel) substream addresses and lands in a
// preassigned slot, so results are identical for any worker count.  A failed
// repetition contributes no rows; it is counted and reported instead.
RunOutcome run_simulate(const ExperimentConfig& config);
RunOutcome run_convergence(const ExperimentConfig& config);
RunOutcome run_moments(const ExperimentConfig& config);
RunOutcome run_steps(const ExperimentConfig& config);
RunOutcome run_chaos(const ExperimentConfig& config);
RunOutcome run_experiment(const ExperimentConfig& config); // dispatch on config.kind

// RFC-4180 CSV: header line plus one line per row, LF line ends.  Refuses to
// write an empty table (std::invalid_argument) and creates no file then.
void write_results(const ResultTable& table, const std::filesystem::path& csv_path);

// Sidecar metadata next to the CSV, at manifest_path_for(csv_path).
std::filesystem::path manifest_path_for(const std::filesystem::path& csv_path);
void write_manifest(const ExperimentConfig& config, const RunOutcome& outcome,
                    const std::filesystem::path& csv_path, double wall_seconds);

// Self-contained SVG scatter of log2(mse) against level with the fitted
// line; expects a convergence table.
void write_convergence_svg(const ResultTable& table, const RateFit& fit,
                           const std::filesystem::path& svg_path);

} // namespace levymv
