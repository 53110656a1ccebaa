#include "levymv/experiment.hpp"

#include "levymv/errors.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace levymv {

namespace {

constexpr const char* kArtifactName = "levymv";
constexpr const char* kArtifactVersion = "0.1.0";

// Substream repetition ids are partitioned into blocks of 2^24 so that
// different experiment stages never reuse an address.
std::uint32_t rep_address(std::uint32_t block, std::uint32_t index) {
    return (block << 24) | index;
}

void validate_config(const ExperimentConfig& cfg) {
    if (cfg.x0.size() == 0 || !cfg.x0.allFinite())
        throw std::invalid_argument("config: x0 must be a non-empty finite vector");
    if (cfg.n_particles < 1)
        throw std::invalid_argument("config: N must be >= 1");
    if (!std::isfinite(cfg.terminal_time) || cfg.terminal_time <= 0.0)
        throw std::invalid_argument("config: T must be finite and > 0");
    if (!std::isfinite(cfg.h0) || cfg.h0 <= 0.0)
        throw std::invalid_argument("config: h0 must be finite and > 0");
    if (cfg.repetitions < 1)
        throw std::invalid_argument("config: M must be >= 1");
    if (cfg.levels.empty())
        throw std::invalid_argument("config: levels must be non-empty");
    for (int l : cfg.levels)
        if (l < 0 || l > 40)
            throw std::invalid_argument("config: levels must lie in [0, 40]");
    if (!std::isfinite(cfg.gamma.shape) || cfg.gamma.shape <= 0.0)
        throw std::invalid_argument("config: gamma.shape must be finite and > 0");
    if (!std::isfinite(cfg.gamma.rate_or_scale) || cfg.gamma.rate_or_scale <= 0.0)
        throw std::invalid_argument("config: gamma.rate_or_scale must be finite and > 0");
    if (cfg.chaos_sizes.size() > 14)
        throw std::invalid_argument("config: at most 14 chaos sizes are supported");
    for (Eigen::Index n : cfg.chaos_sizes)
        if (n < 1 || n > 1000000)
            throw std::invalid_argument("config: chaos sizes must lie in [1, 1000000]");
    if (cfg.threads < 0)
        throw std::invalid_argument("config: threads must be >= 0");
}

struct RunContext {
    McKeanVlasovModel model;
    BilateralGammaParams gamma;
    NoiseStream noise;
    ParticleEnsemble initial; // n_particles x d at time 0
};

RunContext make_context(const ExperimentConfig& cfg) {
    validate_config(cfg);
    RunContext ctx;
    ctx.model = cfg.custom_model ? *cfg.custom_model
                                 : make_builtin_model(cfg.model, cfg.ou_sigma);
    if (cfg.x0.size() != ctx.model.dimension)
        throw std::invalid_argument("config: x0 has dimension " + std::to_string(cfg.x0.size()) +
                                    " but model '" + ctx.model.name + "' expects " +
                                    std::to_string(ctx.model.dimension));
    ctx.gamma = cfg.gamma.resolved();
    ctx.noise = NoiseStream(cfg.seed);
    ctx.initial.states = cfg.x0.transpose().replicate(cfg.n_particles, 1);
    ctx.initial.time = 0.0;
    return ctx;
}

ParticleEnsemble initial_of_size(const ExperimentConfig& cfg, const RunContext& ctx,
                                 Eigen::Index n) {
    ParticleEnsemble e;
    e.states = cfg.x0.transpose().replicate(n, 1);
    e.time = 0.0;
    (void)ctx;
    return e;
}

// Runs body(0..n_tasks-1) on a fixed-slot basis: the work distribution may
// depend on the worker count, the results may not.  body must not throw.
void parallel_for(int n_tasks, int requested_threads, const std::function<void(int)>& body) {
    int workers = requested_threads > 0 ? requested_threads
                                        : int(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
    workers = std::min(workers, n_tasks);
    if (workers <= 1) {
        for (int i = 0; i < n_tasks; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    auto drain = [&]() {
        for (;;) {
            const int i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= n_tasks) return;
            body(i);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(drain);
    for (std::thread& th : pool) th.join();
}

std::string describe_failure(const std::exception& e) {
    if (const auto* overflow = dynamic_cast<const NumericOverflowError*>(&e)) {
        std::string note = overflow->what();
        note += " [step " + std::to_string(overflow->step_index) + ", particle " +
                std::to_string(overflow->particle_index) + "]";
        return note;
    }
    return e.what();
}

void collect_failures(const std::vector<std::string>& task_errors, const char* unit,
                      RunOutcome& out) {
    for (std::size_t i = 0; i < task_errors.size(); ++i) {
        if (task_errors[i].empty()) continue;
        ++out.failed_repetitions;
        if (out.failure_notes.size() < 32)
            out.failure_notes.push_back(std::string(unit) + " " + std::to_string(i) + ": " +
                                        task_errors[i]);
    }
}

std::string format_double(double v) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc())
        throw std::runtime_error("failed to format a number");
    return std::string(buf, end);
}

double delta_of_level(int level) { return std::ldexp(1.0, -level); }

std::vector<double> snapshot_times_for(double T) {
    std::vector<double> times;
    for (double t = 1.0; t <= T; t += 1.0) times.push_back(t);
    if (times.empty() || times.back() != T) times.push_back(T);
    return times;
}

double sample_sd(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= double(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / double(xs.size() - 1));
}

} // namespace

BilateralGammaParams GammaConfig::resolved() const {
    BilateralGammaParams p;
    p.shape = shape;
    p.rate = interpretation == GammaInterpretation::rate ? rate_or_scale : 1.0 / rate_or_scale;
    return p;
}

ExperimentKind experiment_kind_from_string(const std::string& name) {
    if (name == "simulate") return ExperimentKind::simulate;
    if (name == "convergence") return ExperimentKind::convergence;
    if (name == "moments") return ExperimentKind::moments;
    if (name == "steps") return ExperimentKind::steps;
    if (name == "chaos") return ExperimentKind::chaos;
    throw std::invalid_argument("unknown experiment '" + name +
                                "' (known: simulate, convergence, moments, steps, chaos)");
}

std::string to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::simulate: return "simulate";
        case ExperimentKind::convergence: return "convergence";
        case ExperimentKind::moments: return "moments";
        case ExperimentKind::steps: return "steps";
        case ExperimentKind::chaos: return "chaos";
    }
    return "unknown";
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    try {
        if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
        static const std::set<std::string> known = {"model", "ou_sigma", "x0",     "N",
                                                    "T",     "h0",       "seed",   "M",
                                                    "levels", "gamma",   "experiment",
                                                    "chaos_sizes"};
        for (const auto& item : j.items())
            if (!known.count(item.key()))
                throw std::invalid_argument("config: unknown key '" + item.key() + "'");

        if (j.contains("model")) cfg.model = j.at("model").get<std::string>();
        if (j.contains("ou_sigma")) cfg.ou_sigma = j.at("ou_sigma").get<double>();
        if (j.contains("x0")) {
            const auto& x0 = j.at("x0");
            if (x0.is_number()) {
                cfg.x0 = Eigen::VectorXd::Constant(1, x0.get<double>());
            } else if (x0.is_array() && !x0.empty()) {
                cfg.x0.resize(Eigen::Index(x0.size()));
                for (std::size_t i = 0; i < x0.size(); ++i)
                    cfg.x0[Eigen::Index(i)] = x0.at(i).get<double>();
            } else {
                throw std::invalid_argument("config: x0 must be a number or non-empty array");
            }
        }
        if (j.contains("N")) cfg.n_particles = j.at("N").get<Eigen::Index>();
        if (j.contains("T")) cfg.terminal_time = j.at("T").get<double>();
        if (j.contains("h0")) cfg.h0 = j.at("h0").get<double>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("M")) cfg.repetitions = j.at("M").get<int>();
        if (j.contains("levels")) {
            cfg.levels = j.at("levels").get<std::vector<int>>();
        }
        if (j.contains("gamma")) {
            const auto& g = j.at("gamma");
            if (!g.is_object()) throw std::invalid_argument("config: gamma must be an object");
            for (const auto& item : g.items())
                if (item.key() != "shape" && item.key() != "rate_or_scale" &&
                    item.key() != "interpretation")
                    throw std::invalid_argument("config: unknown key 'gamma." + item.key() + "'");
            if (g.contains("shape")) cfg.gamma.shape = g.at("shape").get<double>();
            if (g.contains("rate_or_scale"))
                cfg.gamma.rate_or_scale = g.at("rate_or_scale").get<double>();
            if (g.contains("interpretation")) {
                const std::string v = g.at("interpretation").get<std::string>();
                if (v == "rate")
                    cfg.gamma.interpretation = GammaInterpretation::rate;
                else if (v == "scale")
                    cfg.gamma.interpretation = GammaInterpretation::scale;
                else
                    throw std::invalid_argument(
                        "config: gamma.interpretation must be 'rate' or 'scale'");
            }
        }
        if (j.contains("experiment"))
            cfg.kind = experiment_kind_from_string(j.at("experiment").get<std::string>());
        if (j.contains("chaos_sizes"))
            cfg.chaos_sizes = j.at("chaos_sizes").get<std::vector<Eigen::Index>>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    validate_config(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config '" + path.string() + "': " + e.what());
    }
    return config_from_json(j);
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["model"] = cfg.model;
    j["ou_sigma"] = cfg.ou_sigma;
    j["x0"] = std::vector<double>(cfg.x0.begin(), cfg.x0.end());
    j["N"] = cfg.n_particles;
    j["T"] = cfg.terminal_time;
    j["h0"] = cfg.h0;
    j["seed"] = cfg.seed;
    j["M"] = cfg.repetitions;
    j["levels"] = cfg.levels;
    j["gamma"] = {{"shape", cfg.gamma.shape},
                  {"rate_or_scale", cfg.gamma.rate_or_scale},
                  {"interpretation",
                   cfg.gamma.interpretation == GammaInterpretation::rate ? "rate" : "scale"}};
    j["experiment"] = to_string(cfg.kind);
    j["chaos_sizes"] = cfg.chaos_sizes;
    return j;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    const std::string dump = config_to_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ull; // FNV-1a
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

RunOutcome run_simulate(const ExperimentConfig& cfg) {
    RunContext ctx = make_context(cfg);
    SchemeConfig scheme{delta_of_level(cfg.levels.front()), cfg.h0, cfg.terminal_time};
    AdvanceResult res = advance_to(ctx.model, ctx.initial, scheme, ctx.noise, ctx.gamma,
                                   rep_address(0, 0));
    RunOutcome out;
    out.table.columns.push_back("particle");
    for (Eigen::Index c = 0; c < ctx.model.dimension; ++c)
        out.table.columns.push_back("x" + std::to_string(c + 1));
    for (Eigen::Index i = 0; i < res.ensemble.size(); ++i) {
        std::vector<double> row;
        row.push_back(double(i));
        for (Eigen::Index c = 0; c < ctx.model.dimension; ++c)
            row.push_back(res.ensemble.states(i, c));
        out.table.rows.push_back(std::move(row));
    }
    out.summary = "terminal ensemble at T=" + format_double(cfg.terminal_time) + " after " +
                  std::to_string(res.log.step_count) + " adaptive steps (delta=" +
                  format_double(scheme.delta) + ")";
    return out;
}

RunOutcome run_convergence(const ExperimentConfig& cfg) {
    RunContext ctx = make_context(cfg);
    const int m = cfg.repetitions;
    const int n_levels = int(cfg.levels.size());
    const Eigen::Index n = cfg.n_particles, d = ctx.model.dimension;

    struct Cell {
        Eigen::MatrixXd fine, coarse;
        double steps_fine = 0.0, steps_coarse = 0.0;
    };
    std::vector<std::vector<Cell>> slots(static_cast<std::size_t>(m));
    std::vector<std::string> errors(static_cast<std::size_t>(m));

    parallel_for(m, cfg.threads, [&](int r) {
        try {
            std::vector<Cell> cells(static_cast<std::size_t>(n_levels));
            for (int li = 0; li < n_levels; ++li) {
                const int level = cfg.levels[std::size_t(li)];
                SchemeConfig fine{delta_of_level(level + 1), cfg.h0, cfg.terminal_time};
                SchemeConfig coarse{delta_of_level(level), cfg.h0, cfg.terminal_time};
                CoupledResult res =
                    advance_coupled(ctx.model, ctx.initial, fine, coarse, ctx.noise, ctx.gamma,
                                    rep_address(std::uint32_t(1 + level), std::uint32_t(r)));
                cells[std::size_t(li)].fine = std::move(res.fine.ensemble.states);
                cells[std::size_t(li)].coarse = std::move(res.coarse.ensemble.states);
                cells[std::size_t(li)].steps_fine = double(res.fine.log.step_count);
                cells[std::size_t(li)].steps_coarse = double(res.coarse.log.step_count);
            }
            slots[std::size_t(r)] = std::move(cells);
        } catch (const std::exception& e) {
            errors[std::size_t(r)] = describe_failure(e);
        }
    });

    RunOutcome out;
    collect_failures(errors, "repetition", out);
    out.table.columns = {"level",           "delta_fine",       "delta_coarse", "mse",
                         "mean_steps_fine", "mean_steps_coarse", "m_repetitions"};

    std::vector<LevelErrorPoint> points;
    for (int li = 0; li < n_levels; ++li) {
        const int level = cfg.levels[std::size_t(li)];
        int ok = 0;
        for (int r = 0; r < m; ++r)
            if (errors[std::size_t(r)].empty()) ++ok;
        if (ok == 0)
            throw NumericOverflowError("convergence: all repetitions failed (" +
                                           (out.failure_notes.empty() ? std::string("no detail")
                                                                      : out.failure_notes.front()) +
                                           ")",
                                       -1, -1);
        Eigen::MatrixXd pooled_fine(Eigen::Index(ok) * n, d);
        Eigen::MatrixXd pooled_coarse(Eigen::Index(ok) * n, d);
        double steps_fine = 0.0, steps_coarse = 0.0;
        Eigen::Index at = 0;
        for (int r = 0; r < m; ++r) {
            if (!errors[std::size_t(r)].empty()) continue;
            const Cell& cell = slots[std::size_t(r)][std::size_t(li)];
            pooled_fine.middleRows(at, n) = cell.fine;
            pooled_coarse.middleRows(at, n) = cell.coarse;
            steps_fine += cell.steps_fine;
            steps_coarse += cell.steps_coarse;
            at += n;
        }
        const LevelErrorPoint pt = mse_levels(level, pooled_fine, pooled_coarse, ok);
        points.push_back(pt);
        out.table.rows.push_back({double(level), delta_of_level(level + 1),
                                  delta_of_level(level), pt.mse, steps_fine / double(ok),
                                  steps_coarse / double(ok), double(ok)});
    }

    out.fit = fit_rate(points);
    std::ostringstream summary;
    summary << "beta=" << format_double(out.fit->beta)
            << " intercept=" << format_double(out.fit->intercept)
            << " residual=" << format_double(out.fit->residual_norm) << " levels="
            << cfg.levels.front() << ".." << cfg.levels.back() << " reps=" << m
            << " failures=" << out.failed_repetitions;
    out.summary = summary.str();
    return out;
}

RunOutcome run_moments(const ExperimentConfig& cfg) {
    RunContext ctx = make_context(cfg);
    const int m = cfg.repetitions;
    const std::vector<double> times = snapshot_times_for(cfg.terminal_time);
    SchemeConfig scheme{delta_of_level(cfg.levels.front()), cfg.h0, cfg.terminal_time};

    std::vector<std::vector<ParticleEnsemble>> slots(static_cast<std::size_t>(m));
    std::vector<std::string> errors(static_cast<std::size_t>(m));
    parallel_for(m, cfg.threads, [&](int r) {
        try {
            std::vector<ParticleEnsemble> snaps;
            snaps.reserve(times.size());
            advance_to(ctx.model, ctx.initial, scheme, ctx.noise, ctx.gamma,
                       rep_address(0, std::uint32_t(r)), times,
                       [&snaps](const ParticleEnsemble& e) { snaps.push_back(e); });
            slots[std::size_t(r)] = std::move(snaps);
        } catch (const std::exception& e) {
            errors[std::size_t(r)] = describe_failure(e);
        }
    });

    RunOutcome out;
    collect_failures(errors, "repetition", out);
    out.table.columns = {"time", "moment_p2", "se_p2", "moment_p4", "se_p4", "m_repetitions"};

    for (std::size_t ti = 0; ti < times.size(); ++ti) {
        std::vector<ParticleEnsemble> at_time;
        std::vector<double> rep_p2, rep_p4;
        for (int r = 0; r < m; ++r) {
            if (!errors[std::size_t(r)].empty()) continue;
            const ParticleEnsemble& e = slots[std::size_t(r)][ti];
            at_time.push_back(e);
            rep_p2.push_back(estimate_moment({&e, 1}, 2.0));
            rep_p4.push_back(estimate_moment({&e, 1}, 4.0));
        }
        if (at_time.empty())
            throw NumericOverflowError("moments: all repetitions failed (" +
                                           (out.failure_notes.empty() ? std::string("no detail")
                                                                      : out.failure_notes.front()) +
                                           ")",
                                       -1, -1);
        const int ok = int(at_time.size());
        const double p2 = estimate_moment(at_time, 2.0);
        const double p4 = estimate_moment(at_time, 4.0);
        out.table.rows.push_back({times[ti], p2, sample_sd(rep_p2) / std::sqrt(double(ok)), p4,
                                  sample_sd(rep_p4) / std::sqrt(double(ok)), double(ok)});
    }
    const auto& last = out.table.rows.back();
    out.summary = "moment_p2(T)=" + format_double(last[1]) + " moment_p4(T)=" +
                  format_double(last[3]) + " reps=" + std::to_string(int(last[5])) +
                  " failures=" + std::to_string(out.failed_repetitions);
    return out;
}

RunOutcome run_steps(const ExperimentConfig& cfg) {
    RunContext ctx = make_context(cfg);
    const int m = cfg.repetitions;
    const int n_levels = int(cfg.levels.size());

    struct Cell {
        double steps = 0.0;
        double msd = 0.0;
    };
    std::vector<std::vector<Cell>> slots(static_cast<std::size_t>(m));
    std::vector<std::string> errors(static_cast<std::size_t>(m));
    parallel_for(m, cfg.threads, [&](int r) {
        try {
            std::vector<Cell> cells(static_cast<std::size_t>(n_levels));
            for (int li = 0; li < n_levels; ++li) {
                const int level = cfg.levels[std::size_t(li)];
                SchemeConfig scheme{delta_of_level(level), cfg.h0, cfg.terminal_time};
                AdvanceResult res =
                    advance_to(ctx.model, ctx.initial, scheme, ctx.noise, ctx.gamma,
                               rep_address(std::uint32_t(64 + level), std::uint32_t(r)));
                cells[std::size_t(li)].steps = double(res.log.step_count);
                cells[std::size_t(li)].msd = res.log.mean_square_displacement;
            }
            slots[std::size_t(r)] = std::move(cells);
        } catch (const std::exception& e) {
            errors[std::size_t(r)] = describe_failure(e);
        }
    });

    RunOutcome out;
    collect_failures(errors, "repetition", out);
    out.table.columns = {"level",        "delta",
                         "mean_steps",   "se_steps",
                         "mean_sq_displacement", "m_repetitions"};
    for (int li = 0; li < n_levels; ++li) {
        std::vector<double> steps;
        double msd = 0.0;
        for (int r = 0; r < m; ++r) {
            if (!errors[std::size_t(r)].empty()) continue;
            steps.push_back(slots[std::size_t(r)][std::size_t(li)].steps);
            msd += slots[std::size_t(r)][std::size_t(li)].msd;
        }
        if (steps.empty())
            throw NumericOverflowError("steps: all repetitions failed (" +
                                           (out.failure_notes.empty() ? std::string("no detail")
                                                                      : out.failure_notes.front()) +
                                           ")",
                                       -1, -1);
        const double ok = double(steps.size());
        double mean = 0.0;
        for (double s : steps) mean += s;
        mean /= ok;
        out.table.rows.push_back({double(cfg.levels[std::size_t(li)]),
                                  delta_of_level(cfg.levels[std::size_t(li)]), mean,
                                  sample_sd(steps) / std::sqrt(ok), msd / ok, ok});
    }
    out.summary = "mean adaptive step counts over " + std::to_string(m) + " paths, failures=" +
                  std::to_string(out.failed_repetitions);
    return out;
}

RunOutcome run_chaos(const ExperimentConfig& cfg) {
    RunContext ctx = make_context(cfg);
    if (ctx.model.dimension != 1)
        throw std::invalid_argument(
            "chaos: the deviation metric uses the exact one-dimensional W2, so the model must "
            "be one-dimensional");

    std::vector<Eigen::Index> sizes = cfg.chaos_sizes;
    std::sort(sizes.begin(), sizes.end());
    sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
    if (sizes.size() < 2)
        throw std::invalid_argument("chaos: need at least two distinct ensemble sizes");

    const Eigen::Index n_ref = 8 * sizes.back();
    const Eigen::Index pool_size = n_ref;
    constexpr int kGroups = 4; // independent measurement groups -> CLT band
    const int n_sizes = int(sizes.size());
    const double delta = delta_of_level(cfg.levels.front());
    SchemeConfig scheme{delta, cfg.h0, cfg.terminal_time};

    // task = group j times (each size, then the reference ensemble)
    const int tasks = kGroups * (n_sizes + 1);
    std::vector<Eigen::VectorXd> pools(static_cast<std::size_t>(tasks));
    std::vector<std::string> errors(static_cast<std::size_t>(tasks));
    parallel_for(tasks, cfg.threads, [&](int task) {
        try {
            const int j = task / (n_sizes + 1);
            const int k = task % (n_sizes + 1);
            const bool is_ref = (k == n_sizes);
            const Eigen::Index n = is_ref ? n_ref : sizes[std::size_t(k)];
            const std::uint32_t block = std::uint32_t(128 + j * 16 + (is_ref ? 15 : k));
            const ParticleEnsemble initial = initial_of_size(cfg, ctx, n);
            Eigen::VectorXd pool(pool_size);
            Eigen::Index filled = 0;
            for (std::uint32_t r = 0; filled < pool_size; ++r) {
                AdvanceResult res = advance_to(ctx.model, initial, scheme, ctx.noise, ctx.gamma,
                                               rep_address(block, r));
                for (Eigen::Index i = 0; i < n && filled < pool_size; ++i)
                    pool[filled++] = res.ensemble.states(i, 0);
            }
            pools[std::size_t(task)] = std::move(pool);
        } catch (const std::exception& e) {
            errors[std::size_t(task)] = describe_failure(e);
        }
    });

    RunOutcome out;
    collect_failures(errors, "group-task", out);
    out.table.columns = {"n_particles", "deviation", "se", "pool_size", "groups"};
    for (int k = 0; k < n_sizes; ++k) {
        std::vector<double> devs;
        for (int j = 0; j < kGroups; ++j) {
            const int task = j * (n_sizes + 1) + k;
            const int ref_task = j * (n_sizes + 1) + n_sizes;
            if (!errors[std::size_t(task)].empty() || !errors[std::size_t(ref_task)].empty())
                continue;
            devs.push_back(w2_exact_1d(pools[std::size_t(task)], pools[std::size_t(ref_task)]));
        }
        if (devs.size() < 2)
            throw NumericOverflowError("chaos: too many failed measurement groups (" +
                                           (out.failure_notes.empty() ? std::string("no detail")
                                                                      : out.failure_notes.front()) +
                                           ")",
                                       -1, -1);
        double mean = 0.0;
        for (double v : devs) mean += v;
        mean /= double(devs.size());
        out.table.rows.push_back({double(sizes[std::size_t(k)]), mean,
                                  sample_sd(devs) / std::sqrt(double(devs.size())),
                                  double(pool_size), double(devs.size())});
    }
    out.summary = "deviation from a reference ensemble of " + std::to_string(n_ref) +
                  " particles at delta=" + format_double(delta) +
                  ", failures=" + std::to_string(out.failed_repetitions);
    return out;
}

RunOutcome run_experiment(const ExperimentConfig& cfg) {
    switch (cfg.kind) {
        case ExperimentKind::simulate: return run_simulate(cfg);
        case ExperimentKind::convergence: return run_convergence(cfg);
        case ExperimentKind::moments: return run_moments(cfg);
        case ExperimentKind::steps: return run_steps(cfg);
        case ExperimentKind::chaos: return run_chaos(cfg);
    }
    throw std::invalid_argument("unknown experiment kind");
}

namespace {

std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string quoted = "\"";
    for (char c : field) {
        if (c == '"') quoted += '"';
        quoted += c;
    }
    quoted += '"';
    return quoted;
}

} // namespace

void write_results(const ResultTable& table, const std::filesystem::path& csv_path) {
    if (table.columns.empty())
        throw std::invalid_argument("write_results: table has no columns");
    if (table.rows.empty())
        throw std::invalid_argument("write_results: refusing to write an empty table");
    for (const auto& row : table.rows)
        if (row.size() != table.columns.size())
            throw std::invalid_argument("write_results: row width does not match header");

    if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
    std::ofstream outfile(csv_path, std::ios::binary);
    if (!outfile)
        throw std::runtime_error("write_results: cannot open '" + csv_path.string() + "'");
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
        if (c) outfile << ',';
        outfile << csv_quote(table.columns[c]);
    }
    outfile << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) outfile << ',';
            outfile << format_double(row[c]);
        }
        outfile << '\n';
    }
    if (!outfile)
        throw std::runtime_error("write_results: failed writing '" + csv_path.string() + "'");
}

std::filesystem::path manifest_path_for(const std::filesystem::path& csv_path) {
    std::filesystem::path p = csv_path;
    p.replace_extension();
    p += ".manifest.json";
    return p;
}

void write_manifest(const ExperimentConfig& config, const RunOutcome& outcome,
                    const std::filesystem::path& csv_path, double wall_seconds) {
    nlohmann::json j;
    j["artifact"] = {{"name", kArtifactName}, {"version", kArtifactVersion}};
    j["experiment"] = to_string(config.kind);
    j["seed"] = config.seed;
    j["config"] = config_to_json(config);
    char hash_buf[19];
    std::snprintf(hash_buf, sizeof(hash_buf), "0x%016llx",
                  static_cast<unsigned long long>(config_hash(config)));
    j["config_hash"] = hash_buf;
    j["columns"] = outcome.table.columns;
    j["rows"] = outcome.table.rows.size();
    j["failed_repetitions"] = outcome.failed_repetitions;
    j["failure_notes"] = outcome.failure_notes;
    j["summary"] = outcome.summary;
    if (outcome.fit) {
        j["fit"] = {{"beta", outcome.fit->beta},
                    {"intercept", outcome.fit->intercept},
                    {"residual_norm", outcome.fit->residual_norm},
                    {"n_points", outcome.fit->n_points}};
    }
    j["wall_seconds"] = wall_seconds;

    const std::filesystem::path path = manifest_path_for(csv_path);
    std::ofstream outfile(path, std::ios::binary);
    if (!outfile)
        throw std::runtime_error("write_manifest: cannot open '" + path.string() + "'");
    outfile << j.dump(2) << '\n';
}

void write_convergence_svg(const ResultTable& table, const RateFit& fit,
                           const std::filesystem::path& svg_path) {
    auto column_index = [&table](const std::string& name) {
        for (std::size_t c = 0; c < table.columns.size(); ++c)
            if (table.columns[c] == name) return Eigen::Index(c);
        throw std::invalid_argument("write_convergence_svg: missing column '" + name + "'");
    };
    const Eigen::Index level_col = column_index("level");
    const Eigen::Index mse_col = column_index("mse");
    if (table.rows.empty())
        throw std::invalid_argument("write_convergence_svg: empty table");

    std::vector<std::pair<double, double>> pts;
    for (const auto& row : table.rows)
        pts.emplace_back(row[std::size_t(level_col)], std::log2(row[std::size_t(mse_col)]));

    double x_lo = pts.front().first, x_hi = pts.front().first;
    double y_lo = pts.front().second, y_hi = pts.front().second;
    for (const auto& [x, y] : pts) {
        x_lo = std::min(x_lo, x), x_hi = std::max(x_hi, x);
        y_lo = std::min(y_lo, y), y_hi = std::max(y_hi, y);
    }
    if (x_hi == x_lo) x_hi = x_lo + 1;
    if (y_hi == y_lo) y_hi = y_lo + 1;
    const double pad_y = 0.08 * (y_hi - y_lo);
    y_lo -= pad_y, y_hi += pad_y;

    const double width = 640, height = 440;
    const double ml = 70, mr = 20, mt = 30, mb = 50;
    auto sx = [&](double x) { return ml + (x - x_lo) / (x_hi - x_lo) * (width - ml - mr); };
    auto sy = [&](double y) { return height - mb - (y - y_lo) / (y_hi - y_lo) * (height - mt - mb); };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        return std::string(buf);
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<g font-family=\"monospace\" font-size=\"12\">\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
        << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
        << height - mb << "\" stroke=\"black\"/>\n";
    for (const auto& [x, y] : pts) {
        svg << "<line x1=\"" << num(sx(x)) << "\" y1=\"" << height - mb << "\" x2=\"" << num(sx(x))
            << "\" y2=\"" << height - mb + 5 << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << num(sx(x)) << "\" y=\"" << height - mb + 20
            << "\" text-anchor=\"middle\">" << num(x) << "</text>\n";
    }
    for (int k = 0; k <= 4; ++k) {
        const double y = y_lo + (y_hi - y_lo) * k / 4.0;
        svg << "<line x1=\"" << ml - 5 << "\" y1=\"" << num(sy(y)) << "\" x2=\"" << ml
            << "\" y2=\"" << num(sy(y)) << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << ml - 9 << "\" y=\"" << num(sy(y) + 4)
            << "\" text-anchor=\"end\">" << num(y) << "</text>\n";
    }
    svg << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\">level (delta_fine = 2^-(level+1))</text>\n";
    svg << "<text x=\"16\" y=\"" << (mt + height - mb) / 2
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (mt + height - mb) / 2
        << ")\">log2(mse)</text>\n";
    const double fy_lo = fit.intercept - 2.0 * fit.beta * x_lo;
    const double fy_hi = fit.intercept - 2.0 * fit.beta * x_hi;
    svg << "<line x1=\"" << num(sx(x_lo)) << "\" y1=\"" << num(sy(fy_lo)) << "\" x2=\""
        << num(sx(x_hi)) << "\" y2=\"" << num(sy(fy_hi))
        << "\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n";
    for (const auto& [x, y] : pts)
        svg << "<circle cx=\"" << num(sx(x)) << "\" cy=\"" << num(sy(y))
            << "\" r=\"3.5\" fill=\"crimson\"/>\n";
    svg << "<text x=\"" << width - mr << "\" y=\"" << mt - 10
        << "\" text-anchor=\"end\">beta=" << num(fit.beta) << " residual=" << num(fit.residual_norm)
        << "</text>\n";
    svg << "</g>\n</svg>\n";

    if (svg_path.has_parent_path()) std::filesystem::create_directories(svg_path.parent_path());
    std::ofstream outfile(svg_path, std::ios::binary);
    if (!outfile)
        throw std::runtime_error("write_convergence_svg: cannot open '" + svg_path.string() + "'");
    outfile << svg.str();
}

} // namespace levymv
