#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "levymv/errors.hpp"
#include "levymv/experiment.hpp"
#include "oracle_utils.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace levymv;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(bool(in));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("levymv-test-" + std::to_string(std::rand()) + std::to_string(std::rand()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

// Drift that stops being finite once |x| crosses a threshold: makes a
// deterministic-per-seed subset of repetitions fail mid-run.
std::shared_ptr<const McKeanVlasovModel> make_fragile_model(double threshold) {
    auto m = std::make_shared<McKeanVlasovModel>();
    m->name = "fragile";
    m->dimension = 1;
    m->ell = 1.0;
    m->p0 = 2;
    m->has_diffusion = true;
    m->has_jumps = false;
    m->drift = [threshold](const Eigen::VectorXd& x, const MeasureStats&,
                           Eigen::Ref<Eigen::VectorXd> out) {
        out = -x;
        if (x.cwiseAbs().maxCoeff() > threshold)
            out(0) = std::numeric_limits<double>::quiet_NaN();
    };
    m->diffusion = [](const Eigen::VectorXd&, const MeasureStats&,
                      Eigen::Ref<Eigen::MatrixXd> out) { out.setIdentity(); };
    m->jump = [](const Eigen::VectorXd&, const MeasureStats&, Eigen::Ref<Eigen::MatrixXd> out) {
        out.setZero();
    };
    return m;
}

} // namespace

TEST_CASE("config defaults match the benchmark experiment") {
    ExperimentConfig cfg = config_from_json(nlohmann::json::object());
    CHECK(cfg.model == "paper-ptvd");
    CHECK(cfg.n_particles == 100);
    CHECK(cfg.terminal_time == 10.0);
    CHECK(cfg.h0 == 1.0);
    CHECK(cfg.seed == 12345);
    CHECK(cfg.repetitions == 200);
    CHECK(cfg.levels == std::vector<int>{1, 2, 3, 4, 5, 6});
    CHECK(cfg.x0.size() == 1);
    CHECK(cfg.x0[0] == 1.0);
    CHECK(cfg.gamma.shape == 1.0);
    CHECK(cfg.gamma.rate_or_scale == 5.0);
    CHECK(cfg.gamma.interpretation == GammaInterpretation::scale);
    CHECK(cfg.kind == ExperimentKind::convergence);
    CHECK(cfg.threads == 0);
}

TEST_CASE("gamma parameter interpretations resolve to the right rate") {
    GammaConfig g;
    g.shape = 1.0;
    g.rate_or_scale = 5.0;
    g.interpretation = GammaInterpretation::rate;
    CHECK(g.resolved().rate == doctest::Approx(5.0));
    g.interpretation = GammaInterpretation::scale;
    CHECK(g.resolved().rate == doctest::Approx(0.2));
    CHECK(g.resolved().shape == doctest::Approx(1.0));
}

TEST_CASE("config parsing is strict about keys and values") {
    CHECK_THROWS_AS((void)config_from_json({{"no_such_key", 1}}), std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_json({{"gamma", {{"lambda", 5.0}}}}),
                    std::invalid_argument);
    // worker count is a command-line concern, not part of a run's identity
    CHECK_THROWS_AS((void)config_from_json({{"threads", 4}}), std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_json({{"gamma", {{"interpretation", "inverse"}}}}),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_json({{"N", 0}}), std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_json({{"T", -1.0}}), std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_json({{"h0", 0.0}}), std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_json({{"M", 0}}), std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_json({{"levels", nlohmann::json::array()}}),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_json({{"levels", {1, 99}}}), std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_json({{"experiment", "warp"}}), std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_json({{"x0", nlohmann::json::array()}}),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_json({{"gamma", {{"shape", -1.0}}}}),
                    std::invalid_argument);

    ExperimentConfig cfg = config_from_json({{"x0", 2.5}, {"experiment", "steps"}});
    CHECK(cfg.x0.size() == 1);
    CHECK(cfg.x0[0] == 2.5);
    CHECK(cfg.kind == ExperimentKind::steps);

    ExperimentConfig vec = config_from_json({{"x0", {1.0, -1.0}}});
    CHECK(vec.x0.size() == 2);
    CHECK(vec.x0[1] == -1.0);
}

TEST_CASE("config hash tracks content, not worker count") {
    ExperimentConfig a = config_from_json(nlohmann::json::object());
    ExperimentConfig b = a;
    b.threads = 7;
    CHECK(config_hash(a) == config_hash(b));
    b.seed = 54321;
    CHECK(config_hash(a) != config_hash(b));

    // round trip through the canonical JSON rendering
    ExperimentConfig c = config_from_json(config_to_json(a));
    CHECK(config_hash(c) == config_hash(a));
}

TEST_CASE("experiment kind names round-trip") {
    for (ExperimentKind k : {ExperimentKind::simulate, ExperimentKind::convergence,
                             ExperimentKind::moments, ExperimentKind::steps, ExperimentKind::chaos})
        CHECK(experiment_kind_from_string(to_string(k)) == k);
    CHECK_THROWS_AS((void)experiment_kind_from_string("nope"), std::invalid_argument);
}

TEST_CASE("x0 dimension mismatch names the model") {
    ExperimentConfig cfg;
    cfg.x0 = Eigen::VectorXd::Ones(2);
    cfg.kind = ExperimentKind::simulate;
    try {
        (void)run_experiment(cfg);
        FAIL("expected invalid_argument");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("paper-ptvd") != std::string::npos);
    }
}

TEST_CASE("flat model simulation stays at the origin") {
    ExperimentConfig cfg;
    cfg.model = "zero";
    cfg.x0 = Eigen::VectorXd::Zero(1);
    cfg.n_particles = 7;
    cfg.terminal_time = 1.0;
    cfg.levels = {1};
    cfg.kind = ExperimentKind::simulate;

    RunOutcome out = run_simulate(cfg);
    CHECK(out.table.columns == std::vector<std::string>{"particle", "x1"});
    REQUIRE(out.table.rows.size() == 7);
    for (const auto& row : out.table.rows) CHECK(row[1] == 0.0);
    CHECK(out.failed_repetitions == 0);
    CHECK(out.summary.find("2 adaptive steps") != std::string::npos);
}

TEST_CASE("drift-only convergence table matches the scalar replica exactly") {
    ExperimentConfig cfg;
    cfg.model = "decay";
    cfg.x0 = Eigen::VectorXd::Constant(1, 2.0);
    cfg.n_particles = 3;
    cfg.terminal_time = 1.0;
    cfg.levels = {1, 2, 3};
    cfg.repetitions = 2;
    cfg.kind = ExperimentKind::convergence;

    RunOutcome out = run_convergence(cfg);
    REQUIRE(out.table.rows.size() == 3);
    REQUIRE(out.fit.has_value());

    std::vector<LevelErrorPoint> predicted;
    for (int level : cfg.levels) {
        auto run = [&](double delta) {
            return oracle::drift_only_adaptive_euler({2.0}, [](double x) { return -x; }, 1.0,
                                                     cfg.terminal_time, delta, cfg.h0)
                .states[0];
        };
        const double fine = run(std::ldexp(1.0, -(level + 1)));
        const double coarse = run(std::ldexp(1.0, -level));
        predicted.push_back({level, (fine - coarse) * (fine - coarse), 2});
    }
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out.table.rows[i][0] == double(cfg.levels[i]));
        CHECK(out.table.rows[i][3] ==
              doctest::Approx(predicted[i].mse).epsilon(1e-10));
        CHECK(out.table.rows[i][6] == 2.0);
    }
    RateFit expected_fit = fit_rate(predicted);
    CHECK(out.fit->beta == doctest::Approx(expected_fit.beta).epsilon(1e-9));
    // a drift-only Euler scheme converges with strong order ~1
    CHECK(out.fit->beta > 0.8);
    CHECK(out.fit->beta < 1.2);
}

TEST_CASE("a noiseless flat model has no level differences to fit") {
    ExperimentConfig cfg;
    cfg.model = "zero";
    cfg.x0 = Eigen::VectorXd::Zero(1);
    cfg.n_particles = 2;
    cfg.terminal_time = 1.0;
    cfg.levels = {1, 2};
    cfg.repetitions = 2;
    cfg.kind = ExperimentKind::convergence;
    CHECK_THROWS_AS((void)run_convergence(cfg), DegenerateInputError);
}

TEST_CASE("moments of the decaying flow follow the exact exponential") {
    ExperimentConfig cfg;
    cfg.model = "decay";
    cfg.x0 = Eigen::VectorXd::Ones(1);
    cfg.n_particles = 4;
    cfg.terminal_time = 3.0;
    cfg.levels = {6};
    cfg.repetitions = 3;
    cfg.kind = ExperimentKind::moments;

    RunOutcome out = run_moments(cfg);
    REQUIRE(out.table.rows.size() == 3); // snapshots at t = 1, 2, 3
    for (const auto& row : out.table.rows) {
        const double t = row[0];
        CHECK(row[1] == doctest::Approx(std::exp(-2.0 * t)).epsilon(0.02));
        CHECK(row[2] == 0.0); // identical repetitions: zero standard error
        CHECK(row[3] == doctest::Approx(std::exp(-4.0 * t)).epsilon(0.04));
        CHECK(row[5] == 3.0);
    }
}

TEST_CASE("failed repetitions are counted, reported, and excluded") {
    ExperimentConfig cfg;
    cfg.custom_model = make_fragile_model(0.8);
    cfg.x0 = Eigen::VectorXd::Zero(1);
    cfg.n_particles = 1;
    cfg.terminal_time = 2.0;
    cfg.levels = {2};
    cfg.repetitions = 24;
    cfg.seed = 777;
    cfg.kind = ExperimentKind::moments;

    RunOutcome out = run_moments(cfg);
    CHECK(out.failed_repetitions > 0);
    CHECK(out.failed_repetitions < 24);
    REQUIRE(!out.failure_notes.empty());
    CHECK(out.failure_notes.front().find("drift") != std::string::npos);
    CHECK(out.failure_notes.front().find("step") != std::string::npos);
    for (const auto& row : out.table.rows)
        CHECK(row[5] == double(24 - out.failed_repetitions));

    // same seed, same outcome: failures are part of the reproducible result
    RunOutcome again = run_moments(cfg);
    CHECK(again.failed_repetitions == out.failed_repetitions);
}

TEST_CASE("every repetition failing raises instead of fitting garbage") {
    ExperimentConfig cfg;
    cfg.custom_model = make_fragile_model(-1.0); // fails on the first evaluation
    cfg.x0 = Eigen::VectorXd::Zero(1);
    cfg.n_particles = 1;
    cfg.terminal_time = 1.0;
    cfg.levels = {1};
    cfg.repetitions = 3;
    cfg.kind = ExperimentKind::moments;
    CHECK_THROWS_AS((void)run_moments(cfg), NumericOverflowError);
}

TEST_CASE("flat model step counts are exactly T / (delta h0)") {
    ExperimentConfig cfg;
    cfg.model = "zero";
    cfg.x0 = Eigen::VectorXd::Zero(1);
    cfg.n_particles = 2;
    cfg.terminal_time = 1.0;
    cfg.levels = {1, 2, 3};
    cfg.repetitions = 4;
    cfg.kind = ExperimentKind::steps;

    RunOutcome out = run_steps(cfg);
    REQUIRE(out.table.rows.size() == 3);
    CHECK(out.table.rows[0][2] == 2.0);
    CHECK(out.table.rows[1][2] == 4.0);
    CHECK(out.table.rows[2][2] == 8.0);
    for (const auto& row : out.table.rows) {
        CHECK(row[3] == 0.0); // se over identical repetitions
        CHECK(row[4] == 0.0); // no displacement
        CHECK(row[5] == 4.0);
    }
}

TEST_CASE("diffusive displacement per step scales linearly with delta") {
    ExperimentConfig cfg;
    cfg.model = "ou";
    cfg.ou_sigma = 0.3;
    cfg.x0 = Eigen::VectorXd::Ones(1);
    cfg.n_particles = 20;
    cfg.terminal_time = 2.0;
    cfg.levels = {2, 3, 4};
    cfg.repetitions = 10;
    cfg.kind = ExperimentKind::steps;

    RunOutcome out = run_steps(cfg);
    REQUIRE(out.table.rows.size() == 3);
    const double r01 = out.table.rows[0][4] / out.table.rows[1][4];
    const double r12 = out.table.rows[1][4] / out.table.rows[2][4];
    CHECK(r01 > 1.6);
    CHECK(r01 < 2.5);
    CHECK(r12 > 1.6);
    CHECK(r12 < 2.5);
    // and step counts double as delta halves
    const double s10 = out.table.rows[1][2] / out.table.rows[0][2];
    CHECK(s10 > 1.8);
    CHECK(s10 < 2.2);
}

TEST_CASE("chaos experiment reports one deviation row per ensemble size") {
    ExperimentConfig cfg;
    cfg.n_particles = 8; // unused by chaos, sizes come from chaos_sizes
    cfg.terminal_time = 1.0;
    cfg.levels = {1};
    cfg.chaos_sizes = {8, 16};
    cfg.kind = ExperimentKind::chaos;

    RunOutcome out = run_chaos(cfg);
    REQUIRE(out.table.rows.size() == 2);
    CHECK(out.table.rows[0][0] == 8.0);
    CHECK(out.table.rows[1][0] == 16.0);
    for (const auto& row : out.table.rows) {
        CHECK(row[1] > 0.0);       // deviation
        CHECK(row[2] >= 0.0);      // standard error
        CHECK(row[3] == 128.0);    // pool size = 8 * max size
        CHECK(row[4] == 4.0);      // measurement groups
        CHECK(std::isfinite(row[1]));
    }

    ExperimentConfig bad = cfg;
    bad.chaos_sizes = {16, 16};
    CHECK_THROWS_AS((void)run_chaos(bad), std::invalid_argument);

    // the exact transport metric only exists in one dimension here
    auto flat2d = std::make_shared<McKeanVlasovModel>(make_builtin_model("zero"));
    flat2d->dimension = 2;
    ExperimentConfig not1d = cfg;
    not1d.custom_model = flat2d;
    not1d.x0 = Eigen::VectorXd::Zero(2);
    CHECK_THROWS_AS((void)run_chaos(not1d), std::invalid_argument);
}

TEST_CASE("identical configs give identical tables for any worker count") {
    ExperimentConfig cfg;
    cfg.n_particles = 10;
    cfg.terminal_time = 1.0;
    cfg.levels = {1, 2};
    cfg.repetitions = 6;
    cfg.kind = ExperimentKind::convergence;

    cfg.threads = 1;
    RunOutcome serial = run_convergence(cfg);
    cfg.threads = 4;
    RunOutcome pooled = run_convergence(cfg);

    REQUIRE(serial.table.rows.size() == pooled.table.rows.size());
    for (std::size_t r = 0; r < serial.table.rows.size(); ++r)
        for (std::size_t c = 0; c < serial.table.rows[r].size(); ++c)
            CHECK(serial.table.rows[r][c] == pooled.table.rows[r][c]);
    CHECK(serial.fit->beta == pooled.fit->beta);
}

TEST_CASE("csv rendering is exact shortest-round-trip") {
    TempDir tmp;
    ResultTable table;
    table.columns = {"plain", "with,comma"};
    table.rows = {{1.5, 2.0}, {0.1, -3.0}, {1e-3, 1234567.0}};
    const fs::path csv = tmp.path / "t.csv";
    write_results(table, csv);
    CHECK(slurp(csv) == "plain,\"with,comma\"\n1.5,2\n0.1,-3\n0.001,1234567\n");

    ResultTable empty;
    empty.columns = {"a"};
    const fs::path none = tmp.path / "none.csv";
    CHECK_THROWS_AS(write_results(empty, none), std::invalid_argument);
    CHECK(!fs::exists(none));

    ResultTable ragged;
    ragged.columns = {"a", "b"};
    ragged.rows = {{1.0}};
    CHECK_THROWS_AS(write_results(ragged, none), std::invalid_argument);
}

TEST_CASE("manifest records the run next to its csv") {
    TempDir tmp;
    ExperimentConfig cfg;
    cfg.model = "zero";
    cfg.x0 = Eigen::VectorXd::Zero(1);
    cfg.n_particles = 2;
    cfg.terminal_time = 1.0;
    cfg.levels = {1};
    cfg.repetitions = 2;
    cfg.kind = ExperimentKind::steps;

    RunOutcome out = run_steps(cfg);
    const fs::path csv = tmp.path / "steps.csv";
    write_results(out.table, csv);
    write_manifest(cfg, out, csv, 0.25);

    const fs::path mp = manifest_path_for(csv);
    CHECK(mp == tmp.path / "steps.manifest.json");
    nlohmann::json j = nlohmann::json::parse(slurp(mp));
    CHECK(j.at("artifact").at("name") == "levymv");
    CHECK(j.at("experiment") == "steps");
    CHECK(j.at("config").at("N") == 2);
    CHECK(j.at("rows") == out.table.rows.size());
    CHECK(j.at("failed_repetitions") == 0);
    const std::string hash = j.at("config_hash").get<std::string>();
    CHECK(hash.size() == 18);
    CHECK(hash.substr(0, 2) == "0x");
    CHECK(j.at("wall_seconds") == doctest::Approx(0.25));
    CHECK(!j.contains("fit"));

    // convergence manifests carry the fitted rate
    ExperimentConfig conv;
    conv.model = "decay";
    conv.x0 = Eigen::VectorXd::Constant(1, 2.0);
    conv.n_particles = 2;
    conv.terminal_time = 1.0;
    conv.levels = {1, 2};
    conv.repetitions = 2;
    conv.kind = ExperimentKind::convergence;
    RunOutcome cout_ = run_convergence(conv);
    const fs::path ccsv = tmp.path / "conv.csv";
    write_results(cout_.table, ccsv);
    write_manifest(conv, cout_, ccsv, 1.0);
    nlohmann::json cj = nlohmann::json::parse(slurp(manifest_path_for(ccsv)));
    CHECK(cj.at("fit").at("beta").get<double>() == doctest::Approx(cout_.fit->beta));
}

TEST_CASE("convergence plot is a self-contained svg") {
    TempDir tmp;
    ExperimentConfig cfg;
    cfg.model = "decay";
    cfg.x0 = Eigen::VectorXd::Constant(1, 2.0);
    cfg.n_particles = 2;
    cfg.terminal_time = 1.0;
    cfg.levels = {1, 2, 3};
    cfg.repetitions = 2;
    cfg.kind = ExperimentKind::convergence;
    RunOutcome out = run_convergence(cfg);

    const fs::path svg = tmp.path / "fit.svg";
    write_convergence_svg(out.table, *out.fit, svg);
    const std::string body = slurp(svg);
    CHECK(body.find("<svg") != std::string::npos);
    CHECK(body.find("</svg>") != std::string::npos);
    CHECK(body.find("beta") != std::string::npos);
    CHECK(body.find("circle") != std::string::npos);
    CHECK(body.find("level") != std::string::npos);

    ResultTable wrong;
    wrong.columns = {"a"};
    wrong.rows = {{1.0}};
    CHECK_THROWS_AS(write_convergence_svg(wrong, *out.fit, tmp.path / "bad.svg"),
                    std::invalid_argument);
}

TEST_CASE("dispatch runs the configured experiment") {
    ExperimentConfig cfg;
    cfg.model = "zero";
    cfg.x0 = Eigen::VectorXd::Zero(1);
    cfg.n_particles = 2;
    cfg.terminal_time = 1.0;
    cfg.levels = {1};
    cfg.repetitions = 2;
    cfg.kind = ExperimentKind::steps;
    RunOutcome out = run_experiment(cfg);
    CHECK(out.summary.find("step counts") != std::string::npos);
}
