#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "levymv/errors.hpp"
#include "levymv/measure_analysis.hpp"

#include <cmath>
#include <vector>

using namespace levymv;

TEST_CASE("w2 to the origin point mass is the root mean square norm") {
    Eigen::MatrixXd states(2, 1);
    states << 3.0, 4.0;
    CHECK(w2_to_dirac0(states) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));

    Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(5, 2);
    CHECK(w2_to_dirac0(zeros) == 0.0);

    // translation invariance fails, scaling is linear
    CHECK(w2_to_dirac0(Eigen::MatrixXd(2.0 * states)) ==
          doctest::Approx(2.0 * w2_to_dirac0(states)).epsilon(1e-15));
}

TEST_CASE("coupling bound dominates the exact 1-d distance") {
    Eigen::MatrixXd a(4, 1), b(4, 1);
    a << 0.1, -0.4, 2.0, 1.0;
    b << 1.5, 0.2, -0.3, 0.9;
    const double bound = w2_coupling_bound(a, b);
    const double exact = w2_exact_1d(a.col(0), b.col(0));
    CHECK(exact <= bound + 1e-15);
    CHECK(w2_coupling_bound(a, a) == 0.0);

    Eigen::MatrixXd wrong(3, 1);
    wrong.setZero();
    CHECK_THROWS_AS((void)w2_coupling_bound(a, wrong), std::invalid_argument);
}

TEST_CASE("exact 1-d distance of shifted samples") {
    Eigen::VectorXd a(2), b(2);
    a << 0.0, 2.0;
    b << 1.0, 3.0;
    CHECK(w2_exact_1d(a, b) == doctest::Approx(1.0).epsilon(1e-15));

    // a permutation-paired coupling overestimates, sorting fixes it
    Eigen::VectorXd b_rev(2);
    b_rev << 3.0, 1.0;
    CHECK(w2_exact_1d(a, b_rev) == doctest::Approx(1.0).epsilon(1e-15));
    Eigen::MatrixXd am(2, 1), bm(2, 1);
    am.col(0) = a;
    bm.col(0) = b_rev;
    CHECK(w2_coupling_bound(am, bm) == doctest::Approx(std::sqrt(5.0)).epsilon(1e-15));

    Eigen::VectorXd longer(3);
    longer.setZero();
    CHECK_THROWS_AS((void)w2_exact_1d(a, longer), std::invalid_argument);

    // metric sanity on random-ish values: symmetry and identity
    Eigen::VectorXd c(3), d(3);
    c << -1.0, 0.5, 2.5;
    d << 0.0, 0.0, 1.0;
    CHECK(w2_exact_1d(c, d) == doctest::Approx(w2_exact_1d(d, c)).epsilon(1e-15));
    CHECK(w2_exact_1d(c, c) == 0.0);
}

TEST_CASE("moment estimates pool repetitions and particles") {
    ParticleEnsemble e1, e2;
    e1.states.resize(2, 1);
    e1.states << 1.0, -2.0;
    e2.states.resize(2, 1);
    e2.states << 0.0, 3.0;
    std::vector<ParticleEnsemble> ens{e1, e2};

    // mean of |x|^2 over {1, 4, 0, 9} = 3.5
    CHECK(estimate_moment(ens, 2.0) == doctest::Approx(3.5).epsilon(1e-15));
    // p=1: mean of {1,2,0,3} = 1.5
    CHECK(estimate_moment(ens, 1.0) == doctest::Approx(1.5).epsilon(1e-15));

    CHECK_THROWS_AS((void)estimate_moment(ens, 0.0), std::invalid_argument);
    CHECK_THROWS_AS((void)estimate_moment(std::span<const ParticleEnsemble>{}, 2.0),
                    std::invalid_argument);
}

TEST_CASE("level error points average paired squared differences") {
    Eigen::MatrixXd fine(2, 1), coarse(2, 1);
    fine << 1.0, 2.0;
    coarse << 0.0, 0.0;
    LevelErrorPoint pt = mse_levels(3, fine, coarse, 2);
    CHECK(pt.level == 3);
    CHECK(pt.m_repetitions == 2);
    CHECK(pt.mse == doctest::Approx(2.5).epsilon(1e-15));

    Eigen::MatrixXd wrong(3, 1);
    wrong.setZero();
    CHECK_THROWS_AS((void)mse_levels(1, fine, wrong, 1), std::invalid_argument);
    Eigen::MatrixXd empty(0, 1);
    CHECK_THROWS_AS((void)mse_levels(1, empty, empty, 1), std::invalid_argument);
}

TEST_CASE("pooled mse equals the size-weighted merge of its partitions") {
    // splitting the rows into blocks and recombining must not change the
    // estimate: mse is a plain mean of per-row squared differences
    Eigen::MatrixXd fine(5, 2), coarse(5, 2);
    fine << 1, 0, 2, 1, -1, 3, 0.5, 0.25, 4, -2;
    coarse << 0, 0, 1, 1, -2, 2, 0, 0, 3.5, -2;
    const double pooled = mse_levels(1, fine, coarse, 1).mse;
    const double part_a = mse_levels(1, fine.topRows(2), coarse.topRows(2), 1).mse;
    const double part_b = mse_levels(1, fine.bottomRows(3), coarse.bottomRows(3), 1).mse;
    CHECK(pooled == doctest::Approx((2.0 * part_a + 3.0 * part_b) / 5.0).epsilon(1e-15));
}

TEST_CASE("rate fit recovers exact dyadic decay") {
    // mse = 2^-2L  =>  log2 mse = -2L: beta = 1, intercept 0, zero residual
    std::vector<LevelErrorPoint> pts;
    for (int L : {1, 2, 3}) pts.push_back({L, std::pow(2.0, -2.0 * L), 10});
    RateFit fit = fit_rate(pts);
    CHECK(fit.beta == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.intercept == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(fit.residual_norm == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(fit.n_points == 3);

    // mse = 2^-L: beta = 1/2, and scaling all mses shifts only the intercept
    std::vector<LevelErrorPoint> pts2;
    for (int L : {1, 2, 3, 4}) pts2.push_back({L, 8.0 * std::pow(2.0, -double(L)), 10});
    RateFit fit2 = fit_rate(pts2);
    CHECK(fit2.beta == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(fit2.intercept == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("rate fit rejects degenerate inputs") {
    std::vector<LevelErrorPoint> one{{1, 0.5, 10}};
    CHECK_THROWS_AS((void)fit_rate(one), std::invalid_argument);

    std::vector<LevelErrorPoint> same_level{{2, 0.5, 10}, {2, 0.25, 10}};
    CHECK_THROWS_AS((void)fit_rate(same_level), std::invalid_argument);

    std::vector<LevelErrorPoint> with_zero{{1, 0.5, 10}, {2, 0.0, 10}};
    CHECK_THROWS_AS((void)fit_rate(with_zero), DegenerateInputError);

    std::vector<LevelErrorPoint> with_negative{{1, 0.5, 10}, {2, -0.1, 10}};
    CHECK_THROWS_AS((void)fit_rate(with_negative), std::invalid_argument);
}
