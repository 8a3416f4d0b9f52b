#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sepmatch/errors.hpp"
#include "sepmatch/montecarlo.hpp"
#include "sepmatch/rng.hpp"
#include "sepmatch/types.hpp"
#include "test_helpers.hpp"

using namespace sepmatch;
using sepmatch::testing::random_interior;

TEST_CASE("arrangement index layout") {
    const ArrangementIndex tiny = build_arrangement_index({1, 1});
    CHECK(tiny.size() == 3);
    CHECK(tiny.couple(0, 0) == 0);
    CHECK(tiny.single_man(0) == 1);
    CHECK(tiny.single_woman(0) == 2);

    const ArrangementIndex two = build_arrangement_index({2, 2});
    CHECK(two.size() == 8);
    CHECK(two.couple(1, 0) == 2);  // couple (x=2, y=1), 1-based
    CHECK(two.single_man(1) == 5);
    CHECK(two.single_woman(0) == 6);

    CHECK(build_arrangement_index({20, 20}).size() == 440);
}

TEST_CASE("arrangement index is bijective") {
    const TypeSpace space{3, 4};
    const ArrangementIndex idx = build_arrangement_index(space);
    std::vector<int> hits(idx.size(), 0);
    for (int x = 0; x < space.X; ++x)
        for (int y = 0; y < space.Y; ++y) ++hits[idx.couple(x, y)];
    for (int x = 0; x < space.X; ++x) ++hits[idx.single_man(x)];
    for (int y = 0; y < space.Y; ++y) ++hits[idx.single_woman(y)];
    for (int h : hits) CHECK(h == 1);
}

TEST_CASE("surplus matrix evaluates phi beta") {
    const TypeSpace space{4, 5};
    SplitMix64 gen(11);
    const Eigen::MatrixXd basis = testing::random_matrix(space.n_couples(), 3, gen);

    SUBCASE("zero coefficients give zero surplus") {
        const Eigen::MatrixXd phi = surplus_matrix({basis, Eigen::VectorXd::Zero(3)}, space);
        CHECK(phi.cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("quadratic gap design reproduces its closed form") {
        const TypeSpace grid{20, 20};
        Eigen::VectorXd beta(8);
        beta << 1, 0, 0, -0.01, 0.02, -0.01, 0.5, 0;
        const Eigen::MatrixXd phi =
            surplus_matrix({quadratic_gap_bases(grid), beta}, grid);
        for (int x = 1; x <= 20; ++x)
            for (int y = 1; y <= 20; ++y) {
                const double want =
                    1.0 - (x - y) * (x - y) / 100.0 + 0.5 * (x >= y ? 1.0 : 0.0);
                CHECK(phi(x - 1, y - 1) == doctest::Approx(want).epsilon(1e-14));
            }
        CHECK(phi(2, 4) == doctest::Approx(0.96).epsilon(1e-14));
    }

    SUBCASE("dimension mismatch is rejected") {
        CHECK_THROWS_AS(surplus_matrix({basis, Eigen::VectorXd::Zero(4)}, space), InputError);
    }
}

TEST_CASE("margins from matching") {
    MatchingPatterns mu;
    mu.mu.resize(1, 1);
    mu.mu(0, 0) = 0.25;
    mu.mu_x0.resize(1);
    mu.mu_x0 << 0.25;
    mu.mu_0y.resize(1);
    mu.mu_0y << 0.25;
    const Margins q = margins_from_matching(mu);
    CHECK(q.n(0) == doctest::Approx(0.5));
    CHECK(q.m(0) == doctest::Approx(0.5));

    SUBCASE("all-singles matching") {
        mu.mu.setZero();
        const Margins qs = margins_from_matching(mu);
        CHECK(qs.n(0) == doctest::Approx(0.25));
        CHECK(qs.m(0) == doctest::Approx(0.25));
    }
}

TEST_CASE("drawn sample margins equal recounted type frequencies") {
    const TypeSpace space{3, 2};
    SplitMix64 gen(5);
    const MatchingPatterns mu = random_interior(space, gen);
    const MatchingPatterns sample = draw_sample(mu, 500, 99);
    const Margins q = margins_from_matching(sample);
    // recount from the flattened draw
    const Eigen::VectorXd flat = sample.flatten();
    const ArrangementIndex idx = build_arrangement_index(space);
    for (int x = 0; x < space.X; ++x) {
        double n = flat(idx.single_man(x));
        for (int y = 0; y < space.Y; ++y) n += flat(idx.couple(x, y));
        CHECK(q.n(x) == doctest::Approx(n).epsilon(1e-14));
    }
    for (int y = 0; y < space.Y; ++y) {
        double m = flat(idx.single_woman(y));
        for (int x = 0; x < space.X; ++x) m += flat(idx.couple(x, y));
        CHECK(q.m(y) == doctest::Approx(m).epsilon(1e-14));
    }
}

TEST_CASE("sample covariance formula") {
    MatchingPatterns mu;
    mu.mu.resize(1, 1);
    mu.mu(0, 0) = 0.5;
    mu.mu_x0.resize(1);
    mu.mu_x0 << 0.4;
    mu.mu_0y.resize(1);
    mu.mu_0y << 0.1;
    mu.N = 200;
    const SampleCovariance cov = sample_covariance(mu);
    CHECK(cov.N == 200);
    CHECK(cov.sigma(0, 0) == doctest::Approx(0.5 - 0.25));
    CHECK(cov.sigma(0, 1) == doctest::Approx(-0.2));
    CHECK(cov.sigma(1, 1) == doctest::Approx(0.4 - 0.16));
    CHECK(cov.sigma(2, 2) == doctest::Approx(0.1 - 0.01));
    CHECK(cov.sigma(1, 2) == doctest::Approx(-0.04));

    SUBCASE("row sums are zero and matrix is symmetric PSD") {
        SplitMix64 gen(7);
        const MatchingPatterns r = random_interior({3, 4}, gen);
        const SampleCovariance c = sample_covariance(r);
        CHECK((c.sigma.rowwise().sum()).cwiseAbs().maxCoeff() < 1e-14);
        CHECK((c.sigma - c.sigma.transpose()).cwiseAbs().maxCoeff() == 0.0);
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c.sigma);
        CHECK(eig.eigenvalues().minCoeff() > -1e-12);
    }

    SUBCASE("mass normalization is enforced") {
        mu.mu(0, 0) = 0.6;
        CHECK_THROWS_AS(sample_covariance(mu), InputError);
    }
}

TEST_CASE("sample covariance matches simulated frequency covariance") {
    const TypeSpace space{1, 2};
    SplitMix64 gen(21);
    const MatchingPatterns mu = random_interior(space, gen, 0.1, 1.0);
    const SampleCovariance cov = sample_covariance(mu);
    const int cells = space.n_arrangements();
    const long N = 50;
    const int reps = 20000;
    Eigen::MatrixXd draws(reps, cells);
    for (int r = 0; r < reps; ++r)
        draws.row(r) = draw_sample(mu, static_cast<double>(N), 1000 + r).flatten();
    const Eigen::RowVectorXd mean = draws.colwise().mean();
    const Eigen::MatrixXd centered = draws.rowwise() - mean;
    const Eigen::MatrixXd emp = centered.transpose() * centered / (reps - 1.0);
    for (int i = 0; i < cells; ++i)
        for (int j = 0; j < cells; ++j) {
            const double want = cov.sigma(i, j) / N;
            // asymptotic se of a sample covariance entry
            const double se = std::sqrt((cov.sigma(i, i) * cov.sigma(j, j) +
                                         cov.sigma(i, j) * cov.sigma(i, j)) /
                                        (N * N * reps));
            CHECK(std::abs(emp(i, j) - want) < 4.0 * se + 1e-12);
        }
}

TEST_CASE("comoments") {
    const TypeSpace space{3, 3};
    SplitMix64 gen(31);
    MatchingPatterns mu = random_interior(space, gen);
    const Eigen::MatrixXd basis = testing::random_matrix(space.n_couples(), 4, gen);

    SUBCASE("no couples means zero comoments") {
        mu.mu.setZero();
        CHECK(comoments(mu, basis).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("constant basis sums couple mass") {
        const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(space.n_couples(), 1);
        CHECK(comoments(mu, ones)(0) == doctest::Approx(mu.mu.sum()).epsilon(1e-14));
    }

    SUBCASE("summation order does not matter") {
        const Eigen::VectorXd got = comoments(mu, basis);
        Eigen::VectorXd manual = Eigen::VectorXd::Zero(4);
        for (int y = 0; y < space.Y; ++y)      // reversed loop nest
            for (int x = space.X - 1; x >= 0; --x)
                manual += mu.mu(x, y) * basis.row(x * space.Y + y).transpose();
        CHECK((got - manual).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("flatten round trip") {
    SplitMix64 gen(41);
    const TypeSpace space{4, 3};
    const MatchingPatterns mu = random_interior(space, gen);
    const MatchingPatterns back = MatchingPatterns::from_flat(space, mu.flatten(), mu.N);
    CHECK((back.mu - mu.mu).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.mu_x0 - mu.mu_x0).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.mu_0y - mu.mu_0y).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.N == mu.N);
}
