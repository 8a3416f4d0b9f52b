#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "sepmatch/entropy.hpp"
#include "sepmatch/errors.hpp"
#include "sepmatch/rng.hpp"
#include "sepmatch/solvers.hpp"
#include "sepmatch/types.hpp"
#include "test_helpers.hpp"

using namespace sepmatch;
using sepmatch::testing::random_interior;
using sepmatch::testing::random_matrix;
using sepmatch::testing::random_vector;

namespace {

MatchingPatterns uniform_matching(int X, int Y, double cell) {
    MatchingPatterns mu;
    mu.mu = Eigen::MatrixXd::Constant(X, Y, cell);
    mu.mu_x0 = Eigen::VectorXd::Constant(X, cell);
    mu.mu_0y = Eigen::VectorXd::Constant(Y, cell);
    return mu;
}

NestedLogitSpec two_nest_spec(int X, int Y, double rho, double delta) {
    NestedLogitSpec spec;
    std::vector<int> lo_y, hi_y, lo_x, hi_x;
    for (int y = 0; y < Y; ++y) (y < Y / 2 ? lo_y : hi_y).push_back(y);
    for (int x = 0; x < X; ++x) (x < X / 2 ? lo_x : hi_x).push_back(x);
    spec.nests_men = {lo_y, hi_y};
    spec.nests_women = {lo_x, hi_x};
    spec.rho = Eigen::VectorXd::Constant(2, rho);
    spec.delta = Eigen::VectorXd::Constant(2, delta);
    spec.rho_tie = {0, 0};
    spec.delta_tie = {1, 1};
    return spec;
}

MixedLogitSpec point_mass_spec(int partner_types) {
    MixedLogitSpec spec;
    spec.zchar = Eigen::MatrixXd::Zero(partner_types, 1);
    spec.atoms = Eigen::MatrixXd::Zero(1, 1);
    spec.weights = Eigen::VectorXd::Ones(1);
    spec.s = 1.0;
    return spec;
}

MixedLogitSpec two_atom_spec(const Eigen::MatrixXd& zchar, double s) {
    MixedLogitSpec spec;
    spec.zchar = zchar;
    spec.atoms = Eigen::MatrixXd(2, zchar.cols());
    spec.atoms.row(0).setConstant(0.7);
    spec.atoms.row(1).setConstant(-0.4);
    spec.weights = Eigen::VectorXd(2);
    spec.weights << 0.6, 0.4;
    spec.s = s;
    return spec;
}

// Emax value of one side's choice problem, mixture over atoms, option 0 at 0.
double emax_value(const MixedLogitSpec& spec, const Eigen::VectorXd& U) {
    double g = 0.0;
    for (int k = 0; k < spec.atoms.rows(); ++k) {
        const Eigen::VectorXd v = U + spec.zchar * spec.atoms.row(k).transpose();
        double sum = 1.0;
        for (int y = 0; y < v.size(); ++y) sum += std::exp(v(y) / spec.s);
        g += spec.weights(k) * spec.s * std::log(sum);
    }
    return g;
}

// Generalized entropy for the mixed family via convex conjugates of the Emax
// values; independent of the gradient code path.
double mixed_entropy_value(const MixedLogitSpec& men, const MixedLogitSpec& women,
                           const MatchingPatterns& mu, const Margins& q) {
    double E = 0.0;
    for (int x = 0; x < mu.mu.rows(); ++x) {
        const Eigen::VectorXd nu = mu.mu.row(x).transpose() / q.n(x);
        const Eigen::VectorXd U = mixed_logit_inverse(men, nu, 1e-14);
        E -= q.n(x) * (nu.dot(U) - emax_value(men, U));
    }
    for (int y = 0; y < mu.mu.cols(); ++y) {
        const Eigen::VectorXd nu = mu.mu.col(y) / q.m(y);
        const Eigen::VectorXd V = mixed_logit_inverse(women, nu, 1e-14);
        E -= q.m(y) * (nu.dot(V) - emax_value(women, V));
    }
    return E;
}

}  // namespace

TEST_CASE("free parameter counts per family") {
    const TypeSpace space{3, 4};
    CHECK(EntropyModel::choo_siow().d_alpha(space) == 0);
    CHECK(EntropyModel::gender_heteroskedastic().d_alpha(space) == 1);
    CHECK(EntropyModel::full_heteroskedastic().d_alpha(space) == 3 + 4 - 1);
    CHECK(EntropyModel::nested_logit(two_nest_spec(4, 4, 0.5, 0.5)).d_alpha({4, 4}) == 2);
    CHECK(EntropyModel::mixed_logit(point_mass_spec(4), point_mass_spec(3)).d_alpha(space) ==
          0);
}

TEST_CASE("homoskedastic decomposition at equal cells") {
    const MatchingPatterns mu = uniform_matching(1, 1, 0.25);
    const Margins q = margins_from_matching(mu);
    const GradientDecomposition d =
        gradient_decomposition(EntropyModel::choo_siow(), mu, q);
    CHECK(d.e.cols() == 0);
    CHECK(d.e0(0) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("full heteroskedastic gradient hand value") {
    MatchingPatterns mu;
    mu.mu.resize(2, 1);
    mu.mu << 0.3, 0.2;
    mu.mu_x0.resize(2);
    mu.mu_x0 << 0.2, 0.4;
    mu.mu_0y.resize(1);
    mu.mu_0y << 0.1;
    const Margins q = margins_from_matching(mu);
    const EntropyModel model = EntropyModel::full_heteroskedastic();
    Eigen::VectorXd alpha(2);  // (sigma_2, tau_1), sigma_1 = 1 fixed
    alpha << 2.0, 1.0;
    const Eigen::VectorXd grad = entropy_gradient(model, mu, q, alpha);
    // -sigma_2 log(0.2/0.4) - tau_1 log(0.2/0.1) = 2 log 2 - log 2 = log 2
    CHECK(grad(1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    SUBCASE("decomposition columns carry the per-type terms") {
        const GradientDecomposition d = gradient_decomposition(model, mu, q);
        CHECK(d.e(1, 0) == doctest::Approx(-std::log(0.2 / 0.4)).epsilon(1e-12));
        CHECK(d.e(1, 1) == doctest::Approx(-std::log(0.2 / 0.1)).epsilon(1e-12));
        CHECK(d.e0(1) == doctest::Approx(0.0).epsilon(1e-15));
        // sigma_1 row keeps its men-side term in e0
        CHECK(d.e0(0) == doctest::Approx(-std::log(0.3 / 0.2)).epsilon(1e-12));
    }
}

TEST_CASE("gender heteroskedastic split") {
    SplitMix64 gen(3);
    const MatchingPatterns mu = random_interior({3, 2}, gen);
    const Margins q = margins_from_matching(mu);
    const GradientDecomposition d =
        gradient_decomposition(EntropyModel::gender_heteroskedastic(), mu, q);
    REQUIRE(d.e.cols() == 1);
    for (int x = 0; x < 3; ++x)
        for (int y = 0; y < 2; ++y) {
            const int r = x * 2 + y;
            CHECK(d.e0(r) ==
                  doctest::Approx(-std::log(mu.mu(x, y) / mu.mu_x0(x))).epsilon(1e-12));
            CHECK(d.e(r, 0) ==
                  doctest::Approx(-std::log(mu.mu(x, y) / mu.mu_0y(y))).epsilon(1e-12));
        }
}

TEST_CASE("nested logit with unit parameters collapses to homoskedastic") {
    SplitMix64 gen(17);
    const MatchingPatterns mu = random_interior({4, 4}, gen);
    const Margins q = margins_from_matching(mu);
    const NestedLogitSpec spec = two_nest_spec(4, 4, 1.0, 1.0);
    const Eigen::VectorXd nested =
        entropy_gradient(EntropyModel::nested_logit(spec), mu, q, spec.alpha_from_params());
    const Eigen::VectorXd cs =
        entropy_gradient(EntropyModel::choo_siow(), mu, q, Eigen::VectorXd());
    CHECK((nested - cs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("nested logit hand example") {
    NestedLogitSpec spec;
    spec.nests_men = {{0, 1}};
    spec.nests_women = {{0, 1}};
    spec.rho = Eigen::VectorXd::Constant(1, 0.5);
    spec.delta = Eigen::VectorXd::Constant(1, 0.5);
    spec.rho_tie = {0};
    spec.delta_tie = {1};
    MatchingPatterns mu;
    mu.mu.resize(2, 2);
    mu.mu << 0.1, 0.2, 0.2, 0.1;
    mu.mu_x0 = Eigen::VectorXd::Constant(2, 0.2);
    mu.mu_0y = Eigen::VectorXd::Constant(2, 0.2);
    const Margins q = margins_from_matching(mu);
    const NestedGradient g = nested_logit_gradient(spec, mu, q);
    // cell (1,1): mu_xn = mu_n'y = 0.3, singles 0.2
    CHECK(g.decomposition.e0(0) == doctest::Approx(-2.0 * std::log(1.5)).epsilon(1e-12));
    CHECK(g.decomposition.e(0, 0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(g.decomposition.e(0, 1) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(g.gradient(0) ==
          doctest::Approx(-2.0 * std::log(1.5) + std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("decomposition is affine in alpha") {
    SplitMix64 gen(23);
    const TypeSpace space{4, 4};
    const MatchingPatterns mu = random_interior(space, gen);
    const Margins q = margins_from_matching(mu);
    const EntropyModel model = EntropyModel::nested_logit(two_nest_spec(4, 4, 0.6, 0.8));
    const Eigen::VectorXd a1 = random_vector(2, gen, 0.3, 1.0);
    const Eigen::VectorXd a2 = random_vector(2, gen, 0.3, 1.0);
    const Eigen::VectorXd g1 = entropy_gradient(model, mu, q, a1);
    const Eigen::VectorXd g2 = entropy_gradient(model, mu, q, a2);
    const Eigen::VectorXd gm = entropy_gradient(model, mu, q, (a1 + a2) / 2.0);
    CHECK((g1 + g2 - 2.0 * gm).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradient is invariant to joint rescaling of matching and margins") {
    SplitMix64 gen(29);
    const TypeSpace space{3, 3};
    MatchingPatterns mu = random_interior(space, gen);
    Margins q = margins_from_matching(mu);
    const double c = 3.7;
    MatchingPatterns scaled = mu;
    scaled.mu *= c;
    scaled.mu_x0 *= c;
    scaled.mu_0y *= c;
    Margins qs;
    qs.n = c * q.n;
    qs.m = c * q.m;

    const NestedLogitSpec nspec = two_nest_spec(3, 3, 0.5, 0.7);
    const MixedLogitSpec men = two_atom_spec(random_matrix(3, 2, gen, 0.5), 1.2);
    const MixedLogitSpec women = two_atom_spec(random_matrix(3, 2, gen, 0.5), 0.8);
    const std::vector<std::pair<EntropyModel, Eigen::VectorXd>> cases = {
        {EntropyModel::choo_siow(), Eigen::VectorXd()},
        {EntropyModel::gender_heteroskedastic(), Eigen::VectorXd::Constant(1, 1.4)},
        {EntropyModel::full_heteroskedastic(), random_vector(5, gen, 0.5, 2.0)},
        {EntropyModel::nested_logit(nspec), nspec.alpha_from_params()},
        {EntropyModel::mixed_logit(men, women), Eigen::VectorXd()},
    };
    for (const auto& [model, alpha] : cases) {
        const Eigen::VectorXd base = entropy_gradient(model, mu, q, alpha);
        const Eigen::VectorXd after = entropy_gradient(model, scaled, qs, alpha);
        CHECK((base - after).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("side terms depend only on own-side conditional shares") {
    SplitMix64 gen(37);
    const TypeSpace space{3, 3};
    const MatchingPatterns mu = random_interior(space, gen);
    const Margins q = margins_from_matching(mu);
    const EntropyModel model = EntropyModel::gender_heteroskedastic();
    const GradientDecomposition base = gradient_decomposition(model, mu, q);

    SUBCASE("row rescale keeps the men-side term e0") {
        MatchingPatterns scaled = mu;
        scaled.mu.row(1) *= 2.5;
        scaled.mu_x0(1) *= 2.5;
        const GradientDecomposition after =
            gradient_decomposition(model, scaled, margins_from_matching(scaled));
        CHECK((after.e0 - base.e0).cwiseAbs().maxCoeff() < 1e-12);
    }

    SUBCASE("column rescale keeps the women-side term e") {
        MatchingPatterns scaled = mu;
        scaled.mu.col(2) *= 0.3;
        scaled.mu_0y(2) *= 0.3;
        const GradientDecomposition after =
            gradient_decomposition(model, scaled, margins_from_matching(scaled));
        CHECK((after.e - base.e).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("zero cells are rejected by name") {
    SplitMix64 gen(43);
    MatchingPatterns mu = random_interior({2, 3}, gen);
    const EntropyModel model = EntropyModel::choo_siow();

    SUBCASE("couple cell") {
        mu.mu(1, 2) = 0.0;
        const Margins q = margins_from_matching(mu);
        CHECK_THROWS_WITH_AS(gradient_decomposition(model, mu, q),
                             "mu(2,3) is not positive", ZeroCellError);
    }

    SUBCASE("single cell") {
        mu.mu_x0(0) = 0.0;
        const Margins q = margins_from_matching(mu);
        CHECK_THROWS_WITH_AS(gradient_decomposition(model, mu, q),
                             "mu_x0(1) is not positive", ZeroCellError);
    }

    SUBCASE("margins that disagree with the matching") {
        Margins q = margins_from_matching(mu);
        q.n(0) += 0.5;
        CHECK_THROWS_AS(gradient_decomposition(model, mu, q), InputError);
    }
}

TEST_CASE("lenient decomposition marks empty cells with infinities") {
    SplitMix64 gen(47);
    MatchingPatterns mu = random_interior({2, 2}, gen);
    mu.mu(0, 1) = 0.0;
    const Margins q = margins_from_matching(mu);
    const GradientDecomposition d =
        gradient_decomposition_lenient(EntropyModel::choo_siow(), mu, q);
    CHECK(std::isinf(d.e0(1)));
    CHECK(std::isfinite(d.e0(0)));
    CHECK(std::isfinite(d.e0(2)));
    CHECK(std::isfinite(d.e0(3)));
}

TEST_CASE("mixed logit inversion closed forms") {
    SUBCASE("unit scale point mass") {
        const MixedLogitSpec spec = point_mass_spec(2);
        Eigen::VectorXd nu(2);
        nu << 0.25, 0.25;
        const Eigen::VectorXd U = mixed_logit_inverse(spec, nu);
        CHECK(U(0) == doctest::Approx(std::log(0.5)).epsilon(1e-10));
        CHECK(U(1) == doctest::Approx(std::log(0.5)).epsilon(1e-10));
    }

    SUBCASE("scale two point mass") {
        MixedLogitSpec spec = point_mass_spec(2);
        spec.s = 2.0;
        Eigen::VectorXd nu(2);
        nu << 0.25, 0.25;
        const Eigen::VectorXd U = mixed_logit_inverse(spec, nu);
        CHECK(U(0) == doctest::Approx(2.0 * std::log(0.5)).epsilon(1e-10));
    }

    SUBCASE("two-atom round trip") {
        SplitMix64 gen(53);
        const MixedLogitSpec spec = two_atom_spec(random_matrix(3, 2, gen, 0.6), 1.1);
        const Eigen::VectorXd U_true = random_vector(3, gen, -1.0, 1.0);
        const Eigen::VectorXd nu = mixed_logit_shares(spec, U_true);
        const Eigen::VectorXd U = mixed_logit_inverse(spec, nu);
        CHECK((mixed_logit_shares(spec, U) - nu).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((U - U_true).cwiseAbs().maxCoeff() < 1e-8);
    }

    SUBCASE("shares outside the simplex are rejected") {
        const MixedLogitSpec spec = point_mass_spec(2);
        Eigen::VectorXd nu(2);
        nu << 0.7, 0.4;
        CHECK_THROWS_AS(mixed_logit_inverse(spec, nu), InputError);
        nu << 0.0, 0.4;
        CHECK_THROWS_AS(mixed_logit_inverse(spec, nu), ZeroCellError);
    }
}

TEST_CASE("degenerate mixed logit equals homoskedastic gradient") {
    SplitMix64 gen(59);
    const TypeSpace space{3, 2};
    const MatchingPatterns mu = random_interior(space, gen);
    const Margins q = margins_from_matching(mu);
    const Eigen::VectorXd mixed =
        mixed_logit_gradient(point_mass_spec(2), point_mass_spec(3), mu, q);
    const Eigen::VectorXd cs =
        entropy_gradient(EntropyModel::choo_siow(), mu, q, Eigen::VectorXd());
    CHECK((mixed - cs).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("mixed gradient identifies minus the surplus at a stable matching") {
    SplitMix64 gen(61);
    const TypeSpace space{3, 3};
    const Eigen::MatrixXd phi = random_matrix(space.X, space.Y, gen, 0.8);
    Margins q;
    q.n = random_vector(space.X, gen, 0.5, 1.0);
    q.m = random_vector(space.Y, gen, 0.5, 1.0);
    const IpfpSolution sol = ipfp_choo_siow(phi, q, {1e-13, 100000});
    const Eigen::VectorXd grad =
        mixed_logit_gradient(point_mass_spec(3), point_mass_spec(3), sol.mu, q);
    for (int x = 0; x < space.X; ++x)
        for (int y = 0; y < space.Y; ++y)
            CHECK(std::abs(grad(x * space.Y + y) + phi(x, y)) < 1e-6);
}

TEST_CASE("mixed gradient matches finite differences of the entropy value") {
    SplitMix64 gen(67);
    const TypeSpace space{2, 2};
    const MatchingPatterns mu = random_interior(space, gen, 0.2, 1.0);
    const Margins q = margins_from_matching(mu);
    const MixedLogitSpec men = two_atom_spec(random_matrix(2, 2, gen, 0.5), 1.3);
    const MixedLogitSpec women = two_atom_spec(random_matrix(2, 2, gen, 0.5), 0.9);
    const Eigen::VectorXd grad = mixed_logit_gradient(men, women, mu, q);
    const double h = 1e-6;
    for (int x = 0; x < 2; ++x)
        for (int y = 0; y < 2; ++y) {
            MatchingPatterns up = mu, dn = mu;
            up.mu(x, y) += h;
            dn.mu(x, y) -= h;
            const double fd = (mixed_entropy_value(men, women, up, q) -
                               mixed_entropy_value(men, women, dn, q)) /
                              (2.0 * h);
            CHECK(std::abs(grad(x * 2 + y) - fd) < 1e-5 * std::max(1.0, std::abs(fd)));
        }
}

TEST_CASE("heteroskedastic hessian closed form") {
    const MatchingPatterns mu = uniform_matching(2, 2, 0.25);
    const Margins q = margins_from_matching(mu);
    const Eigen::VectorXd ones2 = Eigen::VectorXd::Ones(2);
    const EntropyHessians h = cs_hetero_hessians(ones2, ones2, mu, q);
    const Eigen::MatrixXd hmm = Eigen::MatrixXd(h.h_mumu);
    const Eigen::MatrixXd hmq = Eigen::MatrixXd(h.h_muq);
    CHECK(hmm(0, 0) == doctest::Approx(-16.0));  // own cell: -4 - 4 - 8
    CHECK(hmm(0, 1) == doctest::Approx(-4.0));   // same row
    CHECK(hmm(0, 2) == doctest::Approx(-4.0));   // same column
    CHECK(hmm(0, 3) == doctest::Approx(0.0));    // unrelated cell
    CHECK(hmq(0, 0) == doctest::Approx(4.0));    // d2E / dmu_11 dn_1
    CHECK(hmq(0, 1) == doctest::Approx(0.0));    // other man type
    CHECK(hmq(0, 2) == doctest::Approx(4.0));    // d2E / dmu_11 dm_1
    CHECK(hmq(0, 3) == doctest::Approx(0.0));
}

TEST_CASE("numeric hessians agree with closed forms") {
    SplitMix64 gen(71);
    const TypeSpace space{3, 4};
    const MatchingPatterns mu = random_interior(space, gen);
    const Margins q = margins_from_matching(mu);

    SUBCASE("full heteroskedastic family") {
        const Eigen::VectorXd alpha = random_vector(space.X - 1 + space.Y, gen, 0.5, 2.0);
        const EntropyModel model = EntropyModel::full_heteroskedastic();
        const EntropyHessians closed = entropy_hessians(model, mu, q, alpha);
        const EntropyHessians numeric = numeric_hessians(model, mu, q, alpha);
        const Eigen::MatrixXd dm =
            Eigen::MatrixXd(closed.h_mumu) - Eigen::MatrixXd(numeric.h_mumu);
        const Eigen::MatrixXd dq =
            Eigen::MatrixXd(closed.h_muq) - Eigen::MatrixXd(numeric.h_muq);
        const double scale = Eigen::MatrixXd(closed.h_mumu).cwiseAbs().maxCoeff();
        CHECK(dm.cwiseAbs().maxCoeff() < 1e-6 * scale);
        CHECK(dq.cwiseAbs().maxCoeff() < 1e-6 * scale);
    }

    SUBCASE("nested logit family") {
        const NestedLogitSpec spec = two_nest_spec(3, 4, 0.55, 0.75);
        const EntropyModel model = EntropyModel::nested_logit(spec);
        const Eigen::VectorXd alpha = spec.alpha_from_params();
        const EntropyHessians closed = entropy_hessians(model, mu, q, alpha);
        const EntropyHessians numeric = numeric_hessians(model, mu, q, alpha);
        const Eigen::MatrixXd dm =
            Eigen::MatrixXd(closed.h_mumu) - Eigen::MatrixXd(numeric.h_mumu);
        const Eigen::MatrixXd dq =
            Eigen::MatrixXd(closed.h_muq) - Eigen::MatrixXd(numeric.h_muq);
        const double scale = Eigen::MatrixXd(closed.h_mumu).cwiseAbs().maxCoeff();
        CHECK(dm.cwiseAbs().maxCoeff() < 1e-6 * scale);
        CHECK(dq.cwiseAbs().maxCoeff() < 1e-6 * scale);
    }

    SUBCASE("nested logit with unit parameters equals the homoskedastic form") {
        const NestedLogitSpec spec = two_nest_spec(3, 4, 1.0, 1.0);
        const Eigen::VectorXd ones_x = Eigen::VectorXd::Ones(space.X);
        const Eigen::VectorXd ones_y = Eigen::VectorXd::Ones(space.Y);
        const EntropyHessians cs = cs_hetero_hessians(ones_x, ones_y, mu, q);
        const EntropyHessians numeric = numeric_hessians(
            EntropyModel::nested_logit(spec), mu, q, spec.alpha_from_params());
        const Eigen::MatrixXd dm =
            Eigen::MatrixXd(cs.h_mumu) - Eigen::MatrixXd(numeric.h_mumu);
        const double scale = Eigen::MatrixXd(cs.h_mumu).cwiseAbs().maxCoeff();
        CHECK(dm.cwiseAbs().maxCoeff() < 1e-6 * scale);
    }
}

TEST_CASE("hessian symmetry and concavity") {
    SplitMix64 gen(73);
    const TypeSpace space{3, 3};
    const MatchingPatterns mu = random_interior(space, gen);
    const Margins q = margins_from_matching(mu);
    const NestedLogitSpec nspec = two_nest_spec(3, 3, 0.5, 0.6);
    const std::vector<std::pair<EntropyModel, Eigen::VectorXd>> cases = {
        {EntropyModel::choo_siow(), Eigen::VectorXd()},
        {EntropyModel::gender_heteroskedastic(), Eigen::VectorXd::Constant(1, 0.7)},
        {EntropyModel::nested_logit(nspec), nspec.alpha_from_params()},
    };
    for (const auto& [model, alpha] : cases) {
        const EntropyHessians h = entropy_hessians(model, mu, q, alpha);
        const Eigen::MatrixXd hmm = Eigen::MatrixXd(h.h_mumu);
        CHECK((hmm - hmm.transpose()).cwiseAbs().maxCoeff() < 1e-8);
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hmm);
        CHECK(eig.eigenvalues().maxCoeff() < 1e-8);
    }

    SUBCASE("mixed family numeric hessian is symmetric") {
        const MixedLogitSpec men = two_atom_spec(random_matrix(3, 1, gen, 0.4), 1.0);
        const MixedLogitSpec women = two_atom_spec(random_matrix(3, 1, gen, 0.4), 1.0);
        const EntropyHessians h = entropy_hessians(EntropyModel::mixed_logit(men, women),
                                                   mu, q, Eigen::VectorXd());
        const Eigen::MatrixXd hmm = Eigen::MatrixXd(h.h_mumu);
        CHECK((hmm - hmm.transpose()).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("numeric hessians survive cells near the boundary") {
    SplitMix64 gen(79);
    MatchingPatterns mu = random_interior({2, 2}, gen);
    mu.mu(0, 0) = 1e-9;  // forces the one-sided fallback
    const Margins q = margins_from_matching(mu);
    const EntropyHessians h =
        numeric_hessians(EntropyModel::choo_siow(), mu, q, Eigen::VectorXd());
    CHECK(Eigen::MatrixXd(h.h_mumu).allFinite());
    CHECK(Eigen::MatrixXd(h.h_muq).allFinite());
    // the own-cell curvature keeps its sign and boundary magnitude
    CHECK(Eigen::MatrixXd(h.h_mumu)(0, 0) < -1e5);
}

TEST_CASE("nested spec validation") {
    const TypeSpace space{4, 4};

    SUBCASE("overlapping nests are rejected") {
        NestedLogitSpec spec = two_nest_spec(4, 4, 0.5, 0.5);
        spec.nests_men[1].push_back(0);
        CHECK_THROWS_AS(spec.validate(space), InputError);
    }

    SUBCASE("missing types are rejected") {
        NestedLogitSpec spec = two_nest_spec(4, 4, 0.5, 0.5);
        spec.nests_men[1].pop_back();
        CHECK_THROWS_AS(spec.validate(space), InputError);
    }

    SUBCASE("out of range rho is rejected") {
        NestedLogitSpec spec = two_nest_spec(4, 4, 1.5, 0.5);
        CHECK_THROWS_AS(spec.validate(space), InputError);
    }

    SUBCASE("unused alpha coordinate is rejected") {
        NestedLogitSpec spec = two_nest_spec(4, 4, 0.5, 0.5);
        spec.delta_tie = {2, 2};  // coordinate 1 never used
        CHECK_THROWS_AS(spec.validate(space), InputError);
    }
}
