#pragma once

#include <Eigen/Dense>

namespace sepmatch {

// Market dimensions: man types 1..X, woman types 1..Y (stored 0-based).
struct TypeSpace {
    int X = 0;
    int Y = 0;

    int n_couples() const { return X * Y; }
    // arrangements: all couples, single men, single women
    int n_arrangements() const { return X * Y + X + Y; }
};

// Canonical 0-based flattening of the arrangement set: couples first in
// row-major order (x outer, y inner), then single men by x, then single
// women by y. Every matrix in the estimators uses this one ordering.
struct ArrangementIndex {
    int X = 0;
    int Y = 0;

    int couple(int x, int y) const { return x * Y + y; }
    int single_man(int x) const { return X * Y + x; }
    int single_woman(int y) const { return X * Y + X + y; }
    int size() const { return X * Y + X + Y; }
};

ArrangementIndex build_arrangement_index(const TypeSpace& space);

// Masses of men and women by type.
struct Margins {
    Eigen::VectorXd n;  // X entries
    Eigen::VectorXd m;  // Y entries
};

// Type-level matching frequencies. Total mass is normalized to 1 for
// observed data; N carries the household count behind the frequencies so
// variance formulas can rescale.
struct MatchingPatterns {
    Eigen::MatrixXd mu;     // X x Y couples
    Eigen::VectorXd mu_x0;  // single men
    Eigen::VectorXd mu_0y;  // single women
    double N = 1.0;

    TypeSpace space() const {
        return {static_cast<int>(mu.rows()), static_cast<int>(mu.cols())};
    }
    double total_mass() const { return mu.sum() + mu_x0.sum() + mu_0y.sum(); }

    // flatten/unflatten through the canonical arrangement ordering
    Eigen::VectorXd flatten() const;
    static MatchingPatterns from_flat(const TypeSpace& space, const Eigen::VectorXd& flat,
                                      double N);
};

// Surplus linear in beta over precomputed basis values: Phi_xy = phi_xy . beta.
struct SemilinearSurplus {
    Eigen::MatrixXd phi;   // (X*Y) x K, rows in couple order
    Eigen::VectorXd beta;  // K
};

Eigen::MatrixXd surplus_matrix(const SemilinearSurplus& s, const TypeSpace& space);

Margins margins_from_matching(const MatchingPatterns& mu);

// Multinomial covariance of the flattened frequency vector: the covariance of
// the observed frequencies is sigma / N.
struct SampleCovariance {
    Eigen::MatrixXd sigma;  // |A| x |A|
    double N = 1.0;
};

SampleCovariance sample_covariance(const MatchingPatterns& mu_hat);

// Basis expectations over couples: sum_xy mu_xy phi_xy (singles carry no basis value).
Eigen::VectorXd comoments(const MatchingPatterns& mu, const Eigen::MatrixXd& phi);

}  // namespace sepmatch
