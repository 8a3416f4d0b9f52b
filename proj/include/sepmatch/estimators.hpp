#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sepmatch/entropy.hpp"
#include "sepmatch/types.hpp"

namespace sepmatch {

enum class MDEWeighting { identity, supplied, efficient_two_step };
enum class ZeroCellPolicy { drop, shift };

struct MDEConfig {
    MDEWeighting weighting = MDEWeighting::efficient_two_step;
    Eigen::MatrixXd S_supplied;  // full (X*Y)x(X*Y) grid; used when weighting == supplied
    ZeroCellPolicy zero_cell_policy = ZeroCellPolicy::drop;
    double shift_delta = 0.0;  // required > 0 when policy == shift
};

struct MDEResult {
    Eigen::VectorXd lambda_hat;  // (d_alpha + K), split below
    Eigen::VectorXd alpha_hat;
    Eigen::VectorXd beta_hat;
    Eigen::MatrixXd S_used;     // retained x retained weighting actually applied
    Eigen::MatrixXd F_hat;      // retained x (d_alpha + K), columns [e | basis]
    Eigen::VectorXd e0_hat;     // retained
    Eigen::MatrixXd Omega_hat;  // retained x retained residual covariance
    Eigen::MatrixXd V_lambda;
    double T_stat = 0.0;
    int df = 0;  // retained rows - d_alpha - K
    std::vector<std::pair<int, int>> dropped_cells;  // 1-based (x,y)
    std::vector<std::string> warnings;
};

// Moment residual D(lambda) = phi.beta + e0 + e.alpha on the full grid;
// requires interior data (apply a zero-cell policy upstream).
Eigen::VectorXd build_residual_D(const Eigen::VectorXd& lambda, const MatchingPatterns& mu_hat,
                                 const Margins& q_hat, const EntropyModel& model,
                                 const Eigen::MatrixXd& phi);

// Normal equations (F' S F) lambda = -F' S e0 via a checked symmetric solve.
Eigen::VectorXd mde_solve(const Eigen::MatrixXd& S, const Eigen::MatrixXd& F_hat,
                          const Eigen::VectorXd& e0_hat);

// Minimum-distance estimation with optional efficient reweighting. mu_hat.N
// must hold the household sample size for variance scaling.
MDEResult mde_two_step(const MatchingPatterns& mu_hat, const Margins& q_hat,
                       const EntropyModel& model, const Eigen::MatrixXd& phi,
                       const MDEConfig& config = {});

struct PoissonDesign {
    Eigen::MatrixXd Z;  // (X*Y + X + Y) x (K + X + Y)
    Eigen::VectorXd w;  // household sizes: 2 on couples, 1 on singles
    int K = 0, X = 0, Y = 0;
};

PoissonDesign build_poisson_design(const Eigen::MatrixXd& phi, const TypeSpace& space);

struct PoissonResult {
    Eigen::VectorXd gamma_hat;  // (beta, a, b)
    Eigen::VectorXd beta_hat;
    Eigen::VectorXd a_hat, b_hat;
    Eigen::VectorXd u_hat, v_hat;  // u = a + log n_hat, v = b + log m_hat
    Eigen::MatrixXd A_hat, B_hat;
    Eigen::MatrixXd V_gamma;  // sandwich already divided by mu_hat.N
    double loglik = 0.0;      // per-household scale
    int iterations = 0;
    double comoment_residual = 0.0;  // max |basis-block gradient| at the optimum
};

// Two-way fixed-effects Poisson pseudo-likelihood fit; zero cells are fine
// (no logs of mu_hat are taken). gamma0 empty starts at zero.
PoissonResult poisson_fit(const MatchingPatterns& mu_hat, const PoissonDesign& design,
                          double tol = 1e-9, int max_iter = 200,
                          Eigen::VectorXd gamma0 = {});

// Sandwich variance A^-1 B A^-1 scaled by 1/mu_hat.N (recomputed from parts).
Eigen::MatrixXd poisson_variance(const PoissonResult& result, const MatchingPatterns& mu_hat,
                                 const PoissonDesign& design);

}  // namespace sepmatch
