#pragma once

#include <vector>

#include <Eigen/Dense>

#include "sepmatch/entropy.hpp"
#include "sepmatch/types.hpp"

namespace sepmatch {

struct IpfpOptions {
    double tol = 1e-10;   // max relative margin violation
    int max_iter = 10000;
};

struct IpfpSolution {
    MatchingPatterns mu;
    Eigen::VectorXd u;  // men's expected-utility potentials, u_x = -sigma_x log(mu_x0/n_x)
    Eigen::VectorXd v;  // women's, v_y = -tau_y log(mu_0y/m_y)
    int iterations = 0;
    double residual = 0.0;
    std::vector<double> residual_history;  // one entry per full sweep
};

// Homoskedastic logit matching function: mu_xy = exp(Phi_xy/2) sqrt(mu_x0 mu_0y),
// alternating closed-form singles updates.
IpfpSolution ipfp_choo_siow(const Eigen::MatrixXd& phi, const Margins& q,
                            const IpfpOptions& opts = {});

// Scale heterogeneity sigma_x, tau_y > 0; each singles update solves a
// monotone scalar equation.
IpfpSolution ipfp_choo_siow_hetero(const Eigen::MatrixXd& phi, const Margins& q,
                                   const Eigen::VectorXd& sigma, const Eigen::VectorXd& tau,
                                   const IpfpOptions& opts = {});

// Two-layer nested logit fixed point over singles stocks and nest aggregates.
IpfpSolution ipfp_nested_logit(const Eigen::MatrixXd& phi, const Margins& q,
                               const NestedLogitSpec& spec, const IpfpOptions& opts = {});

// Family dispatcher (no equilibrium solver exists for mixed logit).
IpfpSolution solve_matching(const Eigen::MatrixXd& phi, const Margins& q,
                            const EntropyModel& model, const Eigen::VectorXd& alpha,
                            const IpfpOptions& opts = {});

// Root of t + sum_j coef_j t^{expo_j} = target over t >= 0, with coef_j >= 0
// and expo_j in (0,1]; safeguarded Newton, relative tolerance 1e-13.
double solve_mux0_root(const Eigen::VectorXd& coef, const Eigen::VectorXd& expo,
                       double target);

struct BruteForceOptions {
    double tol = 1e-12;  // max absolute optimality-condition violation
    int max_iter = 500;
};

struct BruteForceSolution {
    MatchingPatterns mu;
    int iterations = 0;
    double grad_norm = 0.0;
};

// Direct damped-Newton maximization of sum(mu . Phi) + E(mu, q) over couple
// cells with singles substituted out. Reference implementation for small
// markets (at most 25 couple cells).
BruteForceSolution brute_force_surplus_max(const Eigen::MatrixXd& phi,
                                           const EntropyModel& model, const Margins& q,
                                           const Eigen::VectorXd& alpha,
                                           const BruteForceOptions& opts = {});

}  // namespace sepmatch
