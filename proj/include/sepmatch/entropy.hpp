#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "sepmatch/types.hpp"

namespace sepmatch {

enum class Family {
    choo_siow_homoskedastic,
    choo_siow_gender_heteroskedastic,
    choo_siow_full_heteroskedastic,
    nested_logit,
    mixed_logit,
};

// Two-layer nested-logit structure. Men's nests partition the woman types,
// women's nests partition the man types; the singles nest is implicit with a
// unit parameter. Tie labels map each per-nest parameter onto a coordinate of
// the free parameter vector alpha, so nests can share one estimated value.
struct NestedLogitSpec {
    std::vector<std::vector<int>> nests_men;    // each: 0-based woman types
    std::vector<std::vector<int>> nests_women;  // each: 0-based man types
    Eigen::VectorXd rho;                        // per men-side nest, in (0,1]
    Eigen::VectorXd delta;                      // per women-side nest, in (0,1]
    std::vector<int> rho_tie;                   // alpha coordinate per rho entry
    std::vector<int> delta_tie;                 // alpha coordinate per delta entry

    int d_alpha() const;
    void validate(const TypeSpace& space) const;

    // lookup: nest index containing each woman type / man type
    std::vector<int> nest_of_y(int Y) const;
    std::vector<int> nest_of_x(int X) const;

    // expand alpha through the tie map; alpha empty means "use stored rho/delta"
    std::pair<Eigen::VectorXd, Eigen::VectorXd> params_from_alpha(
        const Eigen::VectorXd& alpha) const;
    Eigen::VectorXd alpha_from_params() const;
};

// One side's random-coefficient logit: partner characteristics zchar, a
// finite mixture over taste vectors (rows of atoms, probabilities weights),
// and iid extreme-value shocks of scale s. The singles option has zero
// characteristics and zero systematic utility.
struct MixedLogitSpec {
    Eigen::MatrixXd zchar;    // (#partner types) x d
    Eigen::MatrixXd atoms;    // n_atoms x d
    Eigen::VectorXd weights;  // n_atoms, sums to 1
    double s = 1.0;

    void validate() const;
};

struct EntropyModel {
    Family family = Family::choo_siow_homoskedastic;
    NestedLogitSpec nested;     // nested_logit only
    MixedLogitSpec mixed_men;   // mixed_logit only
    MixedLogitSpec mixed_women;

    int d_alpha(const TypeSpace& space) const;

    static EntropyModel choo_siow();
    static EntropyModel gender_heteroskedastic();
    static EntropyModel full_heteroskedastic();
    static EntropyModel nested_logit(NestedLogitSpec spec);
    static EntropyModel mixed_logit(MixedLogitSpec men, MixedLogitSpec women);
};

// Entropy derivative split linearly in the distributional parameters:
// d E / d mu_xy = e0_xy + e_xy . alpha, rows in couple order.
struct GradientDecomposition {
    Eigen::VectorXd e0;  // X*Y
    Eigen::MatrixXd e;   // (X*Y) x d_alpha
};

GradientDecomposition gradient_decomposition(const EntropyModel& model,
                                             const MatchingPatterns& mu, const Margins& q);

// Same computation without the interior precondition: entries touching an
// empty cell come back as IEEE infinities for the caller to mask. Closed-form
// families only.
GradientDecomposition gradient_decomposition_lenient(const EntropyModel& model,
                                                     const MatchingPatterns& mu,
                                                     const Margins& q);

// e0 + e.alpha at a concrete alpha (for mixed logit, alpha is empty and the
// gradient is e0 itself). Full-heteroskedastic alpha packs (sigma_2..sigma_X,
// tau_1..tau_Y) with sigma_1 = 1 fixed.
Eigen::VectorXd entropy_gradient(const EntropyModel& model, const MatchingPatterns& mu,
                                 const Margins& q, const Eigen::VectorXd& alpha);

// Second derivatives with singles substituted out through the margins:
// h_mumu over couple pairs, h_muq against (n_1..n_X, m_1..m_Y).
struct EntropyHessians {
    Eigen::SparseMatrix<double> h_mumu;  // (X*Y) x (X*Y)
    Eigen::SparseMatrix<double> h_muq;   // (X*Y) x (X+Y)
};

// allow_zero_cells skips the interior precondition; rows touching an empty
// cell then carry infinite entries for the caller to mask.
EntropyHessians cs_hetero_hessians(const Eigen::VectorXd& sigma, const Eigen::VectorXd& tau,
                                   const MatchingPatterns& mu, const Margins& q,
                                   bool allow_zero_cells = false);

EntropyHessians nested_logit_hessians(const NestedLogitSpec& spec, const Eigen::VectorXd& rho,
                                      const Eigen::VectorXd& delta, const MatchingPatterns& mu,
                                      const Margins& q, bool allow_zero_cells = false);

struct NestedGradient {
    Eigen::VectorXd gradient;  // at the spec's stored rho/delta
    GradientDecomposition decomposition;
};

NestedGradient nested_logit_gradient(const NestedLogitSpec& spec, const MatchingPatterns& mu,
                                     const Margins& q);

// Invert conditional partner shares nu (singlehood share 1 - sum nu implied)
// into systematic utilities U with U_0 = 0, via the share-matching fixed
// point U <- U + s (log nu - log nu(U)).
Eigen::VectorXd mixed_logit_inverse(const MixedLogitSpec& spec, const Eigen::VectorXd& nu,
                                    double tol = 1e-12, int max_iter = 10000);

// Forward share map at systematic utilities U (exposed for oracles/tests).
Eigen::VectorXd mixed_logit_shares(const MixedLogitSpec& spec, const Eigen::VectorXd& U);

Eigen::VectorXd mixed_logit_gradient(const MixedLogitSpec& spec_men,
                                     const MixedLogitSpec& spec_women,
                                     const MatchingPatterns& mu, const Margins& q);

// Finite-difference Hessians of the entropy gradient at a concrete alpha.
// step = 0 selects the per-cell rule max(1e-6, 1e-4 * mu_cell); only the
// sparse row/column blocks touched by each perturbation are evaluated.
EntropyHessians numeric_hessians(const EntropyModel& model, const MatchingPatterns& mu,
                                 const Margins& q, const Eigen::VectorXd& alpha,
                                 double step = 0.0);

// Closed form where available (all Choo-Siow variants, nested logit),
// numeric fallback otherwise.
EntropyHessians entropy_hessians(const EntropyModel& model, const MatchingPatterns& mu,
                                 const Margins& q, const Eigen::VectorXd& alpha);

}  // namespace sepmatch
