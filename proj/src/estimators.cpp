#include "sepmatch/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "sepmatch/errors.hpp"

namespace sepmatch {

namespace {

std::string format_direction(const Eigen::VectorXd& v) {
    std::ostringstream os;
    os << "[";
    for (int i = 0; i < v.size(); ++i) {
        if (i) os << ", ";
        os << v(i);
    }
    os << "]";
    return os.str();
}

struct CheckedSolve {
    Eigen::VectorXd lambda;
    Eigen::MatrixXd a_inv;  // (F' S F)^-1
};

CheckedSolve solve_normal_equations(const Eigen::MatrixXd& S, const Eigen::MatrixXd& F,
                                    const Eigen::VectorXd& e0) {
    if (S.rows() != S.cols() || S.rows() != F.rows() || e0.size() != F.rows())
        throw InputError("weighting/design/residual dimensions do not agree");
    if (F.cols() < 1) throw InputError("design has no parameters");
    Eigen::MatrixXd a = F.transpose() * S * F;
    a = 0.5 * (a + a.transpose()).eval();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    const double emax = eig.eigenvalues().cwiseAbs().maxCoeff();
    if (!(emax > 0.0) || eig.eigenvalues().minCoeff() <= 1e-12 * emax)
        throw IdentificationError(
            "normal equations are rank deficient; null-space combination " +
            format_direction(eig.eigenvectors().col(0)));
    const Eigen::MatrixXd a_inv = eig.eigenvectors() *
                                  eig.eigenvalues().cwiseInverse().asDiagonal() *
                                  eig.eigenvectors().transpose();
    CheckedSolve out;
    out.a_inv = 0.5 * (a_inv + a_inv.transpose()).eval();
    out.lambda = out.a_inv * (-F.transpose() * (S * e0));
    return out;
}

// Eigenvalue-floored pseudo-inverse: eigenvalues at or below
// 1e-12 * max eigenvalue are excluded from the inverse.
Eigen::MatrixXd floored_pinv(const Eigen::MatrixXd& m, int& floored_count) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
    const double emax = eig.eigenvalues().maxCoeff();
    if (!(emax > 0.0))
        throw IdentificationError("residual covariance has no positive eigenvalue");
    const double floor = 1e-12 * emax;
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(eig.eigenvalues().size());
    floored_count = 0;
    for (int i = 0; i < inv.size(); ++i) {
        if (eig.eigenvalues()(i) > floor)
            inv(i) = 1.0 / eig.eigenvalues()(i);
        else
            ++floored_count;
    }
    Eigen::MatrixXd out =
        eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
    return 0.5 * (out + out.transpose()).eval();
}

// Hessian-based moment derivative J = [E_mumu | E_muq] with the interior
// requirement relaxed; dropped rows are masked by the caller.
Eigen::MatrixXd lenient_jacobian(const EntropyModel& model, const MatchingPatterns& mu,
                                 const Margins& q, const Eigen::VectorXd& alpha1,
                                 std::vector<std::string>& warnings) {
    const int X = mu.mu.rows(), Y = mu.mu.cols();
    EntropyHessians h;
    switch (model.family) {
        case Family::choo_siow_homoskedastic:
            h = cs_hetero_hessians(Eigen::VectorXd::Ones(X), Eigen::VectorXd::Ones(Y), mu, q,
                                   true);
            break;
        case Family::choo_siow_gender_heteroskedastic: {
            double tau = alpha1(0);
            if (tau < 1e-6) {
                tau = 1e-6;
                warnings.push_back("step-1 tau clipped to 1e-6 for the weighting step");
            }
            h = cs_hetero_hessians(Eigen::VectorXd::Ones(X), Eigen::VectorXd::Constant(Y, tau),
                                   mu, q, true);
            break;
        }
        case Family::choo_siow_full_heteroskedastic: {
            Eigen::VectorXd sigma(X), tau(Y);
            sigma(0) = 1.0;
            bool clipped = false;
            for (int x = 1; x < X; ++x) {
                sigma(x) = alpha1(x - 1);
                if (sigma(x) < 1e-6) sigma(x) = 1e-6, clipped = true;
            }
            for (int y = 0; y < Y; ++y) {
                tau(y) = alpha1(X - 1 + y);
                if (tau(y) < 1e-6) tau(y) = 1e-6, clipped = true;
            }
            if (clipped)
                warnings.push_back("step-1 scales clipped to 1e-6 for the weighting step");
            h = cs_hetero_hessians(sigma, tau, mu, q, true);
            break;
        }
        case Family::nested_logit: {
            Eigen::VectorXd a = alpha1;
            bool clipped = false;
            for (int i = 0; i < a.size(); ++i) {
                const double c = std::clamp(a(i), 0.05, 1.0);
                if (c != a(i)) clipped = true;
                a(i) = c;
            }
            if (clipped)
                warnings.push_back(
                    "step-1 nest parameters clipped into [0.05,1] for the weighting step");
            const auto [rho, delta] = model.nested.params_from_alpha(a);
            h = nested_logit_hessians(model.nested, rho, delta, mu, q, true);
            break;
        }
        case Family::mixed_logit:
            h = numeric_hessians(model, mu, q, Eigen::VectorXd());
            break;
    }
    Eigen::MatrixXd j(X * Y, X * Y + X + Y);
    j.leftCols(X * Y) = Eigen::MatrixXd(h.h_mumu);
    j.rightCols(X + Y) = Eigen::MatrixXd(h.h_muq);
    return j;
}

}  // namespace

Eigen::VectorXd build_residual_D(const Eigen::VectorXd& lambda, const MatchingPatterns& mu_hat,
                                 const Margins& q_hat, const EntropyModel& model,
                                 const Eigen::MatrixXd& phi) {
    const TypeSpace space{static_cast<int>(mu_hat.mu.rows()),
                          static_cast<int>(mu_hat.mu.cols())};
    const int d_alpha = model.d_alpha(space);
    const int K = static_cast<int>(phi.cols());
    if (phi.rows() != space.n_couples())
        throw InputError("basis matrix rows do not match the couple grid");
    if (lambda.size() != d_alpha + K)
        throw InputError("lambda has wrong length for model and basis");
    const auto dec = gradient_decomposition(model, mu_hat, q_hat);
    Eigen::VectorXd d = phi * lambda.tail(K) + dec.e0;
    if (d_alpha > 0) d += dec.e * lambda.head(d_alpha);
    return d;
}

Eigen::VectorXd mde_solve(const Eigen::MatrixXd& S, const Eigen::MatrixXd& F_hat,
                          const Eigen::VectorXd& e0_hat) {
    return solve_normal_equations(S, F_hat, e0_hat).lambda;
}

MDEResult mde_two_step(const MatchingPatterns& mu_hat, const Margins& q_hat,
                       const EntropyModel& model, const Eigen::MatrixXd& phi,
                       const MDEConfig& config) {
    const int X = mu_hat.mu.rows(), Y = mu_hat.mu.cols();
    const TypeSpace space{X, Y};
    const int XY = X * Y;
    const int K = static_cast<int>(phi.cols());
    const int d_alpha = model.d_alpha(space);
    if (phi.rows() != XY) throw InputError("basis matrix rows do not match the couple grid");
    if (!(mu_hat.N > 0.0)) throw InputError("matching sample size N must be positive");

    MDEResult res;

    MatchingPatterns w = mu_hat;
    Margins qw = q_hat;
    if (config.zero_cell_policy == ZeroCellPolicy::shift) {
        if (!(config.shift_delta > 0.0))
            throw InputError("shift_delta must be positive under the shift policy");
        w.mu.array() += config.shift_delta;
        qw.n.array() += Y * config.shift_delta;
        qw.m.array() += X * config.shift_delta;
    }

    std::vector<int> keep;
    keep.reserve(XY);
    for (int x = 0; x < X; ++x)
        for (int y = 0; y < Y; ++y) {
            if (w.mu(x, y) > 0.0 && w.mu_x0(x) > 0.0 && w.mu_0y(y) > 0.0)
                keep.push_back(x * Y + y);
            else
                res.dropped_cells.emplace_back(x + 1, y + 1);
        }
    const int R = static_cast<int>(keep.size());
    res.df = R - d_alpha - K;
    if (res.df == 0)
        res.warnings.push_back("just-identified system; specification test is vacuous");

    const auto dec = model.family == Family::mixed_logit
                         ? gradient_decomposition(model, w, qw)
                         : gradient_decomposition_lenient(model, w, qw);
    res.e0_hat.resize(R);
    res.F_hat.resize(R, d_alpha + K);
    for (int r = 0; r < R; ++r) {
        res.e0_hat(r) = dec.e0(keep[r]);
        for (int c = 0; c < d_alpha; ++c) res.F_hat(r, c) = dec.e(keep[r], c);
        for (int k = 0; k < K; ++k) res.F_hat(r, d_alpha + k) = phi(keep[r], k);
    }
    if (!res.e0_hat.allFinite() || !res.F_hat.allFinite())
        throw InputError("moment system is not finite on the retained cells");

    Eigen::MatrixXd s1;
    if (config.weighting == MDEWeighting::supplied) {
        if (config.S_supplied.rows() != XY || config.S_supplied.cols() != XY)
            throw InputError("supplied weighting must cover the full couple grid");
        s1.resize(R, R);
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < R; ++c) s1(r, c) = config.S_supplied(keep[r], keep[c]);
        s1 = 0.5 * (s1 + s1.transpose()).eval();
    } else {
        s1 = Eigen::MatrixXd::Identity(R, R);
    }

    const CheckedSolve step1 = solve_normal_equations(s1, res.F_hat, res.e0_hat);
    res.lambda_hat = step1.lambda;

    // Residual covariance through the sampling model of the arrangement
    // frequencies, evaluated at the step-1 distributional parameters.
    const Eigen::MatrixXd j =
        lenient_jacobian(model, w, qw, step1.lambda.head(d_alpha), res.warnings);
    Eigen::MatrixXd g(R, XY + X + Y);
    for (int r = 0; r < R; ++r) {
        for (int a = 0; a < XY; ++a)
            g(r, a) = j(keep[r], a) + j(keep[r], XY + a / Y) + j(keep[r], XY + X + a % Y);
        for (int z = 0; z < X; ++z) g(r, XY + z) = j(keep[r], XY + z);
        for (int t = 0; t < Y; ++t) g(r, XY + X + t) = j(keep[r], XY + X + t);
    }
    if (!g.allFinite())
        throw InputError("moment derivatives are not finite on the retained cells");
    const Eigen::VectorXd p = mu_hat.flatten();
    if (std::abs(p.sum() - 1.0) > 1e-8)
        throw InputError("matching frequencies must sum to 1 for the weighting step");
    const Eigen::MatrixXd gs = g * p.cwiseSqrt().asDiagonal();
    const Eigen::VectorXd gp = g * p;
    res.Omega_hat = (gs * gs.transpose() - gp * gp.transpose()) / mu_hat.N;
    res.Omega_hat = 0.5 * (res.Omega_hat + res.Omega_hat.transpose()).eval();

    if (config.weighting == MDEWeighting::efficient_two_step) {
        int floored = 0;
        res.S_used = floored_pinv(res.Omega_hat, floored);
        if (floored > 0)
            res.warnings.push_back("residual covariance pseudo-inverse floored " +
                                   std::to_string(floored) + " eigenvalue(s)");
        const CheckedSolve step2 = solve_normal_equations(res.S_used, res.F_hat, res.e0_hat);
        res.lambda_hat = step2.lambda;
        res.V_lambda = step2.a_inv;
    } else {
        res.S_used = s1;
        const Eigen::MatrixXd inner = res.F_hat.transpose() * s1 * res.Omega_hat * s1 *
                                      res.F_hat;
        res.V_lambda = step1.a_inv * inner * step1.a_inv;
    }
    res.V_lambda = 0.5 * (res.V_lambda + res.V_lambda.transpose()).eval();

    res.alpha_hat = res.lambda_hat.head(d_alpha);
    res.beta_hat = res.lambda_hat.tail(K);
    const Eigen::VectorXd d = res.e0_hat + res.F_hat * res.lambda_hat;
    res.T_stat = d.dot(res.S_used * d);
    return res;
}

PoissonDesign build_poisson_design(const Eigen::MatrixXd& phi, const TypeSpace& space) {
    const int X = space.X, Y = space.Y;
    const int K = static_cast<int>(phi.cols());
    if (phi.rows() != space.n_couples())
        throw InputError("basis matrix rows do not match the couple grid");
    PoissonDesign d;
    d.K = K;
    d.X = X;
    d.Y = Y;
    d.Z = Eigen::MatrixXd::Zero(space.n_arrangements(), K + X + Y);
    d.w = Eigen::VectorXd::Ones(space.n_arrangements());
    for (int x = 0; x < X; ++x)
        for (int y = 0; y < Y; ++y) {
            const int r = x * Y + y;
            d.Z.row(r).head(K) = 0.5 * phi.row(r);
            d.Z(r, K + x) = -0.5;
            d.Z(r, K + X + y) = -0.5;
            d.w(r) = 2.0;
        }
    for (int x = 0; x < X; ++x) d.Z(X * Y + x, K + x) = -1.0;
    for (int y = 0; y < Y; ++y) d.Z(X * Y + X + y, K + X + y) = -1.0;
    return d;
}

PoissonResult poisson_fit(const MatchingPatterns& mu_hat, const PoissonDesign& design,
                          double tol, int max_iter, Eigen::VectorXd gamma0) {
    const int X = design.X, Y = design.Y, K = design.K;
    if (mu_hat.mu.rows() != X || mu_hat.mu.cols() != Y)
        throw InputError("matching dimensions do not match the design");
    const Eigen::VectorXd p = mu_hat.flatten();
    if ((p.array() < 0.0).any()) throw InputError("matching frequencies must be nonnegative");
    const int nparam = K + X + Y;

    {
        const Eigen::MatrixXd a0 =
            design.Z.transpose() * design.w.asDiagonal() * design.Z;
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a0);
        const double emax = eig.eigenvalues().maxCoeff();
        if (!(emax > 0.0) || eig.eigenvalues().minCoeff() <= 1e-12 * emax)
            throw IdentificationError("design is rank deficient along " +
                                      format_direction(eig.eigenvectors().col(0)));
    }

    const auto objective = [&](const Eigen::VectorXd& gamma) {
        const Eigen::ArrayXd zg = (design.Z * gamma).array();
        return (design.w.array() * (p.array() * zg - zg.exp())).sum();
    };

    Eigen::VectorXd gamma =
        gamma0.size() == 0 ? Eigen::VectorXd::Zero(nparam) : std::move(gamma0);
    if (gamma.size() != nparam)
        throw InputError("poisson start point has wrong dimension");
    double cur = objective(gamma);
    int iterations = 0;
    bool converged = false;
    Eigen::VectorXd grad(nparam);
    for (int it = 1; it <= max_iter; ++it) {
        iterations = it;
        const Eigen::VectorXd lam = (design.Z * gamma).array().exp();
        grad = design.Z.transpose() * (design.w.cwiseProduct(p - lam));
        if (grad.cwiseAbs().maxCoeff() < tol) {
            converged = true;
            break;
        }
        const Eigen::MatrixXd a =
            design.Z.transpose() * (design.w.cwiseProduct(lam)).asDiagonal() * design.Z;
        const Eigen::VectorXd dir = a.ldlt().solve(grad);
        if (!dir.allFinite())
            throw ConvergenceError("poisson step direction is not finite");
        double t = 1.0;
        while (t > 1e-14 && !(objective(gamma + t * dir) > cur)) t /= 2.0;
        const double move = (t * dir).cwiseAbs().maxCoeff();
        gamma += t * dir;
        cur = objective(gamma);
        if (move < 1e-13 * (1.0 + gamma.cwiseAbs().maxCoeff())) {
            // parameter movement at the numerical floor: accept
            const Eigen::VectorXd lam2 = (design.Z * gamma).array().exp();
            grad = design.Z.transpose() * (design.w.cwiseProduct(p - lam2));
            converged = true;
            break;
        }
    }
    if (!converged)
        throw ConvergenceError("poisson regression did not converge (gradient " +
                               std::to_string(grad.cwiseAbs().maxCoeff()) + ")");

    PoissonResult res;
    res.gamma_hat = gamma;
    res.beta_hat = gamma.head(K);
    res.a_hat = gamma.segment(K, X);
    res.b_hat = gamma.tail(Y);
    const Margins q = margins_from_matching(mu_hat);
    res.u_hat = res.a_hat + q.n.array().log().matrix();
    res.v_hat = res.b_hat + q.m.array().log().matrix();
    res.loglik = cur;
    res.iterations = iterations;
    res.comoment_residual = grad.head(K).cwiseAbs().maxCoeff();

    const Eigen::VectorXd lam = (design.Z * gamma).array().exp();
    res.A_hat = design.Z.transpose() * (design.w.cwiseProduct(lam)).asDiagonal() * design.Z;
    const Eigen::MatrixXd wz = design.w.asDiagonal() * design.Z;
    const Eigen::VectorXd wzp = wz.transpose() * p;
    res.B_hat = wz.transpose() * p.asDiagonal() * wz - wzp * wzp.transpose();
    res.B_hat = 0.5 * (res.B_hat + res.B_hat.transpose()).eval();
    res.V_gamma = poisson_variance(res, mu_hat, design);
    return res;
}

Eigen::MatrixXd poisson_variance(const PoissonResult& result, const MatchingPatterns& mu_hat,
                                 const PoissonDesign& design) {
    if (!(mu_hat.N > 0.0)) throw InputError("matching sample size N must be positive");
    const Eigen::VectorXd p = mu_hat.flatten();
    const Eigen::VectorXd lam = (design.Z * result.gamma_hat).array().exp();
    const Eigen::MatrixXd a =
        design.Z.transpose() * (design.w.cwiseProduct(lam)).asDiagonal() * design.Z;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    const double emax = eig.eigenvalues().maxCoeff();
    if (!(emax > 0.0) || eig.eigenvalues().minCoeff() <= 1e-14 * emax)
        throw IdentificationError("poisson information matrix is singular");
    const Eigen::MatrixXd a_inv = eig.eigenvectors() *
                                  eig.eigenvalues().cwiseInverse().asDiagonal() *
                                  eig.eigenvectors().transpose();
    const Eigen::MatrixXd wz = design.w.asDiagonal() * design.Z;
    const Eigen::VectorXd wzp = wz.transpose() * p;
    Eigen::MatrixXd b = wz.transpose() * p.asDiagonal() * wz - wzp * wzp.transpose();
    b = 0.5 * (b + b.transpose()).eval();
    Eigen::MatrixXd v = a_inv * b * a_inv / mu_hat.N;
    return 0.5 * (v + v.transpose()).eval();
}

}  // namespace sepmatch
