#include "sepmatch/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sepmatch/errors.hpp"

namespace sepmatch {

namespace {

constexpr double kExpLimit = 700.0;  // exp beyond this overflows double

void check_market(const Eigen::MatrixXd& phi, const Margins& q) {
    if (phi.rows() < 1 || phi.cols() < 1) throw InputError("market has no types");
    if (phi.rows() != q.n.size() || phi.cols() != q.m.size())
        throw InputError("surplus matrix dimensions do not match margins");
    if (!phi.allFinite()) throw InputError("surplus matrix has non-finite entries");
    for (int x = 0; x < q.n.size(); ++x)
        if (!(q.n(x) > 0.0)) throw InputError("n(" + std::to_string(x + 1) + ") must be positive");
    for (int y = 0; y < q.m.size(); ++y)
        if (!(q.m(y) > 0.0)) throw InputError("m(" + std::to_string(y + 1) + ") must be positive");
}

double guarded_exp(double arg) {
    if (arg > kExpLimit)
        throw ConvergenceError("exponential overflow in matching function (argument " +
                               std::to_string(arg) + ")");
    return std::exp(arg);
}

double relative_margin_residual(const Eigen::MatrixXd& mu, const Eigen::VectorXd& mux0,
                                const Eigen::VectorXd& mu0y, const Margins& q) {
    double res = 0.0;
    for (int x = 0; x < q.n.size(); ++x)
        res = std::max(res, std::abs(mux0(x) + mu.row(x).sum() - q.n(x)) / q.n(x));
    for (int y = 0; y < q.m.size(); ++y)
        res = std::max(res, std::abs(mu0y(y) + mu.col(y).sum() - q.m(y)) / q.m(y));
    return res;
}

IpfpSolution pack_solution(Eigen::MatrixXd mu, Eigen::VectorXd mux0, Eigen::VectorXd mu0y,
                           const Margins& q, const Eigen::VectorXd& sigma,
                           const Eigen::VectorXd& tau, int iterations, double residual,
                           std::vector<double> history) {
    IpfpSolution out;
    out.mu.mu = std::move(mu);
    out.mu.mu_x0 = std::move(mux0);
    out.mu.mu_0y = std::move(mu0y);
    out.mu.N = 1.0;
    out.u = -(sigma.array() * (out.mu.mu_x0.array() / q.n.array()).log()).matrix();
    out.v = -(tau.array() * (out.mu.mu_0y.array() / q.m.array()).log()).matrix();
    out.iterations = iterations;
    out.residual = residual;
    out.residual_history = std::move(history);
    return out;
}

}  // namespace

double solve_mux0_root(const Eigen::VectorXd& coef, const Eigen::VectorXd& expo,
                       double target) {
    if (coef.size() != expo.size()) throw InputError("coefficient and exponent size mismatch");
    for (int j = 0; j < coef.size(); ++j) {
        if (!(coef(j) >= 0.0) || !std::isfinite(coef(j)))
            throw InputError("root coefficients must be finite and nonnegative");
        if (!(expo(j) > 0.0 && expo(j) <= 1.0))
            throw InputError("root exponents must lie in (0,1]");
    }
    if (!(target >= 0.0) || !std::isfinite(target))
        throw InputError("root target must be finite and nonnegative");
    if (target == 0.0) return 0.0;

    const auto eval = [&](double t, double& f, double& fp) {
        f = t - target;
        fp = 1.0;
        for (int j = 0; j < coef.size(); ++j) {
            if (coef(j) == 0.0) continue;
            const double tp = std::pow(t, expo(j));
            f += coef(j) * tp;
            fp += coef(j) * expo(j) * (tp / t);
        }
    };

    double lo = 0.0, hi = target;
    double t = 0.5 * target;
    for (int it = 0; it < 200; ++it) {
        double f, fp;
        eval(t, f, fp);
        if (f == 0.0) return t;
        if (std::abs(f) <= 1e-14 * target) return t;
        if (f > 0.0)
            hi = t;
        else
            lo = t;
        if (hi - lo <= 1e-13 * hi) return 0.5 * (lo + hi);
        double tn = (std::isfinite(fp) && fp > 0.0) ? t - f / fp : 0.5 * (lo + hi);
        if (!(tn > lo && tn < hi)) tn = 0.5 * (lo + hi);
        t = tn;
    }
    return 0.5 * (lo + hi);
}

IpfpSolution ipfp_choo_siow(const Eigen::MatrixXd& phi, const Margins& q,
                            const IpfpOptions& opts) {
    check_market(phi, q);
    const int X = phi.rows(), Y = phi.cols();
    if (phi.cwiseAbs().maxCoeff() / 2.0 > kExpLimit)
        throw ConvergenceError("surplus too large for the exponential matching function");
    const Eigen::MatrixXd K = (phi.array() / 2.0).exp();

    Eigen::VectorXd mux0 = q.n / 2.0, mu0y = q.m / 2.0;
    Eigen::MatrixXd mu(X, Y);
    std::vector<double> history;
    for (int it = 1; it <= opts.max_iter; ++it) {
        const Eigen::VectorXd s = K * mu0y.cwiseSqrt();
        const Eigen::VectorXd a =
            (2.0 * q.n.array() / (s.array() + (s.array().square() + 4.0 * q.n.array()).sqrt()))
                .matrix();
        mux0 = a.cwiseProduct(a);
        const Eigen::VectorXd s2 = K.transpose() * mux0.cwiseSqrt();
        const Eigen::VectorXd b =
            (2.0 * q.m.array() / (s2.array() + (s2.array().square() + 4.0 * q.m.array()).sqrt()))
                .matrix();
        mu0y = b.cwiseProduct(b);
        mu = K.cwiseProduct(mux0.cwiseSqrt() * mu0y.cwiseSqrt().transpose());
        const double res = relative_margin_residual(mu, mux0, mu0y, q);
        history.push_back(res);
        if (res < opts.tol)
            return pack_solution(std::move(mu), std::move(mux0), std::move(mu0y), q,
                                 Eigen::VectorXd::Ones(X), Eigen::VectorXd::Ones(Y), it, res,
                                 std::move(history));
    }
    throw ConvergenceError("matching fixed point did not converge (residual " +
                           std::to_string(history.back()) + ")");
}

IpfpSolution ipfp_choo_siow_hetero(const Eigen::MatrixXd& phi, const Margins& q,
                                   const Eigen::VectorXd& sigma, const Eigen::VectorXd& tau,
                                   const IpfpOptions& opts) {
    check_market(phi, q);
    const int X = phi.rows(), Y = phi.cols();
    if (sigma.size() != X || tau.size() != Y)
        throw InputError("heteroskedastic scale vectors have wrong length");
    for (int x = 0; x < X; ++x)
        if (!(sigma(x) > 0.0)) throw InputError("sigma must be positive");
    for (int y = 0; y < Y; ++y)
        if (!(tau(y) > 0.0)) throw InputError("tau must be positive");

    Eigen::VectorXd mux0 = q.n / 2.0, mu0y = q.m / 2.0;
    Eigen::MatrixXd mu(X, Y);
    std::vector<double> history;
    for (int it = 1; it <= opts.max_iter; ++it) {
        for (int x = 0; x < X; ++x) {
            Eigen::VectorXd coef(Y), expo(Y);
            for (int y = 0; y < Y; ++y) {
                const double st = sigma(x) + tau(y);
                coef(y) = guarded_exp((phi(x, y) + tau(y) * std::log(mu0y(y))) / st);
                expo(y) = sigma(x) / st;
            }
            mux0(x) = solve_mux0_root(coef, expo, q.n(x));
        }
        for (int y = 0; y < Y; ++y) {
            Eigen::VectorXd coef(X), expo(X);
            for (int x = 0; x < X; ++x) {
                const double st = sigma(x) + tau(y);
                coef(x) = guarded_exp((phi(x, y) + sigma(x) * std::log(mux0(x))) / st);
                expo(x) = tau(y) / st;
            }
            mu0y(y) = solve_mux0_root(coef, expo, q.m(y));
        }
        for (int x = 0; x < X; ++x)
            for (int y = 0; y < Y; ++y) {
                const double st = sigma(x) + tau(y);
                mu(x, y) = guarded_exp((phi(x, y) + sigma(x) * std::log(mux0(x)) +
                                        tau(y) * std::log(mu0y(y))) /
                                       st);
            }
        const double res = relative_margin_residual(mu, mux0, mu0y, q);
        history.push_back(res);
        if (res < opts.tol)
            return pack_solution(std::move(mu), std::move(mux0), std::move(mu0y), q, sigma,
                                 tau, it, res, std::move(history));
    }
    throw ConvergenceError("matching fixed point did not converge (residual " +
                           std::to_string(history.back()) + ")");
}

IpfpSolution ipfp_nested_logit(const Eigen::MatrixXd& phi, const Margins& q,
                               const NestedLogitSpec& spec, const IpfpOptions& opts) {
    check_market(phi, q);
    const int X = phi.rows(), Y = phi.cols();
    spec.validate(TypeSpace{X, Y});
    const int nm = static_cast<int>(spec.nests_men.size());
    const int nw = static_cast<int>(spec.nests_women.size());
    const auto ny = spec.nest_of_y(Y);
    const auto nx = spec.nest_of_x(X);

    Eigen::VectorXd mux0 = q.n / 2.0, mu0y = q.m / 2.0;
    Eigen::MatrixXd munx(X, nm), muny(nw, Y);
    for (int x = 0; x < X; ++x) munx.row(x).setConstant(q.n(x) / (2.0 * nm));
    for (int y = 0; y < Y; ++y) muny.col(y).setConstant(q.m(y) / (2.0 * nw));

    Eigen::MatrixXd mu(X, Y);
    std::vector<double> history;
    for (int it = 1; it <= opts.max_iter; ++it) {
        for (int x = 0; x < X; ++x) {
            const int np = nx[x];
            const double dx = spec.delta(np);
            Eigen::VectorXd coef(nm), expo(nm);
            for (int nj = 0; nj < nm; ++nj) {
                const double r = spec.rho(nj);
                const double sx = r + dx;
                double s = 0.0;
                for (int y : spec.nests_men[nj])
                    s += guarded_exp((phi(x, y) + std::log(mu0y(y)) +
                                      (dx - 1.0) * std::log(muny(np, y))) /
                                     sx);
                coef(nj) = std::pow(s, sx / (dx + 1.0));
                expo(nj) = 1.0 / (dx + 1.0);
            }
            mux0(x) = solve_mux0_root(coef, expo, q.n(x));
            for (int nj = 0; nj < nm; ++nj)
                munx(x, nj) = std::pow(mux0(x), 1.0 / (dx + 1.0)) * coef(nj);
        }
        for (int y = 0; y < Y; ++y) {
            const int n = ny[y];
            const double r = spec.rho(n);
            Eigen::VectorXd coef(nw), expo(nw);
            for (int nj = 0; nj < nw; ++nj) {
                const double dd = spec.delta(nj);
                const double sx = r + dd;
                double s = 0.0;
                for (int z : spec.nests_women[nj])
                    s += guarded_exp((phi(z, y) + std::log(mux0(z)) +
                                      (r - 1.0) * std::log(munx(z, n))) /
                                     sx);
                coef(nj) = std::pow(s, sx / (r + 1.0));
                expo(nj) = 1.0 / (r + 1.0);
            }
            mu0y(y) = solve_mux0_root(coef, expo, q.m(y));
            for (int nj = 0; nj < nw; ++nj)
                muny(nj, y) = std::pow(mu0y(y), 1.0 / (r + 1.0)) * coef(nj);
        }
        for (int x = 0; x < X; ++x) {
            const int np = nx[x];
            const double dd = spec.delta(np);
            for (int y = 0; y < Y; ++y) {
                const int n = ny[y];
                const double r = spec.rho(n);
                if (mux0(x) == 0.0 || mu0y(y) == 0.0 || munx(x, n) == 0.0 ||
                    muny(np, y) == 0.0) {
                    mu(x, y) = 0.0;
                    continue;
                }
                mu(x, y) = guarded_exp((phi(x, y) + std::log(mux0(x)) + std::log(mu0y(y)) +
                                        (r - 1.0) * std::log(munx(x, n)) +
                                        (dd - 1.0) * std::log(muny(np, y))) /
                                       (r + dd));
            }
        }
        const double res = relative_margin_residual(mu, mux0, mu0y, q);
        history.push_back(res);
        if (res < opts.tol)
            return pack_solution(std::move(mu), std::move(mux0), std::move(mu0y), q,
                                 Eigen::VectorXd::Ones(X), Eigen::VectorXd::Ones(Y), it, res,
                                 std::move(history));
    }
    throw ConvergenceError("matching fixed point did not converge (residual " +
                           std::to_string(history.back()) + ")");
}

IpfpSolution solve_matching(const Eigen::MatrixXd& phi, const Margins& q,
                            const EntropyModel& model, const Eigen::VectorXd& alpha,
                            const IpfpOptions& opts) {
    const int X = phi.rows(), Y = phi.cols();
    switch (model.family) {
        case Family::choo_siow_homoskedastic:
            if (alpha.size() != 0) throw InputError("alpha has wrong length for entropy family");
            return ipfp_choo_siow(phi, q, opts);
        case Family::choo_siow_gender_heteroskedastic: {
            if (alpha.size() != 1) throw InputError("alpha has wrong length for entropy family");
            return ipfp_choo_siow_hetero(phi, q, Eigen::VectorXd::Ones(X),
                                         Eigen::VectorXd::Constant(Y, alpha(0)), opts);
        }
        case Family::choo_siow_full_heteroskedastic: {
            if (alpha.size() != X - 1 + Y)
                throw InputError("alpha has wrong length for entropy family");
            Eigen::VectorXd sigma(X), tau(Y);
            sigma(0) = 1.0;
            for (int x = 1; x < X; ++x) sigma(x) = alpha(x - 1);
            for (int y = 0; y < Y; ++y) tau(y) = alpha(X - 1 + y);
            return ipfp_choo_siow_hetero(phi, q, sigma, tau, opts);
        }
        case Family::nested_logit: {
            NestedLogitSpec spec = model.nested;
            const auto [rho, delta] = model.nested.params_from_alpha(alpha);
            spec.rho = rho;
            spec.delta = delta;
            return ipfp_nested_logit(phi, q, spec, opts);
        }
        case Family::mixed_logit:
            throw InputError("no fixed-point solver exists for the mixed logit family");
    }
    throw InputError("unknown entropy family");
}

BruteForceSolution brute_force_surplus_max(const Eigen::MatrixXd& phi,
                                           const EntropyModel& model, const Margins& q,
                                           const Eigen::VectorXd& alpha,
                                           const BruteForceOptions& opts) {
    check_market(phi, q);
    const int X = phi.rows(), Y = phi.cols();
    if (X * Y > 25)
        throw InputError("direct surplus maximization is limited to 25 couple cells");

    Eigen::VectorXd phi_flat(X * Y);
    for (int x = 0; x < X; ++x)
        for (int y = 0; y < Y; ++y) phi_flat(x * Y + y) = phi(x, y);

    const double scale = 0.25 / std::max(q.n.sum(), q.m.sum());
    Eigen::MatrixXd mu = scale * (q.n * q.m.transpose());

    const auto patterns_of = [&](const Eigen::MatrixXd& m) {
        MatchingPatterns p;
        p.mu = m;
        p.mu_x0 = q.n - m.rowwise().sum();
        p.mu_0y = q.m - m.colwise().sum().transpose();
        p.N = 1.0;
        return p;
    };
    const auto interior = [&](const Eigen::MatrixXd& m) {
        return (m.array() > 0.0).all() && ((q.n - m.rowwise().sum()).array() > 0.0).all() &&
               ((q.m - m.colwise().sum().transpose()).array() > 0.0).all();
    };
    const auto grad_at = [&](const Eigen::MatrixXd& m) -> Eigen::VectorXd {
        return phi_flat + entropy_gradient(model, patterns_of(m), q, alpha);
    };

    for (int it = 0; it < opts.max_iter; ++it) {
        const Eigen::VectorXd grad = grad_at(mu);
        const double gn = grad.cwiseAbs().maxCoeff();
        if (gn < opts.tol) {
            BruteForceSolution out;
            out.mu = patterns_of(mu);
            out.iterations = it;
            out.grad_norm = gn;
            return out;
        }
        const Eigen::MatrixXd h = Eigen::MatrixXd(
            entropy_hessians(model, patterns_of(mu), q, alpha).h_mumu);
        Eigen::VectorXd d = (-h).llt().solve(grad);
        if (!d.allFinite()) d = h.fullPivLu().solve(-grad);

        double t = 1.0;
        while (t > 1e-14) {
            Eigen::MatrixXd mu2 = mu;
            for (int x = 0; x < X; ++x)
                for (int y = 0; y < Y; ++y) mu2(x, y) += t * d(x * Y + y);
            if (interior(mu2)) {
                const Eigen::VectorXd g2 = grad_at(mu2);
                if (g2.allFinite() &&
                    g2.cwiseAbs().maxCoeff() <= gn * (1.0 - 0.1 * t) + 1e-30)
                    break;
            }
            t /= 2.0;
        }
        for (int x = 0; x < X; ++x)
            for (int y = 0; y < Y; ++y) mu(x, y) += t * d(x * Y + y);
        if (!interior(mu))
            throw ConvergenceError("direct surplus maximization left the interior");
    }
    throw ConvergenceError("direct surplus maximization did not converge");
}

}  // namespace sepmatch
