#include "sepmatch/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sepmatch/errors.hpp"

namespace sepmatch {

namespace {

void check_margins_consistent(const MatchingPatterns& mu, const Margins& q) {
    const int X = mu.mu.rows(), Y = mu.mu.cols();
    if (q.n.size() != X || q.m.size() != Y)
        throw InputError("margins dimension mismatch against matching patterns");
    for (int x = 0; x < X; ++x) {
        const double row = mu.mu_x0(x) + mu.mu.row(x).sum();
        if (std::abs(row - q.n(x)) > 1e-8 * std::max(1.0, std::abs(q.n(x))))
            throw InputError("matching inconsistent with margins at n(" +
                             std::to_string(x + 1) + ")");
    }
    for (int y = 0; y < Y; ++y) {
        const double col = mu.mu_0y(y) + mu.mu.col(y).sum();
        if (std::abs(col - q.m(y)) > 1e-8 * std::max(1.0, std::abs(q.m(y))))
            throw InputError("matching inconsistent with margins at m(" +
                             std::to_string(y + 1) + ")");
    }
}

void check_interior(const MatchingPatterns& mu) {
    const int X = mu.mu.rows(), Y = mu.mu.cols();
    for (int x = 0; x < X; ++x)
        if (!(mu.mu_x0(x) > 0.0))
            throw ZeroCellError("mu_x0(" + std::to_string(x + 1) + ") is not positive");
    for (int y = 0; y < Y; ++y)
        if (!(mu.mu_0y(y) > 0.0))
            throw ZeroCellError("mu_0y(" + std::to_string(y + 1) + ") is not positive");
    for (int x = 0; x < X; ++x)
        for (int y = 0; y < Y; ++y)
            if (!(mu.mu(x, y) > 0.0))
                throw ZeroCellError("mu(" + std::to_string(x + 1) + "," +
                                    std::to_string(y + 1) + ") is not positive");
}

// Nest sums mu_xn (row x, men-side nest n) and mu_n'y (women-side nest n',
// column y). Zero cells are allowed; sums stay finite.
struct NestAggregates {
    Eigen::MatrixXd mu_xn;   // X x (#men nests)
    Eigen::MatrixXd mu_npy;  // (#women nests) x Y
};

NestAggregates nest_sums(const NestedLogitSpec& spec, const MatchingPatterns& mu) {
    const int X = mu.mu.rows(), Y = mu.mu.cols();
    NestAggregates agg;
    agg.mu_xn = Eigen::MatrixXd::Zero(X, static_cast<int>(spec.nests_men.size()));
    agg.mu_npy = Eigen::MatrixXd::Zero(static_cast<int>(spec.nests_women.size()), Y);
    for (int n = 0; n < static_cast<int>(spec.nests_men.size()); ++n)
        for (int y : spec.nests_men[n]) agg.mu_xn.col(n) += mu.mu.col(y);
    for (int np = 0; np < static_cast<int>(spec.nests_women.size()); ++np)
        for (int x : spec.nests_women[np]) agg.mu_npy.row(np) += mu.mu.row(x);
    return agg;
}

GradientDecomposition decompose_impl(const EntropyModel& model, const MatchingPatterns& mu,
                                     const Margins& q, bool allow_zero_cells) {
    check_margins_consistent(mu, q);
    if (!allow_zero_cells) check_interior(mu);

    const int X = mu.mu.rows(), Y = mu.mu.cols();
    const TypeSpace space{X, Y};
    const int d = model.d_alpha(space);
    GradientDecomposition out;
    out.e0 = Eigen::VectorXd::Zero(X * Y);
    out.e = Eigen::MatrixXd::Zero(X * Y, d);

    const auto idx = [Y](int x, int y) { return x * Y + y; };

    switch (model.family) {
        case Family::choo_siow_homoskedastic: {
            for (int x = 0; x < X; ++x)
                for (int y = 0; y < Y; ++y)
                    out.e0(idx(x, y)) = -2.0 * std::log(mu.mu(x, y)) +
                                        std::log(mu.mu_x0(x)) + std::log(mu.mu_0y(y));
            break;
        }
        case Family::choo_siow_gender_heteroskedastic: {
            for (int x = 0; x < X; ++x)
                for (int y = 0; y < Y; ++y) {
                    out.e0(idx(x, y)) = -std::log(mu.mu(x, y) / mu.mu_x0(x));
                    out.e(idx(x, y), 0) = -std::log(mu.mu(x, y) / mu.mu_0y(y));
                }
            break;
        }
        case Family::choo_siow_full_heteroskedastic: {
            // alpha = (sigma_2..sigma_X, tau_1..tau_Y); sigma_1 = 1 fixed.
            for (int x = 0; x < X; ++x)
                for (int y = 0; y < Y; ++y) {
                    const double men_term = -std::log(mu.mu(x, y) / mu.mu_x0(x));
                    const double women_term = -std::log(mu.mu(x, y) / mu.mu_0y(y));
                    if (x == 0)
                        out.e0(idx(x, y)) = men_term;
                    else
                        out.e(idx(x, y), x - 1) = men_term;
                    out.e(idx(x, y), X - 1 + y) = women_term;
                }
            break;
        }
        case Family::nested_logit: {
            model.nested.validate(space);
            const auto agg = nest_sums(model.nested, mu);
            const auto ny = model.nested.nest_of_y(Y);
            const auto nx = model.nested.nest_of_x(X);
            for (int x = 0; x < X; ++x)
                for (int y = 0; y < Y; ++y) {
                    const int n = ny[y], np = nx[x];
                    const double mxn = agg.mu_xn(x, n);
                    const double mny = agg.mu_npy(np, y);
                    out.e0(idx(x, y)) = -std::log(mxn / mu.mu_x0(x)) -
                                        std::log(mny / mu.mu_0y(y));
                    out.e(idx(x, y), model.nested.rho_tie[n]) +=
                        -std::log(mu.mu(x, y) / mxn);
                    out.e(idx(x, y), model.nested.delta_tie[np]) +=
                        -std::log(mu.mu(x, y) / mny);
                }
            break;
        }
        case Family::mixed_logit: {
            out.e0 = mixed_logit_gradient(model.mixed_men, model.mixed_women, mu, q);
            break;
        }
    }
    return out;
}

}  // namespace

int NestedLogitSpec::d_alpha() const {
    int mx = -1;
    for (int t : rho_tie) mx = std::max(mx, t);
    for (int t : delta_tie) mx = std::max(mx, t);
    return mx + 1;
}

void NestedLogitSpec::validate(const TypeSpace& space) const {
    const auto check_partition = [](const std::vector<std::vector<int>>& nests, int count,
                                    const char* side) {
        std::vector<int> seen(count, 0);
        for (const auto& nest : nests) {
            if (nest.empty()) throw InputError(std::string("empty nest on ") + side);
            for (int t : nest) {
                if (t < 0 || t >= count)
                    throw InputError(std::string("nest member out of range on ") + side);
                if (seen[t]++)
                    throw InputError(std::string("type assigned to two nests on ") + side);
            }
        }
        for (int t = 0; t < count; ++t)
            if (!seen[t])
                throw InputError(std::string("type missing from nests on ") + side);
    };
    check_partition(nests_men, space.Y, "men side");
    check_partition(nests_women, space.X, "women side");
    if (rho.size() != static_cast<int>(nests_men.size()) ||
        delta.size() != static_cast<int>(nests_women.size()))
        throw InputError("nest parameter count does not match nest count");
    if (rho_tie.size() != nests_men.size() || delta_tie.size() != nests_women.size())
        throw InputError("tie label count does not match nest count");
    for (int i = 0; i < rho.size(); ++i)
        if (!(rho(i) > 0.0 && rho(i) <= 1.0))
            throw InputError("rho(" + std::to_string(i + 1) + ") outside (0,1]");
    for (int i = 0; i < delta.size(); ++i)
        if (!(delta(i) > 0.0 && delta(i) <= 1.0))
            throw InputError("delta(" + std::to_string(i + 1) + ") outside (0,1]");
    const int d = d_alpha();
    std::vector<int> used(d, 0);
    for (int t : rho_tie) {
        if (t < 0) throw InputError("negative tie label");
        used[t] = 1;
    }
    for (int t : delta_tie) {
        if (t < 0) throw InputError("negative tie label");
        used[t] = 1;
    }
    for (int c = 0; c < d; ++c)
        if (!used[c])
            throw InputError("alpha coordinate " + std::to_string(c) +
                             " has no tied nest parameter");
}

std::vector<int> NestedLogitSpec::nest_of_y(int Y) const {
    std::vector<int> out(Y, -1);
    for (int n = 0; n < static_cast<int>(nests_men.size()); ++n)
        for (int y : nests_men[n]) out[y] = n;
    return out;
}

std::vector<int> NestedLogitSpec::nest_of_x(int X) const {
    std::vector<int> out(X, -1);
    for (int np = 0; np < static_cast<int>(nests_women.size()); ++np)
        for (int x : nests_women[np]) out[x] = np;
    return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> NestedLogitSpec::params_from_alpha(
    const Eigen::VectorXd& alpha) const {
    if (alpha.size() == 0) return {rho, delta};
    if (alpha.size() != d_alpha())
        throw InputError("alpha has wrong length for nested parameterization");
    Eigen::VectorXd r(rho.size()), d(delta.size());
    for (int i = 0; i < r.size(); ++i) r(i) = alpha(rho_tie[i]);
    for (int i = 0; i < d.size(); ++i) d(i) = alpha(delta_tie[i]);
    return {r, d};
}

Eigen::VectorXd NestedLogitSpec::alpha_from_params() const {
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(d_alpha());
    for (int i = 0; i < rho.size(); ++i) alpha(rho_tie[i]) = rho(i);
    for (int i = 0; i < delta.size(); ++i) alpha(delta_tie[i]) = delta(i);
    return alpha;
}

void MixedLogitSpec::validate() const {
    if (zchar.rows() < 1) throw InputError("mixed logit zchar has no partner types");
    if (atoms.rows() < 1) throw InputError("mixed logit mixture has no atoms");
    if (atoms.cols() != zchar.cols())
        throw InputError("mixed logit atom dimension does not match zchar");
    if (weights.size() != atoms.rows())
        throw InputError("mixed logit weight count does not match atoms");
    if ((weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-10)
        throw InputError("mixed logit weights must be nonnegative and sum to 1");
    if (!(s > 0.0)) throw InputError("mixed logit scale must be positive");
}

int EntropyModel::d_alpha(const TypeSpace& space) const {
    switch (family) {
        case Family::choo_siow_homoskedastic: return 0;
        case Family::choo_siow_gender_heteroskedastic: return 1;
        case Family::choo_siow_full_heteroskedastic: return space.X - 1 + space.Y;
        case Family::nested_logit: return nested.d_alpha();
        case Family::mixed_logit: return 0;
    }
    return 0;
}

EntropyModel EntropyModel::choo_siow() {
    return EntropyModel{Family::choo_siow_homoskedastic, {}, {}, {}};
}
EntropyModel EntropyModel::gender_heteroskedastic() {
    return EntropyModel{Family::choo_siow_gender_heteroskedastic, {}, {}, {}};
}
EntropyModel EntropyModel::full_heteroskedastic() {
    return EntropyModel{Family::choo_siow_full_heteroskedastic, {}, {}, {}};
}
EntropyModel EntropyModel::nested_logit(NestedLogitSpec spec) {
    return EntropyModel{Family::nested_logit, std::move(spec), {}, {}};
}
EntropyModel EntropyModel::mixed_logit(MixedLogitSpec men, MixedLogitSpec women) {
    return EntropyModel{Family::mixed_logit, {}, std::move(men), std::move(women)};
}

GradientDecomposition gradient_decomposition(const EntropyModel& model,
                                             const MatchingPatterns& mu, const Margins& q) {
    return decompose_impl(model, mu, q, false);
}

GradientDecomposition gradient_decomposition_lenient(const EntropyModel& model,
                                                     const MatchingPatterns& mu,
                                                     const Margins& q) {
    if (model.family == Family::mixed_logit)
        throw InputError("lenient gradient decomposition requires a closed-form family");
    return decompose_impl(model, mu, q, true);
}

Eigen::VectorXd entropy_gradient(const EntropyModel& model, const MatchingPatterns& mu,
                                 const Margins& q, const Eigen::VectorXd& alpha) {
    Eigen::VectorXd a = alpha;
    if (model.family == Family::nested_logit && a.size() == 0)
        a = model.nested.alpha_from_params();
    const TypeSpace space{static_cast<int>(mu.mu.rows()), static_cast<int>(mu.mu.cols())};
    if (a.size() != model.d_alpha(space))
        throw InputError("alpha has wrong length for entropy family");
    const auto dec = gradient_decomposition(model, mu, q);
    if (a.size() == 0) return dec.e0;
    return dec.e0 + dec.e * a;
}

EntropyHessians cs_hetero_hessians(const Eigen::VectorXd& sigma, const Eigen::VectorXd& tau,
                                   const MatchingPatterns& mu, const Margins& q,
                                   bool allow_zero_cells) {
    check_margins_consistent(mu, q);
    if (!allow_zero_cells) check_interior(mu);
    const int X = mu.mu.rows(), Y = mu.mu.cols();
    if (sigma.size() != X || tau.size() != Y)
        throw InputError("heteroskedastic scale vectors have wrong length");
    const auto idx = [Y](int x, int y) { return x * Y + y; };

    std::vector<Eigen::Triplet<double>> tmm, tmq;
    tmm.reserve(static_cast<size_t>(X) * Y * (X + Y + 1));
    tmq.reserve(static_cast<size_t>(X) * Y * 2);
    for (int x = 0; x < X; ++x) {
        for (int y = 0; y < Y; ++y) {
            const int row = idx(x, y);
            for (int t = 0; t < Y; ++t)
                tmm.emplace_back(row, idx(x, t), -sigma(x) / mu.mu_x0(x));
            for (int z = 0; z < X; ++z)
                tmm.emplace_back(row, idx(z, y), -tau(y) / mu.mu_0y(y));
            tmm.emplace_back(row, row, -(sigma(x) + tau(y)) / mu.mu(x, y));
            tmq.emplace_back(row, x, sigma(x) / mu.mu_x0(x));
            tmq.emplace_back(row, X + y, tau(y) / mu.mu_0y(y));
        }
    }
    EntropyHessians out;
    out.h_mumu.resize(X * Y, X * Y);
    out.h_mumu.setFromTriplets(tmm.begin(), tmm.end());
    out.h_muq.resize(X * Y, X + Y);
    out.h_muq.setFromTriplets(tmq.begin(), tmq.end());
    return out;
}

EntropyHessians nested_logit_hessians(const NestedLogitSpec& spec, const Eigen::VectorXd& rho,
                                      const Eigen::VectorXd& delta, const MatchingPatterns& mu,
                                      const Margins& q, bool allow_zero_cells) {
    check_margins_consistent(mu, q);
    if (!allow_zero_cells) check_interior(mu);
    const int X = mu.mu.rows(), Y = mu.mu.cols();
    spec.validate(TypeSpace{X, Y});
    if (rho.size() != static_cast<int>(spec.nests_men.size()) ||
        delta.size() != static_cast<int>(spec.nests_women.size()))
        throw InputError("nest parameter count does not match nest count");
    for (int i = 0; i < rho.size(); ++i)
        if (!(rho(i) > 0.0)) throw InputError("rho must be positive");
    for (int i = 0; i < delta.size(); ++i)
        if (!(delta(i) > 0.0)) throw InputError("delta must be positive");

    const auto agg = nest_sums(spec, mu);
    const auto ny = spec.nest_of_y(Y);
    const auto nx = spec.nest_of_x(X);
    const auto idx = [Y](int x, int y) { return x * Y + y; };

    std::vector<Eigen::Triplet<double>> tmm, tmq;
    for (int x = 0; x < X; ++x) {
        const int np = nx[x];
        for (int y = 0; y < Y; ++y) {
            const int n = ny[y];
            const int row = idx(x, y);
            const double mxn = agg.mu_xn(x, n);
            const double mny = agg.mu_npy(np, y);
            for (int t = 0; t < Y; ++t) tmm.emplace_back(row, idx(x, t), -1.0 / mu.mu_x0(x));
            for (int t : spec.nests_men[n])
                tmm.emplace_back(row, idx(x, t), -(1.0 - rho(n)) / mxn);
            for (int z = 0; z < X; ++z) tmm.emplace_back(row, idx(z, y), -1.0 / mu.mu_0y(y));
            for (int z : spec.nests_women[np])
                tmm.emplace_back(row, idx(z, y), -(1.0 - delta(np)) / mny);
            tmm.emplace_back(row, row, -(rho(n) + delta(np)) / mu.mu(x, y));
            tmq.emplace_back(row, x, 1.0 / mu.mu_x0(x));
            tmq.emplace_back(row, X + y, 1.0 / mu.mu_0y(y));
        }
    }
    EntropyHessians out;
    out.h_mumu.resize(X * Y, X * Y);
    out.h_mumu.setFromTriplets(tmm.begin(), tmm.end());
    out.h_muq.resize(X * Y, X + Y);
    out.h_muq.setFromTriplets(tmq.begin(), tmq.end());
    return out;
}

NestedGradient nested_logit_gradient(const NestedLogitSpec& spec, const MatchingPatterns& mu,
                                     const Margins& q) {
    const auto model = EntropyModel::nested_logit(spec);
    NestedGradient out;
    out.decomposition = gradient_decomposition(model, mu, q);
    out.gradient = out.decomposition.e0 + out.decomposition.e * spec.alpha_from_params();
    return out;
}

Eigen::VectorXd mixed_logit_shares(const MixedLogitSpec& spec, const Eigen::VectorXd& U) {
    spec.validate();
    const int Y = spec.zchar.rows();
    if (U.size() != Y) throw InputError("utility vector has wrong length");
    Eigen::VectorXd shares = Eigen::VectorXd::Zero(Y);
    for (int k = 0; k < spec.atoms.rows(); ++k) {
        Eigen::VectorXd v = (U + spec.zchar * spec.atoms.row(k).transpose()) / spec.s;
        const double vmax = std::max(0.0, v.maxCoeff());
        const Eigen::VectorXd ev = (v.array() - vmax).exp();
        const double den = std::exp(-vmax) + ev.sum();
        shares += spec.weights(k) * (ev / den);
    }
    return shares;
}

Eigen::VectorXd mixed_logit_inverse(const MixedLogitSpec& spec, const Eigen::VectorXd& nu,
                                    double tol, int max_iter) {
    spec.validate();
    const int Y = spec.zchar.rows();
    if (nu.size() != Y) throw InputError("share vector has wrong length");
    for (int y = 0; y < Y; ++y)
        if (!(nu(y) > 0.0))
            throw ZeroCellError("conditional share " + std::to_string(y + 1) +
                                " is not positive");
    if (!(nu.sum() < 1.0))
        throw InputError("conditional shares leave no mass on singlehood");

    const Eigen::VectorXd log_nu = nu.array().log();
    Eigen::VectorXd U = spec.s * log_nu;
    for (int it = 0; it < max_iter; ++it) {
        const Eigen::VectorXd cur = mixed_logit_shares(spec, U);
        if ((cur - nu).cwiseAbs().maxCoeff() < tol) return U;
        U += spec.s * (log_nu - cur.array().log().matrix());
    }
    throw ConvergenceError("share inversion did not reach tolerance");
}

Eigen::VectorXd mixed_logit_gradient(const MixedLogitSpec& spec_men,
                                     const MixedLogitSpec& spec_women,
                                     const MatchingPatterns& mu, const Margins& q) {
    check_margins_consistent(mu, q);
    check_interior(mu);
    const int X = mu.mu.rows(), Y = mu.mu.cols();
    if (spec_men.zchar.rows() != Y || spec_women.zchar.rows() != X)
        throw InputError("mixed logit zchar rows do not match partner type counts");
    Eigen::MatrixXd U(X, Y), V(X, Y);
    for (int x = 0; x < X; ++x) {
        const Eigen::VectorXd nu = mu.mu.row(x).transpose() / q.n(x);
        U.row(x) = mixed_logit_inverse(spec_men, nu).transpose();
    }
    for (int y = 0; y < Y; ++y) {
        const Eigen::VectorXd nu = mu.mu.col(y) / q.m(y);
        V.col(y) = mixed_logit_inverse(spec_women, nu);
    }
    Eigen::VectorXd grad(X * Y);
    for (int x = 0; x < X; ++x)
        for (int y = 0; y < Y; ++y) grad(x * Y + y) = -U(x, y) - V(x, y);
    return grad;
}

EntropyHessians numeric_hessians(const EntropyModel& model, const MatchingPatterns& mu,
                                 const Margins& q, const Eigen::VectorXd& alpha,
                                 double step) {
    check_margins_consistent(mu, q);
    check_interior(mu);
    const int X = mu.mu.rows(), Y = mu.mu.cols();
    const auto idx = [Y](int x, int y) { return x * Y + y; };
    const auto grad_at = [&](const MatchingPatterns& m, const Margins& qq) {
        return entropy_gradient(model, m, qq, alpha);
    };
    const Eigen::VectorXd g0 = grad_at(mu, q);

    std::vector<Eigen::Triplet<double>> tmm, tmq;
    // Perturb one couple cell, compensating both singles stocks so the
    // margins stay fixed; only rows in the same row/column can move.
    for (int z = 0; z < X; ++z) {
        for (int t = 0; t < Y; ++t) {
            double h = step > 0.0 ? step : std::max(1e-6, 1e-4 * mu.mu(z, t));
            const double up_slack = std::min(mu.mu_x0(z), mu.mu_0y(t));
            const double dn_slack = mu.mu(z, t);
            Eigen::VectorXd gp = g0, gm = g0;
            double den = 0.0;
            if (h < up_slack && h < dn_slack) {
                den = 2.0 * h;
            } else if (h < up_slack) {
                den = h;  // forward only
            } else if (h < dn_slack) {
                den = h;  // backward only
            } else {
                h = 0.45 * std::min(up_slack, dn_slack);
                den = 2.0 * h;
            }
            if (h < up_slack || den == 2.0 * h) {
                MatchingPatterns up = mu;
                up.mu(z, t) += h;
                up.mu_x0(z) -= h;
                up.mu_0y(t) -= h;
                gp = grad_at(up, q);
            }
            if (h < dn_slack || den == 2.0 * h) {
                MatchingPatterns dn = mu;
                dn.mu(z, t) -= h;
                dn.mu_x0(z) += h;
                dn.mu_0y(t) += h;
                gm = grad_at(dn, q);
            }
            const int col = idx(z, t);
            for (int y = 0; y < Y; ++y) {
                const int row = idx(z, y);
                tmm.emplace_back(row, col, (gp(row) - gm(row)) / den);
            }
            for (int x = 0; x < X; ++x) {
                if (x == z) continue;
                const int row = idx(x, t);
                tmm.emplace_back(row, col, (gp(row) - gm(row)) / den);
            }
        }
    }
    // Margin perturbations move the matching singles stock with them.
    for (int z = 0; z < X; ++z) {
        double h = step > 0.0 ? step : std::max(1e-6, 1e-4 * q.n(z));
        const bool central = mu.mu_x0(z) > h;
        MatchingPatterns up = mu;
        Margins qup = q;
        up.mu_x0(z) += h;
        qup.n(z) += h;
        const Eigen::VectorXd gp = grad_at(up, qup);
        Eigen::VectorXd gm = g0;
        double den = h;
        if (central) {
            MatchingPatterns dn = mu;
            Margins qdn = q;
            dn.mu_x0(z) -= h;
            qdn.n(z) -= h;
            gm = grad_at(dn, qdn);
            den = 2.0 * h;
        }
        for (int y = 0; y < Y; ++y) {
            const int row = idx(z, y);
            tmq.emplace_back(row, z, (gp(row) - gm(row)) / den);
        }
    }
    for (int t = 0; t < Y; ++t) {
        double h = step > 0.0 ? step : std::max(1e-6, 1e-4 * q.m(t));
        const bool central = mu.mu_0y(t) > h;
        MatchingPatterns up = mu;
        Margins qup = q;
        up.mu_0y(t) += h;
        qup.m(t) += h;
        const Eigen::VectorXd gp = grad_at(up, qup);
        Eigen::VectorXd gm = g0;
        double den = h;
        if (central) {
            MatchingPatterns dn = mu;
            Margins qdn = q;
            dn.mu_0y(t) -= h;
            qdn.m(t) -= h;
            gm = grad_at(dn, qdn);
            den = 2.0 * h;
        }
        for (int x = 0; x < X; ++x) {
            const int row = idx(x, t);
            tmq.emplace_back(row, X + t, (gp(row) - gm(row)) / den);
        }
    }
    EntropyHessians out;
    out.h_mumu.resize(X * Y, X * Y);
    out.h_mumu.setFromTriplets(tmm.begin(), tmm.end());
    out.h_muq.resize(X * Y, X + Y);
    out.h_muq.setFromTriplets(tmq.begin(), tmq.end());
    return out;
}

EntropyHessians entropy_hessians(const EntropyModel& model, const MatchingPatterns& mu,
                                 const Margins& q, const Eigen::VectorXd& alpha) {
    const int X = mu.mu.rows(), Y = mu.mu.cols();
    switch (model.family) {
        case Family::choo_siow_homoskedastic:
            return cs_hetero_hessians(Eigen::VectorXd::Ones(X), Eigen::VectorXd::Ones(Y), mu,
                                      q);
        case Family::choo_siow_gender_heteroskedastic: {
            if (alpha.size() != 1)
                throw InputError("alpha has wrong length for entropy family");
            return cs_hetero_hessians(Eigen::VectorXd::Ones(X),
                                      Eigen::VectorXd::Constant(Y, alpha(0)), mu, q);
        }
        case Family::choo_siow_full_heteroskedastic: {
            if (alpha.size() != X - 1 + Y)
                throw InputError("alpha has wrong length for entropy family");
            Eigen::VectorXd sigma(X), tau(Y);
            sigma(0) = 1.0;
            for (int x = 1; x < X; ++x) sigma(x) = alpha(x - 1);
            for (int y = 0; y < Y; ++y) tau(y) = alpha(X - 1 + y);
            return cs_hetero_hessians(sigma, tau, mu, q);
        }
        case Family::nested_logit: {
            const auto [rho, delta] = model.nested.params_from_alpha(alpha);
            return nested_logit_hessians(model.nested, rho, delta, mu, q);
        }
        case Family::mixed_logit:
            return numeric_hessians(model, mu, q, alpha);
    }
    throw InputError("unknown entropy family");
}

}  // namespace sepmatch
