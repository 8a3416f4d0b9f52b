#include "sepmatch/types.hpp"

#include <cmath>
#include <string>

#include "sepmatch/errors.hpp"

namespace sepmatch {

ArrangementIndex build_arrangement_index(const TypeSpace& space) {
    if (space.X < 1 || space.Y < 1)
        throw InputError("type space requires X >= 1 and Y >= 1");
    return {space.X, space.Y};
}

Eigen::VectorXd MatchingPatterns::flatten() const {
    const TypeSpace sp = space();
    const ArrangementIndex idx = build_arrangement_index(sp);
    Eigen::VectorXd flat(idx.size());
    for (int x = 0; x < sp.X; ++x)
        for (int y = 0; y < sp.Y; ++y) flat[idx.couple(x, y)] = mu(x, y);
    for (int x = 0; x < sp.X; ++x) flat[idx.single_man(x)] = mu_x0[x];
    for (int y = 0; y < sp.Y; ++y) flat[idx.single_woman(y)] = mu_0y[y];
    return flat;
}

MatchingPatterns MatchingPatterns::from_flat(const TypeSpace& space, const Eigen::VectorXd& flat,
                                             double N) {
    const ArrangementIndex idx = build_arrangement_index(space);
    if (flat.size() != idx.size()) throw InputError("flattened matching has wrong length");
    MatchingPatterns out;
    out.mu.resize(space.X, space.Y);
    out.mu_x0.resize(space.X);
    out.mu_0y.resize(space.Y);
    out.N = N;
    for (int x = 0; x < space.X; ++x)
        for (int y = 0; y < space.Y; ++y) out.mu(x, y) = flat[idx.couple(x, y)];
    for (int x = 0; x < space.X; ++x) out.mu_x0[x] = flat[idx.single_man(x)];
    for (int y = 0; y < space.Y; ++y) out.mu_0y[y] = flat[idx.single_woman(y)];
    return out;
}

Eigen::MatrixXd surplus_matrix(const SemilinearSurplus& s, const TypeSpace& space) {
    if (s.phi.rows() != space.X * space.Y)
        throw InputError("basis matrix rows do not match the couple count");
    if (s.phi.cols() != s.beta.size())
        throw InputError("basis matrix columns do not match beta length");
    const Eigen::VectorXd flat = s.phi * s.beta;
    Eigen::MatrixXd Phi(space.X, space.Y);
    for (int x = 0; x < space.X; ++x)
        for (int y = 0; y < space.Y; ++y) Phi(x, y) = flat[x * space.Y + y];
    return Phi;
}

Margins margins_from_matching(const MatchingPatterns& mu) {
    Margins q;
    q.n = mu.mu_x0 + mu.mu.rowwise().sum();
    q.m = mu.mu_0y + mu.mu.colwise().sum().transpose();
    return q;
}

SampleCovariance sample_covariance(const MatchingPatterns& mu_hat) {
    const double mass = mu_hat.total_mass();
    if (std::abs(mass - 1.0) > 1e-8)
        throw InputError("sample_covariance requires unit household mass, got " +
                         std::to_string(mass));
    const Eigen::VectorXd p = mu_hat.flatten();
    SampleCovariance out;
    out.sigma = Eigen::MatrixXd(p.asDiagonal()) - p * p.transpose();
    out.N = mu_hat.N;
    return out;
}

Eigen::VectorXd comoments(const MatchingPatterns& mu, const Eigen::MatrixXd& phi) {
    const TypeSpace sp = mu.space();
    if (phi.rows() != sp.X * sp.Y) throw InputError("basis matrix rows do not match couples");
    Eigen::VectorXd flat_couples(sp.X * sp.Y);
    for (int x = 0; x < sp.X; ++x)
        for (int y = 0; y < sp.Y; ++y) flat_couples[x * sp.Y + y] = mu.mu(x, y);
    return phi.transpose() * flat_couples;
}

}  // namespace sepmatch
