#pragma once

// Box-constrained Levenberg-Marquardt for small dense least-squares problems.
//
// The problem supplies residuals r(p) and their Jacobian J(p); the solver
// minimises |r|^2 subject to lower <= p <= upper by projecting every trial
// step onto the box. Steps use Marquardt's diagonal scaling of J^T J.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include <Eigen/Dense>

namespace impatience::lm {

struct Options {
    int max_iterations = 500;
    double rss_rel_tol = 1e-10;  // stop when an accepted step improves RSS by less than this fraction
    double step_tol = 1e-9;      // or when the accepted step is this small relative to |p|
    double initial_lambda = 1e-3;
    double max_lambda = 1e12;
};

struct Outcome {
    Eigen::VectorXd params;
    double rss = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

inline Eigen::VectorXd project(Eigen::VectorXd p, const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = std::clamp(p[i], lower[i], upper[i]);
    return p;
}

// Problem requirements:
//   Eigen::VectorXd residuals(const Eigen::VectorXd& p) const;
//   Eigen::MatrixXd jacobian(const Eigen::VectorXd& p) const;   // d residual / d p
template <typename Problem>
Outcome minimize(const Problem& problem, const Eigen::VectorXd& start, const Eigen::VectorXd& lower,
                 const Eigen::VectorXd& upper, const Options& opt = {}) {
    auto sum_sq = [](const Eigen::VectorXd& r) {
        const double s = r.squaredNorm();
        return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
    };

    Outcome out;
    Eigen::VectorXd p = project(start, lower, upper);
    Eigen::VectorXd r = problem.residuals(p);
    double rss = sum_sq(r);
    if (!std::isfinite(rss)) {
        out.params = p;
        return out;
    }

    double lambda = opt.initial_lambda;
    for (int it = 0; it < opt.max_iterations; ++it) {
        out.iterations = it + 1;
        const Eigen::MatrixXd J = problem.jacobian(p);
        const Eigen::MatrixXd A = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * r;

        Eigen::VectorXd scale = A.diagonal();
        const double floor = std::max(scale.maxCoeff(), 1.0) * 1e-12;
        for (Eigen::Index i = 0; i < scale.size(); ++i) scale[i] = std::max(scale[i], floor);

        bool accepted = false;
        while (!accepted) {
            Eigen::MatrixXd M = A;
            M.diagonal() += lambda * scale;
            const Eigen::VectorXd delta = M.ldlt().solve(-g);
            const Eigen::VectorXd trial = project(p + delta, lower, upper);
            const Eigen::VectorXd step = trial - p;
            const Eigen::VectorXd r_trial = problem.residuals(trial);
            const double rss_trial = sum_sq(r_trial);

            if (rss_trial < rss) {
                const double improvement = rss - rss_trial;
                const bool small_gain = improvement <= opt.rss_rel_tol * rss;
                const bool small_step =
                    lambda <= 1.0 && step.norm() <= opt.step_tol * (p.norm() + opt.step_tol);
                p = trial;
                r = r_trial;
                rss = rss_trial;
                lambda = std::max(lambda / 10.0, 1e-12);
                accepted = true;
                if (small_gain || small_step || rss == 0.0) {
                    out.params = p;
                    out.rss = rss;
                    out.converged = true;
                    return out;
                }
            } else {
                lambda *= 10.0;
                if (lambda > opt.max_lambda) {
                    // No descent direction left inside the box: stationary point.
                    out.params = p;
                    out.rss = rss;
                    out.converged = true;
                    return out;
                }
            }
        }
    }
    out.params = p;
    out.rss = rss;
    return out;
}

} // namespace impatience::lm
