#pragma once

// Paired-samples Bayes factor with a Cauchy prior on the standardized effect
// (one-sided hypotheses by truncating the prior to a half-line).

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <boost/math/distributions/non_central_t.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "impatience/error.hpp"

namespace impatience {

struct BayesConfig {
    double prior_scale = std::numbers::sqrt2 / 2.0;
    double rel_tol = 1e-8;
};

struct PairedBayesFactor {
    std::size_t n = 0;
    double t = 0.0;      // one-sample t of d = h_objective - h_subjective
    double bf_plus = 0.0;   // effect > 0 against the null
    double bf_minus = 0.0;  // effect < 0 against the null
    // Directional hypotheses against their complements.
    double bf_obj_less = 0.0;   // h_objective < h_subjective
    double bf_obj_geq = 0.0;    // h_objective >= h_subjective
};

namespace detail {

inline double paired_t(std::span<const double> d) {
    const double n = static_cast<double>(d.size());
    double mean = 0.0;
    for (double x : d) mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    double scale = 0.0;
    for (double x : d) scale = std::max(scale, std::abs(x));
    // Differences equal up to rounding count as zero variance.
    if (!(sd > 1e-12 * scale) || !std::isfinite(sd)) fail(errc::degenerate_data, "paired differences have zero variance");
    return mean / (sd / std::sqrt(n));
}

// Beyond this effect size the t likelihood is negligible.
inline double effect_cutoff(double t, std::size_t n) {
    return (40.0 + 40.0 * std::abs(t)) / std::sqrt(static_cast<double>(n));
}

// Integrand over effect size delta >= 0, for the sign s of the half-line.
inline double half_line_integrand(double delta, double t, std::size_t n, double scale, int s) {
    namespace bm = boost::math;
    const double df = static_cast<double>(n - 1);
    const double ncp = s * delta * std::sqrt(static_cast<double>(n));
    const double like = ncp == 0.0 ? bm::pdf(bm::students_t(df), t) : bm::pdf(bm::non_central_t(df, ncp), t);
    const double prior = 2.0 / (std::numbers::pi * scale * (1.0 + (delta / scale) * (delta / scale)));
    return like * prior;
}

} // namespace detail

// One-sided Bayes factor against the point null for effect sign s (+1 or -1).
inline double one_sided_bf(double t, std::size_t n, int s, const BayesConfig& cfg = {}) {
    namespace bm = boost::math;
    const double null_like = bm::pdf(bm::students_t(static_cast<double>(n - 1)), t);
    auto f = [&](double delta) { return detail::half_line_integrand(delta, t, n, cfg.prior_scale, s); };
    const double hi = detail::effect_cutoff(t, n);
    const double marginal = bm::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, hi, 20, cfg.rel_tol);
    return marginal / null_like;
}

inline PairedBayesFactor paired_bayes_factor(std::span<const double> h_objective, std::span<const double> h_subjective,
                                             const BayesConfig& cfg = {}) {
    if (h_objective.size() != h_subjective.size()) fail(errc::mismatched_data, "paired lists differ in length");
    if (h_objective.size() < 2) fail(errc::degenerate_data, "paired test needs n >= 2");
    std::vector<double> d;
    for (std::size_t i = 0; i < h_objective.size(); ++i) d.push_back(h_objective[i] - h_subjective[i]);
    std::sort(d.begin(), d.end());  // result independent of subject order
    PairedBayesFactor r;
    r.n = d.size();
    r.t = detail::paired_t(d);
    r.bf_plus = one_sided_bf(r.t, r.n, +1, cfg);
    r.bf_minus = one_sided_bf(r.t, r.n, -1, cfg);
    r.bf_obj_less = r.bf_minus / r.bf_plus;
    r.bf_obj_geq = r.bf_plus / r.bf_minus;
    return r;
}

} // namespace impatience
