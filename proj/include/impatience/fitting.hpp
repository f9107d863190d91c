#pragma once

// Least-squares / Gaussian maximum-likelihood fitting of the discount and
// psychophysical families, BIC and R^2, the "simpler model within two BIC
// units" selection rule, and the aggregated and two-stage summaries.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "impatience/error.hpp"
#include "impatience/levenberg_marquardt.hpp"
#include "impatience/models.hpp"

namespace impatience {

enum class Family {
    Linear,
    Power,
    Exponential,
    ProportionalHyperbolic,
    GeneralHyperbolic,
    SubjectiveGeneralHyperbolic,  // h, r free; time exponent fixed
    SubjectiveExponential,        // delta free; time exponent fixed
};

inline constexpr std::array kAllFamilies = {
    Family::Linear,           Family::Power,
    Family::Exponential,      Family::ProportionalHyperbolic,
    Family::GeneralHyperbolic, Family::SubjectiveGeneralHyperbolic,
    Family::SubjectiveExponential,
};

inline std::string_view family_name(Family f) {
    switch (f) {
    case Family::Linear: return "linear";
    case Family::Power: return "power";
    case Family::Exponential: return "exponential";
    case Family::ProportionalHyperbolic: return "proportional_hyperbolic";
    case Family::GeneralHyperbolic: return "general_hyperbolic";
    case Family::SubjectiveGeneralHyperbolic: return "subjective_general_hyperbolic";
    case Family::SubjectiveExponential: return "subjective_exponential";
    }
    return "unknown";
}

inline Family family_from_name(std::string_view name) {
    for (Family f : kAllFamilies)
        if (family_name(f) == name) return f;
    fail(errc::invalid_config, "unknown model family '" + std::string(name) + "'");
}

// A family plus the fixed subjective-time exponent used by the Subjective* families.
struct ModelSpec {
    Family family = Family::Exponential;
    double time_exponent = 1.0;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct Observation {
    double t;
    double y;
    double weight = 1.0;
};

struct DataSeries {
    std::vector<Observation> points;
    // Per-point standard error of the mean, filled by aggregate_series.
    std::vector<std::optional<double>> sem;

    std::size_t size() const { return points.size(); }

    static DataSeries from(std::span<const double> t, std::span<const double> y) {
        require(t.size() == y.size(), errc::mismatched_data, "t and y lengths differ");
        DataSeries s;
        for (std::size_t i = 0; i < t.size(); ++i) s.points.push_back({t[i], y[i]});
        return s;
    }

    // At least three finite points with non-negative t and positive weights.
    // Distinct t is checked separately (raw per-trial series repeat t).
    void validate() const {
        require(points.size() >= 3, errc::degenerate_data, "a data series needs at least 3 points");
        for (const auto& p : points) {
            require(std::isfinite(p.t) && p.t >= 0.0, errc::domain, "series time must be finite and >= 0");
            require(std::isfinite(p.y), errc::domain, "series response must be finite");
            require(std::isfinite(p.weight) && p.weight > 0.0, errc::domain, "weights must be positive");
        }
    }

    bool has_distinct_times() const {
        std::vector<double> ts;
        for (const auto& p : points) ts.push_back(p.t);
        std::sort(ts.begin(), ts.end());
        return std::adjacent_find(ts.begin(), ts.end()) == ts.end();
    }

    std::vector<double> times() const {
        std::vector<double> out;
        for (const auto& p : points) out.push_back(p.t);
        return out;
    }

    std::vector<double> values() const {
        std::vector<double> out;
        for (const auto& p : points) out.push_back(p.y);
        return out;
    }
};

struct FitConfig {
    std::uint64_t seed = 1;
    int starts = 8;  // one heuristic start plus (starts - 1) Latin-hypercube draws
    lm::Options optimizer{};
    // RSS used for the likelihood is floored at n * (resolution * max|y|)^2 so that
    // numerically exact fits compare on parameter count alone.
    double resolution = 1e-7;
    bool weighted = true;
};

struct FitResult {
    ModelSpec model;
    std::vector<double> params;
    std::vector<double> std_errors;
    double rss = 0.0;
    double loglik = 0.0;
    double bic = 0.0;
    double r2 = 0.0;
    std::size_t n = 0;
    std::size_t k = 0;  // free parameters including the residual sigma
    bool converged = false;
    int starts_tried = 0;

    double param(std::string_view name) const;
};

// --- family descriptions --------------------------------------------------

struct Bounds {
    std::vector<double> lower;
    std::vector<double> upper;
};

inline std::vector<std::string_view> param_names(Family f) {
    switch (f) {
    case Family::Linear: return {"c", "a"};
    case Family::Power: return {"c", "a", "beta"};
    case Family::Exponential:
    case Family::ProportionalHyperbolic:
    case Family::SubjectiveExponential: return {"delta"};
    case Family::GeneralHyperbolic:
    case Family::SubjectiveGeneralHyperbolic: return {"h", "r"};
    }
    return {};
}

inline std::size_t param_count(Family f) { return param_names(f).size(); }

inline Bounds param_bounds(Family f) {
    constexpr double kIntercept = 500.0;
    switch (f) {
    case Family::Linear: return {{-kIntercept, 1e-6}, {kIntercept, 1e4}};
    case Family::Power: return {{-kIntercept, 1e-6, 0.05}, {kIntercept, 1e4, 3.0}};
    case Family::Exponential:
    case Family::ProportionalHyperbolic:
    case Family::SubjectiveExponential: return {{1e-6}, {5.0}};
    case Family::GeneralHyperbolic:
    case Family::SubjectiveGeneralHyperbolic: return {{0.0, 1e-6}, {10.0, 5.0}};
    }
    return {};
}

inline double FitResult::param(std::string_view name) const {
    const auto names = param_names(model.family);
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return params.at(i);
    fail(errc::invalid_config, "model " + std::string(family_name(model.family)) + " has no parameter '" +
                                   std::string(name) + "'");
}

namespace detail {

// (log1p(x) - x/(1+x)) / x^2, stable near 0.
inline double hyperbolic_h_kernel(double x) {
    if (x < 1e-3) return 0.5 + x * (-2.0 / 3.0 + x * (0.75 + x * (-0.8 + x * (5.0 / 6.0))));
    return (std::log1p(x) - x / (1.0 + x)) / (x * x);
}

inline double model_time(const ModelSpec& m, double t) {
    switch (m.family) {
    case Family::SubjectiveGeneralHyperbolic:
    case Family::SubjectiveExponential: return std::pow(t, m.time_exponent);
    default: return t;
    }
}

} // namespace detail

// Prediction of a family at t. Parameters are taken as given (no domain checks),
// which the optimizer relies on when probing the box edges.
inline double predict(const ModelSpec& m, std::span<const double> p, double t) {
    const double tau = detail::model_time(m, t);
    switch (m.family) {
    case Family::Linear: return p[0] + p[1] * t;
    case Family::Power: return p[0] + p[1] * std::pow(t, p[2]);
    case Family::Exponential:
    case Family::SubjectiveExponential: return std::exp(-p[0] * tau);
    case Family::ProportionalHyperbolic: return 1.0 / (1.0 + p[0] * t);
    case Family::GeneralHyperbolic:
    case Family::SubjectiveGeneralHyperbolic: return detail::hyperbolic_core(p[0], p[1], tau);
    }
    return 0.0;
}

// Analytic d prediction / d params at t.
inline std::vector<double> predict_gradient(const ModelSpec& m, std::span<const double> p, double t) {
    const double tau = detail::model_time(m, t);
    switch (m.family) {
    case Family::Linear: return {1.0, t};
    case Family::Power: {
        const double tb = std::pow(t, p[2]);
        return {1.0, tb, t > 0.0 ? p[1] * tb * std::log(t) : 0.0};
    }
    case Family::Exponential:
    case Family::SubjectiveExponential: return {-tau * std::exp(-p[0] * tau)};
    case Family::ProportionalHyperbolic: {
        const double d = 1.0 + p[0] * t;
        return {-t / (d * d)};
    }
    case Family::GeneralHyperbolic:
    case Family::SubjectiveGeneralHyperbolic: {
        const double h = p[0], r = p[1];
        const double phi = detail::hyperbolic_core(h, r, tau);
        const double d_h = phi * r * tau * tau * detail::hyperbolic_h_kernel(h * tau);
        const double d_r = h < kHyperbolicLimitEps ? -tau * phi : -(std::log1p(h * tau) / h) * phi;
        return {d_h, d_r};
    }
    }
    return {};
}

// --- information criteria ---------------------------------------------------

// Gaussian-MLE BIC with the constant n*(1 + ln 2*pi) dropped: n ln(rss/n) + k ln n.
// rss == 0 yields -infinity.
inline double bic(double rss, std::size_t n, std::size_t k) {
    if (n <= k) fail(errc::domain, "bic requires n > k");
    if (!(rss >= 0.0)) fail(errc::domain, "bic requires rss >= 0");
    const double dn = static_cast<double>(n);
    if (rss == 0.0) return -std::numeric_limits<double>::infinity();
    return dn * std::log(rss / dn) + static_cast<double>(k) * std::log(dn);
}

inline double gaussian_loglik(double rss, std::size_t n) {
    const double dn = static_cast<double>(n);
    constexpr double kTwoPi = 6.283185307179586476925;
    return -0.5 * dn * (std::log(kTwoPi * rss / dn) + 1.0);
}

inline double r_squared(const DataSeries& data, std::span<const double> predictions) {
    require(predictions.size() == data.size(), errc::mismatched_data, "prediction count differs from data");
    require(!data.points.empty(), errc::degenerate_data, "empty series");
    double mean = 0.0;
    for (const auto& p : data.points) mean += p.y;
    mean /= static_cast<double>(data.size());
    double rss = 0.0, tss = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double e = data.points[i].y - predictions[i];
        const double d = data.points[i].y - mean;
        rss += e * e;
        tss += d * d;
    }
    require(tss > 0.0, errc::degenerate_data, "zero total sum of squares");
    return 1.0 - rss / tss;
}

// --- fitting ----------------------------------------------------------------

namespace detail {

struct SeriesProblem {
    const ModelSpec& model;
    const DataSeries& data;
    bool weighted;

    double sqrt_w(std::size_t i) const { return weighted ? std::sqrt(data.points[i].weight) : 1.0; }

    Eigen::VectorXd residuals(const Eigen::VectorXd& p) const {
        Eigen::VectorXd r(static_cast<Eigen::Index>(data.size()));
        const std::span<const double> ps(p.data(), static_cast<std::size_t>(p.size()));
        for (std::size_t i = 0; i < data.size(); ++i)
            r[static_cast<Eigen::Index>(i)] = sqrt_w(i) * (data.points[i].y - predict(model, ps, data.points[i].t));
        return r;
    }

    Eigen::MatrixXd jacobian(const Eigen::VectorXd& p) const {
        Eigen::MatrixXd J(static_cast<Eigen::Index>(data.size()), p.size());
        const std::span<const double> ps(p.data(), static_cast<std::size_t>(p.size()));
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto g = predict_gradient(model, ps, data.points[i].t);
            for (std::size_t j = 0; j < g.size(); ++j)
                J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = -sqrt_w(i) * g[j];
        }
        return J;
    }
};

inline double clamp_to(double v, double lo, double hi) {
    if (!std::isfinite(v)) return 0.5 * (lo + hi);
    return std::clamp(v, lo, hi);
}

// Slope of y = b*x through the origin.
inline double origin_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += x[i] * y[i];
        sxx += x[i] * x[i];
    }
    return sxx > 0.0 ? sxy / sxx : 0.0;
}

inline std::pair<double, double> ols(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
    return {my - slope * mx, slope};
}

// Closed-form or linearised starting point for each family.
inline std::vector<double> heuristic_start(const ModelSpec& m, const DataSeries& data) {
    const Bounds b = param_bounds(m.family);
    std::vector<double> tau, y;
    for (const auto& p : data.points) {
        tau.push_back(model_time(m, p.t));
        y.push_back(p.y);
    }
    auto log_rate = [&] {  // -ln y = delta * tau
        std::vector<double> x, z;
        for (std::size_t i = 0; i < y.size(); ++i)
            if (y[i] > 0.0 && tau[i] > 0.0) {
                x.push_back(tau[i]);
                z.push_back(-std::log(y[i]));
            }
        return origin_slope(x, z);
    };
    auto proportional_rate = [&] {  // 1/y - 1 = delta * tau
        std::vector<double> x, z;
        for (std::size_t i = 0; i < y.size(); ++i)
            if (y[i] > 0.0) {
                x.push_back(tau[i]);
                z.push_back(1.0 / y[i] - 1.0);
            }
        return origin_slope(x, z);
    };

    std::vector<double> start;
    switch (m.family) {
    case Family::Linear: {
        const auto [c, a] = ols(tau, y);
        start = {c, a};
        break;
    }
    case Family::Power: {
        const double ymin = *std::min_element(y.begin(), y.end());
        const double shift = ymin > 0.0 ? 0.0 : ymin - 1.0;
        std::vector<double> lx, ly;
        for (std::size_t i = 0; i < y.size(); ++i)
            if (tau[i] > 0.0) {
                lx.push_back(std::log(tau[i]));
                ly.push_back(std::log(y[i] - shift));
            }
        const auto [la, beta] = ols(lx, ly);
        start = {shift, std::exp(la), beta};
        break;
    }
    case Family::Exponential:
    case Family::SubjectiveExponential: start = {log_rate()}; break;
    case Family::ProportionalHyperbolic: start = {proportional_rate()}; break;
    case Family::GeneralHyperbolic:
    case Family::SubjectiveGeneralHyperbolic: {
        // r = h reproduces the proportional fit; start the ridge search there.
        const double d = proportional_rate();
        start = {d, d};
        break;
    }
    }
    for (std::size_t i = 0; i < start.size(); ++i) start[i] = clamp_to(start[i], b.lower[i], b.upper[i]);
    return start;
}

// Rate-like parameters are stratified on a log scale, the rest linearly.
inline bool log_scaled(Family f, std::size_t index) {
    switch (f) {
    case Family::Linear: return index == 1;
    case Family::Power: return index == 1;
    case Family::GeneralHyperbolic:
    case Family::SubjectiveGeneralHyperbolic: return index == 1;
    default: return true;
    }
}

inline std::vector<std::vector<double>> latin_hypercube(Family f, std::size_t draws, std::uint64_t seed) {
    const Bounds b = param_bounds(f);
    const std::size_t dims = b.lower.size();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::vector<double>> out(draws, std::vector<double>(dims));
    for (std::size_t d = 0; d < dims; ++d) {
        std::vector<std::size_t> strata(draws);
        std::iota(strata.begin(), strata.end(), 0);
        std::shuffle(strata.begin(), strata.end(), rng);
        const bool logs = log_scaled(f, d) && b.lower[d] > 0.0;
        const double lo = logs ? std::log(b.lower[d]) : b.lower[d];
        const double hi = logs ? std::log(b.upper[d]) : b.upper[d];
        for (std::size_t i = 0; i < draws; ++i) {
            const double u = (static_cast<double>(strata[i]) + unit(rng)) / static_cast<double>(draws);
            const double v = lo + u * (hi - lo);
            out[i][d] = logs ? std::exp(v) : v;
        }
    }
    return out;
}

inline void check_fit_input(const ModelSpec& m, const DataSeries& data) {
    data.validate();
    const std::size_t k = param_count(m.family) + 1;
    require(data.size() >= k + 1, errc::degenerate_data, "fewer than k + 1 points for this model");
    const double y0 = data.points.front().y;
    const bool constant = std::all_of(data.points.begin(), data.points.end(), [y0](const Observation& o) { return o.y == y0; });
    require(!constant, errc::degenerate_data, "zero variance in the response");
    if (m.family == Family::SubjectiveExponential || m.family == Family::SubjectiveGeneralHyperbolic)
        require(m.time_exponent > 0.0 && std::isfinite(m.time_exponent), errc::domain, "time exponent must be > 0");
}

} // namespace detail

// Multi-start least squares. Throws DegenerateData or NonConvergence.
inline FitResult fit_model(const ModelSpec& model, const DataSeries& data, const FitConfig& config = {}) {
    detail::check_fit_input(model, data);
    const Bounds b = param_bounds(model.family);
    const std::size_t np = b.lower.size();
    const Eigen::Map<const Eigen::VectorXd> lower(b.lower.data(), static_cast<Eigen::Index>(np));
    const Eigen::Map<const Eigen::VectorXd> upper(b.upper.data(), static_cast<Eigen::Index>(np));

    std::vector<std::vector<double>> starts{detail::heuristic_start(model, data)};
    if (config.starts > 1) {
        const std::uint64_t seed = config.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(model.family) + 1;
        auto draws = detail::latin_hypercube(model.family, static_cast<std::size_t>(config.starts - 1), seed);
        starts.insert(starts.end(), draws.begin(), draws.end());
    }

    const detail::SeriesProblem problem{model, data, config.weighted};
    std::optional<lm::Outcome> best;
    for (const auto& s : starts) {
        const Eigen::Map<const Eigen::VectorXd> start(s.data(), static_cast<Eigen::Index>(np));
        lm::Outcome o = lm::minimize(problem, start, lower, upper, config.optimizer);
        if (!o.converged || !std::isfinite(o.rss)) continue;
        if (!best || o.rss < best->rss) best = std::move(o);
    }
    if (!best) fail(errc::non_convergence, "no start converged for " + std::string(family_name(model.family)));

    FitResult fr;
    fr.model = model;
    fr.params.assign(best->params.data(), best->params.data() + np);
    fr.n = data.size();
    fr.k = np + 1;
    fr.converged = true;
    fr.starts_tried = static_cast<int>(starts.size());

    std::vector<double> pred;
    double rss = 0.0;
    for (const auto& o : data.points) {
        pred.push_back(predict(model, fr.params, o.t));
        rss += (o.y - pred.back()) * (o.y - pred.back());
    }
    fr.rss = rss;
    fr.r2 = r_squared(data, pred);

    double ymax = 0.0;
    for (const auto& o : data.points) ymax = std::max(ymax, std::abs(o.y));
    const double floor = static_cast<double>(fr.n) * std::pow(config.resolution * ymax, 2);
    const double rss_lik = std::max(rss, floor);
    fr.loglik = gaussian_loglik(rss_lik, fr.n);
    fr.bic = bic(rss_lik, fr.n, fr.k);

    // Asymptotic standard errors from sigma^2 (J^T J)^-1.
    const Eigen::MatrixXd J = problem.jacobian(best->params);
    const Eigen::MatrixXd info = J.transpose() * J;
    const double dof = static_cast<double>(fr.n) - static_cast<double>(np);
    const double sigma2 = best->rss / dof;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(info);
    fr.std_errors.assign(np, std::numeric_limits<double>::quiet_NaN());
    if (lu.isInvertible()) {
        const Eigen::MatrixXd cov = lu.inverse() * sigma2;
        for (std::size_t i = 0; i < np; ++i) {
            const double v = cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
            fr.std_errors[i] = v >= 0.0 ? std::sqrt(v) : std::numeric_limits<double>::quiet_NaN();
        }
    }
    return fr;
}

// --- model comparison --------------------------------------------------------

struct ModelComparison {
    std::vector<FitResult> candidates;
    std::size_t selected = 0;
    // BIC of the simplest candidate minus the minimum BIC.
    double delta_bic = 0.0;

    const FitResult& winner() const { return candidates.at(selected); }
};

// complexity_order lists families from simplest to most complex. The minimum-BIC
// model wins unless a simpler model lies within 2 BIC units of it; then the
// simplest such model is chosen. BIC ties closer than 1e-9 go to the simpler model.
inline ModelComparison compare_models(std::vector<FitResult> fits, std::span<const Family> complexity_order) {
    require(fits.size() >= 2, errc::mismatched_data, "compare_models needs at least two fits");
    for (const auto& f : fits)
        if (f.n != fits.front().n) fail(errc::mismatched_data, "fits disagree on the number of points");

    auto rank = [&](const FitResult& f) {
        const auto it = std::find(complexity_order.begin(), complexity_order.end(), f.model.family);
        require(it != complexity_order.end(), errc::invalid_config, "family missing from complexity order");
        return static_cast<std::size_t>(it - complexity_order.begin());
    };

    std::size_t best = 0, simplest = 0;
    for (std::size_t i = 1; i < fits.size(); ++i) {
        if (fits[i].bic < fits[best].bic - 1e-9 ||
            (std::abs(fits[i].bic - fits[best].bic) <= 1e-9 && rank(fits[i]) < rank(fits[best])))
            best = i;
        if (rank(fits[i]) < rank(fits[simplest])) simplest = i;
    }

    std::size_t chosen = best;
    for (std::size_t i = 0; i < fits.size(); ++i) {
        if (rank(fits[i]) < rank(fits[chosen]) && fits[i].bic - fits[best].bic < 2.0) chosen = i;
    }

    ModelComparison mc;
    mc.delta_bic = fits[simplest].bic - fits[best].bic;
    mc.selected = chosen;
    mc.candidates = std::move(fits);
    return mc;
}

// --- cohort summaries --------------------------------------------------------

namespace detail {

// Mean of values summed in sorted order, so the result does not depend on input order.
inline double stable_mean(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline std::optional<double> stable_sem(std::vector<double> v) {
    if (v.size() < 2) return std::nullopt;
    const double m = stable_mean(v);
    std::vector<double> sq;
    for (double x : v) sq.push_back((x - m) * (x - m));
    std::sort(sq.begin(), sq.end());
    double ss = 0.0;
    for (double x : sq) ss += x;
    const double n = static_cast<double>(v.size());
    return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

} // namespace detail

struct TwoStageSummary {
    std::optional<ModelSpec> model;
    std::vector<std::string> names;
    std::vector<double> mean;
    std::vector<std::optional<double>> sem;
    double r2_mean = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> r2_sem;
    std::size_t used = 0;
    std::size_t excluded = 0;
};

// Average of per-subject estimates; non-converged fits are counted and skipped.
inline TwoStageSummary two_stage(std::span<const FitResult> per_subject) {
    TwoStageSummary s;
    std::vector<const FitResult*> ok;
    for (const auto& f : per_subject) {
        if (!f.converged) {
            ++s.excluded;
            continue;
        }
        if (!ok.empty() && ok.front()->model.family != f.model.family)
            fail(errc::mismatched_data, "two_stage needs fits of one family");
        ok.push_back(&f);
    }
    s.used = ok.size();
    if (ok.empty()) return s;
    s.model = ok.front()->model;
    for (auto n : param_names(ok.front()->model.family)) s.names.emplace_back(n);
    for (std::size_t j = 0; j < s.names.size(); ++j) {
        std::vector<double> col;
        for (const auto* f : ok) col.push_back(f->params.at(j));
        s.mean.push_back(detail::stable_mean(col));
        s.sem.push_back(detail::stable_sem(col));
    }
    std::vector<double> r2;
    for (const auto* f : ok) r2.push_back(f->r2);
    s.r2_mean = detail::stable_mean(r2);
    s.r2_sem = detail::stable_sem(r2);
    return s;
}

// A series on a fixed grid whose cells may be missing.
struct PartialSeries {
    std::vector<double> t;
    std::vector<std::optional<double>> y;

    static PartialSeries from(const DataSeries& s) {
        PartialSeries p;
        for (const auto& o : s.points) {
            p.t.push_back(o.t);
            p.y.emplace_back(o.y);
        }
        return p;
    }
};

// Per-t mean across subjects (missing cells skipped) with per-t SEM attached.
inline DataSeries aggregate_series(std::span<const PartialSeries> cohort) {
    require(!cohort.empty(), errc::empty_cell, "no series to aggregate");
    const auto& grid = cohort.front().t;
    for (const auto& s : cohort) {
        require(s.t == grid, errc::mismatched_data, "series are not on a common t-grid");
        require(s.y.size() == grid.size(), errc::mismatched_data, "series length differs from its grid");
    }
    DataSeries out;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        std::vector<double> cell;
        for (const auto& s : cohort)
            if (s.y[i]) cell.push_back(*s.y[i]);
        if (cell.empty()) fail(errc::empty_cell, "no observations at t = " + std::to_string(grid[i]));
        out.points.push_back({grid[i], detail::stable_mean(cell)});
        out.sem.push_back(detail::stable_sem(cell));
    }
    return out;
}

inline DataSeries aggregate_series(std::span<const DataSeries> cohort) {
    std::vector<PartialSeries> partial;
    for (const auto& s : cohort) partial.push_back(PartialSeries::from(s));
    return aggregate_series(std::span<const PartialSeries>(partial));
}

} // namespace impatience
