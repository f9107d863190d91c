#pragma once

// Discount functions, psychophysical time mappings and the decreasing
// impatience index. Everything here is pure; time is in calendar months.

#include <cmath>
#include <string>
#include <type_traits>
#include <variant>

#include "impatience/error.hpp"

namespace impatience {

// Below this h the general hyperbolic form is replaced by its exponential limit.
inline constexpr double kHyperbolicLimitEps = 1e-8;

struct Exponential {
    double delta;
};

struct QuasiHyperbolic {
    double y;
    double delta;
};

struct ProportionalHyperbolic {
    double delta;
};

struct GeneralHyperbolic {
    double h;
    double r;
};

// General hyperbolic discounting over subjective time t^c.
struct SubjectiveGeneralHyperbolic {
    double h;
    double r;
    double c;
};

using DiscountParams = std::variant<Exponential, QuasiHyperbolic, ProportionalHyperbolic,
                                    GeneralHyperbolic, SubjectiveGeneralHyperbolic>;

struct Linear {
    double c;
    double a;
};

struct Power {
    double c;
    double a;
    double beta;
};

using PsychParams = std::variant<Linear, Power>;

namespace detail {

inline void check_time(double t) {
    if (!(t >= 0.0) || !std::isfinite(t)) fail(errc::domain, "time must be a finite non-negative number of months");
}

inline void check_hyperbolic(double h, double r) {
    if (!(h >= 0.0) || !std::isfinite(h)) fail(errc::domain, "h must be >= 0");
    if (!(r > 0.0) || !std::isfinite(r)) fail(errc::domain, "r must be > 0");
}

// (1 + h*tau)^(-r/h), with the exponential limit for h < eps.
inline double hyperbolic_core(double h, double r, double tau) {
    if (h < kHyperbolicLimitEps) return std::exp(-r * tau);
    return std::exp(-(r / h) * std::log1p(h * tau));
}

// d/dtau of hyperbolic_core.
inline double hyperbolic_core_slope(double h, double r, double tau) {
    return -r * hyperbolic_core(h, r, tau) / (1.0 + h * tau);
}

} // namespace detail

inline double exponential(double delta, double t) {
    if (!(delta > 0.0)) fail(errc::domain, "exponential: delta must be > 0");
    detail::check_time(t);
    return std::exp(-delta * t);
}

// y*delta^t for t > 0 and 1 at t == 0; t is treated as continuous.
inline double quasi_hyperbolic(double y, double delta, double t) {
    if (!(y > 0.0 && y <= 1.0)) fail(errc::domain, "quasi-hyperbolic: y must be in (0, 1]");
    if (!(delta > 0.0 && delta < 1.0)) fail(errc::domain, "quasi-hyperbolic: delta must be in (0, 1)");
    detail::check_time(t);
    if (t == 0.0) return 1.0;
    return y * std::pow(delta, t);
}

inline double proportional_hyperbolic(double delta, double t) {
    if (!(delta > 0.0)) fail(errc::domain, "proportional hyperbolic: delta must be > 0");
    detail::check_time(t);
    return 1.0 / (1.0 + delta * t);
}

inline double general_hyperbolic(double h, double r, double t) {
    detail::check_hyperbolic(h, r);
    detail::check_time(t);
    return detail::hyperbolic_core(h, r, t);
}

inline double subjective_general_hyperbolic(double h, double r, double c, double t) {
    detail::check_hyperbolic(h, r);
    if (!(c > 0.0) || !std::isfinite(c)) fail(errc::domain, "c must be > 0");
    detail::check_time(t);
    return detail::hyperbolic_core(h, r, std::pow(t, c));
}

// h/(1 + h*t): the decline of the instantaneous discount rate with delay.
inline double decreasing_impatience(double h, double t) {
    if (!(h >= 0.0)) fail(errc::domain, "decreasing impatience: h must be >= 0");
    detail::check_time(t);
    return h / (1.0 + h * t);
}

inline double discount(const DiscountParams& params, double t) {
    return std::visit(
        [t](const auto& p) -> double {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, Exponential>) return exponential(p.delta, t);
            else if constexpr (std::is_same_v<P, QuasiHyperbolic>) return quasi_hyperbolic(p.y, p.delta, t);
            else if constexpr (std::is_same_v<P, ProportionalHyperbolic>) return proportional_hyperbolic(p.delta, t);
            else if constexpr (std::is_same_v<P, GeneralHyperbolic>) return general_hyperbolic(p.h, p.r, t);
            else return subjective_general_hyperbolic(p.h, p.r, p.c, t);
        },
        params);
}

// Analytic d(phi)/dt. The quasi-hyperbolic slope is the one of its t > 0 branch.
inline double discount_slope(const DiscountParams& params, double t) {
    return std::visit(
        [t](const auto& p) -> double {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, Exponential>) {
                return -p.delta * exponential(p.delta, t);
            } else if constexpr (std::is_same_v<P, QuasiHyperbolic>) {
                quasi_hyperbolic(p.y, p.delta, t);
                return p.y * std::pow(p.delta, t) * std::log(p.delta);
            } else if constexpr (std::is_same_v<P, ProportionalHyperbolic>) {
                const double v = proportional_hyperbolic(p.delta, t);
                return -p.delta * v * v;
            } else if constexpr (std::is_same_v<P, GeneralHyperbolic>) {
                general_hyperbolic(p.h, p.r, t);
                return detail::hyperbolic_core_slope(p.h, p.r, t);
            } else {
                subjective_general_hyperbolic(p.h, p.r, p.c, t);
                if (t == 0.0) fail(errc::domain, "subjective slope undefined at t = 0");
                const double tau = std::pow(t, p.c);
                return detail::hyperbolic_core_slope(p.h, p.r, tau) * p.c * tau / t;
            }
        },
        params);
}

inline double eval_psych(const PsychParams& params, double t) {
    detail::check_time(t);
    return std::visit(
        [t](const auto& p) -> double {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, Linear>) return p.c + p.a * t;
            else {
                if (!(p.beta > 0.0)) fail(errc::domain, "power: beta must be > 0");
                return p.c + p.a * std::pow(t, p.beta);
            }
        },
        params);
}

inline std::string model_name(const DiscountParams& params) {
    return std::visit(
        [](const auto& p) -> std::string {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, Exponential>) return "exponential";
            else if constexpr (std::is_same_v<P, QuasiHyperbolic>) return "quasi_hyperbolic";
            else if constexpr (std::is_same_v<P, ProportionalHyperbolic>) return "proportional_hyperbolic";
            else if constexpr (std::is_same_v<P, GeneralHyperbolic>) return "general_hyperbolic";
            else return "subjective_general_hyperbolic";
        },
        params);
}

} // namespace impatience
