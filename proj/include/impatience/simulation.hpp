#pragma once

// Synthetic participants for both tasks, cohort generators and the
// parameter-recovery harness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "impatience/analysis.hpp"
#include "impatience/error.hpp"
#include "impatience/fitting.hpp"
#include "impatience/magnitude.hpp"
#include "impatience/models.hpp"
#include "impatience/staircase.hpp"

namespace impatience {

struct Deterministic {
    friend bool operator==(const Deterministic&, const Deterministic&) = default;
};

// P(Later) = logistic((later * m - now) / temperature + perseveration * s), where s is
// +1 if the previous choice at this interval was Later, -1 if Now, 0 on the first trial.
struct Logistic {
    double temperature = 10.0;
    double perseveration = 0.0;

    friend bool operator==(const Logistic&, const Logistic&) = default;
};

using ChoiceNoise = std::variant<Deterministic, Logistic>;

struct AgentSpec {
    std::string id;
    DiscountParams discount = Exponential{0.05};
    ChoiceNoise choice_noise = Deterministic{};
    double time_map_c = 1.0;  // agent discounts on t^c
    PsychParams magnitude = Linear{0.0, 15.0};
    double response_sigma_px = 0.0;
    double timeout_rate = 0.0;
    std::uint64_t seed = 1;

    void validate() const {
        require(std::isfinite(time_map_c) && time_map_c > 0.0, errc::invalid_config, "time_map_c must be positive");
        require(response_sigma_px >= 0.0, errc::invalid_config, "response sigma must be non-negative");
        require(timeout_rate >= 0.0 && timeout_rate <= 1.0, errc::invalid_config, "timeout rate must be in [0, 1]");
        if (const auto* l = std::get_if<Logistic>(&choice_noise)) {
            require(l->temperature > 0.0 && std::isfinite(l->temperature), errc::invalid_config,
                    "logistic temperature must be positive");
            require(std::isfinite(l->perseveration), errc::invalid_config, "perseveration must be finite");
        }
        discount_at(1.0);  // throws DomainError for invalid discount parameters
        eval_psych(magnitude, 1.0);
    }

    // The agent's discount factor at calendar time t.
    double discount_at(double t) const { return impatience::discount(discount, std::pow(t, time_map_c)); }
};

namespace detail {

// Independent streams per (agent seed, purpose).
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(purpose), 0x5eedu};
    return std::mt19937_64(seq);
}

} // namespace detail

inline ChoiceSession simulate_choice_session(const AgentSpec& agent, const StaircaseConfig& cfg = {}) {
    agent.validate();
    ChoiceSession s(agent.seed, cfg);
    auto rng = detail::stream(agent.seed, 1);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::lognormal_distribution<double> rt(std::log(1.5), 0.4);
    while (s.status() == SessionStatus::Running) {
        const auto trial = s.next_trial();
        const double value = trial.later_amount * agent.discount_at(trial.interval) - trial.now_amount;
        const double draw = u01(rng);
        Choice c;
        if (const auto* l = std::get_if<Logistic>(&agent.choice_noise)) {
            const auto h = s.history(trial.interval);
            const double sticky = h.empty() ? 0.0 : (h.back().choice == Choice::Later ? 1.0 : -1.0);
            const double z = value / l->temperature + l->perseveration * sticky;
            c = draw < 1.0 / (1.0 + std::exp(-z)) ? Choice::Later : Choice::Now;
        } else {
            c = value > 0.0 ? Choice::Later : Choice::Now;
        }
        s.record_choice(trial, c, rt(rng));
    }
    if (s.status() == SessionStatus::Capped)
        fail(errc::cap_exceeded, "agent '" + agent.id + "' hit the per-interval trial cap");
    return s;
}

struct MagnitudeSimulation {
    MagnitudeSession session;
    int clamp_events = 0;    // floor + ceiling
    int ceiling_clamps = 0;  // raw response above max_px
};

inline MagnitudeSimulation simulate_magnitude(const AgentSpec& agent, const MagnitudeConfig& cfg = {}) {
    agent.validate();
    MagnitudeSimulation out{MagnitudeSession(agent.seed, cfg)};
    auto& s = out.session;
    auto rng = detail::stream(agent.seed, 2);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> latency(1.0, 6.0);
    while (!s.complete()) {
        const auto trial = s.next_trial();
        const double draw = u01(rng);
        const double eps = noise(rng);
        if (draw < agent.timeout_rate) {
            s.record(trial, std::nullopt, cfg.response_window_s);
            continue;
        }
        const double raw = std::round(eval_psych(agent.magnitude, trial.interval) + agent.response_sigma_px * eps);
        const double clamped = std::clamp(raw, 0.0, static_cast<double>(cfg.max_px));
        if (clamped != raw) ++out.clamp_events;
        if (raw > cfg.max_px) ++out.ceiling_clamps;
        s.record(trial, static_cast<int>(clamped), latency(rng));
    }
    return out;
}

inline MagnitudeSession simulate_magnitude_session(const AgentSpec& agent, const MagnitudeConfig& cfg = {}) {
    return simulate_magnitude(agent, cfg).session;
}

// --- cohorts -------------------------------------------------------------------

struct CohortConfig {
    double power_fraction = 2.0 / 3.0;
    double hyperbolic_fraction = 0.625;
    double beta_min = 0.4;
    double beta_max = 0.9;
    double line_at_36 = 550.0;  // expected px at the longest interval
    double response_sigma_px = 20.0;
    Logistic choice_noise{10.0, 5.0};
    double timeout_rate = 0.0;
    // Hyperbolic agents draw h log-uniformly; every agent draws D(36) uniformly.
    double h_min = 0.2;
    double h_max = 1.0;
    double d36_min = 0.1;
    double d36_max = 0.35;
};

// Mixed cohort: round(power_fraction * n) power-mapped agents with beta ~ U(beta_min,
// beta_max) and round(hyperbolic_fraction * n) general-hyperbolic discounters, both
// assigned to random agents; the rest map linearly and discount exponentially.
inline std::vector<AgentSpec> default_cohort(std::size_t n, std::uint64_t seed, const CohortConfig& cfg = {}) {
    require(n >= 1, errc::invalid_config, "cohort needs at least one agent");
    auto rng = detail::stream(seed, 100);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto pick = [&](double fraction) {
        std::vector<bool> flags(n, false);
        const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
        std::fill(flags.begin(), flags.begin() + static_cast<std::ptrdiff_t>(std::min(k, n)), true);
        std::shuffle(flags.begin(), flags.end(), rng);
        return flags;
    };
    const auto power = pick(cfg.power_fraction);
    const auto hyper = pick(cfg.hyperbolic_fraction);
    std::vector<AgentSpec> out;
    for (std::size_t i = 0; i < n; ++i) {
        AgentSpec a;
        a.id = "sim" + std::to_string(i + 1);
        a.seed = seed * 1000003u + i + 1;
        a.choice_noise = cfg.choice_noise;
        a.response_sigma_px = cfg.response_sigma_px;
        a.timeout_rate = cfg.timeout_rate;
        if (power[i]) {
            const double beta = cfg.beta_min + (cfg.beta_max - cfg.beta_min) * u01(rng);
            a.magnitude = Power{0.0, cfg.line_at_36 / std::pow(36.0, beta), beta};
        } else {
            a.magnitude = Linear{0.0, cfg.line_at_36 / 36.0};
        }
        if (hyper[i]) {
            const double h = std::exp(std::log(cfg.h_min) + (std::log(cfg.h_max) - std::log(cfg.h_min)) * u01(rng));
            const double d36 = cfg.d36_min + (cfg.d36_max - cfg.d36_min) * u01(rng);
            const double r = -h * std::log(d36) / std::log1p(36.0 * h);
            a.discount = GeneralHyperbolic{h, r};
        } else {
            const double d36 = cfg.d36_min + (cfg.d36_max - cfg.d36_min) * u01(rng);
            a.discount = Exponential{-std::log(d36) / 36.0};
        }
        out.push_back(std::move(a));
    }
    return out;
}

// Agents that discount exponentially in subjective time t^c and whose line-length
// mapping has the same exponent.
inline std::vector<AgentSpec> subjective_exponential_cohort(std::size_t n, std::uint64_t seed, double c = 0.7,
                                                            const CohortConfig& cfg = {}) {
    require(n >= 1, errc::invalid_config, "cohort needs at least one agent");
    auto rng = detail::stream(seed, 101);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<AgentSpec> out;
    for (std::size_t i = 0; i < n; ++i) {
        AgentSpec a;
        a.id = "subj" + std::to_string(i + 1);
        a.seed = seed * 1000003u + i + 1;
        a.choice_noise = cfg.choice_noise;
        a.response_sigma_px = cfg.response_sigma_px;
        a.timeout_rate = cfg.timeout_rate;
        a.time_map_c = c;
        a.magnitude = Power{0.0, cfg.line_at_36 / std::pow(36.0, c), c};
        const double d36 = cfg.d36_min + (cfg.d36_max - cfg.d36_min) * u01(rng);
        a.discount = Exponential{-std::log(d36) / std::pow(36.0, c)};
        out.push_back(std::move(a));
    }
    return out;
}

// --- recovery -------------------------------------------------------------------

struct SimulatedSubject {
    SubjectData data;
    std::size_t choice_trials = 0;
    int clamp_events = 0;
    int ceiling_clamps = 0;
};

inline SimulatedSubject simulate_subject(const AgentSpec& agent, const StaircaseConfig& scfg = {},
                                         const MagnitudeConfig& mcfg = {}) {
    SimulatedSubject out;
    out.data.id = agent.id;
    const auto choice = simulate_choice_session(agent, scfg);
    out.choice_trials = choice.total_trials();
    out.data.dv = session_dv_series(choice);
    auto mag = simulate_magnitude(agent, mcfg);
    out.clamp_events = mag.clamp_events;
    out.ceiling_clamps = mag.ceiling_clamps;
    out.data.magnitude = magnitude_series(mag.session);
    return out;
}

struct RecoveryRow {
    std::string id;
    std::string true_discount;
    std::vector<std::pair<std::string, double>> true_params;
    std::optional<double> true_beta;
    std::optional<double> beta_hat;
    std::optional<double> beta_abs_error;
    std::optional<TimeMapping> true_mapping;
    std::optional<TimeMapping> mapping;
    std::optional<DiscountClass> discount_class;
    std::optional<double> pre_h, post_h, pre_r, post_r;
    std::size_t choice_trials = 0;
    int clamp_events = 0;
    bool excluded = false;
};

struct RecoveryReport {
    std::vector<RecoveryRow> rows;
    CohortReport cohort;
    double mean_choice_trials = 0.0;
    int clamp_events = 0;
    int ceiling_clamps = 0;
    std::optional<double> beta_mae;
    std::optional<double> beta_max_abs_error;
    double mapping_accuracy = 0.0;  // over included agents
};

struct PipelineConfig {
    StaircaseConfig staircase;
    MagnitudeConfig magnitude;
    AnalysisConfig analysis;
};

inline std::vector<std::pair<std::string, double>> discount_param_list(const DiscountParams& d) {
    return std::visit(
        [](const auto& m) -> std::vector<std::pair<std::string, double>> {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Exponential>) return {{"delta", m.delta}};
            else if constexpr (std::is_same_v<T, QuasiHyperbolic>) return {{"y", m.y}, {"delta", m.delta}};
            else if constexpr (std::is_same_v<T, ProportionalHyperbolic>) return {{"delta", m.delta}};
            else if constexpr (std::is_same_v<T, GeneralHyperbolic>) return {{"h", m.h}, {"r", m.r}};
            else return {{"h", m.h}, {"r", m.r}, {"c", m.c}};
        },
        d);
}

inline RecoveryReport run_recovery(std::span<const AgentSpec> cohort, const PipelineConfig& cfg = {}) {
    require(!cohort.empty(), errc::invalid_config, "recovery needs at least one agent");
    std::vector<SubjectData> data;
    RecoveryReport rep;
    double trials = 0.0;
    for (const auto& a : cohort) {
        auto sim = simulate_subject(a, cfg.staircase, cfg.magnitude);
        RecoveryRow row;
        row.id = a.id;
        row.true_discount = model_name(a.discount);
        row.true_params = discount_param_list(a.discount);
        if (const auto* p = std::get_if<Power>(&a.magnitude)) {
            row.true_beta = p->beta;
            row.true_mapping = TimeMapping::Power;
        } else {
            row.true_mapping = TimeMapping::Linear;
        }
        row.choice_trials = sim.choice_trials;
        row.clamp_events = sim.clamp_events;
        trials += static_cast<double>(sim.choice_trials);
        rep.clamp_events += sim.clamp_events;
        rep.ceiling_clamps += sim.ceiling_clamps;
        rep.rows.push_back(std::move(row));
        data.push_back(std::move(sim.data));
    }
    rep.mean_choice_trials = trials / static_cast<double>(cohort.size());
    rep.cohort = analyze_cohort(data, cfg.analysis);

    std::vector<double> beta_err;
    std::size_t correct = 0, included = 0;
    for (std::size_t i = 0; i < rep.rows.size(); ++i) {
        auto& row = rep.rows[i];
        const auto& p = rep.cohort.profiles[i];
        row.excluded = std::find(rep.cohort.excluded_ids.begin(), rep.cohort.excluded_ids.end(), p.id) !=
                       rep.cohort.excluded_ids.end();
        row.mapping = p.mapping;
        row.discount_class = p.discount_class;
        if (const auto* f = p.fit(Family::Power)) {
            row.beta_hat = f->param("beta");
            if (row.true_beta) {
                row.beta_abs_error = std::abs(*row.beta_hat - *row.true_beta);
                beta_err.push_back(*row.beta_abs_error);
            }
        }
        if (p.remap) {
            row.pre_h = p.remap->objective.param("h");
            row.pre_r = p.remap->objective.param("r");
            row.post_h = p.remap->subjective.param("h");
            row.post_r = p.remap->subjective.param("r");
        }
        if (!row.excluded && row.mapping) {
            ++included;
            correct += *row.mapping == *row.true_mapping;
        }
    }
    if (!beta_err.empty()) {
        rep.beta_mae = detail::stable_mean(beta_err);
        rep.beta_max_abs_error = *std::max_element(beta_err.begin(), beta_err.end());
    }
    rep.mapping_accuracy = included ? static_cast<double>(correct) / static_cast<double>(included) : 0.0;
    return rep;
}

} // namespace impatience
