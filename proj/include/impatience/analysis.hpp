#pragma once

// Subject screening, per-subject classification of the time mapping and the
// discount function, subjective-time remapping, and the cohort report.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impatience/bayes.hpp"
#include "impatience/error.hpp"
#include "impatience/fitting.hpp"
#include "impatience/models.hpp"

namespace impatience {

enum class TimeMapping { Linear, Power };
enum class DiscountClass { Exponential, ProportionalHyperbolic, GeneralHyperbolic };

inline std::string_view to_string(TimeMapping m) { return m == TimeMapping::Power ? "power" : "linear"; }

inline std::string_view to_string(DiscountClass c) {
    switch (c) {
    case DiscountClass::Exponential: return "exponential";
    case DiscountClass::ProportionalHyperbolic: return "proportional_hyperbolic";
    case DiscountClass::GeneralHyperbolic: return "general_hyperbolic";
    }
    return "unknown";
}

inline constexpr std::array kMagnitudeOrder = {Family::Linear, Family::Power};
inline constexpr std::array kDiscountOrder = {Family::Exponential, Family::ProportionalHyperbolic,
                                              Family::GeneralHyperbolic};
inline constexpr std::array kSubjectiveOrder = {Family::SubjectiveExponential, Family::SubjectiveGeneralHyperbolic};

// Parameters screened for outliers, as "<family>.<param>".
inline const std::vector<std::pair<Family, std::string>>& screened_parameters() {
    static const std::vector<std::pair<Family, std::string>> p = {
        {Family::Exponential, "delta"},
        {Family::ProportionalHyperbolic, "delta"},
        {Family::GeneralHyperbolic, "h"},
        {Family::GeneralHyperbolic, "r"},
    };
    return p;
}

struct ScreenConfig {
    double invariant_range = 0.15;
    double invariant_cv = 0.05;
    double outlier_z = 3.0;
    // Overrides keyed by "<family>.<param>", e.g. "general_hyperbolic.h".
    std::map<std::string, double> outlier_z_by_param;

    double threshold(const std::string& key) const {
        const auto it = outlier_z_by_param.find(key);
        return it == outlier_z_by_param.end() ? outlier_z : it->second;
    }
};

struct AnalysisConfig {
    FitConfig fit;
    ScreenConfig screen;
    BayesConfig bayes;
    bool exclude_flagged = true;
    // Remap Linear-classified subjects with their power exponent instead of c = 1.
    bool remap_linear_with_beta = false;
};

struct ExclusionFlags {
    bool invariant = false;
    bool outlier = false;
    std::vector<std::string> outlier_params;  // "<family>.<param> z=<value>"

    bool any() const { return invariant || outlier; }
};

struct SubjectData {
    std::string id;
    DataSeries magnitude;  // mean line length per interval
    DataSeries dv;         // discounted value per interval
};

struct RemapResult {
    double c = 1.0;
    FitResult objective;               // general hyperbolic on calendar time
    FitResult subjective;              // general hyperbolic on t^c
    FitResult subjective_exponential;  // exponential on t^c
    bool h_lowered = false;
    bool still_hyperbolic = false;  // subjective GH beats subjective exponential by >= 2 BIC
};

struct SubjectProfile {
    std::string id;
    std::optional<ModelComparison> magnitude;
    std::optional<TimeMapping> mapping;
    std::optional<ModelComparison> discounting;
    std::optional<DiscountClass> discount_class;
    bool ph_beats_exponential = false;  // pairwise, BIC lower by >= 2
    bool gh_beats_exponential = false;
    double c = 1.0;
    std::optional<RemapResult> remap;
    ExclusionFlags flags;

    const FitResult* fit(Family f) const {
        for (const auto* mc : {magnitude ? &*magnitude : nullptr, discounting ? &*discounting : nullptr}) {
            if (!mc) continue;
            for (const auto& r : mc->candidates)
                if (r.model.family == f) return &r;
        }
        return nullptr;
    }
};

// --- screening --------------------------------------------------------------

inline bool is_invariant(const DataSeries& dv, const ScreenConfig& cfg = {}) {
    require(dv.size() >= 2, errc::degenerate_data, "dv series needs at least two points");
    const auto v = dv.values();
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double mean = detail::stable_mean(v);
    const double sem = detail::stable_sem(v).value_or(0.0);
    const double sd = sem * std::sqrt(static_cast<double>(v.size()));
    const double cv = mean != 0.0 ? sd / std::abs(mean) : 0.0;
    return (*hi - *lo) < cfg.invariant_range && cv < cfg.invariant_cv;
}

// Per-subject parameter values across a cohort, one column per screened parameter.
struct CohortStats {
    std::map<std::string, std::vector<std::optional<double>>> columns;
};

inline std::string param_key(Family f, const std::string& p) { return std::string(family_name(f)) + "." + p; }

inline CohortStats cohort_stats(std::span<const SubjectProfile> profiles) {
    CohortStats s;
    for (const auto& [f, p] : screened_parameters()) {
        auto& col = s.columns[param_key(f, p)];
        for (const auto& prof : profiles) {
            const auto* r = prof.fit(f);
            col.push_back(r && r->converged ? std::optional<double>(r->param(p)) : std::nullopt);
        }
    }
    return s;
}

// z of value i against the rest of the column (leave-one-out mean and SD).
inline std::optional<double> leave_one_out_z(const std::vector<std::optional<double>>& col, std::size_t i) {
    if (!col.at(i)) return std::nullopt;
    std::vector<double> rest;
    for (std::size_t j = 0; j < col.size(); ++j)
        if (j != i && col[j]) rest.push_back(*col[j]);
    if (rest.size() < 2) return std::nullopt;
    const double m = detail::stable_mean(rest);
    const double sd = *detail::stable_sem(rest) * std::sqrt(static_cast<double>(rest.size()));
    if (!(sd > 0.0)) return std::nullopt;
    return (*col[i] - m) / sd;
}

inline ExclusionFlags screen_subject(const DataSeries& dv, std::size_t index, const CohortStats& stats,
                                     const ScreenConfig& cfg = {}) {
    ExclusionFlags flags;
    flags.invariant = is_invariant(dv, cfg);
    for (const auto& [key, col] : stats.columns) {
        if (index >= col.size()) continue;
        const auto z = leave_one_out_z(col, index);
        if (z && std::abs(*z) > cfg.threshold(key)) {
            flags.outlier = true;
            flags.outlier_params.push_back(key + " z=" + std::to_string(*z));
        }
    }
    return flags;
}

// --- classification ---------------------------------------------------------

struct MappingClassification {
    TimeMapping mapping;
    ModelComparison comparison;
};

inline MappingClassification classify_time_mapping(const DataSeries& magnitude, const FitConfig& cfg = {}) {
    std::vector<FitResult> fits;
    for (Family f : kMagnitudeOrder) fits.push_back(fit_model({f}, magnitude, cfg));
    auto mc = compare_models(std::move(fits), kMagnitudeOrder);
    const auto m = mc.winner().model.family == Family::Power ? TimeMapping::Power : TimeMapping::Linear;
    return {m, std::move(mc)};
}

struct DiscountClassification {
    DiscountClass discount_class;
    ModelComparison comparison;
    bool ph_beats_exponential = false;
    bool gh_beats_exponential = false;
};

inline DiscountClassification classify_discounting(const DataSeries& dv, const FitConfig& cfg = {}) {
    std::vector<FitResult> fits;
    for (Family f : kDiscountOrder) fits.push_back(fit_model({f}, dv, cfg));
    auto mc = compare_models(fits, kDiscountOrder);
    DiscountClassification out{DiscountClass::Exponential, mc};
    switch (mc.winner().model.family) {
    case Family::ProportionalHyperbolic: out.discount_class = DiscountClass::ProportionalHyperbolic; break;
    case Family::GeneralHyperbolic: out.discount_class = DiscountClass::GeneralHyperbolic; break;
    default: break;
    }
    out.ph_beats_exponential = fits[1].bic <= fits[0].bic - 2.0;
    out.gh_beats_exponential = fits[2].bic <= fits[0].bic - 2.0;
    return out;
}

// --- remapping --------------------------------------------------------------

inline RemapResult remap_and_refit(const DataSeries& dv, double c, const FitResult& objective, const FitConfig& cfg = {}) {
    if (!(c > 0.0) || !std::isfinite(c)) fail(errc::domain, "time exponent must be positive");
    require(objective.model.family == Family::GeneralHyperbolic, errc::invalid_config,
            "remap needs the calendar-time general hyperbolic fit");
    RemapResult r;
    r.c = c;
    r.objective = objective;
    r.subjective = fit_model({Family::SubjectiveGeneralHyperbolic, c}, dv, cfg);
    r.subjective_exponential = fit_model({Family::SubjectiveExponential, c}, dv, cfg);
    r.h_lowered = r.subjective.param("h") < r.objective.param("h");
    r.still_hyperbolic = r.subjective.bic <= r.subjective_exponential.bic - 2.0;
    return r;
}

// --- per-subject pipeline ---------------------------------------------------

// Fits and classifies one subject. Screening against the cohort happens in analyze_cohort.
inline SubjectProfile analyze_subject(const SubjectData& s, const AnalysisConfig& cfg = {}) {
    SubjectProfile p;
    p.id = s.id;
    if (is_invariant(s.dv, cfg.screen)) {
        // Nothing to classify; flat series may not even be fittable.
        p.flags.invariant = true;
        return p;
    }
    auto tm = classify_time_mapping(s.magnitude, cfg.fit);
    p.mapping = tm.mapping;
    p.magnitude = std::move(tm.comparison);
    auto dc = classify_discounting(s.dv, cfg.fit);
    p.discount_class = dc.discount_class;
    p.discounting = std::move(dc.comparison);
    p.ph_beats_exponential = dc.ph_beats_exponential;
    p.gh_beats_exponential = dc.gh_beats_exponential;

    const double beta = p.fit(Family::Power)->param("beta");
    p.c = (p.mapping == TimeMapping::Power || cfg.remap_linear_with_beta) ? beta : 1.0;
    if (p.gh_beats_exponential) p.remap = remap_and_refit(s.dv, p.c, *p.fit(Family::GeneralHyperbolic), cfg.fit);
    return p;
}

// --- cohort report ----------------------------------------------------------

struct ValueSe {
    double value = 0.0;
    std::optional<double> se;
};

// One column of the model-comparison table.
struct TableColumn {
    std::string label;
    ModelSpec model;
    std::size_t n = 0;
    std::optional<double> two_stage_r2;
    std::optional<double> two_stage_r2_sem;
    std::optional<double> aggregated_r2;
    std::map<std::string, ValueSe> params;  // aggregated estimates with SEs
    std::map<std::string, ValueSe> two_stage_params;
    std::optional<double> bic;  // aggregated
};

struct ClassificationCounts {
    std::size_t total = 0;
    std::size_t excluded = 0;
    std::size_t included = 0;
    std::size_t power = 0;
    std::size_t linear = 0;
    std::size_t exponential = 0;
    std::size_t proportional_hyperbolic = 0;
    std::size_t general_hyperbolic = 0;
    std::size_t hyperbolic = 0;  // proportional or general
    std::size_t ph_beats_exponential = 0;
    std::size_t gh_beats_exponential = 0;
    std::size_t remapped = 0;
    std::size_t h_lowered = 0;
    std::size_t still_hyperbolic = 0;
    std::size_t linear_among_remapped = 0;
};

struct DiPoint {
    double t = 0.0;
    double objective = 0.0;
    double subjective = 0.0;
};

struct CohortReport {
    ClassificationCounts counts;
    std::vector<std::string> included_ids;
    std::vector<std::string> excluded_ids;
    std::vector<SubjectProfile> profiles;  // input order

    TwoStageSummary magnitude_linear;
    TwoStageSummary magnitude_power;
    std::optional<double> power_subset_beta_mean;
    std::optional<double> power_subset_beta_sem;
    std::optional<FitResult> aggregated_linear;
    std::optional<FitResult> aggregated_power;

    std::vector<TableColumn> table;
    std::optional<double> subjective_c;  // exponent used for the aggregated subjective fit
    std::vector<DiPoint> decreasing_impatience;
    std::optional<PairedBayesFactor> bayes;
    std::optional<std::string> bayes_note;

    DataSeries magnitude_series;      // cohort mean line length with SEM
    DataSeries dv_series;             // cohort mean dv with SEM
    DataSeries remapped_dv_series;    // remapped subset only
};

namespace detail {

inline std::map<std::string, ValueSe> named_params(const FitResult& f) {
    std::map<std::string, ValueSe> m;
    const auto names = param_names(f.model.family);
    for (std::size_t i = 0; i < names.size(); ++i) {
        ValueSe v{f.params[i], std::nullopt};
        if (i < f.std_errors.size() && std::isfinite(f.std_errors[i])) v.se = f.std_errors[i];
        m[std::string(names[i])] = v;
    }
    return m;
}

inline TableColumn make_column(std::string label, const ModelSpec& model, std::span<const FitResult> per_subject,
                               const std::optional<FitResult>& aggregated) {
    TableColumn col;
    col.label = std::move(label);
    col.model = model;
    col.n = per_subject.size();
    const auto ts = two_stage(per_subject);
    if (ts.used > 0) {
        col.two_stage_r2 = ts.r2_mean;
        col.two_stage_r2_sem = ts.r2_sem;
        for (std::size_t j = 0; j < ts.names.size(); ++j) col.two_stage_params[ts.names[j]] = {ts.mean[j], ts.sem[j]};
    }
    if (aggregated) {
        col.aggregated_r2 = aggregated->r2;
        col.params = named_params(*aggregated);
        col.bic = aggregated->bic;
    }
    return col;
}

template <class F>
std::optional<FitResult> try_fit(F&& f) {
    try {
        return f();
    } catch (const error& e) {
        if (e.code() == errc::non_convergence || e.code() == errc::degenerate_data) return std::nullopt;
        throw;
    }
}

} // namespace detail

inline CohortReport build_cohort_report(std::vector<SubjectProfile> profiles, std::span<const SubjectData> subjects,
                                        const AnalysisConfig& cfg);

// Fits every subject, screens against the cohort, then summarises the included subjects.
inline CohortReport analyze_cohort(std::span<const SubjectData> subjects, const AnalysisConfig& cfg = {}) {
    require(!subjects.empty(), errc::degenerate_data, "cohort is empty");
    CohortReport rep;
    for (const auto& s : subjects) rep.profiles.push_back(analyze_subject(s, cfg));

    const auto stats = cohort_stats(rep.profiles);
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        auto& p = rep.profiles[i];
        if (p.flags.invariant) continue;
        p.flags = screen_subject(subjects[i].dv, i, stats, cfg.screen);
    }
    return build_cohort_report(std::move(rep.profiles), subjects, cfg);
}

// Summarises screened profiles; subjects[i] must be the data behind profiles[i].
inline CohortReport build_cohort_report(std::vector<SubjectProfile> profiles, std::span<const SubjectData> subjects,
                                        const AnalysisConfig& cfg) {
    require(profiles.size() == subjects.size(), errc::mismatched_data, "profiles and subjects differ in length");
    require(!profiles.empty(), errc::degenerate_data, "cohort is empty");
    CohortReport rep;
    rep.profiles = std::move(profiles);
    std::vector<const SubjectProfile*> inc;
    std::vector<const SubjectData*> inc_data;
    auto& k = rep.counts;
    k.total = subjects.size();
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const auto& p = rep.profiles[i];
        const bool drop = p.flags.invariant || (cfg.exclude_flagged && p.flags.any());
        if (drop) {
            ++k.excluded;
            rep.excluded_ids.push_back(p.id);
            continue;
        }
        inc.push_back(&p);
        inc_data.push_back(&subjects[i]);
        rep.included_ids.push_back(p.id);
    }
    k.included = inc.size();
    if (inc.empty()) fail(errc::degenerate_data, "every subject was excluded");

    std::vector<FitResult> lin, pow, ex, ph, gh, gh_sub, sgh_sub;
    std::vector<double> power_betas, h_obj, h_subj, cs;
    std::vector<DataSeries> mag_series, dv_series, remap_series;
    for (std::size_t i = 0; i < inc.size(); ++i) {
        const auto& p = *inc[i];
        (p.mapping == TimeMapping::Power ? k.power : k.linear) += 1;
        switch (*p.discount_class) {
        case DiscountClass::Exponential: ++k.exponential; break;
        case DiscountClass::ProportionalHyperbolic: ++k.proportional_hyperbolic; break;
        case DiscountClass::GeneralHyperbolic: ++k.general_hyperbolic; break;
        }
        k.ph_beats_exponential += p.ph_beats_exponential;
        k.gh_beats_exponential += p.gh_beats_exponential;
        lin.push_back(*p.fit(Family::Linear));
        pow.push_back(*p.fit(Family::Power));
        ex.push_back(*p.fit(Family::Exponential));
        ph.push_back(*p.fit(Family::ProportionalHyperbolic));
        gh.push_back(*p.fit(Family::GeneralHyperbolic));
        if (p.mapping == TimeMapping::Power) power_betas.push_back(p.fit(Family::Power)->param("beta"));
        mag_series.push_back(inc_data[i]->magnitude);
        dv_series.push_back(inc_data[i]->dv);
        if (p.remap) {
            ++k.remapped;
            k.h_lowered += p.remap->h_lowered;
            k.still_hyperbolic += p.remap->still_hyperbolic;
            k.linear_among_remapped += p.mapping == TimeMapping::Linear;
            gh_sub.push_back(p.remap->objective);
            sgh_sub.push_back(p.remap->subjective);
            h_obj.push_back(p.remap->objective.param("h"));
            h_subj.push_back(p.remap->subjective.param("h"));
            cs.push_back(p.remap->c);
            remap_series.push_back(inc_data[i]->dv);
        }
    }
    k.hyperbolic = k.proportional_hyperbolic + k.general_hyperbolic;

    rep.magnitude_linear = two_stage(lin);
    rep.magnitude_power = two_stage(pow);
    if (!power_betas.empty()) {
        rep.power_subset_beta_mean = detail::stable_mean(power_betas);
        rep.power_subset_beta_sem = detail::stable_sem(power_betas);
    }

    rep.magnitude_series = aggregate_series(std::span<const DataSeries>(mag_series));
    rep.dv_series = aggregate_series(std::span<const DataSeries>(dv_series));
    rep.aggregated_linear = detail::try_fit([&] { return fit_model({Family::Linear}, rep.magnitude_series, cfg.fit); });
    rep.aggregated_power = detail::try_fit([&] { return fit_model({Family::Power}, rep.magnitude_series, cfg.fit); });

    auto agg = [&](ModelSpec m, const DataSeries& d) {
        return detail::try_fit([&] { return fit_model(m, d, cfg.fit); });
    };
    rep.table.push_back(detail::make_column("exponential_objective", {Family::Exponential}, ex,
                                            agg({Family::Exponential}, rep.dv_series)));
    rep.table.push_back(detail::make_column("proportional_hyperbolic_objective", {Family::ProportionalHyperbolic}, ph,
                                            agg({Family::ProportionalHyperbolic}, rep.dv_series)));
    const auto agg_gh = agg({Family::GeneralHyperbolic}, rep.dv_series);
    rep.table.push_back(detail::make_column("general_hyperbolic_objective", {Family::GeneralHyperbolic}, gh, agg_gh));

    std::optional<FitResult> agg_gh_sub, agg_sgh_sub;
    if (!remap_series.empty()) {
        rep.remapped_dv_series = aggregate_series(std::span<const DataSeries>(remap_series));
        rep.subjective_c = detail::stable_mean(cs);
        agg_gh_sub = agg({Family::GeneralHyperbolic}, rep.remapped_dv_series);
        agg_sgh_sub = agg({Family::SubjectiveGeneralHyperbolic, *rep.subjective_c}, rep.remapped_dv_series);
    }
    rep.table.push_back(detail::make_column("general_hyperbolic_objective_remapped_subset", {Family::GeneralHyperbolic},
                                            gh_sub, agg_gh_sub));
    rep.table.push_back(detail::make_column("general_hyperbolic_subjective",
                                            {Family::SubjectiveGeneralHyperbolic, rep.subjective_c.value_or(1.0)},
                                            sgh_sub, agg_sgh_sub));

    if (agg_gh_sub && agg_sgh_sub) {
        const double h0 = agg_gh_sub->param("h"), h1 = agg_sgh_sub->param("h");
        for (int m = 0; m <= 36; ++m) {
            const double t = m;
            rep.decreasing_impatience.push_back(
                {t, decreasing_impatience(h0, t), decreasing_impatience(h1, std::pow(t, *rep.subjective_c))});
        }
    }

    if (h_obj.size() >= 2) {
        try {
            rep.bayes = paired_bayes_factor(h_obj, h_subj, cfg.bayes);
        } catch (const error& e) {
            if (e.code() != errc::degenerate_data) throw;
            rep.bayes_note = e.what();
        }
    } else {
        rep.bayes_note = "fewer than two remapped subjects";
    }
    return rep;
}

} // namespace impatience
