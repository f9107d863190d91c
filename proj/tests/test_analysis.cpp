#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "impatience/analysis.hpp"
#include "impatience/simulation.hpp"

using namespace impatience;

namespace {

DataSeries series_of(const std::function<double(double)>& f) {
    DataSeries s;
    for (double t : default_interval_grid()) s.points.push_back({t, f(t)});
    return s;
}

std::vector<SubjectData> simulated(const std::vector<AgentSpec>& agents) {
    std::vector<SubjectData> out;
    for (const auto& a : agents) out.push_back(simulate_subject(a).data);
    return out;
}

} // namespace

TEST(Screen, ConstantSeriesIsInvariant) {
    EXPECT_TRUE(is_invariant(series_of([](double) { return 0.70; })));
}

TEST(Screen, DiscountingSeriesIsNotInvariant) {
    EXPECT_FALSE(is_invariant(series_of([](double t) { return std::exp(-0.05 * t); })));
}

// Range below 0.15 with CV below 0.05 always flags.
TEST(Screen, InvarianceMonotonicity) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> level(0.5, 0.95), u(-1.0, 1.0);
    for (int rep = 0; rep < 500; ++rep) {
        const double m = level(rng);
        const double half_range = 0.02 * m;  // |dev| <= 0.02 m keeps CV < 0.05 and range < 0.15
        const auto s = series_of([&](double) { return m + half_range * u(rng); });
        EXPECT_TRUE(is_invariant(s));
    }
}

TEST(Screen, WideRangeWithLowCvIsNotInvariant) {
    // Range 0.2 but tiny CV cannot happen at these levels; check range alone blocks the flag.
    auto s = series_of([](double t) { return t < 20 ? 5.0 : 5.2; });
    EXPECT_FALSE(is_invariant(s));
}

TEST(Screen, LeaveOneOutOutlier) {
    CohortStats stats;
    auto& col = stats.columns["general_hyperbolic.h"];
    std::vector<double> base;
    for (int i = 0; i < 23; ++i) base.push_back(0.2 + 0.01 * (i % 7) - 0.03);
    for (double v : base) col.emplace_back(v);
    const double m = detail::stable_mean(base);
    const double sd = *detail::stable_sem(base) * std::sqrt(23.0);
    col.emplace_back(m + 5.6 * sd);
    const auto flags = screen_subject(series_of([](double t) { return std::exp(-0.05 * t); }), 23, stats);
    EXPECT_TRUE(flags.outlier);
    ASSERT_EQ(flags.outlier_params.size(), 1u);
    EXPECT_NE(flags.outlier_params[0].find("z=5.6"), std::string::npos);
    const auto typical = screen_subject(series_of([](double t) { return std::exp(-0.05 * t); }), 3, stats);
    EXPECT_FALSE(typical.any());
}

TEST(Screen, ConfigurableThreshold) {
    CohortStats stats;
    auto& col = stats.columns["exponential.delta"];
    for (int i = 0; i < 20; ++i) col.emplace_back(0.04 + 0.001 * (i % 5));
    col.emplace_back(0.06);
    const auto dv = series_of([](double t) { return std::exp(-0.05 * t); });
    ScreenConfig strict;
    strict.outlier_z_by_param["exponential.delta"] = 2.0;
    ScreenConfig lax;
    lax.outlier_z = 100.0;
    const auto z = *leave_one_out_z(col, 20);
    EXPECT_GT(z, 2.0);
    EXPECT_TRUE(screen_subject(dv, 20, stats, strict).outlier);
    EXPECT_FALSE(screen_subject(dv, 20, stats, lax).outlier);
}

TEST(Classify, NoiselessPowerIsPower) {
    const auto r = classify_time_mapping(series_of([](double t) { return 60.0 * std::pow(t, 0.6); }));
    EXPECT_EQ(r.mapping, TimeMapping::Power);
}

TEST(Classify, NoiselessLinearIsLinear) {
    const auto r = classify_time_mapping(series_of([](double t) { return 20.0 + 15.0 * t; }));
    EXPECT_EQ(r.mapping, TimeMapping::Linear);
}

TEST(Classify, NoiselessExponential) {
    EXPECT_EQ(classify_discounting(series_of([](double t) { return exponential(0.05, t); })).discount_class,
              DiscountClass::Exponential);
}

TEST(Classify, NoiselessGeneralHyperbolic) {
    EXPECT_EQ(classify_discounting(series_of([](double t) { return general_hyperbolic(0.3, 0.1, t); })).discount_class,
              DiscountClass::GeneralHyperbolic);
}

TEST(Classify, NoiselessProportionalHyperbolic) {
    const auto r = classify_discounting(series_of([](double t) { return proportional_hyperbolic(0.076, t); }));
    EXPECT_EQ(r.discount_class, DiscountClass::ProportionalHyperbolic);
    EXPECT_TRUE(r.ph_beats_exponential);
}

TEST(Remap, IdentityAtCEqualsOne) {
    const auto dv = series_of([](double t) { return general_hyperbolic(0.4, 0.15, t) * (1 + 0.02 * std::sin(t)); });
    const auto pre = fit_model({Family::GeneralHyperbolic}, dv);
    const auto r = remap_and_refit(dv, 1.0, pre);
    EXPECT_NEAR(r.subjective.param("h"), pre.param("h"), 1e-8);
    EXPECT_NEAR(r.subjective.param("r"), pre.param("r"), 1e-8);
    EXPECT_NEAR(r.subjective.bic, pre.bic, 1e-8);
}

TEST(Remap, ExponentialInSubjectiveTimeLowersH) {
    const auto dv = series_of([](double t) { return std::exp(-0.1 * std::pow(t, 0.7)); });
    const auto pre = fit_model({Family::GeneralHyperbolic}, dv);
    const auto r = remap_and_refit(dv, 0.7, pre);
    EXPECT_GT(pre.param("h"), 0.01);
    EXPECT_LT(r.subjective.param("h"), pre.param("h"));
    EXPECT_TRUE(r.h_lowered);
    EXPECT_FALSE(r.still_hyperbolic);
    EXPECT_NEAR(r.subjective_exponential.param("delta"), 0.1, 1e-4);
}

TEST(Remap, RejectsBadExponent) {
    const auto dv = series_of([](double t) { return general_hyperbolic(0.3, 0.1, t); });
    const auto pre = fit_model({Family::GeneralHyperbolic}, dv);
    EXPECT_THROW(remap_and_refit(dv, 0.0, pre), error);
    EXPECT_THROW(remap_and_refit(dv, 0.7, fit_model({Family::Exponential}, dv)), error);
}

TEST(Subject, LinearMappedSubjectsKeepCOne) {
    SubjectData s{"x", series_of([](double t) { return 10 + 15.0 * t; }),
                  series_of([](double t) { return general_hyperbolic(0.5, 0.2, t); })};
    const auto p = analyze_subject(s);
    EXPECT_EQ(*p.mapping, TimeMapping::Linear);
    EXPECT_EQ(p.c, 1.0);
    AnalysisConfig cfg;
    cfg.remap_linear_with_beta = true;
    const auto q = analyze_subject(s, cfg);
    EXPECT_EQ(q.c, q.fit(Family::Power)->param("beta"));
}

TEST(Subject, RemapOnlyForGeneralHyperbolicWinners) {
    SubjectData s{"x", series_of([](double t) { return 60.0 * std::pow(t, 0.6); }),
                  series_of([](double t) { return exponential(0.04, t); })};
    const auto p = analyze_subject(s);
    EXPECT_FALSE(p.gh_beats_exponential);
    EXPECT_FALSE(p.remap.has_value());
}

TEST(Subject, FlatChoicesAreExcludedNotFitted) {
    std::vector<SubjectData> subjects = simulated(default_cohort(6, 2));
    subjects[2].dv = series_of([](double) { return 0.7; });
    const auto rep = analyze_cohort(subjects);
    EXPECT_TRUE(rep.profiles[2].flags.invariant);
    EXPECT_FALSE(rep.profiles[2].discounting.has_value());
    EXPECT_NE(std::find(rep.excluded_ids.begin(), rep.excluded_ids.end(), subjects[2].id), rep.excluded_ids.end());
}

TEST(Report, SingleSubject) {
    const auto subjects = simulated(default_cohort(1, 5));
    const auto rep = analyze_cohort(subjects);
    EXPECT_EQ(rep.counts.included, 1u);
    EXPECT_EQ(rep.table[0].n, 1u);
    EXPECT_FALSE(rep.table[0].two_stage_r2_sem.has_value());
    EXPECT_FALSE(rep.magnitude_power.sem.empty() ? false : rep.magnitude_power.sem[0].has_value());
    for (const auto& s : rep.dv_series.sem) EXPECT_FALSE(s.has_value());
    EXPECT_FALSE(rep.bayes.has_value());
}

TEST(Report, EmptyCohort) {
    std::vector<SubjectData> none;
    EXPECT_THROW(analyze_cohort(none), error);
}

TEST(Report, CountsAreConsistent) {
    const auto subjects = simulated(default_cohort(24, 12));
    const auto rep = analyze_cohort(subjects);
    const auto& k = rep.counts;
    EXPECT_EQ(k.total, 24u);
    EXPECT_EQ(k.included + k.excluded, k.total);
    EXPECT_EQ(k.power + k.linear, k.included);
    EXPECT_EQ(k.exponential + k.proportional_hyperbolic + k.general_hyperbolic, k.included);
    EXPECT_EQ(rep.included_ids.size(), k.included);
    auto ids = rep.included_ids;
    ids.insert(ids.end(), rep.excluded_ids.begin(), rep.excluded_ids.end());
    std::sort(ids.begin(), ids.end());
    EXPECT_EQ(std::adjacent_find(ids.begin(), ids.end()), ids.end());
    EXPECT_EQ(ids.size(), 24u);
    EXPECT_LE(k.h_lowered, k.remapped);
    EXPECT_EQ(rep.table.size(), 5u);
    EXPECT_EQ(rep.table[3].n, k.remapped);
}

TEST(Report, TypicalSubjectsAreNotFlagged) {
    const auto subjects = simulated(default_cohort(24, 13));
    const auto rep = analyze_cohort(subjects);
    EXPECT_GE(rep.counts.included, 20u);
}

TEST(Report, DecreasingImpatienceCurves) {
    auto agents = subjective_exponential_cohort(12, 7, 0.7);
    for (auto& a : agents) a.choice_noise = Deterministic{};
    const auto rep = analyze_cohort(simulated(agents));
    ASSERT_FALSE(rep.decreasing_impatience.empty());
    const double h0 = rep.table[3].params.at("h").value;
    const double h1 = rep.table[4].params.at("h").value;
    for (const auto& p : rep.decreasing_impatience) {
        EXPECT_DOUBLE_EQ(p.objective, h0 / (1 + h0 * p.t));
        EXPECT_DOUBLE_EQ(p.subjective, h1 / (1 + h1 * std::pow(p.t, *rep.subjective_c)));
    }
}

TEST(Report, SubjectiveCohortDirection) {
    auto agents = subjective_exponential_cohort(24, 500, 0.7);
    for (auto& a : agents) a.choice_noise = Deterministic{};
    const auto rep = analyze_cohort(simulated(agents));
    const auto& obj = rep.table[3];
    const auto& subj = rep.table[4];
    EXPECT_LT(subj.params.at("h").value, obj.params.at("h").value);
    EXPECT_GT(subj.params.at("r").value, obj.params.at("r").value);
    ASSERT_TRUE(rep.bayes.has_value());
    EXPECT_GT(rep.bayes->bf_obj_geq, 1.0);
    EXPECT_NEAR(rep.bayes->bf_obj_geq * rep.bayes->bf_obj_less, 1.0, 1e-6);
}

// Relabeling and reordering subjects leaves every classification and summary unchanged.
TEST(Report, PermutationInvariance) {
    auto subjects = simulated(default_cohort(24, 31));
    const auto a = analyze_cohort(subjects);
    std::mt19937_64 rng(1);
    std::vector<std::size_t> perm(subjects.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<SubjectData> shuffled;
    for (std::size_t i : perm) {
        auto s = subjects[i];
        s.id = "relabeled-" + std::to_string(i);
        shuffled.push_back(s);
    }
    const auto b = analyze_cohort(shuffled);
    for (std::size_t j = 0; j < perm.size(); ++j) {
        const auto& pa = a.profiles[perm[j]];
        const auto& pb = b.profiles[j];
        EXPECT_EQ(pa.mapping, pb.mapping);
        EXPECT_EQ(pa.discount_class, pb.discount_class);
        EXPECT_EQ(pa.flags.any(), pb.flags.any());
    }
    EXPECT_EQ(a.counts.power, b.counts.power);
    EXPECT_EQ(a.counts.hyperbolic, b.counts.hyperbolic);
    EXPECT_EQ(a.counts.excluded, b.counts.excluded);
    EXPECT_EQ(a.counts.remapped, b.counts.remapped);
    for (std::size_t c = 0; c < a.table.size(); ++c) {
        EXPECT_EQ(a.table[c].two_stage_r2, b.table[c].two_stage_r2);
        EXPECT_EQ(a.table[c].aggregated_r2, b.table[c].aggregated_r2);
        EXPECT_EQ(a.table[c].bic, b.table[c].bic);
        for (const auto& [name, v] : a.table[c].params) EXPECT_EQ(v.value, b.table[c].params.at(name).value);
    }
    EXPECT_EQ(a.dv_series.values(), b.dv_series.values());
    ASSERT_EQ(a.bayes.has_value(), b.bayes.has_value());
    if (a.bayes) EXPECT_EQ(a.bayes->bf_obj_less, b.bayes->bf_obj_less);
}

// Mean counts over 100 default cohorts within 3 of 16 power-mapped and 15 hyperbolic.
TEST(Report, DefaultCohortCountsMonteCarlo) {
    double power = 0, hyper = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto rep = analyze_cohort(simulated(default_cohort(24, 9000 + seed)));
        power += static_cast<double>(rep.counts.power);
        hyper += static_cast<double>(rep.counts.hyperbolic);
    }
    EXPECT_NEAR(power / 100, 16.0, 3.0);
    EXPECT_NEAR(hyper / 100, 15.0, 3.0);
}
