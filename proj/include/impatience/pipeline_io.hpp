#pragma once

// Glue between files and the analysis pipeline: agent specs, session directories,
// report JSON, and the text/CSV renderings the CLI writes.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "impatience/analysis.hpp"
#include "impatience/session_io.hpp"
#include "impatience/simulation.hpp"

namespace impatience {

// --- agent specs ------------------------------------------------------------------

namespace detail {

inline double num(const json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_number()) fail(errc::invalid_config, fmt::format("missing number '{}'", key));
    return j[key].get<double>();
}

inline DiscountParams discount_from_json(const json& j) {
    const auto fam = j.value("family", std::string());
    if (fam == "exponential") return Exponential{num(j, "delta")};
    if (fam == "quasi_hyperbolic") return QuasiHyperbolic{num(j, "y"), num(j, "delta")};
    if (fam == "proportional_hyperbolic") return ProportionalHyperbolic{num(j, "delta")};
    if (fam == "general_hyperbolic") return GeneralHyperbolic{num(j, "h"), num(j, "r")};
    if (fam == "subjective_general_hyperbolic") return SubjectiveGeneralHyperbolic{num(j, "h"), num(j, "r"), num(j, "c")};
    fail(errc::invalid_config, "unknown discount family '" + fam + "'");
}

inline PsychParams psych_from_json(const json& j) {
    const auto fam = j.value("family", std::string());
    if (fam == "linear") return Linear{j.value("c", 0.0), num(j, "a")};
    if (fam == "power") return Power{j.value("c", 0.0), num(j, "a"), num(j, "beta")};
    fail(errc::invalid_config, "unknown magnitude family '" + fam + "'");
}

} // namespace detail

// Either {"cohort": "default" | "subjective_exponential", "n": 24, "c": 0.7}
// or {"agents": [{"id", "discount": {...}, "magnitude": {...}, "noise": ..., ...}]}.
inline std::vector<AgentSpec> agents_from_json(const json& j, std::uint64_t seed) {
    if (!j.is_object()) fail(errc::invalid_config, "agent spec must be a JSON object");
    if (j.contains("cohort")) {
        const auto kind = j["cohort"].get<std::string>();
        const auto n = j.value("n", std::size_t{24});
        CohortConfig cfg;
        cfg.response_sigma_px = j.value("response_sigma_px", cfg.response_sigma_px);
        cfg.timeout_rate = j.value("timeout_rate", cfg.timeout_rate);
        if (kind == "default") return default_cohort(n, seed, cfg);
        if (kind == "subjective_exponential") {
            auto agents = subjective_exponential_cohort(n, seed, j.value("c", 0.7), cfg);
            if (j.value("deterministic", false))
                for (auto& a : agents) a.choice_noise = Deterministic{};
            return agents;
        }
        fail(errc::invalid_config, "unknown cohort '" + kind + "'");
    }
    if (!j.contains("agents") || !j["agents"].is_array()) fail(errc::invalid_config, "agent spec needs 'cohort' or 'agents'");
    std::vector<AgentSpec> out;
    std::size_t i = 0;
    for (const auto& a : j["agents"]) {
        AgentSpec s;
        s.id = a.value("id", fmt::format("agent{}", i + 1));
        s.discount = detail::discount_from_json(a.at("discount"));
        if (a.contains("magnitude")) s.magnitude = detail::psych_from_json(a["magnitude"]);
        if (a.contains("noise") && a["noise"].is_object())
            s.choice_noise = Logistic{a["noise"].value("temperature", 10.0), a["noise"].value("perseveration", 0.0)};
        s.time_map_c = a.value("time_map_c", 1.0);
        s.response_sigma_px = a.value("response_sigma_px", 0.0);
        s.timeout_rate = a.value("timeout_rate", 0.0);
        s.seed = a.value("seed", seed * 1000003ULL + i + 1);
        s.validate();
        out.push_back(std::move(s));
        ++i;
    }
    if (out.empty()) fail(errc::invalid_config, "agent list is empty");
    return out;
}

// Writes <id>-magnitude.jsonl and <id>-choice.jsonl per agent, the same names the
// service uses. Task order alternates by agent index.
inline std::size_t write_simulated_sessions(std::span<const AgentSpec> agents, const std::filesystem::path& dir,
                                            const StaircaseConfig& scfg = {}, const MagnitudeConfig& mcfg = {}) {
    std::filesystem::create_directories(dir);
    std::size_t written = 0;
    for (std::size_t i = 0; i < agents.size(); ++i) {
        const auto& a = agents[i];
        if (!valid_subject_id(a.id)) fail(errc::invalid_config, "agent id '" + a.id + "' is not a valid file name");
        SessionHeader h;
        h.subject = a.id;
        h.order = i % 2 == 0 ? TaskOrder::MagnitudeFirst : TaskOrder::ChoiceFirst;
        const auto mag = SessionRecord::from_magnitude(h, simulate_magnitude(a, mcfg).session);
        save_session(dir / (a.id + "-magnitude.jsonl"), mag);
        const auto choice = SessionRecord::from_choice(h, simulate_choice_session(a, scfg));
        save_session(dir / (a.id + "-choice.jsonl"), choice);
        written += 2;
    }
    return written;
}

// --- session directories -------------------------------------------------------------

struct LoadedCohort {
    std::vector<SubjectData> subjects;  // ordered by subject id
    std::vector<std::string> warnings;
    std::size_t files = 0;
};

// Pairs each subject's complete magnitude and choice sessions. Incomplete or
// unpaired subjects are skipped with a warning; unreadable files are errors.
inline LoadedCohort load_session_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) fail(errc::invalid_config, dir.string() + " is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    LoadedCohort out;
    out.files = files.size();
    std::map<std::string, std::optional<DataSeries>> mag, dv;
    for (const auto& p : files) {
        SessionRecord rec = [&] {
            try {
                return load_session(p);
            } catch (const error& e) {
                fail(e.code(), p.filename().string() + ": " + e.what());
            }
        }();
        const auto& subject = rec.header().subject;
        if (!rec.finished() || rec.status() != "complete") {
            out.warnings.push_back(fmt::format("{}: session is {}, skipped", p.filename().string(), rec.status()));
            continue;
        }
        try {
            if (rec.task() == TaskKind::Choice) dv[subject] = session_dv_series(rec.choice());
            else mag[subject] = magnitude_series(rec.magnitude());
        } catch (const error& e) {
            out.warnings.push_back(fmt::format("{}: {}", p.filename().string(), e.what()));
        }
    }
    std::vector<std::string> ids;
    for (const auto& [id, _] : mag) ids.push_back(id);
    for (const auto& [id, _] : dv)
        if (!mag.count(id)) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) {
        if (!mag.count(id) || !dv.count(id)) {
            out.warnings.push_back(fmt::format("subject {} lacks a complete {} session, skipped", id,
                                               mag.count(id) ? "choice" : "magnitude"));
            continue;
        }
        out.subjects.push_back({id, *mag[id], *dv[id]});
    }
    return out;
}

// --- JSON ----------------------------------------------------------------------------------

inline json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const FitResult& f) {
    json params = json::object(), se = json::object();
    const auto names = param_names(f.model.family);
    for (std::size_t i = 0; i < names.size(); ++i) {
        params[std::string(names[i])] = f.params[i];
        se[std::string(names[i])] = i < f.std_errors.size() && std::isfinite(f.std_errors[i]) ? json(f.std_errors[i]) : json(nullptr);
    }
    return {{"model", family_name(f.model.family)},
            {"time_exponent", f.model.time_exponent},
            {"params", params},
            {"std_errors", se},
            {"rss", f.rss},
            {"bic", f.bic},
            {"r2", f.r2},
            {"n", f.n},
            {"k", f.k},
            {"converged", f.converged}};
}

inline json to_json(const ModelComparison& mc) {
    json c = json::array();
    for (const auto& f : mc.candidates) c.push_back(to_json(f));
    return {{"selected", family_name(mc.winner().model.family)}, {"delta_bic", mc.delta_bic}, {"candidates", c}};
}

inline json to_json(const SubjectProfile& p, bool included) {
    json j = {{"id", p.id}, {"included", included}, {"c", p.c},
              {"ph_beats_exponential", p.ph_beats_exponential}, {"gh_beats_exponential", p.gh_beats_exponential}};
    j["mapping"] = p.mapping ? json(to_string(*p.mapping)) : json(nullptr);
    j["discount_class"] = p.discount_class ? json(to_string(*p.discount_class)) : json(nullptr);
    j["magnitude"] = p.magnitude ? to_json(*p.magnitude) : json(nullptr);
    j["discounting"] = p.discounting ? to_json(*p.discounting) : json(nullptr);
    if (p.remap) {
        j["remap"] = {{"c", p.remap->c},
                      {"objective", to_json(p.remap->objective)},
                      {"subjective", to_json(p.remap->subjective)},
                      {"subjective_exponential", to_json(p.remap->subjective_exponential)},
                      {"h_lowered", p.remap->h_lowered},
                      {"still_hyperbolic", p.remap->still_hyperbolic}};
    } else {
        j["remap"] = nullptr;
    }
    j["flags"] = {{"invariant", p.flags.invariant}, {"outlier", p.flags.outlier}, {"outlier_params", p.flags.outlier_params}};
    return j;
}

inline json to_json(const DataSeries& s) {
    json out = json::array();
    for (std::size_t i = 0; i < s.points.size(); ++i)
        out.push_back({{"t", s.points[i].t}, {"y", s.points[i].y}, {"sem", i < s.sem.size() ? opt(s.sem[i]) : json(nullptr)}});
    return out;
}

inline json to_json(const TableColumn& c) {
    auto params = [](const std::map<std::string, ValueSe>& m) {
        json j = json::object();
        for (const auto& [k, v] : m) j[k] = {{"value", v.value}, {"se", opt(v.se)}};
        return j;
    };
    return {{"label", c.label},
            {"model", family_name(c.model.family)},
            {"time_exponent", c.model.time_exponent},
            {"n", c.n},
            {"two_stage_r2", opt(c.two_stage_r2)},
            {"two_stage_r2_sem", opt(c.two_stage_r2_sem)},
            {"aggregated_r2", opt(c.aggregated_r2)},
            {"params", params(c.params)},
            {"two_stage_params", params(c.two_stage_params)},
            {"bic", opt(c.bic)}};
}

inline json to_json(const TwoStageSummary& s) {
    json m = json::object();
    for (std::size_t i = 0; i < s.names.size(); ++i) m[s.names[i]] = {{"mean", s.mean[i]}, {"sem", opt(s.sem[i])}};
    return {{"params", m},
            {"r2_mean", std::isfinite(s.r2_mean) ? json(s.r2_mean) : json(nullptr)},
            {"r2_sem", opt(s.r2_sem)},
            {"used", s.used},
            {"excluded", s.excluded}};
}

inline json to_json(const CohortReport& r) {
    const auto& c = r.counts;
    json j;
    j["counts"] = {{"total", c.total},
                   {"excluded", c.excluded},
                   {"included", c.included},
                   {"power", c.power},
                   {"linear", c.linear},
                   {"exponential", c.exponential},
                   {"proportional_hyperbolic", c.proportional_hyperbolic},
                   {"general_hyperbolic", c.general_hyperbolic},
                   {"hyperbolic", c.hyperbolic},
                   {"ph_beats_exponential", c.ph_beats_exponential},
                   {"gh_beats_exponential", c.gh_beats_exponential},
                   {"remapped", c.remapped},
                   {"h_lowered", c.h_lowered},
                   {"still_hyperbolic", c.still_hyperbolic},
                   {"linear_among_remapped", c.linear_among_remapped}};
    j["included_ids"] = r.included_ids;
    j["excluded_ids"] = r.excluded_ids;
    j["magnitude"] = {{"linear", to_json(r.magnitude_linear)},
                      {"power", to_json(r.magnitude_power)},
                      {"power_subset_beta_mean", opt(r.power_subset_beta_mean)},
                      {"power_subset_beta_sem", opt(r.power_subset_beta_sem)},
                      {"aggregated_linear", r.aggregated_linear ? to_json(*r.aggregated_linear) : json(nullptr)},
                      {"aggregated_power", r.aggregated_power ? to_json(*r.aggregated_power) : json(nullptr)}};
    j["table"] = json::array();
    for (const auto& col : r.table) j["table"].push_back(to_json(col));
    j["subjective_c"] = opt(r.subjective_c);
    j["decreasing_impatience"] = json::array();
    for (const auto& p : r.decreasing_impatience)
        j["decreasing_impatience"].push_back({{"t", p.t}, {"objective", p.objective}, {"subjective", p.subjective}});
    if (r.bayes) {
        j["bayes"] = {{"n", r.bayes->n},
                      {"t", r.bayes->t},
                      {"bf_plus", r.bayes->bf_plus},
                      {"bf_minus", r.bayes->bf_minus},
                      {"bf_obj_less", r.bayes->bf_obj_less},
                      {"bf_obj_geq", r.bayes->bf_obj_geq}};
    } else {
        j["bayes"] = nullptr;
    }
    j["bayes_note"] = r.bayes_note ? json(*r.bayes_note) : json(nullptr);
    j["series"] = {{"magnitude", to_json(r.magnitude_series)},
                   {"dv", to_json(r.dv_series)},
                   {"remapped_dv", to_json(r.remapped_dv_series)}};
    j["subjects"] = json::array();
    const std::set<std::string> included(r.included_ids.begin(), r.included_ids.end());
    for (const auto& p : r.profiles) j["subjects"].push_back(to_json(p, included.count(p.id) > 0));
    return j;
}

// --- renderings (from report JSON, so `report` can re-render without refitting) -------------

namespace detail {

inline std::string fmt_num(const json& v, int digits = 3) {
    if (v.is_null()) return "-";
    return fmt::format("{:.{}f}", v.get<double>(), digits);
}

inline std::string fmt_vse(const json& v, int digits = 3) {
    if (v.is_null()) return "-";
    if (v["se"].is_null()) return fmt_num(v["value"], digits);
    return fmt::format("{} ({})", fmt_num(v["value"], digits), fmt_num(v["se"], digits));
}

} // namespace detail

inline std::string render_table_text(const json& report) {
    std::string out;
    const auto& c = report.at("counts");
    out += fmt::format("Subjects: {} total, {} included, {} excluded\n", c["total"].get<std::size_t>(),
                       c["included"].get<std::size_t>(), c["excluded"].get<std::size_t>());
    out += fmt::format("Time mapping: {} power, {} linear\n", c["power"].get<std::size_t>(), c["linear"].get<std::size_t>());
    out += fmt::format("Discounting: {} exponential, {} proportional hyperbolic, {} general hyperbolic ({} hyperbolic)\n",
                       c["exponential"].get<std::size_t>(), c["proportional_hyperbolic"].get<std::size_t>(),
                       c["general_hyperbolic"].get<std::size_t>(), c["hyperbolic"].get<std::size_t>());
    out += fmt::format("GH beats exponential (dBIC >= 2): {}; remapped: {}; h lowered: {}; still hyperbolic: {}\n",
                       c["gh_beats_exponential"].get<std::size_t>(), c["remapped"].get<std::size_t>(),
                       c["h_lowered"].get<std::size_t>(), c["still_hyperbolic"].get<std::size_t>());
    const auto& mag = report.at("magnitude");
    out += fmt::format("Power-subset beta: {} (SEM {})\n\n", detail::fmt_num(mag["power_subset_beta_mean"]),
                       detail::fmt_num(mag["power_subset_beta_sem"]));

    out += fmt::format("{:<46} {:>3} {:>16} {:>8} {:>9}  {}\n", "Model", "N", "2-stage R2", "agg R2", "agg BIC",
                       "aggregated parameters (SE)");
    for (const auto& col : report.at("table")) {
        std::string params;
        for (const auto& [k, v] : col["params"].items()) params += fmt::format("{}={}  ", k, detail::fmt_vse(v));
        std::string r2 = detail::fmt_num(col["two_stage_r2"]);
        if (!col["two_stage_r2_sem"].is_null()) r2 += " (" + detail::fmt_num(col["two_stage_r2_sem"]) + ")";
        out += fmt::format("{:<46} {:>3} {:>16} {:>8} {:>9}  {}\n", col["label"].get<std::string>(), col["n"].get<std::size_t>(),
                           r2, detail::fmt_num(col["aggregated_r2"]), detail::fmt_num(col["bic"], 2), params);
    }
    if (!report.at("subjective_c").is_null())
        out += fmt::format("\nSubjective-time exponent for the aggregated remap: c = {}\n", detail::fmt_num(report["subjective_c"]));
    const auto& bf = report.at("bayes");
    if (!bf.is_null())
        out += fmt::format("Bayes factor, paired h: BF(h_obj < h_subj) = {}, BF(h_obj >= h_subj) = {} (n = {}, t = {})\n",
                           detail::fmt_num(bf["bf_obj_less"]), detail::fmt_num(bf["bf_obj_geq"]), bf["n"].get<std::size_t>(),
                           detail::fmt_num(bf["t"]));
    else if (!report.at("bayes_note").is_null())
        out += "Bayes factor: " + report["bayes_note"].get<std::string>() + "\n";
    return out;
}

inline std::string render_table_csv(const json& report) {
    std::string out = "label,model,n,two_stage_r2,two_stage_r2_sem,aggregated_r2,bic,param,value,se\n";
    auto cell = [](const json& v) { return v.is_null() ? std::string() : fmt::format("{}", v.get<double>()); };
    for (const auto& col : report.at("table")) {
        const auto prefix = fmt::format("{},{},{},{},{},{},{}", col["label"].get<std::string>(), col["model"].get<std::string>(),
                                        col["n"].get<std::size_t>(), cell(col["two_stage_r2"]), cell(col["two_stage_r2_sem"]),
                                        cell(col["aggregated_r2"]), cell(col["bic"]));
        if (col["params"].empty()) out += prefix + ",,,\n";
        for (const auto& [k, v] : col["params"].items()) out += fmt::format("{},{},{},{}\n", prefix, k, cell(v["value"]), cell(v["se"]));
    }
    return out;
}

inline std::string series_csv(const json& series, const std::string& value_name) {
    std::string out = fmt::format("interval_months,{},sem\n", value_name);
    for (const auto& p : series)
        out += fmt::format("{},{},{}\n", p["t"].get<double>(), p["y"].get<double>(),
                           p["sem"].is_null() ? std::string() : fmt::format("{}", p["sem"].get<double>()));
    return out;
}

inline std::string di_csv(const json& report) {
    std::string out = "t_months,objective,subjective\n";
    for (const auto& p : report.at("decreasing_impatience"))
        out += fmt::format("{},{},{}\n", p["t"].get<double>(), p["objective"].get<double>(), p["subjective"].get<double>());
    return out;
}

inline std::string subjects_csv(const json& report) {
    std::string out = "subject,included,mapping,discount_class,gh_beats_exponential,c,h_objective,h_subjective,flags\n";
    for (const auto& s : report.at("subjects")) {
        std::string flags;
        if (s["flags"]["invariant"].get<bool>()) flags += "invariant";
        for (const auto& f : s["flags"]["outlier_params"]) flags += (flags.empty() ? "" : ";") + f.get<std::string>();
        std::string h_obj, h_sub;
        if (!s["remap"].is_null()) {
            h_obj = fmt::format("{}", s["remap"]["objective"]["params"]["h"].get<double>());
            h_sub = fmt::format("{}", s["remap"]["subjective"]["params"]["h"].get<double>());
        }
        out += fmt::format("{},{},{},{},{},{},{},{},{}\n", s["id"].get<std::string>(), s["included"].get<bool>() ? 1 : 0,
                           s["mapping"].is_null() ? "" : s["mapping"].get<std::string>(),
                           s["discount_class"].is_null() ? "" : s["discount_class"].get<std::string>(),
                           s["gh_beats_exponential"].get<bool>() ? 1 : 0, s["c"].get<double>(), h_obj, h_sub, flags);
    }
    return out;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) fail(errc::invalid_config, "cannot write " + p.string());
    out << text;
}

// Writes report.json, table.txt, table.csv, subjects.csv and the figure CSVs.
inline void write_report_dir(const json& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text(dir / "report.json", report.dump(2) + "\n");
    write_text(dir / "table.txt", render_table_text(report));
    write_text(dir / "table.csv", render_table_csv(report));
    write_text(dir / "subjects.csv", subjects_csv(report));
    write_text(dir / "figure_magnitude.csv", series_csv(report["series"]["magnitude"], "mean_px"));
    write_text(dir / "figure_dv.csv", series_csv(report["series"]["dv"], "dv"));
    write_text(dir / "figure_dv_remapped.csv", series_csv(report["series"]["remapped_dv"], "dv"));
    write_text(dir / "figure_decreasing_impatience.csv", di_csv(report));
}

inline json read_report_dir(const std::filesystem::path& dir) {
    std::ifstream in(dir / "report.json");
    if (!in) fail(errc::invalid_config, "no report.json in " + dir.string());
    const auto j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("table") || !j.contains("counts"))
        fail(errc::schema_mismatch, (dir / "report.json").string() + " is not a report");
    return j;
}

} // namespace impatience
