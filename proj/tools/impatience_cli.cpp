// impatience: simulate, fit, analyze, serve, report.
// Exit codes: 0 success, 2 input or usage error, 3 non-convergence.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "impatience/pipeline_io.hpp"
#include "impatience/service.hpp"

using namespace impatience;
namespace fs = std::filesystem;

namespace {

constexpr int kInputError = 2;
constexpr int kNonConvergence = 3;

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) fail(errc::invalid_config, "cannot read " + p.string());
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) fail(errc::invalid_config, p.string() + " is not valid JSON");
    return j;
}

void warn_all(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

LoadedCohort load_nonempty(const fs::path& dir) {
    auto cohort = load_session_dir(dir);
    warn_all(cohort.warnings);
    if (cohort.subjects.empty())
        fail(errc::invalid_config, fmt::format("no subject in {} has both a complete magnitude and choice session ({} session files)",
                                               dir.string(), cohort.files));
    return cohort;
}

int cmd_simulate(const std::string& agents_path, std::uint64_t seed, std::size_t n, const fs::path& out) {
    const json spec = agents_path.empty() ? json{{"cohort", "default"}, {"n", n}} : read_json_file(agents_path);
    const auto agents = agents_from_json(spec, seed);
    const auto files = write_simulated_sessions(agents, out);
    std::cout << fmt::format("wrote {} session files for {} agents to {}\n", files, agents.size(), out.string());
    return 0;
}

int cmd_fit(const fs::path& in, const std::string& model, double c, const FitConfig& fcfg, const fs::path& out) {
    ModelSpec spec{family_from_name(model), c};
    const bool magnitude = spec.family == Family::Linear || spec.family == Family::Power;
    const bool subjective = spec.family == Family::SubjectiveGeneralHyperbolic || spec.family == Family::SubjectiveExponential;
    if (!subjective) spec.time_exponent = 1.0;
    const auto cohort = load_nonempty(in);
    json fits = json::array();
    std::size_t failed = 0, unconverged = 0;
    for (const auto& s : cohort.subjects) {
        json row = {{"id", s.id}};
        try {
            row["fit"] = to_json(fit_model(spec, magnitude ? s.magnitude : s.dv, fcfg));
        } catch (const error& e) {
            if (e.code() != errc::non_convergence && e.code() != errc::degenerate_data) throw;
            row["fit"] = nullptr;
            row["error"] = std::string(to_string(e.code()));
            std::cerr << fmt::format("{}: {}\n", s.id, e.what());
            ++failed;
            unconverged += e.code() == errc::non_convergence;
        }
        fits.push_back(row);
    }
    const json doc = {{"model", model}, {"time_exponent", spec.time_exponent}, {"series", magnitude ? "magnitude" : "dv"}, {"subjects", fits}};
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_text(out, doc.dump(2) + "\n");
    std::cout << fmt::format("fitted {} to {} subjects, {} failed; wrote {}\n", model, cohort.subjects.size(), failed, out.string());
    if (unconverged) return kNonConvergence;
    return failed ? kInputError : 0;
}

int cmd_analyze(const fs::path& in, const fs::path& out, const AnalysisConfig& cfg) {
    const auto cohort = load_nonempty(in);
    const auto report = to_json(analyze_cohort(cohort.subjects, cfg));
    write_report_dir(report, out);
    std::cout << render_table_text(report);
    std::cout << fmt::format("\nwrote report to {}\n", out.string());
    return 0;
}

httplib::Server* g_server = nullptr;

int cmd_serve(int port, const std::string& host, const std::string& data) {
    SessionService svc(resolve_data_dir(data));
    warn_all(svc.load_errors());
    httplib::Server server;
    svc.mount(server);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) fail(errc::invalid_config, fmt::format("cannot bind {}:{}", host, port));
    std::cout << fmt::format("serving {} sessions from {} on http://{}:{}\n", svc.session_count(), svc.data_dir().string(), host, bound)
              << std::flush;
    server.listen_after_bind();
    return 0;
}

int cmd_report(const fs::path& in, const std::string& format) {
    const auto report = read_report_dir(in);
    std::cout << (format == "csv" ? render_table_csv(report) : render_table_text(report));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Delay discounting and subjective time toolkit"};
    app.require_subcommand(1);

    std::string agents, in, out, model, data, host = "127.0.0.1", format = "text";
    std::uint64_t seed = 1;
    std::size_t n = 24;
    double c = 1.0;
    int port = 8080;
    int max_iterations = lm::Options{}.max_iterations;
    bool keep_flagged = false, remap_linear = false;

    auto* sim = app.add_subcommand("simulate", "Simulate agents and write session files");
    sim->add_option("--agents", agents, "Agent spec JSON (default: the mixed default cohort)")->check(CLI::ExistingFile);
    sim->add_option("--seed", seed, "Cohort seed");
    sim->add_option("-n,--n", n, "Cohort size when --agents is omitted")->check(CLI::Range(1, 100000));
    sim->add_option("--out", out, "Output directory")->required();

    auto* fit = app.add_subcommand("fit", "Fit one model family to every subject");
    fit->add_option("--in", in, "Directory of session files")->required();
    fit->add_option("--model", model, "Model family name")->required();
    fit->add_option("--c", c, "Time exponent for subjective families")->check(CLI::PositiveNumber);
    fit->add_option("--out", out, "Output JSON file")->required();
    fit->add_option("--max-iterations", max_iterations, "Optimizer iteration limit per start")->check(CLI::PositiveNumber);

    auto* analyze = app.add_subcommand("analyze", "Run the full analysis and write a report directory");
    analyze->add_option("--in", in, "Directory of session files")->required();
    analyze->add_option("--out", out, "Report directory")->required();
    analyze->add_option("--max-iterations", max_iterations, "Optimizer iteration limit per start")->check(CLI::PositiveNumber);
    analyze->add_flag("--keep-flagged", keep_flagged, "Keep outlier-flagged subjects in cohort statistics");
    analyze->add_flag("--remap-linear-with-beta", remap_linear, "Remap linear-mapped subjects with their power beta");

    auto* serve = app.add_subcommand("serve", "Serve the session API");
    serve->add_option("--port", port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--data", data, "Data directory (default: $IMPATIENCE_DATA_DIR)");

    auto* report = app.add_subcommand("report", "Render a written report");
    report->add_option("--in", in, "Report directory")->required();
    report->add_option("--format", format, "text or csv")->check(CLI::IsMember({"text", "csv"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kInputError;
    }

    try {
        if (*sim) return cmd_simulate(agents, seed, n, out);
        FitConfig fcfg;
        fcfg.optimizer.max_iterations = max_iterations;
        if (*fit) return cmd_fit(in, model, c, fcfg, out);
        if (*analyze) {
            AnalysisConfig cfg;
            cfg.fit = fcfg;
            cfg.exclude_flagged = !keep_flagged;
            cfg.remap_linear_with_beta = remap_linear;
            return cmd_analyze(in, out, cfg);
        }
        if (*serve) return cmd_serve(port, host, data);
        if (*report) return cmd_report(in, format);
    } catch (const error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == errc::non_convergence ? kNonConvergence : kInputError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInputError;
    }
    return kInputError;
}
