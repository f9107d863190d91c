#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>
#include <sys/wait.h>

#include "impatience/pipeline_io.hpp"
#include "impatience/service.hpp"

using namespace impatience;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(IMPATIENCE_CLI) + " " + args + " 2>&1";
    FILE* p = ::popen(cmd.c_str(), "r");
    std::string out;
    std::array<char, 4096> buf{};
    while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
    const int status = ::pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / fmt::format("impatience_cli_{}_{}", ::getpid(), counter++);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& s) const { return (path / s).string(); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("simulate --out x --no-such-flag").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("report --in /nonexistent --format pdf").code, 2);
    EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, AnalyzeOnEmptyDirExitsTwoWithMessage) {
    TempDir dir;
    fs::create_directories(dir.path / "empty");
    const auto r = run("analyze --in " + dir / "empty" + " --out " + dir / "rep");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("no subject"), std::string::npos) << r.out;
    EXPECT_EQ(run("analyze --in " + dir / "missing" + " --out " + dir / "rep").code, 2);
}

TEST(Cli, SimulateThenAnalyzeWritesTableShapedReport) {
    TempDir dir;
    ASSERT_EQ(run("simulate --seed 3 --out " + dir / "sess").code, 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir.path / "sess")) files += e.path().extension() == ".jsonl";
    EXPECT_EQ(files, 48u);

    const auto r = run("analyze --in " + dir / "sess" + " --out " + dir / "rep");
    ASSERT_EQ(r.code, 0) << r.out;
    for (const char* f : {"report.json", "table.txt", "table.csv", "subjects.csv", "figure_magnitude.csv", "figure_dv.csv",
                          "figure_dv_remapped.csv", "figure_decreasing_impatience.csv"})
        EXPECT_TRUE(fs::exists(dir.path / "rep" / f)) << f;

    const auto report = read_report_dir(dir.path / "rep");
    EXPECT_EQ(report["counts"]["total"], 24);
    ASSERT_EQ(report["table"].size(), 5u);
    const std::vector<std::string> labels = {"exponential_objective", "proportional_hyperbolic_objective",
                                             "general_hyperbolic_objective", "general_hyperbolic_objective_remapped_subset",
                                             "general_hyperbolic_subjective"};
    for (std::size_t i = 0; i < labels.size(); ++i) EXPECT_EQ(report["table"][i]["label"], labels[i]);
    EXPECT_EQ(report["decreasing_impatience"].size(), 37u);

    const auto text = run("report --in " + dir / "rep" + " --format text");
    EXPECT_EQ(text.code, 0);
    EXPECT_EQ(text.out, slurp(dir.path / "rep" / "table.txt"));
    const auto csv = run("report --in " + dir / "rep" + " --format csv");
    EXPECT_EQ(csv.code, 0);
    EXPECT_EQ(csv.out.rfind("label,model,n,", 0), 0u);

    // Same seed, same bytes.
    ASSERT_EQ(run("simulate --seed 3 --out " + dir / "sess2").code, 0);
    EXPECT_EQ(slurp(dir.path / "sess" / "sim5-choice.jsonl"), slurp(dir.path / "sess2" / "sim5-choice.jsonl"));
}

TEST(Cli, FitWritesPerSubjectResults) {
    TempDir dir;
    ASSERT_EQ(run("simulate --n 4 --seed 2 --out " + dir / "sess").code, 0);
    ASSERT_EQ(run("fit --in " + dir / "sess" + " --model power --out " + dir / "fits.json").code, 0);
    const auto j = json::parse(slurp(dir.path / "fits.json"));
    EXPECT_EQ(j["model"], "power");
    ASSERT_EQ(j["subjects"].size(), 4u);
    EXPECT_TRUE(j["subjects"][0]["fit"]["params"].contains("beta"));
    ASSERT_EQ(run("fit --in " + dir / "sess" + " --model subjective_exponential --c 0.7 --out " + dir / "f2.json").code, 0);
    EXPECT_EQ(json::parse(slurp(dir.path / "f2.json"))["time_exponent"], 0.7);
    EXPECT_EQ(run("fit --in " + dir / "sess" + " --model nonsense --out " + dir / "f3.json").code, 2);
}

TEST(Cli, FitNonConvergenceExitsThree) {
    TempDir dir;
    ASSERT_EQ(run("simulate --n 2 --seed 2 --out " + dir / "sess").code, 0);
    const auto r = run("fit --in " + dir / "sess" + " --model general_hyperbolic --max-iterations 1 --out " + dir / "f.json");
    EXPECT_EQ(r.code, 3) << r.out;
    const auto j = json::parse(slurp(dir.path / "f.json"));
    EXPECT_EQ(j["subjects"][0]["error"], "NonConvergence");
}

TEST(Cli, AgentSpecFileAndServiceSessionsAnalyzeTogether) {
    TempDir dir;
    const json spec = {{"agents",
                        {{{"id", "a1"}, {"discount", {{"family", "general_hyperbolic"}, {"h", 0.5}, {"r", 0.2}}},
                          {"magnitude", {{"family", "power"}, {"a", 40.0}, {"beta", 0.7}}}, {"response_sigma_px", 10.0}},
                         {{"id", "a2"}, {"discount", {{"family", "exponential"}, {"delta", 0.04}}},
                          {"magnitude", {{"family", "linear"}, {"a", 15.0}}}, {"response_sigma_px", 10.0}},
                         {{"id", "a3"}, {"discount", {{"family", "proportional_hyperbolic"}, {"delta", 0.1}}},
                          {"noise", {{"temperature", 5.0}, {"perseveration", 3.0}}}, {"response_sigma_px", 10.0}}}}};
    write_text(dir.path / "agents.json", spec.dump());
    ASSERT_EQ(run("simulate --agents " + dir / "agents.json" + " --seed 1 --out " + dir / "sess").code, 0);

    // A participant served through the API lands in the same directory.
    {
        SessionService svc(dir.path / "sess");
        for (const char* task : {"magnitude", "choice"}) {
            const auto id = svc.create({{"task", task}, {"subject", "human1"}, {"seed", 4}}).body["session_id"].get<std::string>();
            for (;;) {
                const auto t = svc.next_trial(id).body;
                if (t["complete"].get<bool>()) break;
                json payload;
                if (t["task"] == "magnitude") payload = {{"line_px", static_cast<int>(12 * t["interval_months"].get<double>() + 30)}, {"latency", 2.0}};
                else payload = {{"choice", t["later_amount"].get<double>() > 100.0 * (1.0 + 0.06 * t["interval_months"].get<double>()) ? "later" : "now"}};
                ASSERT_EQ(svc.respond(id, {{"trial_token", t["trial_token"]}, {"payload", payload}}).status, 200);
            }
        }
        // An abandoned session is skipped with a warning.
        svc.create({{"task", "choice"}, {"subject", "quitter"}});
    }
    const auto r = run("analyze --in " + dir / "sess" + " --out " + dir / "rep");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("warning"), std::string::npos);
    const auto report = read_report_dir(dir.path / "rep");
    EXPECT_EQ(report["counts"]["total"], 4);
    bool saw_human = false;
    for (const auto& s : report["subjects"]) saw_human |= s["id"] == "human1";
    EXPECT_TRUE(saw_human);
}

TEST(Cli, BadAgentSpecExitsTwo) {
    TempDir dir;
    write_text(dir.path / "bad.json", R"({"agents":[{"discount":{"family":"exponential","delta":-1}}]})");
    EXPECT_EQ(run("simulate --agents " + dir / "bad.json" + " --out " + dir / "o").code, 2);
    write_text(dir.path / "junk.json", "{nope");
    EXPECT_EQ(run("simulate --agents " + dir / "junk.json" + " --out " + dir / "o").code, 2);
}
