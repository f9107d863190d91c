#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "impatience/service.hpp"
#include "impatience/simulation.hpp"

using namespace impatience;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / fmt::format("impatience_svc_{}_{}", ::getpid(), counter++);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string create(SessionService& svc, const json& body) {
    const auto r = svc.create(body);
    EXPECT_EQ(r.status, 201) << r.body.dump();
    return r.body.value("session_id", "");
}

// Scripted participant: line length grows with the interval; one forced timeout.
std::size_t run_magnitude(SessionService& svc, const std::string& id, std::size_t timeout_at) {
    std::size_t served = 0;
    for (;;) {
        const auto t = svc.next_trial(id);
        EXPECT_EQ(t.status, 200);
        if (t.body["complete"].get<bool>()) break;
        ++served;
        const json payload = served == timeout_at
                                 ? json{{"line_px", nullptr}, {"latency", 10.0}}
                                 : json{{"line_px", static_cast<int>(15 * t.body["interval_months"].get<double>())}, {"latency", 1.5}};
        const auto r = svc.respond(id, {{"trial_token", t.body["trial_token"]}, {"payload", payload}});
        EXPECT_EQ(r.status, 200) << r.body.dump();
    }
    return served;
}

// Deterministic chooser with indifference at later = 100 * (1 + t / 12).
std::size_t run_choice(SessionService& svc, const std::string& id) {
    std::size_t served = 0;
    for (;;) {
        const auto t = svc.next_trial(id);
        if (t.body["complete"].get<bool>()) break;
        ++served;
        const double later = t.body["later_amount"], months = t.body["interval_months"];
        const auto choice = later > 100.0 * (1.0 + months / 12.0) ? "later" : "now";
        const auto r = svc.respond(id, {{"trial_token", t.body["trial_token"]}, {"payload", {{"choice", choice}}}});
        EXPECT_EQ(r.status, 200);
    }
    return served;
}

} // namespace

TEST(Service, ScriptedMagnitudeSessionServes64TrialsAndReturns12Intervals) {
    TempDir dir;
    SessionService svc(dir.path);
    const auto id = create(svc, {{"task", "magnitude"}, {"seed", 5}});
    EXPECT_EQ(run_magnitude(svc, id, 20), 64u);
    const auto r = svc.results(id);
    ASSERT_EQ(r.status, 200);
    EXPECT_TRUE(r.body["complete"].get<bool>());
    ASSERT_EQ(r.body["series"].size(), 12u);
    int missing = 0;
    for (const auto& c : r.body["series"]) {
        missing += c["n_missing"].get<int>();
        EXPECT_DOUBLE_EQ(c["mean_px"].get<double>(), 15 * c["interval_months"].get<double>());
    }
    EXPECT_EQ(missing, 1);
    // Training trial 20 is not a training trial (4 training), so exactly one main-trial timeout is missing.
    EXPECT_TRUE(svc.next_trial(id).body["complete"].get<bool>());
}

TEST(Service, ChoiceSessionCompletesWithAnalyticEps) {
    TempDir dir;
    SessionService svc(dir.path);
    const auto id = create(svc, {{"task", "choice"}, {"seed", 3}});
    EXPECT_GT(run_choice(svc, id), 12u * 13u);
    const auto r = svc.results(id);
    ASSERT_EQ(r.body["series"].size(), 12u);
    for (const auto& p : r.body["series"]) {
        const double analytic = 100.0 * (1.0 + p["interval_months"].get<double>() / 12.0);
        EXPECT_NEAR(p["ep"].get<double>() / analytic, 1.0, 0.1);
        EXPECT_DOUBLE_EQ(p["dv"].get<double>(), 100.0 / p["ep"].get<double>());
    }
}

TEST(Service, NextTrialIsIdempotent) {
    TempDir dir;
    SessionService svc(dir.path);
    for (const char* task : {"choice", "magnitude"}) {
        const auto id = create(svc, {{"task", task}, {"subject", "idem"}});
        const auto a = svc.next_trial(id), b = svc.next_trial(id);
        EXPECT_EQ(a.body, b.body);
    }
}

TEST(Service, ErrorStatuses) {
    TempDir dir;
    SessionService svc(dir.path);
    const auto id = create(svc, {{"task", "magnitude"}});
    const auto t = svc.next_trial(id).body;
    const json ok = {{"trial_token", t["trial_token"]}, {"payload", {{"line_px", 100}, {"latency", 1.0}}}};
    EXPECT_EQ(svc.respond(id, {{"trial_token", t["trial_token"]}, {"payload", {{"line_px", 700}}}}).status, 422);
    EXPECT_EQ(svc.respond(id, {{"trial_token", t["trial_token"]}, {"payload", {{"line_px", -1}}}}).status, 422);
    EXPECT_EQ(svc.respond(id, ok).status, 200);
    EXPECT_EQ(svc.respond(id, ok).status, 409);  // duplicate POST of the same token
    EXPECT_EQ(svc.respond(id, {{"trial_token", "999"}, {"payload", {{"line_px", 1}}}}).status, 409);
    EXPECT_EQ(svc.next_trial("nobody-choice").status, 404);
    EXPECT_EQ(svc.respond("nobody-choice", ok).status, 404);
    EXPECT_EQ(svc.results("nobody-choice").status, 404);
    EXPECT_EQ(svc.create({{"task", "juggling"}}).status, 400);
    EXPECT_EQ(svc.create({{"task", "choice"}, {"subject", "../etc"}}).status, 400);
    EXPECT_EQ(svc.create({{"task", "choice"}, {"config", {{"step", 2.0}}}}).status, 400);
    EXPECT_EQ(svc.handle("POST", "/api/sessions", "{not json").status, 400);
    EXPECT_EQ(svc.handle("GET", "/api/nowhere").status, 404);

    const auto cid = create(svc, {{"task", "choice"}});
    const auto ct = svc.next_trial(cid).body;
    EXPECT_EQ(svc.respond(cid, {{"trial_token", ct["trial_token"]}, {"payload", {{"choice", "maybe"}}}}).status, 422);
    EXPECT_EQ(svc.respond(cid, {{"trial_token", ct["trial_token"]}, {"payload", {{"choice", "now"}}}}).status, 200);
}

TEST(Service, DuplicateSubjectTaskIsConflict) {
    TempDir dir;
    SessionService svc(dir.path);
    create(svc, {{"task", "choice"}, {"subject", "dup"}});
    EXPECT_EQ(svc.create({{"task", "choice"}, {"subject", "dup"}}).status, 409);
}

TEST(Service, CounterbalancingIsExactOverSessionPairs) {
    TempDir dir;
    SessionService svc(dir.path);
    const std::size_t k = 25;
    std::map<std::string, int> orders;
    for (std::size_t i = 0; i < 2 * k; ++i) {
        const auto a = svc.create({{"task", "magnitude"}, {"seed", i}});
        const auto subject = a.body["subject"].get<std::string>();
        const auto b = svc.create({{"task", "choice"}, {"subject", subject}, {"seed", i}});
        ASSERT_EQ(a.body["task_order"], b.body["task_order"]);
        ++orders[a.body["task_order"].get<std::string>()];
    }
    EXPECT_EQ(orders["magnitude_first"], static_cast<int>(k));
    EXPECT_EQ(orders["choice_first"], static_cast<int>(k));
}

TEST(Service, CounterbalancingContinuesAfterRestart) {
    TempDir dir;
    {
        SessionService svc(dir.path);
        EXPECT_EQ(svc.create({{"task", "choice"}, {"subject", "a"}}).body["task_order"], "magnitude_first");
    }
    SessionService svc(dir.path);
    EXPECT_EQ(svc.create({{"task", "choice"}, {"subject", "b"}}).body["task_order"], "choice_first");
    EXPECT_EQ(svc.create({{"task", "magnitude"}, {"subject", "a"}}).body["task_order"], "magnitude_first");
}

TEST(Service, RestartBetweenEventsResumesRunningSession) {
    TempDir dir;
    std::string id;
    json outstanding;
    {
        SessionService svc(dir.path);
        id = create(svc, {{"task", "choice"}, {"seed", 11}});
        for (int i = 0; i < 40; ++i) {
            const auto t = svc.next_trial(id).body;
            svc.respond(id, {{"trial_token", t["trial_token"]}, {"payload", {{"choice", i % 2 ? "now" : "later"}}}});
        }
        outstanding = svc.next_trial(id).body;
    }  // process "dies" with a trial issued but unanswered
    SessionService svc(dir.path);
    EXPECT_TRUE(svc.load_errors().empty());
    EXPECT_EQ(svc.next_trial(id).body, outstanding);
    const auto r = svc.results(id).body;
    EXPECT_EQ(r["status"], "running");
    EXPECT_EQ(r["trials"], 40);
    run_choice(svc, id);
    EXPECT_EQ(svc.results(id).body["status"], "complete");
}

TEST(Service, RestartAfterTornAppendLosesOnlyThatEvent) {
    TempDir dir;
    std::string id;
    {
        SessionService svc(dir.path);
        id = create(svc, {{"task", "magnitude"}, {"seed", 2}});
        const auto t = svc.next_trial(id).body;
        svc.respond(id, {{"trial_token", t["trial_token"]}, {"payload", {{"line_px", 50}, {"latency", 1.0}}}});
    }
    {
        std::ofstream out(dir.path / (id + ".jsonl"), std::ios::app);
        out << R"({"seq":3,"type":"trial_iss)";
    }
    SessionService svc(dir.path);
    EXPECT_TRUE(svc.load_errors().empty());
    EXPECT_EQ(svc.results(id).body["trials"], 1);
    EXPECT_EQ(svc.next_trial(id).body["trial_token"], "2");
}

TEST(Service, FilesMatchSimulatorFormat) {
    TempDir dir;
    SessionService svc(dir.path);
    const auto id = create(svc, {{"task", "magnitude"}, {"seed", 9}, {"subject", "h1"}});
    run_magnitude(svc, id, 0);
    const auto served = load_session(dir.path / (id + ".jsonl"));
    // Re-derive the same session through the simulator-side constructor; files must be byte-identical.
    const auto rebuilt = SessionRecord::from_magnitude(served.header(), served.magnitude());
    std::ifstream in(dir.path / (id + ".jsonl"));
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    EXPECT_EQ(text, serialize_session(rebuilt));
}

TEST(Service, ConcurrentSessionsStayConsistent) {
    TempDir dir;
    SessionService svc(dir.path);
    std::vector<std::string> ids;
    for (int i = 0; i < 8; ++i) ids.push_back(create(svc, {{"task", "magnitude"}, {"seed", i}}));
    std::vector<std::thread> threads;
    for (const auto& id : ids) {
        // Two clients hammer the same session; each token is accepted exactly once.
        for (int c = 0; c < 2; ++c)
            threads.emplace_back([&svc, id] {
                for (;;) {
                    const auto t = svc.next_trial(id).body;
                    if (t["complete"].get<bool>()) return;
                    svc.respond(id, {{"trial_token", t["trial_token"]}, {"payload", {{"line_px", 100}, {"latency", 1.0}}}});
                }
            });
    }
    for (auto& t : threads) t.join();
    SessionService reloaded(dir.path);
    EXPECT_TRUE(reloaded.load_errors().empty());
    for (const auto& id : ids) {
        const auto r = reloaded.results(id).body;
        EXPECT_EQ(r["status"], "complete");
        EXPECT_EQ(r["trials"], 64);
    }
}

TEST(Service, InstructionsAreLocalizedWithEnglishFallback) {
    TempDir dir;
    SessionService svc(dir.path);
    const auto tr = svc.handle("GET", "/api/instructions?lang=tr").body;
    EXPECT_EQ(tr["lang"], "tr");
    EXPECT_EQ(tr["strings"]["magnitude.label_left"], "çok kısa");
    EXPECT_EQ(tr["strings"]["magnitude.interval"], "{n} Ay");
    EXPECT_EQ(tr["strings"]["choice.now"], "{amount} TL now");
    EXPECT_FALSE(tr["fallback"].empty());
    const auto xx = svc.instructions_for("xx").body;
    EXPECT_EQ(xx["lang"], "en");
    EXPECT_EQ(xx["strings"]["magnitude.label_right"], "very long");
}

TEST(Service, DataDirFromEnvironment) {
    ::setenv("IMPATIENCE_DATA_DIR", "/tmp/from-env", 1);
    EXPECT_EQ(resolve_data_dir(), fs::path("/tmp/from-env"));
    EXPECT_EQ(resolve_data_dir("explicit"), fs::path("explicit"));
    ::unsetenv("IMPATIENCE_DATA_DIR");
    EXPECT_EQ(resolve_data_dir(), fs::path("impatience-data"));
}

TEST(Service, LiveServerRoundTrip) {
    TempDir dir;
    SessionService svc(dir.path);
    httplib::Server server;
    svc.mount(server);
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client cli("127.0.0.1", port);
    auto res = cli.Post("/api/sessions", R"({"task":"magnitude","seed":4})", "application/json");
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 201);
    const auto id = json::parse(res->body)["session_id"].get<std::string>();
    std::size_t served = 0;
    for (;;) {
        auto t = cli.Get("/api/sessions/" + id + "/next-trial");
        ASSERT_TRUE(t);
        const auto trial = json::parse(t->body);
        if (trial["complete"].get<bool>()) break;
        ++served;
        const json body = {{"session_id", id}, {"trial_token", trial["trial_token"]}, {"payload", {{"line_px", 200}, {"latency", 2.0}}}};
        auto r = cli.Post("/api/sessions/" + id + "/response", body.dump(), "application/json");
        ASSERT_TRUE(r);
        ASSERT_EQ(r->status, 200);
    }
    EXPECT_EQ(served, 64u);
    auto results = cli.Get("/api/sessions/" + id + "/results");
    ASSERT_TRUE(results);
    EXPECT_EQ(json::parse(results->body)["series"].size(), 12u);
    auto stale = cli.Post("/api/sessions/" + id + "/response", R"({"trial_token":"1","payload":{"line_px":1}})", "application/json");
    EXPECT_EQ(stale->status, 409);
    EXPECT_EQ(cli.Get("/api/sessions/ghost/next-trial")->status, 404);
    auto tr = cli.Get("/api/instructions?lang=tr");
    EXPECT_EQ(json::parse(tr->body)["strings"]["magnitude.label_right"], "çok uzun");
    server.stop();
    th.join();
}
