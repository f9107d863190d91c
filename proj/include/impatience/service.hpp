#pragma once

// Trial-serving session API. SessionService holds the logic and is callable
// directly; mount() wires it onto an httplib::Server.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <regex>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <httplib.h>

// <resolv.h>, pulled in by httplib, defines _res, which collides with Eigen parameter names.
#ifdef _res
#undef _res
#endif

#include "impatience/instructions.hpp"
#include "impatience/session_io.hpp"

namespace impatience {

struct ApiResponse {
    int status = 200;
    json body = json::object();
};

inline int http_status(errc code) {
    switch (code) {
    case errc::stale_trial:
    case errc::session_complete: return 409;
    case errc::out_of_range:
    case errc::domain: return 422;
    default: return 400;
    }
}

inline ApiResponse api_error(int status, std::string_view code, std::string_view message) {
    return {status, {{"error", code}, {"message", message}}};
}

// Data directory: explicit argument, else IMPATIENCE_DATA_DIR, else ./impatience-data.
inline std::filesystem::path resolve_data_dir(const std::string& explicit_dir = {}) {
    if (!explicit_dir.empty()) return explicit_dir;
    if (const char* env = std::getenv("IMPATIENCE_DATA_DIR"); env && *env) return env;
    return "impatience-data";
}

class SessionService {
public:
    explicit SessionService(std::filesystem::path data_dir) : dir_(std::move(data_dir)) {
        std::filesystem::create_directories(dir_);
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(dir_))
            if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& p : files) {
            try {
                auto rec = load_session(p);
                const auto id = p.stem().string();
                subjects_.emplace(rec.header().subject, rec.header().order);
                auto entry = std::make_shared<Entry>(std::move(rec));
                entry->out = std::make_unique<DurableAppender>(p);
                attach(*entry);
                sessions_.emplace(id, std::move(entry));
            } catch (const error& e) {
                load_errors_.push_back(p.filename().string() + ": " + e.what());
            }
        }
        created_subjects_ = subjects_.size();
    }

    const std::filesystem::path& data_dir() const { return dir_; }
    const std::vector<std::string>& load_errors() const { return load_errors_; }

    std::size_t session_count() const {
        std::lock_guard lock(registry_);
        return sessions_.size();
    }

    // Subjects alternate between the two task orders in creation order.
    ApiResponse create(const json& body) {
        if (!body.is_object() || !body.contains("task") || !body["task"].is_string())
            return api_error(400, "bad_request", "body must be an object with a \"task\" string");
        SessionHeader h;
        try {
            h.task = task_kind_from(body["task"].get<std::string>());
            if (body.contains("seed")) {
                if (!body["seed"].is_number_integer() || body["seed"].get<std::int64_t>() < 0) return api_error(400, "bad_request", "seed must be a non-negative integer");
                h.seed = body["seed"].get<std::uint64_t>();
            } else {
                h.seed = std::random_device{}();
            }
            h.config = body.value("config", json::object());
            if (!h.config.is_object()) return api_error(400, "bad_request", "config must be an object");
        } catch (const error& e) {
            return api_error(400, "bad_request", e.what());
        } catch (const json::exception& e) {
            return api_error(400, "bad_request", e.what());
        }

        std::lock_guard lock(registry_);
        if (body.contains("subject")) {
            if (!body["subject"].is_string() || !valid_subject_id(body["subject"].get<std::string>()))
                return api_error(400, "bad_request", "subject must match [A-Za-z0-9_.-]{1,64}");
            h.subject = body["subject"].get<std::string>();
        } else {
            do h.subject = fmt::format("p{:04d}", ++auto_subject_);
            while (subjects_.count(h.subject));
        }
        auto [it, fresh] = subjects_.try_emplace(h.subject, created_subjects_ % 2 == 0 ? TaskOrder::MagnitudeFirst
                                                                                        : TaskOrder::ChoiceFirst);
        if (fresh) ++created_subjects_;
        h.order = it->second;

        const auto id = fmt::format("{}-{}", h.subject, to_string(h.task));
        if (sessions_.count(id)) return api_error(409, "exists", "session " + id + " already exists");

        std::shared_ptr<Entry> entry;
        try {
            entry = std::make_shared<Entry>(SessionRecord::create(h));
        } catch (const error& e) {
            if (fresh) {
                subjects_.erase(it);
                --created_subjects_;
            }
            return api_error(400, "invalid_config", e.what());
        }
        const auto path = dir_ / (id + ".jsonl");
        entry->out = std::make_unique<DurableAppender>(path);
        entry->out->append(entry->rec.lines().front());
        attach(*entry);
        sessions_.emplace(id, entry);
        return {201,
                {{"session_id", id},
                 {"subject", h.subject},
                 {"task", to_string(h.task)},
                 {"task_order", to_string(h.order)},
                 {"seed", h.seed}}};
    }

    ApiResponse next_trial(const std::string& id) {
        auto entry = find(id);
        if (!entry) return unknown(id);
        std::lock_guard lock(entry->m);
        try {
            auto t = entry->rec.issue();
            if (!t) return {200, {{"complete", true}, {"status", entry->rec.status()}}};
            (*t)["complete"] = false;
            (*t)["session_id"] = id;
            return {200, *t};
        } catch (const error& e) {
            return api_error(500, to_string(e.code()), e.what());
        }
    }

    ApiResponse respond(const std::string& id, const json& body) {
        auto entry = find(id);
        if (!entry) return unknown(id);
        if (!body.is_object() || !body.contains("trial_token") || !body["trial_token"].is_string())
            return api_error(400, "bad_request", "body must carry a trial_token string");
        const json payload = body.value("payload", json::object());
        if (!payload.is_object()) return api_error(400, "bad_request", "payload must be an object");
        std::lock_guard lock(entry->m);
        try {
            entry->rec.respond(body["trial_token"].get<std::string>(), payload);
        } catch (const error& e) {
            return api_error(http_status(e.code()), to_string(e.code()), e.what());
        }
        return {200, {{"accepted", true}, {"next_available", !entry->rec.finished()}, {"status", entry->rec.status()}}};
    }

    ApiResponse results(const std::string& id) {
        auto entry = find(id);
        if (!entry) return unknown(id);
        std::lock_guard lock(entry->m);
        const auto& rec = entry->rec;
        json out = {{"session_id", id},
                    {"subject", rec.header().subject},
                    {"task", to_string(rec.task())},
                    {"status", rec.status()},
                    {"complete", rec.status() == "complete"},
                    {"series", json::array()}};
        if (rec.task() == TaskKind::Choice) {
            out["trials"] = rec.choice().total_trials();
            for (double t : rec.choice().config().intervals) {
                if (!rec.choice().interval_complete(t)) continue;
                const auto e = rec.choice().equivalence_point(t);
                out["series"].push_back({{"interval_months", e.interval}, {"ep", e.ep}, {"dv", e.dv}});
            }
            std::sort(out["series"].begin(), out["series"].end(),
                      [](const json& a, const json& b) { return a["interval_months"] < b["interval_months"]; });
        } else {
            out["trials"] = rec.magnitude().responses().size();
            if (rec.magnitude().complete())
                for (const auto& c : magnitude_cells(rec.magnitude()))
                    out["series"].push_back({{"interval_months", c.interval},
                                             {"mean_px", c.mean_px ? json(*c.mean_px) : json(nullptr)},
                                             {"n_missing", c.n_missing}});
        }
        return {200, out};
    }

    ApiResponse instructions_for(const std::string& lang) const { return {200, instructions(lang)}; }

    // Minimal router so tests can drive the API without sockets.
    ApiResponse handle(const std::string& method, const std::string& path, const std::string& body = {}) {
        static const std::regex session_route(R"(/api/sessions/([^/]+)/(next-trial|response|results))");
        json parsed = json::object();
        if (!body.empty()) {
            parsed = json::parse(body, nullptr, false);
            if (parsed.is_discarded()) return api_error(400, "bad_request", "body is not valid JSON");
        }
        if (path == "/api/sessions") {
            if (method == "POST") return create(parsed);
            return api_error(405, "method_not_allowed", method);
        }
        if (path.rfind("/api/instructions", 0) == 0) {
            const auto q = path.find("lang=");
            return instructions_for(q == std::string::npos ? "en" : path.substr(q + 5));
        }
        std::smatch m;
        if (std::regex_match(path, m, session_route)) {
            const std::string id = m[1], action = m[2];
            if (action == "response") {
                if (method != "POST") return api_error(405, "method_not_allowed", method);
                return respond(id, parsed);
            }
            if (method != "GET") return api_error(405, "method_not_allowed", method);
            return action == "next-trial" ? next_trial(id) : results(id);
        }
        return api_error(404, "not_found", path);
    }

    void mount(httplib::Server& server) {
        auto reply = [](httplib::Response& res, const ApiResponse& r) {
            res.status = r.status;
            res.set_content(r.body.dump(), "application/json; charset=utf-8");
        };
        server.Post("/api/sessions",
                    [this, reply](const httplib::Request& req, httplib::Response& res) { reply(res, handle("POST", req.path, req.body)); });
        server.Get(R"(/api/sessions/([^/]+)/(next-trial|results))",
                   [this, reply](const httplib::Request& req, httplib::Response& res) { reply(res, handle("GET", req.path)); });
        server.Post(R"(/api/sessions/([^/]+)/response)",
                    [this, reply](const httplib::Request& req, httplib::Response& res) { reply(res, handle("POST", req.path, req.body)); });
        server.Get("/api/instructions", [this, reply](const httplib::Request& req, httplib::Response& res) {
            reply(res, instructions_for(req.has_param("lang") ? req.get_param_value("lang") : "en"));
        });
        server.set_error_handler([reply](const httplib::Request& req, httplib::Response& res) {
            if (res.body.empty()) reply(res, api_error(res.status, "not_found", req.path));
        });
    }

private:
    struct Entry {
        explicit Entry(SessionRecord r) : rec(std::move(r)) {}
        std::mutex m;
        SessionRecord rec;
        std::unique_ptr<DurableAppender> out;
    };

    static void attach(Entry& e) {
        e.rec.set_sink([&e](const std::string& line) { e.out->append(line); });
    }

    std::shared_ptr<Entry> find(const std::string& id) {
        std::lock_guard lock(registry_);
        const auto it = sessions_.find(id);
        return it == sessions_.end() ? nullptr : it->second;
    }

    static ApiResponse unknown(const std::string& id) { return api_error(404, "unknown_session", "no session " + id); }

    std::filesystem::path dir_;
    mutable std::mutex registry_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
    std::map<std::string, TaskOrder> subjects_;
    std::size_t created_subjects_ = 0;
    std::size_t auto_subject_ = 0;
    std::vector<std::string> load_errors_;
};

} // namespace impatience
