#pragma once

// Line-delimited JSON session files. Line 1 is a header; every further line is
// an event with a strictly increasing "seq". Loading replays the events through
// a fresh engine built from the header, so the file is the source of truth.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "impatience/error.hpp"
#include "impatience/magnitude.hpp"
#include "impatience/staircase.hpp"

namespace impatience {

using json = nlohmann::json;

inline constexpr int kSessionSchemaVersion = 1;
inline constexpr const char* kSessionSchema = "impatience.session";

enum class TaskKind { Choice, Magnitude };
enum class TaskOrder { MagnitudeFirst, ChoiceFirst };

inline std::string_view to_string(TaskKind k) { return k == TaskKind::Choice ? "choice" : "magnitude"; }
inline std::string_view to_string(TaskOrder o) { return o == TaskOrder::MagnitudeFirst ? "magnitude_first" : "choice_first"; }

inline TaskKind task_kind_from(std::string_view s) {
    if (s == "choice") return TaskKind::Choice;
    if (s == "magnitude") return TaskKind::Magnitude;
    fail(errc::invalid_config, "unknown task '" + std::string(s) + "'");
}

inline TaskOrder task_order_from(std::string_view s) {
    if (s == "magnitude_first") return TaskOrder::MagnitudeFirst;
    if (s == "choice_first") return TaskOrder::ChoiceFirst;
    fail(errc::invalid_config, "unknown task order '" + std::string(s) + "'");
}

// Subject ids become file names.
inline bool valid_subject_id(const std::string& s) {
    static const std::regex re("[A-Za-z0-9_.-]{1,64}");
    return std::regex_match(s, re) && s != "." && s != "..";
}

// --- config and trial payloads ----------------------------------------------------

inline json to_json(const StaircaseConfig& c) {
    return {{"intervals", c.intervals},
            {"now_amount", c.now_amount},
            {"start_later", c.start_later},
            {"step", c.step},
            {"gate_trial", c.gate_trial},
            {"inversions_required", c.inversions_required},
            {"max_trials_per_interval", c.max_trials_per_interval}};
}

inline StaircaseConfig staircase_config_from(const json& j) {
    StaircaseConfig c;
    c.intervals = j.value("intervals", c.intervals);
    c.now_amount = j.value("now_amount", c.now_amount);
    c.start_later = j.value("start_later", c.start_later);
    c.step = j.value("step", c.step);
    c.gate_trial = j.value("gate_trial", c.gate_trial);
    c.inversions_required = j.value("inversions_required", c.inversions_required);
    c.max_trials_per_interval = j.value("max_trials_per_interval", c.max_trials_per_interval);
    c.validate();
    return c;
}

inline json to_json(const MagnitudeConfig& c) {
    return {{"intervals", c.intervals},
            {"repetitions", c.repetitions},
            {"training_trials", c.training_trials},
            {"max_px", c.max_px},
            {"response_window_s", c.response_window_s}};
}

inline MagnitudeConfig magnitude_config_from(const json& j) {
    MagnitudeConfig c;
    c.intervals = j.value("intervals", c.intervals);
    c.repetitions = j.value("repetitions", c.repetitions);
    c.training_trials = j.value("training_trials", c.training_trials);
    c.max_px = j.value("max_px", c.max_px);
    c.response_window_s = j.value("response_window_s", c.response_window_s);
    c.validate();
    return c;
}

inline json to_json(const ChoiceTrial& t) {
    return {{"interval_months", t.interval},
            {"now_amount", t.now_amount},
            {"later_amount", t.later_amount},
            {"index", t.index_global},
            {"index_within_interval", t.index_within_interval}};
}

inline ChoiceTrial choice_trial_from(const json& j) {
    ChoiceTrial t;
    t.interval = j.at("interval_months").get<double>();
    t.now_amount = j.at("now_amount").get<double>();
    t.later_amount = j.at("later_amount").get<double>();
    t.index_global = j.at("index").get<std::size_t>();
    t.index_within_interval = j.at("index_within_interval").get<std::size_t>();
    return t;
}

inline json to_json(const MagnitudeTrial& t) {
    return {{"interval_months", t.interval},
            {"repetition", t.repetition},
            {"is_training", t.is_training},
            {"index", t.index}};
}

inline MagnitudeTrial magnitude_trial_from(const json& j) {
    MagnitudeTrial t;
    t.interval = j.at("interval_months").get<double>();
    t.repetition = j.at("repetition").get<int>();
    t.is_training = j.at("is_training").get<bool>();
    t.index = j.at("index").get<std::size_t>();
    return t;
}

inline std::string_view to_string(Choice c) { return c == Choice::Later ? "later" : "now"; }

inline Choice choice_from(std::string_view s) {
    if (s == "now") return Choice::Now;
    if (s == "later") return Choice::Later;
    fail(errc::out_of_range, "choice must be \"now\" or \"later\"");
}

// --- session record -----------------------------------------------------------------

struct SessionHeader {
    int schema_version = kSessionSchemaVersion;
    std::string subject;
    TaskKind task = TaskKind::Choice;
    std::uint64_t seed = 1;
    TaskOrder order = TaskOrder::MagnitudeFirst;
    json config = json::object();

    json to_json() const {
        return {{"schema", kSessionSchema},
                {"schema_version", schema_version},
                {"subject", subject},
                {"task", to_string(task)},
                {"seed", seed},
                {"task_order", to_string(order)},
                {"config", config}};
    }

    static SessionHeader from_json(const json& j) {
        if (!j.is_object() || j.value("schema", "") != kSessionSchema)
            fail(errc::schema_mismatch, "not an impatience session file");
        SessionHeader h;
        h.schema_version = j.value("schema_version", 0);
        if (h.schema_version != kSessionSchemaVersion)
            fail(errc::schema_mismatch, fmt::format("unsupported schema version {}", h.schema_version));
        try {
            h.subject = j.at("subject").get<std::string>();
            h.task = task_kind_from(j.at("task").get<std::string>());
            h.seed = j.at("seed").get<std::uint64_t>();
            h.order = task_order_from(j.at("task_order").get<std::string>());
            h.config = j.value("config", json::object());
        } catch (const json::exception& e) {
            fail(errc::schema_mismatch, std::string("bad header: ") + e.what());
        } catch (const error& e) {
            fail(errc::schema_mismatch, e.what());
        }
        return h;
    }
};

// A task engine plus the ordered events that produced its state. Every state
// change goes through this class so the event log and the engine cannot diverge.
class SessionRecord {
public:
    using Sink = std::function<void(const std::string& line)>;

    static SessionRecord create(SessionHeader h) {
        SessionRecord r;
        if (h.task == TaskKind::Choice) {
            const auto cfg = staircase_config_from(h.config);
            h.config = to_json(cfg);
            r.state_ = ChoiceSession(h.seed, cfg);
        } else {
            const auto cfg = magnitude_config_from(h.config);
            h.config = to_json(cfg);
            r.state_ = MagnitudeSession(h.seed, cfg);
        }
        r.header_ = std::move(h);
        return r;
    }

    // Rebuilds the event log for an engine that was driven directly (simulation).
    static SessionRecord from_choice(SessionHeader h, const ChoiceSession& s) {
        h.task = TaskKind::Choice;
        h.seed = s.seed();
        h.config = to_json(s.config());
        auto r = create(std::move(h));
        for (const auto& rec : s.records()) {
            r.issue();
            r.respond_choice(rec.trial, rec.choice, rec.response_time);
        }
        return r;
    }

    static SessionRecord from_magnitude(SessionHeader h, const MagnitudeSession& s) {
        h.task = TaskKind::Magnitude;
        h.seed = s.seed();
        h.config = to_json(s.config());
        auto r = create(std::move(h));
        for (const auto& rec : s.responses()) {
            r.issue();
            r.respond_magnitude(rec.trial, rec.line_px, rec.latency);
        }
        return r;
    }

    void set_sink(Sink sink) { sink_ = std::move(sink); }

    const SessionHeader& header() const { return header_; }
    TaskKind task() const { return header_.task; }
    const std::vector<json>& events() const { return events_; }
    std::uint64_t last_seq() const { return events_.size(); }

    const ChoiceSession& choice() const { return std::get<ChoiceSession>(state_); }
    const MagnitudeSession& magnitude() const { return std::get<MagnitudeSession>(state_); }

    // Running / complete / capped.
    std::string status() const {
        if (task() == TaskKind::Choice) return std::string(to_string(choice().status()));
        return magnitude().complete() ? "complete" : "running";
    }
    bool finished() const { return status() != "running"; }

    std::string outstanding_token() const {
        if (task() == TaskKind::Choice) {
            const auto& o = choice().outstanding();
            return o ? std::to_string(o->index_global) : std::string();
        }
        return issued_ ? std::to_string(magnitude().next_trial().index) : std::string();
    }

    // Issues (or re-serves) the outstanding trial. Nullopt when the session is finished.
    std::optional<json> issue() {
        if (finished()) return std::nullopt;
        json payload;
        bool fresh = false;
        if (task() == TaskKind::Choice) {
            auto& s = std::get<ChoiceSession>(state_);
            fresh = !s.outstanding().has_value();
            payload = to_json(s.next_trial());
        } else {
            const auto& s = magnitude();
            fresh = !issued_;
            issued_ = true;
            payload = to_json(s.next_trial());
            payload["max_px"] = s.config().max_px;
            payload["response_window_s"] = s.config().response_window_s;
        }
        if (fresh) emit({{"type", "trial_issued"}, {"trial", strip(payload)}});
        payload["task"] = to_string(task());
        payload["trial_token"] = outstanding_token();
        return payload;
    }

    void respond_choice(const ChoiceTrial& trial, Choice c, std::optional<double> rt = {}) {
        auto& s = std::get<ChoiceSession>(state_);
        const auto before = s.status();
        s.record_choice(trial, c, rt);
        json ev = {{"type", "response"}, {"trial", to_json(trial)}, {"choice", to_string(c)}};
        ev["response_time"] = rt ? json(*rt) : json(nullptr);
        emit(std::move(ev));
        if (s.status() != before) emit({{"type", "status"}, {"status", to_string(s.status())}});
    }

    void respond_magnitude(const MagnitudeTrial& trial, std::optional<int> px, double latency) {
        auto& s = std::get<MagnitudeSession>(state_);
        s.record(trial, px, latency);
        issued_ = false;
        json ev = {{"type", "response"}, {"trial", to_json(trial)}, {"latency", latency}};
        ev["line_px"] = px ? json(*px) : json(nullptr);
        emit(std::move(ev));
        if (s.complete()) emit({{"type", "status"}, {"status", "complete"}});
    }

    // Answers the outstanding trial identified by token. StaleTrial if the token is not current.
    void respond(const std::string& token, const json& payload) {
        if (token.empty() || token != outstanding_token()) fail(errc::stale_trial, "trial_token does not match the outstanding trial");
        if (task() == TaskKind::Choice) {
            if (!payload.contains("choice") || !payload["choice"].is_string())
                fail(errc::out_of_range, "payload.choice must be \"now\" or \"later\"");
            std::optional<double> rt;
            if (payload.contains("response_time") && payload["response_time"].is_number())
                rt = payload["response_time"].get<double>();
            respond_choice(*choice().outstanding(), choice_from(payload["choice"].get<std::string>()), rt);
        } else {
            std::optional<int> px;
            if (payload.contains("line_px") && !payload["line_px"].is_null()) {
                if (!payload["line_px"].is_number_integer()) fail(errc::out_of_range, "payload.line_px must be an integer");
                px = payload["line_px"].get<int>();
            }
            double latency = payload.value("latency", 0.0);
            if (!px && !payload.contains("latency")) latency = magnitude().config().response_window_s;
            respond_magnitude(magnitude().next_trial(), px, latency);
        }
    }

    std::vector<std::string> lines() const {
        std::vector<std::string> out{header_.to_json().dump()};
        for (const auto& e : events_) out.push_back(e.dump());
        return out;
    }

    // Replays one stored event; throws CorruptEvent on any mismatch.
    void replay(const json& ev) {
        const auto seq = ev.value("seq", std::uint64_t{0});
        if (seq != last_seq() + 1)
            fail(errc::corrupt_event, fmt::format("expected seq {}, found {}", last_seq() + 1, seq));
        const auto type = ev.value("type", std::string());
        try {
            if (type == "trial_issued") {
                const auto payload = issue();
                if (!payload || strip(*payload) != ev.at("trial"))
                    fail(errc::corrupt_event, fmt::format("event {} issues a trial the engine would not issue", seq));
                if (last_seq() != seq) fail(errc::corrupt_event, fmt::format("event {} re-issues an outstanding trial", seq));
            } else if (type == "response") {
                if (task() == TaskKind::Choice) {
                    std::optional<double> rt;
                    if (ev.contains("response_time") && !ev["response_time"].is_null()) rt = ev["response_time"].get<double>();
                    respond_choice(choice_trial_from(ev.at("trial")), choice_from(ev.at("choice").get<std::string>()), rt);
                } else {
                    if (!issued_) fail(errc::corrupt_event, fmt::format("event {} answers a trial that was never issued", seq));
                    std::optional<int> px;
                    if (!ev.at("line_px").is_null()) px = ev["line_px"].get<int>();
                    respond_magnitude(magnitude_trial_from(ev.at("trial")), px, ev.at("latency").get<double>());
                }
                // A status line follows in the file; drop the one we just generated and check it there.
                if (last_seq() > seq) {
                    pending_status_ = events_.back();
                    events_.pop_back();
                }
            } else if (type == "status") {
                if (!pending_status_ || (*pending_status_)["status"] != ev.at("status"))
                    fail(errc::corrupt_event, fmt::format("event {} reports a status the engine does not reach", seq));
                events_.push_back(*pending_status_);
                pending_status_.reset();
            } else {
                fail(errc::corrupt_event, fmt::format("event {} has unknown type '{}'", seq, type));
            }
        } catch (const json::exception& e) {
            fail(errc::corrupt_event, fmt::format("event {}: {}", seq, e.what()));
        } catch (const error& e) {
            if (e.code() == errc::corrupt_event) throw;
            fail(errc::corrupt_event, fmt::format("event {}: {}", seq, e.what()));
        }
    }

    // A response whose status event never made it to disk.
    bool awaiting_status() const { return pending_status_.has_value(); }

    void finish_replay() {
        // The status event is derived state; restore it if the writer died between the two lines.
        if (pending_status_) {
            events_.push_back(*pending_status_);
            pending_status_.reset();
        }
    }

private:
    static json strip(json payload) {
        for (const char* k : {"task", "trial_token", "max_px", "response_window_s"}) payload.erase(k);
        return payload;
    }

    void emit(json ev) {
        json out = {{"seq", last_seq() + 1}};
        out.update(ev);
        events_.push_back(out);
        if (sink_) sink_(out.dump());
    }

    SessionHeader header_;
    std::variant<ChoiceSession, MagnitudeSession> state_{ChoiceSession(1)};
    std::vector<json> events_;
    bool issued_ = false;  // magnitude: outstanding trial has been served
    std::optional<json> pending_status_;
    Sink sink_;
};

// --- files ----------------------------------------------------------------------------

inline SessionRecord parse_session(std::istream& in) {
    std::vector<std::string> lines;
    std::string line;
    bool last_terminated = true;
    while (std::getline(in, line)) {
        last_terminated = !in.eof();
        lines.push_back(line);
    }
    if (lines.empty() || lines.front().empty()) fail(errc::schema_mismatch, "session file is empty");
    json head;
    try {
        head = json::parse(lines.front());
    } catch (const json::exception&) {
        fail(errc::schema_mismatch, "session header is not JSON");
    }
    auto rec = SessionRecord::create(SessionHeader::from_json(head));
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        json ev;
        try {
            ev = json::parse(lines[i]);
        } catch (const json::exception&) {
            // A torn final append was never acknowledged; anything else is corruption.
            if (i + 1 == lines.size() && !last_terminated) break;
            fail(errc::corrupt_event, fmt::format("line {} is not JSON", i + 1));
        }
        rec.replay(ev);
    }
    rec.finish_replay();
    return rec;
}

inline SessionRecord load_session(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::schema_mismatch, "cannot open " + path.string());
    return parse_session(in);
}

inline std::string serialize_session(const SessionRecord& r) {
    std::string out;
    for (const auto& l : r.lines()) out += l + "\n";
    return out;
}

inline void save_session(const std::filesystem::path& path, const SessionRecord& r) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(errc::invalid_config, "cannot write " + tmp);
        out << serialize_session(r);
        if (!out.flush()) fail(errc::invalid_config, "write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

// Appends one line per call with a single write(2) and fsyncs before returning.
class DurableAppender {
public:
    explicit DurableAppender(const std::filesystem::path& path) {
        fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
        if (fd_ < 0) fail(errc::invalid_config, "cannot open " + path.string() + " for append");
    }
    DurableAppender(const DurableAppender&) = delete;
    DurableAppender& operator=(const DurableAppender&) = delete;
    ~DurableAppender() {
        if (fd_ >= 0) ::close(fd_);
    }

    void append(const std::string& line) {
        const std::string buf = line + "\n";
        std::size_t off = 0;
        while (off < buf.size()) {
            const auto n = ::write(fd_, buf.data() + off, buf.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                fail(errc::invalid_config, "append failed");
            }
            off += static_cast<std::size_t>(n);
        }
        if (::fsync(fd_) != 0) fail(errc::invalid_config, "fsync failed");
    }

private:
    int fd_ = -1;
};

// --- CSV ----------------------------------------------------------------------------------

struct CsvExport {
    std::string text;
    std::size_t rows = 0;
    std::vector<std::string> warnings;  // one per skipped session
};

struct NamedChoiceSession {
    std::string subject;
    const ChoiceSession* session;
};

struct NamedMagnitudeSession {
    std::string subject;
    const MagnitudeSession* session;
};

inline CsvExport export_choice_csv(std::vector<NamedChoiceSession> sessions) {
    std::stable_sort(sessions.begin(), sessions.end(), [](const auto& a, const auto& b) { return a.subject < b.subject; });
    CsvExport out;
    out.text = "subject,interval_months,ep,dv\n";
    for (const auto& s : sessions) {
        if (s.session->status() != SessionStatus::Complete) {
            out.warnings.push_back(fmt::format("skipped incomplete choice session for subject {}", s.subject));
            continue;
        }
        for (const auto& e : session_equivalence_points(*s.session)) {
            out.text += fmt::format("{},{},{},{}\n", s.subject, e.interval, e.ep, e.dv);
            ++out.rows;
        }
    }
    return out;
}

inline CsvExport export_magnitude_csv(std::vector<NamedMagnitudeSession> sessions) {
    std::stable_sort(sessions.begin(), sessions.end(), [](const auto& a, const auto& b) { return a.subject < b.subject; });
    CsvExport out;
    out.text = "subject,interval_months,mean_px,n_missing\n";
    for (const auto& s : sessions) {
        if (!s.session->complete()) {
            out.warnings.push_back(fmt::format("skipped incomplete magnitude session for subject {}", s.subject));
            continue;
        }
        for (const auto& c : magnitude_cells(*s.session)) {
            out.text += fmt::format("{},{},{},{}\n", s.subject, c.interval, c.mean_px ? fmt::format("{}", *c.mean_px) : "",
                                    c.n_missing);
            ++out.rows;
        }
    }
    return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s) {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
}

} // namespace detail

// Reads a CSV written by export_*_csv back into per-subject series, ordered by subject.
// value_column is "dv", "ep" or "mean_px"; empty cells are skipped.
inline std::map<std::string, DataSeries> ingest_csv(std::istream& in, const std::string& value_column) {
    std::string line;
    if (!std::getline(in, line)) fail(errc::schema_mismatch, "CSV is empty");
    const auto header = detail::split_csv_line(line);
    const auto col = std::find(header.begin(), header.end(), value_column);
    if (header.size() < 3 || header[0] != "subject" || header[1] != "interval_months" || col == header.end())
        fail(errc::schema_mismatch, "unexpected CSV header: " + line);
    const auto vi = static_cast<std::size_t>(col - header.begin());
    std::map<std::string, DataSeries> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) fail(errc::schema_mismatch, fmt::format("line {} has {} cells", lineno, cells.size()));
        try {
            if (cells[vi].empty()) continue;
            out[cells[0]].points.push_back({detail::parse_double(cells[1]), detail::parse_double(cells[vi])});
        } catch (const std::exception&) {
            fail(errc::schema_mismatch, fmt::format("line {} has a non-numeric cell", lineno));
        }
    }
    return out;
}

} // namespace impatience
