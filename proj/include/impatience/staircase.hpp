#pragma once

// Adaptive staircase for the intertemporal choice task.
//
// Each interval runs its own staircase: the later amount starts at 150 and is
// multiplied by 1.1 after a Now choice and by 0.9 after a Later choice. An
// interval terminates once it has three choice inversions whose second trial
// comes after the interval's 10th trial. Intervals are presented in a fresh
// random order every block; finished intervals leave the rotation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "impatience/error.hpp"
#include "impatience/fitting.hpp"

namespace impatience {

inline std::vector<double> default_interval_grid() {
    std::vector<double> g;
    for (int m = 3; m <= 36; m += 3) g.push_back(m);
    return g;
}

enum class Choice { Now, Later };

struct StaircaseConfig {
    std::vector<double> intervals = default_interval_grid();
    double now_amount = 100.0;
    double start_later = 150.0;
    double step = 0.10;
    int gate_trial = 10;            // inversions count once the second trial index exceeds this
    int inversions_required = 3;
    int max_trials_per_interval = 60;

    void validate() const {
        require(!intervals.empty(), errc::invalid_config, "no intervals configured");
        for (double t : intervals)
            require(std::isfinite(t) && t >= 0.0, errc::invalid_config, "intervals must be non-negative months");
        auto sorted = intervals;
        std::sort(sorted.begin(), sorted.end());
        require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), errc::invalid_config,
                "intervals must be distinct");
        require(step > 0.0 && step < 1.0, errc::invalid_config, "step must be in (0, 1)");
        require(now_amount > 0.0 && start_later > 0.0, errc::invalid_config, "amounts must be positive");
        require(inversions_required >= 1, errc::invalid_config, "inversions_required must be >= 1");
        require(gate_trial >= 0, errc::invalid_config, "gate_trial must be >= 0");
        require(max_trials_per_interval > gate_trial, errc::invalid_config, "trial cap must exceed the gate");
    }

    friend bool operator==(const StaircaseConfig&, const StaircaseConfig&) = default;
};

struct ChoiceTrial {
    double interval = 0.0;
    double now_amount = 0.0;
    double later_amount = 0.0;
    std::size_t index_global = 0;           // 1-based over the session
    std::size_t index_within_interval = 0;  // 1-based within the interval's staircase

    friend bool operator==(const ChoiceTrial&, const ChoiceTrial&) = default;
};

struct ChoiceRecord {
    ChoiceTrial trial;
    Choice choice = Choice::Now;
    std::optional<double> response_time;
    bool inversion = false;  // choice differs from this interval's previous choice

    friend bool operator==(const ChoiceRecord&, const ChoiceRecord&) = default;
};

enum class SessionStatus { Running, Complete, Capped };

inline std::string_view to_string(SessionStatus s) {
    switch (s) {
    case SessionStatus::Running: return "running";
    case SessionStatus::Complete: return "complete";
    case SessionStatus::Capped: return "capped";
    }
    return "unknown";
}

struct EquivalencePoint {
    double interval = 0.0;
    double ep = 0.0;
    double dv = 0.0;
    std::vector<double> inversion_points;
};

// Later amount after the given numbers of Now and Later choices. Computed from the
// counts so that the value does not depend on the order of the choices.
inline double later_amount_after(const StaircaseConfig& cfg, std::size_t n_now, std::size_t n_later) {
    return cfg.start_later * std::pow(1.0 + cfg.step, static_cast<double>(n_now)) *
           std::pow(1.0 - cfg.step, static_cast<double>(n_later));
}

// Indices (0-based, into history) of the trials that close a counted inversion.
inline std::vector<std::size_t> gated_inversions(std::span<const ChoiceRecord> history, int gate_trial) {
    std::vector<std::size_t> out;
    for (std::size_t i = 1; i < history.size(); ++i)
        if (history[i].choice != history[i - 1].choice && static_cast<int>(i + 1) > gate_trial) out.push_back(i);
    return out;
}

// Mean of the first required inversion midpoints after the gate; dv = now / ep.
inline EquivalencePoint equivalence_point(std::span<const ChoiceRecord> history, const StaircaseConfig& cfg = {}) {
    const auto inv = gated_inversions(history, cfg.gate_trial);
    if (inv.size() < static_cast<std::size_t>(cfg.inversions_required))
        fail(errc::incomplete, "interval has not met the termination rule");
    EquivalencePoint e;
    e.interval = history.empty() ? 0.0 : history.front().trial.interval;
    double sum = 0.0;
    for (int k = 0; k < cfg.inversions_required; ++k) {
        const std::size_t i = inv[static_cast<std::size_t>(k)];
        const double mid = 0.5 * (history[i - 1].trial.later_amount + history[i].trial.later_amount);
        e.inversion_points.push_back(mid);
        sum += mid;
    }
    e.ep = sum / cfg.inversions_required;
    e.dv = cfg.now_amount / e.ep;
    return e;
}

class ChoiceSession {
public:
    explicit ChoiceSession(std::uint64_t seed, StaircaseConfig config = {})
        : config_(std::move(config)), seed_(seed), rng_(seed) {
        config_.validate();
        histories_.resize(config_.intervals.size());
        draw_block();
    }

    // The outstanding trial, issuing a new one if none is pending. Repeated calls
    // without an answer return the same trial.
    const ChoiceTrial& next_trial() {
        if (outstanding_) return *outstanding_;
        if (status() != SessionStatus::Running) fail(errc::session_complete, "no trials left in this session");
        if (queue_.empty()) draw_block();
        const std::size_t slot = queue_.front();
        queue_.erase(queue_.begin());

        const auto& h = histories_[slot];
        const auto n_later = static_cast<std::size_t>(
            std::count_if(h.begin(), h.end(), [](const ChoiceRecord& r) { return r.choice == Choice::Later; }));
        ChoiceTrial t;
        t.interval = config_.intervals[slot];
        t.now_amount = config_.now_amount;
        t.later_amount = later_amount_after(config_, h.size() - n_later, n_later);
        t.index_global = log_.size() + 1;
        t.index_within_interval = h.size() + 1;
        outstanding_ = t;
        return *outstanding_;
    }

    void record_choice(const ChoiceTrial& trial, Choice choice, std::optional<double> response_time = {}) {
        if (!outstanding_ || !(trial == *outstanding_)) fail(errc::stale_trial, "trial is not the outstanding one");
        auto& h = histories_[slot_of(trial.interval)];
        ChoiceRecord rec{trial, choice, response_time, !h.empty() && h.back().choice != choice};
        h.push_back(rec);
        log_.push_back(rec);
        outstanding_.reset();
    }

    bool interval_complete(double interval) const {
        const auto& h = histories_[slot_of(interval)];
        return gated_inversions(h, config_.gate_trial).size() >= static_cast<std::size_t>(config_.inversions_required);
    }

    bool interval_capped(double interval) const {
        return !interval_complete(interval) &&
               histories_[slot_of(interval)].size() >= static_cast<std::size_t>(config_.max_trials_per_interval);
    }

    SessionStatus status() const {
        bool capped = false;
        for (double t : config_.intervals) {
            if (interval_complete(t)) continue;
            if (!interval_capped(t)) return SessionStatus::Running;
            capped = true;
        }
        return capped ? SessionStatus::Capped : SessionStatus::Complete;
    }

    std::span<const ChoiceRecord> history(double interval) const { return histories_[slot_of(interval)]; }
    // Every record in presentation order.
    std::span<const ChoiceRecord> records() const { return log_; }
    const std::optional<ChoiceTrial>& outstanding() const { return outstanding_; }
    std::size_t total_trials() const { return log_.size(); }
    std::uint64_t seed() const { return seed_; }
    const StaircaseConfig& config() const { return config_; }

    EquivalencePoint equivalence_point(double interval) const {
        auto e = impatience::equivalence_point(history(interval), config_);
        e.interval = interval;
        return e;
    }

private:
    std::size_t slot_of(double interval) const {
        const auto it = std::find(config_.intervals.begin(), config_.intervals.end(), interval);
        if (it == config_.intervals.end()) fail(errc::unknown_interval, "interval " + std::to_string(interval) + " is not configured");
        return static_cast<std::size_t>(it - config_.intervals.begin());
    }

    void draw_block() {
        queue_.clear();
        for (std::size_t i = 0; i < config_.intervals.size(); ++i) {
            const double t = config_.intervals[i];
            if (!interval_complete(t) && !interval_capped(t)) queue_.push_back(i);
        }
        std::shuffle(queue_.begin(), queue_.end(), rng_);
    }

    StaircaseConfig config_;
    std::uint64_t seed_;
    std::mt19937_64 rng_;
    std::vector<std::vector<ChoiceRecord>> histories_;
    std::vector<ChoiceRecord> log_;
    std::vector<std::size_t> queue_;
    std::optional<ChoiceTrial> outstanding_;
};

inline std::vector<EquivalencePoint> session_equivalence_points(const ChoiceSession& s) {
    if (s.status() != SessionStatus::Complete) fail(errc::incomplete, "choice session is not complete");
    auto intervals = s.config().intervals;
    std::sort(intervals.begin(), intervals.end());
    std::vector<EquivalencePoint> out;
    for (double t : intervals) out.push_back(s.equivalence_point(t));
    return out;
}

// (interval, dv) ordered by interval.
inline DataSeries session_dv_series(const ChoiceSession& s) {
    DataSeries out;
    for (const auto& e : session_equivalence_points(s)) out.points.push_back({e.interval, e.dv});
    return out;
}

} // namespace impatience
