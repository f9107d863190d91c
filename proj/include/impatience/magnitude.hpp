#pragma once

// Temporal magnitude estimation: each interval is answered by adjusting a
// horizontal line. Four training trials (random intervals) precede a random
// permutation of 5 repetitions x 12 intervals. Timeouts are stored as missing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "impatience/error.hpp"
#include "impatience/fitting.hpp"
#include "impatience/staircase.hpp"

namespace impatience {

struct MagnitudeConfig {
    std::vector<double> intervals = default_interval_grid();
    int repetitions = 5;
    int training_trials = 4;
    int max_px = 685;
    double response_window_s = 10.0;

    void validate() const {
        require(!intervals.empty(), errc::invalid_config, "no intervals configured");
        require(repetitions >= 1, errc::invalid_config, "repetitions must be >= 1");
        require(training_trials >= 0, errc::invalid_config, "training_trials must be >= 0");
        require(max_px > 0, errc::invalid_config, "max_px must be positive");
        require(response_window_s > 0.0, errc::invalid_config, "response window must be positive");
    }

    friend bool operator==(const MagnitudeConfig&, const MagnitudeConfig&) = default;
};

struct MagnitudeTrial {
    double interval = 0.0;
    int repetition = 0;  // 1-based; for training trials, the training ordinal
    bool is_training = false;
    std::size_t index = 0;  // 1-based position in the full schedule

    friend bool operator==(const MagnitudeTrial&, const MagnitudeTrial&) = default;
};

struct MagnitudeResponse {
    MagnitudeTrial trial;
    std::optional<int> line_px;  // empty on timeout
    double latency = 0.0;

    friend bool operator==(const MagnitudeResponse&, const MagnitudeResponse&) = default;
};

class MagnitudeSession {
public:
    explicit MagnitudeSession(std::uint64_t seed, MagnitudeConfig config = {}) : config_(std::move(config)), seed_(seed) {
        config_.validate();
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::size_t> pick(0, config_.intervals.size() - 1);
        for (int i = 0; i < config_.training_trials; ++i)
            schedule_.push_back({config_.intervals[pick(rng)], i + 1, true, 0});
        std::vector<MagnitudeTrial> main;
        for (double t : config_.intervals)
            for (int r = 1; r <= config_.repetitions; ++r) main.push_back({t, r, false, 0});
        std::shuffle(main.begin(), main.end(), rng);
        schedule_.insert(schedule_.end(), main.begin(), main.end());
        for (std::size_t i = 0; i < schedule_.size(); ++i) schedule_[i].index = i + 1;
    }

    bool complete() const { return responses_.size() == schedule_.size(); }

    const MagnitudeTrial& next_trial() const {
        if (complete()) fail(errc::session_complete, "no trials left in this session");
        return schedule_[responses_.size()];
    }

    // line_px empty records a timeout.
    void record(const MagnitudeTrial& trial, std::optional<int> line_px, double latency = 0.0) {
        if (complete() || !(trial == schedule_[responses_.size()]))
            fail(errc::stale_trial, "trial is not the outstanding one");
        if (line_px && (*line_px < 0 || *line_px > config_.max_px))
            fail(errc::out_of_range, "line length " + std::to_string(*line_px) + " px is outside [0, " +
                                         std::to_string(config_.max_px) + "]");
        if (!(latency >= 0.0 && latency <= config_.response_window_s))
            fail(errc::out_of_range, "latency outside the response window");
        responses_.push_back({trial, line_px, latency});
    }

    std::span<const MagnitudeTrial> schedule() const { return schedule_; }
    std::span<const MagnitudeResponse> responses() const { return responses_; }
    std::uint64_t seed() const { return seed_; }
    const MagnitudeConfig& config() const { return config_; }

private:
    MagnitudeConfig config_;
    std::uint64_t seed_;
    std::vector<MagnitudeTrial> schedule_;
    std::vector<MagnitudeResponse> responses_;
};

struct MagnitudeCell {
    double interval = 0.0;
    std::optional<double> mean_px;
    int n_missing = 0;
    int n_observed = 0;
};

// Per-interval mean over answered main trials, ordered by interval.
inline std::vector<MagnitudeCell> magnitude_cells(const MagnitudeSession& s) {
    if (!s.complete()) fail(errc::incomplete, "magnitude session is not complete");
    auto intervals = s.config().intervals;
    std::sort(intervals.begin(), intervals.end());
    std::vector<MagnitudeCell> out;
    for (double t : intervals) {
        MagnitudeCell c{t};
        std::vector<double> values;
        for (const auto& r : s.responses()) {
            if (r.trial.is_training || r.trial.interval != t) continue;
            if (r.line_px) values.push_back(*r.line_px);
            else ++c.n_missing;
        }
        c.n_observed = static_cast<int>(values.size());
        if (!values.empty()) c.mean_px = detail::stable_mean(values);
        out.push_back(c);
    }
    return out;
}

enum class MagnitudeSeriesMode { IntervalMeans, PerRepetition };

inline DataSeries magnitude_series(const MagnitudeSession& s, MagnitudeSeriesMode mode = MagnitudeSeriesMode::IntervalMeans) {
    DataSeries out;
    const auto cells = magnitude_cells(s);
    for (const auto& c : cells)
        if (!c.mean_px) fail(errc::empty_cell, "every repetition missing at t = " + std::to_string(c.interval));
    if (mode == MagnitudeSeriesMode::IntervalMeans) {
        for (const auto& c : cells) out.points.push_back({c.interval, *c.mean_px});
        return out;
    }
    for (const auto& c : cells)
        for (const auto& r : s.responses())
            if (!r.trial.is_training && r.trial.interval == c.interval && r.line_px)
                out.points.push_back({c.interval, static_cast<double>(*r.line_px)});
    return out;
}

} // namespace impatience
