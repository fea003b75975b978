#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icueval/errors.hpp"
#include "icueval/ingest.hpp"
#include "icueval/text.hpp"

namespace icueval {

/// Half-open minute range [start_min, end_min).
struct TimeWindow {
    int start_min = 0;
    int end_min = 0;

    bool contains(int offset) const { return offset >= start_min && offset < end_min; }
    bool operator==(const TimeWindow&) const = default;
};

/// Per-signal window statistics. count == 0 means the signal was absent from
/// the window and the four statistics are meaningless.
struct SignalStats {
    std::size_t count = 0;
    double mean = 0;
    double median = 0;
    double max = 0;
    double min = 0;
};

struct VitalSummary {
    SignalStats sao2;
    SignalStats heartrate;
    SignalStats respiration;
    std::size_t sample_count = 0; // samples in the window, any signal present or not

    bool any_signal() const {
        return sao2.count > 0 || heartrate.count > 0 || respiration.count > 0;
    }
};

/// Controls which event categories a narrative carries. cutoff_min drops
/// events (and samples) at or after the cutoff.
struct NarrativePolicy {
    bool include_diagnoses = true;
    bool include_treatments = true;
    bool include_vitals = true;
    std::optional<int> cutoff_min;
};

/// Treatment-phase windows: one window ending at each distinct treatment
/// offset, starting at the previous one. The first window opens at
/// min(0, earliest vital offset) so pre-admission samples are never dropped.
inline std::vector<TimeWindow> segment_by_treatments(const PatientRecord& record) {
    if (record.treatments.empty()) {
        throw Error(errc::no_treatments,
                    "stay " + std::to_string(record.stay.stay_id.value) + " has no treatments");
    }
    std::vector<int> boundaries;
    for (const auto& t : record.treatments) boundaries.push_back(t.offset_min);
    std::sort(boundaries.begin(), boundaries.end());
    boundaries.erase(std::unique(boundaries.begin(), boundaries.end()), boundaries.end());

    int start = 0;
    for (const auto& v : record.vitals) start = std::min(start, v.offset_min);
    start = std::min(start, boundaries.front());

    std::vector<TimeWindow> windows;
    for (int boundary : boundaries) {
        if (boundary > start) windows.push_back(TimeWindow{start, boundary});
        start = boundary;
    }
    return windows;
}

namespace detail {

inline SignalStats signal_stats(std::vector<double>& values) {
    SignalStats stats;
    stats.count = values.size();
    if (values.empty()) return stats;
    double sum = 0;
    for (double v : values) sum += v;
    stats.mean = sum / static_cast<double>(values.size());
    std::sort(values.begin(), values.end());
    stats.min = values.front();
    stats.max = values.back();
    std::size_t n = values.size();
    stats.median = (n % 2 == 1) ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
    return stats;
}

} // namespace detail

/// Statistics over present values with offsets inside the window. Samples
/// need not be sorted or equally spaced; absent fields are skipped per
/// signal. Even-count medians take the midpoint of the two middle values.
inline VitalSummary aggregate_vitals(std::span<const VitalSample> samples, TimeWindow window) {
    std::vector<double> sao2, heartrate, respiration;
    VitalSummary summary;
    for (const auto& s : samples) {
        if (!window.contains(s.offset_min)) continue;
        ++summary.sample_count;
        if (s.sao2) sao2.push_back(*s.sao2);
        if (s.heartrate) heartrate.push_back(*s.heartrate);
        if (s.respiration) respiration.push_back(*s.respiration);
    }
    summary.sao2 = detail::signal_stats(sao2);
    summary.heartrate = detail::signal_stats(heartrate);
    summary.respiration = detail::signal_stats(respiration);
    return summary;
}

namespace detail {

inline void append_signal(std::string& out, const char* name, const SignalStats& stats,
                          bool& first) {
    if (stats.count == 0) return;
    if (!first) out += ", ";
    first = false;
    out += name;
    out += ": ";
    out += format_full(stats.mean) + "(mean) ";
    out += format_one_decimal(stats.median) + "(median) ";
    out += format_one_decimal(stats.max) + "(max) ";
    out += format_one_decimal(stats.min) + "(min)";
}

} // namespace detail

/// "vitalperiodic: sao2: M(mean) M(median) M(max) M(min), heartrate: ..."
/// Means print at full precision; median/max/min at one decimal. Signals
/// with no samples are omitted; an all-empty summary renders to "".
inline std::string render_vital_clause(const VitalSummary& summary) {
    if (!summary.any_signal()) return "";
    std::string out = "vitalperiodic: ";
    bool first = true;
    detail::append_signal(out, "sao2", summary.sao2, first);
    detail::append_signal(out, "heartrate", summary.heartrate, first);
    detail::append_signal(out, "respiration", summary.respiration, first);
    return out;
}

/// Copy of the record keeping only events and samples inside the window.
inline PatientRecord restrict_to_window(const PatientRecord& record, TimeWindow window) {
    PatientRecord out;
    out.stay = record.stay;
    for (const auto& d : record.diagnoses)
        if (window.contains(d.offset_min)) out.diagnoses.push_back(d);
    for (const auto& t : record.treatments)
        if (window.contains(t.offset_min)) out.treatments.push_back(t);
    for (const auto& v : record.vitals)
        if (window.contains(v.offset_min)) out.vitals.push_back(v);
    return out;
}

/// Offset-ordered narrative wire format. Per distinct offset: a grouped
/// "diagnosis: p1, p2 (offset: N)" clause, then "treatment: p (Offset: N)"
/// (the capitalization asymmetry is part of the format), then a
/// "vitalperiodic:" clause summarizing the window since the previous
/// treatment boundary. Clauses are comma-joined. Diagnoses sharing an offset
/// keep their stored order.
inline std::string render_narrative(const PatientRecord& record, const NarrativePolicy& policy) {
    if (!policy.include_diagnoses && !policy.include_treatments && !policy.include_vitals) {
        throw Error(errc::config_invalid, "narrative policy includes no event category");
    }
    auto kept = [&](int offset) { return !policy.cutoff_min || offset < *policy.cutoff_min; };

    std::map<int, std::vector<const std::string*>> diagnoses_at;
    for (const auto& d : record.diagnoses)
        if (kept(d.offset_min)) diagnoses_at[d.offset_min].push_back(&d.path);
    std::map<int, std::vector<const std::string*>> treatments_at;
    for (const auto& t : record.treatments)
        if (kept(t.offset_min)) treatments_at[t.offset_min].push_back(&t.path);
    std::vector<VitalSample> kept_vitals;
    for (const auto& v : record.vitals)
        if (kept(v.offset_min)) kept_vitals.push_back(v);

    std::vector<int> offsets;
    for (const auto& [o, _] : diagnoses_at) offsets.push_back(o);
    for (const auto& [o, _] : treatments_at)
        if (!diagnoses_at.count(o)) offsets.push_back(o);
    std::sort(offsets.begin(), offsets.end());

    int window_start = 0;
    for (const auto& v : kept_vitals) window_start = std::min(window_start, v.offset_min);
    if (!treatments_at.empty()) window_start = std::min(window_start, treatments_at.begin()->first);

    std::vector<std::string> clauses;
    for (int offset : offsets) {
        if (policy.include_diagnoses) {
            if (auto it = diagnoses_at.find(offset); it != diagnoses_at.end()) {
                std::string clause = "diagnosis: ";
                for (std::size_t i = 0; i < it->second.size(); ++i) {
                    if (i) clause += ", ";
                    clause += *it->second[i];
                }
                clause += " (offset: " + std::to_string(offset) + ")";
                clauses.push_back(std::move(clause));
            }
        }
        if (auto it = treatments_at.find(offset); it != treatments_at.end()) {
            if (policy.include_treatments) {
                std::string clause = "treatment: ";
                for (std::size_t i = 0; i < it->second.size(); ++i) {
                    if (i) clause += ", ";
                    clause += *it->second[i];
                }
                clause += " (Offset: " + std::to_string(offset) + ")";
                clauses.push_back(std::move(clause));
            }
            if (policy.include_vitals && offset > window_start) {
                VitalSummary summary =
                    aggregate_vitals(kept_vitals, TimeWindow{window_start, offset});
                std::string clause = render_vital_clause(summary);
                if (!clause.empty()) clauses.push_back(std::move(clause));
            }
            window_start = offset;
        }
    }

    if (clauses.empty()) {
        throw Error(errc::empty_narrative, "policy filtered out every event of stay " +
                                               std::to_string(record.stay.stay_id.value));
    }
    std::string out;
    for (std::size_t i = 0; i < clauses.size(); ++i) {
        if (i) out += ", ";
        out += clauses[i];
    }
    return out;
}

} // namespace icueval
