#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "icueval/csv.hpp"
#include "icueval/errors.hpp"
#include "icueval/text.hpp"

namespace icueval {

/// One ICU unit stay (patientunitstayid). The identifier every event table
/// joins on.
struct StayId {
    std::int64_t value = 0;
    auto operator<=>(const StayId&) const = default;
};

/// Age as recorded: an integer 0..89, or the de-identification sentinel for
/// anyone older (the source stores it as ">89").
class AgeValue {
public:
    static AgeValue years(int y) { return AgeValue(y); }
    static AgeValue over89() { return AgeValue(); }

    bool is_over89() const { return !years_.has_value(); }
    int years_value() const { return *years_; }

    /// Scalar used for filters and age-distance tie-breaks; the sentinel
    /// compares as 90.
    int comparison_value() const { return years_ ? *years_ : 90; }

    std::string render() const { return years_ ? std::to_string(*years_) : "> 89"; }

    bool operator==(const AgeValue&) const = default;

private:
    AgeValue() = default;
    explicit AgeValue(int y) : years_(y) {}
    std::optional<int> years_;
};

/// ">89" (with or without inner/outer whitespace) is the over-89 sentinel;
/// decimal integers 0..89 parse as-is. Anything else is a data error, never
/// silently clamped.
inline AgeValue parse_age(std::string_view raw) {
    std::string_view s = trim(raw);
    if (s.empty()) throw Error(errc::non_numeric_age, "empty age");
    if (s.front() == '>') {
        std::string_view rest = trim(s.substr(1));
        if (rest == "89") return AgeValue::over89();
        throw Error(errc::non_numeric_age, "unrecognized age token '" + std::string(raw) + "'");
    }
    auto value = parse_int(s);
    if (!value) throw Error(errc::non_numeric_age, "unrecognized age token '" + std::string(raw) + "'");
    if (*value < 0 || *value > 89) {
        throw Error(errc::age_out_of_range,
                    "age " + std::to_string(*value) + " outside 0..89 and not the >89 sentinel");
    }
    return AgeValue::years(static_cast<int>(*value));
}

inline std::string render_age(const AgeValue& age) { return age.render(); }

enum class Gender { female, male, other };

inline const char* gender_name(Gender g) {
    switch (g) {
        case Gender::female: return "Female";
        case Gender::male: return "Male";
        case Gender::other: return "Unknown";
    }
    return "Unknown";
}

inline Gender parse_gender(std::string_view raw) {
    std::string g = to_lower(trim(raw));
    if (g == "female") return Gender::female;
    if (g == "male") return Gender::male;
    return Gender::other;
}

enum class DischargeStatus { alive, expired, unknown };

inline const char* discharge_status_name(DischargeStatus s) {
    switch (s) {
        case DischargeStatus::alive: return "Alive";
        case DischargeStatus::expired: return "Expired";
        case DischargeStatus::unknown: return "Unknown";
    }
    return "Unknown";
}

inline DischargeStatus parse_discharge_status(std::string_view raw) {
    std::string s = to_lower(trim(raw));
    if (s == "alive") return DischargeStatus::alive;
    if (s == "expired") return DischargeStatus::expired;
    return DischargeStatus::unknown;
}

/// Administrative row for one stay. Hospital-level identifiers are carried
/// opaquely; nothing downstream keys on them.
struct PatientStay {
    StayId stay_id;
    std::string unique_pid;
    std::string health_system_stay_id;
    Gender gender = Gender::other;
    AgeValue age = AgeValue::years(0);
    std::string disease;
    DischargeStatus discharge_status = DischargeStatus::unknown;
};

/// Offsets are minutes since unit admission. Negative offsets occur in real
/// exports (events charted before admission) and are kept.
struct DiagnosisEvent {
    StayId stay_id;
    int offset_min = 0;
    std::string path; // pipe-delimited hierarchy
};

struct TreatmentEvent {
    StayId stay_id;
    int offset_min = 0;
    std::string path;
};

/// Missing vital fields stay absent; 0 is a meaningful physiologic value
/// and never a placeholder.
struct VitalSample {
    StayId stay_id;
    int offset_min = 0;
    std::optional<double> sao2;
    std::optional<double> heartrate;
    std::optional<double> respiration;
};

/// One stay with its event lists, each non-decreasing in offset.
struct PatientRecord {
    PatientStay stay;
    std::vector<DiagnosisEvent> diagnoses;
    std::vector<TreatmentEvent> treatments;
    std::vector<VitalSample> vitals;
};

enum class TableKind { patient, diagnosis, treatment, vitals };

inline const char* table_kind_name(TableKind k) {
    switch (k) {
        case TableKind::patient: return "patient";
        case TableKind::diagnosis: return "diagnosis";
        case TableKind::treatment: return "treatment";
        case TableKind::vitals: return "vitals";
    }
    return "?";
}

struct RowIssue {
    std::size_t row_number = 0; // 1-based data row index
    std::string message;
};

/// Loader output: parsed rows plus the rows it refused, so
/// count(rows) + count(skipped) always equals the data-row count.
template <typename T>
struct LoadResult {
    std::vector<T> rows;
    std::vector<RowIssue> skipped;
};

namespace detail {

inline StayId parse_stay_id(std::string_view raw) {
    auto v = parse_int(raw);
    if (!v || *v <= 0) {
        throw Error(errc::malformed_row, "patientunitstayid must be a positive integer, got '" +
                                             std::string(raw) + "'");
    }
    return StayId{*v};
}

inline int parse_offset(std::string_view raw) {
    auto v = parse_int(raw);
    if (!v) throw Error(errc::malformed_row, "offset must be an integer, got '" + std::string(raw) + "'");
    return static_cast<int>(*v);
}

inline std::string parse_path(std::string_view raw, const char* what) {
    std::string_view s = trim(raw);
    if (s.empty()) throw Error(errc::malformed_row, std::string(what) + " is empty");
    bool any_segment = false;
    for (const auto& seg : split(s, '|')) {
        if (!trim(seg).empty()) {
            any_segment = true;
            break;
        }
    }
    if (!any_segment) throw Error(errc::malformed_row, std::string(what) + " has no non-empty segment");
    return std::string(s);
}

inline std::optional<double> parse_vital_field(std::string_view raw, const char* name, double lo,
                                               double hi) {
    if (trim(raw).empty()) return std::nullopt;
    auto v = parse_double(raw);
    if (!v) throw Error(errc::malformed_row, std::string(name) + " is not numeric: '" + std::string(raw) + "'");
    if (*v < lo || *v > hi) {
        throw Error(errc::malformed_row,
                    std::string(name) + " value " + format_full(*v) + " outside [" + format_full(lo) +
                        ", " + format_full(hi) + "]");
    }
    return v;
}

template <typename T, typename RowFn>
LoadResult<T> load_rows(const std::string& path, bool strict, RowFn&& row_fn) {
    CsvTable table = read_csv_file(path);
    LoadResult<T> result;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        try {
            result.rows.push_back(row_fn(table, table.rows[i]));
        } catch (const Error& e) {
            if (strict) throw;
            result.skipped.push_back({i + 1, e.what()});
        }
    }
    return result;
}

inline const std::string& field(const std::vector<std::string>& row, std::size_t idx) {
    static const std::string empty;
    return idx < row.size() ? row[idx] : empty;
}

} // namespace detail

inline LoadResult<PatientStay> load_patients(const std::string& path, bool strict = false) {
    CsvTable probe = read_csv_file(path);
    const std::size_t c_id = probe.require_column("patientunitstayid");
    const std::size_t c_pid = probe.require_column("uniquepid");
    const std::size_t c_hss = probe.require_column("patienthealthsystemstayid");
    const std::size_t c_gender = probe.require_column("gender");
    const std::size_t c_age = probe.require_column("age");
    const std::size_t c_dx = probe.require_column("apacheadmissiondx");
    const std::size_t c_status = probe.require_column("unitdischargestatus");
    return detail::load_rows<PatientStay>(
        path, strict, [&](const CsvTable&, const std::vector<std::string>& row) {
            PatientStay stay;
            stay.stay_id = detail::parse_stay_id(detail::field(row, c_id));
            stay.unique_pid = detail::field(row, c_pid);
            stay.health_system_stay_id = detail::field(row, c_hss);
            stay.gender = parse_gender(detail::field(row, c_gender));
            stay.age = parse_age(detail::field(row, c_age));
            stay.disease = std::string(trim(detail::field(row, c_dx)));
            stay.discharge_status = parse_discharge_status(detail::field(row, c_status));
            return stay;
        });
}

inline LoadResult<DiagnosisEvent> load_diagnoses(const std::string& path, bool strict = false) {
    CsvTable probe = read_csv_file(path);
    const std::size_t c_id = probe.require_column("patientunitstayid");
    const std::size_t c_offset = probe.require_column("diagnosisoffset");
    const std::size_t c_path = probe.require_column("diagnosisstring");
    return detail::load_rows<DiagnosisEvent>(
        path, strict, [&](const CsvTable&, const std::vector<std::string>& row) {
            DiagnosisEvent e;
            e.stay_id = detail::parse_stay_id(detail::field(row, c_id));
            e.offset_min = detail::parse_offset(detail::field(row, c_offset));
            e.path = detail::parse_path(detail::field(row, c_path), "diagnosisstring");
            return e;
        });
}

inline LoadResult<TreatmentEvent> load_treatments(const std::string& path, bool strict = false) {
    CsvTable probe = read_csv_file(path);
    const std::size_t c_id = probe.require_column("patientunitstayid");
    const std::size_t c_offset = probe.require_column("treatmentoffset");
    const std::size_t c_path = probe.require_column("treatmentstring");
    return detail::load_rows<TreatmentEvent>(
        path, strict, [&](const CsvTable&, const std::vector<std::string>& row) {
            TreatmentEvent e;
            e.stay_id = detail::parse_stay_id(detail::field(row, c_id));
            e.offset_min = detail::parse_offset(detail::field(row, c_offset));
            e.path = detail::parse_path(detail::field(row, c_path), "treatmentstring");
            return e;
        });
}

inline LoadResult<VitalSample> load_vitals(const std::string& path, bool strict = false) {
    CsvTable probe = read_csv_file(path);
    const std::size_t c_id = probe.require_column("patientunitstayid");
    const std::size_t c_offset = probe.require_column("observationoffset");
    const std::size_t c_sao2 = probe.require_column("sao2");
    const std::size_t c_hr = probe.require_column("heartrate");
    const std::size_t c_resp = probe.require_column("respiration");
    return detail::load_rows<VitalSample>(
        path, strict, [&](const CsvTable&, const std::vector<std::string>& row) {
            VitalSample s;
            s.stay_id = detail::parse_stay_id(detail::field(row, c_id));
            s.offset_min = detail::parse_offset(detail::field(row, c_offset));
            s.sao2 = detail::parse_vital_field(detail::field(row, c_sao2), "sao2", 0.0, 100.0);
            s.heartrate = detail::parse_vital_field(detail::field(row, c_hr), "heartrate", 0.0, 1e9);
            s.respiration =
                detail::parse_vital_field(detail::field(row, c_resp), "respiration", 0.0, 1e9);
            return s;
        });
}

using LoadedTable = std::variant<LoadResult<PatientStay>, LoadResult<DiagnosisEvent>,
                                 LoadResult<TreatmentEvent>, LoadResult<VitalSample>>;

/// Kind-dispatched loader for callers that treat the four tables uniformly.
inline LoadedTable load_table(const std::string& path, TableKind kind, bool strict = false) {
    switch (kind) {
        case TableKind::patient: return load_patients(path, strict);
        case TableKind::diagnosis: return load_diagnoses(path, strict);
        case TableKind::treatment: return load_treatments(path, strict);
        case TableKind::vitals: return load_vitals(path, strict);
    }
    throw Error(errc::invalid_argument, "unknown table kind");
}

/// assemble_records output. Events referencing stay ids absent from the
/// patient table are counted, not dropped silently.
struct AssembleResult {
    std::vector<PatientRecord> records;
    std::size_t orphan_diagnoses = 0;
    std::size_t orphan_treatments = 0;
    std::size_t orphan_vitals = 0;
};

/// Groups events by stay and stably sorts each list by offset, so rows that
/// share an offset keep their input order. Record order follows the patient
/// row order.
inline AssembleResult assemble_records(const std::vector<PatientStay>& patients,
                                       const std::vector<DiagnosisEvent>& diagnoses,
                                       const std::vector<TreatmentEvent>& treatments,
                                       const std::vector<VitalSample>& vitals) {
    AssembleResult out;
    out.records.reserve(patients.size());
    std::map<StayId, std::size_t> index;
    for (const auto& stay : patients) {
        if (index.count(stay.stay_id)) {
            throw Error(errc::duplicate_stay_id,
                        "patientunitstayid " + std::to_string(stay.stay_id.value) +
                            " appears more than once");
        }
        index[stay.stay_id] = out.records.size();
        out.records.push_back(PatientRecord{stay, {}, {}, {}});
    }
    for (const auto& e : diagnoses) {
        auto it = index.find(e.stay_id);
        if (it == index.end()) {
            ++out.orphan_diagnoses;
            continue;
        }
        out.records[it->second].diagnoses.push_back(e);
    }
    for (const auto& e : treatments) {
        auto it = index.find(e.stay_id);
        if (it == index.end()) {
            ++out.orphan_treatments;
            continue;
        }
        out.records[it->second].treatments.push_back(e);
    }
    for (const auto& s : vitals) {
        auto it = index.find(s.stay_id);
        if (it == index.end()) {
            ++out.orphan_vitals;
            continue;
        }
        out.records[it->second].vitals.push_back(s);
    }
    auto by_offset = [](const auto& a, const auto& b) { return a.offset_min < b.offset_min; };
    for (auto& record : out.records) {
        std::stable_sort(record.diagnoses.begin(), record.diagnoses.end(), by_offset);
        std::stable_sort(record.treatments.begin(), record.treatments.end(), by_offset);
        std::stable_sort(record.vitals.begin(), record.vitals.end(), by_offset);
    }
    return out;
}

} // namespace icueval
