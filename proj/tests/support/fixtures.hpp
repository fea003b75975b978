#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "icueval/ingest.hpp"
#include "icueval/scoring.hpp"

#ifndef ICUEVAL_SOURCE_DIR
#error "tests need ICUEVAL_SOURCE_DIR"
#endif

namespace testsupport {

inline std::string source_dir() { return ICUEVAL_SOURCE_DIR; }

inline std::string fixture_data_dir() { return source_dir() + "/data/eicu_synth"; }

inline std::string golden_path(const std::string& name) {
    return source_dir() + "/tests/golden/" + name;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
}

/// Fresh unique directory under the system temp dir.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<unsigned> counter{0};
        auto base = std::filesystem::temp_directory_path();
        path_ = base / ("icueval_" + tag + "_" + std::to_string(::getpid()) + "_" +
                        std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::string str() const { return path_.string(); }

private:
    std::filesystem::path path_;
};

/// The assembled fixture corpus, loaded once.
inline const std::vector<icueval::PatientRecord>& fixture_records() {
    static const std::vector<icueval::PatientRecord> records = [] {
        auto dir = fixture_data_dir();
        auto patients = icueval::load_patients(dir + "/patient.csv", true);
        auto diagnoses = icueval::load_diagnoses(dir + "/diagnosis.csv", true);
        auto treatments = icueval::load_treatments(dir + "/treatment.csv", true);
        auto vitals = icueval::load_vitals(dir + "/vitalperiodic.csv", true);
        return icueval::assemble_records(patients.rows, diagnoses.rows, treatments.rows,
                                         vitals.rows)
            .records;
    }();
    return records;
}

inline const icueval::PatientRecord& fixture_record(std::int64_t stay_id) {
    for (const auto& record : fixture_records()) {
        if (record.stay.stay_id.value == stay_id) return record;
    }
    throw std::runtime_error("no fixture stay " + std::to_string(stay_id));
}

/// Random treatment items over a small alphabet so exact and parent
/// collisions actually happen.
inline icueval::TreatmentItem random_item(std::mt19937_64& rng) {
    static const std::vector<std::string> tops = {"pulmonary", "cardiovascular", "renal"};
    static const std::vector<std::string> mids = {"ventilation", "medications", "dialysis"};
    static const std::vector<std::string> leaves = {"alpha", "beta", "gamma", "delta"};
    icueval::TreatmentItem item;
    item.segments.push_back(tops[rng() % tops.size()]);
    if (rng() % 8 != 0) { // occasionally single-segment
        item.segments.push_back(mids[rng() % mids.size()]);
        if (rng() % 6 != 0) item.segments.push_back(leaves[rng() % leaves.size()]);
    }
    return item;
}

inline std::vector<icueval::TreatmentItem> random_plan(std::mt19937_64& rng, std::size_t max_items) {
    std::vector<icueval::TreatmentItem> plan;
    std::size_t n = rng() % (max_items + 1);
    for (std::size_t i = 0; i < n; ++i) plan.push_back(random_item(rng));
    return plan;
}

inline std::vector<icueval::VitalSample> random_vitals(std::mt19937_64& rng, std::size_t count) {
    std::vector<icueval::VitalSample> samples;
    for (std::size_t i = 0; i < count; ++i) {
        icueval::VitalSample s;
        s.stay_id = icueval::StayId{1};
        s.offset_min = static_cast<int>(rng() % 400) - 50;
        if (rng() % 5 != 0) s.sao2 = 85.0 + static_cast<double>(rng() % 16);
        if (rng() % 5 != 0) s.heartrate = 50.0 + static_cast<double>(rng() % 100);
        if (rng() % 5 != 0) s.respiration = 8.0 + static_cast<double>(rng() % 25);
        samples.push_back(s);
    }
    std::sort(samples.begin(), samples.end(),
              [](const auto& a, const auto& b) { return a.offset_min < b.offset_min; });
    return samples;
}

} // namespace testsupport
