#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "icueval/ingest.hpp"

#include "../support/fixtures.hpp"

using namespace icueval;

TEST_CASE("parse_age handles the recorded forms") {
    CHECK(parse_age("74") == AgeValue::years(74));
    CHECK(parse_age(" 74 ") == AgeValue::years(74));
    CHECK(parse_age("0") == AgeValue::years(0));
    CHECK(parse_age("89") == AgeValue::years(89));
    CHECK(parse_age(">89") == AgeValue::over89());
    CHECK(parse_age("> 89") == AgeValue::over89());
    CHECK(parse_age(" > 89 ") == AgeValue::over89());

    CHECK_THROWS_MATCHES(parse_age("abc"), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == errc::non_numeric_age;
                         }));
    CHECK_THROWS_MATCHES(parse_age(""), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == errc::non_numeric_age;
                         }));
    CHECK_THROWS_MATCHES(parse_age("> 90"), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == errc::non_numeric_age; }));
    // 90+ written plainly is a data error, never clamped.
    CHECK_THROWS_MATCHES(parse_age("95"), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == errc::age_out_of_range;
                         }));
    CHECK_THROWS_MATCHES(parse_age("-3"), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == errc::age_out_of_range;
                         }));
}

TEST_CASE("parse_age round-trips render_age") {
    for (int y = 0; y <= 89; ++y) {
        CHECK(parse_age(render_age(AgeValue::years(y))) == AgeValue::years(y));
    }
    CHECK(parse_age(render_age(AgeValue::over89())) == AgeValue::over89());
}

TEST_CASE("load_patients reads a single-row table") {
    testsupport::TempDir tmp("ingest");
    auto path = tmp.str() + "/patient.csv";
    testsupport::write_file(
        path,
        "patientunitstayid,uniquepid,patienthealthsystemstayid,gender,age,apacheadmissiondx,unitdischargestatus\n"
        "343448,P1,H1,Female,74,\"Hypertension, uncontrolled\",Alive\n");
    auto result = load_patients(path);
    REQUIRE(result.rows.size() == 1);
    CHECK(result.skipped.empty());
    const auto& stay = result.rows[0];
    CHECK(stay.stay_id.value == 343448);
    CHECK(stay.gender == Gender::female);
    CHECK(stay.age == AgeValue::years(74));
    CHECK(stay.disease == "Hypertension, uncontrolled");
    CHECK(stay.discharge_status == DischargeStatus::alive);
}

TEST_CASE("load_patients on an empty table returns nothing") {
    testsupport::TempDir tmp("ingest");
    auto path = tmp.str() + "/patient.csv";
    testsupport::write_file(
        path,
        "patientunitstayid,uniquepid,patienthealthsystemstayid,gender,age,apacheadmissiondx,unitdischargestatus\n");
    auto result = load_patients(path);
    CHECK(result.rows.empty());
    CHECK(result.skipped.empty());
}

TEST_CASE("malformed rows are skipped leniently and fatal in strict mode") {
    testsupport::TempDir tmp("ingest");
    auto path = tmp.str() + "/patient.csv";
    testsupport::write_file(
        path,
        "patientunitstayid,uniquepid,patienthealthsystemstayid,gender,age,apacheadmissiondx,unitdischargestatus\n"
        "1,P1,H1,Female,abc,Sepsis,Alive\n"
        "2,P2,H2,Male,44,Sepsis,Alive\n");
    auto lenient = load_patients(path);
    CHECK(lenient.rows.size() == 1);
    REQUIRE(lenient.skipped.size() == 1);
    CHECK(lenient.skipped[0].row_number == 1);
    // count(loaded) + count(skipped) = count(data rows)
    CHECK(lenient.rows.size() + lenient.skipped.size() == 2);

    CHECK_THROWS_AS(load_patients(path, true), Error);
}

TEST_CASE("missing required column is reported by name") {
    testsupport::TempDir tmp("ingest");
    auto path = tmp.str() + "/diagnosis.csv";
    testsupport::write_file(path, "patientunitstayid,diagnosisstring\n1,a|b\n");
    try {
        load_diagnoses(path);
        FAIL("expected missing_column");
    } catch (const Error& e) {
        CHECK(e.code() == errc::missing_column);
        CHECK(std::string(e.what()).find("diagnosisoffset") != std::string::npos);
    }
}

TEST_CASE("column order is irrelevant and extra columns are ignored") {
    testsupport::TempDir tmp("ingest");
    auto path = tmp.str() + "/diagnosis.csv";
    testsupport::write_file(path,
                            "extra,diagnosisstring,diagnosisoffset,patientunitstayid\n"
                            "x,neurologic|seizures,42,7\n");
    auto result = load_diagnoses(path);
    REQUIRE(result.rows.size() == 1);
    CHECK(result.rows[0].stay_id.value == 7);
    CHECK(result.rows[0].offset_min == 42);
    CHECK(result.rows[0].path == "neurologic|seizures");
}

TEST_CASE("vital fields parse as absent, never zero") {
    testsupport::TempDir tmp("ingest");
    auto path = tmp.str() + "/vitals.csv";
    testsupport::write_file(path,
                            "patientunitstayid,observationoffset,sao2,heartrate,respiration\n"
                            "5,100,,118,\n"
                            "5,105,97,,20\n"
                            "5,110,250,60,18\n");
    auto result = load_vitals(path);
    REQUIRE(result.rows.size() == 2);
    CHECK(!result.rows[0].sao2.has_value());
    CHECK(result.rows[0].heartrate == 118.0);
    CHECK(!result.rows[0].respiration.has_value());
    CHECK(result.rows[1].sao2 == 97.0);
    // sao2 250 is out of physical range -> the row is a data error
    REQUIRE(result.skipped.size() == 1);
    CHECK(result.skipped[0].row_number == 3);
}

TEST_CASE("assemble_records sorts events by offset and keeps tie order") {
    std::vector<PatientStay> patients(1);
    patients[0].stay_id = StayId{10};
    std::vector<DiagnosisEvent> diagnoses = {
        {StayId{10}, 227, "b"}, {StayId{10}, 16, "a"}, {StayId{10}, 1086, "c"},
        {StayId{10}, 16, "tie-second"},
    };
    auto result = assemble_records(patients, diagnoses, {}, {});
    REQUIRE(result.records.size() == 1);
    const auto& dx = result.records[0].diagnoses;
    REQUIRE(dx.size() == 4);
    CHECK(dx[0].offset_min == 16);
    CHECK(dx[0].path == "a");
    CHECK(dx[1].path == "tie-second");
    CHECK(dx[2].offset_min == 227);
    CHECK(dx[3].offset_min == 1086);
}

TEST_CASE("assemble_records with no events yields empty lists") {
    std::vector<PatientStay> patients(1);
    patients[0].stay_id = StayId{1};
    auto result = assemble_records(patients, {}, {}, {});
    REQUIRE(result.records.size() == 1);
    CHECK(result.records[0].diagnoses.empty());
    CHECK(result.records[0].treatments.empty());
    CHECK(result.records[0].vitals.empty());
}

TEST_CASE("events for unknown stays count as orphans") {
    std::vector<PatientStay> patients(2);
    patients[0].stay_id = StayId{1};
    patients[1].stay_id = StayId{2};
    std::vector<TreatmentEvent> treatments = {{StayId{1}, 5, "a|b"}, {StayId{99}, 5, "c|d"}};
    auto result = assemble_records(patients, {}, treatments, {});
    CHECK(result.records[0].treatments.size() == 1);
    CHECK(result.records[1].treatments.empty());
    CHECK(result.orphan_treatments == 1);
}

TEST_CASE("duplicate stay ids are rejected") {
    std::vector<PatientStay> patients(2);
    patients[0].stay_id = StayId{1};
    patients[1].stay_id = StayId{1};
    CHECK_THROWS_MATCHES(assemble_records(patients, {}, {}, {}), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == errc::duplicate_stay_id; }));
}

TEST_CASE("negative offsets are kept and sort first") {
    std::vector<PatientStay> patients(1);
    patients[0].stay_id = StayId{1};
    std::vector<DiagnosisEvent> diagnoses = {{StayId{1}, 30, "later"}, {StayId{1}, -10, "early"}};
    auto result = assemble_records(patients, diagnoses, {}, {});
    CHECK(result.records[0].diagnoses[0].offset_min == -10);
}

TEST_CASE("assembly is invariant under row permutation for distinct offsets") {
    std::mt19937_64 rng(41);
    std::vector<PatientStay> patients(3);
    for (int i = 0; i < 3; ++i) patients[i].stay_id = StayId{i + 1};
    std::vector<DiagnosisEvent> diagnoses;
    for (int i = 0; i < 30; ++i) {
        // Offsets are distinct within each stay, so the assembled order is
        // fully determined and shuffling the rows must change nothing.
        diagnoses.push_back({StayId{1 + static_cast<std::int64_t>(i % 3)},
                             static_cast<int>(rng() % 7) + 10 * i, "path" + std::to_string(i)});
    }
    auto baseline = assemble_records(patients, diagnoses, {}, {});
    for (int round = 0; round < 10; ++round) {
        auto shuffled = diagnoses;
        icueval::deterministic_shuffle(shuffled, rng);
        auto result = assemble_records(patients, shuffled, {}, {});
        for (std::size_t r = 0; r < baseline.records.size(); ++r) {
            const auto& got = result.records[r].diagnoses;
            const auto& want = baseline.records[r].diagnoses;
            REQUIRE(got.size() == want.size());
            for (std::size_t i = 0; i < got.size(); ++i) {
                CHECK(got[i].offset_min == want[i].offset_min);
                CHECK(got[i].path == want[i].path);
            }
        }
    }
}

TEST_CASE("load_table dispatches on the table kind") {
    auto dir = testsupport::fixture_data_dir();
    auto patients = load_table(dir + "/patient.csv", TableKind::patient);
    CHECK(std::holds_alternative<LoadResult<PatientStay>>(patients));
    auto vitals = load_table(dir + "/vitalperiodic.csv", TableKind::vitals);
    REQUIRE(std::holds_alternative<LoadResult<VitalSample>>(vitals));
    CHECK(!std::get<LoadResult<VitalSample>>(vitals).rows.empty());
}

TEST_CASE("the bundled synthetic dataset loads cleanly") {
    const auto& records = testsupport::fixture_records();
    CHECK(records.size() >= 20);
    std::size_t alive = 0, expired = 0;
    for (const auto& r : records) {
        if (r.stay.discharge_status == DischargeStatus::alive) ++alive;
        if (r.stay.discharge_status == DischargeStatus::expired) ++expired;
        for (std::size_t i = 1; i < r.diagnoses.size(); ++i) {
            CHECK(r.diagnoses[i - 1].offset_min <= r.diagnoses[i].offset_min);
        }
    }
    CHECK(alive >= 50);
    CHECK(expired >= 50);
    // Both sentinel spellings and the empty stay survive the load.
    CHECK(testsupport::fixture_record(600001).stay.age == AgeValue::over89());
    CHECK(testsupport::fixture_record(600002).stay.age == AgeValue::over89());
    CHECK(testsupport::fixture_record(600004).diagnoses.empty());
}
