#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>
#include <sstream>

#include "icueval/finetune.hpp"

#include "../support/fixtures.hpp"

using namespace icueval;

TEST_CASE("samples carry the reference narrative and the canonical labels") {
    auto sample = build_sample(testsupport::fixture_record(761802));
    REQUIRE(sample.messages.size() == 3);
    CHECK(sample.messages[0].role == Role::system);
    CHECK(sample.messages[0].content == "You are a medical treatment assistant.");
    CHECK(sample.messages[1].role == Role::user);
    CHECK(sample.messages[1].content ==
          testsupport::read_file(testsupport::golden_path("narrative_761802.txt")));
    CHECK(sample.messages[1].content.find("(offset: 16)") != std::string::npos);
    CHECK(sample.messages[2].role == Role::assistant);
    CHECK(sample.messages[2].content == "status: Alive.");

    auto expired = build_sample(testsupport::fixture_record(440001));
    CHECK(expired.messages[2].content == "status: Expired.");
}

TEST_CASE("samples refuse stays without a recorded outcome") {
    CHECK_THROWS_MATCHES(build_sample(testsupport::fixture_record(600004)), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == errc::unknown_outcome; }));
}

TEST_CASE("serialize and parse round-trip every sample") {
    std::mt19937_64 rng(17);
    std::vector<const PatientRecord*> eligible;
    for (const auto& r : testsupport::fixture_records()) {
        if (r.stay.discharge_status != DischargeStatus::unknown && !r.treatments.empty()) {
            eligible.push_back(&r);
        }
    }
    for (int round = 0; round < 50; ++round) {
        const auto& record = *eligible[rng() % eligible.size()];
        auto sample = build_sample(record);
        auto line = serialize_sample(sample);
        CHECK(line.find('\n') == std::string::npos);
        CHECK(parse_sample(line) == sample);
    }
}

TEST_CASE("the loader accepts Dead as a read-side synonym") {
    auto sample = build_sample(testsupport::fixture_record(440001));
    auto line = serialize_sample(sample);
    auto pos = line.find("status: Expired.");
    REQUIRE(pos != std::string::npos);
    line.replace(pos, std::string("status: Expired.").size(), "status: Dead.");
    CHECK(parse_sample(line).messages[2].content == "status: Expired.");
}

TEST_CASE("export writes a balanced, byte-stable dataset with a manifest") {
    testsupport::TempDir tmp("finetune");
    auto path = tmp.str() + "/train.jsonl";
    std::set<std::int64_t> test_ids = {440001, 440002, 440003, 440004, 761802};

    auto manifest = export_dataset(testsupport::fixture_records(), 50, 21, path, test_ids);
    CHECK(manifest.alive_count == 50);
    CHECK(manifest.expired_count == 50);
    CHECK(manifest.stay_ids.size() == 100);
    CHECK(manifest.content_digest.rfind("fnv1a64:", 0) == 0);

    std::string first = testsupport::read_file(path);
    std::string manifest_first = testsupport::read_file(path + ".manifest.json");

    // Exactly 100 lines with a trailing newline.
    CHECK(std::count(first.begin(), first.end(), '\n') == 100);
    CHECK(first.back() == '\n');

    // No excluded stay, no duplicate stay, labels never inside the user turn.
    std::set<std::int64_t> seen;
    std::istringstream lines(first);
    std::string line;
    while (std::getline(lines, line)) {
        auto sample = parse_sample(line);
        CHECK(!test_ids.count(sample.stay_id.value));
        CHECK(seen.insert(sample.stay_id.value).second);
        CHECK(sample.messages[1].content.find(sample.messages[2].content) == std::string::npos);
    }

    // Re-running with identical inputs is byte-identical, manifest included.
    auto manifest2 = export_dataset(testsupport::fixture_records(), 50, 21, path, test_ids);
    CHECK(testsupport::read_file(path) == first);
    CHECK(testsupport::read_file(path + ".manifest.json") == manifest_first);
    CHECK(manifest2.content_digest == manifest.content_digest);
}

TEST_CASE("export fails loudly when a class cannot be filled") {
    testsupport::TempDir tmp("finetune");
    CHECK_THROWS_MATCHES(
        export_dataset(testsupport::fixture_records(), 5000, 1, tmp.str() + "/x.jsonl"), Error,
        Catch::Matchers::Predicate<Error>(
            [](const Error& e) { return e.code() == errc::insufficient_class; }));
}

TEST_CASE("different seeds draw different training sets") {
    testsupport::TempDir tmp("finetune");
    auto a = export_dataset(testsupport::fixture_records(), 50, 1, tmp.str() + "/a.jsonl");
    auto b = export_dataset(testsupport::fixture_records(), 50, 2, tmp.str() + "/b.jsonl");
    CHECK(a.stay_ids != b.stay_ids);
}
