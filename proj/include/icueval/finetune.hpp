#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "icueval/cohort.hpp"
#include "icueval/errors.hpp"
#include "icueval/scenarios.hpp"
#include "icueval/text.hpp"

namespace icueval {

using json = nlohmann::json;

/// One supervised example: system role, the prediction narrative as the
/// user turn, and the recorded outcome as the assistant turn.
struct FinetuneSample {
    StayId stay_id;
    std::vector<ChatMessage> messages; // exactly system, user, assistant

    bool operator==(const FinetuneSample&) const = default;
};

inline constexpr const char* kAssistantAlive = "status: Alive.";
inline constexpr const char* kAssistantExpired = "status: Expired.";

inline FinetuneSample build_sample(const PatientRecord& record,
                                   const TemplateSet& templates = TemplateSet::builtin()) {
    if (record.stay.discharge_status == DischargeStatus::unknown) {
        throw Error(errc::unknown_outcome, "stay " + std::to_string(record.stay.stay_id.value) +
                                               " has no recorded discharge status");
    }
    if (record.treatments.empty()) {
        throw Error(errc::invalid_argument, "fine-tune sample needs at least one treatment");
    }
    FinetuneSample sample;
    sample.stay_id = record.stay.stay_id;
    sample.messages = {
        ChatMessage{Role::system, templates.presetting_system},
        ChatMessage{Role::user, prediction_body(record)},
        ChatMessage{Role::assistant, record.stay.discharge_status == DischargeStatus::alive
                                         ? kAssistantAlive
                                         : kAssistantExpired},
    };
    return sample;
}

inline std::string serialize_sample(const FinetuneSample& sample) {
    json msgs = json::array();
    for (const auto& m : sample.messages) {
        msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});
    }
    return json{{"patientunitstayid", sample.stay_id.value}, {"messages", msgs}}.dump();
}

/// Parses one export line back into a sample. "status: Dead." is accepted
/// as a read-side synonym for the Expired assistant turn.
inline FinetuneSample parse_sample(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const std::exception& e) {
        throw Error(errc::malformed_row, std::string("unparseable sample line: ") + e.what());
    }
    FinetuneSample sample;
    sample.stay_id = StayId{j.at("patientunitstayid").get<std::int64_t>()};
    for (const auto& m : j.at("messages")) {
        auto role = parse_role(m.at("role").get<std::string>());
        if (!role) throw Error(errc::malformed_row, "unknown role in sample line");
        sample.messages.push_back(ChatMessage{*role, m.at("content").get<std::string>()});
    }
    if (sample.messages.size() != 3 || sample.messages[0].role != Role::system ||
        sample.messages[1].role != Role::user || sample.messages[2].role != Role::assistant) {
        throw Error(errc::malformed_row, "sample must be system/user/assistant");
    }
    std::string& assistant = sample.messages[2].content;
    if (assistant == "status: Dead.") assistant = kAssistantExpired;
    if (assistant != kAssistantAlive && assistant != kAssistantExpired) {
        throw Error(errc::malformed_row, "unexpected assistant turn '" + assistant + "'");
    }
    return sample;
}

/// Sidecar bookkeeping for an export: exact class counts, the seed, the
/// exported stay ids (so later runs can enforce train/test disjointness),
/// and a digest of the file bytes.
struct ExportManifest {
    std::size_t n_per_class = 0;
    std::uint64_t seed = 0;
    std::size_t alive_count = 0;
    std::size_t expired_count = 0;
    std::vector<std::int64_t> stay_ids;
    std::string content_digest;
    std::string dataset_path;
};

inline json manifest_to_json(const ExportManifest& m) {
    return json{{"schema", "chat-messages-v1"},
                {"n_per_class", m.n_per_class},
                {"seed", m.seed},
                {"alive_count", m.alive_count},
                {"expired_count", m.expired_count},
                {"stay_ids", m.stay_ids},
                {"content_digest", m.content_digest},
                {"dataset_path", m.dataset_path}};
}

/// Balanced supervised export: one JSON object per line, UTF-8, trailing
/// newline, plus <path>.manifest.json. Stays named in exclude_stay_ids
/// (a held-out test set) never enter the pool. Identical inputs give
/// byte-identical files.
inline ExportManifest export_dataset(const std::vector<PatientRecord>& records,
                                     std::size_t n_per_class, std::uint64_t seed,
                                     const std::string& path,
                                     const std::set<std::int64_t>& exclude_stay_ids = {}) {
    std::vector<PatientRecord> pool;
    for (const auto& record : records) {
        if (exclude_stay_ids.count(record.stay.stay_id.value)) continue;
        if (record.stay.discharge_status == DischargeStatus::unknown) continue;
        if (record.treatments.empty()) continue;
        pool.push_back(record);
    }
    std::vector<PatientRecord> picked = sample_balanced(pool, n_per_class, seed);

    std::string content;
    ExportManifest manifest;
    manifest.n_per_class = n_per_class;
    manifest.seed = seed;
    manifest.dataset_path = path;
    for (const auto& record : picked) {
        FinetuneSample sample = build_sample(record);
        content += serialize_sample(sample);
        content += '\n';
        manifest.stay_ids.push_back(record.stay.stay_id.value);
        if (record.stay.discharge_status == DischargeStatus::alive) ++manifest.alive_count;
        else ++manifest.expired_count;
    }
    manifest.content_digest = "fnv1a64:" + to_hex(fnv1a64(content));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(errc::io, "cannot write dataset '" + path + "'");
    out << content;
    out.close();

    std::ofstream mout(path + ".manifest.json", std::ios::binary | std::ios::trunc);
    if (!mout) throw Error(errc::io, "cannot write manifest for '" + path + "'");
    mout << manifest_to_json(manifest).dump(2) << '\n';
    return manifest;
}

} // namespace icueval
