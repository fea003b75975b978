#pragma once

#include <string>

#include "icueval/runner.hpp"
#include "stub_responses.hpp"

namespace testsupport {

inline constexpr const char* kDemoModelName = "stub-chat-1";
inline constexpr const char* kDemoBackendName = "stub-model";
inline constexpr int kDemoMaxTokens = 512;

/// The experiment the demo replay store was recorded for: five trials per
/// scenario over the bundled synthetic dataset, no age cap (one how-about
/// source is 81), fixed what-if split at 300.
inline icueval::ExperimentConfig demo_experiment_config(const std::string& data_dir,
                                                        const std::string& store_path,
                                                        const std::string& out_dir,
                                                        icueval::CompletionMode mode,
                                                        const std::string& endpoint_url) {
    icueval::ExperimentConfig config;
    config.patient_path = data_dir + "/patient.csv";
    config.diagnosis_path = data_dir + "/diagnosis.csv";
    config.treatment_path = data_dir + "/treatment.csv";
    config.vitals_path = data_dir + "/vitalperiodic.csv";
    config.seed = 7;
    config.mode = mode;
    config.replay_store_path = store_path;
    config.out_dir = out_dir;

    icueval::BackendConfig backend;
    backend.name = kDemoBackendName;
    backend.endpoint_url = endpoint_url;
    backend.model_name = kDemoModelName;
    backend.temperature = 0.0;
    backend.max_tokens = kDemoMaxTokens;
    backend.timeout_s = 10.0;
    backend.max_retries = 3;
    backend.retry_base_ms = 0;
    config.backends.push_back(backend);

    icueval::WhatIfParams what_if;
    what_if.trials.stay_ids = {343448, 400001, 400002, 400003, 400004};
    what_if.split_min = 300;
    config.what_if = what_if;

    icueval::WhyNotParams why_not;
    why_not.trials.stay_ids = {3176264, 410001, 410002, 410003, 410004};
    icueval::MatchCriteria criteria;
    criteria.same_disease = true;
    criteria.same_primary_diagnosis = true;
    criteria.require_different_treatment = true;
    criteria.require_outcome = icueval::DischargeStatus::alive;
    criteria.age_window_years = 5;
    why_not.peer = criteria;
    config.why_not = why_not;

    icueval::SoWhatParams so_what;
    so_what.trials.stay_ids = {321071, 420001, 420002, 420003, 420004};
    config.so_what = so_what;

    icueval::HowAboutParams how_about;
    how_about.disease_a = "Bleeding, lower GI";
    how_about.disease_b = "Bleeding, upper GI";
    how_about.max_pairs = 5;
    config.how_about = how_about;

    icueval::PredictionParams prediction;
    prediction.trials.stay_ids = {440001, 440002, 440003, 440004, 761802};
    config.prediction = prediction;

    icueval::FinetuneParams finetune;
    finetune.n_per_class = 50;
    finetune.test_stay_ids = {440001, 440002, 440003, 440004, 761802};
    finetune.out_path = "finetune.jsonl";
    config.finetune = finetune;
    return config;
}

/// The same experiment as a config document, for driving the CLI.
inline std::string demo_config_json(const std::string& data_dir, const std::string& store_path,
                                    const std::string& mode, const std::string& endpoint_url) {
    icueval::json j;
    j["version"] = 1;
    j["data"] = {{"patient", data_dir + "/patient.csv"},
                 {"diagnosis", data_dir + "/diagnosis.csv"},
                 {"treatment", data_dir + "/treatment.csv"},
                 {"vitals", data_dir + "/vitalperiodic.csv"}};
    j["seed"] = 7;
    j["mode"] = mode;
    j["replay_store"] = store_path;
    j["backends"] = {{{"name", kDemoBackendName},
                      {"endpoint_url", endpoint_url},
                      {"model_name", kDemoModelName},
                      {"temperature", 0.0},
                      {"max_tokens", kDemoMaxTokens},
                      {"timeout_s", 10.0},
                      {"max_retries", 3},
                      {"retry_base_ms", 0}}};
    j["scenarios"] = {
        {"what_if",
         {{"stay_ids", {343448, 400001, 400002, 400003, 400004}}, {"split_min", 300}}},
        {"why_not",
         {{"stay_ids", {3176264, 410001, 410002, 410003, 410004}},
          {"peer",
           {{"same_disease", true},
            {"same_primary_diagnosis", true},
            {"require_different_treatment", true},
            {"require_outcome", "Alive"},
            {"age_window_years", 5}}}}},
        {"so_what", {{"stay_ids", {321071, 420001, 420002, 420003, 420004}}}},
        {"how_about",
         {{"disease_a", "Bleeding, lower GI"},
          {"disease_b", "Bleeding, upper GI"},
          {"max_pairs", 5}}},
        {"discharge_prediction", {{"stay_ids", {440001, 440002, 440003, 440004, 761802}}}},
    };
    j["finetune"] = {{"n_per_class", 50},
                     {"test_stay_ids", {440001, 440002, 440003, 440004, 761802}},
                     {"out_path", "finetune.jsonl"}};
    return j.dump(2) + "\n";
}

/// Records the demo transcripts directly into a replay store: the same
/// bundles the config plans, answered from the canned table, with a fixed
/// timestamp so the store bytes are reproducible.
inline void write_demo_store(const std::string& data_dir, const std::string& store_path) {
    namespace fs = std::filesystem;
    if (fs::exists(store_path)) fs::remove(store_path);
    icueval::ExperimentConfig config = demo_experiment_config(
        data_dir, store_path, "unused", icueval::CompletionMode::record, "http://unused/");

    auto patients = icueval::load_patients(config.patient_path);
    auto diagnoses = icueval::load_diagnoses(config.diagnosis_path);
    auto treatments = icueval::load_treatments(config.treatment_path);
    auto vitals = icueval::load_vitals(config.vitals_path);
    auto assembled = icueval::assemble_records(patients.rows, diagnoses.rows, treatments.rows,
                                               vitals.rows);
    auto pool = icueval::filter_cohort(assembled.records, config.cohort);

    icueval::ScenarioContext ctx;
    ctx.presetting = icueval::build_presetting(icueval::default_fewshot_exemplars());

    icueval::ReplayStore store = icueval::ReplayStore::open(store_path);
    for (const auto& plan : icueval::plan_trials(config, pool, ctx)) {
        if (!plan.bundle) {
            throw std::runtime_error("demo trial failed to build: " + plan.build_error);
        }
        std::string user_message;
        for (const auto& m : plan.bundle->messages) {
            if (m.role == icueval::Role::user) user_message = m.content;
        }
        auto canned = canned_response_for(user_message);
        if (!canned) {
            throw std::runtime_error("no canned response for stay " +
                                     std::to_string(plan.stay_id));
        }
        icueval::Transcript t;
        t.request_digest = icueval::request_digest(kDemoModelName, plan.bundle->messages, 0.0,
                                                   kDemoMaxTokens);
        t.messages = plan.bundle->messages;
        t.response_text = *canned;
        t.backend = kDemoBackendName;
        t.timestamp_utc = "2026-01-15T00:00:00Z";
        t.refusal = icueval::detect_refusal(t.response_text);
        store.append(t);
    }
}

} // namespace testsupport
