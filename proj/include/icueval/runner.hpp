#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "icueval/cohort.hpp"
#include "icueval/errors.hpp"
#include "icueval/finetune.hpp"
#include "icueval/ingest.hpp"
#include "icueval/llm.hpp"
#include "icueval/scenarios.hpp"
#include "icueval/scoring.hpp"
#include "icueval/templates.hpp"
#include "icueval/timeline.hpp"

namespace icueval {

/// Trial selection for one scenario: explicit stay ids, or a seeded sample
/// of the eligible pool.
struct TrialSelection {
    std::vector<std::int64_t> stay_ids;
    std::optional<std::size_t> sample_count;
};

struct WhatIfParams {
    TrialSelection trials;
    std::optional<int> split_min; // default: median treatment offset per stay
};

struct WhyNotParams {
    TrialSelection trials;
    std::optional<MatchCriteria> peer; // when set, peers are searched per trial
};

struct SoWhatParams {
    TrialSelection trials;
    std::optional<TimeWindow> window; // default: the whole stay
};

struct HowAboutParams {
    std::string disease_a;
    std::string disease_b;
    std::size_t max_pairs = 5;
};

struct PredictionParams {
    TrialSelection trials;
};

struct FinetuneParams {
    std::size_t n_per_class = 50;
    std::optional<std::uint64_t> seed; // default: the experiment seed
    std::vector<std::int64_t> test_stay_ids;
    std::string out_path = "finetune.jsonl";
};

/// Everything a run needs, parsed from the versioned JSON config document.
struct ExperimentConfig {
    int version = 1;
    std::string patient_path, diagnosis_path, treatment_path, vitals_path;
    CohortFilter cohort;
    std::uint64_t seed = 0;
    CompletionMode mode = CompletionMode::replay;
    std::string replay_store_path;
    std::string out_dir = "out";
    std::optional<std::string> templates_dir;
    Lexicons lexicons = Lexicons::defaults();
    bool presetting_enabled = true;
    std::vector<std::string> exemplars; // empty means the shipped defaults
    std::vector<BackendConfig> backends;

    std::optional<WhatIfParams> what_if;
    std::optional<WhyNotParams> why_not;
    std::optional<SoWhatParams> so_what;
    std::optional<HowAboutParams> how_about;
    std::optional<PredictionParams> prediction;
    std::optional<FinetuneParams> finetune;

    std::string config_digest; // of the raw config file bytes

    std::size_t scenario_count() const {
        return (what_if ? 1 : 0) + (why_not ? 1 : 0) + (so_what ? 1 : 0) + (how_about ? 1 : 0) +
               (prediction ? 1 : 0);
    }
};

namespace detail {

inline std::string resolve_path(const std::filesystem::path& base, const std::string& path) {
    if (path.empty()) return path;
    std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    return (base / p).lexically_normal().string();
}

inline TrialSelection parse_trials(const json& j) {
    TrialSelection sel;
    if (j.contains("stay_ids")) sel.stay_ids = j.at("stay_ids").get<std::vector<std::int64_t>>();
    if (j.contains("sample_count")) sel.sample_count = j.at("sample_count").get<std::size_t>();
    if (sel.stay_ids.empty() && !sel.sample_count) {
        throw Error(errc::config_invalid, "trial selection needs stay_ids or sample_count");
    }
    return sel;
}

inline std::optional<DischargeStatus> parse_outcome_field(const json& j, const char* key) {
    if (!j.contains(key)) return std::nullopt;
    auto s = j.at(key).get<std::string>();
    DischargeStatus status = parse_discharge_status(s);
    if (status == DischargeStatus::unknown) {
        throw Error(errc::config_invalid, std::string(key) + " must be Alive or Expired");
    }
    return status;
}

} // namespace detail

/// Parses the config document. Relative data/template/lexicon/store paths
/// resolve against the config file's directory; out_dir stays as given.
inline ExperimentConfig load_config(const std::string& config_path) {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw Error(errc::config_invalid, "cannot open config '" + config_path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string raw = buf.str();

    json j;
    try {
        j = json::parse(raw);
    } catch (const std::exception& e) {
        throw Error(errc::config_invalid, std::string("config is not valid JSON: ") + e.what());
    }

    ExperimentConfig config;
    config.config_digest = "fnv1a64:" + to_hex(fnv1a64(raw));
    const std::filesystem::path base = std::filesystem::path(config_path).parent_path();
    try {
        config.version = j.value("version", 1);
        if (config.version != 1) {
            throw Error(errc::config_invalid,
                        "unsupported config version " + std::to_string(config.version));
        }
        const auto& data = j.at("data");
        config.patient_path = detail::resolve_path(base, data.at("patient").get<std::string>());
        config.diagnosis_path = detail::resolve_path(base, data.at("diagnosis").get<std::string>());
        config.treatment_path = detail::resolve_path(base, data.at("treatment").get<std::string>());
        config.vitals_path = detail::resolve_path(base, data.at("vitals").get<std::string>());

        if (j.contains("cohort")) {
            const auto& c = j.at("cohort");
            if (c.contains("max_age_exclusive"))
                config.cohort.max_age_exclusive = c.at("max_age_exclusive").get<int>();
            config.cohort.outcome = detail::parse_outcome_field(c, "outcome");
            if (c.contains("disease_substring"))
                config.cohort.disease_substring = c.at("disease_substring").get<std::string>();
            config.cohort.min_diagnoses = c.value("min_diagnoses", std::size_t{0});
            config.cohort.min_treatments = c.value("min_treatments", std::size_t{0});
            config.cohort.min_vitals = c.value("min_vitals", std::size_t{0});
        }

        config.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("mode")) {
            auto mode = parse_completion_mode(j.at("mode").get<std::string>());
            if (!mode) throw Error(errc::config_invalid, "mode must be live, record, or replay");
            config.mode = *mode;
        }
        if (j.contains("replay_store")) {
            config.replay_store_path =
                detail::resolve_path(base, j.at("replay_store").get<std::string>());
        }
        config.out_dir = j.value("out_dir", std::string("out"));
        if (j.contains("templates_dir")) {
            config.templates_dir =
                detail::resolve_path(base, j.at("templates_dir").get<std::string>());
        }
        if (j.contains("lexicons")) {
            const auto& lex = j.at("lexicons");
            auto load_into = [&](const char* key, std::vector<std::string>& slot) {
                if (lex.contains(key)) {
                    slot = load_phrase_file(
                        detail::resolve_path(base, lex.at(key).get<std::string>()));
                }
            };
            load_into("refusal", config.lexicons.refusal);
            load_into("outcome_alive", config.lexicons.outcome_alive);
            load_into("outcome_expired", config.lexicons.outcome_expired);
            load_into("decision_alternative", config.lexicons.decision_alternative);
            load_into("decision_current", config.lexicons.decision_current);
            load_into("stopwords", config.lexicons.stopwords);
            load_into("plan_headings", config.lexicons.plan_headings);
            load_into("consideration_headings", config.lexicons.consideration_headings);
        }
        if (j.contains("presetting")) {
            const auto& p = j.at("presetting");
            config.presetting_enabled = p.value("enabled", true);
            if (p.contains("exemplars"))
                config.exemplars = p.at("exemplars").get<std::vector<std::string>>();
        }

        if (!j.contains("backends") || !j.at("backends").is_array() || j.at("backends").empty()) {
            throw Error(errc::config_invalid, "config needs at least one backend");
        }
        for (const auto& b : j.at("backends")) {
            BackendConfig backend;
            backend.name = b.value("name", std::string());
            backend.endpoint_url = b.value("endpoint_url", std::string());
            backend.model_name = b.at("model_name").get<std::string>();
            backend.temperature = b.value("temperature", 0.0);
            backend.max_tokens = b.value("max_tokens", 1024);
            backend.timeout_s = b.value("timeout_s", 30.0);
            backend.api_key_env = b.value("api_key_env", std::string());
            backend.max_retries = b.value("max_retries", 3);
            backend.retry_base_ms = b.value("retry_base_ms", 250);
            backend.max_in_flight = b.value("max_in_flight", 4);
            config.backends.push_back(std::move(backend));
        }

        const auto& scenarios = j.contains("scenarios") ? j.at("scenarios") : json::object();
        if (scenarios.contains("what_if")) {
            const auto& s = scenarios.at("what_if");
            WhatIfParams params;
            params.trials = detail::parse_trials(s);
            if (s.contains("split_min")) params.split_min = s.at("split_min").get<int>();
            config.what_if = std::move(params);
        }
        if (scenarios.contains("why_not")) {
            const auto& s = scenarios.at("why_not");
            WhyNotParams params;
            params.trials = detail::parse_trials(s);
            if (s.contains("peer")) {
                const auto& p = s.at("peer");
                MatchCriteria criteria;
                criteria.same_disease = p.value("same_disease", false);
                criteria.same_primary_diagnosis = p.value("same_primary_diagnosis", false);
                criteria.require_different_treatment = p.value("require_different_treatment", false);
                criteria.require_outcome = detail::parse_outcome_field(p, "require_outcome");
                if (p.contains("age_window_years"))
                    criteria.age_window_years = p.at("age_window_years").get<int>();
                if (!criteria.any_enabled()) {
                    throw Error(errc::config_invalid, "why_not.peer enables no criterion");
                }
                params.peer = criteria;
            }
            config.why_not = std::move(params);
        }
        if (scenarios.contains("so_what")) {
            const auto& s = scenarios.at("so_what");
            SoWhatParams params;
            params.trials = detail::parse_trials(s);
            if (s.contains("window")) {
                TimeWindow w{s.at("window").at("start_min").get<int>(),
                             s.at("window").at("end_min").get<int>()};
                if (w.start_min >= w.end_min) {
                    throw Error(errc::config_invalid, "so_what.window must have start < end");
                }
                params.window = w;
            }
            config.so_what = std::move(params);
        }
        if (scenarios.contains("how_about")) {
            const auto& s = scenarios.at("how_about");
            HowAboutParams params;
            params.disease_a = s.at("disease_a").get<std::string>();
            params.disease_b = s.at("disease_b").get<std::string>();
            params.max_pairs = s.value("max_pairs", std::size_t{5});
            config.how_about = std::move(params);
        }
        if (scenarios.contains("discharge_prediction")) {
            PredictionParams params;
            params.trials = detail::parse_trials(scenarios.at("discharge_prediction"));
            config.prediction = std::move(params);
        }
        if (j.contains("finetune")) {
            const auto& f = j.at("finetune");
            FinetuneParams params;
            params.n_per_class = f.value("n_per_class", std::size_t{50});
            if (f.contains("seed")) params.seed = f.at("seed").get<std::uint64_t>();
            if (f.contains("test_stay_ids"))
                params.test_stay_ids = f.at("test_stay_ids").get<std::vector<std::int64_t>>();
            params.out_path = f.value("out_path", std::string("finetune.jsonl"));
            config.finetune = std::move(params);
        }
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(errc::config_invalid, std::string("config: ") + e.what());
    }

    if (config.scenario_count() == 0 && !config.finetune) {
        throw Error(errc::config_invalid, "config selects no scenario");
    }
    if (config.mode == CompletionMode::replay && config.replay_store_path.empty() &&
        config.scenario_count() > 0) {
        throw Error(errc::config_invalid, "replay mode needs a replay_store path");
    }
    if (config.mode == CompletionMode::record && config.replay_store_path.empty() &&
        config.scenario_count() > 0) {
        throw Error(errc::config_invalid, "record mode needs a replay_store path");
    }
    return config;
}

/// A bundle with its ground truth, planned once and reused for every
/// backend. Stays that fail to build become trials with an error note so
/// the artifact still accounts for them.
struct PlannedTrial {
    Scenario scenario = Scenario::what_if;
    std::int64_t stay_id = 0;
    std::optional<std::int64_t> target_stay_id;
    std::optional<PromptBundle> bundle;
    std::optional<GroundTruth> truth;
    std::string build_error;
};

enum class TrialStatus { ok, refused, error };

inline const char* trial_status_name(TrialStatus s) {
    switch (s) {
        case TrialStatus::ok: return "ok";
        case TrialStatus::refused: return "refused";
        case TrialStatus::error: return "error";
    }
    return "?";
}

struct TrialResult {
    std::string model;
    Scenario scenario = Scenario::what_if;
    std::int64_t stay_id = 0;
    std::optional<std::int64_t> target_stay_id;
    TrialStatus status = TrialStatus::error;
    std::optional<double> score;              // what-if / so-what / how-about
    std::optional<Judgment> judgment;         // why-not
    std::optional<DischargeStatus> predicted; // discharge prediction
    std::optional<DischargeStatus> truth_outcome;
    std::string note;
    std::optional<errc> error_code; // in-process only, not serialized
    std::optional<Transcript> transcript;
};

/// Per (model, scenario) rollup. Refused and undetermined responses never
/// enter the means; they are counted beside them.
struct AggregateBlock {
    std::string model;
    Scenario scenario = Scenario::what_if;
    std::size_t trials = 0;
    std::size_t scored = 0;
    std::size_t refusals = 0;
    std::size_t undetermined = 0;
    std::size_t errors = 0;
    std::optional<double> mean_similarity;
    std::optional<double> positive_rate;
    std::optional<ClassificationMetrics> metrics;
};

/// Rolls one (model, scenario) group of trials up into its aggregate block.
inline AggregateBlock aggregate(const std::vector<TrialResult>& trials, Scenario scenario) {
    if (trials.empty()) throw Error(errc::empty_trials, "no trials to aggregate");
    AggregateBlock block;
    block.scenario = scenario;
    block.model = trials.front().model;
    block.trials = trials.size();

    std::vector<double> similarities;
    std::size_t alternative = 0;
    std::vector<std::pair<DischargeStatus, DischargeStatus>> pairs;
    for (const auto& t : trials) {
        if (t.status == TrialStatus::error) {
            ++block.errors;
            continue;
        }
        if (t.status == TrialStatus::refused) {
            ++block.refusals;
            continue;
        }
        switch (scenario) {
            case Scenario::what_if:
            case Scenario::so_what:
            case Scenario::how_about:
                if (t.score) {
                    similarities.push_back(*t.score);
                    ++block.scored;
                }
                break;
            case Scenario::why_not:
                if (t.judgment) {
                    ++block.scored;
                    if (*t.judgment == Judgment::alternative) ++alternative;
                    if (*t.judgment == Judgment::undetermined) ++block.undetermined;
                }
                break;
            case Scenario::discharge_prediction:
                if (t.predicted && t.truth_outcome) {
                    ++block.scored;
                    pairs.emplace_back(*t.predicted, *t.truth_outcome);
                }
                break;
        }
    }
    switch (scenario) {
        case Scenario::what_if:
        case Scenario::so_what:
        case Scenario::how_about:
            if (!similarities.empty()) {
                double sum = 0;
                for (double s : similarities) sum += s;
                block.mean_similarity = sum / static_cast<double>(similarities.size());
            }
            break;
        case Scenario::why_not:
            if (block.scored > 0) {
                block.positive_rate =
                    static_cast<double>(alternative) / static_cast<double>(block.scored);
            }
            break;
        case Scenario::discharge_prediction:
            if (!pairs.empty()) {
                block.metrics = classification_metrics(pairs);
                block.undetermined = block.metrics->counts.unknown_count;
            }
            break;
    }
    return block;
}

struct RunArtifact {
    std::vector<TrialResult> trials;
    std::vector<AggregateBlock> aggregates;
    json provenance;
};

/// True when the run obtained no transcript at all and some trial failed on
/// the backend itself (network, auth, rate limit, replay miss) — the signal
/// that the backend, not the data, is broken.
inline bool backend_dead(const RunArtifact& artifact) {
    bool any_transcript = false;
    bool any_backend_error = false;
    for (const auto& t : artifact.trials) {
        if (t.transcript) any_transcript = true;
        if (t.error_code == errc::network || t.error_code == errc::rate_limited ||
            t.error_code == errc::auth_missing || t.error_code == errc::replay_miss) {
            any_backend_error = true;
        }
    }
    return !any_transcript && any_backend_error;
}

namespace detail {

inline TimeWindow whole_stay_window(const PatientRecord& record) {
    int lo = 0, hi = 1;
    auto widen = [&](int offset) {
        lo = std::min(lo, offset);
        hi = std::max(hi, offset + 1);
    };
    for (const auto& d : record.diagnoses) widen(d.offset_min);
    for (const auto& t : record.treatments) widen(t.offset_min);
    for (const auto& v : record.vitals) widen(v.offset_min);
    return TimeWindow{lo, hi};
}

inline const PatientRecord* find_record(const std::vector<PatientRecord>& pool,
                                        std::int64_t stay_id) {
    for (const auto& r : pool) {
        if (r.stay.stay_id.value == stay_id) return &r;
    }
    return nullptr;
}

/// Resolves a trial selection to stay ids: explicit ids pass through;
/// sampled selections draw from the eligible ids by seeded permutation.
/// The eligible list is only computed when sampling needs it.
template <typename EligibleFn>
std::vector<std::int64_t> select_stays(const TrialSelection& selection, EligibleFn&& eligible,
                                       std::uint64_t seed) {
    if (!selection.stay_ids.empty()) return selection.stay_ids;
    std::vector<std::int64_t> ids = eligible();
    std::mt19937_64 rng(seed);
    deterministic_shuffle(ids, rng);
    if (selection.sample_count && ids.size() > *selection.sample_count) {
        ids.resize(*selection.sample_count);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

template <typename BuildFn>
PlannedTrial plan_one(Scenario scenario, std::int64_t stay_id, BuildFn&& build) {
    PlannedTrial trial;
    trial.scenario = scenario;
    trial.stay_id = stay_id;
    try {
        auto [bundle, truth] = build();
        trial.bundle = std::move(bundle);
        trial.truth = std::move(truth);
    } catch (const Error& e) {
        trial.build_error = e.what();
    }
    return trial;
}

} // namespace detail

/// Builds every configured trial's bundle and ground truth against the
/// filtered cohort. Deterministic: same config and data, same plan.
inline std::vector<PlannedTrial> plan_trials(const ExperimentConfig& config,
                                             const std::vector<PatientRecord>& pool,
                                             const ScenarioContext& ctx) {
    std::vector<PlannedTrial> planned;

    auto eligible_ids = [&](auto&& try_build) {
        std::vector<std::int64_t> ids;
        for (const auto& record : pool) {
            try {
                try_build(record);
                ids.push_back(record.stay.stay_id.value);
            } catch (const Error&) {
            }
        }
        return ids;
    };

    if (config.what_if) {
        const auto& params = *config.what_if;
        auto build_for = [&](const PatientRecord& record) {
            int split = params.split_min ? *params.split_min : default_split_min(record);
            return build_what_if(ctx, record, split);
        };
        auto ids = detail::select_stays(
            params.trials,
            [&] { return eligible_ids([&](const PatientRecord& r) { build_for(r); }); },
            config.seed);
        for (std::int64_t id : ids) {
            planned.push_back(detail::plan_one(Scenario::what_if, id, [&]() {
                const PatientRecord* record = detail::find_record(pool, id);
                if (!record) throw Error(errc::invalid_argument, "stay not in cohort");
                return build_for(*record);
            }));
        }
    }
    if (config.why_not) {
        const auto& params = *config.why_not;
        auto build_for = [&](const PatientRecord& record) {
            std::optional<PatientRecord> peer;
            if (params.peer) peer = find_alternative_peer(record, pool, *params.peer);
            return build_why_not(ctx, record, peer);
        };
        auto ids = detail::select_stays(
            params.trials,
            [&] { return eligible_ids([&](const PatientRecord& r) { build_for(r); }); },
            config.seed + 1);
        for (std::int64_t id : ids) {
            planned.push_back(detail::plan_one(Scenario::why_not, id, [&]() {
                const PatientRecord* record = detail::find_record(pool, id);
                if (!record) throw Error(errc::invalid_argument, "stay not in cohort");
                return build_for(*record);
            }));
        }
    }
    if (config.so_what) {
        const auto& params = *config.so_what;
        auto build_for = [&](const PatientRecord& record) {
            TimeWindow window =
                params.window ? *params.window : detail::whole_stay_window(record);
            return build_so_what(ctx, record, window);
        };
        auto ids = detail::select_stays(
            params.trials,
            [&] { return eligible_ids([&](const PatientRecord& r) { build_for(r); }); },
            config.seed + 2);
        for (std::int64_t id : ids) {
            planned.push_back(detail::plan_one(Scenario::so_what, id, [&]() {
                const PatientRecord* record = detail::find_record(pool, id);
                if (!record) throw Error(errc::invalid_argument, "stay not in cohort");
                return build_for(*record);
            }));
        }
    }
    if (config.how_about) {
        const auto& params = *config.how_about;
        auto pairs = pair_similar_diseases(pool, params.disease_a, params.disease_b);
        if (pairs.size() > params.max_pairs) pairs.resize(params.max_pairs);
        for (const auto& [source, target] : pairs) {
            PlannedTrial trial = detail::plan_one(
                Scenario::how_about, source.stay.stay_id.value,
                [&]() { return build_how_about(ctx, source, target); });
            trial.target_stay_id = target.stay.stay_id.value;
            planned.push_back(std::move(trial));
        }
    }
    if (config.prediction) {
        const auto& params = *config.prediction;
        auto ids = detail::select_stays(
            params.trials,
            [&] {
                return eligible_ids(
                    [&](const PatientRecord& r) { build_discharge_prediction(ctx, r); });
            },
            config.seed + 3);
        for (std::int64_t id : ids) {
            planned.push_back(detail::plan_one(Scenario::discharge_prediction, id, [&]() {
                const PatientRecord* record = detail::find_record(pool, id);
                if (!record) throw Error(errc::invalid_argument, "stay not in cohort");
                return build_discharge_prediction(ctx, *record);
            }));
        }
    }
    return planned;
}

/// Scores a response against its ground truth and writes the outcome into
/// the trial row. Pure text in, numbers out; no network.
inline void score_trial(TrialResult& trial, const GroundTruth& truth,
                        const std::string& response_text, const Lexicons& lexicons) {
    switch (trial.scenario) {
        case Scenario::what_if: {
            auto predicted = extract_plan(response_text, lexicons);
            trial.score = plan_similarity(predicted, truth.items).score;
            break;
        }
        case Scenario::so_what: {
            trial.score = diagnosis_similarity(response_text, truth.paths);
            break;
        }
        case Scenario::how_about: {
            CoverageReport report = coverage_report(response_text, truth.items, lexicons);
            trial.score = report.coverage;
            if (report.considered == 0) trial.note = "response listed no considerations";
            break;
        }
        case Scenario::why_not: {
            trial.judgment = judge_alternative(response_text, lexicons);
            break;
        }
        case Scenario::discharge_prediction: {
            trial.predicted = extract_outcome(response_text, lexicons);
            trial.truth_outcome = truth.outcome;
            break;
        }
    }
}

namespace detail {

inline json trial_to_json(const TrialResult& t) {
    json j;
    j["model"] = t.model;
    j["scenario"] = scenario_name(t.scenario);
    j["stay_id"] = t.stay_id;
    if (t.target_stay_id) j["target_stay_id"] = *t.target_stay_id;
    j["status"] = trial_status_name(t.status);
    j["score"] = t.score ? json(*t.score) : json(nullptr);
    j["judgment"] = t.judgment ? json(judgment_name(*t.judgment)) : json(nullptr);
    j["predicted"] = t.predicted ? json(discharge_status_name(*t.predicted)) : json(nullptr);
    j["note"] = t.note;
    j["transcript"] = t.transcript ? transcript_to_json(*t.transcript) : json(nullptr);
    return j;
}

inline json ground_truth_to_json(Scenario scenario, std::int64_t stay_id,
                                 std::optional<std::int64_t> target_stay_id,
                                 const GroundTruth& truth) {
    json j;
    j["scenario"] = scenario_name(scenario);
    j["stay_id"] = stay_id;
    if (target_stay_id) j["target_stay_id"] = *target_stay_id;
    j["kind"] = ground_truth_kind_name(truth.kind);
    switch (truth.kind) {
        case GroundTruth::Kind::treatment_plan:
        case GroundTruth::Kind::target_plan: {
            json items = json::array();
            for (const auto& item : truth.items) items.push_back(item.canonical());
            j["items"] = items;
            break;
        }
        case GroundTruth::Kind::diagnosis_set:
            j["paths"] = truth.paths;
            break;
        case GroundTruth::Kind::outcome_label:
            j["outcome"] = discharge_status_name(truth.outcome);
            break;
        case GroundTruth::Kind::alternative_preferred:
            j["expected"] = true;
            break;
    }
    return j;
}

inline json aggregate_to_json(const AggregateBlock& block) {
    json j;
    j["model"] = block.model;
    j["scenario"] = scenario_name(block.scenario);
    j["trials"] = block.trials;
    j["scored"] = block.scored;
    j["refusals"] = block.refusals;
    j["undetermined"] = block.undetermined;
    j["errors"] = block.errors;
    j["mean_similarity"] = block.mean_similarity ? json(*block.mean_similarity) : json(nullptr);
    j["positive_rate"] = block.positive_rate ? json(*block.positive_rate) : json(nullptr);
    if (block.metrics) {
        const auto& m = *block.metrics;
        j["metrics"] = json{{"accuracy", m.accuracy},
                            {"correct", m.correct},
                            {"total", m.total},
                            {"unknown_count", m.counts.unknown_count},
                            {"precision_alive", m.precision_alive},
                            {"precision_alive_defined", m.precision_alive_defined},
                            {"recall_alive", m.recall_alive},
                            {"recall_alive_defined", m.recall_alive_defined},
                            {"precision_expired", m.precision_expired},
                            {"precision_expired_defined", m.precision_expired_defined},
                            {"recall_expired", m.recall_expired},
                            {"recall_expired_defined", m.recall_expired_defined}};
    } else {
        j["metrics"] = nullptr;
    }
    return j;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(errc::io, "cannot write '" + path.string() + "'");
    out << content;
}

inline int scenario_order(Scenario s) { return static_cast<int>(s); }

inline void sort_trials(std::vector<TrialResult>& trials) {
    std::sort(trials.begin(), trials.end(), [](const TrialResult& a, const TrialResult& b) {
        if (a.model != b.model) return a.model < b.model;
        if (a.scenario != b.scenario) return scenario_order(a.scenario) < scenario_order(b.scenario);
        if (a.stay_id != b.stay_id) return a.stay_id < b.stay_id;
        return a.target_stay_id.value_or(-1) < b.target_stay_id.value_or(-1);
    });
}

} // namespace detail

enum class ReportFormat { markdown, csv, plotdata };

/// Renders the artifact's reporting files into out_dir: a markdown summary
/// table, the per-trial CSV, and machine-readable plot data. Every output
/// is a pure function of the artifact.
inline std::vector<std::string> emit_report(const RunArtifact& artifact,
                                            const std::set<ReportFormat>& formats,
                                            const std::string& out_dir) {
    std::vector<std::string> written;
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path out(out_dir);

    auto metric_value = [](const std::optional<double>& v) {
        return v ? format_full(*v) : std::string("n/a");
    };

    if (formats.count(ReportFormat::markdown)) {
        std::string md = "# Evaluation report\n\n";
        md += "| model | scenario | metric | value | trials | scored | refusals | undetermined | errors |\n";
        md += "|---|---|---|---|---|---|---|---|---|\n";
        for (const auto& block : artifact.aggregates) {
            auto row = [&](const std::string& metric, const std::string& value) {
                md += "| " + block.model + " | " + scenario_name(block.scenario) + " | " + metric +
                      " | " + value + " | " + std::to_string(block.trials) + " | " +
                      std::to_string(block.scored) + " | " + std::to_string(block.refusals) +
                      " | " + std::to_string(block.undetermined) + " | " +
                      std::to_string(block.errors) + " |\n";
            };
            switch (block.scenario) {
                case Scenario::what_if:
                case Scenario::so_what:
                case Scenario::how_about:
                    row("mean_similarity", metric_value(block.mean_similarity));
                    break;
                case Scenario::why_not:
                    row("positive_rate", metric_value(block.positive_rate));
                    break;
                case Scenario::discharge_prediction:
                    if (block.metrics) {
                        const auto& m = *block.metrics;
                        auto defined = [](double v, bool ok) {
                            return ok ? format_full(v) : std::string("undefined");
                        };
                        row("accuracy", format_full(m.accuracy));
                        row("precision@Alive", defined(m.precision_alive, m.precision_alive_defined));
                        row("recall@Alive", defined(m.recall_alive, m.recall_alive_defined));
                        row("precision@Expired",
                            defined(m.precision_expired, m.precision_expired_defined));
                        row("recall@Expired", defined(m.recall_expired, m.recall_expired_defined));
                    } else {
                        row("accuracy", "n/a");
                    }
                    break;
            }
        }
        detail::write_text_file(out / "report.md", md);
        written.push_back((out / "report.md").string());
    }

    if (formats.count(ReportFormat::csv)) {
        std::string csv = "model,scenario,stay_id,target_stay_id,status,score,judgment,predicted,note\n";
        for (const auto& t : artifact.trials) {
            csv += csv_escape(t.model) + ',' + scenario_name(t.scenario) + ',' +
                   std::to_string(t.stay_id) + ',' +
                   (t.target_stay_id ? std::to_string(*t.target_stay_id) : "") + ',' +
                   trial_status_name(t.status) + ',' + (t.score ? format_full(*t.score) : "") +
                   ',' + (t.judgment ? judgment_name(*t.judgment) : "") + ',' +
                   (t.predicted ? discharge_status_name(*t.predicted) : "") + ',' +
                   csv_escape(t.note) + '\n';
        }
        detail::write_text_file(out / "trials.csv", csv);
        written.push_back((out / "trials.csv").string());
    }

    if (formats.count(ReportFormat::plotdata)) {
        json series = json::array();
        std::map<std::pair<std::string, int>, json> grouped;
        for (const auto& t : artifact.trials) {
            json point;
            point["stay_id"] = t.stay_id;
            if (t.score) point["value"] = *t.score;
            else if (t.judgment && *t.judgment != Judgment::undetermined)
                point["value"] = *t.judgment == Judgment::alternative ? 1.0 : 0.0;
            else if (t.predicted && t.truth_outcome &&
                     *t.predicted != DischargeStatus::unknown)
                point["value"] = *t.predicted == *t.truth_outcome ? 1.0 : 0.0;
            else point["value"] = nullptr;
            auto key = std::make_pair(t.model, detail::scenario_order(t.scenario));
            if (!grouped.count(key)) {
                json entry;
                entry["model"] = t.model;
                entry["scenario"] = scenario_name(t.scenario);
                entry["points"] = json::array();
                grouped[key] = std::move(entry);
            }
            grouped[key]["points"].push_back(std::move(point));
        }
        for (auto& [key, entry] : grouped) series.push_back(std::move(entry));
        json aggregates = json::array();
        for (const auto& block : artifact.aggregates) {
            aggregates.push_back(detail::aggregate_to_json(block));
        }
        json plot{{"series", series}, {"aggregates", aggregates}};
        detail::write_text_file(out / "plotdata.json", plot.dump(2) + "\n");
        written.push_back((out / "plotdata.json").string());
    }
    return written;
}

/// Writes the run log, ground truths, aggregates, and provenance. Separate
/// files so transcripts can be shared without the answers.
inline void write_artifact(const RunArtifact& artifact,
                           const std::vector<PlannedTrial>& planned,
                           const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path out(out_dir);

    std::string trial_lines;
    for (const auto& t : artifact.trials) trial_lines += detail::trial_to_json(t).dump() + '\n';
    detail::write_text_file(out / "trials.jsonl", trial_lines);

    std::string truth_lines;
    for (const auto& p : planned) {
        if (!p.truth) continue;
        truth_lines +=
            detail::ground_truth_to_json(p.scenario, p.stay_id, p.target_stay_id, *p.truth).dump() +
            '\n';
    }
    detail::write_text_file(out / "ground_truth.jsonl", truth_lines);

    json aggregates = json::array();
    for (const auto& block : artifact.aggregates) {
        aggregates.push_back(detail::aggregate_to_json(block));
    }
    detail::write_text_file(out / "aggregates.json", aggregates.dump(2) + "\n");
    detail::write_text_file(out / "provenance.json", artifact.provenance.dump(2) + "\n");
}

/// Loads the four tables, plans every trial, completes and scores each one
/// per backend, aggregates, and writes the artifact plus reports. Failures
/// stay inside their trial; only zero constructible trials is fatal.
inline RunArtifact run_experiment(const ExperimentConfig& config) {
    std::vector<PatientRecord> pool;
    try {
        auto patients = load_patients(config.patient_path);
        auto diagnoses = load_diagnoses(config.diagnosis_path);
        auto treatments = load_treatments(config.treatment_path);
        auto vitals = load_vitals(config.vitals_path);
        auto assembled = assemble_records(patients.rows, diagnoses.rows, treatments.rows, vitals.rows);
        pool = filter_cohort(assembled.records, config.cohort);
    } catch (const Error& e) {
        if (e.code() == errc::io || e.code() == errc::missing_column) {
            throw Error(errc::data_unreadable, e.what());
        }
        throw;
    }

    ScenarioContext ctx;
    if (config.templates_dir) ctx.templates = TemplateSet::load_dir(*config.templates_dir);
    if (config.presetting_enabled) {
        ctx.presetting = build_presetting(
            config.exemplars.empty() ? default_fewshot_exemplars() : config.exemplars,
            ctx.templates);
    } else {
        ctx.presetting = {ChatMessage{Role::system, ctx.templates.presetting_system}};
    }

    std::vector<PlannedTrial> planned = plan_trials(config, pool, ctx);
    bool any_constructible = false;
    for (const auto& p : planned) {
        if (p.bundle) {
            any_constructible = true;
            break;
        }
    }
    if (!any_constructible) {
        throw Error(errc::config_invalid, "no trial is constructible from this config and data");
    }

    std::optional<ReplayStore> store;
    if (!config.replay_store_path.empty()) store = ReplayStore::open(config.replay_store_path);

    RunArtifact artifact;
    for (const auto& backend : config.backends) {
        ChatClient client(backend, config.lexicons.refusal);
        for (const auto& plan : planned) {
            TrialResult trial;
            trial.model = backend.label();
            trial.scenario = plan.scenario;
            trial.stay_id = plan.stay_id;
            trial.target_stay_id = plan.target_stay_id;
            if (!plan.bundle) {
                trial.status = TrialStatus::error;
                trial.note = plan.build_error;
                artifact.trials.push_back(std::move(trial));
                continue;
            }
            try {
                Transcript transcript =
                    client.complete(*plan.bundle, config.mode, store ? &*store : nullptr);
                trial.transcript = transcript;
                if (transcript.refusal) {
                    trial.status = TrialStatus::refused;
                    trial.note = "refusal detected";
                } else {
                    trial.status = TrialStatus::ok;
                    score_trial(trial, *plan.truth, transcript.response_text, config.lexicons);
                }
            } catch (const Error& e) {
                trial.status = TrialStatus::error;
                trial.note = e.what();
                trial.error_code = e.code();
            }
            artifact.trials.push_back(std::move(trial));
        }
    }
    detail::sort_trials(artifact.trials);

    std::map<std::pair<std::string, int>, std::vector<TrialResult>> groups;
    for (const auto& t : artifact.trials) {
        groups[{t.model, detail::scenario_order(t.scenario)}].push_back(t);
    }
    for (const auto& [key, trials] : groups) {
        artifact.aggregates.push_back(aggregate(trials, trials.front().scenario));
    }

    json provenance;
    provenance["config_digest"] = config.config_digest;
    provenance["seed"] = config.seed;
    provenance["mode"] = completion_mode_name(config.mode);
    provenance["trial_count"] = artifact.trials.size();
    std::string first_ts, last_ts;
    for (const auto& t : artifact.trials) {
        if (!t.transcript) continue;
        const std::string& ts = t.transcript->timestamp_utc;
        if (first_ts.empty() || ts < first_ts) first_ts = ts;
        if (last_ts.empty() || ts > last_ts) last_ts = ts;
    }
    provenance["timestamps"] = json{{"first", first_ts}, {"last", last_ts}};
    artifact.provenance = provenance;

    write_artifact(artifact, planned, config.out_dir);
    emit_report(artifact,
                {ReportFormat::markdown, ReportFormat::csv, ReportFormat::plotdata},
                config.out_dir);
    return artifact;
}

namespace detail {

inline TrialResult trial_from_json(const json& j) {
    TrialResult t;
    t.model = j.at("model").get<std::string>();
    auto scenario = parse_scenario(j.at("scenario").get<std::string>());
    if (!scenario) throw Error(errc::data_unreadable, "unknown scenario in trial row");
    t.scenario = *scenario;
    t.stay_id = j.at("stay_id").get<std::int64_t>();
    if (j.contains("target_stay_id") && !j.at("target_stay_id").is_null()) {
        t.target_stay_id = j.at("target_stay_id").get<std::int64_t>();
    }
    const std::string status = j.at("status").get<std::string>();
    t.status = status == "ok" ? TrialStatus::ok
               : status == "refused" ? TrialStatus::refused
                                     : TrialStatus::error;
    if (!j.at("score").is_null()) t.score = j.at("score").get<double>();
    if (!j.at("judgment").is_null()) {
        const std::string judgment = j.at("judgment").get<std::string>();
        t.judgment = judgment == "alternative" ? Judgment::alternative
                     : judgment == "current" ? Judgment::current
                                             : Judgment::undetermined;
    }
    if (!j.at("predicted").is_null()) {
        t.predicted = parse_discharge_status(j.at("predicted").get<std::string>());
    }
    t.note = j.value("note", std::string());
    if (!j.at("transcript").is_null()) t.transcript = transcript_from_json(j.at("transcript"));
    return t;
}

inline AggregateBlock aggregate_from_json(const json& j) {
    AggregateBlock b;
    b.model = j.at("model").get<std::string>();
    auto scenario = parse_scenario(j.at("scenario").get<std::string>());
    if (!scenario) throw Error(errc::data_unreadable, "unknown scenario in aggregate row");
    b.scenario = *scenario;
    b.trials = j.at("trials").get<std::size_t>();
    b.scored = j.at("scored").get<std::size_t>();
    b.refusals = j.at("refusals").get<std::size_t>();
    b.undetermined = j.at("undetermined").get<std::size_t>();
    b.errors = j.at("errors").get<std::size_t>();
    if (!j.at("mean_similarity").is_null()) b.mean_similarity = j.at("mean_similarity").get<double>();
    if (!j.at("positive_rate").is_null()) b.positive_rate = j.at("positive_rate").get<double>();
    if (!j.at("metrics").is_null()) {
        const auto& m = j.at("metrics");
        ClassificationMetrics metrics;
        metrics.accuracy = m.at("accuracy").get<double>();
        metrics.correct = m.at("correct").get<std::size_t>();
        metrics.total = m.at("total").get<std::size_t>();
        metrics.counts.unknown_count = m.at("unknown_count").get<std::size_t>();
        metrics.precision_alive = m.at("precision_alive").get<double>();
        metrics.precision_alive_defined = m.at("precision_alive_defined").get<bool>();
        metrics.recall_alive = m.at("recall_alive").get<double>();
        metrics.recall_alive_defined = m.at("recall_alive_defined").get<bool>();
        metrics.precision_expired = m.at("precision_expired").get<double>();
        metrics.precision_expired_defined = m.at("precision_expired_defined").get<bool>();
        metrics.recall_expired = m.at("recall_expired").get<double>();
        metrics.recall_expired_defined = m.at("recall_expired_defined").get<bool>();
        b.metrics = metrics;
    }
    return b;
}

} // namespace detail

/// Reads a run directory back into memory. Per-trial truth outcomes are
/// rejoined from ground_truth.jsonl, which lives apart from the trial log.
inline RunArtifact load_artifact(const std::string& artifact_dir) {
    const std::filesystem::path dir(artifact_dir);
    RunArtifact artifact;

    std::ifstream trials_in(dir / "trials.jsonl");
    if (!trials_in) {
        throw Error(errc::data_unreadable, "cannot open trials.jsonl in '" + artifact_dir + "'");
    }
    std::string line;
    while (std::getline(trials_in, line)) {
        if (trim(line).empty()) continue;
        artifact.trials.push_back(detail::trial_from_json(json::parse(line)));
    }

    std::map<std::string, DischargeStatus> outcome_truths;
    std::ifstream truths_in(dir / "ground_truth.jsonl");
    if (truths_in) {
        while (std::getline(truths_in, line)) {
            if (trim(line).empty()) continue;
            json j = json::parse(line);
            if (j.at("kind").get<std::string>() != "outcome_label") continue;
            outcome_truths[j.at("scenario").get<std::string>() + "|" +
                           std::to_string(j.at("stay_id").get<std::int64_t>())] =
                parse_discharge_status(j.at("outcome").get<std::string>());
        }
    }
    for (auto& t : artifact.trials) {
        auto it = outcome_truths.find(std::string(scenario_name(t.scenario)) + "|" +
                                      std::to_string(t.stay_id));
        if (it != outcome_truths.end()) t.truth_outcome = it->second;
    }

    std::ifstream agg_in(dir / "aggregates.json");
    if (!agg_in) {
        throw Error(errc::data_unreadable, "cannot open aggregates.json in '" + artifact_dir + "'");
    }
    std::ostringstream buf;
    buf << agg_in.rdbuf();
    for (const auto& j : json::parse(buf.str())) {
        artifact.aggregates.push_back(detail::aggregate_from_json(j));
    }

    std::ifstream prov_in(dir / "provenance.json");
    if (prov_in) {
        std::ostringstream pbuf;
        pbuf << prov_in.rdbuf();
        artifact.provenance = json::parse(pbuf.str());
    }
    return artifact;
}

/// Re-scores a previous run's stored transcripts offline: bundles and
/// ground truths are rebuilt from config plus data, responses come from the
/// artifact, and no network is touched. Output matches the original run.
inline RunArtifact rescore_artifact(const ExperimentConfig& config,
                                    const std::string& artifact_dir) {
    std::ifstream in(std::filesystem::path(artifact_dir) / "trials.jsonl");
    if (!in) throw Error(errc::data_unreadable, "cannot open trials.jsonl in '" + artifact_dir + "'");

    std::vector<PatientRecord> pool;
    {
        auto patients = load_patients(config.patient_path);
        auto diagnoses = load_diagnoses(config.diagnosis_path);
        auto treatments = load_treatments(config.treatment_path);
        auto vitals = load_vitals(config.vitals_path);
        auto assembled = assemble_records(patients.rows, diagnoses.rows, treatments.rows, vitals.rows);
        pool = filter_cohort(assembled.records, config.cohort);
    }
    ScenarioContext ctx;
    if (config.templates_dir) ctx.templates = TemplateSet::load_dir(*config.templates_dir);
    if (config.presetting_enabled) {
        ctx.presetting = build_presetting(
            config.exemplars.empty() ? default_fewshot_exemplars() : config.exemplars,
            ctx.templates);
    } else {
        ctx.presetting = {ChatMessage{Role::system, ctx.templates.presetting_system}};
    }
    std::vector<PlannedTrial> planned = plan_trials(config, pool, ctx);

    auto key_of = [](const std::string& model, Scenario scenario, std::int64_t stay,
                     std::optional<std::int64_t> target) {
        return model + "|" + scenario_name(scenario) + "|" + std::to_string(stay) + "|" +
               (target ? std::to_string(*target) : "");
    };
    std::map<std::string, const PlannedTrial*> plan_index;
    for (const auto& p : planned) {
        for (const auto& backend : config.backends) {
            plan_index[key_of(backend.label(), p.scenario, p.stay_id, p.target_stay_id)] = &p;
        }
    }

    RunArtifact artifact;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw Error(errc::data_unreadable,
                        "trials.jsonl line " + std::to_string(lineno) + ": " + e.what());
        }
        TrialResult trial;
        trial.model = j.at("model").get<std::string>();
        auto scenario = parse_scenario(j.at("scenario").get<std::string>());
        if (!scenario) throw Error(errc::data_unreadable, "unknown scenario in trials.jsonl");
        trial.scenario = *scenario;
        trial.stay_id = j.at("stay_id").get<std::int64_t>();
        if (j.contains("target_stay_id") && !j.at("target_stay_id").is_null()) {
            trial.target_stay_id = j.at("target_stay_id").get<std::int64_t>();
        }
        trial.note = j.value("note", std::string());
        if (!j.at("transcript").is_null()) {
            trial.transcript = transcript_from_json(j.at("transcript"));
        }

        auto it = plan_index.find(
            key_of(trial.model, trial.scenario, trial.stay_id, trial.target_stay_id));
        const PlannedTrial* plan = it == plan_index.end() ? nullptr : it->second;
        if (!plan || !plan->truth) {
            trial.status = TrialStatus::error;
            if (trial.note.empty()) trial.note = plan ? plan->build_error : "trial not in plan";
        } else if (!trial.transcript) {
            trial.status = TrialStatus::error;
            if (trial.note.empty()) trial.note = "no transcript stored";
        } else if (trial.transcript->refusal) {
            trial.status = TrialStatus::refused;
            trial.note = "refusal detected";
        } else {
            trial.status = TrialStatus::ok;
            trial.note.clear();
            score_trial(trial, *plan->truth, trial.transcript->response_text, config.lexicons);
        }
        artifact.trials.push_back(std::move(trial));
    }
    if (artifact.trials.empty()) {
        throw Error(errc::data_unreadable, "trials.jsonl holds no trials");
    }
    detail::sort_trials(artifact.trials);

    std::map<std::pair<std::string, int>, std::vector<TrialResult>> groups;
    for (const auto& t : artifact.trials) {
        groups[{t.model, detail::scenario_order(t.scenario)}].push_back(t);
    }
    for (const auto& [key, trials] : groups) {
        artifact.aggregates.push_back(aggregate(trials, trials.front().scenario));
    }
    json provenance;
    provenance["config_digest"] = config.config_digest;
    provenance["seed"] = config.seed;
    provenance["mode"] = "rescore";
    provenance["trial_count"] = artifact.trials.size();
    provenance["source_artifact"] = artifact_dir;
    artifact.provenance = provenance;

    write_artifact(artifact, planned, config.out_dir);
    emit_report(artifact,
                {ReportFormat::markdown, ReportFormat::csv, ReportFormat::plotdata},
                config.out_dir);
    return artifact;
}

} // namespace icueval
