#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "icueval/cohort.hpp"
#include "icueval/errors.hpp"
#include "icueval/ingest.hpp"
#include "icueval/scoring.hpp"
#include "icueval/templates.hpp"
#include "icueval/timeline.hpp"

namespace icueval {

enum class Role { system, user, assistant };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

inline std::optional<Role> parse_role(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    return std::nullopt;
}

struct ChatMessage {
    Role role = Role::user;
    std::string content;
    bool operator==(const ChatMessage&) const = default;
};

enum class Scenario { what_if, why_not, so_what, how_about, discharge_prediction };

inline const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::what_if: return "what-if";
        case Scenario::why_not: return "why-not";
        case Scenario::so_what: return "so-what";
        case Scenario::how_about: return "how-about";
        case Scenario::discharge_prediction: return "discharge-prediction";
    }
    return "?";
}

inline std::optional<Scenario> parse_scenario(std::string_view s) {
    if (s == "what-if" || s == "what_if") return Scenario::what_if;
    if (s == "why-not" || s == "why_not") return Scenario::why_not;
    if (s == "so-what" || s == "so_what") return Scenario::so_what;
    if (s == "how-about" || s == "how_about") return Scenario::how_about;
    if (s == "discharge-prediction" || s == "discharge_prediction")
        return Scenario::discharge_prediction;
    return std::nullopt;
}

/// A ready-to-send conversation: one system message first, then the
/// presetting turn(s), then the scenario question as the final user message.
struct PromptBundle {
    std::vector<ChatMessage> messages;
    Scenario scenario = Scenario::what_if;
    StayId stay_id;
};

/// What the response will be scored against. Kept separate from the bundle
/// in run artifacts so transcripts can be shared without leaking answers.
struct GroundTruth {
    enum class Kind { treatment_plan, diagnosis_set, outcome_label, alternative_preferred, target_plan };
    Kind kind = Kind::treatment_plan;
    std::vector<TreatmentItem> items;  // treatment_plan / target_plan
    std::vector<std::string> paths;    // diagnosis_set (deduplicated, order of first appearance)
    DischargeStatus outcome = DischargeStatus::unknown; // outcome_label

    static GroundTruth plan(std::vector<TreatmentItem> plan_items) {
        GroundTruth t;
        t.kind = Kind::treatment_plan;
        t.items = std::move(plan_items);
        return t;
    }
    static GroundTruth diagnoses(std::vector<std::string> diagnosis_paths) {
        GroundTruth t;
        t.kind = Kind::diagnosis_set;
        t.paths = std::move(diagnosis_paths);
        return t;
    }
    static GroundTruth label(DischargeStatus status) {
        GroundTruth t;
        t.kind = Kind::outcome_label;
        t.outcome = status;
        return t;
    }
    static GroundTruth alternative_preferred() {
        GroundTruth t;
        t.kind = Kind::alternative_preferred;
        return t;
    }
    static GroundTruth target(std::vector<TreatmentItem> plan_items) {
        GroundTruth t;
        t.kind = Kind::target_plan;
        t.items = std::move(plan_items);
        return t;
    }
};

inline const char* ground_truth_kind_name(GroundTruth::Kind k) {
    switch (k) {
        case GroundTruth::Kind::treatment_plan: return "treatment_plan";
        case GroundTruth::Kind::diagnosis_set: return "diagnosis_set";
        case GroundTruth::Kind::outcome_label: return "outcome_label";
        case GroundTruth::Kind::alternative_preferred: return "alternative_preferred";
        case GroundTruth::Kind::target_plan: return "target_plan";
    }
    return "?";
}

inline GroundTruth::Kind expected_truth_kind(Scenario s) {
    switch (s) {
        case Scenario::what_if: return GroundTruth::Kind::treatment_plan;
        case Scenario::why_not: return GroundTruth::Kind::alternative_preferred;
        case Scenario::so_what: return GroundTruth::Kind::diagnosis_set;
        case Scenario::how_about: return GroundTruth::Kind::target_plan;
        case Scenario::discharge_prediction: return GroundTruth::Kind::outcome_label;
    }
    return GroundTruth::Kind::treatment_plan;
}

/// The presetting turns plus the wording to build scenario questions from.
struct ScenarioContext {
    std::vector<ChatMessage> presetting;
    TemplateSet templates = TemplateSet::builtin();
};

/// Two neutral synthetic exemplar blocks per scenario, usable when the
/// caller supplies none of their own.
inline std::vector<std::string> default_fewshot_exemplars() {
    return {
        // what-if
        "A patient treated for pneumonia develops a new diagnosis of acute renal failure; the "
        "plan adds renal|dialysis|hemodialysis while keeping respiratory support.",
        // why-not
        "A patient on prolonged invasive ventilation kept deteriorating; switching to "
        "pulmonary|ventilation and oxygenation|prone positioning was the better choice.",
        // so-what
        "A patient receives cardiovascular|intravenous fluid|lactated ringers infusion "
        "repeatedly; the significance is volume resuscitation, pointing to fluid loss or "
        "distributive shock.",
        // how-about
        "A bronchodilator regimen for asthma transfers to COPD only after checking trigger "
        "differences and adding anticholinergic coverage.",
        // what-if
        "A patient with stable angina gains a new diagnosis of acute coronary syndrome; the "
        "plan escalates to cardiovascular|interventions|coronary angiography.",
        // why-not
        "For recurring seizures despite benzodiazepines, why not use "
        "neurologic|seizure therapy|anticonvulsant infusion; the alternative controls the "
        "episodes better.",
        // so-what
        "Frequent arterial blood gas sampling signals concern for respiratory failure even "
        "before any ventilator setting changes.",
        // how-about
        "An insulin protocol for type 2 diabetes transfers to steroid-induced hyperglycemia "
        "with tighter glucose monitoring.",
    };
}

/// System message plus the scenario-definition user turn. Exemplars are
/// inlined under the four scenario headings in round-robin order (first to
/// what-if, second to why-not, ...).
inline std::vector<ChatMessage> build_presetting(const std::vector<std::string>& fewshot_exemplars,
                                                 const TemplateSet& templates = TemplateSet::builtin()) {
    std::vector<std::string> slots(4);
    for (std::size_t i = 0; i < fewshot_exemplars.size(); ++i) {
        slots[i % 4] += "\nExample: " + fewshot_exemplars[i];
    }
    std::string user = render_template(templates.presetting_user,
                                       {{"what_if_examples", slots[0]},
                                        {"why_not_examples", slots[1]},
                                        {"so_what_examples", slots[2]},
                                        {"how_about_examples", slots[3]}});
    return {ChatMessage{Role::system, templates.presetting_system},
            ChatMessage{Role::user, user}};
}

namespace detail {

inline PromptBundle make_bundle(const ScenarioContext& ctx, Scenario scenario, StayId stay_id,
                                std::string user_text) {
    PromptBundle bundle;
    bundle.scenario = scenario;
    bundle.stay_id = stay_id;
    if (ctx.presetting.empty() || ctx.presetting.front().role != Role::system) {
        throw Error(errc::config_invalid, "presetting must start with a system message");
    }
    bundle.messages = ctx.presetting;
    bundle.messages.push_back(ChatMessage{Role::user, std::move(user_text)});
    return bundle;
}

/// Diagnosis clauses grouped by offset, the same shape the narrative uses.
inline std::string render_diagnosis_clauses(const std::vector<DiagnosisEvent>& diagnoses) {
    std::map<int, std::vector<const std::string*>> by_offset;
    for (const auto& d : diagnoses) by_offset[d.offset_min].push_back(&d.path);
    std::string out;
    bool first_clause = true;
    for (const auto& [offset, paths] : by_offset) {
        if (!first_clause) out += ", ";
        first_clause = false;
        out += "diagnosis: ";
        for (std::size_t i = 0; i < paths.size(); ++i) {
            if (i) out += ", ";
            out += *paths[i];
        }
        out += " (offset: " + std::to_string(offset) + ")";
    }
    return out;
}

inline std::string join_plan(const std::vector<TreatmentItem>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ", ";
        out += items[i].canonical();
    }
    return out;
}

} // namespace detail

/// Deduplicated diagnosis paths in first-appearance order (case-folded
/// comparison, original spelling kept).
inline std::vector<std::string> distinct_diagnosis_paths(const std::vector<DiagnosisEvent>& diagnoses) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& d : diagnoses) {
        std::string key = to_lower(d.path);
        if (seen.insert(key).second) out.push_back(d.path);
    }
    return out;
}

/// Default what-if split point: the median treatment offset, which yields
/// non-empty material on both sides whenever any split does.
inline int default_split_min(const PatientRecord& record) {
    if (record.treatments.empty()) {
        throw Error(errc::no_treatments,
                    "stay " + std::to_string(record.stay.stay_id.value) + " has no treatments");
    }
    std::vector<int> offsets;
    for (const auto& t : record.treatments) offsets.push_back(t.offset_min);
    std::sort(offsets.begin(), offsets.end());
    return offsets[offsets.size() / 2];
}

/// What-if: the stay up to the split is narrated, diagnoses at or after the
/// split become the "new diagnosis", and the ground truth is the post-split
/// treatment plan. Treatments already running before the split are part of
/// the visible narrative, so they are excluded from the truth; the score
/// targets what changed, and no truth item ever appears in the user text.
inline std::pair<PromptBundle, GroundTruth> build_what_if(const ScenarioContext& ctx,
                                                          const PatientRecord& record,
                                                          int split_min) {
    std::vector<DiagnosisEvent> new_diagnoses;
    bool has_pre_diagnosis = false;
    for (const auto& d : record.diagnoses) {
        if (d.offset_min < split_min) has_pre_diagnosis = true;
        else new_diagnoses.push_back(d);
    }
    if (!has_pre_diagnosis) {
        throw Error(errc::invalid_argument, "no diagnosis before split offset " +
                                                std::to_string(split_min));
    }
    if (new_diagnoses.empty()) {
        throw Error(errc::no_post_split_diagnosis,
                    "no diagnosis at or after split offset " + std::to_string(split_min));
    }
    std::vector<TreatmentEvent> pre_treatments, post_treatments;
    for (const auto& t : record.treatments) {
        if (t.offset_min >= split_min) post_treatments.push_back(t);
        else pre_treatments.push_back(t);
    }
    auto revealed = normalize_plan(pre_treatments);
    std::vector<TreatmentItem> truth_items;
    for (auto& item : normalize_plan(post_treatments)) {
        if (!std::binary_search(revealed.begin(), revealed.end(), item)) {
            truth_items.push_back(std::move(item));
        }
    }
    if (truth_items.empty()) {
        throw Error(errc::no_post_split_treatment,
                    "no new treatment at or after split offset " + std::to_string(split_min));
    }

    NarrativePolicy policy;
    policy.cutoff_min = split_min;
    std::string user = render_template(
        ctx.templates.what_if,
        {{"stay_id", std::to_string(record.stay.stay_id.value)},
         {"gender", gender_name(record.stay.gender)},
         {"age", record.stay.age.render()},
         {"disease", record.stay.disease},
         {"narrative", render_narrative(record, policy)},
         {"new_diagnoses", detail::render_diagnosis_clauses(new_diagnoses)}});
    return {detail::make_bundle(ctx, Scenario::what_if, record.stay.stay_id, std::move(user)),
            GroundTruth::plan(std::move(truth_items))};
}

/// Why-not: an expired stay's full narrative plus the challenge question.
/// With a peer, the question names the peer's concrete alternative plan.
inline std::pair<PromptBundle, GroundTruth> build_why_not(
    const ScenarioContext& ctx, const PatientRecord& record,
    const std::optional<PatientRecord>& peer = std::nullopt) {
    if (record.stay.discharge_status != DischargeStatus::expired) {
        throw Error(errc::not_expired, "stay " + std::to_string(record.stay.stay_id.value) +
                                           " did not expire; why-not needs an expired stay");
    }
    std::string alternative_section;
    if (peer) {
        auto peer_plan = normalize_plan(peer->treatments);
        alternative_section =
            render_template(ctx.templates.why_not_alternative,
                            {{"alternative_plan", detail::join_plan(peer_plan)}}) +
            "\n";
    }
    std::string user = render_template(
        ctx.templates.why_not,
        {{"stay_id", std::to_string(record.stay.stay_id.value)},
         {"gender", gender_name(record.stay.gender)},
         {"age", record.stay.age.render()},
         {"disease", record.stay.disease},
         {"narrative", render_narrative(record, NarrativePolicy{})},
         {"alternative_section", alternative_section}});
    return {detail::make_bundle(ctx, Scenario::why_not, record.stay.stay_id, std::move(user)),
            GroundTruth::alternative_preferred()};
}

/// So-what: treatments and vitals for the window, diagnoses withheld; the
/// withheld in-window diagnoses are the ground truth.
inline std::pair<PromptBundle, GroundTruth> build_so_what(const ScenarioContext& ctx,
                                                          const PatientRecord& record,
                                                          TimeWindow window) {
    PatientRecord restricted = restrict_to_window(record, window);
    if (restricted.treatments.empty()) {
        throw Error(errc::no_treatment_in_window,
                    "window [" + std::to_string(window.start_min) + ", " +
                        std::to_string(window.end_min) + ") holds no treatment");
    }
    auto truth_paths = distinct_diagnosis_paths(restricted.diagnoses);
    if (truth_paths.empty()) {
        throw Error(errc::no_diagnosis_in_window,
                    "window [" + std::to_string(window.start_min) + ", " +
                        std::to_string(window.end_min) + ") holds no diagnosis");
    }
    NarrativePolicy policy;
    policy.include_diagnoses = false;
    std::string user = render_template(
        ctx.templates.so_what,
        {{"stay_id", std::to_string(record.stay.stay_id.value)},
         {"gender", gender_name(record.stay.gender)},
         {"age", record.stay.age.render()},
         {"disease", record.stay.disease},
         {"narrative", render_narrative(restricted, policy)}});
    return {detail::make_bundle(ctx, Scenario::so_what, record.stay.stay_id, std::move(user)),
            GroundTruth::diagnoses(std::move(truth_paths))};
}

/// How-about: the source stay's story plus the transfer question naming the
/// target's disease and diagnoses. The target's actual plan is the ground
/// truth, revealed only at scoring time.
inline std::pair<PromptBundle, GroundTruth> build_how_about(const ScenarioContext& ctx,
                                                            const PatientRecord& source,
                                                            const PatientRecord& target) {
    if (to_lower(source.stay.disease) == to_lower(target.stay.disease)) {
        throw Error(errc::same_disease, "source and target share the disease '" +
                                            source.stay.disease + "'");
    }
    if (source.treatments.empty()) {
        throw Error(errc::invalid_argument, "source stay has no treatment plan to transfer");
    }
    if (target.diagnoses.empty()) {
        throw Error(errc::invalid_argument, "target stay has no diagnoses to present");
    }
    auto truth_items = normalize_plan(target.treatments);
    if (truth_items.empty()) {
        throw Error(errc::missing_target_plan,
                    "target stay " + std::to_string(target.stay.stay_id.value) +
                        " has no treatment plan to score against");
    }
    NarrativePolicy policy;
    policy.include_vitals = false;
    std::string user = render_template(
        ctx.templates.how_about,
        {{"stay_id", std::to_string(source.stay.stay_id.value)},
         {"gender", gender_name(source.stay.gender)},
         {"age", source.stay.age.render()},
         {"disease", source.stay.disease},
         {"narrative", render_narrative(source, policy)},
         {"target_disease", target.stay.disease},
         {"target_diagnoses", detail::render_diagnosis_clauses(target.diagnoses)}});
    return {detail::make_bundle(ctx, Scenario::how_about, source.stay.stay_id, std::move(user)),
            GroundTruth::target(std::move(truth_items))};
}

/// Demographics plus the full treatment-segmented narrative, ending with the
/// prediction question. This exact string is also the fine-tuning user turn.
inline std::string prediction_body(const PatientRecord& record) {
    return std::string("gender: ") + gender_name(record.stay.gender) +
           ", age: " + record.stay.age.render() + ", disease: " + record.stay.disease + ", ," +
           render_narrative(record, NarrativePolicy{}) + ", patient's status after discharge?";
}

/// Discharge prediction: framing sentence plus the prediction body; the
/// recorded discharge status is the ground truth.
inline std::pair<PromptBundle, GroundTruth> build_discharge_prediction(const ScenarioContext& ctx,
                                                                       const PatientRecord& record) {
    if (record.stay.discharge_status == DischargeStatus::unknown) {
        throw Error(errc::unknown_outcome, "stay " + std::to_string(record.stay.stay_id.value) +
                                               " has no recorded discharge status");
    }
    if (record.treatments.empty()) {
        throw Error(errc::invalid_argument, "prediction needs at least one treatment");
    }
    std::string user = render_template(ctx.templates.prediction,
                                       {{"stay_id", std::to_string(record.stay.stay_id.value)},
                                        {"body", prediction_body(record)}});
    return {detail::make_bundle(ctx, Scenario::discharge_prediction, record.stay.stay_id,
                                std::move(user)),
            GroundTruth::label(record.stay.discharge_status)};
}

} // namespace icueval
