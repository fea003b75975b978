#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "icueval/errors.hpp"
#include "icueval/ingest.hpp"
#include "icueval/scoring.hpp"
#include "icueval/text.hpp"

namespace icueval {

/// Conjunctive stay filter. The age cap is exclusive and configurable
/// rather than hard-coded; the over-89 sentinel never passes a cap.
struct CohortFilter {
    std::optional<int> max_age_exclusive; // in [1, 90] when set
    std::optional<DischargeStatus> outcome;
    std::optional<std::string> disease_substring; // case-insensitive
    std::size_t min_diagnoses = 0;
    std::size_t min_treatments = 0;
    std::size_t min_vitals = 0;
};

inline std::vector<PatientRecord> filter_cohort(const std::vector<PatientRecord>& records,
                                                const CohortFilter& filter) {
    if (filter.max_age_exclusive && (*filter.max_age_exclusive < 1 || *filter.max_age_exclusive > 90)) {
        throw Error(errc::config_invalid, "max_age_exclusive must be in [1, 90]");
    }
    std::vector<PatientRecord> out;
    for (const auto& record : records) {
        if (filter.max_age_exclusive &&
            record.stay.age.comparison_value() >= *filter.max_age_exclusive) {
            continue;
        }
        if (filter.outcome && record.stay.discharge_status != *filter.outcome) continue;
        if (filter.disease_substring &&
            !contains_ci(record.stay.disease, *filter.disease_substring)) {
            continue;
        }
        if (record.diagnoses.size() < filter.min_diagnoses) continue;
        if (record.treatments.size() < filter.min_treatments) continue;
        if (record.vitals.size() < filter.min_vitals) continue;
        out.push_back(record);
    }
    return out;
}

/// What makes another stay an acceptable alternative-treatment peer.
struct MatchCriteria {
    bool same_disease = false;
    bool same_primary_diagnosis = false;
    bool require_different_treatment = false;
    std::optional<DischargeStatus> require_outcome;
    std::optional<int> age_window_years;

    bool any_enabled() const {
        return same_disease || same_primary_diagnosis || require_different_treatment ||
               require_outcome.has_value() || age_window_years.has_value();
    }
};

/// Earliest-recorded diagnosis path, case-folded. Stays with no diagnoses
/// have none.
inline std::optional<std::string> primary_diagnosis(const PatientRecord& record) {
    if (record.diagnoses.empty()) return std::nullopt;
    return to_lower(record.diagnoses.front().path);
}

/// Finds the best pool member matching the enabled criteria, ties broken by
/// smallest absolute age difference then smallest stay id. Absence is an
/// ordinary empty result.
inline std::optional<PatientRecord> find_alternative_peer(const PatientRecord& index,
                                                          const std::vector<PatientRecord>& pool,
                                                          const MatchCriteria& criteria) {
    if (!criteria.any_enabled()) {
        throw Error(errc::config_invalid, "match criteria enable nothing");
    }
    if (index.diagnoses.empty() || index.treatments.empty()) {
        throw Error(errc::invalid_argument,
                    "peer search needs an index stay with diagnoses and treatments");
    }
    const std::string index_disease = to_lower(index.stay.disease);
    const auto index_primary = primary_diagnosis(index);
    const auto index_plan = normalize_plan(index.treatments);
    const int index_age = index.stay.age.comparison_value();

    const PatientRecord* best = nullptr;
    int best_age_dist = 0;
    for (const auto& candidate : pool) {
        if (candidate.stay.stay_id == index.stay.stay_id) continue;
        if (criteria.same_disease && to_lower(candidate.stay.disease) != index_disease) continue;
        if (criteria.same_primary_diagnosis) {
            auto candidate_primary = primary_diagnosis(candidate);
            if (!candidate_primary || candidate_primary != index_primary) continue;
        }
        if (criteria.require_different_treatment &&
            normalize_plan(candidate.treatments) == index_plan) {
            continue;
        }
        if (criteria.require_outcome &&
            candidate.stay.discharge_status != *criteria.require_outcome) {
            continue;
        }
        int age_dist = std::abs(candidate.stay.age.comparison_value() - index_age);
        if (criteria.age_window_years && age_dist > *criteria.age_window_years) continue;
        if (!best || age_dist < best_age_dist ||
            (age_dist == best_age_dist && candidate.stay.stay_id < best->stay.stay_id)) {
            best = &candidate;
            best_age_dist = age_dist;
        }
    }
    if (!best) return std::nullopt;
    return *best;
}

/// Cross product of stays whose disease contains disease_a with stays
/// containing disease_b; self-pairs dropped, result ordered by ascending
/// (first, second) stay id.
inline std::vector<std::pair<PatientRecord, PatientRecord>> pair_similar_diseases(
    const std::vector<PatientRecord>& pool, const std::string& disease_a,
    const std::string& disease_b) {
    if (to_lower(trim(disease_a)) == to_lower(trim(disease_b))) {
        throw Error(errc::invalid_argument, "disease names must differ");
    }
    std::vector<const PatientRecord*> group_a, group_b;
    for (const auto& record : pool) {
        if (contains_ci(record.stay.disease, disease_a)) group_a.push_back(&record);
        if (contains_ci(record.stay.disease, disease_b)) group_b.push_back(&record);
    }
    std::vector<std::pair<const PatientRecord*, const PatientRecord*>> refs;
    for (const auto* a : group_a) {
        for (const auto* b : group_b) {
            if (a->stay.stay_id == b->stay.stay_id) continue;
            refs.emplace_back(a, b);
        }
    }
    std::sort(refs.begin(), refs.end(), [](const auto& x, const auto& y) {
        if (x.first->stay.stay_id != y.first->stay.stay_id)
            return x.first->stay.stay_id < y.first->stay.stay_id;
        return x.second->stay.stay_id < y.second->stay.stay_id;
    });
    refs.erase(std::unique(refs.begin(), refs.end(),
                           [](const auto& x, const auto& y) {
                               return x.first->stay.stay_id == y.first->stay.stay_id &&
                                      x.second->stay.stay_id == y.second->stay.stay_id;
                           }),
               refs.end());
    std::vector<std::pair<PatientRecord, PatientRecord>> pairs;
    pairs.reserve(refs.size());
    for (const auto& [a, b] : refs) pairs.emplace_back(*a, *b);
    return pairs;
}

/// Exactly n_per_class stays of each outcome, drawn by a seeded portable
/// permutation: alive picks first, then expired picks, each in drawn order.
/// Same seed, same stays, any platform.
inline std::vector<PatientRecord> sample_balanced(const std::vector<PatientRecord>& records,
                                                  std::size_t n_per_class, std::uint64_t seed) {
    if (n_per_class == 0) return {};
    std::vector<const PatientRecord*> alive, expired;
    for (const auto& record : records) {
        if (record.stay.discharge_status == DischargeStatus::alive) alive.push_back(&record);
        else if (record.stay.discharge_status == DischargeStatus::expired) expired.push_back(&record);
    }
    if (alive.size() < n_per_class) {
        throw Error(errc::insufficient_class, "need " + std::to_string(n_per_class) +
                                                  " Alive stays, pool has " +
                                                  std::to_string(alive.size()));
    }
    if (expired.size() < n_per_class) {
        throw Error(errc::insufficient_class, "need " + std::to_string(n_per_class) +
                                                  " Expired stays, pool has " +
                                                  std::to_string(expired.size()));
    }
    std::mt19937_64 rng(seed);
    deterministic_shuffle(alive, rng);
    deterministic_shuffle(expired, rng);
    std::vector<PatientRecord> out;
    out.reserve(2 * n_per_class);
    for (std::size_t i = 0; i < n_per_class; ++i) out.push_back(*alive[i]);
    for (std::size_t i = 0; i < n_per_class; ++i) out.push_back(*expired[i]);
    return out;
}

} // namespace icueval
