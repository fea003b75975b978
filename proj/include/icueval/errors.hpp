#pragma once

#include <stdexcept>
#include <string>

namespace icueval {

/// Error codes for everything the harness can reject. Exceptions carry one of
/// these so callers (and the CLI exit-code mapping) can dispatch without
/// string matching.
enum class errc {
    io,
    missing_column,
    malformed_row,
    non_numeric_age,
    age_out_of_range,
    duplicate_stay_id,
    insufficient_class,
    no_treatments,
    empty_narrative,
    no_post_split_diagnosis,
    no_post_split_treatment,
    not_expired,
    no_treatment_in_window,
    no_diagnosis_in_window,
    same_disease,
    missing_target_plan,
    unknown_outcome,
    empty_item,
    empty_input,
    empty_trials,
    network,
    rate_limited,
    auth_missing,
    replay_miss,
    config_invalid,
    data_unreadable,
    template_error,
    invalid_argument,
};

inline const char* errc_name(errc c) {
    switch (c) {
        case errc::io: return "io";
        case errc::missing_column: return "missing_column";
        case errc::malformed_row: return "malformed_row";
        case errc::non_numeric_age: return "non_numeric_age";
        case errc::age_out_of_range: return "age_out_of_range";
        case errc::duplicate_stay_id: return "duplicate_stay_id";
        case errc::insufficient_class: return "insufficient_class";
        case errc::no_treatments: return "no_treatments";
        case errc::empty_narrative: return "empty_narrative";
        case errc::no_post_split_diagnosis: return "no_post_split_diagnosis";
        case errc::no_post_split_treatment: return "no_post_split_treatment";
        case errc::not_expired: return "not_expired";
        case errc::no_treatment_in_window: return "no_treatment_in_window";
        case errc::no_diagnosis_in_window: return "no_diagnosis_in_window";
        case errc::same_disease: return "same_disease";
        case errc::missing_target_plan: return "missing_target_plan";
        case errc::unknown_outcome: return "unknown_outcome";
        case errc::empty_item: return "empty_item";
        case errc::empty_input: return "empty_input";
        case errc::empty_trials: return "empty_trials";
        case errc::network: return "network";
        case errc::rate_limited: return "rate_limited";
        case errc::auth_missing: return "auth_missing";
        case errc::replay_miss: return "replay_miss";
        case errc::config_invalid: return "config_invalid";
        case errc::data_unreadable: return "data_unreadable";
        case errc::template_error: return "template_error";
        case errc::invalid_argument: return "invalid_argument";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message),
          code_(code) {}

    errc code() const { return code_; }

private:
    errc code_;
};

} // namespace icueval
