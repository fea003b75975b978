#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "icueval/errors.hpp"
#include "icueval/ingest.hpp"
#include "icueval/text.hpp"

namespace icueval {

/// Canonical treatment-plan entry: the pipe-path split into case-folded,
/// trimmed segments. Two plans compare item by item in this form.
struct TreatmentItem {
    std::vector<std::string> segments;

    std::string canonical() const {
        std::string out;
        for (std::size_t i = 0; i < segments.size(); ++i) {
            if (i) out += '|';
            out += segments[i];
        }
        return out;
    }

    /// First two segments, the "parent" level that earns partial credit.
    /// Single-segment items have no parent.
    std::optional<std::pair<std::string, std::string>> parent_key() const {
        if (segments.size() < 2) return std::nullopt;
        return std::make_pair(segments[0], segments[1]);
    }

    auto operator<=>(const TreatmentItem&) const = default;
};

inline TreatmentItem normalize_item(std::string_view raw) {
    if (trim(raw).empty()) throw Error(errc::empty_item, "empty treatment item");
    TreatmentItem item;
    for (const auto& part : split(raw, '|')) {
        std::string seg = to_lower(trim(part));
        if (seg.empty()) {
            throw Error(errc::empty_item,
                        "treatment item '" + std::string(raw) + "' has an empty segment");
        }
        item.segments.push_back(std::move(seg));
    }
    return item;
}

inline std::optional<TreatmentItem> try_normalize_item(std::string_view raw) {
    try {
        return normalize_item(raw);
    } catch (const Error&) {
        return std::nullopt;
    }
}

/// Sorted unique items; the set form used for ground-truth plans.
inline std::vector<TreatmentItem> normalize_plan(const std::vector<TreatmentEvent>& treatments) {
    std::vector<TreatmentItem> items;
    for (const auto& t : treatments) {
        if (auto item = try_normalize_item(t.path)) items.push_back(std::move(*item));
    }
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    return items;
}

/// Phrase lists driving free-text interpretation. All matching is
/// case-insensitive. Files are one phrase per line (blank lines skipped);
/// any list can be swapped per run.
struct Lexicons {
    std::vector<std::string> refusal;
    std::vector<std::string> outcome_alive;
    std::vector<std::string> outcome_expired;
    std::vector<std::string> decision_alternative;
    std::vector<std::string> decision_current;
    std::vector<std::string> stopwords;
    std::vector<std::string> plan_headings;
    std::vector<std::string> consideration_headings;

    static Lexicons defaults() {
        Lexicons lex;
        lex.refusal = {"insufficient", "cannot provide medical", "i am not able to"};
        lex.outcome_alive = {"status: alive", "alive", "survive", "lived"};
        lex.outcome_expired = {"status: expired", "expired", "deceased", "died", "dead"};
        lex.decision_alternative = {"alternative", "different treatment", "switch", "change the treatment"};
        lex.decision_current = {"current treatment", "what has been used", "no change",
                                "remains appropriate", "keep the current"};
        lex.stopwords = {"a",     "an",    "and",   "are",   "as",    "at",    "be",    "been",
                         "but",   "by",    "can",   "could", "for",   "from",  "has",   "have",
                         "in",    "into",  "is",    "it",    "its",   "may",   "might", "must",
                         "need",  "needs", "of",    "on",    "or",    "shall", "should", "such",
                         "than",  "that",  "the",   "then",  "they",  "this",  "to",    "upon",
                         "was",   "were",  "when",  "which", "will",  "with",  "would"};
        lex.plan_headings = {"treatment plan", "plan:"};
        lex.consideration_headings = {"key considerations", "considerations:"};
        return lex;
    }
};

inline std::vector<std::string> load_phrase_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(errc::io, "cannot open lexicon file '" + path + "'");
    std::vector<std::string> phrases;
    std::string line;
    while (std::getline(in, line)) {
        std::string phrase = to_lower(trim(line));
        if (!phrase.empty()) phrases.push_back(std::move(phrase));
    }
    return phrases;
}

/// Outcome of a plan-to-plan comparison. Exact matches pair identical
/// canonical paths; parent matches pair leftover items agreeing on their
/// first two segments and score half.
struct SimilarityReport {
    std::size_t exact_matches = 0;
    std::size_t parent_matches = 0;
    std::size_t predicted_count = 0;
    std::size_t truth_count = 0;
    double score = 0;
};

/// Point-to-point plan similarity: greedy one-to-one matching, exact paths
/// first (weight 1.0), then parent-level agreement (weight 0.5), normalized
/// by the larger plan so padding is penalized. Two empty plans count as a
/// perfect match; empty versus non-empty scores zero. The greedy result
/// equals the optimal assignment because matches only exist inside
/// same-parent groups.
inline SimilarityReport plan_similarity(std::span<const TreatmentItem> predicted,
                                        std::span<const TreatmentItem> truth) {
    SimilarityReport report;
    report.predicted_count = predicted.size();
    report.truth_count = truth.size();
    if (predicted.empty() && truth.empty()) {
        report.score = 1.0;
        return report;
    }
    if (predicted.empty() || truth.empty()) {
        report.score = 0.0;
        return report;
    }

    std::map<std::string, std::size_t> truth_by_path;
    for (const auto& item : truth) ++truth_by_path[item.canonical()];

    std::vector<const TreatmentItem*> unmatched_predicted;
    for (const auto& item : predicted) {
        auto it = truth_by_path.find(item.canonical());
        if (it != truth_by_path.end() && it->second > 0) {
            --it->second;
            ++report.exact_matches;
        } else {
            unmatched_predicted.push_back(&item);
        }
    }

    std::map<std::pair<std::string, std::string>, std::size_t> truth_parents;
    {
        std::map<std::string, std::size_t> leftover = truth_by_path;
        for (const auto& item : truth) {
            auto key = item.canonical();
            auto it = leftover.find(key);
            if (it != leftover.end() && it->second > 0) {
                --it->second;
                if (auto parent = item.parent_key()) ++truth_parents[*parent];
            }
        }
    }
    for (const TreatmentItem* item : unmatched_predicted) {
        auto parent = item->parent_key();
        if (!parent) continue;
        auto it = truth_parents.find(*parent);
        if (it != truth_parents.end() && it->second > 0) {
            --it->second;
            ++report.parent_matches;
        }
    }

    double weighted = static_cast<double>(report.exact_matches) +
                      0.5 * static_cast<double>(report.parent_matches);
    report.score = weighted / static_cast<double>(std::max(predicted.size(), truth.size()));
    return report;
}

namespace detail {

inline bool is_list_line(std::string_view line, std::string_view& content) {
    std::string_view s = trim(line);
    if (s.empty()) return false;
    if (s.front() == '-' || s.front() == '*') {
        content = trim(s.substr(1));
        return !content.empty();
    }
    std::size_t digits = 0;
    while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits]))) ++digits;
    if (digits > 0 && digits < s.size() && (s[digits] == '.' || s[digits] == ')')) {
        content = trim(s.substr(digits + 1));
        return !content.empty();
    }
    return false;
}

inline bool has_heading(std::string_view line_lower, const std::vector<std::string>& headings) {
    for (const auto& h : headings) {
        if (line_lower.find(to_lower(h)) != std::string::npos) return true;
    }
    return false;
}

/// Extracts the text of enumerated/bulleted lines. With a heading present,
/// takes the runs of list lines following heading lines; otherwise falls
/// back to every list line in the text.
inline std::vector<std::string> extract_list_items(std::string_view text,
                                                   const std::vector<std::string>& headings) {
    std::vector<std::string> lines = split(text, '\n');
    std::vector<std::string> items;
    bool any_heading = false;
    bool collecting = false;
    for (const auto& line : lines) {
        std::string lower = to_lower(line);
        if (has_heading(lower, headings)) {
            any_heading = true;
            collecting = true;
            continue;
        }
        std::string_view content;
        if (is_list_line(line, content)) {
            if (collecting) items.emplace_back(content);
        } else if (!trim(line).empty()) {
            collecting = false;
        }
    }
    if (!any_heading) {
        items.clear();
        for (const auto& line : lines) {
            std::string_view content;
            if (is_list_line(line, content)) items.emplace_back(content);
        }
    }
    return items;
}

} // namespace detail

/// Pulls the enumerated plan out of a response. Lines under a plan heading
/// ("treatment plan", "plan:") are items; bare numbered/bulleted lists count
/// when no heading exists. Pipe-paths normalize segment-wise, anything else
/// becomes a single-segment item. Never fails; no plan means no items.
inline std::vector<TreatmentItem> extract_plan(std::string_view response_text,
                                               const Lexicons& lexicons = Lexicons::defaults()) {
    std::vector<TreatmentItem> items;
    for (const auto& line : detail::extract_list_items(response_text, lexicons.plan_headings)) {
        if (auto item = try_normalize_item(line)) items.push_back(std::move(*item));
    }
    return items;
}

enum class Judgment { alternative, current, undetermined };

inline const char* judgment_name(Judgment j) {
    switch (j) {
        case Judgment::alternative: return "alternative";
        case Judgment::current: return "current";
        case Judgment::undetermined: return "undetermined";
    }
    return "undetermined";
}

/// Reads the decision out of a why-not response: the region from the last
/// "decision" marker (or the final paragraph) is scanned for
/// alternative-preference versus current-preference phrases, the one closer
/// to the end winning. No signal in either direction is undetermined, never
/// coerced.
inline Judgment judge_alternative(std::string_view response_text,
                                  const Lexicons& lexicons = Lexicons::defaults()) {
    std::string lower = to_lower(response_text);
    std::size_t region_start = 0;
    if (auto pos = lower.rfind("decision"); pos != std::string::npos) {
        region_start = pos;
    } else if (auto para = lower.rfind("\n\n"); para != std::string::npos) {
        region_start = para + 2;
    }
    std::string_view region = std::string_view(lower).substr(region_start);

    std::optional<std::size_t> alt_end, cur_end;
    for (const auto& phrase : lexicons.decision_alternative) {
        if (auto end = last_phrase_end(region, to_lower(phrase))) {
            alt_end = std::max(alt_end.value_or(0), *end);
        }
    }
    for (const auto& phrase : lexicons.decision_current) {
        if (auto end = last_phrase_end(region, to_lower(phrase))) {
            cur_end = std::max(cur_end.value_or(0), *end);
        }
    }
    if (alt_end && (!cur_end || *alt_end > *cur_end)) return Judgment::alternative;
    if (cur_end) return Judgment::current;
    return Judgment::undetermined;
}

/// Recall over ground-truth diagnoses: the fraction of truth paths whose
/// leaf segment (last pipe segment, case-folded) occurs as a bounded phrase
/// in the response. Leaves, not full paths, because prose names conditions.
inline double diagnosis_similarity(std::string_view response_text,
                                   const std::vector<std::string>& truth_paths) {
    if (truth_paths.empty()) throw Error(errc::empty_input, "diagnosis truth set is empty");
    std::string lower = to_lower(response_text);
    std::size_t hits = 0;
    for (const auto& path : truth_paths) {
        auto segments = split(path, '|');
        std::string leaf;
        for (auto it = segments.rbegin(); it != segments.rend(); ++it) {
            leaf = to_lower(trim(*it));
            if (!leaf.empty()) break;
        }
        if (!leaf.empty() && contains_phrase(lower, leaf)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(truth_paths.size());
}

/// consideration_coverage with the supporting counts; considered == 0 is a
/// scoreable-but-degenerate case callers may want to flag.
struct CoverageReport {
    double coverage = 0;
    std::size_t considered = 0;
    std::size_t satisfied = 0;
};

/// How many of the response's enumerated key considerations the actual plan
/// satisfies. A consideration is satisfied when it shares at least one
/// content word (case-folded, length >= 4, stop-words removed) with any
/// plan item.
inline CoverageReport coverage_report(std::string_view response_text,
                                      std::span<const TreatmentItem> actual_plan,
                                      const Lexicons& lexicons = Lexicons::defaults()) {
    if (actual_plan.empty()) throw Error(errc::empty_input, "actual plan is empty");
    std::set<std::string> stop(lexicons.stopwords.begin(), lexicons.stopwords.end());
    auto content_words = [&](std::string_view text) {
        std::set<std::string> words;
        for (auto& w : tokenize_words(text)) {
            if (w.size() >= 4 && !stop.count(w)) words.insert(std::move(w));
        }
        return words;
    };

    std::set<std::string> plan_words;
    for (const auto& item : actual_plan) {
        for (const auto& seg : item.segments) {
            auto words = content_words(seg);
            plan_words.insert(words.begin(), words.end());
        }
    }

    CoverageReport report;
    for (const auto& consideration :
         detail::extract_list_items(response_text, lexicons.consideration_headings)) {
        ++report.considered;
        for (const auto& word : content_words(consideration)) {
            if (plan_words.count(word)) {
                ++report.satisfied;
                break;
            }
        }
    }
    report.coverage = report.considered == 0
                          ? 0.0
                          : static_cast<double>(report.satisfied) /
                                static_cast<double>(report.considered);
    return report;
}

inline double consideration_coverage(std::string_view response_text,
                                     std::span<const TreatmentItem> actual_plan,
                                     const Lexicons& lexicons = Lexicons::defaults()) {
    return coverage_report(response_text, actual_plan, lexicons).coverage;
}

/// Predicted discharge status from free text. Both polarities present means
/// the phrase nearest the end wins; neither means Unknown.
inline DischargeStatus extract_outcome(std::string_view response_text,
                                       const Lexicons& lexicons = Lexicons::defaults()) {
    std::string lower = to_lower(response_text);
    std::optional<std::size_t> alive_end, expired_end;
    for (const auto& phrase : lexicons.outcome_alive) {
        if (auto end = last_phrase_end(lower, to_lower(phrase))) {
            alive_end = std::max(alive_end.value_or(0), *end);
        }
    }
    for (const auto& phrase : lexicons.outcome_expired) {
        if (auto end = last_phrase_end(lower, to_lower(phrase))) {
            expired_end = std::max(expired_end.value_or(0), *end);
        }
    }
    if (alive_end && (!expired_end || *alive_end > *expired_end)) return DischargeStatus::alive;
    if (expired_end) return DischargeStatus::expired;
    return DischargeStatus::unknown;
}

/// Per-label confusion tallies. Unknown predictions are neither TP nor FP
/// anywhere; they land in unknown_count (and in FN of the true label).
struct ConfusionCounts {
    std::size_t tp_alive = 0, fp_alive = 0, fn_alive = 0;
    std::size_t tp_expired = 0, fp_expired = 0, fn_expired = 0;
    std::size_t unknown_count = 0;
};

struct ClassificationMetrics {
    ConfusionCounts counts;
    double precision_alive = 0, recall_alive = 0;
    double precision_expired = 0, recall_expired = 0;
    bool precision_alive_defined = true, recall_alive_defined = true;
    bool precision_expired_defined = true, recall_expired_defined = true;
    double accuracy = 0;
    std::size_t correct = 0;
    std::size_t total = 0;
};

/// precision(L) = TP/(TP+FP), recall(L) = TP/(TP+FN), accuracy =
/// correct/total. 0/0 ratios report 0 and are flagged undefined. Truths must
/// be Alive or Expired; predictions may be Unknown and count as wrong.
inline ClassificationMetrics classification_metrics(
    std::span<const std::pair<DischargeStatus, DischargeStatus>> predicted_truth_pairs) {
    if (predicted_truth_pairs.empty()) throw Error(errc::empty_input, "no prediction pairs");
    ClassificationMetrics m;
    m.total = predicted_truth_pairs.size();
    for (const auto& [predicted, truth] : predicted_truth_pairs) {
        if (truth != DischargeStatus::alive && truth != DischargeStatus::expired) {
            throw Error(errc::invalid_argument, "truth label must be Alive or Expired");
        }
        if (predicted == DischargeStatus::unknown) ++m.counts.unknown_count;
        if (predicted == truth) ++m.correct;
        if (truth == DischargeStatus::alive) {
            if (predicted == DischargeStatus::alive) ++m.counts.tp_alive;
            else ++m.counts.fn_alive;
        } else {
            if (predicted == DischargeStatus::alive) ++m.counts.fp_alive;
        }
        if (truth == DischargeStatus::expired) {
            if (predicted == DischargeStatus::expired) ++m.counts.tp_expired;
            else ++m.counts.fn_expired;
        } else {
            if (predicted == DischargeStatus::expired) ++m.counts.fp_expired;
        }
    }
    auto ratio = [](std::size_t num, std::size_t den, double& out, bool& defined) {
        if (den == 0) {
            out = 0;
            defined = false;
        } else {
            out = static_cast<double>(num) / static_cast<double>(den);
            defined = true;
        }
    };
    ratio(m.counts.tp_alive, m.counts.tp_alive + m.counts.fp_alive, m.precision_alive,
          m.precision_alive_defined);
    ratio(m.counts.tp_alive, m.counts.tp_alive + m.counts.fn_alive, m.recall_alive,
          m.recall_alive_defined);
    ratio(m.counts.tp_expired, m.counts.tp_expired + m.counts.fp_expired, m.precision_expired,
          m.precision_expired_defined);
    ratio(m.counts.tp_expired, m.counts.tp_expired + m.counts.fn_expired, m.recall_expired,
          m.recall_expired_defined);
    m.accuracy = static_cast<double>(m.correct) / static_cast<double>(m.total);
    return m;
}

} // namespace icueval
