#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace icueval {

inline bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

inline bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(s.substr(start));
            break;
        }
        parts.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

inline bool contains_ci(std::string_view haystack, std::string_view needle) {
    if (needle.empty()) return true;
    std::string h = to_lower(haystack);
    std::string n = to_lower(needle);
    return h.find(n) != std::string::npos;
}

inline std::optional<long long> parse_int(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    long long value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    double value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

/// Shortest decimal string that round-trips the double, always carrying a
/// fractional part ("105" becomes "105.0"). This is the float style the
/// narrative wire format uses for means.
inline std::string format_full(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    std::string out(buf, res.ptr);
    if (out.find('.') == std::string::npos && out.find('e') == std::string::npos &&
        out.find("inf") == std::string::npos && out.find("nan") == std::string::npos) {
        out += ".0";
    }
    return out;
}

/// One decimal place, used for median/max/min in the narrative wire format.
inline std::string format_one_decimal(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

/// FNV-1a 64-bit. Stable across platforms; used for replay-store request
/// digests and artifact content digests (keying, not security).
inline std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t hash = 14695981039346656037ULL;
    for (unsigned char c : data) {
        hash ^= c;
        hash *= 1099511628211ULL;
    }
    return hash;
}

inline std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Uniform draw in [0, n) by rejection; deterministic for a given engine
/// state everywhere (std::uniform_int_distribution is not portable).
inline std::uint64_t bounded_uniform(std::mt19937_64& rng, std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                (std::numeric_limits<std::uint64_t>::max() % n);
    std::uint64_t draw;
    do {
        draw = rng();
    } while (draw >= limit);
    return draw % n;
}

/// Fisher-Yates with portable draws; same seed, same permutation on any
/// platform.
template <typename T>
void deterministic_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(bounded_uniform(rng, i));
        std::swap(items[i - 1], items[j]);
    }
}

/// Case-insensitive phrase search requiring a non-word character (or string
/// edge) immediately before the match. The character after is unconstrained
/// so lexicon stems keep matching inflections ("survive" matches
/// "survived") while "lived" does not fire inside "delivered".
/// Returns the end offset of the last such match, or nullopt.
inline std::optional<std::size_t> last_phrase_end(std::string_view text_lower,
                                                  std::string_view phrase_lower) {
    if (phrase_lower.empty()) return std::nullopt;
    std::optional<std::size_t> best;
    std::size_t from = 0;
    while (true) {
        std::size_t pos = text_lower.find(phrase_lower, from);
        if (pos == std::string_view::npos) break;
        bool boundary_before = pos == 0 || !is_word_char(text_lower[pos - 1]);
        if (boundary_before) best = pos + phrase_lower.size();
        from = pos + 1;
    }
    return best;
}

/// Phrase containment with word boundaries on both sides, for matching
/// condition names ("sepsis") inside prose without hitting substrings.
inline bool contains_phrase(std::string_view text_lower, std::string_view phrase_lower) {
    if (phrase_lower.empty()) return false;
    std::size_t from = 0;
    while (true) {
        std::size_t pos = text_lower.find(phrase_lower, from);
        if (pos == std::string_view::npos) return false;
        bool before = pos == 0 || !is_word_char(text_lower[pos - 1]);
        std::size_t end = pos + phrase_lower.size();
        bool after = end == text_lower.size() || !is_word_char(text_lower[end]);
        if (before && after) return true;
        from = pos + 1;
    }
}

/// Lowercased alphanumeric runs.
inline std::vector<std::string> tokenize_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    for (char c : text) {
        if (is_word_char(c)) {
            current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!current.empty()) {
            words.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

inline std::string iso8601_utc_now() {
    std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

} // namespace icueval
