#include "tag/labels.hpp"

#include "tag/error.hpp"

#include <algorithm>
#include <cctype>
#include <utility>

namespace tag {

const char* to_string(error_code code) {
    switch (code) {
    case error_code::invalid_argument: return "InvalidArgument";
    case error_code::empty_candidate_set: return "EmptyCandidateSet";
    case error_code::group_too_small: return "GroupTooSmall";
    case error_code::alphabet_mismatch: return "AlphabetMismatch";
    case error_code::schema_violation: return "SchemaViolation";
    case error_code::leakage: return "Leakage";
    case error_code::empty_evaluation: return "EmptyEvaluation";
    case error_code::unserializable_trace: return "UnserializableTrace";
    case error_code::io: return "IoError";
    case error_code::transport: return "TransportError";
    }
    return "Unknown";
}

std::string_view to_string(expression_label label) {
    switch (label) {
    case expression_label::anger: return "anger";
    case expression_label::disgust: return "disgust";
    case expression_label::fear: return "fear";
    case expression_label::happiness: return "happiness";
    case expression_label::neutral: return "neutral";
    case expression_label::sadness: return "sadness";
    case expression_label::surprise: return "surprise";
    }
    return "unknown";
}

namespace {

constexpr std::pair<std::string_view, expression_label> synonyms[] = {
    {"anger", expression_label::anger},
    {"angry", expression_label::anger},
    {"disgust", expression_label::disgust},
    {"disgusted", expression_label::disgust},
    {"fear", expression_label::fear},
    {"fearful", expression_label::fear},
    {"afraid", expression_label::fear},
    {"scared", expression_label::fear},
    {"happiness", expression_label::happiness},
    {"happy", expression_label::happiness},
    {"neutral", expression_label::neutral},
    {"sadness", expression_label::sadness},
    {"sad", expression_label::sadness},
    {"surprise", expression_label::surprise},
    {"surprised", expression_label::surprise},
};

bool is_trim_char(char c) {
    switch (c) {
    case ' ': case '\t': case '\n': case '\r': case '\f': case '\v':
    case '.': case ',': case ';': case ':': case '!': case '?':
    case '"': case '\'': case '*': case '`':
        return true;
    default:
        return false;
    }
}

} // namespace

std::optional<expression_label> canonicalize_label(std::string_view text) {
    while (!text.empty() && is_trim_char(text.front())) text.remove_prefix(1);
    while (!text.empty() && is_trim_char(text.back())) text.remove_suffix(1);
    if (text.empty() || text.size() > 32) return std::nullopt;

    std::string lowered(text);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (const auto& [word, label] : synonyms) {
        if (lowered == word) return label;
    }
    return std::nullopt;
}

expression_label parse_label(std::string_view text) {
    if (auto label = canonicalize_label(text)) return *label;
    throw error(error_code::invalid_argument,
                "not one of the seven expression labels: '" + std::string(text) + "'");
}

} // namespace tag
