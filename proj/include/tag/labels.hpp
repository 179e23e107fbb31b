#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace tag {

/// The seven-class expression space. Contempt is deliberately absent.
enum class expression_label : std::size_t {
    anger,
    disgust,
    fear,
    happiness,
    neutral,
    sadness,
    surprise,
};

inline constexpr std::size_t label_count = 7;

/// Canonical order; also the order candidate lists are presented in.
inline constexpr std::array<expression_label, label_count> all_labels = {
    expression_label::anger,   expression_label::disgust, expression_label::fear,
    expression_label::happiness, expression_label::neutral, expression_label::sadness,
    expression_label::surprise,
};

std::string_view to_string(expression_label label);

/// Maps free text onto a label. Case-insensitive; strips surrounding
/// whitespace, quotes, markdown emphasis and trailing punctuation, then looks
/// the word up in a small synonym table ("happy" -> happiness,
/// "surprised" -> surprise, ...). Returns nullopt for anything else.
std::optional<expression_label> canonicalize_label(std::string_view text);

/// Strict variant: throws tag::error(invalid_argument) for unknown text.
expression_label parse_label(std::string_view text);

} // namespace tag
