#pragma once

#include "tag/geometry.hpp"
#include "tag/labels.hpp"

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace tag {

/// Structured view of a `<think>...<bbox>[..]</bbox>...</think><answer>..</answer>`
/// output. Only the first think block and first answer span are captured;
/// the counts record how many were present so validate_format can flag them.
struct reasoning_trace {
    /// Narration of the first think block with every `<bbox>` span cut out.
    std::string think_text;
    /// Boxes whose payload parsed, in document order. May be degenerate or
    /// outside the canvas; validate_format classifies them.
    std::vector<bounding_box> boxes;
    /// Byte offset into think_text where each parsed box was cut out.
    std::vector<std::size_t> box_anchors;
    /// Raw payloads of `<bbox>` spans that did not match the box grammar.
    std::vector<std::string> malformed_boxes;
    /// Content of the first answer span, untrimmed.
    std::optional<std::string> answer_text;
    std::optional<expression_label> answer;

    std::size_t think_blocks = 0;
    std::size_t answer_spans = 0;
    /// Non-whitespace text outside the think and answer spans.
    bool has_outer_text = false;

    /// Original input.
    std::string raw;

    /// Parsed plus malformed box spans.
    std::size_t box_span_count() const noexcept { return boxes.size() + malformed_boxes.size(); }

    /// Equality over everything except `raw`.
    bool structurally_equal(const reasoning_trace& other) const;
};

enum class format_violation {
    missing_think,
    multiple_think,
    too_many_boxes,
    malformed_box,
    missing_answer,
    multiple_answer,
    invalid_label,
    zero_area_box,
    out_of_canvas,
    /// Only reported when format_options::allow_outer_text is false.
    unexpected_outer_text,
};

std::string_view to_string(format_violation v);

struct format_report {
    bool well_formed = true;
    /// Each kind at most once, in enum order.
    std::vector<format_violation> violations;

    bool has(format_violation v) const;
};

struct format_options {
    std::size_t max_boxes = 3;
    bool allow_outer_text = true;
};

/// Total over arbitrary input; never throws.
reasoning_trace parse_trace(std::string_view text);

format_report validate_format(const reasoning_trace& trace, const format_options& options = {});

/// Distinct AU numbers appearing as `<AUx>` tags anywhere in the text.
std::set<int> extract_au_tags(std::string_view text);

/// Canonical serialization. Throws tag::error(unserializable_trace) when the
/// trace lacks exactly one think block and one answer span, carries malformed
/// boxes, has misaligned anchors, or its text fields contain reserved tags.
std::string render_trace(const reasoning_trace& trace);

/// Canonical `[x1, y1, x2, y2]` payload; integral values print without a
/// fractional part, others in shortest round-trip form.
std::string format_box_payload(const bounding_box& box);

/// Parses a `[x1, y1, x2, y2]` payload (optional surrounding whitespace,
/// integers or decimals with optional sign). nullopt if it does not match.
std::optional<bounding_box> parse_box_payload(std::string_view payload);

} // namespace tag
