#include "tag/trace_grammar.hpp"

#include "tag/error.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <utility>

namespace tag {

namespace {

constexpr std::string_view think_open = "<think>";
constexpr std::string_view think_close = "</think>";
constexpr std::string_view answer_open = "<answer>";
constexpr std::string_view answer_close = "</answer>";
constexpr std::string_view bbox_open = "<bbox>";
constexpr std::string_view bbox_close = "</bbox>";

constexpr std::array<std::string_view, 6> reserved_tags = {
    think_open, think_close, answer_open, answer_close, bbox_open, bbox_close,
};

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool has_non_space(std::string_view s) {
    return std::any_of(s.begin(), s.end(), [](char c) { return !is_space(c); });
}

bool contains_reserved_tag(std::string_view s) {
    return std::any_of(reserved_tags.begin(), reserved_tags.end(),
                       [&](std::string_view t) { return s.find(t) != std::string_view::npos; });
}

void skip_spaces(std::string_view s, std::size_t& i) {
    while (i < s.size() && is_space(s[i])) ++i;
}

// number := [+-]? (digits ('.' digits*)? | '.' digits)
std::optional<double> scan_number(std::string_view s, std::size_t& i) {
    const std::size_t start = i;
    bool negative = false;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
        negative = s[i] == '-';
        ++i;
    }
    const std::size_t body = i;
    std::size_t int_digits = 0;
    while (i < s.size() && is_digit(s[i])) {
        ++i;
        ++int_digits;
    }
    std::size_t frac_digits = 0;
    if (i < s.size() && s[i] == '.') {
        ++i;
        while (i < s.size() && is_digit(s[i])) {
            ++i;
            ++frac_digits;
        }
    }
    if (int_digits == 0 && frac_digits == 0) {
        i = start;
        return std::nullopt;
    }
    std::string token(s.substr(body, i - body));
    if (token.front() == '.') token.insert(token.begin(), '0');
    double value = 0.0;
    const auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || end != token.data() + token.size() || !std::isfinite(value)) {
        i = start;
        return std::nullopt;
    }
    return negative ? -value : value;
}

void parse_think_block(std::string_view content, reasoning_trace& trace) {
    std::size_t pos = 0;
    while (pos <= content.size()) {
        const std::size_t open = content.find(bbox_open, pos);
        if (open == std::string_view::npos) {
            trace.think_text.append(content.substr(pos));
            break;
        }
        trace.think_text.append(content.substr(pos, open - pos));
        const std::size_t payload_begin = open + bbox_open.size();
        const std::size_t close = content.find(bbox_close, payload_begin);
        if (close == std::string_view::npos) {
            trace.malformed_boxes.emplace_back(content.substr(payload_begin));
            break;
        }
        const std::string_view payload = content.substr(payload_begin, close - payload_begin);
        if (auto box = parse_box_payload(payload)) {
            trace.box_anchors.push_back(trace.think_text.size());
            trace.boxes.push_back(*box);
        } else {
            trace.malformed_boxes.emplace_back(payload);
        }
        pos = close + bbox_close.size();
    }
}

// Scans one stretch of text that lies outside every think block.
void scan_outer_segment(std::string_view segment, reasoning_trace& trace) {
    std::size_t pos = 0;
    while (pos < segment.size()) {
        const std::size_t open = segment.find(answer_open, pos);
        if (open == std::string_view::npos) break;
        const std::size_t body = open + answer_open.size();
        const std::size_t close = segment.find(answer_close, body);
        if (close == std::string_view::npos) break;
        if (has_non_space(segment.substr(pos, open - pos))) trace.has_outer_text = true;
        if (trace.answer_spans == 0) {
            trace.answer_text = std::string(segment.substr(body, close - body));
            trace.answer = canonicalize_label(*trace.answer_text);
        }
        ++trace.answer_spans;
        pos = close + answer_close.size();
    }
    if (pos < segment.size() && has_non_space(segment.substr(pos))) trace.has_outer_text = true;
}

// Shortest round-trip digits in plain positional notation; the payload
// grammar has no exponent form.
void append_number(std::string& out, double v) {
    char buf[1100];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
    out.append(buf, end);
}

} // namespace

std::string_view to_string(format_violation v) {
    switch (v) {
    case format_violation::missing_think: return "MissingThink";
    case format_violation::multiple_think: return "MultipleThink";
    case format_violation::too_many_boxes: return "TooManyBoxes";
    case format_violation::malformed_box: return "MalformedBox";
    case format_violation::missing_answer: return "MissingAnswer";
    case format_violation::multiple_answer: return "MultipleAnswer";
    case format_violation::invalid_label: return "InvalidLabel";
    case format_violation::zero_area_box: return "ZeroAreaBox";
    case format_violation::out_of_canvas: return "OutOfCanvas";
    case format_violation::unexpected_outer_text: return "UnexpectedOuterText";
    }
    return "Unknown";
}

bool format_report::has(format_violation v) const {
    return std::find(violations.begin(), violations.end(), v) != violations.end();
}

bool reasoning_trace::structurally_equal(const reasoning_trace& o) const {
    return think_text == o.think_text && boxes == o.boxes && box_anchors == o.box_anchors &&
           malformed_boxes == o.malformed_boxes && answer_text == o.answer_text &&
           answer == o.answer && think_blocks == o.think_blocks &&
           answer_spans == o.answer_spans && has_outer_text == o.has_outer_text;
}

std::optional<bounding_box> parse_box_payload(std::string_view payload) {
    std::size_t i = 0;
    skip_spaces(payload, i);
    if (i >= payload.size() || payload[i] != '[') return std::nullopt;
    ++i;
    std::array<double, 4> v{};
    for (std::size_t k = 0; k < 4; ++k) {
        skip_spaces(payload, i);
        auto n = scan_number(payload, i);
        if (!n) return std::nullopt;
        v[k] = *n;
        skip_spaces(payload, i);
        const char expected = k < 3 ? ',' : ']';
        if (i >= payload.size() || payload[i] != expected) return std::nullopt;
        ++i;
    }
    skip_spaces(payload, i);
    if (i != payload.size()) return std::nullopt;
    return bounding_box{v[0], v[1], v[2], v[3]};
}

std::string format_box_payload(const bounding_box& box) {
    std::string out = "[";
    append_number(out, box.x1);
    out += ", ";
    append_number(out, box.y1);
    out += ", ";
    append_number(out, box.x2);
    out += ", ";
    append_number(out, box.y2);
    out += "]";
    return out;
}

reasoning_trace parse_trace(std::string_view text) {
    reasoning_trace trace;
    trace.raw = std::string(text);

    std::size_t pos = 0;
    std::size_t outer_begin = 0;
    while (true) {
        const std::size_t open = text.find(think_open, pos);
        if (open == std::string_view::npos) break;
        const std::size_t body = open + think_open.size();
        const std::size_t close = text.find(think_close, body);
        if (close == std::string_view::npos) break;  // unterminated: rest is outer text

        scan_outer_segment(text.substr(outer_begin, open - outer_begin), trace);
        if (trace.think_blocks == 0) parse_think_block(text.substr(body, close - body), trace);
        ++trace.think_blocks;
        pos = close + think_close.size();
        outer_begin = pos;
    }
    scan_outer_segment(text.substr(outer_begin), trace);
    return trace;
}

format_report validate_format(const reasoning_trace& trace, const format_options& options) {
    format_report report;
    auto flag = [&](format_violation v) { report.violations.push_back(v); };

    if (trace.think_blocks == 0) flag(format_violation::missing_think);
    if (trace.think_blocks > 1) flag(format_violation::multiple_think);
    if (trace.box_span_count() > options.max_boxes) flag(format_violation::too_many_boxes);
    if (!trace.malformed_boxes.empty()) flag(format_violation::malformed_box);
    if (trace.answer_spans == 0) flag(format_violation::missing_answer);
    if (trace.answer_spans > 1) flag(format_violation::multiple_answer);
    if (trace.answer_spans > 0 && !trace.answer) flag(format_violation::invalid_label);
    if (std::any_of(trace.boxes.begin(), trace.boxes.end(),
                    [](const bounding_box& b) { return !b.is_valid(); })) {
        flag(format_violation::zero_area_box);
    }
    if (std::any_of(trace.boxes.begin(), trace.boxes.end(),
                    [](const bounding_box& b) { return !b.in_canvas(); })) {
        flag(format_violation::out_of_canvas);
    }
    if (!options.allow_outer_text && trace.has_outer_text) {
        flag(format_violation::unexpected_outer_text);
    }
    report.well_formed = report.violations.empty();
    return report;
}

std::set<int> extract_au_tags(std::string_view text) {
    std::set<int> ids;
    std::size_t pos = 0;
    while ((pos = text.find("<AU", pos)) != std::string_view::npos) {
        std::size_t i = pos + 3;
        int value = 0;
        std::size_t digits = 0;
        while (i < text.size() && is_digit(text[i]) && digits < 4) {
            value = value * 10 + (text[i] - '0');
            ++i;
            ++digits;
        }
        if (digits > 0 && i < text.size() && text[i] == '>') ids.insert(value);
        pos += 3;
    }
    return ids;
}

std::string render_trace(const reasoning_trace& trace) {
    auto fail = [](const std::string& why) {
        throw error(error_code::unserializable_trace, "render_trace: " + why);
    };
    if (trace.think_blocks != 1) fail("trace needs exactly one think block");
    if (trace.answer_spans != 1 || !trace.answer_text) fail("trace needs exactly one answer");
    if (!trace.malformed_boxes.empty()) fail("malformed box payloads cannot be rendered");
    if (trace.has_outer_text) fail("text outside the think/answer spans is not representable");
    if (trace.boxes.size() != trace.box_anchors.size()) fail("box anchors do not match boxes");
    if (!std::is_sorted(trace.box_anchors.begin(), trace.box_anchors.end()) ||
        (!trace.box_anchors.empty() && trace.box_anchors.back() > trace.think_text.size())) {
        fail("box anchors out of order or out of range");
    }
    if (contains_reserved_tag(trace.think_text) || contains_reserved_tag(*trace.answer_text)) {
        fail("text contains a reserved tag");
    }
    for (const auto& b : trace.boxes) {
        if (!b.is_finite()) fail("non-finite box coordinate");
    }

    std::string out;
    out.reserve(trace.think_text.size() + 64 + 32 * trace.boxes.size());
    out += think_open;
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < trace.boxes.size(); ++i) {
        out.append(trace.think_text, cursor, trace.box_anchors[i] - cursor);
        cursor = trace.box_anchors[i];
        out += bbox_open;
        out += format_box_payload(trace.boxes[i]);
        out += bbox_close;
    }
    out.append(trace.think_text, cursor, std::string::npos);
    out += think_close;
    out += answer_open;
    out += *trace.answer_text;
    out += answer_close;
    return out;
}

} // namespace tag
