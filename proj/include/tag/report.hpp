#pragma once

#include "tag/eval.hpp"
#include "tag/json_io.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tag {

struct report_cell {
    enum class style { plain, percent, delta };

    std::variant<std::monostate, std::string, double> value;
    style kind = style::plain;

    static report_cell text(std::string s) { return {std::move(s), style::plain}; }
    static report_cell number(double v, style k = style::plain) { return {v, k}; }
    static report_cell empty() { return {}; }
};

struct report_table {
    std::string title;
    std::vector<std::string> columns;
    std::vector<std::vector<report_cell>> rows;
    int decimals = 2;
};

struct report {
    json meta = json::object();
    std::vector<report_table> tables;
};

enum class report_format { json, csv, markdown };

std::string_view to_string(report_format f);
report_format parse_report_format(std::string_view text);

/// Renders with stable ordering. JSON keeps full-precision numbers; CSV and
/// markdown render numbers with the table's decimals and deltas signed.
std::string render_report(const report& r, report_format format);

/// Writes render_report(r, format). Throws io when the path is unwritable.
void emit_report(const report& r, report_format format, const std::filesystem::path& path);

report_table accuracy_table(const std::string& dataset, const accuracy_result& acc);
report_table grounding_table(std::span<const grounding_result> results);
report_table preference_table(const preference_summary& s);
report_table rubric_table(std::span<const rubric_means> means);
report_table cross_dataset_report_table(const cross_dataset_table& t);

} // namespace tag
