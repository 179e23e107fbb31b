#pragma once

#include "tag/geometry.hpp"
#include "tag/reward.hpp"
#include "tag/trace_grammar.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace tag {

using json = nlohmann::ordered_json;

json box_to_json(const bounding_box& box);
/// Accepts a 4-element numeric array. Throws tag::error(schema_violation).
bounding_box box_from_json(const json& j, std::string_view field);

json ground_truth_to_json(const au_ground_truth& gt);
json breakdown_to_json(const reward_breakdown& r);
json trace_to_json(const reasoning_trace& trace);
json report_to_json(const format_report& report);

/// AU identifiers are accepted as integers or as "AU12"-style strings.
int au_id_from_json(const json& j, std::string_view field);

/// Calls `fn(line_number, object)` for every non-blank line. Parse errors and
/// exceptions thrown by fn are rethrown as schema_violation tagged with the
/// file and line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const json&)>& fn);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

/// Field accessors that report the missing or mistyped field by name.
const json& require_field(const json& obj, std::string_view field);
std::string require_string(const json& obj, std::string_view field);
double require_number(const json& obj, std::string_view field);

} // namespace tag
