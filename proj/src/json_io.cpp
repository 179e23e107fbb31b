#include "tag/json_io.hpp"

#include "tag/error.hpp"

#include <fstream>
#include <sstream>

namespace tag {

namespace {

[[noreturn]] void schema(const std::string& what) {
    throw error(error_code::schema_violation, what);
}

} // namespace

json box_to_json(const bounding_box& box) {
    return json::array({box.x1, box.y1, box.x2, box.y2});
}

bounding_box box_from_json(const json& j, std::string_view field) {
    if (!j.is_array() || j.size() != 4) {
        schema("field '" + std::string(field) + "' must be an array [x1, y1, x2, y2]");
    }
    for (const auto& v : j) {
        if (!v.is_number()) schema("field '" + std::string(field) + "' must hold numbers");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json ground_truth_to_json(const au_ground_truth& gt) {
    json boxes = json::array();
    for (const auto& b : gt.boxes) boxes.push_back(box_to_json(b));
    json j{{"au_ids", gt.au_ids}, {"boxes", std::move(boxes)}};
    if (!gt.box_ids.empty()) j["box_ids"] = gt.box_ids;
    return j;
}

json breakdown_to_json(const reward_breakdown& r) {
    json j;
    j["r_au"] = r.r_au ? json(*r.r_au) : json(nullptr);
    j["r_ans"] = r.r_ans;
    j["r_fmt"] = r.r_fmt;
    j["total"] = r.total;
    return j;
}

json trace_to_json(const reasoning_trace& trace) {
    json j;
    j["think_text"] = trace.think_text;
    json boxes = json::array();
    for (const auto& b : trace.boxes) boxes.push_back(box_to_json(b));
    j["boxes"] = std::move(boxes);
    j["box_anchors"] = trace.box_anchors;
    j["malformed_boxes"] = trace.malformed_boxes;
    j["answer_text"] = trace.answer_text ? json(*trace.answer_text) : json(nullptr);
    j["answer"] = trace.answer ? json(std::string(to_string(*trace.answer))) : json(nullptr);
    j["think_blocks"] = trace.think_blocks;
    j["answer_spans"] = trace.answer_spans;
    j["has_outer_text"] = trace.has_outer_text;
    return j;
}

json report_to_json(const format_report& report) {
    json v = json::array();
    for (auto f : report.violations) v.push_back(std::string(to_string(f)));
    return json{{"well_formed", report.well_formed}, {"violations", std::move(v)}};
}

int au_id_from_json(const json& j, std::string_view field) {
    if (j.is_number_integer()) return j.get<int>();
    if (j.is_string()) {
        std::string s = j.get<std::string>();
        if (s.rfind("AU", 0) == 0) s = s.substr(2);
        try {
            std::size_t used = 0;
            const int v = std::stoi(s, &used);
            if (used == s.size() && v >= 0) return v;
        } catch (const std::exception&) {
        }
    }
    schema("field '" + std::string(field) + "' is not an AU identifier");
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const json&)>& fn) {
    std::ifstream in(path);
    if (!in) throw error(error_code::io, "cannot open " + path.string());
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(number) + ": ";
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            schema(where + "invalid JSON (" + e.what() + ")");
        }
        if (!obj.is_object()) schema(where + "expected a JSON object");
        try {
            fn(number, obj);
        } catch (const error& e) {
            if (e.code() == error_code::io || e.code() == error_code::transport) throw;
            throw error(e.code(), where + e.what());
        } catch (const json::exception& e) {
            schema(where + e.what());
        }
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error(error_code::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw error(error_code::io, "cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw error(error_code::io, "write failed for " + path.string());
}

const json& require_field(const json& obj, std::string_view field) {
    const auto it = obj.find(std::string(field));
    if (it == obj.end()) schema("missing field '" + std::string(field) + "'");
    return *it;
}

std::string require_string(const json& obj, std::string_view field) {
    const json& v = require_field(obj, field);
    if (!v.is_string()) schema("field '" + std::string(field) + "' must be a string");
    return v.get<std::string>();
}

double require_number(const json& obj, std::string_view field) {
    const json& v = require_field(obj, field);
    if (!v.is_number()) schema("field '" + std::string(field) + "' must be a number");
    return v.get<double>();
}

} // namespace tag
