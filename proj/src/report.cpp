#include "tag/report.hpp"

#include "tag/error.hpp"

namespace tag {

namespace {

std::string cell_text(const report_cell& c, int decimals) {
    if (std::holds_alternative<std::monostate>(c.value)) return {};
    if (const auto* s = std::get_if<std::string>(&c.value)) return *s;
    const double v = std::get<double>(c.value);
    switch (c.kind) {
    case report_cell::style::delta: return format_delta(v);
    case report_cell::style::percent: return format_fixed(100.0 * v, decimals);
    case report_cell::style::plain: break;
    }
    return format_fixed(v, decimals);
}

json cell_json(const report_cell& c) {
    if (std::holds_alternative<std::monostate>(c.value)) return nullptr;
    if (const auto* s = std::get_if<std::string>(&c.value)) return *s;
    return std::get<double>(c.value);
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string md_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '|') out += '\\';
        out += c;
    }
    return out;
}

std::string meta_value(const json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
}

std::string render_json(const report& r) {
    json tables = json::array();
    for (const auto& t : r.tables) {
        json rows = json::array();
        for (const auto& row : t.rows) {
            json a = json::array();
            for (const auto& c : row) a.push_back(cell_json(c));
            rows.push_back(std::move(a));
        }
        tables.push_back({{"title", t.title}, {"columns", t.columns}, {"rows", std::move(rows)}});
    }
    json j{{"meta", r.meta}, {"tables", std::move(tables)}};
    return j.dump(2) + "\n";
}

std::string render_csv(const report& r) {
    std::string out;
    bool first = true;
    for (const auto& t : r.tables) {
        if (!first) out += "\n";
        first = false;
        out += "# " + t.title + "\n";
        for (std::size_t i = 0; i < t.columns.size(); ++i) {
            if (i) out += ",";
            out += csv_escape(t.columns[i]);
        }
        out += "\n";
        for (const auto& row : t.rows) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (i) out += ",";
                out += csv_escape(cell_text(row[i], t.decimals));
            }
            out += "\n";
        }
    }
    return out;
}

std::string render_markdown(const report& r) {
    std::string out;
    if (!r.meta.empty()) {
        for (const auto& [k, v] : r.meta.items()) out += "- " + k + ": " + md_escape(meta_value(v)) + "\n";
        out += "\n";
    }
    bool first = true;
    for (const auto& t : r.tables) {
        if (!first) out += "\n";
        first = false;
        out += "## " + t.title + "\n\n|";
        for (const auto& c : t.columns) out += " " + md_escape(c) + " |";
        out += "\n|";
        for (std::size_t i = 0; i < t.columns.size(); ++i) out += i == 0 ? "---|" : "---:|";
        out += "\n";
        for (const auto& row : t.rows) {
            out += "|";
            for (const auto& c : row) out += " " + md_escape(cell_text(c, t.decimals)) + " |";
            out += "\n";
        }
    }
    return out;
}

} // namespace

std::string_view to_string(report_format f) {
    switch (f) {
    case report_format::json: return "json";
    case report_format::csv: return "csv";
    case report_format::markdown: return "markdown";
    }
    return "?";
}

report_format parse_report_format(std::string_view text) {
    if (text == "json") return report_format::json;
    if (text == "csv") return report_format::csv;
    if (text == "markdown" || text == "md") return report_format::markdown;
    throw error(error_code::invalid_argument, "unknown report format '" + std::string(text) + "'");
}

std::string render_report(const report& r, report_format format) {
    switch (format) {
    case report_format::json: return render_json(r);
    case report_format::csv: return render_csv(r);
    case report_format::markdown: return render_markdown(r);
    }
    return {};
}

void emit_report(const report& r, report_format format, const std::filesystem::path& path) {
    write_text_file(path, render_report(r, format));
}

report_table accuracy_table(const std::string& dataset, const accuracy_result& acc) {
    report_table t;
    t.title = "Accuracy";
    t.columns = {"Dataset", "Rows", "Correct", "Missing", "Unparseable", "Accuracy (%)"};
    t.rows.push_back({report_cell::text(dataset), report_cell::text(std::to_string(acc.total)),
                      report_cell::text(std::to_string(acc.correct)),
                      report_cell::text(std::to_string(acc.missing_ids.size())),
                      report_cell::text(std::to_string(acc.unparseable)),
                      report_cell::number(acc.accuracy, report_cell::style::percent)});
    return t;
}

report_table grounding_table(std::span<const grounding_result> results) {
    report_table t;
    t.title = "AU IoU";
    t.columns = {"Detector", "Eligible", "Excluded", "Missing", "IoU (%)"};
    for (const auto& g : results) {
        t.rows.push_back({report_cell::text(g.detector), report_cell::text(std::to_string(g.eligible)),
                          report_cell::text(std::to_string(g.excluded)),
                          report_cell::text(std::to_string(g.missing)),
                          g.mean_iou ? report_cell::number(*g.mean_iou, report_cell::style::percent)
                                     : report_cell::empty()});
    }
    return t;
}

report_table preference_table(const preference_summary& s) {
    report_table t;
    t.title = "Preference";
    t.columns = {"Judges", "Records", "A (%)", "B (%)", "Tie (%)"};
    t.rows.push_back({report_cell::text(std::to_string(s.judges)), report_cell::text(std::to_string(s.records)),
                      report_cell::number(s.pct_a), report_cell::number(s.pct_b), report_cell::number(s.pct_tie)});
    return t;
}

report_table rubric_table(std::span<const rubric_means> means) {
    report_table t;
    t.title = "Rubric";
    t.columns = {"Response", "Scores", "Visual Faithfulness", "Anatomical Precision", "Logical Coherence"};
    for (const auto& m : means) {
        t.rows.push_back({report_cell::text(m.response), report_cell::text(std::to_string(m.count)),
                          report_cell::number(m.visual_faithfulness), report_cell::number(m.anatomical_precision),
                          report_cell::number(m.logical_coherence)});
    }
    return t;
}

report_table cross_dataset_report_table(const cross_dataset_table& x) {
    report_table t;
    t.title = "Cross-dataset";
    t.columns.push_back("Training Dataset");
    for (const auto& d : x.datasets) t.columns.push_back(d);
    t.columns.push_back("Avg.");
    for (const auto& line : x.lines) {
        const auto style = line.is_delta ? report_cell::style::delta : report_cell::style::plain;
        std::vector<report_cell> row{report_cell::text(line.label)};
        for (double v : line.values) row.push_back(report_cell::number(v, style));
        row.push_back(report_cell::number(line.average, style));
        t.rows.push_back(std::move(row));
    }
    return t;
}

} // namespace tag
