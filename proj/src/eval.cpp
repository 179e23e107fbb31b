#include "tag/eval.hpp"

#include "tag/error.hpp"
#include "tag/trace_grammar.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <thread>
#include <tuple>

namespace tag {

namespace {

[[noreturn]] void schema(const std::string& what) {
    throw error(error_code::schema_violation, what);
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

expression_label gold_from_text(const std::string& text) {
    if (lower(trim(text)) == "contempt") {
        schema("gold label 'contempt' is excluded from the 7-class protocol");
    }
    const auto label = canonicalize_label(text);
    if (!label) schema("unknown gold label '" + text + "'");
    return *label;
}

au_ground_truth boxes_from_json(const json& j, const std::string& where) {
    if (!j.is_object()) schema("'" + where + "' must be an object");
    au_ground_truth gt;
    if (auto it = j.find("boxes"); it != j.end()) {
        if (!it->is_array()) schema("'" + where + ".boxes' must be an array");
        for (const auto& b : *it) gt.boxes.push_back(box_from_json(b, where + ".boxes"));
    }
    if (auto it = j.find("au_ids"); it != j.end()) {
        if (!it->is_array()) schema("'" + where + ".au_ids' must be an array");
        for (const auto& v : *it) gt.au_ids.insert(au_id_from_json(v, where + ".au_ids"));
    }
    return gt;
}

std::vector<std::string> split_csv_line(const std::string& line, std::size_t number) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    if (quoted) schema("line " + std::to_string(number) + ": unterminated quoted field");
    out.push_back(std::move(field));
    return out;
}

int parse_score(const std::string& text, std::string_view field) {
    const std::string t = trim(text);
    int v = 0;
    std::size_t used = 0;
    try {
        v = std::stoi(t, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (t.empty() || used != t.size()) schema("field '" + std::string(field) + "' must be an integer");
    if (v < 1 || v > 5) {
        schema("field '" + std::string(field) + "' = " + std::to_string(v) + " is outside [1, 5]");
    }
    return v;
}

accuracy_row accuracy_row_from_json(const json& j, const std::string& where) {
    if (!j.is_object()) schema("'" + where + "' must map dataset names to accuracies");
    accuracy_row row;
    for (const auto& [k, v] : j.items()) {
        if (!v.is_number()) schema("'" + where + "." + k + "' must be a number");
        row.emplace_back(k, v.get<double>());
    }
    return row;
}

} // namespace

std::optional<std::size_t> known_test_size(std::string_view dataset) {
    const std::string d = lower(dataset);
    if (d == "raf-db" || d == "rafdb") return 3068;
    if (d == "ferplus") return 3517;
    if (d == "affectnet") return 3500;
    return std::nullopt;
}

void check_declared_size(const dataset_manifest& manifest, std::size_t declared_size) {
    if (manifest.rows.size() != declared_size) {
        schema("manifest '" + manifest.name + "' has " + std::to_string(manifest.rows.size()) +
               " rows, declared " + std::to_string(declared_size));
    }
}

dataset_manifest load_eval_manifest(const std::filesystem::path& path, std::string name,
                                    std::optional<std::size_t> declared_size) {
    dataset_manifest m;
    m.name = name.empty() ? path.stem().string() : std::move(name);
    std::set<std::string> seen;
    for_each_jsonl(path, [&](std::size_t, const json& obj) {
        eval_row r;
        r.image_id = require_string(obj, "image_id");
        if (!seen.insert(r.image_id).second) schema("duplicate image_id '" + r.image_id + "'");
        r.gold_label = gold_from_text(require_string(obj, "gold_label"));
        if (auto it = obj.find("detector_boxes"); it != obj.end() && !it->is_null()) {
            if (!it->is_object()) schema("'detector_boxes' must be an object keyed by detector name");
            for (const auto& [det, v] : it->items()) {
                r.detector_boxes.emplace(det, boxes_from_json(v, "detector_boxes." + det));
            }
        }
        m.rows.push_back(std::move(r));
    });
    if (declared_size) check_declared_size(m, *declared_size);
    return m;
}

prediction_set::prediction_set(std::vector<prediction_row> rows) : rows_(std::move(rows)) {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        if (!index_.emplace(rows_[i].image_id, i).second) {
            schema("duplicate prediction for image_id '" + rows_[i].image_id + "'");
        }
    }
}

const std::string* prediction_set::find(const std::string& image_id) const {
    const auto it = index_.find(image_id);
    return it == index_.end() ? nullptr : &rows_[it->second].raw_output;
}

prediction_set load_predictions(const std::filesystem::path& path) {
    std::vector<prediction_row> rows;
    std::set<std::string> seen;
    for_each_jsonl(path, [&](std::size_t, const json& obj) {
        prediction_row r{require_string(obj, "image_id"), require_string(obj, "raw_output")};
        if (!seen.insert(r.image_id).second) schema("duplicate prediction for image_id '" + r.image_id + "'");
        rows.push_back(std::move(r));
    });
    return prediction_set(std::move(rows));
}

accuracy_result evaluate_accuracy(const prediction_set& predictions, const dataset_manifest& manifest) {
    if (manifest.rows.empty()) throw error(error_code::empty_evaluation, "manifest has no rows");
    accuracy_result r;
    r.total = manifest.rows.size();
    for (const auto& row : manifest.rows) {
        const std::string* raw = predictions.find(row.image_id);
        if (!raw) {
            r.missing_ids.push_back(row.image_id);
            continue;
        }
        const reasoning_trace trace = parse_trace(*raw);
        if (!trace.answer) {
            ++r.unparseable;
            continue;
        }
        if (*trace.answer == row.gold_label) ++r.correct;
    }
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
    return r;
}

std::vector<std::string> detector_names(const dataset_manifest& manifest) {
    std::set<std::string> names;
    for (const auto& row : manifest.rows) {
        for (const auto& [k, v] : row.detector_boxes) names.insert(k);
    }
    return {names.begin(), names.end()};
}

grounding_result evaluate_grounding(const prediction_set& predictions, const dataset_manifest& manifest,
                                    const std::string& detector, std::size_t threads) {
    const auto names = detector_names(manifest);
    if (std::find(names.begin(), names.end(), detector) == names.end()) {
        throw error(error_code::invalid_argument, "unknown detector '" + detector + "'");
    }
    const std::size_t n = manifest.rows.size();
    std::vector<std::optional<double>> scores(n);
    std::vector<char> missing(n, 0);
    auto score_range = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const eval_row& row = manifest.rows[i];
            const auto it = row.detector_boxes.find(detector);
            if (it == row.detector_boxes.end() || it->second.boxes.empty()) continue;
            const std::string* raw = predictions.find(row.image_id);
            if (!raw) {
                missing[i] = 1;
                scores[i] = au_iou_reward({}, it->second);
                continue;
            }
            const std::vector<bounding_box> boxes = grounding_boxes(parse_trace(*raw));
            scores[i] = au_iou_reward(boxes, it->second);
        }
    };
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, n));
    if (threads == 1) {
        score_range(0, n);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (n + threads - 1) / threads;
        for (std::size_t lo = 0; lo < n; lo += chunk) pool.emplace_back(score_range, lo, std::min(n, lo + chunk));
        for (auto& t : pool) t.join();
    }

    grounding_result r;
    r.detector = detector;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!scores[i]) {
            ++r.excluded;
            continue;
        }
        ++r.eligible;
        r.missing += missing[i];
        sum += *scores[i];
    }
    if (r.eligible) r.mean_iou = sum / static_cast<double>(r.eligible);
    return r;
}

std::string_view to_string(vote v) {
    switch (v) {
    case vote::a: return "A";
    case vote::b: return "B";
    case vote::tie: return "tie";
    }
    return "?";
}

vote parse_vote(std::string_view text) {
    const std::string v = lower(trim(text));
    if (v == "a") return vote::a;
    if (v == "b") return vote::b;
    if (v == "tie") return vote::tie;
    schema("vote must be A, B or tie, got '" + std::string(text) + "'");
}

preference_summary aggregate_preferences(std::span<const preference_record> records) {
    if (records.empty()) throw error(error_code::empty_evaluation, "no preference records");
    std::map<std::string, std::array<std::size_t, 3>> per_judge;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& r : records) {
        if (!seen.emplace(r.item_id, r.judge_id).second) {
            schema("judge '" + r.judge_id + "' voted twice on item '" + r.item_id + "'");
        }
        ++per_judge[r.judge_id][static_cast<std::size_t>(r.choice)];
    }
    preference_summary s;
    s.judges = per_judge.size();
    s.records = records.size();
    for (const auto& [judge, counts] : per_judge) {
        const double total = static_cast<double>(counts[0] + counts[1] + counts[2]);
        s.pct_a += 100.0 * static_cast<double>(counts[0]) / total;
        s.pct_b += 100.0 * static_cast<double>(counts[1]) / total;
        s.pct_tie += 100.0 * static_cast<double>(counts[2]) / total;
    }
    const double j = static_cast<double>(s.judges);
    s.pct_a /= j;
    s.pct_b /= j;
    s.pct_tie /= j;
    return s;
}

std::vector<std::map<std::string, std::string>> read_csv(const std::filesystem::path& path,
                                                         std::span<const std::string_view> required) {
    std::ifstream in(path);
    if (!in) throw error(error_code::io, "cannot open " + path.string());
    const std::string where = path.string() + ":";
    std::string line;
    std::size_t number = 0;
    std::vector<std::string> header;
    std::vector<std::map<std::string, std::string>> rows;
    try {
        while (std::getline(in, line)) {
            ++number;
            if (trim(line).empty()) continue;
            auto fields = split_csv_line(line, number);
            if (header.empty()) {
                for (auto& f : fields) header.push_back(trim(f));
                for (auto req : required) {
                    if (std::find(header.begin(), header.end(), req) == header.end()) {
                        schema("missing column '" + std::string(req) + "'");
                    }
                }
                continue;
            }
            if (fields.size() != header.size()) {
                schema("line " + std::to_string(number) + ": expected " + std::to_string(header.size()) +
                       " fields, got " + std::to_string(fields.size()));
            }
            std::map<std::string, std::string> row;
            for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = fields[i];
            row["#line"] = std::to_string(number);
            rows.push_back(std::move(row));
        }
    } catch (const error& e) {
        throw error(e.code(), where + " " + e.what());
    }
    if (header.empty()) schema(where + " missing header row");
    return rows;
}

std::vector<preference_record> load_preferences_csv(const std::filesystem::path& path) {
    static constexpr std::string_view cols[] = {"item_id", "judge_id", "vote"};
    std::vector<preference_record> out;
    for (auto& row : read_csv(path, cols)) {
        try {
            out.push_back({trim(row["item_id"]), trim(row["judge_id"]), parse_vote(row["vote"])});
        } catch (const error& e) {
            throw error(e.code(), path.string() + ":" + row["#line"] + ": " + e.what());
        }
    }
    return out;
}

std::vector<rubric_means> aggregate_rubric(std::span<const rubric_score> scores) {
    if (scores.empty()) throw error(error_code::empty_evaluation, "no rubric scores");
    struct acc {
        double vf = 0, ap = 0, lc = 0;
        std::size_t n = 0;
    };
    std::map<std::string, acc> by_response;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    for (const auto& s : scores) {
        if (s.response != "A" && s.response != "B") schema("response must be A or B, got '" + s.response + "'");
        for (int v : {s.visual_faithfulness, s.anatomical_precision, s.logical_coherence}) {
            if (v < 1 || v > 5) schema("rubric score " + std::to_string(v) + " is outside [1, 5]");
        }
        if (!seen.emplace(s.item_id, s.response, s.run_id).second) {
            schema("duplicate rubric score for item '" + s.item_id + "', response " + s.response + ", run '" +
                   s.run_id + "'");
        }
        acc& a = by_response[s.response];
        a.vf += s.visual_faithfulness;
        a.ap += s.anatomical_precision;
        a.lc += s.logical_coherence;
        ++a.n;
    }
    std::vector<rubric_means> out;
    for (const auto& [resp, a] : by_response) {
        const double n = static_cast<double>(a.n);
        out.push_back({resp, a.vf / n, a.ap / n, a.lc / n, a.n});
    }
    return out;
}

std::vector<rubric_score> load_rubric_csv(const std::filesystem::path& path) {
    static constexpr std::string_view cols[] = {"item_id",        "response",           "run_id",
                                                "visual_faithfulness", "anatomical_precision",
                                                "logical_coherence"};
    std::vector<rubric_score> out;
    for (auto& row : read_csv(path, cols)) {
        try {
            rubric_score s;
            s.item_id = trim(row["item_id"]);
            s.response = trim(row["response"]);
            if (s.response == "a" || s.response == "b") s.response[0] = static_cast<char>(std::toupper(s.response[0]));
            s.run_id = trim(row["run_id"]);
            s.visual_faithfulness = parse_score(row["visual_faithfulness"], "visual_faithfulness");
            s.anatomical_precision = parse_score(row["anatomical_precision"], "anatomical_precision");
            s.logical_coherence = parse_score(row["logical_coherence"], "logical_coherence");
            out.push_back(std::move(s));
        } catch (const error& e) {
            throw error(e.code(), path.string() + ":" + row["#line"] + ": " + e.what());
        }
    }
    return out;
}

cross_dataset_input cross_dataset_input::from_json(const json& j) {
    if (!j.is_object()) schema("cross-dataset input must be an object");
    cross_dataset_input in;
    if (auto it = j.find("baseline_name"); it != j.end()) {
        if (!it->is_string()) schema("'baseline_name' must be a string");
        in.baseline_name = it->get<std::string>();
    }
    in.baseline = accuracy_row_from_json(require_field(j, "baseline"), "baseline");
    const json& runs = require_field(j, "runs");
    if (!runs.is_object()) schema("'runs' must map training datasets to accuracy objects");
    for (const auto& [k, v] : runs.items()) in.runs.emplace_back(k, accuracy_row_from_json(v, "runs." + k));
    return in;
}

cross_dataset_table cross_dataset_report(const cross_dataset_input& input) {
    if (input.baseline.empty()) schema("baseline has no datasets");
    if (input.runs.empty()) throw error(error_code::empty_evaluation, "no runs to compare");
    cross_dataset_table t;
    for (const auto& [ds, v] : input.baseline) t.datasets.push_back(ds);
    const double n = static_cast<double>(t.datasets.size());
    for (const auto& [train, row] : input.runs) {
        std::map<std::string, double> by_ds(row.begin(), row.end());
        if (by_ds.size() != row.size()) schema("run '" + train + "' lists a dataset twice");
        if (by_ds.size() != t.datasets.size()) schema("run '" + train + "' datasets differ from the baseline");
        cross_dataset_line acc{"RL on " + train, {}, 0.0, false};
        cross_dataset_line delta{"Δ (vs " + input.baseline_name + ", " + train + ")", {}, 0.0, true};
        for (const auto& [ds, base] : input.baseline) {
            const auto it = by_ds.find(ds);
            if (it == by_ds.end()) schema("run '" + train + "' has no accuracy for '" + ds + "'");
            acc.values.push_back(it->second);
            delta.values.push_back(it->second - base);
        }
        for (double v : acc.values) acc.average += v;
        for (double v : delta.values) delta.average += v;
        acc.average /= n;
        delta.average /= n;
        t.lines.push_back(std::move(acc));
        t.lines.push_back(std::move(delta));
    }
    return t;
}

std::string format_fixed(double value, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
    std::string s(buf);
    // Avoid "-0.00" for values that round to zero.
    if (s[0] == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
    return s;
}

std::string format_delta(double value) {
    std::string s = format_fixed(value, 2);
    if (s[0] != '-' && s.find_first_not_of("0.") != std::string::npos) s.insert(0, "+");
    return s;
}

} // namespace tag
