#include "tag/au_mapping.hpp"

#include "tag/error.hpp"
#include "tag/json_io.hpp"

#include <algorithm>
#include <cmath>

namespace tag {

namespace {

[[noreturn]] void schema(const std::string& what) {
    throw error(error_code::schema_violation, what);
}

landmark_set landmarks_from_json(const json& j) {
    if (!j.is_object()) schema("field 'landmarks' must be an object");
    landmark_set out;
    out.scheme = require_string(j, "scheme");
    const json& pts = require_field(j, "points");
    if (!pts.is_array()) schema("field 'landmarks.points' must be an array");
    out.points.reserve(pts.size());
    for (const auto& p : pts) {
        if (!p.is_array() || p.size() < 2 || !p[0].is_number() || !p[1].is_number()) {
            schema("field 'landmarks.points' entries must be [x, y]");
        }
        out.points.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    return out;
}

au_detection detection_from_json(const json& j) {
    if (!j.is_object()) schema("entries of 'aus' must be objects");
    au_detection d;
    d.au_id = au_id_from_json(require_field(j, "id"), "aus.id");
    d.confidence = require_number(j, "confidence");
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
        schema("field 'aus.confidence' must lie in [0, 1]");
    }
    if (auto it = j.find("box"); it != j.end() && !it->is_null()) {
        const bounding_box b = box_from_json(*it, "aus.box");
        d.box = pixel_box{b.x1, b.y1, b.x2, b.y2};
    }
    return d;
}

bounding_box clamp_to_canvas(bounding_box b) {
    auto c = [](double v) { return std::clamp(v, 0.0, canvas_size); };
    return {c(b.x1), c(b.y1), c(b.x2), c(b.y2)};
}

// Grows [lo, hi] to at least min_extent while staying inside [0, canvas].
void ensure_extent(double& lo, double& hi, double min_extent) {
    if (hi - lo >= min_extent) return;
    const double mid = 0.5 * (lo + hi);
    lo = mid - 0.5 * min_extent;
    hi = mid + 0.5 * min_extent;
    if (lo < 0.0) {
        hi -= lo;
        lo = 0.0;
    }
    if (hi > canvas_size) {
        lo -= hi - canvas_size;
        hi = canvas_size;
    }
}

} // namespace

au_catalog load_catalog(const std::filesystem::path& path) {
    json root;
    try {
        root = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        schema(path.string() + ": invalid JSON (" + e.what() + ")");
    }
    const std::string where = path.string() + ": ";
    try {
        if (!root.is_object()) schema("catalog root must be an object");
        au_catalog cat;
        cat.scheme = require_string(root, "scheme");
        const double count = require_number(root, "point_count");
        if (!(count >= 1.0) || count != std::floor(count)) schema("'point_count' must be a positive integer");
        cat.point_count = static_cast<std::size_t>(count);
        const json& rules = require_field(root, "rules");
        if (!rules.is_object()) schema("'rules' must be an object keyed by AU id");
        for (const auto& [key, rule] : rules.items()) {
            const int id = au_id_from_json(json(key), "rules key");
            if (!rule.is_object()) schema("rule for AU" + key + " must be an object");
            region_rule r;
            if (auto it = rule.find("name"); it != rule.end() && it->is_string()) r.name = it->get<std::string>();
            const json& idx = require_field(rule, "landmark_indices");
            if (!idx.is_array() || idx.empty()) schema("AU" + key + ": 'landmark_indices' must be a non-empty array");
            for (const auto& v : idx) {
                if (!v.is_number_unsigned() || v.get<std::size_t>() >= cat.point_count) {
                    schema("AU" + key + ": landmark index out of range for the scheme");
                }
                r.landmark_indices.push_back(v.get<std::size_t>());
            }
            r.padding = require_number(rule, "padding");
            if (!(r.padding >= 0.0)) schema("AU" + key + ": 'padding' must be non-negative");
            if (!cat.rules.emplace(id, std::move(r)).second) schema("duplicate rule for AU" + key);
        }
        return cat;
    } catch (const error& e) {
        if (e.code() == error_code::io) throw;
        throw error(e.code(), where + e.what());
    }
}

std::filesystem::path default_catalog_path() {
    return std::filesystem::path(TAG_DATA_DIR) / "au_catalog_ibug68.json";
}

std::vector<detection_record> load_detections(const std::filesystem::path& path,
                                              const au_catalog* catalog) {
    std::vector<detection_record> out;
    for_each_jsonl(path, [&](std::size_t, const json& obj) {
        detection_record rec;
        rec.image_id = require_string(obj, "image_id");
        rec.width = require_number(obj, "width");
        rec.height = require_number(obj, "height");
        if (!(rec.width > 0.0) || !(rec.height > 0.0)) schema("'width' and 'height' must be positive");
        if (auto it = obj.find("landmarks"); it != obj.end() && !it->is_null()) {
            rec.landmarks = landmarks_from_json(*it);
        }
        const json& aus = require_field(obj, "aus");
        if (!aus.is_array()) schema("field 'aus' must be an array");
        for (const auto& a : aus) {
            au_detection d = detection_from_json(a);
            if (catalog) d.known = catalog->contains(d.au_id);
            rec.detections.push_back(d);
        }
        out.push_back(std::move(rec));
    });
    return out;
}

bounding_box region_box_for_au(int au_id, const landmark_set& landmarks, const au_catalog& catalog,
                               double image_width, double image_height) {
    const auto it = catalog.rules.find(au_id);
    if (it == catalog.rules.end()) {
        throw error(error_code::invalid_argument, "AU" + std::to_string(au_id) + " is not in the catalog");
    }
    if (landmarks.scheme != catalog.scheme || landmarks.points.size() != catalog.point_count) {
        throw error(error_code::invalid_argument,
                    "landmark scheme '" + landmarks.scheme + "' with " +
                        std::to_string(landmarks.points.size()) + " points does not match catalog '" +
                        catalog.scheme + "' (" + std::to_string(catalog.point_count) + ")");
    }
    if (!(image_width > 0.0) || !(image_height > 0.0)) {
        throw error(error_code::invalid_argument, "image dimensions must be positive");
    }

    const region_rule& rule = it->second;
    double x1 = HUGE_VAL, y1 = HUGE_VAL, x2 = -HUGE_VAL, y2 = -HUGE_VAL;
    for (std::size_t idx : rule.landmark_indices) {
        const point2& p = landmarks.points.at(idx);
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw error(error_code::invalid_argument, "non-finite landmark coordinate");
        }
        x1 = std::min(x1, p.x);
        y1 = std::min(y1, p.y);
        x2 = std::max(x2, p.x);
        y2 = std::max(y2, p.y);
    }
    const double pad_x = rule.padding * (x2 - x1);
    const double pad_y = rule.padding * (y2 - y1);
    pixel_box px{std::clamp(x1 - pad_x, 0.0, image_width), std::clamp(y1 - pad_y, 0.0, image_height),
                 std::clamp(x2 + pad_x, 0.0, image_width), std::clamp(y2 + pad_y, 0.0, image_height)};

    bounding_box box = clamp_to_canvas(to_canvas(px, image_width, image_height));
    ensure_extent(box.x1, box.x2, 1.0);
    ensure_extent(box.y1, box.y2, 1.0);
    return box;
}

void resolve_boxes(detection_record& record, const au_catalog& catalog) {
    for (auto& d : record.detections) {
        d.known = catalog.contains(d.au_id);
        d.canvas_box.reset();
        if (d.box) {
            const bounding_box b = clamp_to_canvas(to_canvas(*d.box, record.width, record.height));
            if (b.is_valid()) d.canvas_box = b;
        } else if (d.known && record.landmarks) {
            d.canvas_box = region_box_for_au(d.au_id, *record.landmarks, catalog, record.width, record.height);
        }
    }
}

au_ground_truth top_k_activated(std::span<const au_detection> detections, std::size_t k,
                                double threshold) {
    std::vector<const au_detection*> kept;
    for (const auto& d : detections) {
        if (d.confidence >= threshold && d.canvas_box) kept.push_back(&d);
    }
    std::stable_sort(kept.begin(), kept.end(), [](const au_detection* a, const au_detection* b) {
        if (a->confidence != b->confidence) return a->confidence > b->confidence;
        return a->au_id < b->au_id;
    });
    if (kept.size() > k) kept.resize(k);

    au_ground_truth gt;
    for (const auto* d : kept) {
        gt.boxes.push_back(*d->canvas_box);
        gt.au_ids.insert(d->au_id);
        gt.box_ids.push_back(d->au_id);
    }
    return gt;
}

} // namespace tag
