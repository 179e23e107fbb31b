#include "tag/geometry.hpp"

#include "tag/error.hpp"

#include <algorithm>
#include <cmath>

namespace tag {

bool bounding_box::is_finite() const noexcept {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2);
}

bool bounding_box::is_valid() const noexcept {
    return is_finite() && x1 < x2 && y1 < y2;
}

bool bounding_box::in_canvas() const noexcept {
    auto inside = [](double v) { return v >= 0.0 && v <= canvas_size; };
    return inside(x1) && inside(y1) && inside(x2) && inside(y2);
}

double bounding_box::area() const noexcept {
    if (!is_valid()) return 0.0;
    return (x2 - x1) * (y2 - y1);
}

bool pixel_box::is_valid_in(double width, double height) const noexcept {
    return 0.0 <= x1 && x1 < x2 && x2 <= width && 0.0 <= y1 && y1 < y2 && y2 <= height;
}

double iou(const bounding_box& a, const bounding_box& b) noexcept {
    if (!a.is_valid() || !b.is_valid()) return 0.0;
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return std::clamp(inter / uni, 0.0, 1.0);
}

best_match max_iou(const bounding_box& box, std::span<const bounding_box> candidates) {
    if (candidates.empty()) {
        throw error(error_code::empty_candidate_set, "max_iou: candidate set is empty");
    }
    best_match best{iou(box, candidates[0]), 0};
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double v = iou(box, candidates[i]);
        if (v > best.iou) best = {v, i};
    }
    return best;
}

namespace {

void require_dimensions(double image_width, double image_height) {
    if (!(image_width > 0.0) || !(image_height > 0.0) || !std::isfinite(image_width) ||
        !std::isfinite(image_height)) {
        throw error(error_code::invalid_argument, "image dimensions must be positive");
    }
}

} // namespace

bounding_box to_canvas(const pixel_box& box, double image_width, double image_height) {
    require_dimensions(image_width, image_height);
    const double sx = canvas_size / image_width;
    const double sy = canvas_size / image_height;
    return {box.x1 * sx, box.y1 * sy, box.x2 * sx, box.y2 * sy};
}

pixel_box from_canvas(const bounding_box& box, double image_width, double image_height) {
    require_dimensions(image_width, image_height);
    const double sx = image_width / canvas_size;
    const double sy = image_height / canvas_size;
    return {box.x1 * sx, box.y1 * sy, box.x2 * sx, box.y2 * sy};
}

} // namespace tag
