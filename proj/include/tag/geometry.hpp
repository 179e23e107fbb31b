#pragma once

#include <cstddef>
#include <span>
#include <utility>

namespace tag {

/// Side length of the virtual canvas every grounding box is expressed on.
inline constexpr double canvas_size = 512.0;

/// Axis-aligned box in canvas coordinates. Degenerate boxes are representable;
/// use is_valid()/in_canvas() to classify them.
struct bounding_box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    bool is_finite() const noexcept;
    /// Finite with strictly positive width and height.
    bool is_valid() const noexcept;
    bool in_canvas() const noexcept;
    double area() const noexcept;

    friend bool operator==(const bounding_box&, const bounding_box&) = default;
};

/// Box in source-image pixel coordinates.
struct pixel_box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    /// 0 <= x1 < x2 <= width and 0 <= y1 < y2 <= height.
    bool is_valid_in(double width, double height) const noexcept;

    friend bool operator==(const pixel_box&, const pixel_box&) = default;
};

/// Intersection over union with continuous areas. Returns 0 when either box
/// is degenerate, so the result is always in [0, 1].
double iou(const bounding_box& a, const bounding_box& b) noexcept;

struct best_match {
    double iou = 0.0;
    std::size_t index = 0;
};

/// Highest IoU against any candidate; ties go to the lowest index.
/// Throws tag::error(empty_candidate_set) when candidates is empty.
best_match max_iou(const bounding_box& box, std::span<const bounding_box> candidates);

bounding_box to_canvas(const pixel_box& box, double image_width, double image_height);
pixel_box from_canvas(const bounding_box& box, double image_width, double image_height);

} // namespace tag
