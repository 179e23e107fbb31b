#pragma once

#include "tag/geometry.hpp"
#include "tag/reward.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tag {

struct point2 {
    double x = 0.0;
    double y = 0.0;
};

struct landmark_set {
    std::string scheme;
    std::vector<point2> points;
};

struct au_detection {
    int au_id = 0;
    double confidence = 0.0;
    /// Box reported by the detector itself, in pixels.
    std::optional<pixel_box> box;
    /// Canvas box used for grounding; filled by resolve_boxes().
    std::optional<bounding_box> canvas_box;
    /// False when au_id has no rule in the catalog.
    bool known = true;
};

/// Detector and landmark output for one image.
struct detection_record {
    std::string image_id;
    double width = 0.0;
    double height = 0.0;
    std::optional<landmark_set> landmarks;
    std::vector<au_detection> detections;
};

struct region_rule {
    std::string name;
    std::vector<std::size_t> landmark_indices;
    /// Each side of the landmark hull grows by padding * hull extent.
    double padding = 0.0;
};

/// AU -> facial-region rules for one landmark scheme, loaded from a data file.
struct au_catalog {
    std::string scheme;
    std::size_t point_count = 0;
    std::map<int, region_rule> rules;

    bool contains(int au_id) const { return rules.count(au_id) != 0; }
};

/// Catalog file: {"scheme", "point_count", "rules": {"<au>": {"name",
/// "landmark_indices", "padding"}}}. Throws schema_violation with the
/// offending field, or io when the file cannot be read.
au_catalog load_catalog(const std::filesystem::path& path);

/// Catalog shipped in data/au_catalog_ibug68.json.
std::filesystem::path default_catalog_path();

/// Detector JSONL, one image per line:
/// {image_id, width, height, landmarks?: {scheme, points: [[x, y], ...]},
///  aus: [{id, confidence, box?: [x1, y1, x2, y2]}]}.
/// Unknown AU ids are kept with known = false when a catalog is given.
std::vector<detection_record> load_detections(const std::filesystem::path& path,
                                              const au_catalog* catalog = nullptr);

/// Landmark hull of the AU's rule, padded, clamped to the image, rescaled to
/// the canvas and widened to at least one canvas unit per side when the hull
/// is degenerate. Always valid and in-canvas.
bounding_box region_box_for_au(int au_id, const landmark_set& landmarks, const au_catalog& catalog,
                               double image_width, double image_height);

/// Fills canvas_box for every detection: detector box first, then the
/// catalog region when landmarks are available. Leaves it empty otherwise.
void resolve_boxes(detection_record& record, const au_catalog& catalog);

inline constexpr std::size_t default_top_k = 3;
inline constexpr double default_activation_threshold = 0.5;

/// Keeps detections with confidence >= threshold and a resolved canvas box,
/// orders by confidence (descending, ties by ascending id) and keeps the first k.
au_ground_truth top_k_activated(std::span<const au_detection> detections,
                                std::size_t k = default_top_k,
                                double threshold = default_activation_threshold);

} // namespace tag
