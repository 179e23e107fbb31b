#pragma once

#include "tag/json_io.hpp"
#include "tag/labels.hpp"
#include "tag/reward.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace tag {

struct eval_row {
    std::string image_id;
    expression_label gold_label = expression_label::neutral;
    /// detector name -> activated AU boxes from that detector
    std::map<std::string, au_ground_truth> detector_boxes;
};

struct dataset_manifest {
    std::string name;
    std::vector<eval_row> rows;
};

/// Fixed 7-class test-set sizes: RAF-DB 3068, FERPlus 3517, AffectNet 3500.
std::optional<std::size_t> known_test_size(std::string_view dataset);

/// JSONL rows {image_id, gold_label, detector_boxes?: {name: {boxes, au_ids}}}.
/// Any label outside the seven classes (contempt included) is a
/// schema_violation, as are duplicate ids and a row count that differs from
/// `declared_size`.
dataset_manifest load_eval_manifest(const std::filesystem::path& path, std::string name = {},
                                    std::optional<std::size_t> declared_size = std::nullopt);

/// Throws schema_violation when the row count differs.
void check_declared_size(const dataset_manifest& manifest, std::size_t declared_size);

struct prediction_row {
    std::string image_id;
    std::string raw_output;
};

class prediction_set {
public:
    prediction_set() = default;
    /// Throws schema_violation on a duplicate image id.
    explicit prediction_set(std::vector<prediction_row> rows);

    const std::string* find(const std::string& image_id) const;
    std::size_t size() const { return rows_.size(); }
    const std::vector<prediction_row>& rows() const { return rows_; }

private:
    std::vector<prediction_row> rows_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// JSONL rows {image_id, raw_output}.
prediction_set load_predictions(const std::filesystem::path& path);

struct accuracy_result {
    std::size_t total = 0;
    std::size_t correct = 0;
    /// Rows whose output has no recognizable answer label.
    std::size_t unparseable = 0;
    /// Manifest ids without a prediction; counted as wrong.
    std::vector<std::string> missing_ids;
    double accuracy = 0.0;
};

/// Throws empty_evaluation for an empty manifest.
accuracy_result evaluate_accuracy(const prediction_set& predictions, const dataset_manifest& manifest);

inline constexpr std::string_view grounding_convention = "rows without gold boxes are excluded from the mean";

struct grounding_result {
    std::string detector;
    std::size_t eligible = 0;
    std::size_t excluded = 0;
    /// Eligible rows without a prediction; they score 0.
    std::size_t missing = 0;
    /// nullopt when no row is eligible.
    std::optional<double> mean_iou;
};

/// Mean au_iou_reward over rows with gold boxes for `detector`, accumulated
/// in manifest order. Throws invalid_argument when no row carries the detector.
grounding_result evaluate_grounding(const prediction_set& predictions, const dataset_manifest& manifest,
                                    const std::string& detector, std::size_t threads = 1);

/// Detector names present in any row, sorted.
std::vector<std::string> detector_names(const dataset_manifest& manifest);

enum class vote { a, b, tie };

std::string_view to_string(vote v);
vote parse_vote(std::string_view text);

struct preference_record {
    std::string item_id;
    std::string judge_id;
    vote choice = vote::tie;
};

struct preference_summary {
    double pct_a = 0.0;
    double pct_b = 0.0;
    double pct_tie = 0.0;
    std::size_t judges = 0;
    std::size_t records = 0;
};

/// Vote shares per judge, then the mean over judges, in percent.
/// Throws empty_evaluation on empty input and schema_violation on a
/// duplicate (item, judge) pair.
preference_summary aggregate_preferences(std::span<const preference_record> records);

/// CSV with header item_id,judge_id,vote (vote is A, B or tie).
std::vector<preference_record> load_preferences_csv(const std::filesystem::path& path);

struct rubric_score {
    std::string item_id;
    std::string response;
    std::string run_id;
    int visual_faithfulness = 0;
    int anatomical_precision = 0;
    int logical_coherence = 0;
};

struct rubric_means {
    std::string response;
    double visual_faithfulness = 0.0;
    double anatomical_precision = 0.0;
    double logical_coherence = 0.0;
    std::size_t count = 0;
};

/// Mean over items and runs per response (responses sorted). Throws
/// schema_violation for scores outside [1, 5], a response other than A/B, or
/// a duplicate (item, response, run); empty_evaluation on empty input.
std::vector<rubric_means> aggregate_rubric(std::span<const rubric_score> scores);

/// CSV with header item_id,response,run_id,visual_faithfulness,
/// anatomical_precision,logical_coherence.
std::vector<rubric_score> load_rubric_csv(const std::filesystem::path& path);

/// Ordered (eval dataset, accuracy %) pairs.
using accuracy_row = std::vector<std::pair<std::string, double>>;

struct cross_dataset_input {
    std::string baseline_name = "baseline";
    accuracy_row baseline;
    /// (training dataset, accuracies on each eval dataset)
    std::vector<std::pair<std::string, accuracy_row>> runs;

    /// {"baseline_name"?, "baseline": {ds: acc}, "runs": {train_ds: {ds: acc}}}
    static cross_dataset_input from_json(const json& j);
};

struct cross_dataset_line {
    std::string label;
    std::vector<double> values;
    double average = 0.0;
    bool is_delta = false;
};

struct cross_dataset_table {
    std::vector<std::string> datasets;
    std::vector<cross_dataset_line> lines;
};

/// An accuracy line and a delta line per run; averages are row means, so the
/// delta average equals the mean of the deltas. Throws schema_violation when
/// a run's datasets differ from the baseline's.
cross_dataset_table cross_dataset_report(const cross_dataset_input& input);

/// Signed two-decimal rendering used for delta cells: "+3.78", "-2.03", "0.00".
std::string format_delta(double value);
std::string format_fixed(double value, int decimals = 2);

/// Minimal RFC 4180 reader: header row required, quoted fields allowed.
std::vector<std::map<std::string, std::string>> read_csv(const std::filesystem::path& path,
                                                         std::span<const std::string_view> required);

} // namespace tag
