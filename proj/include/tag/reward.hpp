#pragma once

#include "tag/geometry.hpp"
#include "tag/labels.hpp"
#include "tag/trace_grammar.hpp"

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tag {

/// Boxes and ids of the activated AUs for one sample. Either may be empty.
struct au_ground_truth {
    std::vector<bounding_box> boxes;
    std::set<int> au_ids;
    /// AU id of each box, parallel to `boxes`, when the pairing is known.
    std::vector<int> box_ids;
};

struct reward_breakdown {
    /// Absent when the sample has no activated AU ground truth.
    std::optional<double> r_au;
    double r_ans = 0.0;
    double r_fmt = 0.0;
    double total = 0.0;
};

enum class au_reward_mode { iou, f1 };

std::string_view to_string(au_reward_mode mode);
au_reward_mode parse_au_reward_mode(std::string_view text);

struct reward_config {
    double format_bonus = 0.5;
    au_reward_mode au_mode = au_reward_mode::iou;
    /// Drops R_AU entirely (answer + format only); used by the RLVR ablation.
    bool include_au = true;
    format_options format;
};

/// Grounding reward. Each predicted box scores its best IoU against the gold
/// boxes (0 for degenerate or off-canvas boxes); the top min(n, k) scores are
/// averaged. nullopt when gold has no boxes; 0 when there are no predictions.
std::optional<double> au_iou_reward(std::span<const bounding_box> predicted,
                                    const au_ground_truth& gold);

/// F1 between AU id sets; 1 when both are empty.
double au_f1_reward(const std::set<int>& predicted, const std::set<int>& gold);

double answer_reward(expression_label predicted, expression_label gold);
/// Canonicalizes the raw text first; unrecognized text scores 0.
double answer_reward(std::string_view predicted, expression_label gold);

double format_reward(const format_report& report, double bonus = 0.5);

/// Box list used for grounding: one entry per `<bbox>` span, with malformed
/// spans represented by a degenerate box so they still count toward k.
std::vector<bounding_box> grounding_boxes(const reasoning_trace& trace);

/// Parses, validates and scores one raw model output. Never throws on the text.
reward_breakdown total_reward(std::string_view trace_text, expression_label gold_label,
                              const au_ground_truth& gold_au, const reward_config& config = {});

struct reward_request {
    std::string id;
    std::string trace_text;
    expression_label gold_label = expression_label::neutral;
    au_ground_truth gold_au;
};

/// Scores every request, splitting the batch across `threads` workers.
/// Output order matches input order.
std::vector<reward_breakdown> score_batch(std::span<const reward_request> requests,
                                          const reward_config& config,
                                          std::size_t threads = 1);

} // namespace tag
