#include "tag/reward.hpp"

#include "tag/error.hpp"

#include <algorithm>
#include <functional>
#include <thread>

namespace tag {

std::string_view to_string(au_reward_mode mode) {
    return mode == au_reward_mode::iou ? "iou" : "f1";
}

au_reward_mode parse_au_reward_mode(std::string_view text) {
    if (text == "iou") return au_reward_mode::iou;
    if (text == "f1") return au_reward_mode::f1;
    throw error(error_code::invalid_argument,
                "au reward mode must be 'iou' or 'f1', got '" + std::string(text) + "'");
}

std::optional<double> au_iou_reward(std::span<const bounding_box> predicted,
                                    const au_ground_truth& gold) {
    if (gold.boxes.empty()) return std::nullopt;
    if (predicted.empty()) return 0.0;

    std::vector<double> scores;
    scores.reserve(predicted.size());
    for (const auto& box : predicted) {
        if (!box.is_valid() || !box.in_canvas()) {
            scores.push_back(0.0);
            continue;
        }
        scores.push_back(max_iou(box, gold.boxes).iou);
    }
    std::sort(scores.begin(), scores.end(), std::greater<>());

    const std::size_t m = std::min(gold.boxes.size(), predicted.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) sum += scores[i];
    return sum / static_cast<double>(m);
}

double au_f1_reward(const std::set<int>& predicted, const std::set<int>& gold) {
    if (predicted.empty() && gold.empty()) return 1.0;
    if (predicted.empty() || gold.empty()) return 0.0;
    std::size_t overlap = 0;
    for (int id : predicted) overlap += gold.count(id);
    return 2.0 * static_cast<double>(overlap) /
           static_cast<double>(predicted.size() + gold.size());
}

double answer_reward(expression_label predicted, expression_label gold) {
    return predicted == gold ? 1.0 : 0.0;
}

double answer_reward(std::string_view predicted, expression_label gold) {
    const auto label = canonicalize_label(predicted);
    return label && *label == gold ? 1.0 : 0.0;
}

double format_reward(const format_report& report, double bonus) {
    return report.well_formed ? bonus : 0.0;
}

std::vector<bounding_box> grounding_boxes(const reasoning_trace& trace) {
    std::vector<bounding_box> out = trace.boxes;
    out.resize(trace.box_span_count(), bounding_box{});
    return out;
}

reward_breakdown total_reward(std::string_view trace_text, expression_label gold_label,
                              const au_ground_truth& gold_au, const reward_config& config) {
    const reasoning_trace trace = parse_trace(trace_text);
    const format_report report = validate_format(trace, config.format);

    reward_breakdown out;
    out.r_fmt = format_reward(report, config.format_bonus);
    out.r_ans = trace.answer ? answer_reward(*trace.answer, gold_label) : 0.0;
    if (config.include_au) {
        if (config.au_mode == au_reward_mode::iou) {
            out.r_au = au_iou_reward(grounding_boxes(trace), gold_au);
        } else if (!gold_au.au_ids.empty()) {
            out.r_au = au_f1_reward(extract_au_tags(trace_text), gold_au.au_ids);
        }
    }
    out.total = out.r_au.value_or(0.0) + out.r_ans + out.r_fmt;
    return out;
}

std::vector<reward_breakdown> score_batch(std::span<const reward_request> requests,
                                          const reward_config& config, std::size_t threads) {
    std::vector<reward_breakdown> out(requests.size());
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto& r = requests[i];
            out[i] = total_reward(r.trace_text, r.gold_label, r.gold_au, config);
        }
    };
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, requests.size()));
    if (threads == 1) {
        work(0, requests.size());
        return out;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (requests.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(requests.size(), begin + chunk);
        if (begin >= end) break;
        pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
    return out;
}

} // namespace tag
