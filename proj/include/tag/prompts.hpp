#pragma once

#include "tag/labels.hpp"
#include "tag/reward.hpp"

#include <filesystem>
#include <span>
#include <string>

namespace tag {

/// Prompt templates shipped under data/prompts, loaded byte-for-byte.
struct prompt_library {
    std::string quality;
    std::string generation_au;
    std::string generation_no_au;
    std::string judge;

    /// Reads vl_quality.txt, generation_au.txt, generation_no_au.txt and
    /// judge.txt from `dir`. Throws io when a file is missing.
    static prompt_library load(const std::filesystem::path& dir);
};

std::filesystem::path default_prompt_dir();

/// One line per pooled AU: `<AU12> [x1, y1, x2, y2]`, in pool order.
/// Falls back to the sorted id set when the pool has no box/id pairing.
std::string format_au_list(const au_ground_truth& pool);

/// Generation prompt with {AU_LIST} filled in and the category line replaced
/// by `candidates` (canonical order is the caller's responsibility).
std::string render_generation_prompt(const prompt_library& prompts, const au_ground_truth& pool,
                                     std::span<const expression_label> candidates);

/// Bracketed, comma separated label list as it appears in the templates.
std::string format_candidate_line(std::span<const expression_label> candidates);

} // namespace tag
