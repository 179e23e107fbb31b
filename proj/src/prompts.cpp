#include "tag/prompts.hpp"

#include "tag/json_io.hpp"
#include "tag/trace_grammar.hpp"

namespace tag {

namespace {

constexpr std::string_view au_placeholder = "{AU_LIST}";

void replace_first(std::string& text, std::string_view needle, std::string_view with) {
    const auto pos = text.find(needle);
    if (pos != std::string::npos) text.replace(pos, needle.size(), with);
}

std::string full_candidate_line() {
    return format_candidate_line(all_labels);
}

} // namespace

prompt_library prompt_library::load(const std::filesystem::path& dir) {
    prompt_library p;
    p.quality = read_text_file(dir / "vl_quality.txt");
    p.generation_au = read_text_file(dir / "generation_au.txt");
    p.generation_no_au = read_text_file(dir / "generation_no_au.txt");
    p.judge = read_text_file(dir / "judge.txt");
    return p;
}

std::filesystem::path default_prompt_dir() {
    return std::filesystem::path(TAG_DATA_DIR) / "prompts";
}

std::string format_candidate_line(std::span<const expression_label> candidates) {
    std::string out = "[";
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (i) out += ", ";
        out += to_string(candidates[i]);
    }
    out += "]";
    return out;
}

std::string format_au_list(const au_ground_truth& pool) {
    std::string out;
    if (pool.box_ids.size() == pool.boxes.size() && !pool.boxes.empty()) {
        for (std::size_t i = 0; i < pool.boxes.size(); ++i) {
            if (i) out += "\n";
            out += "<AU" + std::to_string(pool.box_ids[i]) + "> " + format_box_payload(pool.boxes[i]);
        }
        return out;
    }
    bool first = true;
    for (int id : pool.au_ids) {
        if (!first) out += "\n";
        first = false;
        out += "<AU" + std::to_string(id) + ">";
    }
    return out;
}

std::string render_generation_prompt(const prompt_library& prompts, const au_ground_truth& pool,
                                     std::span<const expression_label> candidates) {
    std::string text = pool.boxes.empty() && pool.au_ids.empty() ? prompts.generation_no_au
                                                                 : prompts.generation_au;
    replace_first(text, au_placeholder, format_au_list(pool));
    if (candidates.size() != label_count) {
        replace_first(text, full_candidate_line(), format_candidate_line(candidates));
    }
    return text;
}

} // namespace tag
