#pragma once

#include "tag/datagen.hpp"
#include "tag/grpo.hpp"
#include "tag/http_client.hpp"
#include "tag/json_io.hpp"
#include "tag/reward.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tag {

/// Effective settings for one tagctl run. Files use one `key = value` pair
/// per line with dotted keys; `#` starts a comment. See docs/formats.md for
/// the full key list.
struct run_config {
    reward_config reward;
    grpo_config grpo;
    std::size_t sim_steps = 500;
    pipeline_config pipeline;
    http_client_config http;
    std::string catalog_path;
    std::string prompt_dir;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    run_config();

    /// Throws invalid_argument on an unknown key or an unparseable value.
    void set(std::string_view key, std::string_view value);
    /// Applies every assignment in the file, in order.
    void load_file(const std::filesystem::path& path);
    /// Validates the sections that have invariants.
    void validate() const;

    json to_json() const;
    /// key = value lines for every known key, in schema order.
    std::string to_text() const;

    static const std::vector<std::string>& keys();
};

std::string toolkit_version();

/// {"box_choices": [{"boxes", "au_ids"}], "labels"?: [...],
///  "prompts": [{"id", "gold_label", "gold_au": {boxes, au_ids}, "initial_logits"?}]}
toy_env toy_env_from_json(const json& j);
json toy_env_to_json(const toy_env& env);

} // namespace tag
