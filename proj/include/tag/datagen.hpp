#pragma once

#include "tag/au_mapping.hpp"
#include "tag/json_io.hpp"
#include "tag/labels.hpp"
#include "tag/prompts.hpp"
#include "tag/reward.hpp"
#include "tag/trace_grammar.hpp"

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tag {

enum class dataset_name { affectnet, ferplus, rafdb };

std::string_view to_string(dataset_name d);
/// Accepts "AffectNet", "FERPlus", "RAF-DB" in any case; "rafdb" too.
dataset_name parse_dataset_name(std::string_view text);

inline constexpr std::string_view training_split = "train";

/// One line of the generation manifest.
struct manifest_row {
    std::string image_id;
    dataset_name dataset = dataset_name::rafdb;
    std::string split;
    expression_label gold_label = expression_label::neutral;
    std::optional<std::string> image_path;
    double width = 0.0;
    double height = 0.0;
};

/// {image_id, dataset, split, gold_label, image_path?, width, height}.
/// Labels outside the seven classes (for example contempt) are rejected.
std::vector<manifest_row> load_generation_manifest(const std::filesystem::path& path);

struct image_ref {
    std::string image_id;
    dataset_name dataset = dataset_name::rafdb;
    std::optional<std::string> image_path;
};

enum class prompt_kind { generate, retry_format, regenerate_with_candidates };

std::string_view to_string(prompt_kind kind);

struct quality_request {
    image_ref image;
    std::string prompt;
    /// Transport retry index for this call, starting at 0.
    std::size_t transport_try = 0;
};

/// Everything the generator sees. The gold label is deliberately absent.
struct generation_request {
    image_ref image;
    au_ground_truth au_pool;
    std::vector<expression_label> candidates;
    prompt_kind kind = prompt_kind::generate;
    /// Number of generation calls already made for this image.
    std::size_t attempt = 0;
    std::size_t transport_try = 0;
    std::string prompt;
};

/// Pluggable model endpoint. Implementations must be callable from several
/// threads at once and must not depend on pipeline state. Transport failures
/// are reported by throwing tag::error(error_code::transport).
class model_client {
public:
    virtual ~model_client() = default;
    virtual std::string assess_quality(const quality_request& request) = 0;
    virtual std::string generate(const generation_request& request) = 0;
};

/// Scripted behaviour of the mock client for one image.
struct mock_behavior {
    enum class verdict { pass, fail, garbage };
    verdict quality = verdict::pass;
    /// Label the mock answers once it is allowed to.
    expression_label truth = expression_label::neutral;
    /// Answered in order while they remain among the candidates.
    std::vector<expression_label> wrong_first;
    /// Always answers this label, eliminated or not.
    std::optional<expression_label> fixed_answer;
    /// The first `format_errors` generation calls return malformed output.
    std::size_t format_errors = 0;
    bool always_malformed = false;
    /// Each call fails this many transport tries before succeeding.
    std::size_t transport_failures = 0;
};

/// Deterministic client: every response is a pure function of the request
/// and the behaviour table, so it is safe under any scheduling.
class mock_client final : public model_client {
public:
    explicit mock_client(std::map<std::string, mock_behavior> behaviors, mock_behavior fallback = {});

    std::string assess_quality(const quality_request& request) override;
    std::string generate(const generation_request& request) override;

    const mock_behavior& behavior_for(const std::string& image_id) const;

    /// Script file: {"default": {...}, "images": {"<id>": {...}}} with keys
    /// quality (pass|fail|garbage), truth, wrong_first, fixed_answer,
    /// format_errors, always_malformed, transport_failures. `truth` defaults
    /// to the manifest label for images listed in the manifest.
    static mock_client from_script(const json& script, std::span<const manifest_row> manifest);

private:
    std::map<std::string, mock_behavior> behaviors_;
    mock_behavior fallback_;
};

struct pipeline_config {
    std::size_t total_concurrency = 512;
    std::size_t per_worker_concurrency = 128;
    std::size_t worker_count = 4;
    std::size_t max_format_retries = 5;
    std::size_t transport_retries = 3;
    std::chrono::milliseconds transport_backoff{200};
    std::uint64_t seed = 0;
    std::size_t top_k = default_top_k;
    double activation_threshold = default_activation_threshold;
    /// Fraction of accepted samples flagged for manual inspection.
    double audit_fraction = 0.0;
    format_options format;

    /// Throws invalid_argument on zero concurrency values or a bad fraction.
    void validate() const;
};

enum class quality_verdict { pass, fail };

/// Strict JSON: an object whose "suitable_for_training" is a boolean.
/// Anything else is a fail.
quality_verdict parse_quality_verdict(std::string_view raw);

/// Converts a generator response to trace text. A JSON object with string
/// fields "CoT" and "Answer" becomes `<think>CoT</think><answer>Answer</answer>`
/// with every `<AUx> [..]` marker wrapped as `<AUx> <bbox>[..]</bbox>`; any
/// other response is taken as trace text unchanged.
std::string trace_text_from_response(std::string_view raw);

/// Calls the client, retrying transport failures with exponential backoff.
quality_verdict quality_filter(const image_ref& image, model_client& client,
                               const prompt_library& prompts, const pipeline_config& config);

enum class outcome_status { accepted, filtered, format_exhausted, candidates_exhausted, transport_error };

std::string_view to_string(outcome_status s);

struct attempt_entry {
    prompt_kind kind = prompt_kind::generate;
    std::vector<expression_label> candidates;
    std::string response;
    bool well_formed = false;
    std::optional<expression_label> predicted;
};

struct generation_outcome {
    outcome_status status = outcome_status::format_exhausted;
    std::string trace_text;
    std::optional<reasoning_trace> trace;
    /// Generation calls made.
    std::size_t attempts = 0;
    /// Labels removed from the candidate set, in removal order.
    std::vector<expression_label> elimination_path;
    /// Regeneration rounds after the first valid response.
    std::size_t rounds = 0;
    std::vector<attempt_entry> log;
    std::string message;
};

/// Format retries, then iterative label elimination, for one image.
generation_outcome generate_with_elimination(const image_ref& image, expression_label gold_label,
                                             const au_ground_truth& au_pool, model_client& client,
                                             const prompt_library& prompts,
                                             const pipeline_config& config);

struct sample_record {
    std::string image_id;
    dataset_name dataset = dataset_name::rafdb;
    std::string split{training_split};
    expression_label gold_label = expression_label::neutral;
    au_ground_truth au_pool;
    std::string trace_text;
    reasoning_trace trace;
    std::size_t attempts = 0;
    std::vector<expression_label> elimination_path;
    bool audit = false;

    /// Throws schema_violation unless the trace is well formed, answers the
    /// gold label and the split is the training split.
    void validate(const format_options& format = {}) const;
    json to_json() const;
    static sample_record from_json(const json& j);
};

struct stage_latency {
    std::size_t calls = 0;
    double total_ms = 0.0;
    double max_ms = 0.0;

    void add(double ms);
    double mean_ms() const { return calls ? total_ms / static_cast<double>(calls) : 0.0; }
};

struct pipeline_stats {
    std::size_t input = 0;
    std::size_t filtered = 0;
    std::size_t accepted = 0;
    std::size_t format_exhausted = 0;
    std::size_t candidates_exhausted = 0;
    std::size_t transport_failed = 0;
    std::size_t generation_calls = 0;
    std::size_t max_format_retries = 0;
    std::size_t audit_sampled = 0;
    stage_latency quality;
    stage_latency generation;
    stage_latency total;

    std::size_t terminal_count() const {
        return filtered + accepted + format_exhausted + candidates_exhausted + transport_failed;
    }
    json to_json() const;
};

struct image_outcome {
    std::string image_id;
    outcome_status status = outcome_status::filtered;
    std::size_t attempts = 0;
    std::vector<expression_label> elimination_path;
    std::string message;
};

struct pipeline_result {
    /// Accepted samples in manifest order.
    std::vector<sample_record> samples;
    /// One entry per manifest row, in manifest order.
    std::vector<image_outcome> outcomes;
    pipeline_stats stats;
};

/// Validates the manifest against the detector output (training split only,
/// unique ids, one detector record per image with matching dimensions) before
/// any client call, then runs the staged pipeline on a bounded queue.
pipeline_result run_pipeline(std::span<const manifest_row> manifest,
                             std::span<const detection_record> detections,
                             const au_catalog& catalog, const pipeline_config& config,
                             model_client& quality_client, model_client& generation_client,
                             const prompt_library& prompts);

/// Re-validates every record and writes one JSON object per line.
void write_samples(const std::filesystem::path& path, std::span<const sample_record> samples,
                   const format_options& format = {});
std::vector<sample_record> read_samples(const std::filesystem::path& path);

} // namespace tag
