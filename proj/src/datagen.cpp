#include "tag/datagen.hpp"

#include "tag/bounded_queue.hpp"
#include "tag/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

namespace tag {

namespace {

[[noreturn]] void schema(const std::string& what) {
    throw error(error_code::schema_violation, what);
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

using clock_type = std::chrono::steady_clock;

double elapsed_ms(clock_type::time_point since) {
    return std::chrono::duration<double, std::milli>(clock_type::now() - since).count();
}

template <class F>
auto with_transport_retries(const pipeline_config& config, F&& call) {
    for (std::size_t try_index = 0;; ++try_index) {
        try {
            return call(try_index);
        } catch (const error& e) {
            if (e.code() != error_code::transport || try_index >= config.transport_retries) throw;
        }
        const auto wait = config.transport_backoff * (std::int64_t{1} << std::min<std::size_t>(try_index, 20));
        if (wait.count() > 0) std::this_thread::sleep_for(wait);
    }
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

bool audit_selected(std::string_view image_id, std::uint64_t seed, double fraction) {
    if (fraction <= 0.0) return false;
    const double u = static_cast<double>(splitmix64(fnv1a(image_id) ^ splitmix64(seed)) >> 11) * 0x1.0p-53;
    return u < fraction;
}

json labels_to_json(std::span<const expression_label> labels) {
    json a = json::array();
    for (auto l : labels) a.push_back(std::string(to_string(l)));
    return a;
}

std::vector<expression_label> labels_from_json(const json& j, std::string_view field) {
    if (!j.is_array()) schema("field '" + std::string(field) + "' must be an array of labels");
    std::vector<expression_label> out;
    for (const auto& v : j) {
        if (!v.is_string()) schema("field '" + std::string(field) + "' must hold strings");
        out.push_back(parse_label(v.get<std::string>()));
    }
    return out;
}

au_ground_truth ground_truth_from_json(const json& j) {
    if (!j.is_object()) schema("field 'au_pool' must be an object");
    au_ground_truth gt;
    if (auto it = j.find("boxes"); it != j.end()) {
        if (!it->is_array()) schema("field 'au_pool.boxes' must be an array");
        for (const auto& b : *it) gt.boxes.push_back(box_from_json(b, "au_pool.boxes"));
    }
    if (auto it = j.find("au_ids"); it != j.end()) {
        if (!it->is_array()) schema("field 'au_pool.au_ids' must be an array");
        for (const auto& v : *it) gt.au_ids.insert(au_id_from_json(v, "au_pool.au_ids"));
    }
    if (auto it = j.find("box_ids"); it != j.end()) {
        if (!it->is_array()) schema("field 'au_pool.box_ids' must be an array");
        for (const auto& v : *it) gt.box_ids.push_back(au_id_from_json(v, "au_pool.box_ids"));
    }
    return gt;
}

mock_behavior::verdict parse_verdict(std::string_view s) {
    const std::string v = lower(s);
    if (v == "pass") return mock_behavior::verdict::pass;
    if (v == "fail") return mock_behavior::verdict::fail;
    if (v == "garbage") return mock_behavior::verdict::garbage;
    schema("unknown quality verdict '" + std::string(s) + "'");
}

std::size_t require_count(const json& j, std::string_view field) {
    if (!j.is_number_unsigned()) schema("field '" + std::string(field) + "' must be a non-negative integer");
    return j.get<std::size_t>();
}

void apply_behavior_json(mock_behavior& b, const json& j) {
    if (!j.is_object()) schema("mock behaviour must be an object");
    for (const auto& [key, v] : j.items()) {
        if (key == "quality") {
            if (!v.is_string()) schema("field 'quality' must be a string");
            b.quality = parse_verdict(v.get<std::string>());
        } else if (key == "truth") {
            if (!v.is_string()) schema("field 'truth' must be a string");
            b.truth = parse_label(v.get<std::string>());
        } else if (key == "wrong_first") {
            b.wrong_first = labels_from_json(v, key);
        } else if (key == "fixed_answer") {
            if (v.is_null()) {
                b.fixed_answer.reset();
            } else {
                if (!v.is_string()) schema("field 'fixed_answer' must be a string");
                b.fixed_answer = parse_label(v.get<std::string>());
            }
        } else if (key == "format_errors") {
            b.format_errors = require_count(v, key);
        } else if (key == "always_malformed") {
            if (!v.is_boolean()) schema("field 'always_malformed' must be a boolean");
            b.always_malformed = v.get<bool>();
        } else if (key == "transport_failures") {
            b.transport_failures = require_count(v, key);
        } else {
            schema("unknown mock behaviour field '" + key + "'");
        }
    }
}

} // namespace

std::string_view to_string(dataset_name d) {
    switch (d) {
    case dataset_name::affectnet: return "AffectNet";
    case dataset_name::ferplus: return "FERPlus";
    case dataset_name::rafdb: return "RAF-DB";
    }
    return "?";
}

dataset_name parse_dataset_name(std::string_view text) {
    const std::string v = lower(text);
    if (v == "affectnet") return dataset_name::affectnet;
    if (v == "ferplus") return dataset_name::ferplus;
    if (v == "raf-db" || v == "rafdb") return dataset_name::rafdb;
    throw error(error_code::invalid_argument, "unknown dataset '" + std::string(text) + "'");
}

std::string_view to_string(prompt_kind kind) {
    switch (kind) {
    case prompt_kind::generate: return "generate";
    case prompt_kind::retry_format: return "retry_format";
    case prompt_kind::regenerate_with_candidates: return "regenerate_with_candidates";
    }
    return "?";
}

std::string_view to_string(outcome_status s) {
    switch (s) {
    case outcome_status::accepted: return "accepted";
    case outcome_status::filtered: return "filtered";
    case outcome_status::format_exhausted: return "format_exhausted";
    case outcome_status::candidates_exhausted: return "candidates_exhausted";
    case outcome_status::transport_error: return "transport_error";
    }
    return "?";
}

std::vector<manifest_row> load_generation_manifest(const std::filesystem::path& path) {
    std::vector<manifest_row> rows;
    for_each_jsonl(path, [&](std::size_t, const json& obj) {
        manifest_row r;
        r.image_id = require_string(obj, "image_id");
        r.dataset = parse_dataset_name(require_string(obj, "dataset"));
        r.split = require_string(obj, "split");
        r.gold_label = parse_label(require_string(obj, "gold_label"));
        if (auto it = obj.find("image_path"); it != obj.end() && !it->is_null()) {
            if (!it->is_string()) schema("field 'image_path' must be a string");
            r.image_path = it->get<std::string>();
        }
        r.width = require_number(obj, "width");
        r.height = require_number(obj, "height");
        if (!(r.width > 0.0) || !(r.height > 0.0)) schema("'width' and 'height' must be positive");
        rows.push_back(std::move(r));
    });
    return rows;
}

// --- mock client ------------------------------------------------------------

mock_client::mock_client(std::map<std::string, mock_behavior> behaviors, mock_behavior fallback)
    : behaviors_(std::move(behaviors)), fallback_(std::move(fallback)) {}

const mock_behavior& mock_client::behavior_for(const std::string& image_id) const {
    const auto it = behaviors_.find(image_id);
    return it == behaviors_.end() ? fallback_ : it->second;
}

std::string mock_client::assess_quality(const quality_request& request) {
    const mock_behavior& b = behavior_for(request.image.image_id);
    if (request.transport_try < b.transport_failures) {
        throw error(error_code::transport, "mock transport failure");
    }
    switch (b.quality) {
    case mock_behavior::verdict::pass:
        return R"({"suitable_for_training": true, "reason": "clear frontal face"})";
    case mock_behavior::verdict::fail:
        return R"({"suitable_for_training": false, "reason": "heavy occlusion"})";
    case mock_behavior::verdict::garbage:
        break;
    }
    return "The image looks fine to me.";
}

std::string mock_client::generate(const generation_request& request) {
    const mock_behavior& b = behavior_for(request.image.image_id);
    if (request.transport_try < b.transport_failures) {
        throw error(error_code::transport, "mock transport failure");
    }
    if (b.always_malformed || request.attempt < b.format_errors) {
        return R"({"CoT": "Global analysis without a conclusion"})";
    }
    const auto allowed = [&](expression_label l) {
        return std::find(request.candidates.begin(), request.candidates.end(), l) != request.candidates.end();
    };
    expression_label answer = b.truth;
    if (b.fixed_answer) {
        answer = *b.fixed_answer;
    } else {
        const auto wrong = std::find_if(b.wrong_first.begin(), b.wrong_first.end(), allowed);
        if (wrong != b.wrong_first.end()) {
            answer = *wrong;
        } else if (!allowed(answer) && !request.candidates.empty()) {
            answer = request.candidates.front();
        }
    }

    std::string cot = "Global analysis: the face shows a coherent overall configuration.";
    const au_ground_truth& pool = request.au_pool;
    for (std::size_t i = 0; i < pool.boxes.size(); ++i) {
        cot += " Zooming into this region.";
        if (i < pool.box_ids.size()) cot += " <AU" + std::to_string(pool.box_ids[i]) + ">";
        cot += " " + format_box_payload(pool.boxes[i]) + " Visible muscle movement here.";
    }
    cot += " Final conclusion: the observations point to ";
    cot += to_string(answer);
    cot += ".";
    return json{{"CoT", cot}, {"Answer", std::string(to_string(answer))}}.dump();
}

mock_client mock_client::from_script(const json& script, std::span<const manifest_row> manifest) {
    if (!script.is_object()) schema("mock script must be a JSON object");
    json defaults = json::object();
    json images = json::object();
    for (const auto& [key, v] : script.items()) {
        if (key == "default") defaults = v;
        else if (key == "images") images = v;
        else schema("unknown mock script field '" + key + "'");
    }
    if (!images.is_object()) schema("mock script 'images' must be an object");

    mock_behavior fallback;
    apply_behavior_json(fallback, defaults);
    std::map<std::string, mock_behavior> table;
    std::set<std::string> known;
    for (const auto& row : manifest) {
        mock_behavior b = fallback;
        b.truth = row.gold_label;
        if (auto it = images.find(row.image_id); it != images.end()) apply_behavior_json(b, *it);
        table.emplace(row.image_id, std::move(b));
        known.insert(row.image_id);
    }
    for (const auto& [id, v] : images.items()) {
        if (!known.count(id)) {
            mock_behavior b = fallback;
            apply_behavior_json(b, v);
            table.emplace(id, std::move(b));
        }
    }
    return mock_client(std::move(table), fallback);
}

// --- stages -----------------------------------------------------------------

void pipeline_config::validate() const {
    if (total_concurrency == 0 || per_worker_concurrency == 0 || worker_count == 0) {
        throw error(error_code::invalid_argument, "concurrency values must be positive");
    }
    if (!(audit_fraction >= 0.0 && audit_fraction <= 1.0)) {
        throw error(error_code::invalid_argument, "audit fraction must lie in [0, 1]");
    }
    if (!(activation_threshold >= 0.0 && activation_threshold <= 1.0)) {
        throw error(error_code::invalid_argument, "activation threshold must lie in [0, 1]");
    }
}

quality_verdict parse_quality_verdict(std::string_view raw) {
    json j;
    try {
        j = json::parse(raw);
    } catch (const json::exception&) {
        return quality_verdict::fail;
    }
    if (!j.is_object()) return quality_verdict::fail;
    const auto it = j.find("suitable_for_training");
    if (it == j.end() || !it->is_boolean()) return quality_verdict::fail;
    return it->get<bool>() ? quality_verdict::pass : quality_verdict::fail;
}

std::string trace_text_from_response(std::string_view raw) {
    json j;
    try {
        j = json::parse(raw);
    } catch (const json::exception&) {
        return std::string(raw);
    }
    if (!j.is_object()) return std::string(raw);
    const auto cot = j.find("CoT");
    const auto answer = j.find("Answer");
    if (cot == j.end() || answer == j.end() || !cot->is_string() || !answer->is_string()) {
        return std::string(raw);
    }
    static const std::regex marker(R"((<AU[0-9]{1,4}>)[ \t]*(\[[^\[\]<>]*\]))");
    const std::string think = std::regex_replace(cot->get<std::string>(), marker, "$1 <bbox>$2</bbox>");
    return "<think>" + think + "</think><answer>" + answer->get<std::string>() + "</answer>";
}

quality_verdict quality_filter(const image_ref& image, model_client& client,
                               const prompt_library& prompts, const pipeline_config& config) {
    return with_transport_retries(config, [&](std::size_t try_index) {
        quality_request req{image, prompts.quality, try_index};
        return parse_quality_verdict(client.assess_quality(req));
    });
}

generation_outcome generate_with_elimination(const image_ref& image, expression_label gold_label,
                                             const au_ground_truth& au_pool, model_client& client,
                                             const prompt_library& prompts,
                                             const pipeline_config& config) {
    generation_outcome out;
    std::vector<expression_label> candidates(all_labels.begin(), all_labels.end());

    // One call plus up to max_format_retries retries with the same inputs.
    auto obtain_valid = [&](prompt_kind first_kind) -> bool {
        const std::string prompt = render_generation_prompt(prompts, au_pool, candidates);
        for (std::size_t f = 0; f <= config.max_format_retries; ++f) {
            generation_request req;
            req.image = image;
            req.au_pool = au_pool;
            req.candidates = candidates;
            req.kind = f == 0 ? first_kind : prompt_kind::retry_format;
            req.attempt = out.attempts;
            req.prompt = prompt;
            std::string raw = with_transport_retries(config, [&](std::size_t try_index) {
                req.transport_try = try_index;
                return client.generate(req);
            });
            ++out.attempts;

            std::string text = trace_text_from_response(raw);
            reasoning_trace trace = parse_trace(text);
            const format_report report = validate_format(trace, config.format);
            out.log.push_back({req.kind, candidates, std::move(raw), report.well_formed,
                               report.well_formed ? trace.answer : std::nullopt});
            if (report.well_formed) {
                out.trace_text = std::move(text);
                out.trace = std::move(trace);
                return true;
            }
        }
        out.trace.reset();
        out.trace_text.clear();
        return false;
    };

    try {
        prompt_kind kind = prompt_kind::generate;
        for (;;) {
            if (!obtain_valid(kind)) {
                out.status = outcome_status::format_exhausted;
                out.message = "no valid format after " + std::to_string(config.max_format_retries) + " retries";
                return out;
            }
            const expression_label predicted = *out.trace->answer;
            if (predicted == gold_label) {
                out.status = outcome_status::accepted;
                return out;
            }
            const auto pos = std::find(candidates.begin(), candidates.end(), predicted);
            const bool sole_candidate = pos != candidates.end() && candidates.size() == 1;
            if (out.rounds >= label_count - 1 || sole_candidate) {
                out.status = outcome_status::candidates_exhausted;
                out.message = "candidate set exhausted after " + std::to_string(out.rounds) + " rounds";
                return out;
            }
            if (pos != candidates.end()) {
                candidates.erase(pos);
                out.elimination_path.push_back(predicted);
            }
            ++out.rounds;
            kind = prompt_kind::regenerate_with_candidates;
        }
    } catch (const error& e) {
        if (e.code() != error_code::transport) throw;
        out.status = outcome_status::transport_error;
        out.message = e.what();
        out.trace.reset();
        out.trace_text.clear();
        return out;
    }
}

// --- records ----------------------------------------------------------------

void sample_record::validate(const format_options& format) const {
    if (split != training_split) {
        throw error(error_code::leakage, "sample " + image_id + " is not from the training split");
    }
    const format_report report = validate_format(trace, format);
    if (!report.well_formed) schema("sample " + image_id + " has a malformed trace");
    if (!trace.answer || *trace.answer != gold_label) {
        schema("sample " + image_id + " does not answer its gold label");
    }
    std::set<expression_label> seen;
    for (auto l : elimination_path) {
        if (!seen.insert(l).second) schema("sample " + image_id + " eliminates a label twice");
        if (l == gold_label) schema("sample " + image_id + " eliminated its gold label");
    }
}

json sample_record::to_json() const {
    json j;
    j["image_id"] = image_id;
    j["dataset"] = std::string(to_string(dataset));
    j["split"] = split;
    j["gold_label"] = std::string(tag::to_string(gold_label));
    j["au_pool"] = ground_truth_to_json(au_pool);
    j["trace_text"] = trace_text;
    j["trace"] = trace_to_json(trace);
    j["attempts"] = attempts;
    j["elimination_path"] = labels_to_json(elimination_path);
    j["audit"] = audit;
    return j;
}

sample_record sample_record::from_json(const json& j) {
    sample_record r;
    r.image_id = require_string(j, "image_id");
    r.dataset = parse_dataset_name(require_string(j, "dataset"));
    r.split = require_string(j, "split");
    r.gold_label = parse_label(require_string(j, "gold_label"));
    r.au_pool = ground_truth_from_json(require_field(j, "au_pool"));
    r.trace_text = require_string(j, "trace_text");
    r.trace = parse_trace(r.trace_text);
    r.attempts = require_count(require_field(j, "attempts"), "attempts");
    r.elimination_path = labels_from_json(require_field(j, "elimination_path"), "elimination_path");
    if (auto it = j.find("audit"); it != j.end() && it->is_boolean()) r.audit = it->get<bool>();
    return r;
}

void write_samples(const std::filesystem::path& path, std::span<const sample_record> samples,
                   const format_options& format) {
    std::string out;
    for (const auto& s : samples) {
        s.validate(format);
        out += s.to_json().dump();
        out += '\n';
    }
    write_text_file(path, out);
}

std::vector<sample_record> read_samples(const std::filesystem::path& path) {
    std::vector<sample_record> out;
    for_each_jsonl(path, [&](std::size_t, const json& obj) { out.push_back(sample_record::from_json(obj)); });
    return out;
}

void stage_latency::add(double ms) {
    ++calls;
    total_ms += ms;
    max_ms = std::max(max_ms, ms);
}

json pipeline_stats::to_json() const {
    auto lat = [](const stage_latency& l) {
        return json{{"calls", l.calls}, {"mean_ms", l.mean_ms()}, {"max_ms", l.max_ms}, {"total_ms", l.total_ms}};
    };
    json j;
    j["input"] = input;
    j["filtered"] = filtered;
    j["accepted"] = accepted;
    j["format_exhausted"] = format_exhausted;
    j["candidates_exhausted"] = candidates_exhausted;
    j["transport_failed"] = transport_failed;
    j["generation_calls"] = generation_calls;
    j["max_format_retries"] = max_format_retries;
    j["audit_sampled"] = audit_sampled;
    j["latency"] = json{{"quality", lat(quality)}, {"generation", lat(generation)}, {"total", lat(total)}};
    return j;
}

// --- pipeline ---------------------------------------------------------------

namespace {

struct job {
    std::size_t index = 0;
};

struct job_result {
    std::size_t index = 0;
    outcome_status status = outcome_status::filtered;
    generation_outcome generation;
    std::string message;
    std::optional<double> quality_ms;
    std::optional<double> generation_ms;
    double total_ms = 0.0;
};

} // namespace

pipeline_result run_pipeline(std::span<const manifest_row> manifest,
                             std::span<const detection_record> detections,
                             const au_catalog& catalog, const pipeline_config& config,
                             model_client& quality_client, model_client& generation_client,
                             const prompt_library& prompts) {
    config.validate();

    // All validation happens before the first client call.
    std::unordered_map<std::string, const detection_record*> by_id;
    for (const auto& d : detections) {
        if (!by_id.emplace(d.image_id, &d).second) schema("duplicate detector record for " + d.image_id);
    }
    std::set<std::string> seen;
    std::vector<au_ground_truth> pools;
    pools.reserve(manifest.size());
    for (const auto& row : manifest) {
        if (row.split != training_split) {
            throw error(error_code::leakage,
                        "image " + row.image_id + " belongs to split '" + row.split + "'; only '" +
                            std::string(training_split) + "' may be used for generation");
        }
        if (!seen.insert(row.image_id).second) schema("duplicate manifest entry " + row.image_id);
        const auto it = by_id.find(row.image_id);
        if (it == by_id.end()) schema("manifest/detector mismatch: no detector output for " + row.image_id);
        const detection_record& det = *it->second;
        if (std::abs(det.width - row.width) > 1e-9 || std::abs(det.height - row.height) > 1e-9) {
            schema("manifest/detector mismatch: dimensions differ for " + row.image_id);
        }
        detection_record resolved = det;
        resolve_boxes(resolved, catalog);
        pools.push_back(top_k_activated(resolved.detections, config.top_k, config.activation_threshold));
    }
    if (by_id.size() != manifest.size()) {
        for (const auto& d : detections) {
            if (!seen.count(d.image_id)) schema("manifest/detector mismatch: " + d.image_id + " is not in the manifest");
        }
    }

    pipeline_result result;
    result.stats.input = manifest.size();
    result.stats.max_format_retries = config.max_format_retries;
    const std::size_t n = manifest.size();
    if (n == 0) return result;

    const std::size_t in_flight = std::min({config.total_concurrency,
                                            config.worker_count * config.per_worker_concurrency, n});
    bounded_queue<job> jobs(config.total_concurrency);
    bounded_queue<job_result> results(config.total_concurrency);

    auto process = [&](std::size_t i) {
        const manifest_row& row = manifest[i];
        const image_ref image{row.image_id, row.dataset, row.image_path};
        job_result r;
        r.index = i;
        const auto start = clock_type::now();
        try {
            const auto q_start = clock_type::now();
            const quality_verdict verdict = quality_filter(image, quality_client, prompts, config);
            r.quality_ms = elapsed_ms(q_start);
            if (verdict == quality_verdict::fail) {
                r.status = outcome_status::filtered;
            } else {
                const auto g_start = clock_type::now();
                r.generation = generate_with_elimination(image, row.gold_label, pools[i], generation_client,
                                                         prompts, config);
                r.generation_ms = elapsed_ms(g_start);
                r.status = r.generation.status;
                r.message = r.generation.message;
            }
        } catch (const error& e) {
            if (e.code() != error_code::transport) throw;
            r.status = outcome_status::transport_error;
            r.message = e.what();
        }
        r.total_ms = elapsed_ms(start);
        return r;
    };

    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    workers.reserve(in_flight);
    for (std::size_t t = 0; t < in_flight; ++t) {
        workers.emplace_back([&] {
            while (auto j = jobs.pop()) {
                try {
                    results.push(process(j->index));
                } catch (...) {
                    {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                    job_result r;
                    r.index = j->index;
                    r.status = outcome_status::transport_error;
                    r.message = "aborted";
                    results.push(std::move(r));
                }
            }
        });
    }
    std::thread producer([&] {
        for (std::size_t i = 0; i < n; ++i) {
            if (!jobs.push(job{i})) break;
        }
        jobs.close();
    });

    // Collector: the only place results and stats are mutated.
    std::vector<std::optional<job_result>> collected(n);
    for (std::size_t received = 0; received < n; ++received) {
        auto r = results.pop();
        if (!r) break;
        pipeline_stats& s = result.stats;
        if (r->quality_ms) s.quality.add(*r->quality_ms);
        if (r->generation_ms) s.generation.add(*r->generation_ms);
        s.total.add(r->total_ms);
        s.generation_calls += r->generation.attempts;
        switch (r->status) {
        case outcome_status::accepted: ++s.accepted; break;
        case outcome_status::filtered: ++s.filtered; break;
        case outcome_status::format_exhausted: ++s.format_exhausted; break;
        case outcome_status::candidates_exhausted: ++s.candidates_exhausted; break;
        case outcome_status::transport_error: ++s.transport_failed; break;
        }
        const std::size_t idx = r->index;
        collected[idx] = std::move(*r);
    }
    producer.join();
    results.close();
    for (auto& w : workers) w.join();
    if (failure) std::rethrow_exception(failure);

    for (std::size_t i = 0; i < n; ++i) {
        job_result& r = *collected[i];
        const manifest_row& row = manifest[i];
        result.outcomes.push_back({row.image_id, r.status, r.generation.attempts, r.generation.elimination_path,
                                   r.message});
        if (r.status != outcome_status::accepted) continue;
        sample_record rec;
        rec.image_id = row.image_id;
        rec.dataset = row.dataset;
        rec.split = row.split;
        rec.gold_label = row.gold_label;
        rec.au_pool = pools[i];
        rec.trace_text = std::move(r.generation.trace_text);
        rec.trace = std::move(*r.generation.trace);
        rec.attempts = r.generation.attempts;
        rec.elimination_path = std::move(r.generation.elimination_path);
        rec.audit = audit_selected(row.image_id, config.seed, config.audit_fraction);
        if (rec.audit) ++result.stats.audit_sampled;
        rec.validate(config.format);
        result.samples.push_back(std::move(rec));
    }
    return result;
}

} // namespace tag
