#include "tag/config.hpp"

#include "tag/au_mapping.hpp"
#include "tag/error.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

namespace tag {

namespace {

[[noreturn]] void invalid(const std::string& what) {
    throw error(error_code::invalid_argument, what);
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

double to_double(std::string_view key, std::string_view v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
        invalid("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
    }
    return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        invalid("'" + std::string(key) + "' expects a non-negative integer, got '" + std::string(v) + "'");
    }
    return out;
}

bool to_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    invalid("'" + std::string(key) + "' expects true or false, got '" + std::string(v) + "'");
}

std::string num(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

struct field {
    std::string key;
    std::function<void(run_config&, std::string_view)> set;
    std::function<json(const run_config&)> get;
};

const std::vector<field>& fields() {
    static const std::vector<field> table = [] {
        std::vector<field> f;
#define TAG_DOUBLE(KEY, EXPR)                                                                   \
    f.push_back({KEY, [](run_config& c, std::string_view v) { c.EXPR = to_double(KEY, v); }, \
                 [](const run_config& c) { return json(c.EXPR); }})
#define TAG_SIZE(KEY, EXPR)                                                                                     \
    f.push_back({KEY, [](run_config& c, std::string_view v) { c.EXPR = static_cast<std::size_t>(to_u64(KEY, v)); }, \
                 [](const run_config& c) { return json(c.EXPR); }})
#define TAG_BOOL(KEY, EXPR)                                                                 \
    f.push_back({KEY, [](run_config& c, std::string_view v) { c.EXPR = to_bool(KEY, v); }, \
                 [](const run_config& c) { return json(c.EXPR); }})
#define TAG_STRING(KEY, EXPR)                                                                 \
    f.push_back({KEY, [](run_config& c, std::string_view v) { c.EXPR = std::string(v); }, \
                 [](const run_config& c) { return json(c.EXPR); }})

        TAG_DOUBLE("reward.format_bonus", reward.format_bonus);
        f.push_back({"reward.au_mode",
                     [](run_config& c, std::string_view v) { c.reward.au_mode = parse_au_reward_mode(v); },
                     [](const run_config& c) { return json(std::string(to_string(c.reward.au_mode))); }});
        TAG_BOOL("reward.include_au", reward.include_au);
        TAG_SIZE("reward.max_boxes", reward.format.max_boxes);
        TAG_BOOL("reward.allow_outer_text", reward.format.allow_outer_text);

        TAG_SIZE("grpo.group_size", grpo.group_size);
        TAG_SIZE("grpo.rollouts_per_prompt", grpo.rollouts_per_prompt);
        TAG_DOUBLE("grpo.clip_epsilon", grpo.clip_epsilon);
        TAG_DOUBLE("grpo.kl_beta", grpo.kl_beta);
        TAG_DOUBLE("grpo.learning_rate", grpo.learning_rate);
        TAG_DOUBLE("grpo.reference_learning_rate", grpo.reference_learning_rate);
        TAG_SIZE("grpo.inner_steps", grpo.inner_steps);
        TAG_SIZE("grpo.steps", sim_steps);

        TAG_SIZE("pipeline.total_concurrency", pipeline.total_concurrency);
        TAG_SIZE("pipeline.per_worker_concurrency", pipeline.per_worker_concurrency);
        TAG_SIZE("pipeline.worker_count", pipeline.worker_count);
        TAG_SIZE("pipeline.max_format_retries", pipeline.max_format_retries);
        TAG_SIZE("pipeline.transport_retries", pipeline.transport_retries);
        f.push_back({"pipeline.transport_backoff_ms",
                     [](run_config& c, std::string_view v) {
                         c.pipeline.transport_backoff =
                             std::chrono::milliseconds(to_u64("pipeline.transport_backoff_ms", v));
                     },
                     [](const run_config& c) { return json(c.pipeline.transport_backoff.count()); }});
        TAG_SIZE("pipeline.top_k", pipeline.top_k);
        TAG_DOUBLE("pipeline.activation_threshold", pipeline.activation_threshold);
        TAG_DOUBLE("pipeline.audit_fraction", pipeline.audit_fraction);

        TAG_STRING("http.base_url", http.base_url);
        TAG_STRING("http.path", http.path);
        TAG_STRING("http.model", http.model);
        TAG_STRING("http.token_env", http.token_env);
        TAG_DOUBLE("http.temperature", http.temperature);
        TAG_SIZE("http.max_tokens", http.max_tokens);
        f.push_back({"http.timeout_s",
                     [](run_config& c, std::string_view v) {
                         c.http.timeout = std::chrono::seconds(to_u64("http.timeout_s", v));
                     },
                     [](const run_config& c) { return json(c.http.timeout.count()); }});

        TAG_STRING("paths.catalog", catalog_path);
        TAG_STRING("paths.prompts", prompt_dir);
        f.push_back({"seed",
                     [](run_config& c, std::string_view v) {
                         c.seed = to_u64("seed", v);
                         c.pipeline.seed = c.seed;
                     },
                     [](const run_config& c) { return json(c.seed); }});
        TAG_SIZE("threads", threads);
#undef TAG_DOUBLE
#undef TAG_SIZE
#undef TAG_BOOL
#undef TAG_STRING
        return f;
    }();
    return table;
}

const field* find_field(std::string_view key) {
    for (const auto& f : fields()) {
        if (f.key == key) return &f;
    }
    return nullptr;
}

std::vector<bounding_box> boxes_from(const json& j, std::string_view where) {
    if (!j.is_array()) invalid("'" + std::string(where) + "' must be an array of boxes");
    std::vector<bounding_box> out;
    for (const auto& b : j) out.push_back(box_from_json(b, where));
    return out;
}

std::set<int> ids_from(const json& j, std::string_view where) {
    if (!j.is_array()) invalid("'" + std::string(where) + "' must be an array of AU ids");
    std::set<int> out;
    for (const auto& v : j) out.insert(au_id_from_json(v, where));
    return out;
}

} // namespace

run_config::run_config()
    : catalog_path(default_catalog_path().string()), prompt_dir(default_prompt_dir().string()) {}

const std::vector<std::string>& run_config::keys() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> out;
        for (const auto& f : fields()) out.push_back(f.key);
        return out;
    }();
    return k;
}

void run_config::set(std::string_view key, std::string_view value) {
    const field* f = find_field(trim(key));
    if (!f) invalid("unknown config key '" + std::string(key) + "'");
    f->set(*this, trim(value));
}

void run_config::load_file(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        const std::string where = path.string() + ":" + std::to_string(number) + ": ";
        if (eq == std::string::npos) invalid(where + "expected 'key = value'");
        try {
            set(line.substr(0, eq), line.substr(eq + 1));
        } catch (const error& e) {
            throw error(e.code(), where + e.what());
        }
    }
}

void run_config::validate() const {
    if (!(reward.format_bonus >= 0.0)) invalid("reward.format_bonus must be non-negative");
    if (reward.format.max_boxes == 0) invalid("reward.max_boxes must be positive");
    grpo.validate();
    pipeline.validate();
    if (threads == 0) invalid("threads must be positive");
}

json run_config::to_json() const {
    json j = json::object();
    for (const auto& f : fields()) j[f.key] = f.get(*this);
    return j;
}

std::string run_config::to_text() const {
    std::string out;
    for (const auto& f : fields()) {
        const json v = f.get(*this);
        out += f.key + " = ";
        if (v.is_string()) out += v.get<std::string>();
        else if (v.is_number_float()) out += num(v.get<double>());
        else out += v.dump();
        out += "\n";
    }
    return out;
}

std::string toolkit_version() {
    return TAG_VERSION;
}

toy_env toy_env_from_json(const json& j) {
    if (!j.is_object()) invalid("environment must be a JSON object");
    toy_env env;
    const json& choices = require_field(j, "box_choices");
    if (!choices.is_array()) invalid("'box_choices' must be an array");
    for (const auto& c : choices) {
        if (!c.is_object()) invalid("'box_choices' entries must be objects");
        box_choice bc;
        bc.boxes = boxes_from(require_field(c, "boxes"), "box_choices.boxes");
        if (auto it = c.find("au_ids"); it != c.end()) bc.au_ids = ids_from(*it, "box_choices.au_ids");
        env.box_choices.push_back(std::move(bc));
    }
    if (auto it = j.find("labels"); it != j.end()) {
        if (!it->is_array()) invalid("'labels' must be an array");
        env.labels.clear();
        for (const auto& l : *it) {
            if (!l.is_string()) invalid("'labels' must hold strings");
            env.labels.push_back(parse_label(l.get<std::string>()));
        }
    }
    const json& prompts = require_field(j, "prompts");
    if (!prompts.is_array()) invalid("'prompts' must be an array");
    for (const auto& p : prompts) {
        if (!p.is_object()) invalid("'prompts' entries must be objects");
        toy_prompt tp;
        tp.id = require_string(p, "id");
        tp.gold_label = parse_label(require_string(p, "gold_label"));
        if (auto it = p.find("gold_au"); it != p.end() && !it->is_null()) {
            if (auto b = it->find("boxes"); b != it->end()) tp.gold_au.boxes = boxes_from(*b, "gold_au.boxes");
            if (auto a = it->find("au_ids"); a != it->end()) tp.gold_au.au_ids = ids_from(*a, "gold_au.au_ids");
            if (auto a = it->find("box_ids"); a != it->end()) {
                const auto ids = ids_from(*a, "gold_au.box_ids");
                if (a->size() != tp.gold_au.boxes.size()) invalid("'gold_au.box_ids' must parallel 'gold_au.boxes'");
                for (const auto& v : *a) tp.gold_au.box_ids.push_back(v.get<int>());
            }
        }
        if (auto it = p.find("initial_logits"); it != p.end() && !it->is_null()) {
            if (!it->is_array()) invalid("'initial_logits' must be an array");
            std::vector<double> logits;
            for (const auto& v : *it) {
                if (v.is_number()) logits.push_back(v.get<double>());
                else if (v.is_string() && v.get<std::string>() == "-inf") logits.push_back(-HUGE_VAL);
                else invalid("'initial_logits' entries must be numbers or \"-inf\"");
            }
            tp.initial_logits = std::move(logits);
        }
        env.prompts.push_back(std::move(tp));
    }
    env.validate();
    return env;
}

json toy_env_to_json(const toy_env& env) {
    json choices = json::array();
    for (const auto& c : env.box_choices) {
        json boxes = json::array();
        for (const auto& b : c.boxes) boxes.push_back(box_to_json(b));
        choices.push_back({{"boxes", std::move(boxes)}, {"au_ids", c.au_ids}});
    }
    json labels = json::array();
    for (auto l : env.labels) labels.push_back(std::string(to_string(l)));
    json prompts = json::array();
    for (const auto& p : env.prompts) {
        json jp{{"id", p.id}, {"gold_label", std::string(to_string(p.gold_label))},
                {"gold_au", ground_truth_to_json(p.gold_au)}};
        if (p.initial_logits) {
            json logits = json::array();
            for (double v : *p.initial_logits) logits.push_back(std::isinf(v) ? json("-inf") : json(v));
            jp["initial_logits"] = std::move(logits);
        }
        prompts.push_back(std::move(jp));
    }
    return json{{"box_choices", std::move(choices)}, {"labels", std::move(labels)}, {"prompts", std::move(prompts)}};
}

} // namespace tag
