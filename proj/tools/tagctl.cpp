// tagctl: command-line front end for the tag toolkit.

#include "tag/au_mapping.hpp"
#include "tag/config.hpp"
#include "tag/datagen.hpp"
#include "tag/error.hpp"
#include "tag/eval.hpp"
#include "tag/grpo.hpp"
#include "tag/http_client.hpp"
#include "tag/json_io.hpp"
#include "tag/report.hpp"
#include "tag/reward.hpp"
#include "tag/trace_grammar.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

namespace {

using tag::json;

struct common_options {
    std::string config_file;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
};

// Values given through dedicated flags; applied after the file and --set.
std::vector<std::pair<std::string, std::string>> flag_overrides;

void override_with(CLI::Option* opt, std::string key) {
    opt->each([key = std::move(key)](const std::string& v) { flag_overrides.emplace_back(key, v); });
}

tag::run_config effective_config(const common_options& common) {
    tag::run_config cfg;
    if (!common.config_file.empty()) cfg.load_file(common.config_file);
    for (const auto& s : common.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw tag::error(tag::error_code::invalid_argument, "--set expects key=value, got '" + s + "'");
        }
        cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [k, v] : flag_overrides) cfg.set(k, v);
    if (common.seed) cfg.set("seed", std::to_string(*common.seed));
    if (common.threads) cfg.set("threads", std::to_string(*common.threads));
    cfg.validate();
    return cfg;
}

json meta_for(const std::string& command, const tag::run_config& cfg) {
    return json{{"tool", "tagctl"},
                {"version", tag::toolkit_version()},
                {"command", command},
                {"config", cfg.to_json()}};
}

std::string read_input(const std::string& path) {
    if (path.empty() || path == "-") {
        return std::string(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());
    }
    return tag::read_text_file(path);
}

void write_output(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
        std::cout << content;
        std::cout.flush();
        return;
    }
    tag::write_text_file(path, content);
}

// JSONL and CSV have no room for a header object, so their metadata goes
// next to them in <path>.meta.json.
void write_sidecar(const std::string& path, const json& meta) {
    if (path.empty() || path == "-") return;
    tag::write_text_file(path + ".meta.json", meta.dump(2) + "\n");
}

tag::au_ground_truth gold_au_from(const json& row) {
    tag::au_ground_truth gt;
    const auto it = row.find("gold_au");
    if (it == row.end() || it->is_null()) return gt;
    if (!it->is_object()) throw tag::error(tag::error_code::schema_violation, "'gold_au' must be an object");
    if (auto b = it->find("boxes"); b != it->end()) {
        if (!b->is_array()) throw tag::error(tag::error_code::schema_violation, "'gold_au.boxes' must be an array");
        for (const auto& box : *b) gt.boxes.push_back(tag::box_from_json(box, "gold_au.boxes"));
    }
    if (auto a = it->find("au_ids"); a != it->end()) {
        if (!a->is_array()) throw tag::error(tag::error_code::schema_violation, "'gold_au.au_ids' must be an array");
        for (const auto& id : *a) gt.au_ids.insert(tag::au_id_from_json(id, "gold_au.au_ids"));
    }
    return gt;
}

std::string trace_field(const json& row) {
    if (auto it = row.find("trace_text"); it != row.end() && it->is_string()) return it->get<std::string>();
    if (auto it = row.find("raw_output"); it != row.end() && it->is_string()) return it->get<std::string>();
    throw tag::error(tag::error_code::schema_violation, "missing string field 'trace_text'");
}

// --- parse ------------------------------------------------------------------

struct parse_options {
    std::string input;
    std::string output;
    bool batch = false;
};

int run_parse(const parse_options& o, const tag::run_config& cfg) {
    const tag::format_options& fmt = cfg.reward.format;
    if (!o.batch) {
        const tag::reasoning_trace trace = tag::parse_trace(read_input(o.input));
        const tag::format_report report = tag::validate_format(trace, fmt);
        json out{{"meta", meta_for("parse", cfg)},
                 {"trace", tag::trace_to_json(trace)},
                 {"report", tag::report_to_json(report)}};
        write_output(o.output, out.dump(2) + "\n");
        return report.well_formed ? 0 : 1;
    }
    if (o.input.empty() || o.input == "-") {
        throw tag::error(tag::error_code::invalid_argument, "--batch needs --input FILE");
    }
    std::string out;
    bool all_ok = true;
    tag::for_each_jsonl(o.input, [&](std::size_t line, const json& row) {
        const tag::reasoning_trace trace = tag::parse_trace(trace_field(row));
        const tag::format_report report = tag::validate_format(trace, fmt);
        all_ok = all_ok && report.well_formed;
        json j;
        j["id"] = row.contains("id") ? row["id"] : json(line);
        j["trace"] = tag::trace_to_json(trace);
        j["report"] = tag::report_to_json(report);
        out += j.dump() + "\n";
    });
    write_output(o.output, out);
    write_sidecar(o.output, meta_for("parse", cfg));
    return all_ok ? 0 : 1;
}

// --- reward -----------------------------------------------------------------

struct reward_options {
    std::string input;
    std::string output;
};

int run_reward(const reward_options& o, const tag::run_config& cfg) {
    std::vector<tag::reward_request> requests;
    std::vector<json> ids;
    tag::for_each_jsonl(o.input, [&](std::size_t line, const json& row) {
        tag::reward_request r;
        r.trace_text = trace_field(row);
        r.gold_label = tag::parse_label(tag::require_string(row, "gold_label"));
        r.gold_au = gold_au_from(row);
        ids.push_back(row.contains("id") ? row["id"] : json(line));
        requests.push_back(std::move(r));
    });
    const auto scores = tag::score_batch(requests, cfg.reward, cfg.threads);
    std::string out;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        json j{{"id", ids[i]}};
        const json b = tag::breakdown_to_json(scores[i]);
        for (const auto& [k, v] : b.items()) j[k] = v;
        out += j.dump() + "\n";
    }
    write_output(o.output, out);
    write_sidecar(o.output, meta_for("reward", cfg));
    return 0;
}

// --- grpo-sim ---------------------------------------------------------------

struct sim_options {
    std::string env;
    std::string mode = "answer_plus_au";
    std::string output;
    std::string summary;
};

std::string curve_csv(const tag::training_curve& curve) {
    std::string out = "step,mean_reward,accuracy,mean_au_iou,expected_accuracy,expected_au_iou\n";
    char buf[256];
    for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", p.step, p.mean_reward, p.accuracy,
                      p.mean_au_iou, p.expected_accuracy, p.expected_au_iou);
        out += buf;
    }
    return out;
}

json point_json(const tag::training_point& p) {
    return json{{"step", p.step},
                {"mean_reward", p.mean_reward},
                {"accuracy", p.accuracy},
                {"mean_au_iou", p.mean_au_iou},
                {"expected_accuracy", p.expected_accuracy},
                {"expected_au_iou", p.expected_au_iou}};
}

int run_grpo_sim(const sim_options& o, const tag::run_config& cfg) {
    const tag::toy_env env =
        o.env.empty() ? tag::shortcut_env() : tag::toy_env_from_json(json::parse(tag::read_text_file(o.env)));
    const tag::reward_mode mode = tag::parse_reward_mode(o.mode);
    tag::toy_training_options opts;
    opts.steps = cfg.sim_steps;
    opts.reward = cfg.reward;
    const tag::training_curve curve = tag::run_toy_training(env, mode, cfg.grpo, cfg.seed, opts);

    json meta = meta_for("grpo-sim", cfg);
    meta["reward_mode"] = std::string(tag::to_string(mode));
    meta["env"] = o.env.empty() ? json("shortcut") : json(o.env);
    write_output(o.output, curve_csv(curve));
    write_sidecar(o.output, meta);

    json summary{{"meta", meta}, {"initial", point_json(curve.initial())}, {"final", point_json(curve.final())}};
    if (!o.summary.empty()) {
        tag::write_text_file(o.summary, summary.dump(2) + "\n");
    } else if (!o.output.empty() && o.output != "-") {
        std::cout << summary.dump(2) << "\n";
    }
    return 0;
}

// --- datagen ----------------------------------------------------------------

struct datagen_options {
    std::string manifest;
    std::string detections;
    std::string output;
    std::string stats;
    std::string client = "mock";
    std::string mock_script;
    std::string outcomes;
};

int run_datagen(const datagen_options& o, const tag::run_config& cfg) {
    const tag::au_catalog catalog = tag::load_catalog(cfg.catalog_path);
    const auto manifest = tag::load_generation_manifest(o.manifest);
    const auto detections = tag::load_detections(o.detections, &catalog);
    const auto prompts = tag::prompt_library::load(cfg.prompt_dir);

    std::unique_ptr<tag::model_client> client;
    if (o.client == "mock") {
        const json script = o.mock_script.empty() ? json::object() : json::parse(tag::read_text_file(o.mock_script));
        client = std::make_unique<tag::mock_client>(tag::mock_client::from_script(script, manifest));
    } else if (o.client == "http") {
        client = std::make_unique<tag::http_model_client>(cfg.http);
    } else {
        throw tag::error(tag::error_code::invalid_argument, "--client must be mock or http");
    }

    const tag::pipeline_result result =
        tag::run_pipeline(manifest, detections, catalog, cfg.pipeline, *client, *client, prompts);
    tag::write_samples(o.output, result.samples, cfg.pipeline.format);

    json meta = meta_for("datagen", cfg);
    meta["client"] = o.client;
    write_sidecar(o.output, meta);

    if (!o.outcomes.empty()) {
        std::string lines;
        for (const auto& oc : result.outcomes) {
            json path = json::array();
            for (auto l : oc.elimination_path) path.push_back(std::string(tag::to_string(l)));
            lines += json{{"image_id", oc.image_id},
                          {"status", std::string(tag::to_string(oc.status))},
                          {"attempts", oc.attempts},
                          {"elimination_path", std::move(path)},
                          {"message", oc.message}}
                         .dump() +
                     "\n";
        }
        tag::write_text_file(o.outcomes, lines);
    }
    const json stats{{"meta", meta}, {"stats", result.stats.to_json()}};
    if (!o.stats.empty()) tag::write_text_file(o.stats, stats.dump(2) + "\n");
    else std::cout << stats.dump(2) << "\n";
    return 0;
}

// --- eval -------------------------------------------------------------------

struct eval_options {
    std::string manifest;
    std::string predictions;
    std::string dataset;
    std::optional<std::size_t> declared_size;
    bool known_size = false;
    std::vector<std::string> detectors;
    std::string input;
    std::string format = "json";
    std::string output;
};

void emit(const tag::report& r, const eval_options& o) {
    const tag::report_format fmt = tag::parse_report_format(o.format);
    write_output(o.output, tag::render_report(r, fmt));
    if (fmt == tag::report_format::csv) write_sidecar(o.output, r.meta);
}

int run_eval_predictions(const eval_options& o, const tag::run_config& cfg) {
    std::optional<std::size_t> declared = o.declared_size;
    if (o.known_size) {
        declared = tag::known_test_size(o.dataset);
        if (!declared) {
            throw tag::error(tag::error_code::invalid_argument, "no known test-set size for '" + o.dataset + "'");
        }
    }
    const auto manifest = tag::load_eval_manifest(o.manifest, o.dataset, declared);
    const auto preds = tag::load_predictions(o.predictions);

    tag::report r;
    r.meta = meta_for("eval predictions", cfg);
    const auto acc = tag::evaluate_accuracy(preds, manifest);
    r.meta["missing_predictions"] = acc.missing_ids;
    r.tables.push_back(tag::accuracy_table(manifest.name, acc));
    if (!o.detectors.empty()) {
        std::vector<tag::grounding_result> g;
        for (const auto& d : o.detectors) g.push_back(tag::evaluate_grounding(preds, manifest, d, cfg.threads));
        r.meta["grounding_convention"] = std::string(tag::grounding_convention);
        r.tables.push_back(tag::grounding_table(g));
    }
    emit(r, o);
    return 0;
}

int run_eval_preferences(const eval_options& o, const tag::run_config& cfg) {
    const auto records = tag::load_preferences_csv(o.input);
    tag::report r;
    r.meta = meta_for("eval preferences", cfg);
    r.meta["aggregation"] = "per-judge shares averaged over judges";
    r.tables.push_back(tag::preference_table(tag::aggregate_preferences(records)));
    emit(r, o);
    return 0;
}

int run_eval_rubric(const eval_options& o, const tag::run_config& cfg) {
    const auto scores = tag::load_rubric_csv(o.input);
    tag::report r;
    r.meta = meta_for("eval rubric", cfg);
    r.tables.push_back(tag::rubric_table(tag::aggregate_rubric(scores)));
    emit(r, o);
    return 0;
}

int run_eval_cross(const eval_options& o, const tag::run_config& cfg) {
    const auto input = tag::cross_dataset_input::from_json(json::parse(tag::read_text_file(o.input)));
    tag::report r;
    r.meta = meta_for("eval cross-dataset", cfg);
    r.tables.push_back(tag::cross_dataset_report_table(tag::cross_dataset_report(input)));
    emit(r, o);
    return 0;
}

void add_report_flags(CLI::App* cmd, eval_options& o) {
    cmd->add_option("--format", o.format, "json, csv or markdown")
        ->check(CLI::IsMember({"json", "csv", "markdown", "md"}));
    cmd->add_option("-o,--output", o.output, "Report path (default stdout)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tagctl: AU-grounded reasoning toolkit"};
    app.set_version_flag("--version", tag::toolkit_version());
    app.require_subcommand(1);
    app.fallthrough();

    common_options common;
    app.add_option("--config", common.config_file, "key = value config file")->check(CLI::ExistingFile);
    app.add_option("--set", common.sets, "Override one config key (key=value); repeatable");
    app.add_option("--seed", common.seed, "Random seed");
    app.add_option("--threads", common.threads, "Worker threads for batch scoring");

    // parse
    parse_options parse_o;
    auto* parse_cmd = app.add_subcommand("parse", "Parse a trace and report format violations");
    parse_cmd->add_option("-i,--input", parse_o.input, "Trace file, or JSONL with --batch (default stdin)");
    parse_cmd->add_option("-o,--output", parse_o.output, "Output path (default stdout)");
    parse_cmd->add_flag("--batch", parse_o.batch, "Input is JSONL of {id?, trace_text}");
    override_with(parse_cmd->add_option("--max-boxes", "Maximum <bbox> spans"), "reward.max_boxes");
    override_with(parse_cmd->add_option("--allow-outer-text", "Tolerate text outside the tags (true|false)"),
                  "reward.allow_outer_text");

    // reward
    reward_options reward_o;
    auto* reward_cmd = app.add_subcommand("reward", "Score predictions against gold labels and AU boxes");
    reward_cmd->add_option("-i,--input", reward_o.input, "JSONL of {id?, trace_text, gold_label, gold_au?}")
        ->required();
    reward_cmd->add_option("-o,--output", reward_o.output, "Output JSONL (default stdout)");
    override_with(reward_cmd->add_option("--au-reward", "Grounding reward: iou or f1")
                      ->check(CLI::IsMember({"iou", "f1"})),
                  "reward.au_mode");
    override_with(reward_cmd->add_option("--format-bonus", "Format reward for a well-formed trace"),
                  "reward.format_bonus");
    override_with(reward_cmd->add_option("--include-au", "Include the grounding term (true|false)"),
                  "reward.include_au");

    // grpo-sim
    sim_options sim_o;
    auto* sim_cmd = app.add_subcommand("grpo-sim", "Train the toy policy and write its learning curve");
    sim_cmd->add_option("--env", sim_o.env, "Environment JSON (default: built-in shortcut env)");
    sim_cmd->add_option("--reward-mode", sim_o.mode, "answer_only or answer_plus_au")
        ->check(CLI::IsMember({"answer_only", "answer_plus_au"}));
    sim_cmd->add_option("-o,--output", sim_o.output, "Curve CSV (default stdout)");
    sim_cmd->add_option("--summary", sim_o.summary, "Summary JSON path");
    override_with(sim_cmd->add_option("--steps", "Training steps"), "grpo.steps");
    override_with(sim_cmd->add_option("--group-size", "Rollouts per group"), "grpo.group_size");
    override_with(sim_cmd->add_option("--rollouts", "Rollouts per prompt and step"), "grpo.rollouts_per_prompt");
    override_with(sim_cmd->add_option("--learning-rate", "Toy step size"), "grpo.learning_rate");
    override_with(sim_cmd->add_option("--kl-beta", "KL coefficient"), "grpo.kl_beta");
    override_with(sim_cmd->add_option("--clip-epsilon", "Ratio clip"), "grpo.clip_epsilon");

    // datagen
    datagen_options gen_o;
    auto* gen_cmd = app.add_subcommand("datagen", "Generate AU-grounded training traces");
    gen_cmd->add_option("--manifest", gen_o.manifest, "Training manifest JSONL")->required();
    gen_cmd->add_option("--detections", gen_o.detections, "Detector output JSONL")->required();
    gen_cmd->add_option("-o,--output", gen_o.output, "Dataset JSONL")->required();
    gen_cmd->add_option("--stats", gen_o.stats, "Stats JSON (default stdout)");
    gen_cmd->add_option("--outcomes", gen_o.outcomes, "Per-image outcome JSONL");
    gen_cmd->add_option("--client", gen_o.client, "mock or http")->check(CLI::IsMember({"mock", "http"}));
    gen_cmd->add_option("--mock-script", gen_o.mock_script, "Mock behaviour script JSON");
    override_with(gen_cmd->add_option("--workers", "Worker count"), "pipeline.worker_count");
    override_with(gen_cmd->add_option("--per-worker", "In-flight requests per worker"),
                  "pipeline.per_worker_concurrency");
    override_with(gen_cmd->add_option("--concurrency", "Total in-flight requests"), "pipeline.total_concurrency");
    override_with(gen_cmd->add_option("--max-format-retries", "Format retries per round"),
                  "pipeline.max_format_retries");
    override_with(gen_cmd->add_option("--audit-fraction", "Share of accepted samples flagged for audit"),
                  "pipeline.audit_fraction");
    override_with(gen_cmd->add_option("--base-url", "HTTP endpoint base URL"), "http.base_url");
    override_with(gen_cmd->add_option("--model", "HTTP model name"), "http.model");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluation metrics and report aggregation");
    eval_cmd->require_subcommand(1);
    eval_options eval_o;
    auto* ev_pred = eval_cmd->add_subcommand("predictions", "Accuracy and AU IoU of model outputs");
    ev_pred->add_option("--manifest", eval_o.manifest, "Evaluation manifest JSONL")->required();
    ev_pred->add_option("--predictions", eval_o.predictions, "Predictions JSONL")->required();
    ev_pred->add_option("--dataset", eval_o.dataset, "Dataset name");
    auto* declared = ev_pred->add_option("--declared-size", eval_o.declared_size, "Expected row count");
    ev_pred->add_flag("--expect-known-size", eval_o.known_size, "Check the published test-set size of --dataset")
        ->excludes(declared);
    ev_pred->add_option("--detector", eval_o.detectors, "Detector box set for AU IoU; repeatable");
    add_report_flags(ev_pred, eval_o);
    auto* ev_pref = eval_cmd->add_subcommand("preferences", "Aggregate A/B preference votes");
    ev_pref->add_option("-i,--input", eval_o.input, "CSV item_id,judge_id,vote")->required();
    add_report_flags(ev_pref, eval_o);
    auto* ev_rub = eval_cmd->add_subcommand("rubric", "Aggregate rubric scores");
    ev_rub->add_option("-i,--input", eval_o.input, "Rubric CSV")->required();
    add_report_flags(ev_rub, eval_o);
    auto* ev_cross = eval_cmd->add_subcommand("cross-dataset", "Cross-dataset accuracy and deltas");
    ev_cross->add_option("-i,--input", eval_o.input, "JSON {baseline, runs}")->required();
    add_report_flags(ev_cross, eval_o);

    // config
    auto* config_cmd = app.add_subcommand("config", "Print the effective configuration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const tag::run_config cfg = effective_config(common);
        if (*parse_cmd) return run_parse(parse_o, cfg);
        if (*reward_cmd) return run_reward(reward_o, cfg);
        if (*sim_cmd) return run_grpo_sim(sim_o, cfg);
        if (*gen_cmd) return run_datagen(gen_o, cfg);
        if (*ev_pred) return run_eval_predictions(eval_o, cfg);
        if (*ev_pref) return run_eval_preferences(eval_o, cfg);
        if (*ev_rub) return run_eval_rubric(eval_o, cfg);
        if (*ev_cross) return run_eval_cross(eval_o, cfg);
        if (*config_cmd) {
            std::cout << "# tagctl " << tag::toolkit_version() << "\n" << cfg.to_text();
            return 0;
        }
    } catch (const tag::error& e) {
        std::cerr << "tagctl: " << tag::to_string(e.code()) << ": " << e.what() << "\n";
        return e.exit_code();
    } catch (const tag::json::exception& e) {
        std::cerr << "tagctl: schema_violation: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "tagctl: error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
