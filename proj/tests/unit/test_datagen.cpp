#include "scratch.hpp"

#include "tag/datagen.hpp"
#include "tag/error.hpp"

#include <doctest.h>

#include <atomic>
#include <fstream>
#include <mutex>
#include <random>

using namespace tag;

namespace {

const std::string fixture = TAG_FIXTURE_DIR "/pipeline";

struct pipeline_inputs {
    std::vector<manifest_row> manifest = load_generation_manifest(fixture + "/manifest.jsonl");
    au_catalog catalog = load_catalog(default_catalog_path());
    std::vector<detection_record> detections = load_detections(fixture + "/detections.jsonl", &catalog);
    json script = json::parse(slurp(fixture + "/mock_script.json"));
    prompt_library prompts = prompt_library::load(default_prompt_dir());
};

pipeline_config fast_config(std::size_t workers) {
    pipeline_config c;
    c.worker_count = workers;
    c.per_worker_concurrency = 3;
    c.total_concurrency = 8;
    c.transport_backoff = std::chrono::milliseconds(0);
    c.seed = 42;
    return c;
}

// Closed-form expectation for one scripted image.
struct expected {
    outcome_status status;
    std::size_t attempts;
    std::vector<std::string> path;
};

expected expect_for(const json& b, const std::string& gold, const pipeline_config& c) {
    const std::string quality = b.value("quality", "pass");
    const std::size_t transport = b.value("transport_failures", 0);
    if (transport > c.transport_retries) return {outcome_status::transport_error, 0, {}};
    if (quality != "pass") return {outcome_status::filtered, 0, {}};
    const std::size_t tries = c.max_format_retries + 1;
    if (b.value("always_malformed", false)) return {outcome_status::format_exhausted, tries, {}};
    const std::size_t errors = b.value("format_errors", 0);
    if (errors >= tries) return {outcome_status::format_exhausted, tries, {}};
    if (b.contains("fixed_answer")) {
        const std::string f = b["fixed_answer"];
        if (f == gold) return {outcome_status::accepted, errors + 1, {}};
        return {outcome_status::candidates_exhausted, errors + 1 + 6, {f}};
    }
    std::vector<std::string> wrong = b.value("wrong_first", std::vector<std::string>{});
    return {outcome_status::accepted, errors + 1 + wrong.size(), wrong};
}

class recording_client final : public model_client {
public:
    explicit recording_client(model_client& inner) : inner_(inner) {}
    std::string assess_quality(const quality_request& r) override {
        ++quality_calls;
        return inner_.assess_quality(r);
    }
    std::string generate(const generation_request& r) override {
        {
            std::lock_guard lock(mutex);
            requests.push_back(r);
        }
        return inner_.generate(r);
    }
    std::atomic<int> quality_calls{0};
    std::mutex mutex;
    std::vector<generation_request> requests;

private:
    model_client& inner_;
};

// Answers uniformly at random among all seven labels, sometimes malformed.
class chaotic_client final : public model_client {
public:
    explicit chaotic_client(std::uint64_t seed) : rng_(seed) {}
    std::string assess_quality(const quality_request&) override { return R"({"suitable_for_training": true})"; }
    std::string generate(const generation_request&) override {
        if (std::uniform_int_distribution<int>(0, 4)(rng_) == 0) return "no tags";
        const auto l = all_labels[std::uniform_int_distribution<std::size_t>(0, 6)(rng_)];
        return "<think>x</think><answer>" + std::string(to_string(l)) + "</answer>";
    }

private:
    std::mt19937_64 rng_;
};

const image_ref img{"x", dataset_name::rafdb, std::nullopt};

} // namespace

TEST_CASE("dataset names") {
    CHECK(parse_dataset_name("RAF-DB") == dataset_name::rafdb);
    CHECK(parse_dataset_name("rafdb") == dataset_name::rafdb);
    CHECK(parse_dataset_name("ferplus") == dataset_name::ferplus);
    CHECK(to_string(dataset_name::affectnet) == "AffectNet");
    CHECK_THROWS_AS(parse_dataset_name("CK+"), error);
}

TEST_CASE("quality verdict parsing is strict") {
    CHECK(parse_quality_verdict(R"({"suitable_for_training": true})") == quality_verdict::pass);
    CHECK(parse_quality_verdict(R"({"suitable_for_training": false})") == quality_verdict::fail);
    CHECK(parse_quality_verdict(R"({"suitable_for_training": "true"})") == quality_verdict::fail);
    CHECK(parse_quality_verdict(R"([true])") == quality_verdict::fail);
    CHECK(parse_quality_verdict("yes") == quality_verdict::fail);
    CHECK(parse_quality_verdict("") == quality_verdict::fail);
}

TEST_CASE("quality filter over ten images drops exactly the failures") {
    std::map<std::string, mock_behavior> table;
    for (int i = 0; i < 10; ++i) {
        mock_behavior b;
        if (i == 2 || i == 5) b.quality = mock_behavior::verdict::fail;
        if (i == 8) b.quality = mock_behavior::verdict::garbage;
        table["q" + std::to_string(i)] = b;
    }
    mock_client client(table);
    const auto prompts = prompt_library::load(default_prompt_dir());
    int passed = 0;
    for (int i = 0; i < 10; ++i) {
        passed += quality_filter({"q" + std::to_string(i), dataset_name::rafdb, {}}, client, prompts, fast_config(1)) ==
                  quality_verdict::pass;
    }
    CHECK(passed == 7);
}

TEST_CASE("response conversion") {
    const std::string raw = json{{"CoT", "brows <AU4> [1, 2, 30, 40] tight"}, {"Answer", "anger"}}.dump();
    CHECK(trace_text_from_response(raw) ==
          "<think>brows <AU4> <bbox>[1, 2, 30, 40]</bbox> tight</think><answer>anger</answer>");
    CHECK(trace_text_from_response("<think>a</think><answer>b</answer>") == "<think>a</think><answer>b</answer>");
    CHECK(trace_text_from_response(R"({"CoT": 3, "Answer": "x"})") == R"({"CoT": 3, "Answer": "x"})");
}

TEST_CASE("elimination loop") {
    const auto prompts = prompt_library::load(default_prompt_dir());
    const au_ground_truth pool{{{10, 10, 100, 100}}, {12}, {12}};
    auto run = [&](mock_behavior b, expression_label gold, pipeline_config c = fast_config(1)) {
        mock_client client({{"x", b}});
        return generate_with_elimination(img, gold, pool, client, prompts, c);
    };

    mock_behavior b;
    b.truth = expression_label::happiness;
    auto o = run(b, expression_label::happiness);
    CHECK(o.status == outcome_status::accepted);
    CHECK(o.attempts == 1);
    CHECK(o.rounds == 0);
    CHECK(o.trace->boxes.size() == 1);

    b.wrong_first = {expression_label::neutral};
    o = run(b, expression_label::happiness);
    CHECK(o.status == outcome_status::accepted);
    CHECK(o.attempts == 2);
    CHECK(o.elimination_path == std::vector{expression_label::neutral});
    REQUIRE(o.log.size() == 2);
    CHECK(o.log[1].kind == prompt_kind::regenerate_with_candidates);
    CHECK(o.log[1].candidates.size() == 6);

    b = {};
    b.truth = expression_label::fear;
    b.format_errors = 2;
    o = run(b, expression_label::fear);
    CHECK(o.status == outcome_status::accepted);
    CHECK(o.attempts == 3);
    CHECK(o.log[1].kind == prompt_kind::retry_format);

    b.format_errors = 6;
    o = run(b, expression_label::fear);
    CHECK(o.status == outcome_status::format_exhausted);
    CHECK(o.attempts == 6);
    CHECK_FALSE(o.trace);

    b = {};
    b.fixed_answer = expression_label::disgust;
    o = run(b, expression_label::anger);
    CHECK(o.status == outcome_status::candidates_exhausted);
    CHECK(o.rounds == 6);
    CHECK(o.attempts == 7);
    CHECK(o.elimination_path == std::vector{expression_label::disgust});

    // Walks every wrong label before the gold one.
    b = {};
    b.truth = expression_label::surprise;
    b.wrong_first = {expression_label::anger, expression_label::disgust, expression_label::fear,
                     expression_label::happiness, expression_label::neutral, expression_label::sadness};
    o = run(b, expression_label::surprise);
    CHECK(o.status == outcome_status::accepted);
    CHECK(o.rounds == 6);
    CHECK(o.log.back().candidates == std::vector{expression_label::surprise});

    // Only wrong answers are eliminated, so an early hit on gold is accepted.
    o = run(b, expression_label::anger);
    CHECK(o.status == outcome_status::accepted);
    CHECK(o.attempts == 1);
    CHECK(o.elimination_path.empty());
}

TEST_CASE("adversarial clients terminate within six rounds") {
    const auto prompts = prompt_library::load(default_prompt_dir());
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        chaotic_client client(seed);
        const auto gold = all_labels[seed % 7];
        const auto o = generate_with_elimination(img, gold, {}, client, prompts, fast_config(1));
        CHECK(o.rounds <= 6);
        CHECK(o.attempts <= 7 * 6);
        std::set<expression_label> seen(o.elimination_path.begin(), o.elimination_path.end());
        CHECK(seen.size() == o.elimination_path.size());
        CHECK_FALSE(seen.count(gold));
        if (o.status == outcome_status::accepted) CHECK(o.trace->answer == gold);
    }
}

TEST_CASE("transport retries") {
    const auto prompts = prompt_library::load(default_prompt_dir());
    mock_behavior b;
    b.truth = expression_label::anger;
    b.transport_failures = 3;
    mock_client client({{"x", b}});
    auto c = fast_config(1);
    CHECK(quality_filter(img, client, prompts, c) == quality_verdict::pass);
    CHECK(generate_with_elimination(img, expression_label::anger, {}, client, prompts, c).status ==
          outcome_status::accepted);
    c.transport_retries = 2;
    CHECK_THROWS_AS(quality_filter(img, client, prompts, c), error);
    CHECK(generate_with_elimination(img, expression_label::anger, {}, client, prompts, c).status ==
          outcome_status::transport_error);
}

TEST_CASE("scripted pipeline matches the closed-form accounting") {
    pipeline_inputs in;
    REQUIRE(in.manifest.size() == 100);
    const auto cfg = fast_config(2);
    auto client = mock_client::from_script(in.script, in.manifest);
    const auto res = run_pipeline(in.manifest, in.detections, in.catalog, cfg, client, client, in.prompts);

    std::map<outcome_status, std::size_t> counts;
    std::size_t calls = 0;
    REQUIRE(res.outcomes.size() == 100);
    for (std::size_t i = 0; i < 100; ++i) {
        const auto& row = in.manifest[i];
        const json behavior = in.script["images"].value(row.image_id, json::object());
        const auto want = expect_for(behavior, std::string(to_string(row.gold_label)), cfg);
        const auto& got = res.outcomes[i];
        CAPTURE(row.image_id);
        CHECK(got.image_id == row.image_id);
        CHECK(got.status == want.status);
        CHECK(got.attempts == want.attempts);
        std::vector<std::string> path;
        for (auto l : got.elimination_path) path.emplace_back(to_string(l));
        CHECK(path == want.path);
        ++counts[want.status];
        calls += want.attempts;
    }
    const auto& s = res.stats;
    CHECK(s.input == 100);
    CHECK(s.terminal_count() == 100);
    CHECK(s.filtered == counts[outcome_status::filtered]);
    CHECK(s.accepted == counts[outcome_status::accepted]);
    CHECK(s.format_exhausted == counts[outcome_status::format_exhausted]);
    CHECK(s.candidates_exhausted == counts[outcome_status::candidates_exhausted]);
    CHECK(s.transport_failed == counts[outcome_status::transport_error]);
    CHECK(s.generation_calls == calls);
    CHECK(res.samples.size() == s.accepted);
    for (const auto& rec : res.samples) CHECK_NOTHROW(rec.validate());
}

TEST_CASE("pipeline output is independent of worker count") {
    pipeline_inputs in;
    scratch_dir d;
    std::string first;
    for (std::size_t workers : {1u, 2u, 4u}) {
        auto client = mock_client::from_script(in.script, in.manifest);
        auto cfg = fast_config(workers);
        cfg.audit_fraction = 0.25;
        const auto res = run_pipeline(in.manifest, in.detections, in.catalog, cfg, client, client, in.prompts);
        const auto p = d / ("out" + std::to_string(workers) + ".jsonl");
        write_samples(p, res.samples);
        const auto text = slurp(p);
        if (first.empty()) first = text;
        CHECK(text == first);
    }
    const auto back = read_samples(d / "out1.jsonl");
    CHECK(back.size() > 50);
    std::size_t audited = 0;
    for (const auto& r : back) audited += r.audit;
    CHECK(audited > 0);
    CHECK(audited < back.size());
}

TEST_CASE("generation never sees the gold label and candidates keep it") {
    pipeline_inputs in;
    auto inner = mock_client::from_script(in.script, in.manifest);
    recording_client rec(inner);
    run_pipeline(in.manifest, in.detections, in.catalog, fast_config(2), rec, rec, in.prompts);
    std::map<std::string, expression_label> gold;
    for (const auto& r : in.manifest) gold[r.image_id] = r.gold_label;
    CHECK(rec.quality_calls.load() > 0);
    for (const auto& r : rec.requests) {
        const auto& c = r.candidates;
        CHECK(std::find(c.begin(), c.end(), gold[r.image.image_id]) != c.end());
        if (c.size() == 7) CHECK(r.prompt.find("[anger, disgust") != std::string::npos);
    }
}

TEST_CASE("manifest validation happens before any client call") {
    pipeline_inputs in;
    auto inner = mock_client::from_script(in.script, in.manifest);
    auto expect_code = [&](std::vector<manifest_row> m, std::vector<detection_record> det, error_code code) {
        recording_client rec(inner);
        try {
            run_pipeline(m, det, in.catalog, fast_config(1), rec, rec, in.prompts);
            FAIL("expected error");
        } catch (const error& e) {
            CHECK(e.code() == code);
        }
        CHECK(rec.quality_calls.load() == 0);
        CHECK(rec.requests.empty());
    };
    auto m = in.manifest;
    m[57].split = "test";
    expect_code(m, in.detections, error_code::leakage);
    m = in.manifest;
    m.push_back(m[0]);
    expect_code(m, in.detections, error_code::schema_violation);
    auto det = in.detections;
    det.pop_back();
    expect_code(in.manifest, det, error_code::schema_violation);
    det = in.detections;
    det[3].width += 1;
    expect_code(in.manifest, det, error_code::schema_violation);
}

TEST_CASE("sample records") {
    sample_record r;
    r.image_id = "a";
    r.gold_label = expression_label::sadness;
    r.trace_text = "<think>down <bbox>[1, 2, 3, 4]</bbox></think><answer>sad</answer>";
    r.trace = parse_trace(r.trace_text);
    r.au_pool = {{{1, 2, 3, 4}}, {15}, {15}};
    r.attempts = 2;
    r.elimination_path = {expression_label::neutral};
    CHECK_NOTHROW(r.validate());
    const auto back = sample_record::from_json(r.to_json());
    CHECK(back.to_json() == r.to_json());
    CHECK(back.trace.structurally_equal(r.trace));

    auto bad = r;
    bad.split = "val";
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("training split"), error);
    bad = r;
    bad.gold_label = expression_label::anger;
    CHECK_THROWS_AS(bad.validate(), error);
    bad = r;
    bad.elimination_path = {expression_label::sadness};
    CHECK_THROWS_AS(bad.validate(), error);

    scratch_dir d;
    CHECK_THROWS_AS(write_samples(d / "x.jsonl", std::vector{bad}), error);
}

TEST_CASE("manifest loading rejects contempt") {
    scratch_dir d;
    const auto p = d.write("m.jsonl",
        R"({"image_id":"a","dataset":"RAF-DB","split":"train","gold_label":"contempt","width":10,"height":10})");
    CHECK_THROWS_AS(load_generation_manifest(p), error);
    pipeline_config c;
    c.worker_count = 0;
    CHECK_THROWS_AS(c.validate(), error);
}
