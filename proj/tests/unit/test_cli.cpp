#include "scratch.hpp"

#include "tag/json_io.hpp"

#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <sys/wait.h>

using tag::json;

namespace {

struct run_result {
    int code = -1;
    std::string out;
};

std::string quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) {
        if (c == '\'') q += "'\\''";
        else q += c;
    }
    return q + "'";
}

// Runs tagctl with stdout captured; stderr is discarded.
run_result tagctl(const std::string& args, const std::string& stdin_file = {}) {
    std::string cmd = quote(TAGCTL_PATH) + " " + args + " 2>/dev/null";
    if (!stdin_file.empty()) cmd += " < " + quote(stdin_file);
    run_result r;
    FILE* p = ::popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::vector<json> jsonl(const std::string& text) {
    std::vector<json> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        const auto line = text.substr(pos, nl - pos);
        if (!line.empty()) out.push_back(json::parse(line));
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    return out;
}

const std::string fixtures = TAG_FIXTURE_DIR;

} // namespace

TEST_CASE("help and usage errors") {
    CHECK(tagctl("--help").code == 0);
    CHECK(tagctl("").code == 1);
    CHECK(tagctl("frobnicate").code == 1);
    CHECK(tagctl("reward").code == 1);
    CHECK(tagctl("--set nope=1 config").code == 1);
}

TEST_CASE("config prints the effective settings") {
    const auto r = tagctl("--set grpo.kl_beta=0.1 --seed 3 config");
    CHECK(r.code == 0);
    CHECK(r.out.rfind("# tagctl " TAG_VERSION "\n", 0) == 0);
    CHECK(r.out.find("grpo.kl_beta = 0.1\n") != std::string::npos);
    CHECK(r.out.find("seed = 3\n") != std::string::npos);

    scratch_dir d;
    const auto cfg = d.write("c.txt", "grpo.kl_beta = 0.2\n");
    CHECK(tagctl("--config " + quote(cfg.string()) + " config").out.find("grpo.kl_beta = 0.2\n") != std::string::npos);
    // --set wins over the file.
    CHECK(tagctl("--config " + quote(cfg.string()) + " --set grpo.kl_beta=0.3 config").out.find("grpo.kl_beta = 0.3\n") !=
          std::string::npos);
}

TEST_CASE("parse exit codes") {
    scratch_dir d;
    const auto good = d.write("good.txt", "<think>brows <bbox>[1, 2, 30, 40]</bbox></think><answer>anger</answer>");
    const auto bad = d.write("bad.txt", "<think>x</think>");
    auto r = tagctl("parse -i " + quote(good.string()));
    CHECK(r.code == 0);
    const auto j = json::parse(r.out);
    CHECK(j["report"]["well_formed"] == true);
    CHECK(j["meta"]["version"] == TAG_VERSION);
    r = tagctl("parse", bad.string());
    CHECK(r.code == 1);
    CHECK(json::parse(r.out)["report"]["violations"][0] == "MissingAnswer");
    const auto outer = d.write("outer.txt", "hi <think>x</think><answer>sad</answer>");
    CHECK(tagctl("parse -i " + quote(outer.string())).code == 0);
    CHECK(tagctl("parse --allow-outer-text false -i " + quote(outer.string())).code == 1);
    CHECK(tagctl("parse -i " + quote((d / "missing.txt").string())).code == 2);

    const auto batch = d.write("b.jsonl", json{{"id", "a"}, {"trace_text", "<think>x</think><answer>sad</answer>"}}.dump() +
                                              "\n" + json{{"id", "b"}, {"trace_text", "nope"}}.dump() + "\n");
    const auto out = d / "parsed.jsonl";
    r = tagctl("parse --batch -i " + quote(batch.string()) + " -o " + quote(out.string()));
    CHECK(r.code == 1);
    const auto rows = jsonl(slurp(out));
    REQUIRE(rows.size() == 2);
    CHECK(rows[0]["report"]["well_formed"] == true);
    CHECK(rows[1]["report"]["well_formed"] == false);
    CHECK(json::parse(slurp(out.string() + ".meta.json"))["command"] == "parse");
}

TEST_CASE("reward scoring and skip semantics") {
    scratch_dir d;
    const std::string t = "<think><AU4> <bbox>[0, 0, 50, 100]</bbox></think><answer>anger</answer>";
    std::string in;
    in += json{{"id", 1}, {"trace_text", t}, {"gold_label", "anger"},
               {"gold_au", {{"boxes", {{0, 0, 100, 100}}}, {"au_ids", {4, 7}}}}}.dump() + "\n";
    in += json{{"id", 2}, {"trace_text", t}, {"gold_label", "fear"}}.dump() + "\n";
    const auto input = d.write("in.jsonl", in);

    auto r = tagctl("reward -i " + quote(input.string()));
    REQUIRE(r.code == 0);
    auto rows = jsonl(r.out);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0]["r_au"].get<double>() == doctest::Approx(0.5));
    CHECK(rows[0]["total"].get<double>() == doctest::Approx(2.0));
    CHECK(rows[1]["r_au"].is_null());
    CHECK(rows[1]["total"].get<double>() == doctest::Approx(0.5));

    r = tagctl("reward --au-reward f1 -i " + quote(input.string()));
    rows = jsonl(r.out);
    CHECK(rows[0]["r_au"].get<double>() == doctest::Approx(2.0 / 3.0));

    r = tagctl("reward --include-au false --format-bonus 1 -i " + quote(input.string()));
    rows = jsonl(r.out);
    CHECK(rows[0]["r_au"].is_null());
    CHECK(rows[0]["total"].get<double>() == doctest::Approx(2.0));

    const auto out = d / "scores.jsonl";
    CHECK(tagctl("--threads 4 reward -i " + quote(input.string()) + " -o " + quote(out.string())).code == 0);
    CHECK(jsonl(slurp(out)).size() == 2);
    CHECK(json::parse(slurp(out.string() + ".meta.json"))["config"]["threads"] == 4);

    const auto bad = d.write("bad.jsonl", json{{"trace_text", t}, {"gold_label", "contempt"}}.dump() + "\n");
    CHECK(tagctl("reward -i " + quote(bad.string())).code == 1);
    CHECK(tagctl("reward --au-reward dice -i " + quote(input.string())).code == 1);
}

TEST_CASE("grpo-sim is seeded and mode-sensitive") {
    scratch_dir d;
    const auto a = d / "a.csv";
    const auto s = d / "s.json";
    auto r = tagctl("--seed 7 grpo-sim --steps 40 -o " + quote(a.string()) + " --summary " + quote(s.string()));
    REQUIRE(r.code == 0);
    const auto csv = slurp(a);
    CHECK(csv.rfind("step,mean_reward,accuracy,mean_au_iou,expected_accuracy,expected_au_iou\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 42);
    CHECK(tagctl("--seed 7 grpo-sim --steps 40").out == csv);
    CHECK(tagctl("--seed 8 grpo-sim --steps 40").out != csv);

    const auto golden = std::filesystem::path(TAG_GOLDEN_DIR) / "grpo_sim_seed7_steps40.csv";
    if (const char* u = std::getenv("TAG_UPDATE_GOLDEN"); u && std::string(u) == "1") std::ofstream(golden) << csv;
    CHECK(slurp(golden) == csv);

    const auto summary = json::parse(slurp(s));
    CHECK(summary["meta"]["reward_mode"] == "answer_plus_au");

    r = tagctl("--seed 7 grpo-sim --reward-mode answer_only --steps 40");
    CHECK(r.code == 0);
    CHECK(r.out != csv);
    CHECK(tagctl("grpo-sim --reward-mode rlvr").code == 1);
    CHECK(tagctl("grpo-sim --group-size 3").code == 1);

    const auto env = d.write("env.json", R"({"box_choices": [{"boxes": [[0, 0, 10, 10]], "au_ids": [4]}],
        "labels": ["anger", "fear"], "prompts": [{"id": "p", "gold_label": "fear", "gold_au": {"boxes": [[0, 0, 10, 10]]}}]})");
    r = tagctl("grpo-sim --steps 5 --env " + quote(env.string()));
    CHECK(r.code == 0);
    CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 7);
}

TEST_CASE("datagen on the scripted fixture") {
    scratch_dir d;
    const std::string base = "datagen --manifest " + quote(fixtures + "/pipeline/manifest.jsonl") + " --detections " +
                             quote(fixtures + "/pipeline/detections.jsonl") + " --mock-script " +
                             quote(fixtures + "/pipeline/mock_script.json") + " --set pipeline.transport_backoff_ms=0";
    std::string first;
    for (int workers : {1, 4}) {
        const auto out = d / ("out" + std::to_string(workers) + ".jsonl");
        const auto stats = d / ("stats" + std::to_string(workers) + ".json");
        const auto r = tagctl(base + " --workers " + std::to_string(workers) + " --per-worker 2 -o " +
                              quote(out.string()) + " --stats " + quote(stats.string()) + " --outcomes " +
                              quote((d / "outcomes.jsonl").string()));
        REQUIRE(r.code == 0);
        const auto text = slurp(out);
        if (first.empty()) first = text;
        CHECK(text == first);
        const auto st = json::parse(slurp(stats))["stats"];
        CHECK(st["input"] == 100);
        const std::size_t sum = st["filtered"].get<std::size_t>() + st["accepted"].get<std::size_t>() +
                                st["format_exhausted"].get<std::size_t>() +
                                st["candidates_exhausted"].get<std::size_t>() + st["transport_failed"].get<std::size_t>();
        CHECK(sum == 100);
        CHECK(jsonl(text).size() == st["accepted"].get<std::size_t>());
        CHECK(json::parse(slurp(out.string() + ".meta.json"))["config"]["pipeline.worker_count"] == workers);
    }
    CHECK(jsonl(slurp(d / "outcomes.jsonl")).size() == 100);

    // A test-split row aborts before generation with a validation exit code.
    auto rows = jsonl(slurp(fixtures + "/pipeline/manifest.jsonl"));
    rows[10]["split"] = "test";
    std::string m;
    for (const auto& r : rows) m += r.dump() + "\n";
    const auto leaky = d.write("leaky.jsonl", m);
    const auto r = tagctl("datagen --manifest " + quote(leaky.string()) + " --detections " +
                          quote(fixtures + "/pipeline/detections.jsonl") + " -o " + quote((d / "x.jsonl").string()));
    CHECK(r.code == 1);
    CHECK_FALSE(std::filesystem::exists(d / "x.jsonl"));

    // An unreachable endpoint is a per-image transport outcome; a missing
    // image file aborts the run.
    const std::string http = " --client http --base-url http://127.0.0.1:1 --set pipeline.transport_retries=0"
                             " --set pipeline.transport_backoff_ms=0";
    const std::string dets = " --detections " + quote(fixtures + "/pipeline/detections.jsonl");
    CHECK(tagctl("datagen --manifest " + quote(fixtures + "/pipeline/manifest.jsonl") + dets + " -o " +
                 quote((d / "y.jsonl").string()) + http)
              .code == 2);

    std::string small;
    for (std::size_t i = 0; i < 2; ++i) {
        auto row = rows[i];
        row["split"] = "train";
        row["image_path"] = d.write("img" + std::to_string(i) + ".jpg", "\xff\xd8 not really a jpeg").string();
        small += row.dump() + "\n";
    }
    const auto small_manifest = d.write("small.jsonl", small);
    const auto det_rows = jsonl(slurp(fixtures + "/pipeline/detections.jsonl"));
    const auto small_dets = d.write("small_dets.jsonl", det_rows[0].dump() + "\n" + det_rows[1].dump() + "\n");
    const auto stats = d / "http_stats.json";
    REQUIRE(tagctl("datagen --manifest " + quote(small_manifest.string()) + " --detections " +
                   quote(small_dets.string()) + " -o " +
                   quote((d / "z.jsonl").string()) + " --stats " + quote(stats.string()) + http)
                .code == 0);
    const auto st = json::parse(slurp(stats))["stats"];
    CHECK(st["transport_failed"] == 2);
    CHECK(slurp(d / "z.jsonl").empty());
}

TEST_CASE("eval subcommands") {
    const std::string e = fixtures + "/eval";
    auto r = tagctl("eval predictions --manifest " + quote(e + "/manifest10.jsonl") + " --predictions " +
                    quote(e + "/predictions10.jsonl") + " --dataset RAF-DB --detector openface --detector libreface");
    REQUIRE(r.code == 0);
    auto j = json::parse(r.out);
    CHECK(j["tables"][0]["rows"][0][5].get<double>() == doctest::Approx(0.7));
    CHECK(j["tables"][1]["rows"][0][4].get<double>() == doctest::Approx(0.75));
    CHECK(j["meta"]["missing_predictions"] == json::array({"t09"}));
    CHECK(j["meta"].contains("grounding_convention"));

    r = tagctl("eval predictions --format markdown --manifest " + quote(e + "/manifest10.jsonl") + " --predictions " +
               quote(e + "/predictions10.jsonl") + " --dataset RAF-DB");
    CHECK(r.code == 0);
    CHECK(r.out.find("| RAF-DB | 10 | 7 | 1 | 1 | 70.00 |") != std::string::npos);

    CHECK(tagctl("eval predictions --expect-known-size --dataset RAF-DB --manifest " + quote(e + "/manifest10.jsonl") +
                 " --predictions " + quote(e + "/predictions10.jsonl"))
              .code == 1);
    CHECK(tagctl("eval predictions --declared-size 10 --manifest " + quote(e + "/manifest10.jsonl") +
                 " --predictions " + quote(e + "/predictions10.jsonl"))
              .code == 0);
    CHECK(tagctl("eval predictions --detector dlib --manifest " + quote(e + "/manifest10.jsonl") + " --predictions " +
                 quote(e + "/predictions10.jsonl"))
              .code == 1);

    r = tagctl("eval preferences -i " + quote(e + "/pref_split.csv"));
    j = json::parse(r.out);
    CHECK(j["tables"][0]["rows"][0][2].get<double>() == doctest::Approx(50.0));
    CHECK(j["tables"][0]["rows"][0][4].get<double>() == doctest::Approx(50.0));

    r = tagctl("eval rubric --format csv -i " + quote(e + "/rubric.csv"));
    CHECK(r.out.find("A,2,4.50,4.50,4.50") != std::string::npos);

    r = tagctl("eval cross-dataset --format md -i " + quote(e + "/cross_dataset.json"));
    CHECK(r.code == 0);
    CHECK(r.out.find("| Δ (vs SFT, RAF-DB) | +3.78 | +1.29 | +1.50 | +2.19 |") != std::string::npos);

    scratch_dir d;
    const auto csv = d / "cross.csv";
    CHECK(tagctl("eval cross-dataset --format csv -o " + quote(csv.string()) + " -i " + quote(e + "/cross_dataset.json"))
              .code == 0);
    CHECK(std::filesystem::exists(csv.string() + ".meta.json"));
    CHECK(tagctl("eval cross-dataset -i " + quote((d / "none.json").string())).code == 2);
}
