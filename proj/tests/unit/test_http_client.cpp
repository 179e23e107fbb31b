#include <httplib.h>

#include "scratch.hpp"

#include "tag/error.hpp"
#include "tag/http_client.hpp"

#include <doctest.h>

#include <cstdlib>
#include <mutex>
#include <thread>

using namespace tag;

namespace {

struct stub_server {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::mutex mutex;
    std::vector<std::string> bodies;
    std::vector<std::string> auth;
    int status = 200;
    std::string reply = R"({"choices":[{"message":{"role":"assistant","content":"hello"}}]})";

    stub_server() {
        server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(mutex);
            bodies.push_back(req.body);
            auth.push_back(req.get_header_value("Authorization"));
            res.status = status;
            res.set_content(reply, "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~stub_server() {
        server.stop();
        thread.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

http_client_config config_for(const stub_server& s) {
    http_client_config c;
    c.base_url = s.url();
    c.token_env = "TAG_TEST_TOKEN_UNSET";
    c.timeout = std::chrono::seconds(5);
    return c;
}

error_code code_of(auto&& fn) {
    try {
        fn();
    } catch (const error& e) {
        return e.code();
    }
    FAIL("expected tag::error");
    return error_code::invalid_argument;
}

} // namespace

TEST_CASE("base64") {
    CHECK(base64_encode("") == "");
    CHECK(base64_encode("f") == "Zg==");
    CHECK(base64_encode("fo") == "Zm8=");
    CHECK(base64_encode("foo") == "Zm9v");
    CHECK(base64_encode("foobar") == "Zm9vYmFy");
    CHECK(base64_encode(std::string("\0\xff", 2)) == "AP8=");
}

TEST_CASE("request body") {
    scratch_dir d;
    const auto img = d.write("face.png", "PNGDATA");
    http_client_config c;
    c.model = "m";
    c.max_tokens = 64;
    http_model_client client(c);
    const auto body = client.build_body("describe", {"a", dataset_name::rafdb, img.string()});
    CHECK(body["model"] == "m");
    CHECK(body["max_tokens"] == 64);
    CHECK(body["temperature"] == 0.0);
    const auto& content = body["messages"][0]["content"];
    CHECK(body["messages"][0]["role"] == "user");
    CHECK(content[0]["type"] == "text");
    CHECK(content[0]["text"] == "describe");
    CHECK(content[1]["image_url"]["url"] == "data:image/png;base64," + base64_encode("PNGDATA"));

    const auto no_image = client.build_body("p", {"a", dataset_name::rafdb, std::nullopt});
    CHECK(no_image["messages"][0]["content"].size() == 1);
    CHECK(code_of([&] { client.build_body("p", {"a", dataset_name::rafdb, (d / "none.jpg").string()}); }) ==
          error_code::io);
}

TEST_CASE("content extraction") {
    CHECK(http_model_client::extract_content(R"({"choices":[{"message":{"content":"x"}}]})") == "x");
    for (const char* bad : {"", "{}", R"({"choices":[]})", R"({"choices":[{"message":{"content":3}}]})"}) {
        CHECK(code_of([&] { http_model_client::extract_content(bad); }) == error_code::transport);
    }
}

TEST_CASE("round trip against a local server") {
    stub_server s;
    http_model_client client(config_for(s));
    generation_request req;
    req.image = {"a", dataset_name::rafdb, std::nullopt};
    req.prompt = "go";
    CHECK(client.generate(req) == "hello");
    CHECK(client.assess_quality({req.image, "q", 0}) == "hello");
    REQUIRE(s.bodies.size() == 2);
    CHECK(json::parse(s.bodies[0])["messages"][0]["content"][0]["text"] == "go");
    CHECK(json::parse(s.bodies[1])["messages"][0]["content"][0]["text"] == "q");
    CHECK(s.auth[0].empty());

    s.status = 503;
    CHECK(code_of([&] { client.generate(req); }) == error_code::transport);
    s.status = 200;
    s.reply = "not json";
    CHECK(code_of([&] { client.generate(req); }) == error_code::transport);
}

TEST_CASE("bearer token from the environment") {
    stub_server s;
    auto c = config_for(s);
    c.token_env = "TAG_TEST_TOKEN";
    ::setenv("TAG_TEST_TOKEN", "sekrit", 1);
    http_model_client client(c);
    ::unsetenv("TAG_TEST_TOKEN");
    client.assess_quality({{"a", dataset_name::rafdb, std::nullopt}, "q", 0});
    REQUIRE(s.auth.size() == 1);
    CHECK(s.auth[0] == "Bearer sekrit");
}

TEST_CASE("connection failure is a transport error") {
    http_client_config c;
    {
        stub_server s;
        c.base_url = s.url();
    }
    c.timeout = std::chrono::seconds(1);
    http_model_client client(c);
    CHECK(code_of([&] { client.assess_quality({{"a", dataset_name::rafdb, std::nullopt}, "q", 0}); }) ==
          error_code::transport);
}
