#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "tag/http_client.hpp"

#include "tag/error.hpp"

#include <openssl/evp.h>

#include <cstdlib>

namespace tag {

namespace {

std::string mime_for(const std::string& path) {
    const auto dot = path.find_last_of('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == "png") return "image/png";
    if (ext == "webp") return "image/webp";
    if (ext == "bmp") return "image/bmp";
    return "image/jpeg";
}

} // namespace

std::string base64_encode(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

http_model_client::http_model_client(http_client_config config) : config_(std::move(config)) {
    if (const char* t = std::getenv(config_.token_env.c_str())) token_ = t;
}

http_model_client::~http_model_client() = default;

json http_model_client::build_body(const std::string& prompt, const image_ref& image) const {
    json content = json::array();
    content.push_back({{"type", "text"}, {"text", prompt}});
    if (image.image_path) {
        const std::string bytes = read_text_file(*image.image_path);
        content.push_back({{"type", "image_url"},
                           {"image_url", {{"url", "data:" + mime_for(*image.image_path) + ";base64," +
                                                      base64_encode(bytes)}}}});
    }
    json body;
    body["model"] = config_.model;
    body["messages"] = json::array({json{{"role", "user"}, {"content", std::move(content)}}});
    body["temperature"] = config_.temperature;
    body["max_tokens"] = config_.max_tokens;
    return body;
}

std::string http_model_client::extract_content(const std::string& body) {
    try {
        const json j = json::parse(body);
        const json& msg = j.at("choices").at(0).at("message").at("content");
        if (msg.is_string()) return msg.get<std::string>();
    } catch (const json::exception&) {
    }
    throw error(error_code::transport, "response has no choices[0].message.content");
}

std::string http_model_client::complete(const std::string& prompt, const image_ref& image) {
    const std::string body = build_body(prompt, image).dump();
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    if (!token_.empty()) client.set_bearer_token_auth(token_);
    auto res = client.Post(config_.path, body, "application/json");
    if (!res) {
        throw error(error_code::transport,
                    "request to " + config_.base_url + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status < 200 || res->status >= 300) {
        throw error(error_code::transport, "HTTP " + std::to_string(res->status) + " from " + config_.base_url);
    }
    return extract_content(res->body);
}

std::string http_model_client::assess_quality(const quality_request& request) {
    return complete(request.prompt, request.image);
}

std::string http_model_client::generate(const generation_request& request) {
    return complete(request.prompt, request.image);
}

} // namespace tag
