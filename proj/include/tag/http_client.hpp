#pragma once

#include "tag/datagen.hpp"

#include <chrono>
#include <memory>
#include <string>

namespace tag {

struct http_client_config {
    /// Scheme, host and port, e.g. "http://127.0.0.1:8000".
    std::string base_url = "http://127.0.0.1:8000";
    std::string path = "/v1/chat/completions";
    std::string model = "qwen2.5-vl-32b-instruct";
    /// Name of the environment variable holding the bearer token. The token
    /// is optional; no Authorization header is sent when it is unset.
    std::string token_env = "TAG_API_TOKEN";
    double temperature = 0.0;
    std::size_t max_tokens = 2048;
    std::chrono::seconds timeout{120};
};

/// Chat-completions client. Each call sends the prompt and, when the image
/// has a path, the image as a base64 data URL. Connection failures and
/// non-2xx statuses throw tag::error(transport); a 2xx body without
/// choices[0].message.content is also reported as transport.
class http_model_client final : public model_client {
public:
    explicit http_model_client(http_client_config config);
    ~http_model_client() override;

    std::string assess_quality(const quality_request& request) override;
    std::string generate(const generation_request& request) override;

    /// Request body for one call, exposed for tests.
    json build_body(const std::string& prompt, const image_ref& image) const;

    /// Extracts choices[0].message.content. Throws transport on a bad body.
    static std::string extract_content(const std::string& body);

private:
    std::string complete(const std::string& prompt, const image_ref& image);

    http_client_config config_;
    std::string token_;
};

std::string base64_encode(std::string_view bytes);

} // namespace tag
