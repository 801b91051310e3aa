#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "skillforge/provider_gateway.hpp"

#include <regex>

namespace skillforge {

namespace {

class HttpTransport final : public Transport {
public:
    HttpTransport(const std::string& url, std::string credential, std::chrono::seconds timeout)
        : credential_(std::move(credential)) {
        static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
        std::smatch m;
        if (!std::regex_match(url, m, re)) throw Error(Errc::invalid_argument, "unsupported provider URL: " + url);
        base_ = m[1];
        path_ = m[2].matched ? m[2].str() : "/";
        client_ = std::make_unique<httplib::Client>(base_);
        client_->set_connection_timeout(timeout);
        client_->set_read_timeout(timeout);
        client_->set_write_timeout(timeout);
    }

    HttpResult post(const std::string& body) override {
        httplib::Headers headers = {{"Authorization", "Bearer " + credential_}};
        auto res = client_->Post(path_, headers, body, "application/json");
        if (!res) return {0, "", httplib::to_string(res.error())};
        return {res->status, res->body, ""};
    }

private:
    std::string credential_;
    std::string base_;
    std::string path_;
    std::unique_ptr<httplib::Client> client_;
};

}  // namespace

std::unique_ptr<Transport> make_http_transport(const std::string& url, const std::string& credential,
                                               std::chrono::seconds timeout) {
    return std::make_unique<HttpTransport>(url, credential, timeout);
}

}  // namespace skillforge
