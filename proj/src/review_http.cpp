#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "partdrag/curation.hpp"
#include "partdrag/image_io.hpp"

namespace partdrag {

using nlohmann::json;

HttpReviewClient::HttpReviewClient(HttpReviewOptions options) : options_(std::move(options)) {
  if (options_.max_attempts < 1 || options_.max_in_flight < 1) throw ValidationError("invalid review client options");
  if (const char* t = std::getenv(options_.token_env.c_str())) token_ = t;
}

std::string HttpReviewClient::request_body(const ReviewPrompt& prompt,
                                           const std::vector<std::vector<std::uint8_t>>& images) const {
  json content = json::array({{{"type", "text"}, {"text", prompt.user}}});
  for (const auto& png : images) {
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", "data:image/png;base64," + base64_encode(png)}}}});
  }
  return json{{"model", options_.model},
              {"max_tokens", 4},
              {"temperature", 0},
              {"messages", json::array({{{"role", "system"}, {"content", prompt.system}},
                                        {{"role", "user"}, {"content", content}}})}}
      .dump();
}

std::string HttpReviewClient::complete(const ReviewPrompt& prompt,
                                       const std::vector<std::vector<std::uint8_t>>& images) {
  if (token_.empty()) throw Error("review service token missing; set " + options_.token_env);
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(options_.url, m, url_re)) throw ValidationError("bad review service url " + options_.url);
  const std::string host = m[1];
  const std::string path = m[2].matched ? std::string(m[2]) : "/";
  const std::string body = request_body(prompt, images);

  {
    std::unique_lock lock(mutex_);
    slot_free_.wait(lock, [&] { return in_flight_ < options_.max_in_flight; });
    ++in_flight_;
  }
  struct Release {
    HttpReviewClient* self;
    ~Release() {
      {
        std::lock_guard lock(self->mutex_);
        --self->in_flight_;
      }
      self->slot_free_.notify_one();
    }
  } release{this};

  std::string last_error;
  auto backoff = options_.initial_backoff;
  for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    httplib::Client client(host);
    client.set_connection_timeout(options_.timeout_seconds);
    client.set_read_timeout(options_.timeout_seconds);
    client.set_bearer_token_auth(token_);
    auto res = client.Post(path, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "service status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) throw Error("review service rejected the request with status " + std::to_string(res->status));
    try {
      return json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw MalformedReplyError(std::string("unexpected review service payload: ") + e.what());
    }
  }
  throw Error("review service unreachable after " + std::to_string(options_.max_attempts) + " attempts: " +
              last_error);
}

}  // namespace partdrag
