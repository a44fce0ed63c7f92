#pragma once

// Remote translator over HTTP: POST {base}/translate with
// {"texts": [...], "beam": k, "direction": "forward"|"back"}, answered by
// {"translations": [[...], ...]}.

#include <chrono>
#include <cstddef>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "qanet/augment/translator.hpp"
#include "qanet/error.hpp"

namespace qanet {

struct HttpTranslatorOptions {
  double connect_timeout_s = 5.0;
  double read_timeout_s = 60.0;
  std::size_t retries = 3;     // extra attempts after the first
  double retry_backoff_s = 0.5;  // doubled after each failed attempt
};

class HttpTranslator : public Translator {
 public:
  explicit HttpTranslator(const std::string& base_url, HttpTranslatorOptions options = {}) : options_(options) {
    const auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos || base_url.compare(0, scheme_end, "http") != 0) {
      throw Error(ErrorCode::kInvalidArgument, "translator URL must start with http://: " + base_url);
    }
    const auto path_begin = base_url.find('/', scheme_end + 3);
    origin_ = base_url.substr(0, path_begin);
    path_ = path_begin == std::string::npos ? std::string() : base_url.substr(path_begin);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    path_ += "/translate";
  }

  const std::string& origin() const { return origin_; }
  const std::string& path() const { return path_; }

  std::vector<std::vector<std::string>> translate(const std::vector<std::string>& texts, std::size_t beam,
                                                  Direction direction) const override {
    const nlohmann::json request{{"texts", texts}, {"beam", beam}, {"direction", direction_name(direction)}};
    const std::string body = request.dump();
    std::string last_error;
    double backoff = options_.retry_backoff_s;
    for (std::size_t attempt = 0; attempt <= options_.retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
        backoff *= 2.0;
      }
      httplib::Client client(origin_);
      client.set_connection_timeout(std::chrono::duration<double>(options_.connect_timeout_s));
      client.set_read_timeout(std::chrono::duration<double>(options_.read_timeout_s));
      const auto res = client.Post(path_, body, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw Error(ErrorCode::kTranslatorProtocolError,
                    origin_ + path_ + " answered HTTP " + std::to_string(res->status));
      }
      return parse_response(res->body);
    }
    throw Error(ErrorCode::kTranslatorUnavailable, origin_ + path_ + " unreachable after " +
                                                       std::to_string(options_.retries + 1) + " attempts: " + last_error);
  }

 private:
  std::vector<std::vector<std::string>> parse_response(const std::string& body) const {
    const auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("translations") || !j["translations"].is_array()) {
      throw Error(ErrorCode::kTranslatorProtocolError, "malformed translator response from " + origin_ + path_);
    }
    std::vector<std::vector<std::string>> out;
    for (const auto& alts : j["translations"]) {
      if (!alts.is_array()) throw Error(ErrorCode::kTranslatorProtocolError, "translation entry is not a list");
      std::vector<std::string> row;
      for (const auto& s : alts) {
        if (!s.is_string()) throw Error(ErrorCode::kTranslatorProtocolError, "translation is not a string");
        row.push_back(s.get<std::string>());
      }
      out.push_back(std::move(row));
    }
    return out;
  }

  std::string origin_;
  std::string path_;
  HttpTranslatorOptions options_;
};

}  // namespace qanet
