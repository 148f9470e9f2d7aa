#pragma once

// Real transport over cpp-httplib. Kept out of http.hpp so that test
// translation units which only need the transport seam do not pay for
// the TLS stack.

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>
#include <memory>
#include <string>

#include "geneverify/http.hpp"

namespace geneverify {

class HttplibTransport final : public HttpTransport {
 public:
  explicit HttplibTransport(int timeout_seconds = 30) : timeout_s_(timeout_seconds) {}

  HttpResponse get(const std::string& url, const HttpHeaders& headers = {}) override {
    return roundtrip(url, [&](httplib::Client& cli, const std::string& path) {
      return cli.Get(path, to_httplib(headers));
    });
  }

  HttpResponse post(const std::string& url, const std::string& body,
                    const std::string& content_type,
                    const HttpHeaders& headers = {}) override {
    return roundtrip(url, [&](httplib::Client& cli, const std::string& path) {
      return cli.Post(path, to_httplib(headers), body, content_type);
    });
  }

 private:
  static httplib::Headers to_httplib(const HttpHeaders& headers) {
    httplib::Headers out;
    for (const auto& [k, v] : headers) out.emplace(k, v);
    return out;
  }

  template <typename Fn>
  HttpResponse roundtrip(const std::string& url, Fn&& fn) {
    count_attempt();
    if (std::getenv("GENEVERIFY_FORBID_NETWORK"))
      fail(Errc::Transport, "network access forbidden by GENEVERIFY_FORBID_NETWORK: " + url);

    size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
      fail(Errc::Transport, "malformed url '" + url + "'");
    std::string origin_and_path = url.substr(scheme_end + 3);
    size_t slash = origin_and_path.find('/');
    std::string origin = url.substr(0, scheme_end + 3) +
                         origin_and_path.substr(0, slash);
    std::string path = slash == std::string::npos ? "/" : origin_and_path.substr(slash);

    httplib::Client cli(origin);
    cli.set_connection_timeout(timeout_s_, 0);
    cli.set_read_timeout(timeout_s_, 0);
    cli.set_write_timeout(timeout_s_, 0);
    cli.set_follow_location(true);

    auto res = fn(cli, path);
    if (!res) fail(Errc::Transport, "request to " + url + " failed: " +
                                        httplib::to_string(res.error()));
    return HttpResponse{res->status, res->body};
  }

  int timeout_s_;
};

}  // namespace geneverify
