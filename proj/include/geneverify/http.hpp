#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "geneverify/errors.hpp"

namespace geneverify {

struct HttpResponse {
  int status = 0;
  std::string body;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

/// Minimal transport seam. Everything that crosses the network goes through
/// one of these, which is what makes record/replay and the network-forbidding
/// harness possible.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse get(const std::string& url, const HttpHeaders& headers = {}) = 0;
  virtual HttpResponse post(const std::string& url, const std::string& body,
                            const std::string& content_type,
                            const HttpHeaders& headers = {}) = 0;

  long requests_attempted() const { return attempts_.load(); }

 protected:
  void count_attempt() { ++attempts_; }

 private:
  std::atomic<long> attempts_{0};
};

/// Transport for replay mode: any use is a bug, so it throws.
class ForbiddenTransport final : public HttpTransport {
 public:
  HttpResponse get(const std::string& url, const HttpHeaders& = {}) override {
    count_attempt();
    fail(Errc::Transport, "network access forbidden (replay mode): GET " + url);
  }
  HttpResponse post(const std::string& url, const std::string&, const std::string&,
                    const HttpHeaders& = {}) override {
    count_attempt();
    fail(Errc::Transport, "network access forbidden (replay mode): POST " + url);
  }
};

/// Paces outgoing requests per host. Default budget is 3 req/s, which keeps
/// NCBI and the enrichment services happy.
class RateLimiter {
 public:
  explicit RateLimiter(double per_second = 3.0) { set_rate(per_second); }

  void set_rate(double per_second) {
    std::lock_guard<std::mutex> lk(mu_);
    interval_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(per_second <= 0 ? 0.0 : 1.0 / per_second));
  }

  void acquire(const std::string& host) {
    std::chrono::steady_clock::time_point wait_until;
    {
      std::lock_guard<std::mutex> lk(mu_);
      auto now = std::chrono::steady_clock::now();
      auto& slot = next_slot_[host];
      if (slot < now) slot = now;
      wait_until = slot;
      slot += interval_;
    }
    std::this_thread::sleep_until(wait_until);
  }

 private:
  std::mutex mu_;
  std::chrono::steady_clock::duration interval_{};
  std::map<std::string, std::chrono::steady_clock::time_point> next_slot_;
};

inline std::string host_of_url(const std::string& url) {
  size_t scheme = url.find("://");
  size_t begin = scheme == std::string::npos ? 0 : scheme + 3;
  size_t end = url.find('/', begin);
  return url.substr(begin, end == std::string::npos ? std::string::npos : end - begin);
}

inline std::string url_encode(std::string_view s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  out.reserve(s.size());
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else if (c == ' ') {
      out.push_back('+');
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 0x0f]);
    }
  }
  return out;
}

}  // namespace geneverify
