#pragma once

// Local chat-completions stand-in for tests: counts requests, tracks
// concurrent handlers, and answers through a caller-supplied function.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

namespace stub {

struct Reply {
  int status = 200;
  std::string content;  // assistant text for 200 replies, raw body otherwise
  std::chrono::milliseconds delay{0};
};

// Last user-message text of a chat request.
inline std::string user_text(const nlohmann::json& body) {
  const auto& msgs = body.at("messages");
  for (auto it = msgs.rbegin(); it != msgs.rend(); ++it) {
    if ((*it).at("role") != "user") continue;
    const auto& c = (*it).at("content");
    if (c.is_string()) return c.get<std::string>();
    for (const auto& part : c) {
      if (part.value("type", "") == "text") return part.at("text").get<std::string>();
    }
  }
  return {};
}

class Server {
 public:
  using Handler = std::function<Reply(const nlohmann::json& body, int index)>;

  explicit Server(Handler h) : handler_(std::move(h)) {
    server_.new_task_queue = [] { return new httplib::ThreadPool(16); };
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int index = count_.fetch_add(1);
      const int now = in_flight_.fetch_add(1) + 1;
      int seen = high_water_.load();
      while (now > seen && !high_water_.compare_exchange_weak(seen, now)) {
      }
      {
        std::lock_guard lock(mu_);
        auths_.push_back(req.get_header_value("Authorization"));
        bodies_.push_back(req.body);
      }
      Reply r;
      try {
        r = handler_(nlohmann::json::parse(req.body), index);
      } catch (const std::exception& e) {
        r = {500, e.what()};
      }
      if (r.delay.count() > 0) std::this_thread::sleep_for(r.delay);
      in_flight_.fetch_sub(1);
      res.status = r.status;
      if (r.status == 200) {
        nlohmann::json body = {
            {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", r.content}}}}}}};
        res.set_content(body.dump(), "application/json");
      } else {
        res.set_content(r.content, "text/plain");
      }
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~Server() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  int count() const { return count_.load(); }
  int high_water() const { return high_water_.load(); }
  std::vector<std::string> auths() const {
    std::lock_guard lock(mu_);
    return auths_;
  }
  std::vector<std::string> bodies() const {
    std::lock_guard lock(mu_);
    return bodies_;
  }

 private:
  Handler handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> count_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> high_water_{0};
  mutable std::mutex mu_;
  std::vector<std::string> auths_;
  std::vector<std::string> bodies_;
};

}  // namespace stub
