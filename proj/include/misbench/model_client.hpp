#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "misbench/dataset.hpp"
#include "misbench/instruction.hpp"

namespace misbench {

// ---------------------------------------------------------------------------
// Endpoint and wire format
// ---------------------------------------------------------------------------

struct Endpoint {
  std::string base_url;             // e.g. "https://api.openai.com/v1"
  std::string model_name;
  std::string api_key_env;          // empty: no Authorization header
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  double temperature = 0.0;
  int max_in_flight = 4;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::milliseconds max_backoff{8000};
};

void validate(const Endpoint& endpoint);

// {"model": ..., "messages": [{"role", "content"}], "temperature": ...}.
// A message with an image reference carries content parts:
// [{"type":"text","text":...}, {"type":"image_url","image_url":{"url":...}}].
nlohmann::json chat_request_json(const Endpoint& endpoint, const std::vector<Message>& messages);

// choices[0].message.content; throws ChatError on any other shape.
std::string chat_response_text(const nlohmann::json& response);

// Stable key for a request body.
std::string request_hash(const nlohmann::json& request);

// ---------------------------------------------------------------------------
// Cassettes: JSONL lines {"key": <request hash>, "response": <text>}.
// ---------------------------------------------------------------------------

enum class CassetteMode { Record, Replay };

class Cassette {
 public:
  Cassette(std::filesystem::path path, CassetteMode mode);

  CassetteMode mode() const noexcept { return mode_; }
  std::optional<std::string> lookup(const std::string& key) const;
  void record(const std::string& key, const std::string& response);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  CassetteMode mode_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::string> entries_;
};

// ---------------------------------------------------------------------------
// Chat client
// ---------------------------------------------------------------------------

// Caps concurrent holders; records the high-water mark.
class InFlightLimiter {
 public:
  explicit InFlightLimiter(int limit);

  void acquire();
  void release();
  int high_water() const noexcept { return high_water_.load(); }
  int limit() const noexcept { return limit_; }

  class Guard {
   public:
    explicit Guard(InFlightLimiter& l) : l_(l) { l_.acquire(); }
    ~Guard() { l_.release(); }
    Guard(const Guard&) = delete;
    Guard& operator=(const Guard&) = delete;

   private:
    InFlightLimiter& l_;
  };

 private:
  int limit_;
  int in_flight_ = 0;
  std::atomic<int> high_water_{0};
  std::mutex mu_;
  std::condition_variable cv_;
};

// Thread-safe. Transient failures (connection errors, timeouts, 429, 5xx)
// are retried with exponential backoff; other statuses fail immediately.
class ChatClient {
 public:
  explicit ChatClient(Endpoint endpoint, std::shared_ptr<Cassette> cassette = nullptr);

  // `sample` distinguishes repeated draws of one request in the cassette.
  std::string chat(const std::vector<Message>& messages, std::uint64_t sample = 0);

  const Endpoint& endpoint() const noexcept { return endpoint_; }
  // Requests that reached the network (cassette hits excluded).
  std::uint64_t live_requests() const noexcept { return live_requests_.load(); }
  int high_water() const noexcept { return limiter_.high_water(); }

 private:
  Endpoint endpoint_;
  std::shared_ptr<Cassette> cassette_;
  InFlightLimiter limiter_;
  std::atomic<std::uint64_t> live_requests_{0};
};

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

enum class ParsePath { Exact, LeadingToken, PatternFallback };
std::string_view to_string(ParsePath p) noexcept;
std::optional<ParsePath> parse_parse_path(std::string_view s) noexcept;

struct ParsedAnswer {
  std::string label;  // option letter, or "Yes"/"No"
  std::string raw;
  ParsePath path = ParsePath::Exact;

  bool operator==(const ParsedAnswer&) const = default;
};

// Rules, first hit wins: whole reply is a label (Exact); first token is a
// label (LeadingToken); first standalone label anywhere, then a full option
// text (PatternFallback). Throws Unparseable.
ParsedAnswer parse_choice(std::string_view raw, const Item& item);

// Per-option scores "A:85 B:10 C:5". Options the reply omits score 0. A
// stated sum within [95, 105] is rescaled to exactly 100; anything else
// throws SumOutOfRange. Throws Unparseable when no option score is found.
std::map<std::string, double> parse_confidences(std::string_view raw, const Item& item);

// Instruction appended to the benchmark system prompt when asking for
// per-option confidences.
std::string_view confidence_elicitation_prompt() noexcept;

// ---------------------------------------------------------------------------
// Simulated model
// ---------------------------------------------------------------------------

enum class ConfidenceMode { None, Fixed, Calibrated };

struct SimParams {
  double base_accuracy = 1.0;
  double susceptibility = 0.0;
  double noise = 0.0;
  ConfidenceMode confidence = ConfidenceMode::None;
  double fixed_confidence = 1.0;  // used by ConfidenceMode::Fixed
};

void validate(const SimParams& params);

// With probability `noise` a uniformly random option; otherwise, when a
// target is injected, the target with probability `susceptibility`;
// otherwise the key with probability `base_accuracy`, else a uniformly
// random wrong option. Randomness is derived from (item id, seed, ordinal).
// When confidences are enabled the reply is "<label>\n<L>:<score> ...".
std::string simulate(const Item& item, const std::optional<std::string>& injected_target,
                     const SimParams& params, std::uint64_t seed, std::uint64_t ordinal = 0);

// Probability that simulate() answers correctly for these inputs.
double simulated_accuracy(const Item& item, const std::optional<std::string>& injected_target,
                          const SimParams& params) noexcept;

// ---------------------------------------------------------------------------
// Responders: anything that turns a message list into a reply.
// ---------------------------------------------------------------------------

struct CallContext {
  const Item* item = nullptr;
  std::optional<std::string> injected_target;
  std::uint64_t seed = 0;
  std::uint64_t ordinal = 0;
};

class Responder {
 public:
  virtual ~Responder() = default;
  virtual std::string respond(const std::vector<Message>& messages, const CallContext& ctx) = 0;
  virtual std::string model_name() const = 0;
  virtual int max_in_flight() const { return 1; }
};

class EndpointResponder final : public Responder {
 public:
  explicit EndpointResponder(std::shared_ptr<ChatClient> client) : client_(std::move(client)) {}
  std::string respond(const std::vector<Message>& messages, const CallContext& ctx) override {
    return client_->chat(messages, ctx.ordinal);
  }
  std::string model_name() const override { return client_->endpoint().model_name; }
  int max_in_flight() const override { return client_->endpoint().max_in_flight; }
  ChatClient& client() noexcept { return *client_; }

 private:
  std::shared_ptr<ChatClient> client_;
};

class SimulatedResponder final : public Responder {
 public:
  SimulatedResponder(std::string name, SimParams params, int max_in_flight = 8)
      : name_(std::move(name)), params_(params), max_in_flight_(max_in_flight) {
    validate(params_);
  }
  std::string respond(const std::vector<Message>&, const CallContext& ctx) override;
  std::string model_name() const override { return name_; }
  int max_in_flight() const override { return max_in_flight_; }
  std::uint64_t calls() const noexcept { return calls_.load(); }

 private:
  std::string name_;
  SimParams params_;
  int max_in_flight_;
  std::atomic<std::uint64_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Judges
// ---------------------------------------------------------------------------

std::vector<Message> free_form_judge_messages(const Item& item, std::string_view answer_text);
// Accepts a bare yes/no (case-insensitive, trailing punctuation allowed);
// throws JudgeAmbiguous otherwise.
bool parse_verdict(std::string_view raw);
bool judge_free_form(ChatClient& grader, const Item& item, std::string_view answer_text);

std::string_view implicitness_system_prompt() noexcept;
std::vector<Message> implicitness_judge_messages(const Item& item, std::string_view misleading,
                                                 std::string_view helping);
// Ratings are matched by label, not position. Throws Unparseable or
// RatingOutOfRange.
std::pair<double, double> parse_implicitness(std::string_view raw);
std::pair<double, double> judge_implicitness(ChatClient& grader, const Item& item,
                                             std::string_view misleading,
                                             std::string_view helping);

}  // namespace misbench
