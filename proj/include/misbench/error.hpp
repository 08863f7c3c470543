#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace misbench {

// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::string reason)
      : Error("line " + std::to_string(line) + ": " + reason),
        line_(line),
        reason_(std::move(reason)) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::size_t line_;
  std::string reason_;
};

class DuplicateId : public Error {
 public:
  explicit DuplicateId(std::string id)
      : Error("duplicate item id: " + id), id_(std::move(id)) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class InvalidAnswerKey : public Error {
 public:
  explicit InvalidAnswerKey(std::string id)
      : Error("answer key not among options for item: " + id), id_(std::move(id)) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class InvalidItem : public Error {
 public:
  using Error::Error;
};

class NotApplicable : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// instruction
// ---------------------------------------------------------------------------

class UnknownTemplate : public Error {
 public:
  explicit UnknownTemplate(const std::string& name)
      : Error("unknown explicit template: " + name) {}
};

class InvalidSpec : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// model_client
// ---------------------------------------------------------------------------

class ChatError : public Error {
 public:
  using Error::Error;
};

class Timeout : public ChatError {
 public:
  using ChatError::ChatError;
};

class HttpStatus : public ChatError {
 public:
  HttpStatus(int code, const std::string& body)
      : ChatError("HTTP status " + std::to_string(code) + ": " + body), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

class ExhaustedRetries : public ChatError {
 public:
  ExhaustedRetries(int attempts, const std::string& last)
      : ChatError("gave up after " + std::to_string(attempts) + " attempts: " + last),
        attempts_(attempts) {}
  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

class AuthMissing : public ChatError {
 public:
  explicit AuthMissing(const std::string& env)
      : ChatError("environment variable " + env + " is not set") {}
};

class CassetteMiss : public ChatError {
 public:
  explicit CassetteMiss(const std::string& hash)
      : ChatError("no cassette entry for request " + hash) {}
};

class Unparseable : public Error {
 public:
  explicit Unparseable(std::string raw)
      : Error("unparseable response: " + raw), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

class SumOutOfRange : public Error {
 public:
  explicit SumOutOfRange(double sum)
      : Error("confidence sum out of range: " + std::to_string(sum)), sum_(sum) {}
  double stated_sum() const noexcept { return sum_; }

 private:
  double sum_;
};

class JudgeAmbiguous : public Error {
 public:
  explicit JudgeAmbiguous(const std::string& raw) : Error("ambiguous verdict: " + raw) {}
};

class RatingOutOfRange : public Error {
 public:
  explicit RatingOutOfRange(double rating)
      : Error("rating out of range [1,10]: " + std::to_string(rating)) {}
};

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

class EmptyTranscript : public Error {
 public:
  EmptyTranscript() : Error("transcript has no records") {}
};

class EmptyInput : public Error {
 public:
  explicit EmptyInput(const std::string& what) : Error("empty input: " + what) {}
};

class JoinMismatch : public Error {
 public:
  explicit JoinMismatch(std::vector<std::string> ids)
      : Error("items missing a stage: " + join(ids)), ids_(std::move(ids)) {}
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  static std::string join(const std::vector<std::string>& ids) {
    std::string out;
    for (const auto& id : ids) {
      if (!out.empty()) out += ",";
      out += id;
    }
    return out;
  }
  std::vector<std::string> ids_;
};

class KTooLarge : public Error {
 public:
  KTooLarge(std::size_t k, std::size_t n)
      : Error("k=" + std::to_string(k) + " exceeds " + std::to_string(n) + " variants") {}
};

class ZeroMarginal : public Error {
 public:
  ZeroMarginal() : Error("zero marginal in normalization") {}
};

// ---------------------------------------------------------------------------
// pipeline / builder / report
// ---------------------------------------------------------------------------

// Raised after a pass finishes when some items failed; progress for the rest
// is already persisted.
class EndpointError : public Error {
 public:
  EndpointError(std::vector<std::string> ids, const std::string& first_cause)
      : Error(std::to_string(ids.size()) + " item(s) failed; first: " + first_cause),
        ids_(std::move(ids)) {}
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  std::vector<std::string> ids_;
};

class GeneratorError : public EndpointError {
 public:
  using EndpointError::EndpointError;
};

class MissingBaseline : public Error {
 public:
  explicit MissingBaseline(std::vector<std::string> ids)
      : Error("no baseline record for " + std::to_string(ids.size()) + " item(s)"),
        ids_(std::move(ids)) {}
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  std::vector<std::string> ids_;
};

class MissingGuidance : public Error {
 public:
  using Error::Error;
};

class InvalidPlan : public Error {
 public:
  using Error::Error;
};

class StoreError : public Error {
 public:
  using Error::Error;
};

class UnknownItem : public Error {
 public:
  explicit UnknownItem(const std::string& id) : Error("unknown item: " + id) {}
};

class PoolTooSmall : public Error {
 public:
  PoolTooSmall(std::size_t need, std::size_t have)
      : Error("fine-tune pool too small: need " + std::to_string(need) + ", have " +
              std::to_string(have)) {}
};

class OverlapDetected : public Error {
 public:
  explicit OverlapDetected(const std::string& id)
      : Error("fine-tune pool overlaps benchmark at item " + id) {}
};

class MissingRun : public Error {
 public:
  explicit MissingRun(const std::string& run) : Error("no records for run: " + run) {}
};

}  // namespace misbench
