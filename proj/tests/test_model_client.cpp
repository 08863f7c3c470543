#include "misbench/model_client.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <future>
#include <thread>

#include "misbench/error.hpp"
#include "stub_server.hpp"

using namespace misbench;
using namespace std::chrono_literals;

namespace {

const ItemCollection& fixture() {
  static const ItemCollection items =
      load_items(std::filesystem::path(MISBENCH_TEST_DATA) / "items.jsonl");
  return items;
}

const Item& mc() { return fixture().at("q1"); }  // A red, B blue, C green, D white
const Item& yn() { return fixture().at("q3"); }

Endpoint endpoint_for(const stub::Server& s) {
  Endpoint e;
  e.base_url = s.base_url();
  e.model_name = "stub-model";
  e.timeout = 2000ms;
  e.max_retries = 2;
  e.initial_backoff = 1ms;
  e.max_backoff = 4ms;
  return e;
}

std::vector<Message> ask(const std::string& text) {
  return {Message{"system", "sys", std::nullopt}, Message{"user", text, std::nullopt}};
}

std::filesystem::path temp_file(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove(p);
  return p;
}

}  // namespace

TEST(WireFormat, RequestCarriesImageParts) {
  Endpoint e;
  e.model_name = "m";
  const auto j = chat_request_json(e, {Message{"user", "hi", std::string("img/x.png")}});
  EXPECT_EQ(j.at("model"), "m");
  const auto& c = j.at("messages").at(0).at("content");
  ASSERT_TRUE(c.is_array());
  EXPECT_EQ(c.at(0).at("text"), "hi");
  EXPECT_EQ(c.at(1).at("image_url").at("url"), "img/x.png");
}

TEST(WireFormat, MalformedResponseIsChatError) {
  EXPECT_THROW(chat_response_text(nlohmann::json{{"nope", 1}}), ChatError);
  EXPECT_EQ(chat_response_text(nlohmann::json::parse(
                R"({"choices":[{"message":{"content":"B"}}]})")),
            "B");
}

TEST(ChatClient, ReturnsAssistantText) {
  stub::Server s([](const nlohmann::json& b, int) { return stub::Reply{200, "echo:" + stub::user_text(b)}; });
  ChatClient c(endpoint_for(s));
  EXPECT_EQ(c.chat(ask("hello")), "echo:hello");
  EXPECT_EQ(c.live_requests(), 1u);
}

TEST(ChatClient, TransientStatusRetriedThenExhausted) {
  for (int status : {429, 500, 503}) {
    stub::Server s([status](const nlohmann::json&, int) { return stub::Reply{status, "busy"}; });
    ChatClient c(endpoint_for(s));
    try {
      c.chat(ask("x"));
      FAIL() << "expected ExhaustedRetries";
    } catch (const ExhaustedRetries& e) {
      EXPECT_EQ(e.attempts(), 3);
    }
    EXPECT_EQ(s.count(), 3) << status;
  }
}

TEST(ChatClient, RecoversAfterTransientFailures) {
  stub::Server s([](const nlohmann::json&, int i) {
    return i < 2 ? stub::Reply{429, "slow down"} : stub::Reply{200, "C"};
  });
  ChatClient c(endpoint_for(s));
  EXPECT_EQ(c.chat(ask("x")), "C");
  EXPECT_EQ(s.count(), 3);
}

TEST(ChatClient, ClientErrorNotRetried) {
  stub::Server s([](const nlohmann::json&, int) { return stub::Reply{400, "bad request"}; });
  ChatClient c(endpoint_for(s));
  try {
    c.chat(ask("x"));
    FAIL() << "expected HttpStatus";
  } catch (const HttpStatus& e) {
    EXPECT_EQ(e.code(), 400);
  }
  EXPECT_EQ(s.count(), 1);
}

TEST(ChatClient, SendsBearerToken) {
  stub::Server s([](const nlohmann::json&, int) { return stub::Reply{200, "A"}; });
  ::setenv("MISBENCH_TEST_KEY", "sekrit", 1);
  auto e = endpoint_for(s);
  e.api_key_env = "MISBENCH_TEST_KEY";
  ChatClient c(e);
  c.chat(ask("x"));
  ASSERT_EQ(s.auths().size(), 1u);
  EXPECT_EQ(s.auths().front(), "Bearer sekrit");
}

TEST(ChatClient, MissingKeyFailsBeforeNetwork) {
  stub::Server s([](const nlohmann::json&, int) { return stub::Reply{200, "A"}; });
  ::unsetenv("MISBENCH_TEST_ABSENT");
  auto e = endpoint_for(s);
  e.api_key_env = "MISBENCH_TEST_ABSENT";
  ChatClient c(e);
  EXPECT_THROW(c.chat(ask("x")), AuthMissing);
  EXPECT_EQ(s.count(), 0);
}

TEST(ChatClient, SlowServerTimesOut) {
  stub::Server s([](const nlohmann::json&, int) { return stub::Reply{200, "A", 600ms}; });
  auto e = endpoint_for(s);
  e.timeout = 100ms;
  e.max_retries = 1;
  ChatClient c(e);
  EXPECT_THROW(c.chat(ask("x")), Timeout);
  EXPECT_EQ(s.count(), 2);
}

TEST(ChatClient, ConcurrencyCapped) {
  stub::Server s([](const nlohmann::json&, int) { return stub::Reply{200, "A", 30ms}; });
  auto e = endpoint_for(s);
  e.max_in_flight = 3;
  ChatClient c(e);
  std::vector<std::future<std::string>> fs;
  for (int i = 0; i < 12; ++i) {
    fs.push_back(std::async(std::launch::async, [&c, i] { return c.chat(ask(std::to_string(i))); }));
  }
  for (auto& f : fs) EXPECT_EQ(f.get(), "A");
  EXPECT_EQ(s.count(), 12);
  EXPECT_LE(s.high_water(), 3);
  EXPECT_LE(c.high_water(), 3);
  EXPECT_GE(s.high_water(), 2);
}

TEST(Cassette, RecordThenReplayWithoutNetwork) {
  const auto path = temp_file("misbench_cassette.jsonl");
  {
    stub::Server s([](const nlohmann::json& b, int) { return stub::Reply{200, "r:" + stub::user_text(b)}; });
    ChatClient c(endpoint_for(s), std::make_shared<Cassette>(path, CassetteMode::Record));
    EXPECT_EQ(c.chat(ask("one")), "r:one");
    EXPECT_EQ(c.chat(ask("two")), "r:two");
    EXPECT_EQ(c.chat(ask("one"), 1), "r:one");
    EXPECT_EQ(c.chat(ask("one")), "r:one");  // served from the cassette
    EXPECT_EQ(s.count(), 3);
  }
  stub::Server s([](const nlohmann::json&, int) { return stub::Reply{200, "live"}; });
  auto cassette = std::make_shared<Cassette>(path, CassetteMode::Replay);
  EXPECT_EQ(cassette->size(), 3u);
  ChatClient c(endpoint_for(s), cassette);
  EXPECT_EQ(c.chat(ask("two")), "r:two");
  EXPECT_EQ(c.chat(ask("one"), 1), "r:one");
  EXPECT_THROW(c.chat(ask("three")), CassetteMiss);
  EXPECT_EQ(s.count(), 0);
  EXPECT_EQ(c.live_requests(), 0u);
  std::filesystem::remove(path);
}

TEST(Cassette, ReplayNeedsExistingFile) {
  EXPECT_THROW(Cassette(temp_file("misbench_no_cassette.jsonl"), CassetteMode::Replay), ChatError);
}

TEST(ParseChoice, PathsForMultipleChoice) {
  EXPECT_EQ(parse_choice("B", mc()), (ParsedAnswer{"B", "B", ParsePath::Exact}));
  EXPECT_EQ(parse_choice(" (b). ", mc()).path, ParsePath::Exact);
  EXPECT_EQ(parse_choice(" (b). ", mc()).label, "B");
  EXPECT_EQ(parse_choice("C because it is green", mc()),
            (ParsedAnswer{"C", "C because it is green", ParsePath::LeadingToken}));
  EXPECT_EQ(parse_choice("The answer is D.", mc()).label, "D");
  EXPECT_EQ(parse_choice("The answer is D.", mc()).path, ParsePath::PatternFallback);
  EXPECT_EQ(parse_choice("I would say blue", mc()).label, "B");
  EXPECT_EQ(parse_choice("I would say blue", mc()).path, ParsePath::PatternFallback);
  EXPECT_THROW(parse_choice("no idea", mc()), Unparseable);
  EXPECT_THROW(parse_choice("", mc()), Unparseable);
}

TEST(ParseChoice, LowercaseLetterInsideProseIsNotALabel) {
  // "a" in running text must not be read as option A.
  EXPECT_EQ(parse_choice("it is a green one", mc()).label, "C");
}

TEST(ParseChoice, YesNo) {
  EXPECT_EQ(parse_choice("yes", yn()).label, "Yes");
  EXPECT_EQ(parse_choice("No.", yn()).label, "No");
  EXPECT_EQ(parse_choice("Yes, there is.", yn()).path, ParsePath::LeadingToken);
  EXPECT_THROW(parse_choice("maybe", yn()), Unparseable);
}

TEST(ParseConfidences, RescalesNearHundred) {
  const auto c = parse_confidences("B\nA:50 B:48", mc());
  ASSERT_EQ(c.size(), 4u);
  EXPECT_NEAR(c.at("A"), 50.0 / 98.0 * 100.0, 1e-9);
  EXPECT_NEAR(c.at("B"), 48.0 / 98.0 * 100.0, 1e-9);
  EXPECT_EQ(c.at("C"), 0.0);
  EXPECT_NEAR(c.at("A"), 51.02, 0.005);
}

TEST(ParseConfidences, RejectsBadSums) {
  try {
    parse_confidences("A:50 B:20", mc());
    FAIL() << "expected SumOutOfRange";
  } catch (const SumOutOfRange& e) {
    EXPECT_DOUBLE_EQ(e.stated_sum(), 70.0);
  }
  EXPECT_THROW(parse_confidences("A:90 B:20", mc()), SumOutOfRange);
  EXPECT_THROW(parse_confidences("nothing here", mc()), Unparseable);
}

TEST(ParseConfidences, YesNoLabels) {
  const auto c = parse_confidences("Yes: 70% No: 30%", yn());
  EXPECT_DOUBLE_EQ(c.at("Yes"), 70.0);
  EXPECT_DOUBLE_EQ(c.at("No"), 30.0);
}

TEST(Simulate, MatchesStatedAccuracy) {
  const auto items = synthetic_items(4000, 21, 4);
  for (const auto& [p, target_correct] :
       std::vector<std::pair<SimParams, bool>>{{{0.7, 0.0, 0.0}, false},
                                               {{0.6, 0.5, 0.2}, false},
                                               {{0.3, 0.8, 0.1}, true}}) {
    double hits = 0, expected = 0;
    for (const auto& item : items) {
      std::optional<std::string> target;
      if (p.susceptibility > 0) {
        target = target_correct ? item.answer_key
                                : (item.answer_key == "A" ? std::string("B") : std::string("A"));
      }
      const auto reply = simulate(item, target, p, 5);
      hits += parse_choice(reply, item).label == item.answer_key;
      expected += simulated_accuracy(item, target, p);
    }
    EXPECT_NEAR(hits / items.size(), expected / items.size(), 0.025);
  }
}

TEST(Simulate, DeterministicPerOrdinal) {
  const SimParams p{0.5, 0.0, 0.5};
  EXPECT_EQ(simulate(mc(), std::nullopt, p, 1, 3), simulate(mc(), std::nullopt, p, 1, 3));
  int differ = 0;
  for (std::uint64_t k = 0; k < 50; ++k) {
    differ += simulate(mc(), std::nullopt, p, 1, k) != simulate(mc(), std::nullopt, p, 1, k + 1);
  }
  EXPECT_GT(differ, 0);
}

TEST(Simulate, ConfidenceReplyParses) {
  SimParams p{0.8, 0.0, 0.0, ConfidenceMode::Calibrated};
  const auto reply = simulate(mc(), std::nullopt, p, 9);
  const auto label = parse_choice(reply, mc()).label;
  const auto c = parse_confidences(reply, mc());
  EXPECT_NEAR(c.at(label), 80.0, 1e-6);
  p.confidence = ConfidenceMode::Fixed;
  p.fixed_confidence = 1.0;
  EXPECT_NEAR(parse_confidences(simulate(mc(), std::nullopt, p, 9), mc()).at(label), 100.0, 1e-6);
}

TEST(Simulate, RejectsOutOfRangeParams) {
  EXPECT_THROW(validate(SimParams{1.5}), Error);
  EXPECT_THROW(SimulatedResponder("m", SimParams{0.5, -0.1}), Error);
}

TEST(Judges, VerdictParsing) {
  EXPECT_TRUE(parse_verdict("Yes"));
  EXPECT_TRUE(parse_verdict(" yes. "));
  EXPECT_FALSE(parse_verdict("NO"));
  EXPECT_THROW(parse_verdict("Yes, mostly"), JudgeAmbiguous);
}

TEST(Judges, ImplicitnessByLabel) {
  const auto r = parse_implicitness("Helping Guidance: 4\nMisleading Guidance: 7");
  EXPECT_DOUBLE_EQ(r.first, 7.0);
  EXPECT_DOUBLE_EQ(r.second, 4.0);
  EXPECT_THROW(parse_implicitness("Misleading Guidance: 11\nHelping Guidance: 2"), RatingOutOfRange);
  EXPECT_THROW(parse_implicitness("seven and four"), Unparseable);
}

TEST(Judges, FreeFormThroughStub) {
  stub::Server s([](const nlohmann::json& b, int) {
    const auto t = stub::user_text(b);
    return stub::Reply{200, t.find("Model answer: blue") != std::string::npos ? "Yes" : "No"};
  });
  ChatClient c(endpoint_for(s));
  EXPECT_TRUE(judge_free_form(c, mc(), "blue"));
  EXPECT_FALSE(judge_free_form(c, mc(), "red"));
  const auto msgs = free_form_judge_messages(mc(), "blue");
  EXPECT_NE(msgs.back().content.find("Gold answer: B: blue"), std::string::npos);
}
