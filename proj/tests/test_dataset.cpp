#include "misbench/dataset.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "misbench/error.hpp"
#include "misbench/rng.hpp"

using namespace misbench;

namespace {

std::string mc_line(const std::string& id, const std::string& answer = "B") {
  return R"({"id":")" + id +
         R"(","question":"Q?","options":[{"letter":"A","text":"Rome"},{"letter":"B","text":"Paris"},{"letter":"C","text":"Oslo"},{"letter":"D","text":"Bern"}],"answer":")" +
         answer + R"(","task_type":"MultipleChoice","source":"t","category":{"task":"Perception","sub":"VI"}})";
}

Item paris_item() { return parse_items(mc_line("q1")).items().front(); }

}  // namespace

TEST(Dataset, LoadsSingleItem) {
  const auto items = parse_items(mc_line("q1") + "\n");
  ASSERT_EQ(items.size(), 1u);
  EXPECT_EQ(items.at("q1").answer_option().text, "Paris");
}

TEST(Dataset, DuplicateIdRejected) {
  try {
    parse_items(mc_line("q1") + "\n" + mc_line("q1") + "\n");
    FAIL() << "expected DuplicateId";
  } catch (const DuplicateId& e) {
    EXPECT_EQ(e.id(), "q1");
  }
}

TEST(Dataset, AnswerOutsideOptionsRejected) {
  EXPECT_THROW(parse_items(mc_line("q1", "E")), InvalidAnswerKey);
}

TEST(Dataset, MalformedLineReportsLineNumber) {
  try {
    parse_items(mc_line("q1") + "\n\n{not json\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Dataset, MissingFieldIsParseError) {
  EXPECT_THROW(parse_items(R"({"id":"x","question":"q"})"), ParseError);
}

TEST(Dataset, NonContiguousLettersRejected) {
  const std::string bad =
      R"({"id":"x","question":"q","options":[{"letter":"A","text":"a"},{"letter":"C","text":"c"}],"answer":"A","task_type":"MultipleChoice","category":{"task":"Perception","sub":"VI"}})";
  EXPECT_THROW(parse_items(bad), ParseError);
}

TEST(Dataset, SubAbilityMustBelongToTask) {
  const std::string bad =
      R"({"id":"x","question":"q","options":[{"letter":"A","text":"a"},{"letter":"B","text":"b"}],"answer":"A","task_type":"MultipleChoice","category":{"task":"Reasoning","sub":"VI"}})";
  EXPECT_THROW(parse_items(bad), ParseError);
}

TEST(Dataset, YesNoNormalizedToWords) {
  const std::string yn =
      R"({"id":"y","question":"q","options":[{"letter":"A","text":"no"},{"letter":"B","text":"yes"}],"answer":"B","task_type":"true_false","category":{"task":"Mastery","sub":"AA"}})";
  const auto items = parse_items(yn);
  const auto& it = items.at("y");
  EXPECT_EQ(it.task_type, TaskType::YesNo);
  ASSERT_EQ(it.options.size(), 2u);
  EXPECT_EQ(it.options[0], (Option{"Yes", "Yes"}));
  EXPECT_EQ(it.options[1], (Option{"No", "No"}));
  EXPECT_EQ(it.answer_key, "Yes");
}

TEST(Dataset, FixtureFileLoads) {
  const auto items = load_items(std::filesystem::path(MISBENCH_TEST_DATA) / "items.jsonl");
  EXPECT_EQ(items.size(), 5u);
  EXPECT_EQ(items.at("q1").image_ref.value(), "img/q1.png");
  EXPECT_FALSE(items.at("q4").image_ref.has_value());
  EXPECT_EQ(items.at("q5").answer_key, "No");
}

TEST(Dataset, SerializeRoundTrip) {
  const auto a = load_items(std::filesystem::path(MISBENCH_TEST_DATA) / "items.jsonl");
  const auto b = parse_items(serialize_items(a));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.items()[i], b.items()[i]);
  const auto tmp = std::filesystem::temp_directory_path() / "misbench_roundtrip.jsonl";
  save_items(a, tmp);
  const auto c = load_items(tmp);
  EXPECT_EQ(serialize_items(a), serialize_items(c));
  std::filesystem::remove(tmp);
}

TEST(Dataset, SyntheticItemsRoundTrip) {
  const auto a = synthetic_items(300, 11, 4, 0.3);
  const auto b = parse_items(serialize_items(a));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.items()[i], b.items()[i]);
}

TEST(Dataset, ShuffleMatchesReplayedFisherYates) {
  const Item item = paris_item();
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL, 123456789ULL}) {
    // Oracle: a from-scratch Fisher-Yates over positions with the same stream.
    std::mt19937_64 eng(derive_seed(seed, item.id));
    auto draw = [&](std::uint64_t n) {
      const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n + 1) % n;
      for (;;) {
        const auto x = eng();
        if (x <= limit) return x % n;
      }
    };
    std::vector<std::string> texts = {"Rome", "Paris", "Oslo", "Bern"};
    for (std::size_t i = texts.size(); i > 1; --i) std::swap(texts[i - 1], texts[draw(i)]);

    const Item s = shuffle_options(item, seed);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(s.options[i].label, std::string(1, static_cast<char>('A' + i)));
      EXPECT_EQ(s.options[i].text, texts[i]) << "seed " << seed;
    }
    EXPECT_EQ(s.answer_option().text, "Paris");
  }
}

TEST(Dataset, ShuffleDeterministicAndNonMutating) {
  const Item item = paris_item();
  EXPECT_EQ(shuffle_options(item, 5), shuffle_options(item, 5));
  EXPECT_EQ(item, paris_item());
}

TEST(Dataset, ShufflePreservesTextsAndAnswerProperty) {
  const auto items = synthetic_items(200, 3, 5);
  for (const auto& item : items) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Item s = shuffle_options(item, seed);
      std::vector<std::string> a, b;
      for (const auto& o : item.options) a.push_back(o.text);
      for (const auto& o : s.options) b.push_back(o.text);
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      EXPECT_EQ(a, b);
      EXPECT_EQ(s.answer_option().text, item.answer_option().text);
      EXPECT_NO_THROW(validate(s));
    }
  }
}

TEST(Dataset, ShuffleRejectsYesNo) {
  const auto items = load_items(std::filesystem::path(MISBENCH_TEST_DATA) / "items.jsonl");
  EXPECT_THROW(shuffle_options(items.at("q3"), 1), NotApplicable);
}

TEST(Dataset, CollectionLookup) {
  const auto items = synthetic_items(10, 1);
  EXPECT_NE(items.find("syn-000003"), nullptr);
  EXPECT_EQ(items.find("nope"), nullptr);
  EXPECT_THROW(items.at("nope"), UnknownItem);
}
