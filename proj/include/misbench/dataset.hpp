#pragma once

#include <cstdint>
#include <filesystem>
#include "json.hpp"
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace misbench {

enum class TaskType { MultipleChoice, YesNo };

enum class Task { Perception, Reasoning, Mastery };

enum class SubAbility { VI, TR, AP, SA, LR, SR, CDR, NS, SS, AA };

struct CategoryLabel {
  Task task = Task::Perception;
  SubAbility sub_ability = SubAbility::VI;

  bool operator==(const CategoryLabel&) const = default;
};

// Task that owns a sub-ability (Perception: VI/TR/AP/SA, Reasoning:
// LR/SR/CDR, Mastery: NS/SS/AA).
Task task_of(SubAbility sub) noexcept;

std::string_view to_string(TaskType t) noexcept;
std::string_view to_string(Task t) noexcept;
std::string_view to_string(SubAbility s) noexcept;
std::optional<TaskType> parse_task_type(std::string_view s) noexcept;
std::optional<Task> parse_task(std::string_view s) noexcept;
std::optional<SubAbility> parse_sub_ability(std::string_view s) noexcept;

// One answer option. For multiple-choice items `label` is a single
// uppercase letter; for yes/no items it is the literal word "Yes" or "No"
// and equals `text`.
struct Option {
  std::string label;
  std::string text;

  bool operator==(const Option&) const = default;
};

struct Item {
  std::string id;
  std::string question;
  std::optional<std::string> image_ref;
  std::vector<Option> options;
  std::string answer_key;
  TaskType task_type = TaskType::MultipleChoice;
  std::string source_dataset;
  CategoryLabel categories;

  const Option* find_option(std::string_view label) const noexcept;
  const Option& answer_option() const;
  bool operator==(const Item&) const = default;
};

// Throws InvalidAnswerKey or InvalidItem when an Item invariant fails.
void validate(const Item& item);

// Immutable after construction.
class ItemCollection {
 public:
  ItemCollection() = default;
  // Validates every item and rejects duplicate ids (DuplicateId).
  explicit ItemCollection(std::vector<Item> items);

  const std::vector<Item>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }
  const Item* find(std::string_view id) const noexcept;
  const Item& at(std::string_view id) const;
  auto begin() const noexcept { return items_.begin(); }
  auto end() const noexcept { return items_.end(); }

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// JSONL mapping. Parsing normalizes yes/no items to literal labels.
Item item_from_json(const nlohmann::json& j);
nlohmann::json item_to_json(const Item& item);

ItemCollection parse_items(std::string_view jsonl);
ItemCollection load_items(const std::filesystem::path& path);
std::string serialize_items(const ItemCollection& items);
void save_items(const ItemCollection& items, const std::filesystem::path& path);

// Permutes option texts under a seed-determined Fisher-Yates shuffle; the
// letters stay A, B, C... and the answer key follows its text. Throws
// NotApplicable for yes/no items.
Item shuffle_options(const Item& item, std::uint64_t seed);

// Deterministic fabricated items for simulations and tests: ids
// "syn-000000"..., a seeded answer key, and about `yes_no_fraction` yes/no
// items.
ItemCollection synthetic_items(std::size_t n, std::uint64_t seed, int n_options = 4,
                               double yes_no_fraction = 0.0);

}  // namespace misbench
