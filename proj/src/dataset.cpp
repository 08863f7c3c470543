#include "misbench/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "misbench/error.hpp"
#include "misbench/rng.hpp"

namespace misbench {
namespace {

using nlohmann::json;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::optional<std::string> yes_no_word(std::string_view s) {
  const auto l = lower(s);
  if (l == "yes") return "Yes";
  if (l == "no") return "No";
  return std::nullopt;
}

constexpr std::array<std::string_view, 10> kSubNames = {"VI", "TR", "AP", "SA", "LR",
                                                        "SR", "CDR", "NS", "SS", "AA"};

const json& required(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    throw InvalidItem(std::string("missing field \"") + key + "\"");
  }
  return *it;
}

std::string required_string(const json& j, const char* key) {
  const auto& v = required(j, key);
  if (!v.is_string()) throw InvalidItem(std::string("field \"") + key + "\" must be a string");
  return v.get<std::string>();
}

}  // namespace

Task task_of(SubAbility sub) noexcept {
  switch (sub) {
    case SubAbility::VI:
    case SubAbility::TR:
    case SubAbility::AP:
    case SubAbility::SA:
      return Task::Perception;
    case SubAbility::LR:
    case SubAbility::SR:
    case SubAbility::CDR:
      return Task::Reasoning;
    case SubAbility::NS:
    case SubAbility::SS:
    case SubAbility::AA:
      return Task::Mastery;
  }
  return Task::Perception;
}

std::string_view to_string(TaskType t) noexcept {
  return t == TaskType::MultipleChoice ? "MultipleChoice" : "YesNo";
}

std::string_view to_string(Task t) noexcept {
  switch (t) {
    case Task::Perception:
      return "Perception";
    case Task::Reasoning:
      return "Reasoning";
    case Task::Mastery:
      return "Mastery";
  }
  return "Perception";
}

std::string_view to_string(SubAbility s) noexcept {
  return kSubNames[static_cast<std::size_t>(s)];
}

std::optional<TaskType> parse_task_type(std::string_view s) noexcept {
  const auto l = lower(s);
  if (l == "multiplechoice" || l == "multiple_choice" || l == "mc") return TaskType::MultipleChoice;
  if (l == "yesno" || l == "yes_no" || l == "yn" || l == "true_false") return TaskType::YesNo;
  return std::nullopt;
}

std::optional<Task> parse_task(std::string_view s) noexcept {
  const auto l = lower(s);
  if (l == "perception") return Task::Perception;
  if (l == "reasoning") return Task::Reasoning;
  if (l == "mastery") return Task::Mastery;
  return std::nullopt;
}

std::optional<SubAbility> parse_sub_ability(std::string_view s) noexcept {
  for (std::size_t i = 0; i < kSubNames.size(); ++i) {
    if (kSubNames[i] == s) return static_cast<SubAbility>(i);
  }
  return std::nullopt;
}

const Option* Item::find_option(std::string_view label) const noexcept {
  for (const auto& o : options) {
    if (o.label == label) return &o;
  }
  return nullptr;
}

const Option& Item::answer_option() const {
  const Option* o = find_option(answer_key);
  if (o == nullptr) throw InvalidAnswerKey(id);
  return *o;
}

void validate(const Item& item) {
  if (item.id.empty()) throw InvalidItem("empty item id");
  if (item.options.size() < 2) throw InvalidItem("item " + item.id + " needs at least 2 options");
  if (item.task_type == TaskType::YesNo) {
    if (item.options.size() != 2 || item.options[0] != Option{"Yes", "Yes"} ||
        item.options[1] != Option{"No", "No"}) {
      throw InvalidItem("yes/no item " + item.id + " must have options Yes, No");
    }
  } else {
    for (std::size_t i = 0; i < item.options.size(); ++i) {
      const auto& label = item.options[i].label;
      if (i >= 26 || label.size() != 1 || label[0] != static_cast<char>('A' + i)) {
        throw InvalidItem("item " + item.id + ": option letters must run A, B, C... (got \"" +
                          label + "\" at position " + std::to_string(i) + ")");
      }
    }
  }
  const auto hits = std::count_if(item.options.begin(), item.options.end(),
                                  [&](const Option& o) { return o.label == item.answer_key; });
  if (hits != 1) throw InvalidAnswerKey(item.id);
  if (task_of(item.categories.sub_ability) != item.categories.task) {
    throw InvalidItem("item " + item.id + ": sub-ability " +
                      std::string(to_string(item.categories.sub_ability)) + " is not a " +
                      std::string(to_string(item.categories.task)) + " ability");
  }
}

ItemCollection::ItemCollection(std::vector<Item> items) : items_(std::move(items)) {
  index_.reserve(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    validate(items_[i]);
    if (!index_.emplace(items_[i].id, i).second) throw DuplicateId(items_[i].id);
  }
}

const Item* ItemCollection::find(std::string_view id) const noexcept {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &items_[it->second];
}

const Item& ItemCollection::at(std::string_view id) const {
  const Item* item = find(id);
  if (item == nullptr) throw UnknownItem(std::string(id));
  return *item;
}

Item item_from_json(const json& j) {
  if (!j.is_object()) throw InvalidItem("record must be a JSON object");
  Item item;
  item.id = required_string(j, "id");
  item.question = required_string(j, "question");
  if (auto it = j.find("image"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw InvalidItem("field \"image\" must be a string");
    item.image_ref = it->get<std::string>();
  }
  const auto type_name = required_string(j, "task_type");
  const auto type = parse_task_type(type_name);
  if (!type) throw InvalidItem("unknown task_type \"" + type_name + "\"");
  item.task_type = *type;
  if (auto it = j.find("source"); it != j.end() && it->is_string()) {
    item.source_dataset = it->get<std::string>();
  }

  const auto& cat = required(j, "category");
  if (!cat.is_object()) throw InvalidItem("field \"category\" must be an object");
  const auto task_name = required_string(cat, "task");
  const auto sub_name = required_string(cat, "sub");
  const auto task = parse_task(task_name);
  const auto sub = parse_sub_ability(sub_name);
  if (!task) throw InvalidItem("unknown category task \"" + task_name + "\"");
  if (!sub) throw InvalidItem("unknown category sub \"" + sub_name + "\"");
  item.categories = {*task, *sub};

  const auto& opts = required(j, "options");
  if (!opts.is_array()) throw InvalidItem("field \"options\" must be an array");
  for (const auto& o : opts) {
    if (!o.is_object()) throw InvalidItem("options entries must be objects");
    item.options.push_back({required_string(o, "letter"), required_string(o, "text")});
  }
  item.answer_key = required_string(j, "answer");

  if (item.task_type == TaskType::YesNo) {
    // Map whatever letters the source used onto the literal words.
    std::vector<Option> normalized;
    std::optional<std::string> answer = yes_no_word(item.answer_key);
    for (const auto& o : item.options) {
      auto word = yes_no_word(o.text);
      if (!word) throw InvalidItem("yes/no item " + item.id + " has option text \"" + o.text + "\"");
      if (!answer && o.label == item.answer_key) answer = word;
      normalized.push_back({*word, *word});
    }
    std::sort(normalized.begin(), normalized.end(),
              [](const Option& a, const Option& b) { return a.label == "Yes" && b.label == "No"; });
    item.options = std::move(normalized);
    if (!answer) throw InvalidAnswerKey(item.id);
    item.answer_key = *answer;
  }
  validate(item);
  return item;
}

json item_to_json(const Item& item) {
  json j;
  j["id"] = item.id;
  j["question"] = item.question;
  if (item.image_ref) j["image"] = *item.image_ref;
  j["options"] = json::array();
  for (const auto& o : item.options) j["options"].push_back({{"letter", o.label}, {"text", o.text}});
  j["answer"] = item.answer_key;
  j["task_type"] = std::string(to_string(item.task_type));
  j["source"] = item.source_dataset;
  j["category"] = {{"task", std::string(to_string(item.categories.task))},
                   {"sub", std::string(to_string(item.categories.sub_ability))}};
  return j;
}

ItemCollection parse_items(std::string_view jsonl) {
  std::vector<Item> items;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= jsonl.size()) {
    auto nl = jsonl.find('\n', pos);
    if (nl == std::string_view::npos) nl = jsonl.size();
    auto line = jsonl.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, e.what());
    }
    Item item;
    try {
      item = item_from_json(j);
    } catch (const InvalidItem& e) {
      throw ParseError(line_no, e.what());
    }
    if (!seen.emplace(item.id, line_no).second) throw DuplicateId(item.id);
    items.push_back(std::move(item));
  }
  return ItemCollection(std::move(items));
}

ItemCollection load_items(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open item file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_items(buf.str());
}

std::string serialize_items(const ItemCollection& items) {
  std::string out;
  for (const auto& item : items) {
    out += item_to_json(item).dump();
    out += '\n';
  }
  return out;
}

void save_items(const ItemCollection& items, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write item file: " + path.string());
  out << serialize_items(items);
}

Item shuffle_options(const Item& item, std::uint64_t seed) {
  if (item.task_type != TaskType::MultipleChoice) {
    throw NotApplicable("option shuffling applies to multiple-choice items only");
  }
  std::vector<std::string> texts;
  texts.reserve(item.options.size());
  for (const auto& o : item.options) texts.push_back(o.text);
  (void)item.answer_option();
  const auto answer_pos = static_cast<std::size_t>(item.answer_key[0] - 'A');

  std::vector<std::size_t> order(texts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, item.id));
  rng.shuffle(std::span<std::size_t>(order));

  Item out = item;
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.options[i].text = texts[order[i]];
    if (order[i] == answer_pos) out.answer_key = std::string(1, static_cast<char>('A' + i));
  }
  return out;
}

ItemCollection synthetic_items(std::size_t n, std::uint64_t seed, int n_options,
                               double yes_no_fraction) {
  static constexpr std::array<std::string_view, 8> kWords = {
      "red", "green", "blue", "yellow", "purple", "orange", "white", "black"};
  if (n_options < 2 || n_options > static_cast<int>(kWords.size())) {
    throw InvalidItem("synthetic items need 2..8 options");
  }
  static constexpr std::array<SubAbility, 10> kSubs = {
      SubAbility::VI, SubAbility::TR, SubAbility::AP, SubAbility::SA, SubAbility::LR,
      SubAbility::SR, SubAbility::CDR, SubAbility::NS, SubAbility::SS, SubAbility::AA};
  Rng rng(derive_seed(seed, "synthetic-items"));
  std::vector<Item> items;
  items.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Item it;
    char id[32];
    std::snprintf(id, sizeof id, "syn-%06zu", i);
    it.id = id;
    it.question = "What is the colour of object " + std::to_string(i) + "?";
    it.source_dataset = "synthetic";
    const auto sub = kSubs[i % kSubs.size()];
    it.categories = {task_of(sub), sub};
    if (rng.uniform() < yes_no_fraction) {
      it.task_type = TaskType::YesNo;
      it.question = "Is object " + std::to_string(i) + " red?";
      it.options = {{"Yes", "Yes"}, {"No", "No"}};
      it.answer_key = rng.below(2) == 0 ? "Yes" : "No";
    } else {
      for (int k = 0; k < n_options; ++k) {
        it.options.push_back({std::string(1, static_cast<char>('A' + k)),
                              std::string(kWords[static_cast<std::size_t>(k)])});
      }
      it.answer_key =
          std::string(1, static_cast<char>('A' + rng.below(static_cast<std::uint64_t>(n_options))));
    }
    items.push_back(std::move(it));
  }
  return ItemCollection(std::move(items));
}

}  // namespace misbench
