#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "misbench/dataset.hpp"

namespace misbench {

// ---------------------------------------------------------------------------
// Explicit template catalog
// ---------------------------------------------------------------------------

enum class TemplateKey {
  AllFactors,
  ApparentAnswer,
  ArgueOtherwise,
  WhileOtherwise,
  ObviouslyCorrect,
  ContextPicture,
  GivenInformation,
  TheEvidence,
  CorrectAnswer,
  TrueAnswer,
  GPT4Answer,
  UserAnswer,
};

inline constexpr std::size_t kTemplateCount = 12;
inline constexpr std::string_view kTargetPlaceholder = "{option}";

struct ExplicitTemplate {
  TemplateKey key;
  std::string_view name;      // CamelCase key, as used in plan files
  std::string_view category;  // grouping from the catalog table
  std::string_view text;      // contains kTargetPlaceholder exactly once
};

const std::array<ExplicitTemplate, kTemplateCount>& template_catalog() noexcept;
const ExplicitTemplate& explicit_template(TemplateKey key) noexcept;
std::string_view to_string(TemplateKey key) noexcept;
// Throws UnknownTemplate.
TemplateKey parse_template_key(std::string_view name);

// "And the true answer is: B."
std::string instantiate(TemplateKey key, std::string_view target);

// Template sets used when combining several templates into one prompt.
const std::vector<TemplateKey>& combine5_templates();
const std::vector<TemplateKey>& combine10_templates();

// ---------------------------------------------------------------------------
// Instruction specs
// ---------------------------------------------------------------------------

enum class InstructionKind { None, Explicit, Implicit };
enum class Placement { AfterQuestion, BeforeQuestion };

std::string_view to_string(InstructionKind k) noexcept;
std::string_view to_string(Placement p) noexcept;

struct InstructionSpec {
  InstructionKind kind = InstructionKind::None;
  std::vector<TemplateKey> templates;
  std::string target;  // filled per item; ignored by condition identity
  Placement placement = Placement::AfterQuestion;
  int repeat = 1;
  std::vector<int> variant_ids;
  bool masked = false;

  static InstructionSpec none();
  static InstructionSpec explicit_one(TemplateKey key);
  static InstructionSpec explicit_many(std::vector<TemplateKey> keys);
  static InstructionSpec implicit(std::vector<int> variant_ids, bool masked = false);

  bool operator==(const InstructionSpec&) const = default;
};

// Throws InvalidSpec when an invariant fails.
void validate(const InstructionSpec& spec);

// Canonical, target-free form used for condition identity and storage.
nlohmann::json canonical_json(const InstructionSpec& spec);
InstructionSpec spec_from_json(const nlohmann::json& j);
// Stable 16-hex-digit hash of canonical_json().
std::string condition_hash(const InstructionSpec& spec);
// Short human label, e.g. "explicit[TrueAnswer]@after" or "implicit[0,1]+mask".
std::string condition_label(const InstructionSpec& spec);

// Parses the plan-file condition syntax:
//   "explicit templates=TrueAnswer,TheEvidence placement=after repeat=1"
//   "implicit variants=0,1,2 masked=true"
//   "none"
// Aliases "C5" and "C10" expand to the combined template sets.
InstructionSpec parse_condition(std::string_view text);

// T->F probe when stage 1 was correct (uniform wrong option), F->T probe
// (the answer key) otherwise. Deterministic in (item, seed).
std::string select_target_option(const Item& item, bool stage1_correct, std::uint64_t seed);

// Templates in spec order, each instantiated with spec.target, joined by a
// single space; the whole block repeated spec.repeat times.
std::string render_explicit_block(const InstructionSpec& spec);

// Question, options and optional instruction block laid out per placement.
std::string compose_user_text(const Item& item, const std::optional<std::string>& instruction,
                              Placement placement);

// compose_user_text() with the explicit block for spec.
std::string render_explicit(const Item& item, const InstructionSpec& spec);

// An instruction block (explicit or implicit guidance) repeated per spec.
std::string repeat_block(std::string_view block, int repeat);

// ---------------------------------------------------------------------------
// Defense prompts and benchmark system prompts
// ---------------------------------------------------------------------------

enum class DefenseVariant {
  None,
  Warning,
  Example1,
  Example2,
  Example3,
  COT,
  ImplicitWarning,
  ImplicitExample1,
  ImplicitExample2,
  ImplicitExample3,
};

std::string_view to_string(DefenseVariant v) noexcept;
std::optional<DefenseVariant> parse_defense(std::string_view name) noexcept;
std::string_view defense_text(DefenseVariant v) noexcept;

std::string_view benchmark_system_prompt(TaskType type) noexcept;

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

struct Message {
  std::string role;
  std::string content;
  std::optional<std::string> image_ref;

  bool operator==(const Message&) const = default;
};

std::vector<Message> assemble_eval_messages(const Item& item,
                                            const std::optional<std::string>& instruction,
                                            const InstructionSpec& spec, DefenseVariant defense);

// ---------------------------------------------------------------------------
// Implicit guidance generation
// ---------------------------------------------------------------------------

enum class GuidanceDirection { MisleadToWrong, HelpToRight };
std::string_view to_string(GuidanceDirection d) noexcept;

struct GeneratorRequest {
  std::vector<Message> messages;
  GuidanceDirection direction = GuidanceDirection::HelpToRight;
  std::string answer_key;  // the key the generator is told is correct
  int n_variants = 1;
};

std::string_view implicit_generation_system_prompt() noexcept;

// The mislead direction tells the generator a wrong key is correct;
// `wrong_target` selects it (otherwise the first wrong option is used).
// Throws InvalidSpec unless 1 <= n_variants <= 5.
GeneratorRequest assemble_implicit_gen_prompt(const Item& item, GuidanceDirection direction,
                                              int n_variants,
                                              const std::optional<std::string>& wrong_target = {},
                                              bool include_image = true);

// Splits a generator reply into at most `n` guidance strings ("Guidance k:"
// lines; a single unlabelled reply counts as one variant).
std::vector<std::string> parse_guidance_variants(std::string_view reply, int n);

struct MaskResult {
  std::string text;
  bool leaked = false;
};

inline constexpr std::string_view kMaskToken = "[MASK]";

// Replaces the correct option's text and answer-referring uses of its
// letter with "[MASK]".
MaskResult mask_answer_leak(std::string_view guidance, const Item& item);

}  // namespace misbench
