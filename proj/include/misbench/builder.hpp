#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "misbench/dataset.hpp"
#include "misbench/instruction.hpp"
#include "misbench/store.hpp"

namespace misbench {

// rows: items, cols: models; a cell is true when that model's answer
// flipped under the headline explicit condition.
struct MisledMatrix {
  std::vector<std::string> item_ids;
  std::vector<std::string> models;
  std::vector<std::vector<bool>> cells;  // [row][col]

  std::size_t row_of(std::string_view item_id) const;  // throws UnknownItem
};

// TrueAnswer, after the question, no repetition.
InstructionSpec headline_condition();

// One column per run (one model per run). A cell compares the run's
// baseline sample 0 with its headline misled record; items lacking either
// record in any run are left out. Throws MissingRun.
MisledMatrix build_misled_matrix(const RunStore& store, const std::vector<std::string>& run_ids,
                                 const InstructionSpec& condition = headline_condition());

// Throws UnknownItem.
int count_misled(const MisledMatrix& matrix, std::string_view item_id);

enum class StratumLevel { Low, Medium, High, FinetunePool, Unused };
inline constexpr std::size_t kStratumLevels = 5;
std::string_view to_string(StratumLevel l) noexcept;
std::optional<StratumLevel> parse_stratum_level(std::string_view s) noexcept;

struct Stratum {
  StratumLevel level = StratumLevel::Unused;
  std::vector<std::string> item_ids;  // matrix row order
};

// Exact: 6 -> Low, 9 -> Medium, total -> High, other counts strictly
// between 6 and total -> FinetunePool, the rest Unused.
// AtLeast: >= 6 -> Low, >= 9 -> Medium, total -> High, no pool.
enum class StratifyMode { Exact, AtLeast };

struct StratifyConfig {
  int total_models = 12;
  int low = 6;
  int medium = 9;
  StratifyMode mode = StratifyMode::Exact;
};

// Always returns all five levels in enum order.
std::vector<Stratum> stratify(const MisledMatrix& matrix, const StratifyConfig& cfg = {});

struct BenchmarkOptions {
  std::optional<std::size_t> cap;  // seeded uniform sample over Low+Medium+High
  std::uint64_t seed = 0;
};

struct BenchmarkManifest {
  std::vector<std::string> low, medium, high;
  std::optional<std::size_t> cap;
  std::uint64_t seed = 0;
  nlohmann::json rollups;  // per-stratum and total breakdowns

  std::vector<std::string> all_ids() const;
  nlohmann::json to_json() const;
};

// Throws UnknownItem when a stratum id is not in `items`.
BenchmarkManifest build_benchmark(const std::vector<Stratum>& strata, const ItemCollection& items,
                                  const BenchmarkOptions& opts = {});
BenchmarkManifest manifest_from_json(const nlohmann::json& j);

enum class FinetuneStrategy { S5, C5, C10, MixedDefault };
std::string_view to_string(FinetuneStrategy s) noexcept;
std::optional<FinetuneStrategy> parse_finetune_strategy(std::string_view s) noexcept;

struct FinetuneExample {
  std::string item_id;
  std::string kind;  // "explicit" or "implicit"
  nlohmann::json line;
};

// Implicit guidance text for a pool item, if any.
using GuidanceLookup = std::function<std::optional<std::string>(const std::string& item_id)>;

// Explicit lines: S5 gives five single-template lines per item, C5/C10 and
// MixedDefault one combined line. Implicit lines carry one guidance string
// each, drawn from pool items disjoint from the explicit draw. The
// assistant turn is the gold label. Throws OverlapDetected, PoolTooSmall,
// MissingGuidance.
std::vector<FinetuneExample> build_finetune(const Stratum& pool, const BenchmarkManifest& benchmark,
                                            const ItemCollection& items, std::size_t n_explicit,
                                            std::size_t n_implicit, FinetuneStrategy strategy,
                                            std::uint64_t seed,
                                            const GuidanceLookup& guidance = {});

// {"messages":[...]} lines, one per example.
std::string serialize_finetune(const std::vector<FinetuneExample>& examples);

// Guidance lookup over a store's masked or raw variant 0 for one run.
GuidanceLookup store_guidance_lookup(const RunStore& store, std::string run_id);

}  // namespace misbench
