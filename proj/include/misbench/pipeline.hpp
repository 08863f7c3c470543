#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "misbench/dataset.hpp"
#include "misbench/instruction.hpp"
#include "misbench/metrics.hpp"
#include "misbench/model_client.hpp"
#include "misbench/store.hpp"

namespace misbench {

struct RunPlan {
  std::string run_id;
  const ItemCollection* items = nullptr;
  std::shared_ptr<Responder> responder;
  std::vector<InstructionSpec> conditions;  // misled passes only
  DefenseVariant defense = DefenseVariant::None;
  int n_baseline_samples = 1;
  std::uint64_t seed = 0;
  int max_in_flight = 0;  // 0: the responder's limit
  bool elicit_confidence = false;
  bool wall_clock = false;  // stamp records with real time (breaks byte-identical replay)
  // Where stage-1 records and generated guidance live; empty means run_id.
  std::string baseline_run;
  std::string guidance_run;
  // Stop dispatching after this many new requests (an orderly interruption).
  std::optional<std::size_t> request_budget;
  // Optional progress line sink: (done, total).
  std::function<void(std::size_t, std::size_t)> progress;
};

// Throws InvalidPlan.
void validate(const RunPlan& plan);

struct RunSummary {
  std::size_t planned = 0;  // keys the pass covers
  std::size_t skipped = 0;  // already present in the store
  std::size_t issued = 0;   // requests sent to the responder
  std::size_t failed = 0;
  std::size_t written = 0;
  bool interrupted = false;  // request budget ran out
};

// Condition of a baseline pass.
const InstructionSpec& baseline_condition();

// One Baseline record per item (n_baseline_samples of them). Sample 0 also
// stores the probe target for stage 2. Existing keys are skipped. Throws
// EndpointError after the pass when some items failed.
RunSummary run_baseline(const RunPlan& plan, RunStore& store);

// One Misled record per item and condition. Throws MissingBaseline before
// any request, EndpointError after the pass.
RunSummary run_misled(const RunPlan& plan, RunStore& store);

// n_baseline_samples (>= 2) Baseline records per item.
RunSummary run_consistency(const RunPlan& plan, RunStore& store);

// n guidance variants per item plus their masked copies. The direction
// follows the baseline: helping when stage 1 was wrong, misleading toward
// the stored probe target otherwise. Generator replies with too few
// variants are stored with ok=false. Throws MissingBaseline,
// GeneratorError.
RunSummary generate_implicit_variants(const RunPlan& plan, Responder& generator, int n,
                                      RunStore& store);

// The stored baseline record (sample 0) of an item, if any.
std::optional<RunRecord> baseline_record(const RunStore& store, const std::string& run_id,
                                         const std::string& item_id);

}  // namespace misbench
