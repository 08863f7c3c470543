#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "misbench/dataset.hpp"
#include "misbench/model_client.hpp"

namespace misbench {

enum class Stage { Baseline, Misled };
std::string_view to_string(Stage s) noexcept;
std::optional<Stage> parse_stage(std::string_view s) noexcept;

// One model response. `correct` is present exactly when `parsed` is.
struct RunRecord {
  std::string run_id;
  std::string item_id;
  std::string model_name;
  Stage stage = Stage::Baseline;
  std::string condition_hash;
  nlohmann::json condition;  // canonical InstructionSpec
  int sample = 0;            // sample ordinal, or variant id for implicit runs
  // Misled: the injected target. Baseline sample 0: the probe target fixed
  // for stage 2.
  std::optional<std::string> target;
  std::string raw;
  std::optional<ParsedAnswer> parsed;
  std::optional<bool> correct;
  std::optional<double> confidence;  // stated confidence of the chosen option, in [0,1]
  std::int64_t timestamp = 0;
  std::uint64_t seed = 0;
};

// Sets parsed/correct (and confidence when the reply carries scores).
void score_record(RunRecord& record, const Item& item, bool with_confidence = false);

// Responses to identical input for one (item, model, condition).
struct Transcript {
  std::string item_id;
  std::string model_name;
  std::string condition_hash;
  std::vector<RunRecord> records;
};

// Groups records by (item, model, condition), keeping sample order.
std::vector<Transcript> group_transcripts(std::span<const RunRecord> records);

// Response value used for frequencies; unparsed replies share one value.
inline constexpr std::string_view kUnparsedToken = "<unparsed>";
std::string response_token(const RunRecord& record);

enum class UnparseablePolicy { Incorrect, Excluded };

struct MetricConfig {
  double epsilon = 0.0;
  int ece_bins = 10;
  UnparseablePolicy unparseable_policy = UnparseablePolicy::Incorrect;
};

// Correctness under the policy; nullopt when the record is excluded.
std::optional<bool> effective_correct(const RunRecord& record, UnparseablePolicy policy) noexcept;

std::size_t response_frequency(const Transcript& t, std::string_view response);

// Throws EmptyTranscript.
double consistency_rate(const Transcript& t);

// Unweighted mean of per-item consistency rates. Throws EmptyInput.
double average_consistency_rate(std::span<const Transcript> ts);

// |{i : C(R_i1)=from and C(R_i2)=to}| / (|{i : C(R_i1)=from}| + epsilon),
// nullopt when the denominator is zero. Records are joined on item id
// (lowest sample ordinal per side); throws JoinMismatch when an item lacks
// one stage.
std::optional<double> misleading_rate(std::span<const RunRecord> baseline,
                                      std::span<const RunRecord> misled, bool from, bool to,
                                      const MetricConfig& cfg = {});

struct MisleadingRates {
  std::optional<double> tt, tf, ff, ft;
  std::size_t n_true = 0;   // baseline-correct items in the join
  std::size_t n_false = 0;  // baseline-wrong items in the join
};

MisleadingRates misleading_rates(std::span<const RunRecord> baseline,
                                 std::span<const RunRecord> misled, const MetricConfig& cfg = {});

// Throws EmptyInput (also when every record is excluded).
double accuracy(std::span<const RunRecord> records,
                UnparseablePolicy policy = UnparseablePolicy::Incorrect);

// Equal-width bins on [0,1], right-closed: bin b holds ((b-1)/B, b/B] and a
// confidence of exactly 0 falls in the first bin. Throws EmptyInput.
double ece(std::span<const std::pair<double, bool>> pairs, int bins = 10);

// Bin index used by ece(), exposed for tests.
int ece_bin(double confidence, int bins) noexcept;

// Seeded choice of k variants without replacement; true when any chosen
// variant's correctness differs from the baseline's. Throws KTooLarge.
bool sample_k_aggregate(const RunRecord& baseline, std::span<const RunRecord> variant_runs,
                        std::size_t k, std::uint64_t seed,
                        UnparseablePolicy policy = UnparseablePolicy::Incorrect);

// [N(l,c) / sum_l N(l,c)] / [N_t(l) / sum_l N_t(l)] with N_t(l) the row sum.
// `counts` is indexed [level][category]. Throws ZeroMarginal.
double normalized_proportion(const std::vector<std::vector<double>>& counts, std::size_t level,
                             std::size_t category);

// Rank correlation with average ranks for ties; nullopt for fewer than two
// points or a constant series.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

// Metric summary of one group of records.
struct MetricReport {
  std::string group;
  std::size_t n_items = 0;
  std::optional<double> accuracy;          // baseline accuracy
  std::optional<double> misled_accuracy;
  MisleadingRates mr;
  std::optional<double> acr;
  std::optional<double> ece;
};

// Baseline/misled records are joined per condition; `consistency` supplies
// transcripts for ACR when non-empty. ECE uses baseline confidences.
MetricReport compute_report(std::string group, std::span<const RunRecord> baseline,
                            std::span<const RunRecord> misled,
                            std::span<const Transcript> consistency, const MetricConfig& cfg);

}  // namespace misbench
