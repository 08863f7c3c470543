#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "misbench/builder.hpp"
#include "misbench/dataset.hpp"
#include "misbench/metrics.hpp"
#include "misbench/store.hpp"

namespace misbench {

inline constexpr int kReportSchemaVersion = 1;

enum class GroupBy { Model, Difficulty, Task, SubAbility, QuestionType, Condition };
std::string_view to_string(GroupBy g) noexcept;
std::optional<GroupBy> parse_group_by(std::string_view s) noexcept;

enum class ReportFormat { Json, Csv, Text, Svg };
std::string_view to_string(ReportFormat f) noexcept;
std::optional<ReportFormat> parse_report_format(std::string_view s) noexcept;

struct ReportSpec {
  std::vector<std::string> run_ids;
  std::vector<GroupBy> group_by;
  std::vector<ReportFormat> formats{ReportFormat::Json};
  MetricConfig metrics;
  // Needed for task, sub_ability and question-type grouping.
  const ItemCollection* items = nullptr;
  // Needed for difficulty grouping; items outside it group as "Unstratified".
  const BenchmarkManifest* manifest = nullptr;
};

// Throws Error when an invariant fails.
void validate(const ReportSpec& spec);

// Per item: share of misled records whose correctness differs from the
// baseline, against the item's consistency rate.
struct ScatterPoint {
  std::string item_id;
  std::string model;
  double mr = 0.0;
  double cr = 0.0;
};

struct Report {
  std::vector<std::string> group_by;
  std::vector<MetricReport> groups;
  std::vector<ScatterPoint> scatter;
};

// Throws MissingRun, UnknownItem.
Report build_report(const ReportSpec& spec, const RunStore& store);

// Long-format metric names, in output order.
const std::vector<std::string>& report_metric_names();
// nullopt renders as N/A.
std::optional<double> report_metric(const MetricReport& r, std::string_view name);

nlohmann::json report_to_json(const Report& r);
std::string report_to_csv(const Report& r);   // group,metric,value
std::string report_to_text(const Report& r);  // rates as percentages, two decimals
std::string scatter_to_csv(const Report& r);
std::string scatter_to_svg(const Report& r);

// Writes report.{json,csv,txt} and scatter.{csv,svg} per spec.formats;
// returns the paths written.
std::vector<std::filesystem::path> render_report(const ReportSpec& spec, const RunStore& store,
                                                 const std::filesystem::path& out_dir);

// Six significant figures, shared by every machine-readable rendering.
std::string format_number(double v);

struct SweepPoint {
  double susceptibility = 0.0;
  double noise = 0.0;
  std::optional<double> mr_tf;
  double mean_cr = 0.0;
};

struct SweepReport {
  std::vector<SweepPoint> points;
  std::optional<double> spearman;  // over (mr_tf, mean_cr); undefined below two points
};

// Per susceptibility s: a simulated baseline and TrueAnswer misled pass
// (noise 0) and an m-sample consistency pass with noise = coupling * s.
SweepReport simulate_sweep(const std::vector<double>& susceptibilities, std::size_t n_items,
                           int m_samples, std::uint64_t seed, double coupling = 0.5);

nlohmann::json sweep_to_json(const SweepReport& r);

}  // namespace misbench
