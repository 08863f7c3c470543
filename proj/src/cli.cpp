#include "misbench/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "misbench/builder.hpp"
#include "misbench/dataset.hpp"
#include "misbench/error.hpp"
#include "misbench/instruction.hpp"
#include "misbench/metrics.hpp"
#include "misbench/pipeline.hpp"
#include "misbench/plan_file.hpp"
#include "misbench/report.hpp"
#include "misbench/store.hpp"

namespace misbench {

using nlohmann::json;

namespace {

constexpr const char* kSynopsis =
    "usage: misbench [--seed N] [--store PATH] [--plan PATH] <command> [options]\n"
    "commands:\n"
    "  ingest --input ITEMS [--output PATH]\n"
    "  templates list [--format text|json]\n"
    "  run baseline|mislead|consistency|implicit-gen [--run ID] [--limit N]\n"
    "  metrics --run ID... [--format json|csv|text] [--group-by DIM...]\n"
    "  stratify --run ID... [--total N] [--mode exact|at_least] [--output PATH]\n"
    "  build-benchmark --strata PATH --items ITEMS [--cap N] [--output PATH]\n"
    "  build-finetune --strata PATH --manifest PATH --items ITEMS [--strategy S]\n"
    "                 [--explicit N] [--implicit N] [--guidance-run ID] [--output PATH]\n"
    "  report --run ID... --out-dir DIR [--format json,csv,text,svg] [--group-by DIM...]\n"
    "  simulate-sweep [--susceptibilities LIST] [--items N] [--samples M] [--coupling C]\n";

class UsageError : public Error {
 public:
  using Error::Error;
};

struct Options {
  std::optional<std::uint64_t> seed;
  std::string store;
  std::string plan;

  std::string input, output, format, items, manifest, strata, out_dir, mode, strategy;
  std::string guidance_run, policy;
  std::vector<std::string> runs, group_by, conditions, formats;
  std::optional<std::string> run_id;
  std::optional<std::size_t> limit, cap;
  std::optional<int> samples, variants;
  int total = 12;
  std::size_t n_explicit = 1000, n_implicit = 1000, sweep_items = 1000;
  int sweep_samples = 20;
  double coupling = 0.5, epsilon = 0.0;
  std::vector<double> susceptibilities{0.0, 0.25, 0.5, 0.75, 1.0};
  bool progress = false;
};

void write_output(const std::string& path, const std::string& body, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << body;
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path);
  f << body;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(path + ": " + e.what());
  }
}

std::string store_path(const Options& o, const PlanFile* plan) {
  if (!o.store.empty()) return o.store;
  if (plan != nullptr) {
    if (auto s = plan->get("store")) return plan->resolve(*s).string();
  }
  throw UsageError("no store given (use --store or a plan with 'store =')");
}

std::uint64_t seed_of(const Options& o, const PlanFile* plan) {
  if (o.seed) return *o.seed;
  return plan != nullptr ? plan->get_u64("seed", 0) : 0;
}

UnparseablePolicy policy_of(const Options& o) {
  if (o.policy.empty() || o.policy == "incorrect") return UnparseablePolicy::Incorrect;
  if (o.policy == "excluded") return UnparseablePolicy::Excluded;
  throw UsageError("--policy must be incorrect or excluded");
}

std::vector<GroupBy> group_by_of(const Options& o) {
  std::vector<GroupBy> out;
  for (const auto& g : o.group_by) {
    auto v = parse_group_by(g);
    if (!v) throw UsageError("unknown group-by dimension: " + g);
    out.push_back(*v);
  }
  return out;
}

int cmd_ingest(const Options& o, std::ostream& out) {
  const auto items = load_items(o.input);
  std::size_t mc = 0;
  for (const auto& it : items) mc += it.task_type == TaskType::MultipleChoice ? 1 : 0;
  if (!o.output.empty()) save_items(items, o.output);
  out << items.size() << " items (" << mc << " multiple-choice, " << items.size() - mc
      << " yes/no)\n";
  return kExitOk;
}

int cmd_templates(const Options& o, std::ostream& out) {
  if (o.format == "json") {
    json j = json::array();
    for (const auto& t : template_catalog()) {
      j.push_back({{"name", t.name}, {"category", t.category}, {"text", t.text}});
    }
    out << j.dump(2) << "\n";
    return kExitOk;
  }
  if (!o.format.empty() && o.format != "text") throw UsageError("--format must be text or json");
  for (const auto& t : template_catalog()) {
    out << t.name << '\t' << t.category << '\t' << t.text << '\n';
  }
  return kExitOk;
}

int cmd_run(const std::string& which, const Options& o, std::ostream& out, std::ostream& err) {
  if (o.plan.empty()) throw UsageError("run needs --plan");
  const auto plan = load_plan(o.plan);
  const auto items_path = !o.items.empty() ? std::filesystem::path(o.items)
                                           : plan.resolve(plan.get_or("items", ""));
  if (items_path.empty()) throw InvalidPlan("plan has no 'items ='");
  const auto items = load_items(items_path);
  RunStore store(store_path(o, &plan));

  RunPlan rp;
  rp.run_id = o.run_id ? *o.run_id : plan.get_or("run_id", "");
  rp.items = &items;
  rp.seed = seed_of(o, &plan);
  rp.elicit_confidence = plan.get_bool("elicit_confidence", false);
  rp.wall_clock = plan.get_bool("wall_clock", false);
  rp.baseline_run = plan.get_or("baseline_run", "");
  rp.guidance_run = o.guidance_run.empty() ? plan.get_or("guidance_run", "") : o.guidance_run;
  rp.request_budget = o.limit;
  const auto defense_name = plan.get_or("defense", "None");
  const auto defense = parse_defense(defense_name);
  if (!defense) throw InvalidPlan("unknown defense variant: " + defense_name);
  rp.defense = *defense;
  for (const auto& c : o.conditions.empty() ? plan.conditions : o.conditions) {
    rp.conditions.push_back(parse_condition(c));
  }
  if (o.progress) {
    rp.progress = [&err, which](std::size_t done, std::size_t total) {
      err << '\r' << which << ' ' << done << '/' << total << (done == total ? "\n" : "")
          << std::flush;
    };
  }

  RunSummary s;
  if (which == "implicit-gen") {
    rp.responder = responder_from_plan(plan);
    auto generator = responder_from_plan(plan, "generator.");
    const int n = o.variants ? *o.variants : static_cast<int>(plan.get_int("variants", 5));
    s = generate_implicit_variants(rp, *generator, n, store);
  } else {
    rp.responder = responder_from_plan(plan);
    if (which == "baseline") {
      s = run_baseline(rp, store);
    } else if (which == "mislead") {
      s = run_misled(rp, store);
    } else {
      rp.n_baseline_samples =
          o.samples ? *o.samples : static_cast<int>(plan.get_int("samples", 20));
      s = run_consistency(rp, store);
    }
  }
  out << which << ": planned " << s.planned << ", skipped " << s.skipped << ", issued "
      << s.issued << ", written " << s.written << (s.interrupted ? " (stopped at limit)" : "")
      << "\n";
  return kExitOk;
}

int cmd_metrics(const Options& o, std::ostream& out) {
  if (o.runs.empty()) throw UsageError("metrics needs --run");
  RunStore store(store_path(o, nullptr));
  std::optional<ItemCollection> items;
  std::optional<BenchmarkManifest> manifest;
  ReportSpec spec;
  spec.run_ids = o.runs;
  spec.group_by = group_by_of(o);
  spec.metrics.epsilon = o.epsilon;
  spec.metrics.unparseable_policy = policy_of(o);
  if (!o.items.empty()) {
    items = load_items(o.items);
    spec.items = &*items;
  }
  if (!o.manifest.empty()) {
    manifest = manifest_from_json(read_json(o.manifest));
    spec.manifest = &*manifest;
  }
  const auto rep = build_report(spec, store);
  if (o.format.empty() || o.format == "json") {
    out << report_to_json(rep).dump(2) << "\n";
  } else if (o.format == "csv") {
    out << report_to_csv(rep);
  } else if (o.format == "text") {
    out << report_to_text(rep);
  } else {
    throw UsageError("--format must be json, csv or text");
  }
  return kExitOk;
}

StratifyMode mode_of(const std::string& m) {
  if (m.empty() || m == "exact") return StratifyMode::Exact;
  if (m == "at_least") return StratifyMode::AtLeast;
  throw UsageError("--mode must be exact or at_least");
}

int cmd_stratify(const Options& o, std::ostream& out) {
  if (o.runs.empty()) throw UsageError("stratify needs --run (one per model)");
  RunStore store(store_path(o, nullptr));
  const auto matrix = build_misled_matrix(store, o.runs);
  StratifyConfig cfg;
  cfg.total_models = o.total;
  cfg.mode = mode_of(o.mode);
  const auto strata = stratify(matrix, cfg);
  json j;
  j["schema"] = 1;
  j["total_models"] = cfg.total_models;
  j["mode"] = cfg.mode == StratifyMode::Exact ? "exact" : "at_least";
  j["models"] = matrix.models;
  j["strata"] = json::object();
  for (const auto& s : strata) j["strata"][std::string(to_string(s.level))] = s.item_ids;
  json counts = json::object();
  for (const auto& id : matrix.item_ids) counts[id] = count_misled(matrix, id);
  j["counts"] = std::move(counts);
  if (o.output.empty()) {
    out << j.dump(2) << "\n";
  } else {
    write_output(o.output, j.dump(2) + "\n", out);
    for (const auto& s : strata) out << to_string(s.level) << '\t' << s.item_ids.size() << '\n';
  }
  return kExitOk;
}

std::vector<Stratum> read_strata(const std::string& path) {
  const auto j = read_json(path);
  std::vector<Stratum> out;
  for (std::size_t i = 0; i < kStratumLevels; ++i) {
    Stratum s;
    s.level = static_cast<StratumLevel>(i);
    const auto name = std::string(to_string(s.level));
    if (j.at("strata").contains(name)) {
      s.item_ids = j["strata"][name].get<std::vector<std::string>>();
    }
    out.push_back(std::move(s));
  }
  return out;
}

int cmd_build_benchmark(const Options& o, std::ostream& out) {
  if (o.strata.empty() || o.items.empty()) {
    throw UsageError("build-benchmark needs --strata and --items");
  }
  const auto strata = read_strata(o.strata);
  const auto items = load_items(o.items);
  BenchmarkOptions opts;
  opts.cap = o.cap;
  opts.seed = seed_of(o, nullptr);
  const auto m = build_benchmark(strata, items, opts);
  write_output(o.output, m.to_json().dump(2) + "\n", out);
  if (!o.output.empty()) {
    out << "benchmark: " << m.low.size() << " low, " << m.medium.size() << " medium, "
        << m.high.size() << " high\n";
  }
  return kExitOk;
}

int cmd_build_finetune(const Options& o, std::ostream& out) {
  if (o.strata.empty() || o.manifest.empty() || o.items.empty()) {
    throw UsageError("build-finetune needs --strata, --manifest and --items");
  }
  const auto strategy = parse_finetune_strategy(o.strategy.empty() ? "MixedDefault" : o.strategy);
  if (!strategy) throw UsageError("--strategy must be S5, C5, C10 or MixedDefault");
  const auto strata = read_strata(o.strata);
  const auto manifest = manifest_from_json(read_json(o.manifest));
  const auto items = load_items(o.items);
  GuidanceLookup lookup;
  std::optional<RunStore> store;
  if (!o.guidance_run.empty()) {
    store.emplace(store_path(o, nullptr));
    lookup = store_guidance_lookup(*store, o.guidance_run);
  }
  const auto& pool = strata[static_cast<std::size_t>(StratumLevel::FinetunePool)];
  const auto examples = build_finetune(pool, manifest, items, o.n_explicit, o.n_implicit,
                                       *strategy, seed_of(o, nullptr), lookup);
  write_output(o.output, serialize_finetune(examples), out);
  if (!o.output.empty()) out << "fine-tune: " << examples.size() << " lines\n";
  return kExitOk;
}

int cmd_report(const Options& o, std::ostream& out) {
  if (o.runs.empty() || o.out_dir.empty()) throw UsageError("report needs --run and --out-dir");
  RunStore store(store_path(o, nullptr));
  std::optional<ItemCollection> items;
  std::optional<BenchmarkManifest> manifest;
  ReportSpec spec;
  spec.run_ids = o.runs;
  spec.group_by = group_by_of(o);
  spec.metrics.epsilon = o.epsilon;
  spec.metrics.unparseable_policy = policy_of(o);
  spec.formats.clear();
  for (const auto& f : o.formats.empty() ? std::vector<std::string>{"json"} : o.formats) {
    auto v = parse_report_format(f);
    if (!v) throw UsageError("unknown report format: " + f);
    spec.formats.push_back(*v);
  }
  if (!o.items.empty()) {
    items = load_items(o.items);
    spec.items = &*items;
  }
  if (!o.manifest.empty()) {
    manifest = manifest_from_json(read_json(o.manifest));
    spec.manifest = &*manifest;
  }
  for (const auto& p : render_report(spec, store, o.out_dir)) out << p.string() << "\n";
  return kExitOk;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  const auto r = simulate_sweep(o.susceptibilities, o.sweep_items, o.sweep_samples,
                                seed_of(o, nullptr), o.coupling);
  if (o.format == "text") {
    out << "susceptibility\tnoise\tmr_tf\tmean_cr\n";
    for (const auto& p : r.points) {
      out << format_number(p.susceptibility) << '\t' << format_number(p.noise) << '\t'
          << (p.mr_tf ? format_number(*p.mr_tf) : "N/A") << '\t' << format_number(p.mean_cr)
          << '\n';
    }
    out << "spearman\t" << (r.spearman ? format_number(*r.spearman) : "undefined") << '\n';
  } else {
    out << sweep_to_json(r).dump(2) << "\n";
  }
  return kExitOk;
}

}  // namespace

int cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Misleading-instruction robustness harness", "misbench"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Master seed");
  app.add_option("--store", o.store, "Run store (JSONL)");
  app.add_option("--plan", o.plan, "Plan file");
  app.fallthrough();

  auto* ingest = app.add_subcommand("ingest", "Validate and normalize an item file");
  ingest->add_option("--input", o.input)->required();
  ingest->add_option("--output", o.output);

  auto* templates = app.add_subcommand("templates", "Explicit template catalog");
  templates->require_subcommand(1);
  auto* tlist = templates->add_subcommand("list", "Print the catalog");
  tlist->add_option("--format", o.format);

  auto* run = app.add_subcommand("run", "Run a pipeline pass from a plan");
  run->require_subcommand(1);
  std::map<std::string, CLI::App*> run_subs;
  for (const char* name : {"baseline", "mislead", "consistency", "implicit-gen"}) {
    auto* sub = run->add_subcommand(name);
    sub->add_option("--run", o.run_id, "Run id (overrides the plan)");
    sub->add_option("--items", o.items, "Item file (overrides the plan)");
    sub->add_option("--limit", o.limit, "Stop after this many new requests");
    sub->add_option("--condition", o.conditions, "Condition (overrides the plan)");
    sub->add_option("--samples", o.samples, "Samples per item (consistency)");
    sub->add_option("--variants", o.variants, "Guidance variants per item (implicit-gen)");
    sub->add_option("--guidance-run", o.guidance_run, "Run holding generated guidance");
    sub->add_flag("--progress", o.progress, "Print a progress line");
    run_subs[name] = sub;
  }

  auto add_report_opts = [&o](CLI::App* sub) {
    sub->add_option("--run", o.runs)->required();
    sub->add_option("--group-by", o.group_by)->delimiter(',');
    sub->add_option("--items", o.items);
    sub->add_option("--manifest", o.manifest);
    sub->add_option("--epsilon", o.epsilon);
    sub->add_option("--policy", o.policy, "Unparsed replies: incorrect or excluded");
  };
  auto* metrics = app.add_subcommand("metrics", "Print metrics for runs");
  add_report_opts(metrics);
  metrics->add_option("--format", o.format);

  auto* strat = app.add_subcommand("stratify", "Difficulty strata from per-model runs");
  strat->add_option("--run", o.runs)->required();
  strat->add_option("--total", o.total);
  strat->add_option("--mode", o.mode);
  strat->add_option("--output", o.output);

  auto* bench = app.add_subcommand("build-benchmark", "Benchmark manifest from strata");
  bench->add_option("--strata", o.strata)->required();
  bench->add_option("--items", o.items)->required();
  bench->add_option("--cap", o.cap);
  bench->add_option("--output", o.output);

  auto* ft = app.add_subcommand("build-finetune", "Fine-tuning conversations from the pool");
  ft->add_option("--strata", o.strata)->required();
  ft->add_option("--manifest", o.manifest)->required();
  ft->add_option("--items", o.items)->required();
  ft->add_option("--strategy", o.strategy);
  ft->add_option("--explicit", o.n_explicit);
  ft->add_option("--implicit", o.n_implicit);
  ft->add_option("--guidance-run", o.guidance_run);
  ft->add_option("--output", o.output);

  auto* report = app.add_subcommand("report", "Write report files");
  add_report_opts(report);
  report->add_option("--out-dir", o.out_dir)->required();
  report->add_option("--format", o.formats)->delimiter(',');

  auto* sweep = app.add_subcommand("simulate-sweep", "Simulated MR against CR sweep");
  sweep->add_option("--susceptibilities", o.susceptibilities)->delimiter(',');
  sweep->add_option("--items", o.sweep_items);
  sweep->add_option("--samples", o.sweep_samples);
  sweep->add_option("--coupling", o.coupling);
  sweep->add_option("--format", o.format);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "misbench: " << e.what() << "\n" << kSynopsis;
    return kExitUsage;
  }
  if (seed_opt->count() > 0) o.seed = seed_value;

  try {
    if (ingest->parsed()) return cmd_ingest(o, out);
    if (tlist->parsed()) return cmd_templates(o, out);
    for (const auto& [name, sub] : run_subs) {
      if (sub->parsed()) return cmd_run(name, o, out, err);
    }
    if (metrics->parsed()) return cmd_metrics(o, out);
    if (strat->parsed()) return cmd_stratify(o, out);
    if (bench->parsed()) return cmd_build_benchmark(o, out);
    if (ft->parsed()) return cmd_build_finetune(o, out);
    if (report->parsed()) return cmd_report(o, out);
    if (sweep->parsed()) return cmd_sweep(o, out);
  } catch (const UsageError& e) {
    err << "misbench: " << e.what() << "\n" << kSynopsis;
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "misbench: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << kSynopsis;
  return kExitUsage;
}

int cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli(args, std::cout, std::cerr);
}

}  // namespace misbench
