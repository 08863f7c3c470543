#include "misbench/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "misbench/error.hpp"
#include "misbench/pipeline.hpp"

namespace misbench {

using nlohmann::json;

std::string_view to_string(GroupBy g) noexcept {
  switch (g) {
    case GroupBy::Model: return "model";
    case GroupBy::Difficulty: return "difficulty";
    case GroupBy::Task: return "task";
    case GroupBy::SubAbility: return "sub_ability";
    case GroupBy::QuestionType: return "question_type";
    case GroupBy::Condition: return "condition";
  }
  return "model";
}

std::optional<GroupBy> parse_group_by(std::string_view s) noexcept {
  for (auto g : {GroupBy::Model, GroupBy::Difficulty, GroupBy::Task, GroupBy::SubAbility,
                 GroupBy::QuestionType, GroupBy::Condition}) {
    if (to_string(g) == s) return g;
  }
  return std::nullopt;
}

std::string_view to_string(ReportFormat f) noexcept {
  switch (f) {
    case ReportFormat::Json: return "json";
    case ReportFormat::Csv: return "csv";
    case ReportFormat::Text: return "text";
    case ReportFormat::Svg: return "svg";
  }
  return "json";
}

std::optional<ReportFormat> parse_report_format(std::string_view s) noexcept {
  for (auto f : {ReportFormat::Json, ReportFormat::Csv, ReportFormat::Text, ReportFormat::Svg}) {
    if (to_string(f) == s) return f;
  }
  return std::nullopt;
}

void validate(const ReportSpec& spec) {
  if (spec.run_ids.empty()) throw Error("report needs at least one run id");
  if (spec.formats.empty()) throw Error("report needs at least one format");
  for (auto g : spec.group_by) {
    const bool needs_items =
        g == GroupBy::Task || g == GroupBy::SubAbility || g == GroupBy::QuestionType;
    if (needs_items && spec.items == nullptr) {
      throw Error("grouping by " + std::string(to_string(g)) + " needs the item collection");
    }
    if (g == GroupBy::Difficulty && spec.manifest == nullptr) {
      throw Error("grouping by difficulty needs a benchmark manifest");
    }
  }
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace {

constexpr std::string_view kBaselineCondition = "\x01";

struct Keyed {
  std::vector<std::string> dims;  // condition slot holds kBaselineCondition for baselines
  const RunRecord* rec;
};

std::string group_label(const std::vector<GroupBy>& by, const std::vector<std::string>& dims) {
  if (by.empty()) return "all";
  std::string out;
  for (std::size_t i = 0; i < by.size(); ++i) {
    if (i) out += ", ";
    out += to_string(by[i]);
    out += "=";
    out += dims[i];
  }
  return out;
}

}  // namespace

Report build_report(const ReportSpec& spec, const RunStore& store) {
  validate(spec);
  std::unordered_map<std::string, std::string> difficulty;
  if (spec.manifest) {
    for (const auto& id : spec.manifest->low) difficulty[id] = "Low";
    for (const auto& id : spec.manifest->medium) difficulty[id] = "Medium";
    for (const auto& id : spec.manifest->high) difficulty[id] = "High";
  }

  // Records are joined per (model, item): a model's baseline, misled and
  // consistency passes may live in different runs.
  std::vector<RunRecord> all;
  std::vector<RunRecord> per_run;  // item ids prefixed by run, for transcripts
  for (const auto& run : spec.run_ids) {
    auto recs = store.records(run);
    if (recs.empty()) throw MissingRun(run);
    for (auto& r : recs) {
      RunRecord t = r;
      t.item_id = run + '\x1f' + r.item_id;
      per_run.push_back(std::move(t));
      all.push_back(std::move(r));
    }
  }

  auto dims_of = [&](const RunRecord& r) {
    std::vector<std::string> d;
    const Item* item = nullptr;
    if (spec.items) {
      item = spec.items->find(r.item_id);
      if (item == nullptr) throw UnknownItem(r.item_id);
    }
    for (auto g : spec.group_by) {
      switch (g) {
        case GroupBy::Model: d.push_back(r.model_name); break;
        case GroupBy::Difficulty: {
          auto it = difficulty.find(r.item_id);
          d.push_back(it == difficulty.end() ? "Unstratified" : it->second);
          break;
        }
        case GroupBy::Task: d.emplace_back(to_string(item->categories.task)); break;
        case GroupBy::SubAbility: d.emplace_back(to_string(item->categories.sub_ability)); break;
        case GroupBy::QuestionType: d.emplace_back(to_string(item->task_type)); break;
        case GroupBy::Condition:
          if (r.stage == Stage::Baseline) {
            d.emplace_back(kBaselineCondition);
          } else {
            d.push_back(condition_label(spec_from_json(r.condition)));
          }
          break;
      }
    }
    return d;
  };

  const auto cond_slot = std::find(spec.group_by.begin(), spec.group_by.end(), GroupBy::Condition);
  const bool by_condition = cond_slot != spec.group_by.end();
  const auto cond_index = static_cast<std::size_t>(cond_slot - spec.group_by.begin());

  auto joined = [](const RunRecord& r) {
    RunRecord t = r;
    t.item_id = r.model_name + '\x1f' + r.item_id;
    return t;
  };

  // Baseline key (condition slot blanked) -> records.
  std::map<std::vector<std::string>, std::vector<RunRecord>> baselines, transcripts_src;
  std::map<std::vector<std::string>, std::vector<RunRecord>> misled;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& r = all[i];
    auto d = dims_of(r);
    if (r.stage == Stage::Baseline) {
      if (by_condition) d[cond_index].clear();
      baselines[d].push_back(joined(r));
      transcripts_src[d].push_back(per_run[i]);
    } else {
      misled[d].push_back(joined(r));
    }
  }

  std::set<std::vector<std::string>> keys;
  for (const auto& [k, _] : misled) keys.insert(k);
  for (const auto& [k, _] : baselines) {
    if (!by_condition) {
      keys.insert(k);
      continue;
    }
    // A condition-grouped baseline only stands alone when nothing was misled.
    bool covered = false;
    for (const auto& [mk, __] : misled) {
      auto bk = mk;
      bk[cond_index].clear();
      if (bk == k) covered = true;
    }
    if (!covered) {
      auto nk = k;
      nk[cond_index] = "none";
      keys.insert(nk);
    }
  }

  Report rep;
  for (auto g : spec.group_by) rep.group_by.emplace_back(to_string(g));
  static const std::vector<RunRecord> kNone;
  for (const auto& k : keys) {
    auto bk = k;
    if (by_condition) bk[cond_index].clear();
    const auto b_it = baselines.find(bk);
    const auto& base = b_it == baselines.end() ? kNone : b_it->second;
    const auto m_it = misled.find(k);
    const auto& mis = m_it == misled.end() ? kNone : m_it->second;
    std::vector<Transcript> ts;
    if (auto t_it = transcripts_src.find(bk); t_it != transcripts_src.end()) {
      for (auto& t : group_transcripts(t_it->second)) {
        if (t.records.size() >= 2) ts.push_back(std::move(t));
      }
    }
    rep.groups.push_back(compute_report(group_label(spec.group_by, k), base, mis, ts, spec.metrics));
  }

  // Scatter: one point per (model, item) with both misled records and a
  // multi-sample transcript.
  std::map<std::pair<std::string, std::string>, std::optional<bool>> base0;
  std::map<std::pair<std::string, std::string>, std::pair<std::size_t, std::size_t>> flips;
  std::map<std::pair<std::string, std::string>, double> cr;
  for (const auto& r : all) {
    if (r.stage == Stage::Baseline && r.condition_hash == condition_hash(baseline_condition()) &&
        r.sample == 0) {
      base0.emplace(std::make_pair(r.model_name, r.item_id),
                    effective_correct(r, spec.metrics.unparseable_policy));
    }
  }
  for (const auto& r : all) {
    if (r.stage != Stage::Misled) continue;
    const auto key = std::make_pair(r.model_name, r.item_id);
    auto b = base0.find(key);
    if (b == base0.end() || !b->second) continue;
    const auto c = effective_correct(r, spec.metrics.unparseable_policy);
    if (!c) continue;
    auto& f = flips[key];
    ++f.second;
    if (*c != *b->second) ++f.first;
  }
  std::vector<RunRecord> base_only;
  for (const auto& r : per_run) {
    if (r.stage == Stage::Baseline) base_only.push_back(r);
  }
  for (const auto& t : group_transcripts(base_only)) {
    if (t.records.size() < 2) continue;
    const auto item = t.item_id.substr(t.item_id.find('\x1f') + 1);
    cr.emplace(std::make_pair(t.model_name, item), consistency_rate(t));
  }
  for (const auto& [key, f] : flips) {
    auto c = cr.find(key);
    if (c == cr.end() || f.second == 0) continue;
    rep.scatter.push_back({key.second, key.first,
                           static_cast<double>(f.first) / static_cast<double>(f.second),
                           c->second});
  }
  return rep;
}

const std::vector<std::string>& report_metric_names() {
  static const std::vector<std::string> names = {"accuracy", "misled_accuracy", "mr_tt", "mr_tf",
                                                 "mr_ff",    "mr_ft",           "acr",   "ece"};
  return names;
}

std::optional<double> report_metric(const MetricReport& r, std::string_view name) {
  if (name == "accuracy") return r.accuracy;
  if (name == "misled_accuracy") return r.misled_accuracy;
  if (name == "mr_tt") return r.mr.tt;
  if (name == "mr_tf") return r.mr.tf;
  if (name == "mr_ff") return r.mr.ff;
  if (name == "mr_ft") return r.mr.ft;
  if (name == "acr") return r.acr;
  if (name == "ece") return r.ece;
  throw Error("unknown report metric: " + std::string(name));
}

namespace {

// Rounds through the shared six-figure rendering so every format agrees.
json number_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return std::stod(format_number(*v));
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string percent(const std::optional<double>& v) {
  if (!v) return "N/A";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
  return buf;
}

}  // namespace

json report_to_json(const Report& r) {
  json j;
  j["schema"] = kReportSchemaVersion;
  j["group_by"] = r.group_by;
  j["groups"] = json::array();
  for (const auto& g : r.groups) {
    json row;
    row["group"] = g.group;
    row["n_items"] = g.n_items;
    row["accuracy"] = number_json(g.accuracy);
    row["misled_accuracy"] = number_json(g.misled_accuracy);
    row["mr"] = {{"TT", number_json(g.mr.tt)},
                 {"TF", number_json(g.mr.tf)},
                 {"FF", number_json(g.mr.ff)},
                 {"FT", number_json(g.mr.ft)},
                 {"n_true", g.mr.n_true},
                 {"n_false", g.mr.n_false}};
    row["acr"] = number_json(g.acr);
    row["ece"] = number_json(g.ece);
    j["groups"].push_back(std::move(row));
  }
  j["scatter"] = json::array();
  for (const auto& p : r.scatter) {
    j["scatter"].push_back({{"item_id", p.item_id},
                            {"model", p.model},
                            {"mr", number_json(p.mr)},
                            {"cr", number_json(p.cr)}});
  }
  return j;
}

std::string report_to_csv(const Report& r) {
  std::string out = "group,metric,value\n";
  for (const auto& g : r.groups) {
    for (const auto& m : report_metric_names()) {
      const auto v = report_metric(g, m);
      out += csv_field(g.group) + "," + m + "," + (v ? format_number(*v) : "N/A") + "\n";
    }
  }
  return out;
}

std::string report_to_text(const Report& r) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"group", "n", "Acc%", "MR T->T%", "MR T->F%", "MR F->F%", "MR F->T%", "ACR%",
                  "ECE"});
  for (const auto& g : r.groups) {
    rows.push_back({g.group, std::to_string(g.n_items), percent(g.accuracy), percent(g.mr.tt),
                    percent(g.mr.tf), percent(g.mr.ff), percent(g.mr.ft), percent(g.acr),
                    g.ece ? format_number(*g.ece) : "N/A"});
  }
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      if (c) os << "  ";
      const auto& cell = rows[i][c];
      if (c == 0) {
        os << cell << std::string(width[c] - cell.size(), ' ');
      } else {
        os << std::string(width[c] - cell.size(), ' ') << cell;
      }
    }
    os << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  return os.str();
}

std::string scatter_to_csv(const Report& r) {
  std::string out = "item_id,model,mr,cr\n";
  for (const auto& p : r.scatter) {
    out += csv_field(p.item_id) + "," + csv_field(p.model) + "," + format_number(p.mr) + "," +
           format_number(p.cr) + "\n";
  }
  return out;
}

std::string scatter_to_svg(const Report& r) {
  constexpr double W = 480, H = 360, L = 56, R = 16, T = 24, B = 48;
  const double pw = W - L - R, ph = H - T - B;
  auto fx = [&](double v) { return L + v * pw; };
  auto fy = [&](double v) { return T + (1.0 - v) * ph; };
  char buf[256];
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"0 0 480 360\" "
        "width=\"480\" height=\"360\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"480\" height=\"360\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<polyline class=\"axes\" fill=\"none\" stroke=\"black\" "
                "points=\"%.1f,%.1f %.1f,%.1f %.1f,%.1f\"/>\n",
                fx(0), fy(1), fx(0), fy(0), fx(1), fy(0));
  os << buf;
  for (double t : {0.0, 0.5, 1.0}) {
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"middle\">%.1f</text>\n",
                  fx(t), fy(0) + 16, t);
    os << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"end\">%.1f</text>\n",
                  fx(0) - 6, fy(t) + 4, t);
    os << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\">"
                "consistency rate</text>\n",
                fx(0.5), H - 10);
  os << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"14\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\" "
                "transform=\"rotate(-90 14 %.1f)\">misleading rate</text>\n",
                fy(0.5), fy(0.5));
  os << buf;
  for (const auto& p : r.scatter) {
    std::snprintf(buf, sizeof buf,
                  "<circle class=\"point\" cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"steelblue\" "
                  "fill-opacity=\"0.6\"/>\n",
                  fx(p.cr), fy(p.mr));
    os << buf;
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::filesystem::path> render_report(const ReportSpec& spec, const RunStore& store,
                                                 const std::filesystem::path& out_dir) {
  const auto rep = build_report(spec, store);
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& body) {
    const auto p = out_dir / name;
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + p.string());
    out << body;
    written.push_back(p);
  };
  for (auto f : spec.formats) {
    switch (f) {
      case ReportFormat::Json: put("report.json", report_to_json(rep).dump(2) + "\n"); break;
      case ReportFormat::Csv:
        put("report.csv", report_to_csv(rep));
        put("scatter.csv", scatter_to_csv(rep));
        break;
      case ReportFormat::Text: put("report.txt", report_to_text(rep)); break;
      case ReportFormat::Svg: put("scatter.svg", scatter_to_svg(rep)); break;
    }
  }
  return written;
}

SweepReport simulate_sweep(const std::vector<double>& susceptibilities, std::size_t n_items,
                           int m_samples, std::uint64_t seed, double coupling) {
  if (susceptibilities.empty()) throw Error("sweep needs at least one susceptibility");
  if (n_items == 0) throw Error("sweep needs at least one item");
  if (m_samples < 2) throw Error("sweep needs at least two consistency samples");
  const auto items = synthetic_items(n_items, seed);
  const auto headline = InstructionSpec::explicit_one(TemplateKey::TrueAnswer);

  SweepReport out;
  for (double s : susceptibilities) {
    SweepPoint pt;
    pt.susceptibility = s;
    pt.noise = coupling * s;
    RunStore store;

    SimParams misled_params;
    misled_params.susceptibility = s;
    RunPlan plan;
    plan.run_id = "sweep";
    plan.items = &items;
    plan.seed = seed;
    plan.responder = std::make_shared<SimulatedResponder>("sim", misled_params);
    plan.conditions = {headline};
    run_baseline(plan, store);
    run_misled(plan, store);
    pt.mr_tf = misleading_rates(store.records("sweep", Stage::Baseline),
                                store.records("sweep", Stage::Misled))
                   .tf;

    SimParams noisy;
    noisy.noise = pt.noise;
    RunPlan cons = plan;
    cons.run_id = "sweep-consistency";
    cons.conditions.clear();
    cons.n_baseline_samples = m_samples;
    cons.responder = std::make_shared<SimulatedResponder>("sim", noisy);
    run_consistency(cons, store);
    const auto ts = group_transcripts(store.records("sweep-consistency", Stage::Baseline));
    pt.mean_cr = average_consistency_rate(ts);
    out.points.push_back(pt);
  }

  std::vector<double> mr, cr;
  for (const auto& p : out.points) {
    if (!p.mr_tf) continue;
    mr.push_back(*p.mr_tf);
    cr.push_back(p.mean_cr);
  }
  out.spearman = spearman(mr, cr);
  return out;
}

json sweep_to_json(const SweepReport& r) {
  json j;
  j["schema"] = kReportSchemaVersion;
  j["points"] = json::array();
  for (const auto& p : r.points) {
    j["points"].push_back({{"susceptibility", number_json(p.susceptibility)},
                           {"noise", number_json(p.noise)},
                           {"mr_tf", number_json(p.mr_tf)},
                           {"mean_cr", number_json(p.mean_cr)}});
  }
  j["spearman"] = number_json(r.spearman);
  return j;
}

}  // namespace misbench
