#include "misbench/builder.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include "misbench/error.hpp"
#include "misbench/metrics.hpp"
#include "misbench/pipeline.hpp"
#include "misbench/rng.hpp"

namespace misbench {

using nlohmann::json;

std::size_t MisledMatrix::row_of(std::string_view item_id) const {
  auto it = std::find(item_ids.begin(), item_ids.end(), item_id);
  if (it == item_ids.end()) throw UnknownItem(std::string(item_id));
  return static_cast<std::size_t>(it - item_ids.begin());
}

InstructionSpec headline_condition() {
  return InstructionSpec::explicit_one(TemplateKey::TrueAnswer);
}

MisledMatrix build_misled_matrix(const RunStore& store, const std::vector<std::string>& run_ids,
                                 const InstructionSpec& condition) {
  const auto hash = condition_hash(condition);
  const auto base_hash = condition_hash(baseline_condition());
  MisledMatrix m;
  // flips[item][col]
  std::vector<std::unordered_map<std::string, bool>> flips;
  std::vector<std::string> first_order;
  for (const auto& run : run_ids) {
    const auto recs = store.records(run);
    if (recs.empty()) throw MissingRun(run);
    std::unordered_map<std::string, const RunRecord*> base, mis;
    for (const auto& r : recs) {
      if (r.stage == Stage::Baseline && r.condition_hash == base_hash && r.sample == 0) {
        base.emplace(r.item_id, &r);
      } else if (r.stage == Stage::Misled && r.condition_hash == hash && r.sample == 0) {
        mis.emplace(r.item_id, &r);
      }
    }
    std::unordered_map<std::string, bool> col;
    for (const auto& r : recs) {
      if (r.stage != Stage::Baseline || r.condition_hash != base_hash || r.sample != 0) continue;
      auto it = mis.find(r.item_id);
      if (it == mis.end()) continue;
      const bool before = r.correct.value_or(false);
      const bool after = it->second->correct.value_or(false);
      col.emplace(r.item_id, before != after);
      if (flips.empty()) first_order.push_back(r.item_id);
    }
    flips.push_back(std::move(col));
    m.models.push_back(recs.front().model_name.empty() ? run : recs.front().model_name);
  }
  for (const auto& id : first_order) {
    std::vector<bool> row;
    row.reserve(flips.size());
    bool everywhere = true;
    for (const auto& col : flips) {
      auto it = col.find(id);
      if (it == col.end()) {
        everywhere = false;
        break;
      }
      row.push_back(it->second);
    }
    if (!everywhere) continue;
    m.item_ids.push_back(id);
    m.cells.push_back(std::move(row));
  }
  return m;
}

int count_misled(const MisledMatrix& matrix, std::string_view item_id) {
  const auto& row = matrix.cells.at(matrix.row_of(item_id));
  return static_cast<int>(std::count(row.begin(), row.end(), true));
}

std::string_view to_string(StratumLevel l) noexcept {
  switch (l) {
    case StratumLevel::Low: return "Low";
    case StratumLevel::Medium: return "Medium";
    case StratumLevel::High: return "High";
    case StratumLevel::FinetunePool: return "FinetunePool";
    case StratumLevel::Unused: return "Unused";
  }
  return "Unused";
}

std::optional<StratumLevel> parse_stratum_level(std::string_view s) noexcept {
  for (std::size_t i = 0; i < kStratumLevels; ++i) {
    const auto l = static_cast<StratumLevel>(i);
    if (to_string(l) == s) return l;
  }
  return std::nullopt;
}

std::vector<Stratum> stratify(const MisledMatrix& matrix, const StratifyConfig& cfg) {
  std::vector<Stratum> out(kStratumLevels);
  for (std::size_t i = 0; i < kStratumLevels; ++i) out[i].level = static_cast<StratumLevel>(i);
  auto level_of = [&](int c) {
    if (c == cfg.total_models) return StratumLevel::High;
    if (cfg.mode == StratifyMode::AtLeast) {
      if (c >= cfg.medium) return StratumLevel::Medium;
      if (c >= cfg.low) return StratumLevel::Low;
      return StratumLevel::Unused;
    }
    if (c == cfg.low) return StratumLevel::Low;
    if (c == cfg.medium) return StratumLevel::Medium;
    if (c > cfg.low && c < cfg.total_models) return StratumLevel::FinetunePool;
    return StratumLevel::Unused;
  };
  for (std::size_t r = 0; r < matrix.item_ids.size(); ++r) {
    const auto& row = matrix.cells[r];
    const int c = static_cast<int>(std::count(row.begin(), row.end(), true));
    out[static_cast<std::size_t>(level_of(c))].item_ids.push_back(matrix.item_ids[r]);
  }
  return out;
}

namespace {

json breakdown(const std::vector<std::string>& ids, const ItemCollection& items) {
  std::map<std::string, std::size_t> by_type{{"MultipleChoice", 0}, {"YesNo", 0}};
  std::map<std::string, std::size_t> by_task, by_sub;
  for (const auto& id : ids) {
    const Item* it = items.find(id);
    if (it == nullptr) throw UnknownItem(id);
    ++by_type[std::string(to_string(it->task_type))];
    ++by_task[std::string(to_string(it->categories.task))];
    ++by_sub[std::string(to_string(it->categories.sub_ability))];
  }
  return {{"count", ids.size()}, {"by_type", by_type}, {"by_task", by_task}, {"by_sub_ability", by_sub}};
}

const std::vector<std::string>& level_ids(const std::vector<Stratum>& strata, StratumLevel l) {
  static const std::vector<std::string> empty;
  for (const auto& s : strata) {
    if (s.level == l) return s.item_ids;
  }
  return empty;
}

}  // namespace

std::vector<std::string> BenchmarkManifest::all_ids() const {
  std::vector<std::string> out = low;
  out.insert(out.end(), medium.begin(), medium.end());
  out.insert(out.end(), high.begin(), high.end());
  return out;
}

json BenchmarkManifest::to_json() const {
  json j;
  j["schema"] = 1;
  j["cap"] = cap ? json(*cap) : json(nullptr);
  j["seed"] = hex64(seed);
  j["strata"] = {{"Low", low}, {"Medium", medium}, {"High", high}};
  j["rollups"] = rollups;
  return j;
}

BenchmarkManifest manifest_from_json(const json& j) {
  BenchmarkManifest m;
  const auto& s = j.at("strata");
  m.low = s.at("Low").get<std::vector<std::string>>();
  m.medium = s.at("Medium").get<std::vector<std::string>>();
  m.high = s.at("High").get<std::vector<std::string>>();
  if (j.contains("cap") && !j["cap"].is_null()) m.cap = j["cap"].get<std::size_t>();
  m.seed = std::stoull(j.value("seed", std::string("0")), nullptr, 16);
  m.rollups = j.value("rollups", json::object());
  return m;
}

BenchmarkManifest build_benchmark(const std::vector<Stratum>& strata, const ItemCollection& items,
                                  const BenchmarkOptions& opts) {
  BenchmarkManifest m;
  m.cap = opts.cap;
  m.seed = opts.seed;
  m.low = level_ids(strata, StratumLevel::Low);
  m.medium = level_ids(strata, StratumLevel::Medium);
  m.high = level_ids(strata, StratumLevel::High);

  if (opts.cap && *opts.cap < m.low.size() + m.medium.size() + m.high.size()) {
    const auto all = m.all_ids();
    Rng rng(derive_seed(opts.seed, "benchmark-cap"));
    auto picked = rng.sample_indices(all.size(), *opts.cap);
    std::unordered_set<std::string> keep;
    for (auto i : picked) keep.insert(all[i]);
    auto filter = [&](std::vector<std::string>& v) {
      std::erase_if(v, [&](const std::string& id) { return !keep.contains(id); });
    };
    filter(m.low);
    filter(m.medium);
    filter(m.high);
  }

  m.rollups = json::object();
  m.rollups["Low"] = breakdown(m.low, items);
  m.rollups["Medium"] = breakdown(m.medium, items);
  m.rollups["High"] = breakdown(m.high, items);
  m.rollups["total"] = breakdown(m.all_ids(), items);
  return m;
}

std::string_view to_string(FinetuneStrategy s) noexcept {
  switch (s) {
    case FinetuneStrategy::S5: return "S5";
    case FinetuneStrategy::C5: return "C5";
    case FinetuneStrategy::C10: return "C10";
    case FinetuneStrategy::MixedDefault: return "MixedDefault";
  }
  return "MixedDefault";
}

std::optional<FinetuneStrategy> parse_finetune_strategy(std::string_view s) noexcept {
  for (auto v : {FinetuneStrategy::S5, FinetuneStrategy::C5, FinetuneStrategy::C10,
                 FinetuneStrategy::MixedDefault}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

namespace {

json conversation(const Item& item, const std::string& instruction) {
  json messages = json::array();
  messages.push_back(
      {{"role", "system"}, {"content", std::string(benchmark_system_prompt(item.task_type))}});
  messages.push_back(
      {{"role", "user"},
       {"content", compose_user_text(item, instruction, Placement::AfterQuestion)}});
  messages.push_back({{"role", "assistant"}, {"content", item.answer_key}});
  json line = {{"messages", std::move(messages)}};
  if (item.image_ref) line["images"] = json::array({*item.image_ref});
  return line;
}

}  // namespace

std::vector<FinetuneExample> build_finetune(const Stratum& pool, const BenchmarkManifest& benchmark,
                                            const ItemCollection& items, std::size_t n_explicit,
                                            std::size_t n_implicit, FinetuneStrategy strategy,
                                            std::uint64_t seed, const GuidanceLookup& guidance) {
  const auto bench = benchmark.all_ids();
  const std::unordered_set<std::string> bench_set(bench.begin(), bench.end());
  for (const auto& id : pool.item_ids) {
    if (bench_set.contains(id)) throw OverlapDetected(id);
    if (items.find(id) == nullptr) throw UnknownItem(id);
  }
  if (n_explicit + n_implicit > pool.item_ids.size()) {
    throw PoolTooSmall(n_explicit + n_implicit, pool.item_ids.size());
  }
  if (n_implicit > 0 && !guidance) throw MissingGuidance("implicit lines need a guidance source");

  std::vector<std::string> order = pool.item_ids;
  Rng rng(derive_seed(seed, std::string("finetune:") + std::string(to_string(strategy))));
  rng.shuffle(std::span<std::string>(order));

  std::vector<FinetuneExample> out;
  const auto& c5 = combine5_templates();
  for (std::size_t i = 0; i < n_explicit; ++i) {
    const Item& item = items.at(order[i]);
    const auto wrong = select_target_option(item, true, seed);
    if (strategy == FinetuneStrategy::S5) {
      for (auto key : c5) {
        out.push_back({item.id, "explicit", conversation(item, instantiate(key, wrong))});
      }
      continue;
    }
    auto spec = InstructionSpec::explicit_many(strategy == FinetuneStrategy::C10
                                                   ? combine10_templates()
                                                   : c5);
    spec.target = wrong;
    out.push_back({item.id, "explicit", conversation(item, render_explicit_block(spec))});
  }

  std::size_t taken = 0;
  for (std::size_t i = n_explicit; i < order.size() && taken < n_implicit; ++i) {
    auto text = guidance(order[i]);
    if (!text) continue;
    const Item& item = items.at(order[i]);
    out.push_back({item.id, "implicit", conversation(item, *text)});
    ++taken;
  }
  if (taken < n_implicit) {
    throw PoolTooSmall(n_explicit + n_implicit, n_explicit + taken);
  }

  for (const auto& ex : out) {
    if (bench_set.contains(ex.item_id)) throw OverlapDetected(ex.item_id);
  }
  return out;
}

std::string serialize_finetune(const std::vector<FinetuneExample>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    out += ex.line.dump();
    out += '\n';
  }
  return out;
}

GuidanceLookup store_guidance_lookup(const RunStore& store, std::string run_id) {
  std::unordered_map<std::string, std::pair<int, std::string>> best;
  for (const auto& g : store.guidance(run_id)) {
    if (g.masked || !g.ok) continue;
    auto it = best.find(g.item_id);
    if (it == best.end() || g.variant_id < it->second.first) {
      best[g.item_id] = {g.variant_id, g.text};
    }
  }
  return [best = std::move(best)](const std::string& id) -> std::optional<std::string> {
    auto it = best.find(id);
    if (it == best.end()) return std::nullopt;
    return it->second.second;
  };
}

}  // namespace misbench
