#include "misbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include "misbench/error.hpp"
#include "misbench/rng.hpp"

namespace misbench {
namespace {

// Lowest-sample record per item.
std::unordered_map<std::string, const RunRecord*> by_item(std::span<const RunRecord> records) {
  std::unordered_map<std::string, const RunRecord*> out;
  for (const auto& r : records) {
    auto [it, inserted] = out.emplace(r.item_id, &r);
    if (!inserted && r.sample < it->second->sample) it->second = &r;
  }
  return out;
}

using Pair = std::pair<bool, bool>;

MisleadingRates rates_from_pairs(const std::vector<Pair>& pairs, double epsilon) {
  MisleadingRates out;
  std::size_t tt = 0, tf = 0, ff = 0, ft = 0;
  for (const auto& [s, t] : pairs) {
    if (s) {
      ++out.n_true;
      (t ? tt : tf) += 1;
    } else {
      ++out.n_false;
      (t ? ft : ff) += 1;
    }
  }
  auto ratio = [&](std::size_t num, std::size_t den) -> std::optional<double> {
    const double d = static_cast<double>(den) + epsilon;
    if (d == 0.0) return std::nullopt;
    return static_cast<double>(num) / d;
  };
  out.tt = ratio(tt, out.n_true);
  out.tf = ratio(tf, out.n_true);
  out.ff = ratio(ff, out.n_false);
  out.ft = ratio(ft, out.n_false);
  return out;
}

std::vector<Pair> join_pairs(std::span<const RunRecord> baseline, std::span<const RunRecord> misled,
                             UnparseablePolicy policy) {
  const auto base = by_item(baseline);
  const auto mis = by_item(misled);
  std::vector<std::string> missing;
  for (const auto& [id, _] : base) {
    if (!mis.contains(id)) missing.push_back(id);
  }
  for (const auto& [id, _] : mis) {
    if (!base.contains(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    throw JoinMismatch(std::move(missing));
  }
  std::vector<Pair> pairs;
  pairs.reserve(base.size());
  for (const auto& [id, b] : base) {
    const auto s = effective_correct(*b, policy);
    const auto t = effective_correct(*mis.at(id), policy);
    if (s && t) pairs.emplace_back(*s, *t);
  }
  return pairs;
}

}  // namespace

std::string_view to_string(Stage s) noexcept {
  return s == Stage::Baseline ? "baseline" : "misled";
}

std::optional<Stage> parse_stage(std::string_view s) noexcept {
  if (s == "baseline") return Stage::Baseline;
  if (s == "misled") return Stage::Misled;
  return std::nullopt;
}

void score_record(RunRecord& record, const Item& item, bool with_confidence) {
  record.parsed.reset();
  record.correct.reset();
  record.confidence.reset();
  try {
    record.parsed = parse_choice(record.raw, item);
    record.correct = record.parsed->label == item.answer_key;
  } catch (const Unparseable&) {
    return;
  }
  if (!with_confidence) return;
  try {
    const auto scores = parse_confidences(record.raw, item);
    record.confidence = scores.at(record.parsed->label) / 100.0;
  } catch (const Error&) {
    // No usable scores: the record simply carries no confidence.
  }
}

std::vector<Transcript> group_transcripts(std::span<const RunRecord> records) {
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> index;
  std::vector<Transcript> out;
  for (const auto& r : records) {
    auto key = std::make_tuple(r.item_id, r.model_name, r.condition_hash);
    auto [it, inserted] = index.emplace(key, out.size());
    if (inserted) out.push_back({r.item_id, r.model_name, r.condition_hash, {}});
    out[it->second].records.push_back(r);
  }
  for (auto& t : out) {
    std::stable_sort(t.records.begin(), t.records.end(),
                     [](const RunRecord& a, const RunRecord& b) { return a.sample < b.sample; });
  }
  return out;
}

std::string response_token(const RunRecord& record) {
  return record.parsed ? record.parsed->label : std::string(kUnparsedToken);
}

std::optional<bool> effective_correct(const RunRecord& record, UnparseablePolicy policy) noexcept {
  if (record.correct) return *record.correct;
  if (policy == UnparseablePolicy::Incorrect) return false;
  return std::nullopt;
}

std::size_t response_frequency(const Transcript& t, std::string_view response) {
  return static_cast<std::size_t>(std::count_if(
      t.records.begin(), t.records.end(),
      [&](const RunRecord& r) { return response_token(r) == response; }));
}

double consistency_rate(const Transcript& t) {
  if (t.records.empty()) throw EmptyTranscript();
  std::map<std::string, std::size_t> freq;
  std::size_t best = 0;
  for (const auto& r : t.records) best = std::max(best, ++freq[response_token(r)]);
  return static_cast<double>(best) / static_cast<double>(t.records.size());
}

double average_consistency_rate(std::span<const Transcript> ts) {
  if (ts.empty()) throw EmptyInput("no transcripts");
  double sum = 0.0;
  for (const auto& t : ts) sum += consistency_rate(t);
  return sum / static_cast<double>(ts.size());
}

std::optional<double> misleading_rate(std::span<const RunRecord> baseline,
                                      std::span<const RunRecord> misled, bool from, bool to,
                                      const MetricConfig& cfg) {
  const auto r = misleading_rates(baseline, misled, cfg);
  if (from) return to ? r.tt : r.tf;
  return to ? r.ft : r.ff;
}

MisleadingRates misleading_rates(std::span<const RunRecord> baseline,
                                 std::span<const RunRecord> misled, const MetricConfig& cfg) {
  return rates_from_pairs(join_pairs(baseline, misled, cfg.unparseable_policy), cfg.epsilon);
}

double accuracy(std::span<const RunRecord> records, UnparseablePolicy policy) {
  std::size_t n = 0, hits = 0;
  for (const auto& r : records) {
    const auto c = effective_correct(r, policy);
    if (!c) continue;
    ++n;
    hits += *c ? 1 : 0;
  }
  if (n == 0) throw EmptyInput("no scorable records");
  return static_cast<double>(hits) / static_cast<double>(n);
}

int ece_bin(double confidence, int bins) noexcept {
  const double b = static_cast<double>(bins);
  int idx = static_cast<int>(std::ceil(confidence * b)) - 1;
  idx = std::clamp(idx, 0, bins - 1);
  // Settle rounding at the edges against the exact boundaries idx/B.
  while (idx > 0 && confidence <= static_cast<double>(idx) / b) --idx;
  while (idx < bins - 1 && confidence > static_cast<double>(idx + 1) / b) ++idx;
  return idx;
}

double ece(std::span<const std::pair<double, bool>> pairs, int bins) {
  if (pairs.empty()) throw EmptyInput("no confidence pairs");
  if (bins < 1) throw Error("ece needs at least one bin");
  std::vector<double> conf(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> hits(static_cast<std::size_t>(bins), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
  for (const auto& [c, ok] : pairs) {
    const auto b = static_cast<std::size_t>(ece_bin(c, bins));
    conf[b] += c;
    hits[b] += ok ? 1.0 : 0.0;
    ++count[b];
  }
  const double n = static_cast<double>(pairs.size());
  double total = 0.0;
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) continue;
    const double nb = static_cast<double>(count[b]);
    total += (nb / n) * std::abs(hits[b] / nb - conf[b] / nb);
  }
  return total;
}

bool sample_k_aggregate(const RunRecord& baseline, std::span<const RunRecord> variant_runs,
                        std::size_t k, std::uint64_t seed, UnparseablePolicy policy) {
  if (k > variant_runs.size() || k == 0) throw KTooLarge(k, variant_runs.size());
  const auto base = effective_correct(baseline, policy).value_or(false);
  Rng rng(derive_seed(seed, "sample-k:" + baseline.item_id));
  for (auto idx : rng.sample_indices(variant_runs.size(), k)) {
    const auto c = effective_correct(variant_runs[idx], policy);
    if (c && *c != base) return true;
  }
  return false;
}

double normalized_proportion(const std::vector<std::vector<double>>& counts, std::size_t level,
                             std::size_t category) {
  if (level >= counts.size() || category >= counts[level].size()) {
    throw Error("normalized_proportion index out of range");
  }
  double col = 0.0, total = 0.0;
  for (const auto& row : counts) {
    col += row.at(category);
    total += std::accumulate(row.begin(), row.end(), 0.0);
  }
  const auto& row = counts[level];
  const double row_total = std::accumulate(row.begin(), row.end(), 0.0);
  if (col == 0.0 || row_total == 0.0 || total == 0.0) throw ZeroMarginal();
  return (row[category] / col) / (row_total / total);
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman needs equal-length series");
  const auto n = x.size();
  if (n < 2) return std::nullopt;
  auto ranks = [n](std::span<const double> v) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

MetricReport compute_report(std::string group, std::span<const RunRecord> baseline,
                            std::span<const RunRecord> misled,
                            std::span<const Transcript> consistency, const MetricConfig& cfg) {
  MetricReport rep;
  rep.group = std::move(group);
  const auto base = by_item(baseline);
  rep.n_items = base.size();
  if (!baseline.empty()) {
    std::vector<RunRecord> firsts;
    firsts.reserve(base.size());
    for (const auto& [_, r] : base) firsts.push_back(*r);
    try {
      rep.accuracy = accuracy(firsts, cfg.unparseable_policy);
    } catch (const EmptyInput&) {
    }
    std::vector<std::pair<double, bool>> conf;
    for (const auto& r : firsts) {
      const auto c = effective_correct(r, cfg.unparseable_policy);
      if (r.confidence && c) conf.emplace_back(*r.confidence, *c);
    }
    if (!conf.empty()) rep.ece = ece(conf, cfg.ece_bins);
  }
  if (!misled.empty()) {
    try {
      rep.misled_accuracy = accuracy(misled, cfg.unparseable_policy);
    } catch (const EmptyInput&) {
    }
    // Every misled record pairs with its item's baseline; several
    // conditions in one group pool their pairs.
    std::vector<Pair> pairs;
    for (const auto& m : misled) {
      auto it = base.find(m.item_id);
      if (it == base.end()) continue;
      const auto s = effective_correct(*it->second, cfg.unparseable_policy);
      const auto t = effective_correct(m, cfg.unparseable_policy);
      if (s && t) pairs.emplace_back(*s, *t);
    }
    rep.mr = rates_from_pairs(pairs, cfg.epsilon);
  }
  if (!consistency.empty()) rep.acr = average_consistency_rate(consistency);
  return rep;
}

}  // namespace misbench
