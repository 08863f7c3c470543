#include "misbench/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <thread>

#include "misbench/error.hpp"
#include "misbench/rng.hpp"

namespace misbench {
namespace {

struct Output {
  std::vector<RunRecord> runs;
  std::vector<GuidanceRecord> guidance;
};

struct Job {
  std::string item_id;
  std::function<Output()> work;
};

struct ExecResult {
  std::size_t issued = 0;
  std::size_t written = 0;
  std::vector<std::string> failed_ids;
  std::string first_cause;
  bool interrupted = false;
};

// Runs jobs on a worker pool and commits outputs strictly in job order, so
// the store contents do not depend on scheduling.
ExecResult execute(std::vector<Job>& jobs, int workers, std::optional<std::size_t> budget,
                   RunStore& store,
                   const std::function<void(std::size_t, std::size_t)>& progress) {
  ExecResult res;
  const std::size_t total = jobs.size();
  const std::size_t limit = budget ? std::min(*budget, total) : total;
  res.interrupted = limit < total;
  res.issued = limit;
  if (limit == 0) return res;

  std::vector<std::optional<Output>> ready(limit);
  std::vector<std::string> errors(limit);
  std::vector<char> done(limit, 0);
  std::size_t next_commit = 0;
  std::atomic<std::size_t> next_job{0};
  std::mutex mu;
  std::exception_ptr store_failure;

  auto commit_ready = [&] {
    while (next_commit < limit && done[next_commit]) {
      if (ready[next_commit]) {
        for (const auto& r : ready[next_commit]->runs) res.written += store.append(r) ? 1 : 0;
        for (const auto& g : ready[next_commit]->guidance) {
          res.written += store.append(g) ? 1 : 0;
        }
        ready[next_commit].reset();
      } else {
        res.failed_ids.push_back(jobs[next_commit].item_id);
        if (res.first_cause.empty()) res.first_cause = errors[next_commit];
      }
      ++next_commit;
      if (progress) progress(next_commit, limit);
    }
  };

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next_job.fetch_add(1);
      if (i >= limit) return;
      std::optional<Output> out;
      std::string err;
      try {
        out = jobs[i].work();
      } catch (const std::exception& e) {
        err = jobs[i].item_id + ": " + e.what();
      }
      std::lock_guard lock(mu);
      ready[i] = std::move(out);
      errors[i] = std::move(err);
      done[i] = 1;
      if (store_failure) continue;
      try {
        commit_ready();
      } catch (...) {
        store_failure = std::current_exception();
      }
    }
  };

  const auto n = static_cast<std::size_t>(std::max(1, workers));
  const auto n_threads = std::min(n, limit);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (store_failure) std::rethrow_exception(store_failure);
  return res;
}

int worker_count(const RunPlan& plan, const Responder& responder) {
  return plan.max_in_flight > 0 ? plan.max_in_flight : responder.max_in_flight();
}

const std::string& baseline_run_of(const RunPlan& plan) {
  return plan.baseline_run.empty() ? plan.run_id : plan.baseline_run;
}

const std::string& guidance_run_of(const RunPlan& plan) {
  return plan.guidance_run.empty() ? plan.run_id : plan.guidance_run;
}

std::int64_t stamp(const RunPlan& plan) {
  if (!plan.wall_clock) return 0;
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Seed of one pass: stages and conditions get independent streams.
std::uint64_t stage_seed(const RunPlan& plan, Stage stage, const std::string& hash) {
  return derive_seed(plan.seed, std::string(to_string(stage)) + ":" + hash);
}

std::vector<Message> eval_messages(const RunPlan& plan, const Item& item,
                                   const std::optional<std::string>& instruction,
                                   const InstructionSpec& spec) {
  auto messages = assemble_eval_messages(item, instruction, spec, plan.defense);
  if (plan.elicit_confidence) {
    messages.front().content += "\n";
    messages.front().content += confidence_elicitation_prompt();
  }
  return messages;
}

RunSummary summarize(std::size_t planned, std::size_t skipped, const ExecResult& r) {
  RunSummary s;
  s.planned = planned;
  s.skipped = skipped;
  s.issued = r.issued;
  s.failed = r.failed_ids.size();
  s.written = r.written;
  s.interrupted = r.interrupted;
  return s;
}

RunSummary baseline_pass(const RunPlan& plan, RunStore& store, int samples) {
  const auto& none = baseline_condition();
  const auto hash = condition_hash(none);
  const auto cond_json = canonical_json(none);
  const auto seed = stage_seed(plan, Stage::Baseline, hash);
  const auto model = plan.responder->model_name();

  std::vector<Job> jobs;
  std::size_t planned = 0, skipped = 0;
  for (const auto& item : *plan.items) {
    for (int s = 0; s < samples; ++s) {
      ++planned;
      if (store.contains(record_key(plan.run_id, item.id, Stage::Baseline, hash, s))) {
        ++skipped;
        continue;
      }
      const Item* ip = &item;
      jobs.push_back({item.id, [&plan, ip, s, seed, hash, cond_json, model]() {
                        const auto messages = eval_messages(plan, *ip, std::nullopt,
                                                            baseline_condition());
                        CallContext ctx{ip, std::nullopt, seed, static_cast<std::uint64_t>(s)};
                        RunRecord r;
                        r.run_id = plan.run_id;
                        r.item_id = ip->id;
                        r.model_name = model;
                        r.stage = Stage::Baseline;
                        r.condition_hash = hash;
                        r.condition = cond_json;
                        r.sample = s;
                        r.raw = plan.responder->respond(messages, ctx);
                        score_record(r, *ip, plan.elicit_confidence);
                        if (s == 0) {
                          r.target = select_target_option(*ip, r.correct.value_or(false),
                                                          plan.seed);
                        }
                        r.timestamp = stamp(plan);
                        r.seed = seed;
                        return Output{{std::move(r)}, {}};
                      }});
    }
  }
  auto res = execute(jobs, worker_count(plan, *plan.responder), plan.request_budget, store,
                     plan.progress);
  if (!res.failed_ids.empty()) throw EndpointError(res.failed_ids, res.first_cause);
  return summarize(planned, skipped, res);
}

}  // namespace

void validate(const RunPlan& plan) {
  if (plan.run_id.empty()) throw InvalidPlan("run_id is empty");
  if (plan.items == nullptr) throw InvalidPlan("plan has no items");
  if (!plan.responder) throw InvalidPlan("plan has no endpoint or simulator");
  if (plan.n_baseline_samples < 1) throw InvalidPlan("n_baseline_samples must be >= 1");
  if (plan.max_in_flight < 0) throw InvalidPlan("max_in_flight must be >= 0");
  for (const auto& c : plan.conditions) {
    try {
      validate(c);
    } catch (const InvalidSpec& e) {
      throw InvalidPlan(std::string("bad condition: ") + e.what());
    }
  }
}

const InstructionSpec& baseline_condition() {
  static const InstructionSpec none = InstructionSpec::none();
  return none;
}

std::optional<RunRecord> baseline_record(const RunStore& store, const std::string& run_id,
                                         const std::string& item_id) {
  return store.find(run_id, item_id, Stage::Baseline, condition_hash(baseline_condition()), 0);
}

RunSummary run_baseline(const RunPlan& plan, RunStore& store) {
  validate(plan);
  return baseline_pass(plan, store, plan.n_baseline_samples);
}

RunSummary run_consistency(const RunPlan& plan, RunStore& store) {
  validate(plan);
  if (plan.n_baseline_samples < 2) {
    throw InvalidPlan("consistency runs need n_baseline_samples >= 2");
  }
  return baseline_pass(plan, store, plan.n_baseline_samples);
}

RunSummary run_misled(const RunPlan& plan, RunStore& store) {
  validate(plan);
  if (plan.n_baseline_samples != 1) throw InvalidPlan("misleading runs use one baseline sample");
  if (plan.conditions.empty()) throw InvalidPlan("misleading run has no conditions");

  const auto& base_run = baseline_run_of(plan);
  const auto& guide_run = guidance_run_of(plan);
  std::vector<std::string> missing;
  std::vector<RunRecord> baselines;
  baselines.reserve(plan.items->size());
  for (const auto& item : *plan.items) {
    auto b = baseline_record(store, base_run, item.id);
    if (!b) {
      missing.push_back(item.id);
      continue;
    }
    if (!b->target) b->target = select_target_option(item, b->correct.value_or(false), plan.seed);
    baselines.push_back(std::move(*b));
  }
  if (!missing.empty()) throw MissingBaseline(std::move(missing));

  // Guidance must be generated before any implicit condition runs.
  for (const auto& spec : plan.conditions) {
    if (spec.kind != InstructionKind::Implicit) continue;
    for (const auto& item : *plan.items) {
      for (int v : spec.variant_ids) {
        if (!store.find_guidance(guide_run, item.id, v, spec.masked)) {
          throw MissingGuidance("no guidance variant " + std::to_string(v) + " for item " +
                                item.id + " in run " + guide_run);
        }
      }
    }
  }

  const auto model = plan.responder->model_name();
  std::vector<Job> jobs;
  std::size_t planned = 0, skipped = 0;
  for (const auto& spec : plan.conditions) {
    const auto hash = condition_hash(spec);
    const auto cond_json = canonical_json(spec);
    const auto seed = stage_seed(plan, Stage::Misled, hash);
    for (std::size_t i = 0; i < plan.items->size(); ++i) {
      const Item* ip = &plan.items->items()[i];
      const std::string target = *baselines[i].target;

      // (sample, instruction block, injected target)
      struct Cell {
        int sample;
        std::optional<std::string> instruction;
        std::optional<std::string> injected;
      };
      std::vector<Cell> cells;
      if (spec.kind == InstructionKind::Explicit) {
        InstructionSpec filled = spec;
        filled.target = target;
        cells.push_back({0, render_explicit_block(filled), target});
      } else if (spec.kind == InstructionKind::Implicit) {
        for (int v : spec.variant_ids) {
          const auto g = store.find_guidance(guide_run, ip->id, v, spec.masked);
          if (!g->ok) continue;  // the generator never produced this variant
          cells.push_back({v, repeat_block(g->text, spec.repeat), g->target});
        }
      } else {
        cells.push_back({0, std::nullopt, std::nullopt});
      }

      for (auto& cell : cells) {
        ++planned;
        if (store.contains(record_key(plan.run_id, ip->id, Stage::Misled, hash, cell.sample))) {
          ++skipped;
          continue;
        }
        jobs.push_back({ip->id, [&plan, ip, spec, cell, seed, hash, cond_json, model]() {
                          const auto messages = eval_messages(plan, *ip, cell.instruction, spec);
                          CallContext ctx{ip, cell.injected, seed,
                                          static_cast<std::uint64_t>(cell.sample)};
                          RunRecord r;
                          r.run_id = plan.run_id;
                          r.item_id = ip->id;
                          r.model_name = model;
                          r.stage = Stage::Misled;
                          r.condition_hash = hash;
                          r.condition = cond_json;
                          r.sample = cell.sample;
                          r.target = cell.injected;
                          r.raw = plan.responder->respond(messages, ctx);
                          score_record(r, *ip, plan.elicit_confidence);
                          r.timestamp = stamp(plan);
                          r.seed = seed;
                          return Output{{std::move(r)}, {}};
                        }});
      }
    }
  }
  auto res = execute(jobs, worker_count(plan, *plan.responder), plan.request_budget, store,
                     plan.progress);
  if (!res.failed_ids.empty()) throw EndpointError(res.failed_ids, res.first_cause);
  return summarize(planned, skipped, res);
}

RunSummary generate_implicit_variants(const RunPlan& plan, Responder& generator, int n,
                                      RunStore& store) {
  validate(plan);
  if (n < 1 || n > 5) throw InvalidPlan("implicit variants per item must be in [1, 5]");
  const auto& base_run = baseline_run_of(plan);
  const auto& out_run = guidance_run_of(plan);

  std::vector<std::string> missing;
  std::vector<Job> jobs;
  std::size_t planned = 0, skipped = 0;
  const auto seed = derive_seed(plan.seed, "guidance");
  for (const auto& item : *plan.items) {
    auto b = baseline_record(store, base_run, item.id);
    if (!b) {
      missing.push_back(item.id);
      continue;
    }
    ++planned;
    bool complete = true;
    for (int v = 0; v < n && complete; ++v) {
      complete = store.find_guidance(out_run, item.id, v, false).has_value() &&
                 store.find_guidance(out_run, item.id, v, true).has_value();
    }
    if (complete) {
      ++skipped;
      continue;
    }
    const bool correct = b->correct.value_or(false);
    const auto direction =
        correct ? GuidanceDirection::MisleadToWrong : GuidanceDirection::HelpToRight;
    std::optional<std::string> wrong;
    if (correct) {
      wrong = b->target ? *b->target : select_target_option(item, true, plan.seed);
    }
    const Item* ip = &item;
    jobs.push_back({item.id, [&generator, ip, direction, wrong, n, seed, out_run]() {
                      const auto req = assemble_implicit_gen_prompt(*ip, direction, n, wrong);
                      CallContext ctx{ip, std::nullopt, seed, 0};
                      const auto reply = generator.respond(req.messages, ctx);
                      const auto variants = parse_guidance_variants(reply, n);
                      // Masking hides whichever option the guidance steers toward.
                      Item steer = *ip;
                      steer.answer_key = req.answer_key;
                      Output out;
                      for (int v = 0; v < n; ++v) {
                        GuidanceRecord g;
                        g.run_id = out_run;
                        g.item_id = ip->id;
                        g.variant_id = v;
                        g.direction = direction;
                        g.target = req.answer_key;
                        const auto idx = static_cast<std::size_t>(v);
                        if (idx < variants.size()) {
                          g.text = variants[idx];
                        } else {
                          g.ok = false;
                          g.error = "generator returned " + std::to_string(variants.size()) +
                                    " of " + std::to_string(n) + " variants";
                        }
                        GuidanceRecord m = g;
                        m.masked = true;
                        if (g.ok) {
                          auto masked = mask_answer_leak(g.text, steer);
                          m.text = std::move(masked.text);
                          m.leaked = masked.leaked;
                        }
                        out.guidance.push_back(std::move(g));
                        out.guidance.push_back(std::move(m));
                      }
                      return out;
                    }});
  }
  if (!missing.empty()) throw MissingBaseline(std::move(missing));
  auto res = execute(jobs, worker_count(plan, generator), plan.request_budget, store,
                     plan.progress);
  if (!res.failed_ids.empty()) throw GeneratorError(res.failed_ids, res.first_cause);
  return summarize(planned, skipped, res);
}

}  // namespace misbench
