#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "misbench/model_client.hpp"

namespace misbench {

// Declarative experiment config: one "key = value" per line, '#' or ';'
// starts a comment, "condition" may repeat. Keys use an optional
// "generator." prefix for the guidance generator endpoint. Unknown keys are
// rejected so typos do not silently fall back to defaults.
//
//   run_id = r1
//   items = items.jsonl
//   store = runs/store.jsonl
//   seed = 7
//   model = gpt-4o
//   endpoint = https://api.openai.com/v1      (or: simulate = true)
//   api_key_env = OPENAI_API_KEY
//   condition = explicit templates=TrueAnswer
//   condition = implicit variants=0,1,2 masked=true
struct PlanFile {
  std::map<std::string, std::string> values;
  std::vector<std::string> conditions;
  std::filesystem::path base_dir;  // relative paths resolve against this

  bool has(const std::string& key) const { return values.contains(key); }
  std::optional<std::string> get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

// Keys accepted in plan files (without the generator prefix).
const std::vector<std::string>& plan_keys();

// Throws InvalidPlan naming the offending line.
PlanFile parse_plan(std::string_view text, std::filesystem::path base_dir = {});
PlanFile load_plan(const std::filesystem::path& path);

// Builds the responder named by the plan under `prefix` ("" or
// "generator."): a simulator when "simulate = true", an HTTP endpoint
// otherwise. Throws InvalidPlan.
std::shared_ptr<Responder> responder_from_plan(const PlanFile& plan, const std::string& prefix = "");

Endpoint endpoint_from_plan(const PlanFile& plan, const std::string& prefix = "");
SimParams sim_params_from_plan(const PlanFile& plan, const std::string& prefix = "");

}  // namespace misbench
