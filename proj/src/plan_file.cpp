#include "misbench/plan_file.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "misbench/error.hpp"

namespace misbench {
namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

const std::vector<std::string>& plan_keys() {
  static const std::vector<std::string> keys = {
      "run_id",          "items",         "store",          "seed",
      "model",           "endpoint",      "api_key_env",    "timeout_ms",
      "max_retries",     "temperature",   "max_in_flight",  "backoff_ms",
      "max_backoff_ms",  "cassette",      "cassette_mode",  "simulate",
      "sim_accuracy",    "sim_susceptibility", "sim_noise", "sim_confidence",
      "sim_fixed_confidence", "defense",  "samples",        "elicit_confidence",
      "baseline_run",    "guidance_run",  "variants",       "wall_clock",
      "condition",
  };
  return keys;
}

std::optional<std::string> PlanFile::get(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) return std::nullopt;
  return it->second;
}

std::string PlanFile::get_or(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

long long PlanFile::get_int(const std::string& key, long long fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const long long out = std::stoll(*v, &used);
    if (used != v->size()) throw std::invalid_argument(key);
    return out;
  } catch (const std::logic_error&) {
    throw InvalidPlan(key + ": expected an integer, got '" + *v + "'");
  }
}

std::uint64_t PlanFile::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    if (!v->empty() && v->front() == '-') throw std::invalid_argument(key);
    const auto out = std::stoull(*v, &used, 0);
    if (used != v->size()) throw std::invalid_argument(key);
    return out;
  } catch (const std::logic_error&) {
    throw InvalidPlan(key + ": expected an unsigned integer, got '" + *v + "'");
  }
}

double PlanFile::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double out = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument(key);
    return out;
  } catch (const std::logic_error&) {
    throw InvalidPlan(key + ": expected a number, got '" + *v + "'");
  }
}

bool PlanFile::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  const auto s = lower(*v);
  if (s == "true" || s == "yes" || s == "1" || s == "on") return true;
  if (s == "false" || s == "no" || s == "0" || s == "off") return false;
  throw InvalidPlan(key + ": expected true or false, got '" + *v + "'");
}

std::filesystem::path PlanFile::resolve(const std::filesystem::path& p) const {
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

PlanFile parse_plan(std::string_view text, std::filesystem::path base_dir) {
  PlanFile plan;
  plan.base_dir = std::move(base_dir);
  const auto& keys = plan_keys();
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = trim(line);
    if (body.empty() || body[0] == '#' || body[0] == ';') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw InvalidPlan("plan line " + std::to_string(lineno) + ": expected key = value");
    }
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto value = trim(std::string_view(body).substr(eq + 1));
    const std::string bare = key.rfind("generator.", 0) == 0 ? key.substr(10) : key;
    if (std::find(keys.begin(), keys.end(), bare) == keys.end()) {
      throw InvalidPlan("plan line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (key == "condition") {
      plan.conditions.push_back(value);
      continue;
    }
    if (!plan.values.emplace(key, value).second) {
      throw InvalidPlan("plan line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return plan;
}

PlanFile load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidPlan("cannot read plan file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_plan(ss.str(), path.parent_path());
}

Endpoint endpoint_from_plan(const PlanFile& plan, const std::string& prefix) {
  Endpoint e;
  auto base = plan.get(prefix + "endpoint");
  if (!base) throw InvalidPlan("plan has no " + prefix + "endpoint (or " + prefix + "simulate)");
  e.base_url = *base;
  e.model_name = plan.get_or(prefix + "model", "");
  e.api_key_env = plan.get_or(prefix + "api_key_env", "");
  e.timeout = std::chrono::milliseconds(plan.get_int(prefix + "timeout_ms", 60000));
  e.max_retries = static_cast<int>(plan.get_int(prefix + "max_retries", 3));
  e.temperature = plan.get_double(prefix + "temperature", 0.0);
  e.max_in_flight = static_cast<int>(plan.get_int(prefix + "max_in_flight", 4));
  e.initial_backoff = std::chrono::milliseconds(plan.get_int(prefix + "backoff_ms", 500));
  e.max_backoff = std::chrono::milliseconds(plan.get_int(prefix + "max_backoff_ms", 8000));
  try {
    validate(e);
  } catch (const Error& ex) {
    throw InvalidPlan(ex.what());
  }
  return e;
}

SimParams sim_params_from_plan(const PlanFile& plan, const std::string& prefix) {
  SimParams p;
  p.base_accuracy = plan.get_double(prefix + "sim_accuracy", 1.0);
  p.susceptibility = plan.get_double(prefix + "sim_susceptibility", 0.0);
  p.noise = plan.get_double(prefix + "sim_noise", 0.0);
  const auto mode = lower(plan.get_or(prefix + "sim_confidence", "none"));
  if (mode == "none") {
    p.confidence = ConfidenceMode::None;
  } else if (mode == "fixed") {
    p.confidence = ConfidenceMode::Fixed;
  } else if (mode == "calibrated") {
    p.confidence = ConfidenceMode::Calibrated;
  } else {
    throw InvalidPlan(prefix + "sim_confidence: expected none, fixed or calibrated");
  }
  p.fixed_confidence = plan.get_double(prefix + "sim_fixed_confidence", 1.0);
  try {
    validate(p);
  } catch (const Error& ex) {
    throw InvalidPlan(ex.what());
  }
  return p;
}

std::shared_ptr<Responder> responder_from_plan(const PlanFile& plan, const std::string& prefix) {
  if (plan.get_bool(prefix + "simulate", false)) {
    return std::make_shared<SimulatedResponder>(plan.get_or(prefix + "model", "sim"),
                                                sim_params_from_plan(plan, prefix),
                                                static_cast<int>(plan.get_int(prefix + "max_in_flight", 8)));
  }
  auto endpoint = endpoint_from_plan(plan, prefix);
  std::shared_ptr<Cassette> cassette;
  if (auto path = plan.get(prefix + "cassette")) {
    const auto mode = lower(plan.get_or(prefix + "cassette_mode", "record"));
    if (mode != "record" && mode != "replay") {
      throw InvalidPlan(prefix + "cassette_mode: expected record or replay");
    }
    cassette = std::make_shared<Cassette>(plan.resolve(*path),
                                          mode == "replay" ? CassetteMode::Replay
                                                           : CassetteMode::Record);
  }
  return std::make_shared<EndpointResponder>(
      std::make_shared<ChatClient>(std::move(endpoint), std::move(cassette)));
}

}  // namespace misbench
