#include "misbench/store.hpp"

#include <algorithm>
#include <set>

#include "misbench/error.hpp"
#include "misbench/rng.hpp"

namespace misbench {

using nlohmann::json;

namespace {

json optional_json(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

std::string guidance_key(const std::string& run_id, const std::string& item_id, int variant,
                         bool masked) {
  std::string k = run_id;
  k += '\x1f';
  k += item_id;
  k += '\x1f';
  k += std::to_string(variant);
  k += masked ? "m" : "r";
  return k;
}

}  // namespace

std::string record_key(const std::string& run_id, const std::string& item_id, Stage stage,
                       const std::string& condition_hash, int sample) {
  std::string k = run_id;
  k += '\x1f';
  k += item_id;
  k += '\x1f';
  k += to_string(stage);
  k += '\x1f';
  k += condition_hash;
  k += '\x1f';
  k += std::to_string(sample);
  return k;
}

json record_to_json(const RunRecord& r) {
  json j;
  j["schema"] = kStoreSchemaVersion;
  j["kind"] = "run";
  j["run_id"] = r.run_id;
  j["item_id"] = r.item_id;
  j["model"] = r.model_name;
  j["stage"] = to_string(r.stage);
  j["condition_hash"] = r.condition_hash;
  j["condition"] = r.condition;
  j["sample"] = r.sample;
  j["target"] = optional_json(r.target);
  j["raw"] = r.raw;
  if (r.parsed) {
    j["parsed"] = {{"label", r.parsed->label}, {"path", to_string(r.parsed->path)}};
  } else {
    j["parsed"] = nullptr;
  }
  j["correct"] = r.correct ? json(*r.correct) : json(nullptr);
  j["confidence"] = r.confidence ? json(*r.confidence) : json(nullptr);
  j["timestamp"] = r.timestamp;
  j["seed"] = hex64(r.seed);
  return j;
}

RunRecord record_from_json(const json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.item_id = j.at("item_id").get<std::string>();
  r.model_name = j.at("model").get<std::string>();
  const auto stage = parse_stage(j.at("stage").get<std::string>());
  if (!stage) throw StoreError("unknown stage: " + j.at("stage").dump());
  r.stage = *stage;
  r.condition_hash = j.at("condition_hash").get<std::string>();
  r.condition = j.value("condition", json::object());
  r.sample = j.at("sample").get<int>();
  if (j.contains("target") && !j["target"].is_null()) r.target = j["target"].get<std::string>();
  r.raw = j.at("raw").get<std::string>();
  if (j.contains("parsed") && !j["parsed"].is_null()) {
    const auto& p = j["parsed"];
    const auto path = parse_parse_path(p.at("path").get<std::string>());
    if (!path) throw StoreError("unknown parse path: " + p.at("path").dump());
    r.parsed = ParsedAnswer{p.at("label").get<std::string>(), r.raw, *path};
  }
  if (j.contains("correct") && !j["correct"].is_null()) r.correct = j["correct"].get<bool>();
  if (j.contains("confidence") && !j["confidence"].is_null()) {
    r.confidence = j["confidence"].get<double>();
  }
  r.timestamp = j.value("timestamp", std::int64_t{0});
  r.seed = std::stoull(j.value("seed", std::string("0")), nullptr, 16);
  return r;
}

json guidance_to_json(const GuidanceRecord& g) {
  json j;
  j["schema"] = kStoreSchemaVersion;
  j["kind"] = "guidance";
  j["run_id"] = g.run_id;
  j["item_id"] = g.item_id;
  j["variant_id"] = g.variant_id;
  j["masked"] = g.masked;
  j["direction"] = to_string(g.direction);
  j["target"] = g.target;
  j["text"] = g.text;
  j["leaked"] = g.leaked;
  j["ok"] = g.ok;
  j["error"] = g.error;
  return j;
}

GuidanceRecord guidance_from_json(const json& j) {
  GuidanceRecord g;
  g.run_id = j.at("run_id").get<std::string>();
  g.item_id = j.at("item_id").get<std::string>();
  g.variant_id = j.at("variant_id").get<int>();
  g.masked = j.at("masked").get<bool>();
  const auto dir = j.at("direction").get<std::string>();
  if (dir == "mislead") {
    g.direction = GuidanceDirection::MisleadToWrong;
  } else if (dir == "help") {
    g.direction = GuidanceDirection::HelpToRight;
  } else {
    throw StoreError("unknown guidance direction: " + dir);
  }
  g.target = j.value("target", std::string());
  g.text = j.at("text").get<std::string>();
  g.leaked = j.value("leaked", false);
  g.ok = j.value("ok", true);
  g.error = j.value("error", std::string());
  return g;
}

RunStore::RunStore(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty()) return;
  bool unterminated_tail = false;
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_);
    if (!in) throw StoreError("cannot read store: " + path_.string());
    std::string line;
    std::size_t lineno = 0;
    bool torn = false;
    bool unterminated = false;
    std::uintmax_t good_bytes = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto line_bytes = line.size() + (in.eof() ? 0 : 1);
      if (line.empty()) {
        good_bytes += line_bytes;
        continue;
      }
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error&) {
        // A crash mid-append leaves at most one torn final line.
        if (in.peek() == std::char_traits<char>::eof()) {
          torn = true;
          break;
        }
        throw StoreError("corrupt store line " + std::to_string(lineno) + " in " +
                         path_.string());
      }
      try {
        if (j.value("schema", 0) != kStoreSchemaVersion) {
          throw StoreError("unsupported store schema");
        }
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "run") {
          auto r = record_from_json(j);
          auto key = record_key(r.run_id, r.item_id, r.stage, r.condition_hash, r.sample);
          if (record_index_.emplace(key, records_.size()).second) records_.push_back(std::move(r));
        } else if (kind == "guidance") {
          auto g = guidance_from_json(j);
          auto key = guidance_key(g.run_id, g.item_id, g.variant_id, g.masked);
          if (guidance_index_.emplace(key, guidance_.size()).second) {
            guidance_.push_back(std::move(g));
          }
        } else {
          throw StoreError("unknown record kind: " + kind);
        }
        good_bytes += line_bytes;
        unterminated = in.eof();
      } catch (const json::exception& e) {
        throw StoreError("malformed store line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    in.close();
    // Drop a torn tail so the next append starts on a fresh line.
    if (torn) std::filesystem::resize_file(path_, good_bytes);
    unterminated_tail = unterminated && !torn;
  } else if (path_.has_parent_path()) {
    std::filesystem::create_directories(path_.parent_path());
  }
  out_.open(path_, std::ios::app);
  if (!out_) throw StoreError("cannot open store for append: " + path_.string());
  if (unterminated_tail) out_ << '\n' << std::flush;
}

void RunStore::write_line(const json& j) {
  if (path_.empty()) return;
  out_ << j.dump() << '\n';
  out_.flush();
  if (!out_) throw StoreError("write failed: " + path_.string());
}

bool RunStore::append(const RunRecord& r) {
  auto key = record_key(r.run_id, r.item_id, r.stage, r.condition_hash, r.sample);
  std::lock_guard lock(mu_);
  if (record_index_.contains(key)) return false;
  write_line(record_to_json(r));
  record_index_.emplace(std::move(key), records_.size());
  records_.push_back(r);
  return true;
}

bool RunStore::append(const GuidanceRecord& g) {
  auto key = guidance_key(g.run_id, g.item_id, g.variant_id, g.masked);
  std::lock_guard lock(mu_);
  if (guidance_index_.contains(key)) return false;
  write_line(guidance_to_json(g));
  guidance_index_.emplace(std::move(key), guidance_.size());
  guidance_.push_back(g);
  return true;
}

bool RunStore::contains(const std::string& key) const {
  std::lock_guard lock(mu_);
  return record_index_.contains(key);
}

std::optional<RunRecord> RunStore::find(const std::string& run_id, const std::string& item_id,
                                        Stage stage, const std::string& condition_hash,
                                        int sample) const {
  std::lock_guard lock(mu_);
  auto it = record_index_.find(record_key(run_id, item_id, stage, condition_hash, sample));
  if (it == record_index_.end()) return std::nullopt;
  return records_[it->second];
}

std::optional<GuidanceRecord> RunStore::find_guidance(const std::string& run_id,
                                                      const std::string& item_id, int variant_id,
                                                      bool masked) const {
  std::lock_guard lock(mu_);
  auto it = guidance_index_.find(guidance_key(run_id, item_id, variant_id, masked));
  if (it == guidance_index_.end()) return std::nullopt;
  return guidance_[it->second];
}

std::vector<RunRecord> RunStore::records(const std::string& run_id) const {
  std::lock_guard lock(mu_);
  if (run_id.empty()) return records_;
  std::vector<RunRecord> out;
  for (const auto& r : records_) {
    if (r.run_id == run_id) out.push_back(r);
  }
  return out;
}

std::vector<RunRecord> RunStore::records(const std::string& run_id, Stage stage) const {
  std::lock_guard lock(mu_);
  std::vector<RunRecord> out;
  for (const auto& r : records_) {
    if (r.run_id == run_id && r.stage == stage) out.push_back(r);
  }
  return out;
}

std::vector<GuidanceRecord> RunStore::guidance(const std::string& run_id) const {
  std::lock_guard lock(mu_);
  if (run_id.empty()) return guidance_;
  std::vector<GuidanceRecord> out;
  for (const auto& g : guidance_) {
    if (g.run_id == run_id) out.push_back(g);
  }
  return out;
}

std::vector<std::string> RunStore::run_ids() const {
  std::lock_guard lock(mu_);
  std::set<std::string> ids;
  for (const auto& r : records_) ids.insert(r.run_id);
  for (const auto& g : guidance_) ids.insert(g.run_id);
  return {ids.begin(), ids.end()};
}

std::size_t RunStore::size() const {
  std::lock_guard lock(mu_);
  return records_.size() + guidance_.size();
}

}  // namespace misbench
