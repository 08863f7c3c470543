#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "misbench/instruction.hpp"
#include "misbench/metrics.hpp"

namespace misbench {

inline constexpr int kStoreSchemaVersion = 1;

// One generated implicit guidance string, raw or masked.
struct GuidanceRecord {
  std::string run_id;
  std::string item_id;
  int variant_id = 0;
  bool masked = false;
  GuidanceDirection direction = GuidanceDirection::HelpToRight;
  std::string target;  // the key the generator was told is correct
  std::string text;
  bool leaked = false;  // masked copies: whether anything was replaced
  bool ok = true;       // false when the generator reply had too few variants
  std::string error;
};

nlohmann::json record_to_json(const RunRecord& r);
RunRecord record_from_json(const nlohmann::json& j);
nlohmann::json guidance_to_json(const GuidanceRecord& g);
GuidanceRecord guidance_from_json(const nlohmann::json& j);

// Key of (run_id, item_id, stage, condition hash, sample).
std::string record_key(const std::string& run_id, const std::string& item_id, Stage stage,
                       const std::string& condition_hash, int sample);

// Append-only JSONL log. Each line carries "schema" and "kind"
// ("run" or "guidance"). Duplicate keys are ignored, so replaying a log
// rebuilds the same contents. An empty path keeps everything in memory.
class RunStore {
 public:
  RunStore() = default;
  explicit RunStore(std::filesystem::path path);

  // False when the key is already present.
  bool append(const RunRecord& r);
  bool append(const GuidanceRecord& g);

  bool contains(const std::string& key) const;
  std::optional<RunRecord> find(const std::string& run_id, const std::string& item_id, Stage stage,
                                const std::string& condition_hash, int sample) const;
  std::optional<GuidanceRecord> find_guidance(const std::string& run_id,
                                              const std::string& item_id, int variant_id,
                                              bool masked) const;

  // Records in append order, optionally filtered by run.
  std::vector<RunRecord> records(const std::string& run_id = {}) const;
  std::vector<RunRecord> records(const std::string& run_id, Stage stage) const;
  std::vector<GuidanceRecord> guidance(const std::string& run_id = {}) const;
  // Both cover run records and guidance records.
  std::vector<std::string> run_ids() const;

  std::size_t size() const;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  void write_line(const nlohmann::json& j);

  std::filesystem::path path_;
  std::ofstream out_;
  mutable std::mutex mu_;
  std::vector<RunRecord> records_;
  std::vector<GuidanceRecord> guidance_;
  std::unordered_map<std::string, std::size_t> record_index_;
  std::unordered_map<std::string, std::size_t> guidance_index_;
};

}  // namespace misbench
