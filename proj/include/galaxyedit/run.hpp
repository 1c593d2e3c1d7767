#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "galaxyedit/instructions.hpp"
#include "galaxyedit/metrics.hpp"
#include "galaxyedit/pipeline.hpp"
#include "galaxyedit/training.hpp"

namespace galaxyedit {

/// A stage failed; `summary` carries quarantine counts when known.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& msg, nlohmann::json summary = nlohmann::json::object())
      : std::runtime_error(stage + ": " + msg), stage_(std::move(stage)), summary_(std::move(summary)) {}
  const std::string& stage() const { return stage_; }
  const nlohmann::json& summary() const { return summary_; }

 private:
  std::string stage_;
  nlohmann::json summary_;
};

std::string sha256_hex(std::string_view data);
/// Hash over the sorted relative paths and contents of every regular file
/// under `dir`, skipping names that start with '.'.
std::string hash_tree(const std::filesystem::path& dir);

nlohmann::json policy_to_json(const FilterPolicy& p);

struct RunConfig {
  std::uint64_t seed = 7;  // pipeline and instruction seed
  int synth_n = 8;
  std::uint64_t synth_seed = 42;
  SynthConfig scene;
  FilterPolicy policy = FilterPolicy::defaults();
  nlohmann::json clients = nlohmann::json::object();
  std::uint64_t clients_seed = 1;
  std::set<std::string> strategies = {"simple", "attribute", "spatial", "multi"};
  double margin = 0.3;
  TrainConfig train;
  std::uint64_t sample_seed = 99;
  nlohmann::json providers = {{"clip", "mock"}, {"dino", "mock"}};

  /// Relative paths inside (the policy blocklist) resolve against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunConfig from_file(const std::filesystem::path& path);
  /// Fully resolved form; its hash identifies the run.
  nlohmann::json to_json() const;
  std::string hash() const;
};

/// Samples every manifest record with the adapter and writes
/// `<out_dir>/<sample_id>.png`.
void predict_manifest(const AdapterAssembly<float>& a, const std::filesystem::path& manifest,
                      const std::filesystem::path& out_dir, const TrainConfig& cfg, std::uint64_t seed);

/// Control image for a source under the given conditioning.
Image control_image(const Image& source, Conditioning c);

struct StageRecord {
  std::string name, key, output_hash;
  bool skipped = false;
  double seconds = 0;
  nlohmann::json to_json() const;
};

struct E2EResult {
  std::vector<StageRecord> stages;
  std::filesystem::path manifest;
  std::vector<std::string> violations;
  nlohmann::json report;
  const StageRecord* stage(const std::string& name) const;
};

/// synth -> pipeline -> instructions -> train -> sample -> eval under
/// `run_dir/stages/<name>`. A stage whose key (config + input hashes) and
/// output hash match its stamp is skipped.
E2EResult run_e2e(const RunConfig& cfg, const std::filesystem::path& run_dir);

inline const std::vector<std::string>& e2e_stage_names() {
  static const std::vector<std::string> n = {"synth", "pipeline", "instructions", "train", "sample", "eval"};
  return n;
}

}  // namespace galaxyedit
