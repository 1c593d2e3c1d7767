#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "galaxyedit/image.hpp"

namespace galaxyedit {

enum class Task { add, remove };
std::string to_string(Task t);
Task parse_task(const std::string& s);

enum class ObjectSource { dataset_annotation, open_set_tagger };
std::string to_string(ObjectSource s);

struct ObjectRecord {
  std::string label;
  std::string caption;
  BBox bbox;
  Mask mask;
  ObjectSource source = ObjectSource::open_set_tagger;
  std::string mask_source = "segmenter";  // or "bbox" when the segmenter failed
  double score = 1.0;
  std::optional<double> clip_pre;
  std::optional<double> clip_post;
  double area_fraction = 0.0;

  /// Recomputes area_fraction from the mask.
  void update_area();
  /// Throws ShapeError when the invariants do not hold for a W x H image.
  void validate(int width, int height) const;
};

ObjectRecord make_object_record(std::string label, std::string caption, const BBox& bbox, Mask mask,
                                ObjectSource source = ObjectSource::open_set_tagger);

struct Instruction {
  std::string text;
  std::string strategy;  // simple | attribute | spatial | multi
  bool operator==(const Instruction&) const = default;
};

/// The manifest's object summary; for groups, the union box and OR mask area.
struct ManifestObject {
  std::string label, caption;
  BBox bbox;
  std::optional<double> clip_pre, clip_post;
  double area_fraction = 0.0;
};

struct Provenance {
  std::string pipeline_version;
  std::uint64_t seed = 0;
};

/// One manifest line. `objects` and `combined_mask` live only in memory.
struct EditSample {
  std::string sample_id;
  Task task = Task::remove;
  std::string source_path, target_path, mask_path;  // relative to the manifest
  std::vector<Instruction> instructions;
  ManifestObject object;
  Provenance provenance;

  std::vector<ObjectRecord> objects;
  Mask combined_mask;
};

nlohmann::ordered_json to_json(const EditSample& s);
EditSample edit_sample_from_json(const nlohmann::json& j);

std::vector<EditSample> read_manifest(const std::filesystem::path& path);
/// One compact JSON object per line, in the given order.
std::string manifest_text(const std::vector<EditSample>& samples);
void write_manifest(const std::filesystem::path& path, const std::vector<EditSample>& samples);

/// Schema and cross-record checks; returns one message per violation.
std::vector<std::string> validate_manifest(const std::filesystem::path& path);

inline constexpr const char* kPipelineVersion = "galaxyedit-pipeline/1";

}  // namespace galaxyedit
