#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "galaxyedit/model_clients.hpp"
#include "galaxyedit/records.hpp"

namespace galaxyedit {

/// "a" or "an" by the first letter.
std::string indefinite_article(const std::string& word);
std::string pluralize(const std::string& noun);
/// "one" .. "ten", digits above.
std::string number_word(int k);

std::string simple_instruction(const std::string& label, Task task);
/// Task prefix plus the caption with any leading article folded; falls back
/// to the simple template for an empty caption.
std::string attribute_instruction(const std::string& label, const std::string& caption, Task task);

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  /// fx = fy = max(W, H), principal point at the image center.
  static Intrinsics default_for(int width, int height);
};

using Point3 = std::array<double, 3>;

struct PointCloud {
  std::vector<Point3> points;
  int skipped = 0;  // masked pixels with non-positive depth
};

PointCloud project_to_pointcloud(const DepthMap& depth, const Mask& mask, const Intrinsics& k);

struct SceneObject3D {
  ObjectRecord record;
  std::vector<Point3> points;
  Point3 bbox_min{}, bbox_max{};
  Point3 centroid{};
};

/// Per-axis 5th..95th percentile box; centroid is the mean point.
SceneObject3D make_scene_object(ObjectRecord record, std::vector<Point3> points);

enum class Predicate { left, right, above, below, front, behind };
std::string to_string(Predicate p);
std::string relation_phrase(Predicate p);
Predicate inverse(Predicate p);

/// Dominant normalized axis of centroid(a) - centroid(b), or nothing when
/// its lead over the runner-up axis is not above `margin`.
std::optional<Predicate> assign_predicate(const SceneObject3D& a, const SceneObject3D& b, double margin = 0.3);

/// Empty when the anchor has no caption.
std::optional<std::string> spatial_instruction(const std::string& subject_label, Predicate pred,
                                               const std::string& anchor_caption, Task task);

struct LabelResult {
  std::string label;
  bool fallback = false;  // client failed, head-noun rule used
};
LabelResult caption_to_label(const std::string& caption, const ModelClients& clients);

enum class Layout { horizontal, vertical };
enum class Direction { left, right, top, bottom };
std::string to_string(Layout l);
std::string to_string(Direction d);

struct InstanceGroup {
  std::string class_label;
  std::vector<ObjectRecord> instances;
  Layout layout = Layout::horizontal;
  int k = 1;
  Direction direction = Direction::left;
  std::vector<int> selected;  // indices into instances, nearest the edge first
  Mask combined_mask;
};

Layout infer_layout(const std::vector<ObjectRecord>& instances);
/// Deterministic core: take the k instances nearest `direction`'s edge.
InstanceGroup plan_group(const std::vector<ObjectRecord>& instances, Direction direction, int k);
/// Samples the direction along the inferred layout and k in [1, n].
InstanceGroup multi_instance_plan(const std::vector<ObjectRecord>& instances, std::mt19937_64& rng);
std::string multi_instance_instruction(const InstanceGroup& g, Task task);
std::string multi_instance_instruction(const std::string& label, int k, Direction direction, Task task);

struct InstructionGenConfig {
  std::set<std::string> strategies = {"simple", "attribute", "spatial", "multi"};
  double margin = 0.3;
  std::optional<Intrinsics> intrinsics;
  std::uint64_t seed = 0;
};

struct InstructionGenStats {
  int records = 0, added = 0, spatial_skipped = 0, label_fallbacks = 0;
};

/// Adds instructions to every record in place and atomically rewrites the manifest.
InstructionGenStats generate_instructions(const std::filesystem::path& manifest, const ModelClients& clients,
                                          const InstructionGenConfig& cfg);

}  // namespace galaxyedit
