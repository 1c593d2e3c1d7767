#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "galaxyedit/image.hpp"

namespace galaxyedit {

enum class ShapeKind { rect, disc, triangle };

/// One object category of the synthetic world. The color doubles as the
/// mock embedder's planted similarity table.
struct ObjectClass {
  std::string label;
  std::array<std::uint8_t, 3> color;
  ShapeKind shape;
  std::vector<std::string> captions;
};

const std::vector<ObjectClass>& object_classes();
/// Index into object_classes(), or -1.
int find_class(const std::string& label);

/// Planar depth d(u, v) = d0 + du * u + dv * v in metres.
struct DepthRamp {
  double d0 = 4.0, du = 0.0, dv = -0.02;
  double at(double u, double v) const { return d0 + du * u + dv * v; }
};

struct TruthObject {
  std::string label, caption;
  BBox bbox;
  double score = 1.0;
  double depth = 0.0;
};

/// Contents of `<image>.truth.json`.
struct SceneTruth {
  int width = 0, height = 0;
  std::vector<std::string> labels;
  std::vector<TruthObject> objects;
  DepthRamp depth;
};

nlohmann::json to_json(const SceneTruth& t);
SceneTruth scene_truth_from_json(const nlohmann::json& j);
std::filesystem::path sidecar_path(const std::filesystem::path& image);
SceneTruth read_sidecar(const std::filesystem::path& image);

struct SynthConfig {
  int width = 128, height = 128;
  int min_objects = 1, max_objects = 4;
  double group_probability = 0.3;      // chance of a row of 2-3 same-class instances
  double tiny_probability = 0.05;      // objects below the size filter
  double huge_probability = 0.03;      // objects above the size filter
  double low_score_probability = 0.1;  // detections below the score threshold

  static SynthConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct SynthScene {
  Image image;
  SceneTruth truth;
};

SynthScene make_scene(const SynthConfig& cfg, std::uint64_t seed);

/// Writes scene_NNNN.png plus sidecars; returns the image paths.
std::vector<std::filesystem::path> synth_corpus(int n, std::uint64_t seed, const std::filesystem::path& out_dir,
                                                const SynthConfig& cfg = {});

/// Small in-memory add/remove dataset: source/target tensors in [-1, 1].
struct EditPairSet {
  Tensor<float> source, target;
  std::vector<std::string> instructions;
  std::vector<std::string> tasks;

  int size() const { return source.n(); }
  EditPairSet subset(int begin, int end) const;
};

EditPairSet make_edit_pairs(int n, int size, std::uint64_t seed);

}  // namespace galaxyedit
