#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "galaxyedit/instructions.hpp"
#include "galaxyedit/model_clients.hpp"
#include "galaxyedit/records.hpp"
#include "galaxyedit/synth.hpp"

namespace galaxyedit {

struct FilterPolicy {
  double min_area_fraction = 0.0018;
  double max_area_fraction = 0.5;
  std::set<std::string> keyword_blocklist;
  double clip_accept_threshold = 0.2;
  int dilation_kernel = 15;
  double detector_threshold = 0.35;
  // Inpainted-region quality bounds (interior of the dilated mask, gray levels 0..255).
  double max_local_std = 40.0;
  double max_edge_density = 0.2;
  double quality_canny_low = 40.0, quality_canny_high = 100.0;

  /// Defaults with the built-in starter blocklist.
  static FilterPolicy defaults();
  /// Keys override the defaults; "blocklist" names a file relative to `base_dir`.
  static FilterPolicy from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static FilterPolicy from_file(const std::filesystem::path& path);
  void validate() const;
};

const std::vector<std::string>& default_blocklist();
/// One token per line; blank lines and '#' comments are ignored.
std::set<std::string> load_blocklist(const std::filesystem::path& path);

bool filter_by_size(const ObjectRecord& obj, const FilterPolicy& pol);
bool filter_by_keywords(const ObjectRecord& obj, const FilterPolicy& pol);

/// pre >= tau and post < pre.
bool semantic_decision(double clip_pre, double clip_post, double tau);
/// Scores both crops against the label, stores them on the record and
/// applies semantic_decision. Client failures propagate as ClientError.
bool semantic_filter(ObjectRecord& obj, const Image& crop_pre, const Image& crop_post, const ModelClients& clients,
                     const FilterPolicy& pol);

/// Binary Canny edge map: Gaussian smoothing (sigma 1.4), Sobel gradients,
/// non-maximum suppression and 8-connected hysteresis. Thresholds apply to
/// the gradient magnitude of the 0..255 gray image.
Mask canny_edges(const Image& img, double low, double high);
/// Random threshold pair for canny conditioning.
std::pair<double, double> random_canny_thresholds(std::mt19937_64& rng);
/// Edge map as an RGB image (white edges on black).
Image canny_image(const Image& img, double low, double high);

struct QualityReport {
  double local_std = 0.0;
  double edge_density = 0.0;
  int interior_pixels = 0;
  bool ok = true;
};
QualityReport inpaint_quality(const Image& inpainted, const Mask& dilated, const FilterPolicy& pol);

/// One edit: a single object or an OR-combined multi-instance group.
struct EditUnit {
  std::string id;  // sample id without the task suffix
  std::vector<ObjectRecord> objects;
  Mask combined_mask;
  std::string label, caption;
  BBox bbox;
  std::vector<Instruction> remove_instructions, add_instructions;
};

EditUnit single_unit(const std::string& stem, int index, const ObjectRecord& obj);
EditUnit group_unit(const std::string& stem, const InstanceGroup& group);

struct QuarantineEntry {
  std::string image, unit, stage, error;
  nlohmann::json to_json() const;
};

struct BuiltPair {
  EditUnit unit;
  Mask dilated;
  Image inpainted;
  EditSample remove, add;
};

struct BuildResult {
  std::vector<BuiltPair> pairs;
  std::vector<QuarantineEntry> quarantine;
  int semantic_rejected = 0, quality_rejected = 0;
};

/// Dilate, inpaint, check and emit remove/add twins for each unit.
/// `source_rel` is the source image path as written in the manifest; targets
/// and masks go to targets/<id>.png and masks/<id>.png.
BuildResult build_pairs(const Image& image, const std::string& source_rel, const std::vector<EditUnit>& units,
                        const ModelClients& clients, const FilterPolicy& pol, std::uint64_t seed);

struct PipelineStats {
  int images = 0, tagged = 0, detections = 0, below_threshold = 0, mask_fallbacks = 0;
  int size_rejected = 0, keyword_rejected = 0, semantic_rejected = 0, quality_rejected = 0;
  int groups = 0, samples = 0, quarantined = 0;
  nlohmann::json to_json() const;
};

/// Runs stages 1-3 over every PNG in `images_dir` (sorted by name) and writes
/// images/, targets/, masks/, manifest.jsonl and quarantine.jsonl under `out_dir`.
PipelineStats run_pipeline(const std::filesystem::path& images_dir, const std::filesystem::path& out_dir,
                           const FilterPolicy& pol, const ModelClients& clients, std::uint64_t seed);

}  // namespace galaxyedit
