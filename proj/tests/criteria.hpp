#pragma once

// Oracle checks shared by the unit suites (small n) and the acceptance runner (full n).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "galaxyedit/adapter.hpp"
#include "galaxyedit/instructions.hpp"
#include "galaxyedit/rating.hpp"

namespace criteria {

/// Max over inputs of max|joint - base| / max(max|base|, 1e-12) for a fresh assembly.
double init_identity_error(galaxyedit::FusionMode mode, int n_inputs, std::uint64_t seed);

/// Brute-force quadratic form y_o = sum_i w1_oi x_i + sum_ij K_oij x_i x_j, K_oij = sum_q a_qoi b_qoj,
/// evaluated with explicit loops over a k x k window (zero padding).
galaxyedit::Tensor<double> volterra_bruteforce(const galaxyedit::Tensor<double>& x,
                                               const galaxyedit::VolterraLayerParams<double>& p);

/// Max abs error of the factored layer against the brute-force form over every
/// (C_in, C_out, Q) in [1, max_c]^2 x [1, max_q] with k = 1.
double volterra_oracle_error(int inputs_per_config, int max_c, int max_q, std::uint64_t seed);

struct GradReport {
  double max_relative_error = 0;
  std::string worst;
  std::int64_t n_params = 0;
  bool finite = true;
};

/// Central differences on every bridge entry and the fusion weight of a
/// volterra fusion block (both directions) plus a standalone Volterra layer.
GradReport fusion_gradient_check(std::uint64_t seed, double eps = 1e-6);

struct SpatialReport {
  int scenes = 0, agree = 0, antisymmetric = 0, decided = 0;
};
/// Two random objects per scene on a planar depth ramp, full path from depth
/// map and masks through projection and predicate, against a loop oracle.
SpatialReport spatial_oracle(int n_scenes, std::uint64_t seed);

struct MultiReport {
  int sets = 0, layout_ok = 0, selection_ok = 0, mask_ok = 0;
};
/// Random same-class instance sets against a sort-and-take oracle.
MultiReport multi_instance_oracle(int n_sets, std::uint64_t seed);

/// Planted ratings: model -> task -> list of (rating, count); "ground_truth" under task "all".
using Plant = std::vector<std::tuple<std::string, std::string, int, int>>;
const Plant& paper_rating_plant();

/// Sample set with one item per rating slot needed by `plant`, written under dir.
galaxyedit::SampleSet write_fixture_samples(const std::filesystem::path& dir, const Plant& plant);

/// Submits the plant through the service (one session per evaluator) and returns the report.
galaxyedit::AggregateReport submit_plant(galaxyedit::RatingService& svc, const Plant& plant);

/// Every model tag string that must never reach a client.
const std::vector<std::string>& model_tags();

/// Dilation by a k x k square as the union of shifted copies of the mask.
galaxyedit::Mask minkowski_dilation(const galaxyedit::Mask& m, int k);

struct PipelineReport {
  int size_cases = 0, size_ok = 0;
  int dilation_masks = 0, dilation_ok = 0;
  int pairs = 0, swap_ok = 0;
  bool rerun_identical = false;
};
/// Size-filter boundary fixture, random-mask dilation, add/remove swap and a
/// same-seed rerun of the mock pipeline under `work`.
PipelineReport pipeline_exactness(const std::filesystem::path& work, std::uint64_t seed);

struct CrashReport {
  int acked = 0, lost = 0;
  bool killed = false;
};
/// A forked writer submits ratings and acks each one over a pipe; it is
/// SIGKILLed after `kill_after` acks and the store is reopened.
CrashReport crash_recovery(const std::filesystem::path& dir, int kill_after);

struct AuditReport {
  int responses = 0;
  std::vector<std::string> leaks;  // "<tag> in <request>"
  bool report_has_names = false;
};
/// Drives every endpoint over HTTP (happy and error paths) and scans bodies
/// and headers for model tags, case-insensitively.
AuditReport serialization_audit(const std::filesystem::path& dir);

}  // namespace criteria
