#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tossim/config.hpp"
#include "tossim/policy.hpp"
#include "tossim/scene.hpp"
#include "tossim/simulator.hpp"
#include "tossim/trainer.hpp"

namespace tossim {

/// sim.* keys with SimParams defaults for anything unset.
SimParams sim_params_from_config(const Config& cfg);

/// Object set by name: "seen", "unseen", or a single kind ("hammer",
/// "ball", ...). Single kinds are drawn from whichever set defines them,
/// scaled and parameterized through objects.scale and object.<kind>.* keys.
/// Throws std::invalid_argument for unknown names.
std::vector<ObjectModel> objects_for_set(const std::string& set,
                                         const Config& cfg);

/// One experiment: a variant list is imposed by the operation (ablation
/// runs all four), everything else comes from here. `raw` keeps the full
/// key/value config so nested factories (workspace, objects, policy,
/// train) read their own sections.
struct ExperimentConfig {
  std::string object_set = "seen";
  std::string box_layout = "train";  // "train" | "displaced"
  long eval_steps = 1000;
  std::string out_dir = "runs";
  std::vector<std::uint64_t> seeds = {0};
  Config raw;

  /// experiment.* keys: object_set, box_layout, eval_steps, out_dir, seeds
  /// (comma-separated list).
  static ExperimentConfig from_config(const Config& cfg);

  const std::vector<BoxSpec>& targets(const WorkspaceConfig& ws) const;
};

struct KindStats {
  ObjectKind kind = ObjectKind::Ball;
  long grasp_successes = 0;
  long throws_in_box = 0;
  double throw_pct = 0.0;
};

/// Success metrics over a step log. Curves follow the windowed convention:
/// the value at 1-based step i is the success count over the last
/// min(i, j) steps divided by j (equivalently: window success rate
/// weighted by i/j while i < j), with j = `window`. The throwing curve
/// counts only steps that threw, scaled by the same i/j ramp.
struct MetricsReport {
  long steps = 0;
  long grasp_successes = 0;
  long throws = 0;
  long throws_in_box = 0;
  double grasp_pct = 0.0;  // successes / steps * 100
  double throw_pct = 0.0;  // in-box / throws * 100
  std::vector<KindStats> per_kind;
  std::vector<double> grasp_curve;
  std::vector<double> throw_curve;
};

MetricsReport metrics_from_steps(const std::vector<StepRecord>& steps,
                                 const std::vector<GraspEvent>& grasps,
                                 long window = 1000);

/// 2D grid over the object silhouette in the object frame, counting where
/// successful grasps landed, split by throw outcome. Cells outside the
/// dilated silhouette are zero by construction; the mask threshold adds
/// half a cell diagonal so any point within the gripper dilation bins into
/// an in-mask cell.
struct GraspHistogram {
  ObjectKind kind = ObjectKind::Ball;
  int rows = 0, cols = 0;
  double cell = 0.0;      // meters per cell
  double u0 = 0.0, v0 = 0.0;  // object-frame coordinate of cell (0,0) corner
  int com_row = 0, com_col = 0;
  std::vector<double> success;  // all successful grasps
  std::vector<double> to_box;   // subset whose throw landed in the box
  std::vector<double> missed;   // subset whose throw did not
  std::vector<std::uint8_t> mask;

  double& at(std::vector<double>& g, int r, int c) {
    return g[static_cast<std::size_t>(r) * cols + c];
  }
};

GraspHistogram build_grasp_histogram(const ObjectModel& model,
                                     const std::vector<GraspEvent>& events,
                                     double cell, double dilation);

/// Shannon entropy (nats) of the normalized success grid; 0 for an empty
/// grid.
double histogram_entropy(const GraspHistogram& h);

/// Mean |s| (offset along the principal axis) of successful grasps of the
/// given kind; 0 when there are none.
double mean_abs_offset(const std::vector<GraspEvent>& events, ObjectKind kind);

/// Per-kind grids as CSV matrices plus a JSON sidecar (dimensions, CoM
/// cell, entropy, counts) under out_dir.
void export_grasp_histograms(const std::vector<GraspEvent>& events,
                             const std::vector<ObjectModel>& set, double cell,
                             double dilation, const std::string& out_dir);

/// Artifacts of one trained (variant, seed): directory layout is
/// <out_dir>/<variant>_s<seed>/ holding steps.csv, grasp_events.csv,
/// checkpoints, curves.csv, eval.csv, histograms, and report.json.
struct RunSummary {
  PolicyVariant variant = PolicyVariant::ResidualPhysics;
  std::uint64_t seed = 0;
  GraspSupervision supervision = GraspSupervision::Width;
  std::string object_set = "seen";
  MetricsReport train;
  MetricsReport eval;
  double pretrain_rms = 0.0;
  long dropped_unreachable = 0;
  std::uint64_t param_hash = 0;
  std::string dir;
};

/// Full protocol for one variant and seed: build simulator and policy,
/// pre-train when the variant calls for it, run the training loop, then
/// evaluate greedily for eval_steps on a fresh simulator with the same
/// object set. Evaluation leaves parameters untouched (checked via
/// param_hash). Writes all artifacts plus report.json.
RunSummary run_single(const ExperimentConfig& cfg, PolicyVariant variant,
                      std::uint64_t seed);

/// Loads the report.json of a finished run directory.
RunSummary load_run_summary(const std::string& dir);

struct AblationReport {
  // Means over seeds of the greedy-eval percentages, one entry per variant
  // in enum order.
  std::vector<double> throw_pct;
  std::vector<double> grasp_pct;
  std::vector<RunSummary> runs;
};

/// Trains all four variants over the config's seed list (honoring
/// TOSSBENCH_THREADS for run-level parallelism), writes ablation.json.
AblationReport run_ablation(const ExperimentConfig& cfg);

struct SupervisionReport {
  RunSummary width;
  RunSummary throw_accuracy;
  double width_entropy = 0.0;          // hammer grasp-histogram entropy
  double throw_accuracy_entropy = 0.0;
};

/// Trains ResidualPhysics under both grasp-supervision modes on the
/// config's object set (seed = first of the seed list). width_from, when
/// non-empty, points at an existing width-mode run directory to reuse
/// instead of retraining. Writes supervision.json.
SupervisionReport run_supervision_study(const ExperimentConfig& cfg,
                                        const std::string& width_from = "");

struct LocationsReport {
  // Variant, seed, seen-layout and displaced-layout throwing success.
  struct Row {
    PolicyVariant variant;
    std::uint64_t seed;
    double seen_throw_pct;
    double displaced_throw_pct;
  };
  std::vector<Row> rows;
};

/// Evaluates finished training runs under runs_dir (an ablation output
/// tree) on the displaced box layout, without further training. Physics
/// conditioning recomputes for the new targets; nothing is retrained.
/// Writes unseen_locations.json.
LocationsReport run_unseen_locations(const ExperimentConfig& cfg,
                                     const std::string& runs_dir);

struct UnseenObjectsReport {
  struct Row {
    PolicyVariant variant;
    std::uint64_t seed;
    double seen_grasp_pct, seen_throw_pct;
    double unseen_grasp_pct, unseen_throw_pct;
    std::vector<KindStats> per_kind;
  };
  std::vector<Row> rows;
};

/// Evaluates finished runs (trained on the seen mixed set) on the unseen
/// object set. Writes unseen_objects.json.
UnseenObjectsReport run_unseen_objects(const ExperimentConfig& cfg,
                                       const std::string& runs_dir);

}  // namespace tossim
