#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "tossim/config.hpp"
#include "tossim/policy.hpp"
#include "tossim/rng.hpp"
#include "tossim/scene.hpp"
#include "tossim/simulator.hpp"

namespace tossim {

/// How the grasp label y is produced. Width checks the gripper state after
/// the grasping primitive; throw-accuracy marks a grasp successful only
/// when its throw lands in the intended box, which couples grasp learning
/// to throwing outcomes.
enum class GraspSupervision { Width, ThrowAccuracy };

const char* supervision_name(GraspSupervision mode);
GraspSupervision supervision_from_name(const std::string& name);

struct TrainConfig {
  long steps = 5000;
  double lr = 1e-4;
  double momentum = 0.9;
  double weight_decay = 0.03125;  // 2^-5
  double epsilon_start = 0.5;
  double epsilon_end = 0.1;
  double alpha = 0.7;       // replay rank exponent
  int batch_size = 4;       // replay samples per environment step
  long capacity = 10000;    // replay buffer bound
  GraspSupervision supervision = GraspSupervision::Width;
  std::uint64_t seed = 0;
  long checkpoint_every = 2500;  // 0 disables periodic checkpoints
  // RegressionPoP pre-training phase.
  long pretrain_steps = 1500;
  long pretrain_respawn_every = 25;
  long pretrain_holdout = 64;
  // Forced respawn after this many consecutive failed grasps; the bin can
  // end up holding only objects the current policy cannot pick.
  long max_consecutive_failures = 50;

  /// Reads train.* keys, falling back to the defaults above.
  static TrainConfig from_config(const Config& cfg);
};

/// Linear anneal: epsilon(0) = start, epsilon(steps) = end, pointwise
/// linear in between. Steps outside [0, steps] clamp.
double epsilon_at(long step, const TrainConfig& cfg);

/// One executed step, as stored for replay. The heightmap is kept by value:
/// replay re-runs the forward pass on the exact observation that produced
/// the action.
struct Transition {
  Heightmap map;
  Vec3 target;          // aim point p (target box center at rim height)
  int target_box = -1;  // id into the layout used for this run
  GraspAction action;
  double cond = 0.0;            // conditioning value at command time
  double executed_speed = 0.0;  // planar release speed, 0 when not thrown
  int y = 0;                    // grasp label under the run's supervision
  bool thrown = false;
  bool landed = false;
  bool in_target_box = false;
  Vec3 landing;                           // p_bar, valid when landed
  std::optional<double> residual;         // executed - speed_for_landing(p_bar)
  std::optional<double> throw_label;      // Huber target for this variant
  long step = -1;
  double priority = 0.0;  // |loss| at last replay visit
  long seq = -1;          // insertion counter; FIFO order and rank tie-break
};

struct Labels {
  int y = 0;
  std::optional<double> residual;
};

/// Grasp label per supervision mode plus the residual label. The residual
/// is computed whenever the object was thrown, landed, and the landing is
/// inside the solver's domain, regardless of whether it hit the box; an
/// out-of-domain landing yields no residual (callers count the drop).
/// `thrown` is null when no throw was executed.
Labels make_labels(const GraspOutcome& grasp, const ThrowOutcome* thrown,
                   double executed_planar_speed, GraspSupervision mode,
                   const WorkspaceConfig& ws);

/// Bounded FIFO store with rank-based prioritized sampling:
/// P(rank) proportional to rank^(-alpha), rank 1 = highest priority, ties
/// broken toward the older transition. Sampling is with replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(long capacity);

  long size() const { return static_cast<long>(items_.size()); }
  long capacity() const { return capacity_; }
  const Transition& at(long i) const { return items_[static_cast<std::size_t>(i)]; }

  /// Stamps seq, assigns max-priority-in-buffer (1 when empty) so fresh
  /// transitions are visited promptly, and evicts the oldest when full.
  void push(Transition t);

  /// B indices into the current buffer; empty when the buffer is empty.
  std::vector<long> sample_indices(int batch, double alpha, Rng& rng) const;

  void update_priority(long index, double priority);
  double max_priority() const;

 private:
  long capacity_;
  long next_seq_ = 0;
  std::deque<Transition> items_;
};

/// Replays the given transitions through the policy: cached forward at the
/// stored rotation, loss at the stored pixel and labels, one averaged
/// SGD step, priorities refreshed to the per-sample losses. Returns the
/// mean loss; an empty batch is a no-op returning 0.
double experience_replay(Policy& policy, ReplayBuffer& buffer,
                         const std::vector<long>& batch);

/// One row of the step log.
struct StepRecord {
  long step = 0;
  double epsilon = 0.0;
  int grasp_success = 0;
  int throw_success = 0;  // landed in the intended box
  int target_box = -1;
  bool thrown = false;
  double executed_speed = 0.0;
  std::optional<double> residual;
  std::optional<double> loss;  // mean replay loss this step
};

/// One successful grasp, in the object frame; feeds the grasp histograms.
struct GraspEvent {
  long step = 0;
  ObjectKind kind = ObjectKind::Ball;
  Vec2 point;     // grasp point, object frame
  double s = 0.0; // signed offset along the principal axis
  bool thrown = false;
  bool in_target_box = false;
};

struct PretrainReport {
  long steps = 0;
  double holdout_rms = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<GraspEvent> grasps;
  long dropped_unreachable = 0;  // thrown samples without a usable landing
  long respawns_forced = 0;
  PretrainReport pretrain;
};

/// RegressionPoP pre-training: supervises the throw head to reproduce the
/// ballistic speed for random scenes, targets, and pixels, with the trunk
/// and grasp head frozen. Draw order per step, from an Rng seeded with
/// seed ^ kPretrainSeedTag: target box jitter (2 draws), rotation, pixel.
/// Afterwards the held-out RMS between head output and ballistic speed is
/// measured on fresh targets. Throws std::logic_error for variants other
/// than RegressionPoP.
inline constexpr std::uint64_t kPretrainSeedTag = 0xb10c8a5e5eedULL;
PretrainReport pretrain_on_physics(Policy& policy, Simulator& sim,
                                   const TrainConfig& cfg);

/// The self-supervised loop. Per step: reset the bin if needed; render;
/// pick the target box round-robin; forward; epsilon-greedy action;
/// execute the grasp; on success compose and execute the throw; label;
/// store the transition; replay a batch; log. Policy draws come from a
/// single Rng seeded with cfg.seed in a fixed order (selection Bernoulli,
/// exploration rotation and pixel, throw Bernoulli, throw speed factor,
/// then the replay draws); the simulator owns its separate streams.
///
/// When out_dir is non-empty, writes steps.csv and grasp_events.csv there,
/// a checkpoint every checkpoint_every steps, and final.bin at the end.
/// RegressionPoP policies are expected to be pre-trained by the caller.
TrainResult run_episode_loop(Policy& policy, Simulator& sim,
                             const TrainConfig& cfg,
                             const std::string& out_dir = "");

struct EvalResult {
  std::vector<StepRecord> steps;
  std::vector<GraspEvent> grasps;
};

/// Greedy evaluation: epsilon = 0, no replay, no parameter updates, target
/// boxes round-robin from `targets` (the train layout or the displaced
/// one). The policy's parameters are untouched; callers can assert this
/// via param_hash.
EvalResult run_eval_loop(Policy& policy, Simulator& sim,
                         const std::vector<BoxSpec>& targets, long steps,
                         std::uint64_t seed);

/// Step log serialization, one row per record. The format is fixed:
/// missing residual/loss fields are empty, floating point uses shortest
/// round-trip formatting, so identical runs produce identical bytes.
void write_step_csv(const std::string& path,
                    const std::vector<StepRecord>& steps);
void write_grasp_csv(const std::string& path,
                     const std::vector<GraspEvent>& grasps);

/// Inverse of write_grasp_csv. Throws std::runtime_error on a missing file
/// or malformed row.
std::vector<GraspEvent> read_grasp_csv(const std::string& path);

}  // namespace tossim
