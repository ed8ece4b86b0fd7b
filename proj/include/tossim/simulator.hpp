#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tossim/ballistics.hpp"
#include "tossim/rng.hpp"
#include "tossim/scene.hpp"

namespace tossim {

/// Normalized two-channel top-down view of the bin. Channel 0 is height,
/// channel 1 per-kind intensity; both are mean-subtracted and divided by
/// their per-image standard deviation, with the stats kept so raw values
/// stay recoverable. Data is channel-major.
struct Heightmap {
  int h = 0, w = 0;
  std::vector<float> norm;  // 2 * h * w
  std::array<float, 2> mean{0.0f, 0.0f};
  std::array<float, 2> stdev{1.0f, 1.0f};

  float at(int c, int i, int j) const { return norm[(c * h + i) * w + j]; }
  /// Raw (unnormalized) value.
  float raw(int c, int i, int j) const { return at(c, i, j) * stdev[c] + mean[c]; }
};

struct SimParams {
  int n_objects = 8;
  double gripper_dilation = 0.02;  // footprint dilation, gripper half-width
  double angle_tol_deg = 30.0;     // around the perpendicular, elongated objects
  double retention_p = 0.98;
  bool grasp_noise = true;         // retention draw on/off (off for unit tests)
  double dt = 1e-3;                // RK4 step
  double max_flight_s = 10.0;
  int spawn_attempts = 20000;      // rejection attempts per object
  double spawn_margin = 0.005;     // clearance between footprints
  double nudge_yaw = 0.3;          // failed contact grasps perturb the object
  double nudge_xy = 0.01;
};

struct BinState {
  std::vector<PlacedObject> objects;
  int spawn_count = 0;
};

struct GraspOutcome {
  bool success = false;
  bool touched = false;   // grasp point was inside some dilated footprint
  int object_index = -1;  // index in the bin at grasp time, when touched
  ObjectKind kind = ObjectKind::Ball;
  double s = 0.0;         // signed offset along the object axis from CoM
  Vec2 object_point;      // grasp point in the object frame
  ObjectModel model;      // copy of the grasped object, when success
};

struct ThrowOutcome {
  bool landed = false;  // crossed the landing plane going down
  bool in_target_box = false;
  Vec3 landing;  // valid when landed; landing.z equals the plane height
  double flight_time = 0.0;
  std::vector<std::array<double, 4>> trace;  // (t, x, y, z) when requested
};

/// Deterministic ground-truth world. Owns the bin, its RNG streams, and the
/// hidden dynamics. Spawn i uses seed (base_seed + i) so consecutive resets
/// draw from documented, distinct streams; grasp retention noise and nudges
/// use an independent stream derived from the base seed.
class Simulator {
 public:
  Simulator(WorkspaceConfig ws, SimParams params,
            std::vector<ObjectModel> object_set, std::uint64_t seed);

  const WorkspaceConfig& workspace() const { return ws_; }
  const SimParams& params() const { return params_; }
  const BinState& bin() const { return bin_; }

  /// Fresh drop of n objects, cycling the object set. Rejection-samples
  /// non-overlapping poses; throws std::runtime_error when the bin cannot
  /// fit them within the attempt budget.
  void respawn();

  /// Respawn only when the bin is empty. Returns true if it respawned.
  bool reset_if_empty();

  Heightmap render_heightmap() const;

  /// Top-down parallel-jaw grasp at heightmap pixel (row, col) with gripper
  /// angle rotation * 360/num_rotations degrees. Success requires: grasp
  /// point inside a footprint dilated by the gripper half-width; for
  /// elongated objects, gripper axis within the angular tolerance of the
  /// perpendicular to the object axis; and a retention draw. The grasped
  /// object leaves the bin. A touched object that is not retained gets
  /// nudged (the gripper disturbed it).
  GraspOutcome execute_grasp(int row, int col, int rotation);

  /// Flight under the hidden dynamics: initial velocity scaled by the lever
  /// term (1 + kappa * s), then quadratic drag, RK4 at params.dt down to
  /// the landing plane at target.rim_z. landed=false when the flight can no
  /// longer reach the plane (fell short); that is a valid outcome, not an
  /// error. Throws std::runtime_error only past max_flight_s.
  ThrowOutcome execute_throw(const ObjectModel& model, double s,
                             const ReleasePlan& plan, const BoxSpec& target,
                             bool want_trace = false);

 private:
  void place_objects(Rng& rng);

  WorkspaceConfig ws_;
  SimParams params_;
  std::vector<ObjectModel> object_set_;
  BinState bin_;
  std::uint64_t base_seed_;
  Rng noise_rng_;
};

}  // namespace tossim
