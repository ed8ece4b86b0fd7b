#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tossim/ballistics.hpp"
#include "tossim/config.hpp"
#include "tossim/rng.hpp"
#include "tossim/scene.hpp"
#include "tossim/simulator.hpp"
#include "tossim/tensornet.hpp"

namespace tossim {

enum class PolicyVariant { ResidualPhysics, Regression, RegressionPoP, PhysicsOnly };

const char* variant_name(PolicyVariant v);
PolicyVariant variant_from_name(const std::string& name);

/// PhysicsOnly has no throwing head; everything else regresses a per-pixel
/// throwing scalar (residual for ResidualPhysics, absolute planar speed for
/// the Regression variants).
inline bool has_throw_head(PolicyVariant v) {
  return v != PolicyVariant::PhysicsOnly;
}

/// Conditioning scalar tiled onto the trunk features: the ballistic planar
/// speed for physics-conditioned variants, the planar distance d between
/// release position and target for the Regression variants.
inline bool physics_conditioned(PolicyVariant v) {
  return v == PolicyVariant::ResidualPhysics || v == PolicyVariant::PhysicsOnly;
}

struct PolicyConfig {
  int num_rotations = 16;
  int map_h = 70;
  int map_w = 90;
  int cond_channels = 8;
  std::array<int, 4> trunk_widths{32, 32, 64, 64};
  std::array<int, 3> head_widths{32, 16, 8};
  double lr = 1e-4;
  double momentum = 0.9;
  double weight_decay = 0.03125;  // 2^-5

  /// Square canvas holding the map under any rotation: smallest multiple of
  /// four (two 2x poolings) at or above the map diagonal.
  int canvas_size() const;

  /// policy.* keys layered over workspace-derived dimensions.
  static PolicyConfig from_config(const Config& cfg, const WorkspaceConfig& ws);
};

/// Action-value maps in the common (heightmap) frame. qg[k][i][j] is the
/// grasp success probability for a grasp at pixel (i, j) with gripper angle
/// k * 360/R degrees; qt is the pixel-aligned throwing scalar (empty for
/// PhysicsOnly). cond is the scalar that was tiled into the forward pass.
struct PolicyOutput {
  int R = 0, H = 0, W = 0;
  std::vector<float> qg;
  std::vector<float> qt;
  double cond = 0.0;

  bool has_qt() const { return !qt.empty(); }
  std::size_t flat(int k, int i, int j) const {
    return (static_cast<std::size_t>(k) * H + i) * W + j;
  }
  float qg_at(int k, int i, int j) const { return qg[flat(k, i, j)]; }
  float qt_at(int k, int i, int j) const { return qt[flat(k, i, j)]; }
};

struct GraspAction {
  int row = 0;
  int col = 0;
  int rotation = 0;
  bool explored = false;
};

/// Fully assembled throw: release pose and velocity from the ballistic
/// geometry with the composed planar speed. clamped marks a non-positive
/// composition forced up to the minimum speed (and therefore exploratory).
struct ThrowParams {
  ReleasePlan plan;
  bool explored = false;
  bool clamped = false;
};

/// Activation cache for one rotation of one heightmap; owned by the caller
/// so replay batches can reuse the buffers without reallocating.
template <class T>
struct TrainCache {
  int rotation = 0;
  double cond = 0.0;
  tn::Tensor4<T> in, t1, t2, p1, t3, t4, p2, cat;
  std::vector<std::int32_t> argmax1, argmax2;
  struct Head {
    tn::Tensor4<T> h1, h2, u1, h3, u2, out;
  };
  Head grasp, throw_;
  bool has_throw = false;
};

/// f(I, p): perception trunk over a stack of R rotated views, conditioning
/// tiled as constant channels, dense grasping and throwing heads, action
/// selection, and the residual/regression composition of release speed.
///
/// Rotation machinery: the heightmap is embedded centrally in a square
/// canvas and each view k gathers through the rotation by theta_k about the
/// canvas center with nearest-neighbor rounding. Common-frame maps read the
/// head outputs through the inverse index map, so the pixel that selection
/// picks is exactly the pixel the gradient lands on. Views k and k + R/2
/// are 180-degree flips of each other at the index level, which makes the
/// rotation-stack consistency property exact rather than approximate: maps
/// for k >= R/2 are derived from their partner by the flip, never recomputed
/// through floating-point trigonometry.
template <class T>
class PolicyT {
 public:
  PolicyT(PolicyConfig cfg, PolicyVariant variant, std::uint64_t init_seed);

  const PolicyConfig& config() const { return cfg_; }
  PolicyVariant variant() const { return variant_; }
  int canvas() const { return S_; }

  /// Conditioning scalar for target p. Physics-conditioned variants throw
  /// std::domain_error for unreachable p (propagated from the ballistics).
  double conditioning_value(const Vec3& p, const WorkspaceConfig& ws) const;

  /// Full forward over all R rotations. Heightmap dims must match config.
  PolicyOutput forward(const Heightmap& I, double cond);

  /// Forward restricted to one rotation; returns the throwing scalar at the
  /// action pixel (0 for PhysicsOnly). Used on exploration steps, where the
  /// other rotations' outputs are never consumed.
  double qt_at_action(const Heightmap& I, double cond, const GraspAction& a);

  /// Greedy argmax over R x H x W; ties resolve to the lowest flat index
  /// (k-major, then row, then column).
  static GraspAction argmax_action(const PolicyOutput& out);

  /// Uniform random action: rotation first, then pixel (row-major), two
  /// draws. The heightmap covers exactly the bin, so every pixel is valid.
  GraspAction random_action(Rng& rng) const;

  /// Epsilon-greedy: one Bernoulli draw, then either argmax (no draws) or
  /// random_action (two draws).
  GraspAction select_action(const PolicyOutput& out, double epsilon, Rng& rng) const;

  /// Planar speed composition per variant, 45-degree release assembly via
  /// the ballistic geometry. With probability epsilon the speed is replaced
  /// by uniform [0.5, 1.5] x ballistic (one Bernoulli plus one uniform
  /// draw). PhysicsOnly never explores and never draws: it has no throwing
  /// parameters to train, and random throws would only corrupt its grasp
  /// supervision under throw-accuracy labels. A non-positive composed speed
  /// is clamped to 0.1 m/s and flagged exploratory.
  ThrowParams compose_throw(double qt_at_action, const Vec3& p, double epsilon,
                            Rng& rng, const WorkspaceConfig& ws) const;
  ThrowParams compose_throw(const PolicyOutput& out, const GraspAction& a,
                            const Vec3& p, double epsilon, Rng& rng,
                            const WorkspaceConfig& ws) const;

  /// Forward one rotation with all activations cached for backward. The
  /// throw head is skipped when the variant lacks one or need_throw is
  /// false (no throwing label for this sample).
  void train_forward(const Heightmap& I, double cond, int rotation,
                     TrainCache<T>& cache, bool need_throw = true);

  struct LossParts {
    double total = 0.0, bce = 0.0, huber = 0.0;
  };

  /// BCE at the executed pixel of the grasp map plus, when y = 1 and a
  /// throwing label exists and the variant has a throw head, Huber at the
  /// same pixel of the throw map (the throw loss is gated by the grasp
  /// label: L = L_g + y L_t). throw_target is the residual label for
  /// ResidualPhysics and the absolute planar-speed label for the
  /// Regression variants.
  /// Gradients flow through exactly one output pixel per head and are
  /// accumulated into the policy's gradient buffers (call apply_step to
  /// consume them).
  LossParts loss_and_backward(const TrainCache<T>& cache, int row, int col,
                              double y, const std::optional<double>& throw_target);

  /// Huber on the throw map only, gradients stopped at the trunk features.
  /// Pre-training for RegressionPoP; grasp head and trunk stay bitwise
  /// untouched through the matching apply_step_throw_only.
  double pretrain_loss_and_backward(const TrainCache<T>& cache, int row,
                                    int col, double throw_target);

  /// One SGD-with-momentum step on mean gradients (divides by batch_size),
  /// then clears the gradient buffers.
  void apply_step(int batch_size);
  void apply_step_throw_only(int batch_size);
  void zero_grads();

  void save(const std::string& path) const;
  void load(const std::string& path);
  /// FNV-1a over kernels and biases (not momentum) in layer order.
  std::uint64_t param_hash() const;

  /// Canvas pixel (flat) that common-frame pixel (i, j) reads from in
  /// rotation k. Exposed for the rotation-consistency tests.
  std::int32_t common_to_rotated(int k, int i, int j) const {
    return u_map_[k][static_cast<std::size_t>(i) * cfg_.map_w + j];
  }

 private:
  struct Layers {
    tn::ConvParams<T> t1, t2, t3, t4;
    struct Head {
      tn::ConvParams<T> h1, h2, h3, h4;
    };
    Head grasp, throw_;
  };
  struct Grads {
    tn::ConvGrads<T> t1, t2, t3, t4;
    struct Head {
      tn::ConvGrads<T> h1, h2, h3, h4;
    };
    Head grasp, throw_;
  };

  void build_rotation_maps();
  void embed_canvas(const Heightmap& I);
  void gather_view(int k, tn::Tensor4<T>& dst, int batch_index) const;
  void run_trunk(const tn::Tensor4<T>& in, tn::Tensor4<T>& t1, tn::Tensor4<T>& t2,
                 tn::Tensor4<T>& p1, tn::Tensor4<T>& t3, tn::Tensor4<T>& t4,
                 tn::Tensor4<T>& p2, std::vector<std::int32_t>& argmax1,
                 std::vector<std::int32_t>& argmax2) const;
  void run_head(const typename Layers::Head& lw, const tn::Tensor4<T>& cat,
                typename TrainCache<T>::Head& a) const;
  void backward_head(const typename Layers::Head& lw,
                     const typename TrainCache<T>::Head& a,
                     const tn::Tensor4<T>& cat, typename Grads::Head& g,
                     tn::Tensor4<T>& grad_out_map, tn::Tensor4<T>& grad_cat,
                     bool accumulate_cat);
  void tile_cond(const tn::Tensor4<T>& p2, double cond, tn::Tensor4<T>& cat) const;

  PolicyConfig cfg_;
  PolicyVariant variant_;
  int S_ = 0;           // canvas side
  int row_off_ = 0, col_off_ = 0;
  Layers layers_;
  Grads grads_;
  std::vector<std::vector<std::int32_t>> gather_;  // [k][canvas flat] -> src or -1
  std::vector<std::vector<std::int32_t>> u_map_;   // [k][map flat] -> canvas flat

  // reusable buffers
  std::vector<T> canvas_;          // 2 * S * S embedded normalized heightmap
  std::array<T, 2> fill_{T(0), T(0)};
  struct Fwd {
    tn::Tensor4<T> in, t1, t2, p1, t3, t4, p2, cat;
    std::vector<std::int32_t> argmax1, argmax2;
    typename TrainCache<T>::Head grasp, throw_;
  };
  Fwd fwd_;
  TrainCache<T> explore_cache_;  // single-rotation forward on explore steps
  mutable tn::ConvScratch<T> scratch_;
  struct Bwd {
    tn::Tensor4<T> d_out, d_cat, d_cat2, d_p2, d_t4, d_t3, d_p1, d_t2, d_t1;
    typename TrainCache<T>::Head g;  // head gradient staging, same shapes
  };
  Bwd bwd_;
};

using Policy = PolicyT<float>;

}  // namespace tossim
