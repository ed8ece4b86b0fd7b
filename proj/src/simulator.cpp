#include "tossim/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tossim {

namespace {

constexpr double kPi = 3.14159265358979323846;

/// Planar primitive in world coordinates, for spawn separation tests.
struct WorldPrim {
  bool is_box = true;
  double cx = 0.0, cy = 0.0;
  double ang = 0.0;          // box orientation
  double hx = 0.0, hy = 0.0; // box half extents
  double r = 0.0;            // circle radius
};

std::vector<WorldPrim> world_prims(const ObjectModel& m, const Pose2D& pose) {
  std::vector<WorldPrim> out;
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  for (const auto& p : m.prims) {
    WorldPrim w;
    w.cx = pose.x + c * p.center.x - s * p.center.y;
    w.cy = pose.y + s * p.center.x + c * p.center.y;
    if (p.kind == PrimitiveKind::Sphere) {
      w.is_box = false;
      w.r = p.half.x;
    } else {
      w.is_box = true;
      w.ang = pose.yaw;
      w.hx = p.half.x;
      w.hy = p.half.y;
    }
    out.push_back(w);
  }
  return out;
}

/// Distance from a point to an oriented rectangle (0 inside).
double rect_point_distance(const WorldPrim& b, double px, double py) {
  const double c = std::cos(-b.ang), s = std::sin(-b.ang);
  const double dx = px - b.cx, dy = py - b.cy;
  const double lx = c * dx - s * dy, ly = s * dx + c * dy;
  const double ox = std::max(std::abs(lx) - b.hx, 0.0);
  const double oy = std::max(std::abs(ly) - b.hy, 0.0);
  return std::sqrt(ox * ox + oy * oy);
}

/// Separating-axis test with a margin: true when the two rectangles are at
/// least `margin` apart along some axis of either rectangle.
bool rects_separated(const WorldPrim& a, const WorldPrim& b, double margin) {
  const WorldPrim* boxes[2] = {&a, &b};
  for (const WorldPrim* box : boxes) {
    const double axes[2] = {box->ang, box->ang + kPi / 2.0};
    for (double ax : axes) {
      const double ux = std::cos(ax), uy = std::sin(ax);
      auto project = [&](const WorldPrim& p, double& lo, double& hi) {
        const double center = p.cx * ux + p.cy * uy;
        const double ca = std::cos(p.ang), sa = std::sin(p.ang);
        // |projection of the two half-extent vectors|
        const double ext = std::abs((ca * ux + sa * uy) * p.hx) +
                           std::abs((-sa * ux + ca * uy) * p.hy);
        lo = center - ext;
        hi = center + ext;
      };
      double alo, ahi, blo, bhi;
      project(a, alo, ahi);
      project(b, blo, bhi);
      if (alo > bhi + margin || blo > ahi + margin) return true;
    }
  }
  return false;
}

bool prims_separated(const WorldPrim& a, const WorldPrim& b, double margin) {
  if (a.is_box && b.is_box) return rects_separated(a, b, margin);
  if (!a.is_box && !b.is_box) {
    const double dx = a.cx - b.cx, dy = a.cy - b.cy;
    return std::sqrt(dx * dx + dy * dy) > a.r + b.r + margin;
  }
  const WorldPrim& box = a.is_box ? a : b;
  const WorldPrim& circ = a.is_box ? b : a;
  return rect_point_distance(box, circ.cx, circ.cy) > circ.r + margin;
}

bool objects_separated(const std::vector<WorldPrim>& a,
                       const std::vector<WorldPrim>& b, double margin) {
  for (const auto& pa : a) {
    for (const auto& pb : b) {
      if (!prims_separated(pa, pb, margin)) return false;
    }
  }
  return true;
}

/// Containment is per primitive, not per bounding circle: elongated
/// objects may put their center near a wall as long as the footprint
/// stays inside, which is what makes dense bins packable at all.
bool prim_inside_bin(const WorldPrim& p, double half_x, double half_y) {
  if (p.is_box) {
    const double c = std::cos(p.ang), s = std::sin(p.ang);
    const double ex = std::abs(c) * p.hx + std::abs(s) * p.hy;
    const double ey = std::abs(s) * p.hx + std::abs(c) * p.hy;
    return std::abs(p.cx) + ex <= half_x && std::abs(p.cy) + ey <= half_y;
  }
  return std::abs(p.cx) + p.r <= half_x && std::abs(p.cy) + p.r <= half_y;
}

/// Smallest absolute angular difference between two undirected axes
/// (gripper and object axis are both 180-degree symmetric).
double axis_angle_diff(double a, double b) {
  double d = std::fmod(a - b, kPi);
  if (d < 0.0) d += kPi;
  return std::min(d, kPi - d);
}

}  // namespace

Simulator::Simulator(WorkspaceConfig ws, SimParams params,
                     std::vector<ObjectModel> object_set, std::uint64_t seed)
    : ws_(std::move(ws)),
      params_(std::move(params)),
      object_set_(std::move(object_set)),
      base_seed_(seed),
      noise_rng_(seed ^ 0x9E3779B97F4A7C15ull) {
  ws_.validate();
  if (object_set_.empty()) {
    throw std::invalid_argument("simulator: empty object set");
  }
  if (params_.n_objects < 1) {
    throw std::invalid_argument("simulator: n_objects must be >= 1");
  }
  respawn();
}

void Simulator::place_objects(Rng& rng) {
  // Sequential rejection jams when early placements strand the leftovers,
  // so a stuck object restarts the whole placement from an empty bin. The
  // pose-sample budget is global across restarts; each attempt draws
  // exactly three uniforms.
  const long budget =
      static_cast<long>(params_.spawn_attempts) * params_.n_objects;
  const int per_object = std::max(params_.spawn_attempts / 10, 200);
  long used = 0;
  while (used < budget) {
    bin_.objects.clear();
    std::vector<std::vector<WorldPrim>> placed;
    bool all_placed = true;
    for (int i = 0; i < params_.n_objects && all_placed; ++i) {
      const ObjectModel& model = object_set_[i % object_set_.size()];
      bool done = false;
      for (int attempt = 0; attempt < per_object && used < budget; ++attempt) {
        ++used;
        Pose2D pose;
        pose.x = rng.uniform(-ws_.bin_half_x, ws_.bin_half_x);
        pose.y = rng.uniform(-ws_.bin_half_y, ws_.bin_half_y);
        pose.yaw = rng.uniform(0.0, 2.0 * kPi);
        auto prims = world_prims(model, pose);
        bool ok = true;
        for (const auto& p : prims) {
          if (!prim_inside_bin(p, ws_.bin_half_x, ws_.bin_half_y)) {
            ok = false;
            break;
          }
        }
        for (const auto& other : placed) {
          if (!ok) break;
          if (!objects_separated(prims, other, params_.spawn_margin)) {
            ok = false;
            break;
          }
        }
        if (ok) {
          bin_.objects.push_back({model, pose});
          placed.push_back(std::move(prims));
          done = true;
          break;
        }
      }
      all_placed = done;
    }
    if (all_placed) return;
  }
  throw std::runtime_error(
      "simulator: cannot place " + std::to_string(params_.n_objects) +
      " objects in the bin (rejection budget exhausted)");
}

void Simulator::respawn() {
  Rng rng(base_seed_ + static_cast<std::uint64_t>(bin_.spawn_count));
  place_objects(rng);
  bin_.spawn_count += 1;
}

bool Simulator::reset_if_empty() {
  if (!bin_.objects.empty()) return false;
  respawn();
  return true;
}

Heightmap Simulator::render_heightmap() const {
  Heightmap hm;
  hm.h = ws_.map_h();
  hm.w = ws_.map_w();
  const int n = hm.h * hm.w;
  std::vector<double> height(n, 0.0), intensity(n, 0.0);
  for (int i = 0; i < hm.h; ++i) {
    for (int j = 0; j < hm.w; ++j) {
      const Vec2 p = ws_.pixel_center(i, j);
      double best_h = 0.0, best_int = 0.0;
      for (const auto& obj : bin_.objects) {
        const double h = height_at(obj, p);
        if (h > best_h) {
          best_h = h;
          best_int = obj.model.intensity;
        }
      }
      height[i * hm.w + j] = best_h;
      intensity[i * hm.w + j] = best_int;
    }
  }
  hm.norm.resize(2 * n);
  const std::vector<double>* chans[2] = {&height, &intensity};
  for (int c = 0; c < 2; ++c) {
    const auto& v = *chans[c];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double stdev = std::max(std::sqrt(var / n), 1e-6);
    hm.mean[c] = static_cast<float>(mean);
    hm.stdev[c] = static_cast<float>(stdev);
    for (int k = 0; k < n; ++k) {
      hm.norm[c * n + k] = static_cast<float>((v[k] - mean) / stdev);
    }
  }
  return hm;
}

GraspOutcome Simulator::execute_grasp(int row, int col, int rotation) {
  if (row < 0 || row >= ws_.map_h() || col < 0 || col >= ws_.map_w()) {
    throw std::invalid_argument("simulator: grasp pixel outside the heightmap");
  }
  if (rotation < 0 || rotation >= ws_.num_rotations) {
    throw std::invalid_argument("simulator: rotation index out of range");
  }
  GraspOutcome out;
  const Vec2 p = ws_.pixel_center(row, col);

  int best = -1;
  double best_d = params_.gripper_dilation;
  for (std::size_t i = 0; i < bin_.objects.size(); ++i) {
    const double d = footprint_distance(bin_.objects[i], p);
    if (d <= best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  if (best < 0) return out;  // empty pixel: clean miss

  PlacedObject& obj = bin_.objects[best];
  out.touched = true;
  out.object_index = best;
  out.kind = obj.model.kind;
  out.s = axis_offset(obj, p);
  out.object_point = object_frame_point(obj, p);

  bool ok = true;
  if (obj.model.elongated) {
    const double gripper = rotation * 2.0 * kPi / ws_.num_rotations;
    const double obj_axis =
        obj.pose.yaw + std::atan2(obj.model.axis.y, obj.model.axis.x);
    const double diff = axis_angle_diff(gripper, obj_axis + kPi / 2.0);
    if (diff > params_.angle_tol_deg * kPi / 180.0) ok = false;
  }
  if (ok && params_.grasp_noise) {
    ok = noise_rng_.bernoulli(params_.retention_p);
  }
  if (ok) {
    out.success = true;
    out.model = obj.model;
    bin_.objects.erase(bin_.objects.begin() + best);
  } else {
    // The gripper touched the object; disturb it a little (deterministic
    // draws). Keeps repeated failures from seeing a frozen scene.
    obj.pose.yaw = normalize_yaw(
        obj.pose.yaw + noise_rng_.uniform(-params_.nudge_yaw, params_.nudge_yaw));
    const double br = obj.model.bounding_radius();
    const double xr = ws_.bin_half_x - br - params_.spawn_margin;
    const double yr = ws_.bin_half_y - br - params_.spawn_margin;
    obj.pose.x = std::clamp(
        obj.pose.x + noise_rng_.uniform(-params_.nudge_xy, params_.nudge_xy), -xr, xr);
    obj.pose.y = std::clamp(
        obj.pose.y + noise_rng_.uniform(-params_.nudge_xy, params_.nudge_xy), -yr, yr);
  }
  return out;
}

ThrowOutcome Simulator::execute_throw(const ObjectModel& model, double s,
                                      const ReleasePlan& plan,
                                      const BoxSpec& target, bool want_trace) {
  ThrowOutcome out;
  const double g = ws_.gravity;
  const double beta = model.beta;
  const double lever = 1.0 + model.kappa * s;
  const double plane = target.rim_z;

  Vec3 x = plan.r;
  Vec3 u = plan.v_hat * lever;
  double t = 0.0;
  const double dt = params_.dt;
  if (want_trace) out.trace.push_back({t, x.x, x.y, x.z});

  auto accel = [&](const Vec3& vel) {
    const double speed = vel.norm();
    return Vec3{-beta * speed * vel.x, -beta * speed * vel.y,
                -g - beta * speed * vel.z};
  };

  while (t < params_.max_flight_s) {
    const Vec3 x_prev = x;
    const Vec3 k1x = u, k1u = accel(u);
    const Vec3 u2 = u + k1u * (dt / 2.0);
    const Vec3 k2x = u2, k2u = accel(u2);
    const Vec3 u3 = u + k2u * (dt / 2.0);
    const Vec3 k3x = u3, k3u = accel(u3);
    const Vec3 u4 = u + k3u * dt;
    const Vec3 k4x = u4, k4u = accel(u4);
    x = x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0);
    u = u + (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (dt / 6.0);
    t += dt;
    if (want_trace) out.trace.push_back({t, x.x, x.y, x.z});

    if (x_prev.z > plane && x.z <= plane) {
      const double f = (x_prev.z - plane) / (x_prev.z - x.z);
      out.landed = true;
      out.landing = {x_prev.x + f * (x.x - x_prev.x),
                     x_prev.y + f * (x.y - x_prev.y), plane};
      out.flight_time = t - dt + f * dt;
      out.in_target_box = std::abs(out.landing.x - target.cx) <= target.half_x &&
                          std::abs(out.landing.y - target.cy) <= target.half_y;
      return out;
    }
    // Below the plane and descending: drag only removes energy, so the
    // flight can never climb back. Fell short of every box.
    if (u.z < 0.0 && x.z < plane) {
      out.flight_time = t;
      return out;
    }
  }
  throw std::runtime_error("simulator: flight exceeded the time cap");
}

}  // namespace tossim
