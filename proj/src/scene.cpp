#include "tossim/scene.hpp"

#include <algorithm>
#include <stdexcept>

namespace tossim {

namespace {

constexpr double kPi = 3.14159265358979323846;

Primitive box_prim(Vec3 center, Vec3 half) {
  return Primitive{PrimitiveKind::Box, center, half};
}

Primitive sphere_prim(Vec3 center, double radius) {
  return Primitive{PrimitiveKind::Sphere, center, {radius, radius, radius}};
}

double prim_volume(const Primitive& p) {
  if (p.kind == PrimitiveKind::Sphere) {
    const double r = p.half.x;
    return 4.0 / 3.0 * kPi * r * r * r;
  }
  return 8.0 * p.half.x * p.half.y * p.half.z;
}

double prim_footprint_distance(const Primitive& prim, Vec2 q) {
  const double lx = q.x - prim.center.x;
  const double ly = q.y - prim.center.y;
  if (prim.kind == PrimitiveKind::Sphere) {
    return std::sqrt(lx * lx + ly * ly) - prim.half.x;
  }
  const double dx = std::abs(lx) - prim.half.x;
  const double dy = std::abs(ly) - prim.half.y;
  if (dx > 0.0 || dy > 0.0) {
    const double ox = std::max(dx, 0.0);
    const double oy = std::max(dy, 0.0);
    return std::sqrt(ox * ox + oy * oy);
  }
  return std::max(dx, dy);
}

double prim_top_height(const Primitive& prim, Vec2 q) {
  const double lx = q.x - prim.center.x;
  const double ly = q.y - prim.center.y;
  if (prim.kind == PrimitiveKind::Sphere) {
    const double r = prim.half.x;
    const double d2 = lx * lx + ly * ly;
    if (d2 >= r * r) return 0.0;
    return prim.center.z + std::sqrt(r * r - d2);
  }
  if (std::abs(lx) > prim.half.x || std::abs(ly) > prim.half.y) return 0.0;
  return prim.center.z + prim.half.z;
}

void read_coeffs(const Config& cfg, ObjectModel& m, double beta, double kappa,
                 double intensity) {
  const std::string base = "object." + kind_name(m.kind) + ".";
  m.beta = cfg.get_double(base + "beta", beta);
  m.kappa = cfg.get_double(base + "kappa", kappa);
  m.intensity = cfg.get_double(base + "intensity", intensity);
}

void finish_model(ObjectModel& m) {
  double vol = 0.0;
  Vec3 moment{0.0, 0.0, 0.0};
  for (const auto& p : m.prims) {
    const double v = prim_volume(p);
    vol += v;
    moment = moment + p.center * v;
  }
  if (vol <= 0.0) throw std::invalid_argument("object has zero volume");
  m.com = moment * (1.0 / vol);
}

}  // namespace

double normalize_yaw(double yaw) {
  const double two_pi = 2.0 * kPi;
  double y = std::fmod(yaw, two_pi);
  if (y < 0.0) y += two_pi;
  return y;
}

bool is_seen_kind(ObjectKind k) {
  switch (k) {
    case ObjectKind::Ball:
    case ObjectKind::Cube:
    case ObjectKind::Rod:
    case ObjectKind::Hammer:
      return true;
    default:
      return false;
  }
}

std::string kind_name(ObjectKind k) {
  switch (k) {
    case ObjectKind::Ball: return "ball";
    case ObjectKind::Cube: return "cube";
    case ObjectKind::Rod: return "rod";
    case ObjectKind::Hammer: return "hammer";
    case ObjectKind::Tee: return "tee";
    case ObjectKind::Capsule: return "capsule";
    case ObjectKind::RodSmall: return "rod_small";
    case ObjectKind::RodLarge: return "rod_large";
  }
  return "unknown";
}

ObjectKind kind_from_name(const std::string& name) {
  if (name == "ball") return ObjectKind::Ball;
  if (name == "cube") return ObjectKind::Cube;
  if (name == "rod") return ObjectKind::Rod;
  if (name == "hammer") return ObjectKind::Hammer;
  if (name == "tee") return ObjectKind::Tee;
  if (name == "capsule") return ObjectKind::Capsule;
  if (name == "rod_small") return ObjectKind::RodSmall;
  if (name == "rod_large") return ObjectKind::RodLarge;
  throw std::invalid_argument("unknown object kind: " + name);
}

double ObjectModel::volume() const {
  double v = 0.0;
  for (const auto& p : prims) v += prim_volume(p);
  return v;
}

double ObjectModel::bounding_radius() const {
  double r = 0.0;
  for (const auto& p : prims) {
    if (p.kind == PrimitiveKind::Sphere) {
      const double c =
          std::sqrt(p.center.x * p.center.x + p.center.y * p.center.y);
      r = std::max(r, c + p.half.x);
    } else {
      // The farthest corner: |cx| + hx and |cy| + hy maximize both
      // coordinates simultaneously, so this is exact, not a bound.
      r = std::max(r, std::hypot(std::abs(p.center.x) + p.half.x,
                                 std::abs(p.center.y) + p.half.y));
    }
  }
  return r;
}

double ObjectModel::max_height() const {
  double h = 0.0;
  for (const auto& p : prims) {
    h = std::max(h, p.center.z + (p.kind == PrimitiveKind::Sphere ? p.half.x : p.half.z));
  }
  return h;
}

double ObjectModel::axis_half_length() const {
  // Extent of the footprint along +axis and -axis from the CoM; return the
  // larger side so |s| <= axis_half_length() holds for interior points.
  double lo = 0.0, hi = 0.0;
  for (const auto& p : prims) {
    const double c = (p.center.x - com.x) * axis.x + (p.center.y - com.y) * axis.y;
    double ext;
    if (p.kind == PrimitiveKind::Sphere) {
      ext = p.half.x;
    } else {
      ext = std::abs(p.half.x * axis.x) + std::abs(p.half.y * axis.y);
    }
    lo = std::min(lo, c - ext);
    hi = std::max(hi, c + ext);
  }
  return std::max(hi, -lo);
}

Vec2 object_frame_point(const PlacedObject& obj, Vec2 p) {
  const double dx = p.x - obj.pose.x;
  const double dy = p.y - obj.pose.y;
  const double c = std::cos(-obj.pose.yaw);
  const double s = std::sin(-obj.pose.yaw);
  return {c * dx - s * dy, s * dx + c * dy};
}

double footprint_distance(const PlacedObject& obj, Vec2 p) {
  const Vec2 q = object_frame_point(obj, p);
  double d = 1e9;
  for (const auto& prim : obj.model.prims) {
    d = std::min(d, prim_footprint_distance(prim, q));
  }
  return d;
}

double height_at(const PlacedObject& obj, Vec2 p) {
  const Vec2 q = object_frame_point(obj, p);
  double h = 0.0;
  for (const auto& prim : obj.model.prims) {
    h = std::max(h, prim_top_height(prim, q));
  }
  return h;
}

double axis_offset(const PlacedObject& obj, Vec2 p) {
  const Vec2 q = object_frame_point(obj, p);
  const double dx = q.x - obj.model.com.x;
  const double dy = q.y - obj.model.com.y;
  return dx * obj.model.axis.x + dy * obj.model.axis.y;
}

void WorkspaceConfig::validate() const {
  if (pixel_size <= 0.0 || bin_half_x <= 0.0 || bin_half_y <= 0.0) {
    throw std::invalid_argument("workspace: non-positive dimensions");
  }
  // The pixel grid must tile the bin exactly.
  for (double extent : {2.0 * bin_half_x, 2.0 * bin_half_y}) {
    const double cells = extent / pixel_size;
    if (std::abs(cells - std::lround(cells)) > 1e-9) {
      throw std::invalid_argument("workspace: extents not divisible by pixel size");
    }
  }
  if (num_rotations < 1) {
    throw std::invalid_argument("workspace: num_rotations must be >= 1");
  }
  if (gravity <= 0.0) {
    throw std::invalid_argument("workspace: gravity must be positive");
  }
  const double bin_corner = std::sqrt(bin_half_x * bin_half_x + bin_half_y * bin_half_y);
  if (release_radius <= bin_corner) {
    throw std::invalid_argument("workspace: release ring intersects the bin");
  }
  auto nearest_corner = [](const BoxSpec& b) {
    const double x = std::max(std::abs(b.cx) - b.half_x, 0.0);
    const double y = std::max(std::abs(b.cy) - b.half_y, 0.0);
    return std::sqrt(x * x + y * y);
  };
  auto overlap = [](const BoxSpec& a, const BoxSpec& b) {
    return std::abs(a.cx - b.cx) < a.half_x + b.half_x &&
           std::abs(a.cy - b.cy) < a.half_y + b.half_y;
  };
  std::vector<BoxSpec> all = boxes;
  all.insert(all.end(), displaced_boxes.begin(), displaced_boxes.end());
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].half_x <= 0.0 || all[i].half_y <= 0.0) {
      throw std::invalid_argument("workspace: degenerate box");
    }
    if (nearest_corner(all[i]) <= release_radius) {
      throw std::invalid_argument("workspace: box opening inside the release ring");
    }
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      if (overlap(all[i], all[j])) {
        throw std::invalid_argument("workspace: box openings overlap");
      }
    }
  }
}

namespace {

void build_box_grids(WorkspaceConfig& ws, double x0, double x_pitch, int nx,
                     double y0, double y_pitch, int ny, double dx, double dy) {
  ws.boxes.clear();
  ws.displaced_boxes.clear();
  int id = 0;
  for (int ix = 0; ix < nx; ++ix) {
    for (int iy = 0; iy < ny; ++iy) {
      // std::fma pins one rounding for mul-add whether the call is constant
      // folded or compiled against the FMA unit, so the same grid numbers
      // produce bit-identical centers from every construction path.
      const double x = std::fma(static_cast<double>(ix), x_pitch, x0);
      const double y = std::fma(static_cast<double>(iy), y_pitch, y0);
      ws.boxes.push_back({id, x, y, ws.box_half_x, ws.box_half_y, ws.box_rim_z});
      ws.displaced_boxes.push_back(
          {id, x + dx, y + dy, ws.box_half_x, ws.box_half_y, ws.box_rim_z});
      ++id;
    }
  }
}

}  // namespace

WorkspaceConfig make_desk_workspace() {
  WorkspaceConfig ws;
  // 3 x 4 grid. The y pitch (0.32) exceeds the opening width (0.15) by more
  // than the half-pitch displacement (0.16), so the displaced grid is
  // disjoint from the training grid in y for every row pairing. x0 keeps
  // the nearest box centers well outside the 45-degree ascending pocket
  // (||p_xy|| >= c_d + 2 (rim_z - c_h) = 1.02): at (1.25, +-0.16) the ideal
  // apex clears the rim plane by 3.6 cm, so draggy objects still cross it
  // descending instead of sinking short of the nearest row.
  build_box_grids(ws, 1.25, 0.30, 3, -0.48, 0.32, 4, 0.15, 0.16);
  ws.validate();
  return ws;
}

WorkspaceConfig workspace_from_config(const Config& cfg) {
  WorkspaceConfig d = make_desk_workspace();
  WorkspaceConfig ws;
  ws.bin_half_x = cfg.get_double("workspace.bin_half_x", d.bin_half_x);
  ws.bin_half_y = cfg.get_double("workspace.bin_half_y", d.bin_half_y);
  ws.pixel_size = cfg.get_double("workspace.pixel_size", d.pixel_size);
  ws.num_rotations = static_cast<int>(cfg.get_int("workspace.num_rotations", d.num_rotations));
  ws.release_radius = cfg.get_double("workspace.release_radius", d.release_radius);
  ws.release_height = cfg.get_double("workspace.release_height", d.release_height);
  ws.gravity = cfg.get_double("workspace.gravity", d.gravity);
  ws.box_half_x = cfg.get_double("workspace.box_half_x", d.box_half_x);
  ws.box_half_y = cfg.get_double("workspace.box_half_y", d.box_half_y);
  ws.box_rim_z = cfg.get_double("workspace.box_rim_z", d.box_rim_z);
  build_box_grids(ws, cfg.get_double("workspace.grid_x0", 1.25),
                  cfg.get_double("workspace.grid_x_pitch", 0.30),
                  static_cast<int>(cfg.get_int("workspace.grid_nx", 3)),
                  cfg.get_double("workspace.grid_y0", -0.48),
                  cfg.get_double("workspace.grid_y_pitch", 0.32),
                  static_cast<int>(cfg.get_int("workspace.grid_ny", 4)),
                  cfg.get_double("workspace.grid_dx", 0.15),
                  cfg.get_double("workspace.grid_dy", 0.16));
  ws.validate();
  return ws;
}

std::vector<ObjectModel> make_standard_objects(double scale, const Config& cfg) {
  if (scale <= 0.0) throw std::invalid_argument("scale must be positive");
  const double s = scale;
  std::vector<ObjectModel> out;

  ObjectModel ball;
  ball.kind = ObjectKind::Ball;
  ball.prims = {sphere_prim({0.0, 0.0, 0.02 * s}, 0.02 * s)};
  read_coeffs(cfg, ball, 0.30, 0.0, 0.9);
  finish_model(ball);
  out.push_back(ball);

  ObjectModel cube;
  cube.kind = ObjectKind::Cube;
  cube.prims = {box_prim({0.0, 0.0, 0.02 * s}, {0.02 * s, 0.02 * s, 0.02 * s})};
  read_coeffs(cfg, cube, 0.02, 0.0, 0.7);
  finish_model(cube);
  out.push_back(cube);

  ObjectModel rod;
  rod.kind = ObjectKind::Rod;
  rod.prims = {box_prim({0.0, 0.0, 0.015 * s}, {0.08 * s, 0.015 * s, 0.015 * s})};
  rod.elongated = true;
  read_coeffs(cfg, rod, 0.05, 1.2, 0.5);
  finish_model(rod);
  out.push_back(rod);

  // Hammer: 12 cm handle with a 10 x 4 x 2.5 cm head across one end, 16 cm
  // overall. The volume-weighted center of mass sits at x = 0.0340540540...
  // in this frame, between handle center and head.
  ObjectModel hammer;
  hammer.kind = ObjectKind::Hammer;
  hammer.prims = {
      box_prim({-0.02 * s, 0.0, 0.01 * s}, {0.06 * s, 0.01 * s, 0.01 * s}),
      box_prim({0.06 * s, 0.0, 0.0125 * s}, {0.02 * s, 0.05 * s, 0.0125 * s}),
  };
  hammer.elongated = true;
  // Handle-held throws whip the head: the strongest lever coupling of the
  // seen set, plus enough drag that the uncorrected ballistic estimate
  // undershoots the far boxes by more than a box half-length.
  read_coeffs(cfg, hammer, 0.20, 2.0, 0.3);
  finish_model(hammer);
  out.push_back(hammer);

  return out;
}

std::vector<ObjectModel> make_unseen_objects(double scale, const Config& cfg) {
  if (scale <= 0.0) throw std::invalid_argument("scale must be positive");
  const double s = scale;
  std::vector<ObjectModel> out;

  ObjectModel tee;
  tee.kind = ObjectKind::Tee;
  tee.prims = {
      box_prim({-0.01 * s, 0.0, 0.01 * s}, {0.06 * s, 0.01 * s, 0.01 * s}),
      box_prim({0.06 * s, 0.0, 0.01 * s}, {0.01 * s, 0.05 * s, 0.01 * s}),
  };
  tee.elongated = true;
  read_coeffs(cfg, tee, 0.05, 1.3, 0.6);
  finish_model(tee);
  out.push_back(tee);

  ObjectModel capsule;
  capsule.kind = ObjectKind::Capsule;
  capsule.prims = {
      box_prim({0.0, 0.0, 0.015 * s}, {0.05 * s, 0.015 * s, 0.015 * s}),
      sphere_prim({-0.05 * s, 0.0, 0.015 * s}, 0.015 * s),
      sphere_prim({0.05 * s, 0.0, 0.015 * s}, 0.015 * s),
  };
  capsule.elongated = true;
  read_coeffs(cfg, capsule, 0.15, 0.6, 0.8);
  finish_model(capsule);
  out.push_back(capsule);

  ObjectModel rod_small;
  rod_small.kind = ObjectKind::RodSmall;
  const double s75 = 0.75 * s;
  rod_small.prims = {
      box_prim({0.0, 0.0, 0.015 * s75}, {0.08 * s75, 0.015 * s75, 0.015 * s75})};
  rod_small.elongated = true;
  read_coeffs(cfg, rod_small, 0.05, 1.2, 0.45);
  finish_model(rod_small);
  out.push_back(rod_small);

  ObjectModel rod_large;
  rod_large.kind = ObjectKind::RodLarge;
  const double s125 = 1.25 * s;
  rod_large.prims = {
      box_prim({0.0, 0.0, 0.015 * s125}, {0.08 * s125, 0.015 * s125, 0.015 * s125})};
  rod_large.elongated = true;
  read_coeffs(cfg, rod_large, 0.05, 1.2, 0.55);
  finish_model(rod_large);
  out.push_back(rod_large);

  return out;
}

}  // namespace tossim
