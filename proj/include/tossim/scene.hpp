#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tossim/config.hpp"

namespace tossim {

struct Vec2 {
  double x = 0.0, y = 0.0;
  double norm() const { return std::sqrt(x * x + y * y); }
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  double planar_norm() const { return std::sqrt(x * x + y * y); }
};

/// Planar pose of an object resting in the bin. yaw in [0, 2pi).
struct Pose2D {
  double x = 0.0, y = 0.0, yaw = 0.0;
};

double normalize_yaw(double yaw);

enum class PrimitiveKind { Box, Sphere };

/// One convex piece of an object, in the object frame. Objects rest on the
/// bin floor, so primitive centers carry z offsets that put the lowest
/// surface at z = 0. For boxes `half` is the half extent per axis; for
/// spheres only half.x is used, as the radius.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Box;
  Vec3 center;
  Vec3 half;
};

enum class ObjectKind {
  Ball,
  Cube,
  Rod,
  Hammer,
  // unseen test set
  Tee,
  Capsule,
  RodSmall,
  RodLarge,
};

bool is_seen_kind(ObjectKind k);
std::string kind_name(ObjectKind k);
ObjectKind kind_from_name(const std::string& name);

/// Rigid object: primitive decomposition plus the hidden per-kind dynamics
/// coefficients the learner never observes directly.
struct ObjectModel {
  ObjectKind kind = ObjectKind::Ball;
  std::vector<Primitive> prims;
  Vec3 com;                // volume-weighted, object frame
  Vec2 axis{1.0, 0.0};     // principal axis for the lever arm, object frame
  bool elongated = false;  // gripper angle rule applies
  double beta = 0.0;       // quadratic drag coefficient [1/m]
  double kappa = 0.0;      // lever gain [1/m] on the signed grasp offset
  double intensity = 0.5;  // second heightmap channel value, [0, 1]

  double volume() const;
  /// Largest planar distance from the frame origin to any primitive surface.
  double bounding_radius() const;
  double max_height() const;
  /// Half length of the footprint along the principal axis, through the CoM.
  double axis_half_length() const;
};

struct PlacedObject {
  ObjectModel model;
  Pose2D pose;
};

/// World point p expressed in the object frame.
Vec2 object_frame_point(const PlacedObject& obj, Vec2 p);

/// Signed planar distance from point p to the footprint of a placed object.
/// Negative inside, positive outside. Used for grasp containment tests and
/// spawn separation.
double footprint_distance(const PlacedObject& obj, Vec2 p);

/// Top surface height at planar point p, or 0 if p is outside the footprint.
double height_at(const PlacedObject& obj, Vec2 p);

/// Signed offset of planar point p along the object's principal axis,
/// measured from the center of mass. Feeds the lever term at release.
double axis_offset(const PlacedObject& obj, Vec2 p);

struct BoxSpec {
  int id = 0;
  double cx = 0.0, cy = 0.0;  // opening center
  double half_x = 0.0, half_y = 0.0;
  double rim_z = 0.0;  // landing plane height
};

/// Workspace: picking bin at the origin, release ring around it, landing
/// boxes on a grid past the ring. Units are meters.
struct WorkspaceConfig {
  double bin_half_x = 0.225;
  double bin_half_y = 0.175;
  double pixel_size = 0.005;
  int num_rotations = 16;
  double release_radius = 0.7;   // c_d
  double release_height = 0.04;  // c_h
  double gravity = 9.8;
  double box_half_x = 0.125;
  double box_half_y = 0.075;
  double box_rim_z = 0.20;
  std::vector<BoxSpec> boxes;
  std::vector<BoxSpec> displaced_boxes;

  int map_w() const {
    return static_cast<int>(std::lround(2.0 * bin_half_x / pixel_size));
  }
  int map_h() const {
    return static_cast<int>(std::lround(2.0 * bin_half_y / pixel_size));
  }
  /// Center of heightmap pixel (i=row, j=col) in world coordinates.
  Vec2 pixel_center(int i, int j) const {
    return {-bin_half_x + (j + 0.5) * pixel_size,
            -bin_half_y + (i + 0.5) * pixel_size};
  }
  /// Throws std::invalid_argument when the layout violates its own rules:
  /// non-integer pixel grid, box inside the release ring, overlapping
  /// openings, degenerate dimensions.
  void validate() const;
};

/// Desk-scale default: 0.45 x 0.35 bin at 0.005 m/px (90 x 70 map), 3 x 4
/// box grid past the release ring, plus a displaced copy of the grid
/// (offset by half a grid pitch) for the unseen-location protocol.
WorkspaceConfig make_desk_workspace();

/// Workspace from config keys (workspace.*), falling back to desk defaults
/// for anything unset. Box grids are regenerated when grid keys are given.
WorkspaceConfig workspace_from_config(const Config& cfg);

/// Standard (seen) object set: ball, cube, rod, hammer, at their reference
/// dimensions times `scale`. Hidden coefficients and intensities are read
/// from cfg with per-kind keys, e.g. `object.hammer.beta`; defaults are the
/// desk values.
std::vector<ObjectModel> make_standard_objects(double scale, const Config& cfg);

/// Unseen test set: tee, capsule, 0.75x rod, 1.25x rod. Novel shapes and
/// sizes composed of the same primitives, with their own hidden
/// coefficients (capsule drag sits between ball and rod by default).
std::vector<ObjectModel> make_unseen_objects(double scale, const Config& cfg);

}  // namespace tossim
